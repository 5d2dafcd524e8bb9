#include "maskinv/maskgen.hpp"

#include <algorithm>
#include <cmath>

namespace maskinv {

namespace {

constexpr double kFaceWidthPerMouthWidth = 2.2;
constexpr double kMinAreaFraction = 0.10;

}  // namespace

MaskPolygon anchor_polygon(const Landmarks& lm) {
    const Point2 le = lm[Landmark::LeftEye];
    const Point2 re = lm[Landmark::RightEye];
    const Point2 nose = lm[Landmark::NoseTip];
    const Point2 lmc = lm[Landmark::LeftMouth];
    const Point2 rmc = lm[Landmark::RightMouth];

    const double eye_y = 0.5 * (le.y + re.y);
    const double top_y = 0.5 * (eye_y + nose.y);
    const double mouth_width = std::hypot(rmc.x - lmc.x, rmc.y - lmc.y);
    const double half_width = 0.5 * kFaceWidthPerMouthWidth * mouth_width;
    const double limit = static_cast<double>(kFaceSize);
    const double left = std::clamp(nose.x - half_width, 0.0, limit);
    const double right = std::clamp(nose.x + half_width, 0.0, limit);
    // Side vertices sit at the lower of the two mouth corners so both corners
    // are below (or on) the slanted edges.
    const double side_y = std::max({lmc.y, rmc.y, nose.y});

    return {{{left, top_y}, {right, top_y}, {limit, side_y}, {limit, limit}, {0.0, limit}, {0.0, side_y}}};
}

double polygon_area(const MaskPolygon& poly) {
    double twice = 0.0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        const Point2& a = poly[i];
        const Point2& b = poly[(i + 1) % poly.size()];
        twice += a.x * b.y - b.x * a.y;
    }
    return std::abs(twice) * 0.5;
}

bool point_in_polygon(const MaskPolygon& poly, Point2 p) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point2& a = poly[i];
        const Point2& b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

bool pixel_covered(const MaskPolygon& poly, int x, int y) { return point_in_polygon(poly, {x + 0.5, y + 0.5}); }

MaskRender render_mask_detailed(const FaceImage& image, const MaskTemplate& mask, Rng& rng) {
    MaskPolygon poly = anchor_polygon(image.landmarks);
    if (mask.jitter_px > 0.0) {
        std::uniform_real_distribution<double> shift(-mask.jitter_px, mask.jitter_px);
        for (auto& v : poly) {
            v.x += shift(rng);
            v.y += shift(rng);
        }
    }
    const double area = polygon_area(poly);
    if (area < kMinAreaFraction * kFaceSize * kFaceSize) {
        throw GeometryError("mask polygon covers " + std::to_string(area) + " px^2, below 10% of the crop for " +
                            image.source_id);
    }

    Rgb color = mask.fixed_color;
    if (mask.color_mode == ColorMode::RandomUniform) {
        std::uniform_real_distribution<float> channel(-1.0F, 1.0F);
        color.r = channel(rng);
        color.g = channel(rng);
        color.b = channel(rng);
    }
    const std::array<float, 3> fill{std::clamp(color.r, -1.0F, 1.0F), std::clamp(color.g, -1.0F, 1.0F),
                                    std::clamp(color.b, -1.0F, 1.0F)};

    MaskRender out{image, poly, {fill[0], fill[1], fill[2]}};
    double min_y = kFaceSize;
    for (const auto& v : poly) min_y = std::min(min_y, v.y);
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y)) - 1);
    for (int y = y0; y < kFaceSize; ++y) {
        for (int x = 0; x < kFaceSize; ++x) {
            if (!pixel_covered(poly, x, y)) continue;
            for (int c = 0; c < kFaceChannels; ++c) out.image.at(y, x, c) = fill[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

FaceImage render_mask(const FaceImage& image, const MaskTemplate& mask, Rng& rng) {
    return render_mask_detailed(image, mask, rng).image;
}

std::pair<FaceImage, bool> maybe_mask(const FaceImage& image, const MaskPolicy& policy, Rng& rng) {
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    if (coin(rng) < policy.p_mask) return {render_mask(image, policy.template_, rng), true};
    return {image, false};
}

FaceImage mask_for_benchmark(const FaceImage& image, Rng& rng) {
    return render_mask(image, MaskTemplate::benchmark(), rng);
}

}  // namespace maskinv
