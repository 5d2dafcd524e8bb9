#pragma once

#include <array>
#include <optional>
#include <utility>

#include "maskinv/core.hpp"

namespace maskinv {

struct Rgb {
    float r = 0.0F;
    float g = 0.0F;
    float b = 0.0F;
    friend bool operator==(const Rgb&, const Rgb&) = default;
};

enum class ColorMode { RandomUniform, Fixed };

/// How a mask is anchored on the five landmarks and filled.
///
/// The polygon has six vertices: a top edge halfway between the eye line and
/// the nose tip, 2.2x the mouth-corner distance wide and centred on the nose;
/// side vertices on the crop borders at mouth height; a bottom edge on the
/// crop's lower border.
struct MaskTemplate {
    ColorMode color_mode = ColorMode::RandomUniform;
    Rgb fixed_color{};  // pixel domain [-1, 1]; used when color_mode == Fixed
    double jitter_px = 2.0;

    static MaskTemplate training(double jitter_px = 2.0) { return {ColorMode::RandomUniform, {}, jitter_px}; }
    static MaskTemplate benchmark() { return {ColorMode::RandomUniform, {}, 0.0}; }
    static MaskTemplate fixed(Rgb color, double jitter_px = 0.0) { return {ColorMode::Fixed, color, jitter_px}; }
};

struct MaskPolicy {
    double p_mask = 0.5;
    MaskTemplate template_ = MaskTemplate::training();
};

using MaskPolygon = std::array<Point2, 6>;

/// Polygon before jitter.
MaskPolygon anchor_polygon(const Landmarks& landmarks);

double polygon_area(const MaskPolygon& polygon);

/// Even-odd point-in-polygon test.
bool point_in_polygon(const MaskPolygon& polygon, Point2 p);

/// A pixel is covered when its centre (x + 0.5, y + 0.5) is inside.
bool pixel_covered(const MaskPolygon& polygon, int x, int y);

struct MaskRender {
    FaceImage image;
    MaskPolygon polygon{};
    Rgb color{};
};

/// Draw order from `rng`: 12 jitter offsets (only when jitter_px > 0), then
/// 3 color channels (only for RandomUniform).
MaskRender render_mask_detailed(const FaceImage& image, const MaskTemplate& mask, Rng& rng);

/// Returns a copy with every pixel inside the (jittered) polygon replaced by
/// the mask color. Throws GeometryError when the polygon covers less than
/// 10% of the crop.
FaceImage render_mask(const FaceImage& image, const MaskTemplate& mask, Rng& rng);

/// With probability p_mask applies render_mask; the flag reports the branch.
std::pair<FaceImage, bool> maybe_mask(const FaceImage& image, const MaskPolicy& policy, Rng& rng);

/// Unjittered mask with a random color, as used for synthetic benchmarks.
FaceImage mask_for_benchmark(const FaceImage& image, Rng& rng);

}  // namespace maskinv
