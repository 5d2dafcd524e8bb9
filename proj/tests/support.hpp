#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "maskinv/core.hpp"
#include "maskinv/losses.hpp"

namespace testing {

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("maskinv_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

inline maskinv::Matrix random_matrix(std::mt19937_64& rng, int rows, int cols) {
    std::normal_distribution<double> g(0.0, 1.0);
    maskinv::Matrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = g(rng);
    return m;
}

inline maskinv::Matrix random_unit_rows(std::mt19937_64& rng, int rows, int cols) {
    return maskinv::normalize_rows(random_matrix(rng, rows, cols));
}

// |a - b| / max(|a|, |b|, floor)
inline double rel_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// |analytic - numeric| / max(|analytic|, |numeric|) over the whole array.
inline double gradient_error(const maskinv::Matrix& analytic, const maskinv::Matrix& numeric) {
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    return (analytic - numeric).norm() / scale;
}

template <class F>
maskinv::Matrix central_difference(const maskinv::Matrix& at, F&& f, double h = 1e-4) {
    maskinv::Matrix grad(at.rows(), at.cols());
    maskinv::Matrix probe = at;
    for (Eigen::Index r = 0; r < at.rows(); ++r) {
        for (Eigen::Index c = 0; c < at.cols(); ++c) {
            const double keep = probe(r, c);
            probe(r, c) = keep + h;
            const double up = f(probe);
            probe(r, c) = keep - h;
            const double down = f(probe);
            probe(r, c) = keep;
            grad(r, c) = (up - down) / (2.0 * h);
        }
    }
    return grad;
}

// Plausible aligned-face landmarks: the reference template under a random
// scale, in-plane rotation and shift, plus independent per-point noise.
// Rejection-sampled until the FaceImage landmark invariants hold.
inline maskinv::Landmarks random_face_landmarks(std::mt19937_64& rng) {
    using maskinv::Point2;
    std::uniform_real_distribution<double> scale(0.85, 1.10), angle(-0.17, 0.17), shift(-6.0, 6.0), noise(-2.0, 2.0);
    const maskinv::Landmarks ref = maskinv::reference_landmarks();
    for (;;) {
        const double k = scale(rng), a = angle(rng), dx = shift(rng), dy = shift(rng);
        maskinv::Landmarks out;
        for (std::size_t i = 0; i < out.points.size(); ++i) {
            const double x = ref.points[i].x - 56.0, y = ref.points[i].y - 56.0;
            out.points[i] = Point2{56.0 + dx + k * (std::cos(a) * x - std::sin(a) * y) + noise(rng),
                                   56.0 + dy + k * (std::sin(a) * x + std::cos(a) * y) + noise(rng)};
        }
        try {
            maskinv::validate_landmarks(out);
            return out;
        } catch (const maskinv::ContractError&) {
        }
    }
}

// Face with uniformly random pixels in [-1, 1].
inline maskinv::FaceImage random_face(std::mt19937_64& rng) {
    maskinv::FaceImage img;
    std::uniform_real_distribution<float> px(-1.0F, 1.0F);
    for (auto& v : img.pixels) v = px(rng);
    img.landmarks = random_face_landmarks(rng);
    img.source_id = "random";
    return img;
}

}  // namespace testing
