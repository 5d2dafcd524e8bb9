#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "maskinv/core.hpp"

namespace maskinv {

/// Batches are stored one sample per row: an N x D matrix.
using Matrix = Eigen::MatrixXd;

/// Identity-class prototypes (c x D) and the elastic margin hyperparameters.
struct MarginHead {
    Matrix prototypes;
    MarginHeadConfig config;

    int num_classes() const { return static_cast<int>(prototypes.rows()); }
    int embedding_dim() const { return static_cast<int>(prototypes.cols()); }

    /// Gaussian rows, L2-normalized, drawn from the "prototypes" stream.
    static MarginHead initialize(const MarginHeadConfig& config, int num_classes, std::int64_t seed);
};

struct LossBreakdown {
    double l_elastic_arc = 0.0;
    double l_kd = 0.0;
    double lambda_effective = 0.0;
    double l_total = 0.0;
};

/// Row-wise L2 normalization and its backward pass.
Matrix normalize_rows(const Matrix& raw);
Matrix normalize_rows_backward(const Matrix& raw, const Matrix& normalized, const Matrix& grad_normalized);

/// One margin per sample, drawn from N(m, sigma^2).
std::vector<double> draw_elastic_margin(const MarginHeadConfig& config, Rng& rng, int batch_size);

struct ArcLossResult {
    double loss = 0.0;
    Matrix grad_embeddings;  // N x D
    Matrix grad_prototypes;  // c x D
};

/// Mean negative log-softmax of the target class, where the target logit is
/// s*cos(theta_y + margin_i) and every other logit is s*cos(theta_j).
///
/// `embeddings` (N x D) and `head.prototypes` must be row-normalized within
/// 1e-4. The target cosine is expanded as cos*cos(m) - sin*sin(m) with
/// sin = sqrt(1 - cos^2), so no arccos is evaluated; the cosine is clamped to
/// [-1+1e-7, 1-1e-7] only where it enters the derivative of sin.
ArcLossResult elastic_arc_loss(const Matrix& embeddings, std::span<const int> labels, const MarginHead& head,
                               std::span<const double> margins);

struct KdLossResult {
    double loss = 0.0;
    Matrix grad_student;  // N x D
};

/// (1/N) sum_i (1/D) sum_j (student_ij - teacher_ij)^2. The teacher side is
/// treated as a constant.
KdLossResult kd_embedding_loss(const Matrix& student, const Matrix& teacher);

LossBreakdown total_loss(double l_arc, double l_kd, double lambda_effective);

}  // namespace maskinv
