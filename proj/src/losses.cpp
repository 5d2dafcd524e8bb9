#include "maskinv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace maskinv {

MarginHead MarginHead::initialize(const MarginHeadConfig& config, int num_classes, std::int64_t seed) {
    if (num_classes < 2) throw ValidationError("num_classes must be at least 2");
    if (config.embedding_dim <= 0) throw ValidationError("embedding_dim must be positive");
    auto rng = make_rng(seed, "prototypes");
    std::normal_distribution<double> gauss(0.0, 1.0);
    Matrix w(num_classes, config.embedding_dim);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = gauss(rng);
    }
    MarginHead head{normalize_rows(w), config};
    head.config.num_classes = num_classes;
    return head;
}

Matrix normalize_rows(const Matrix& raw) {
    Matrix out(raw.rows(), raw.cols());
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
        const double n = raw.row(r).norm();
        if (!(n > 0.0) || !std::isfinite(n)) {
            throw ContractError("cannot normalize row " + std::to_string(r) + " (zero or non-finite norm)");
        }
        out.row(r) = raw.row(r) / n;
    }
    return out;
}

Matrix normalize_rows_backward(const Matrix& raw, const Matrix& normalized, const Matrix& grad_normalized) {
    Matrix grad(raw.rows(), raw.cols());
    for (Eigen::Index r = 0; r < raw.rows(); ++r) {
        const double n = raw.row(r).norm();
        const double proj = normalized.row(r).dot(grad_normalized.row(r));
        grad.row(r) = (grad_normalized.row(r) - proj * normalized.row(r)) / n;
    }
    return grad;
}

std::vector<double> draw_elastic_margin(const MarginHeadConfig& config, Rng& rng, int batch_size) {
    if (batch_size < 1) throw ContractError("batch_size must be at least 1");
    std::vector<double> margins(static_cast<std::size_t>(batch_size), config.margin);
    if (config.sigma == 0.0) return margins;
    std::normal_distribution<double> gauss(config.margin, config.sigma);
    for (auto& m : margins) m = gauss(rng);
    return margins;
}

namespace {

void require_rows_normalized(const Matrix& m, const char* what) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double n = m.row(r).norm();
        if (!(std::abs(n - 1.0) <= kUnitNormTolerance)) {
            throw ContractError(std::string(what) + " row " + std::to_string(r) + " is not unit-norm (norm " +
                                std::to_string(n) + ")");
        }
    }
}

}  // namespace

ArcLossResult elastic_arc_loss(const Matrix& embeddings, std::span<const int> labels, const MarginHead& head,
                               std::span<const double> margins) {
    const Eigen::Index n = embeddings.rows();
    const Eigen::Index classes = head.prototypes.rows();
    if (n == 0) throw ContractError("empty embedding batch");
    if (embeddings.cols() != head.prototypes.cols()) {
        throw ContractError("embedding dimension does not match prototype dimension");
    }
    if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(margins.size()) != n) {
        throw ContractError("labels and margins need one entry per sample");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= classes) {
            throw IndexError("label " + std::to_string(labels[i]) + " of sample " + std::to_string(i) +
                             " outside [0, " + std::to_string(classes) + ")");
        }
    }
    require_rows_normalized(embeddings, "embedding");
    require_rows_normalized(head.prototypes, "prototype");

    constexpr double kClamp = 1.0 - 1e-7;
    const double s = head.config.scale;
    const Matrix cosines = embeddings * head.prototypes.transpose();  // N x c
    Matrix logits = s * cosines;
    std::vector<double> target_dcos(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double c = cosines(i, y);
        const double cc = std::clamp(c, -kClamp, kClamp);
        const double sin_theta = std::sqrt(std::max(0.0, 1.0 - c * c));
        const double cm = std::cos(margins[static_cast<std::size_t>(i)]);
        const double sm = std::sin(margins[static_cast<std::size_t>(i)]);
        logits(i, y) = s * (c * cm - sin_theta * sm);
        target_dcos[static_cast<std::size_t>(i)] = s * (cm + sm * cc / std::sqrt(1.0 - cc * cc));
    }

    ArcLossResult out;
    Matrix grad_cos(n, classes);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        const double mx = logits.row(i).maxCoeff();
        const Eigen::RowVectorXd ex = (logits.row(i).array() - mx).exp().matrix();
        const double sum = ex.sum();
        if (logits(i, y) == mx) {
            double others = 0.0;
            for (Eigen::Index j = 0; j < classes; ++j) {
                if (j != y) others += ex(j);
            }
            total += std::log1p(others);
        } else {
            total += std::log(sum) + mx - logits(i, y);
        }
        const Eigen::RowVectorXd p = ex / sum;
        for (Eigen::Index j = 0; j < classes; ++j) {
            const double dlogit = (p(j) - (j == y ? 1.0 : 0.0)) / static_cast<double>(n);
            grad_cos(i, j) = dlogit * (j == y ? target_dcos[static_cast<std::size_t>(i)] : s);
        }
    }
    out.loss = total / static_cast<double>(n);
    out.grad_embeddings = grad_cos * head.prototypes;
    out.grad_prototypes = grad_cos.transpose() * embeddings;
    return out;
}

KdLossResult kd_embedding_loss(const Matrix& student, const Matrix& teacher) {
    if (student.rows() != teacher.rows() || student.cols() != teacher.cols()) {
        throw ContractError("student batch " + std::to_string(student.rows()) + "x" + std::to_string(student.cols()) +
                            " does not match teacher batch " + std::to_string(teacher.rows()) + "x" +
                            std::to_string(teacher.cols()));
    }
    if (student.size() == 0) throw ContractError("empty KD batch");
    const double scale = 1.0 / static_cast<double>(student.rows() * student.cols());
    const Matrix diff = student - teacher;
    return {diff.squaredNorm() * scale, 2.0 * scale * diff};
}

LossBreakdown total_loss(double l_arc, double l_kd, double lambda_effective) {
    return {l_arc, l_kd, lambda_effective, l_arc + lambda_effective * l_kd};
}

}  // namespace maskinv
