#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskinv/backbone.hpp"
#include "maskinv/core.hpp"
#include "maskinv/dataio.hpp"

namespace maskinv {

struct ScoreSet {
    std::vector<double> genuine;
    std::vector<double> impostor;
};

/// How a rate is compared against its ceiling.
enum class Ceiling { Strict, Inclusive };

inline constexpr double kFmr1000 = 0.001;
inline constexpr double kFmr100 = 0.01;
inline constexpr double kFar2000 = 0.002;

/// Dot product of two unit-norm embeddings.
double cosine_score(const Embedding& a, const Embedding& b);

/// Fraction of impostor scores >= threshold.
double fmr_at(const ScoreSet& scores, double threshold);
/// Fraction of genuine scores < threshold.
double fnmr_at(const ScoreSet& scores, double threshold);

struct OperatingPoint {
    double rate = 0.0;
    double threshold = 0.0;
};

/// Candidate thresholds: -inf, every distinct score, +inf (ascending).
std::vector<double> candidate_thresholds(const ScoreSet& scores);

/// Lowest FNMR over thresholds whose FMR is below the ceiling (strictly by
/// default), with the smallest threshold achieving it.
OperatingPoint fnmr_at_fmr(const ScoreSet& scores, double fmr_ceiling, Ceiling mode = Ceiling::Strict);

/// (mu_g - mu_i)^2 / (var_g + var_i), unbiased sample variances.
double fdr(const ScoreSet& scores);

/// Highest TPR over thresholds whose FAR is within the ceiling (inclusive by
/// default), with the smallest threshold achieving it.
OperatingPoint tpr_at_far(const ScoreSet& scores, double far_ceiling, Ceiling mode = Ceiling::Inclusive);

double accuracy_at_threshold(const ScoreSet& scores, double threshold);

/// Best accuracy over candidate thresholds; ties go to the smallest threshold.
OperatingPoint max_accuracy(const ScoreSet& scores);

struct KFoldResult {
    double mean_accuracy = 0.0;
    std::vector<double> fold_accuracies;
    std::vector<double> fold_thresholds;
};

/// Each fold is scored at the max-accuracy threshold of the other folds.
/// `scores[i]` belongs to `protocol.pairs[i]`.
KFoldResult kfold_accuracy(const PairProtocol& protocol, const std::vector<double>& scores);

/// (threshold, FMR, FNMR) at every candidate threshold.
struct CurvePoint {
    double threshold, fmr, fnmr;
};
std::vector<CurvePoint> det_curve(const ScoreSet& scores);

// ---------------------------------------------------------------------------
// Protocol scoring
// ---------------------------------------------------------------------------

using ImageResolver = std::function<FaceImage(const std::string& path)>;
using Masker = std::function<FaceImage(const FaceImage&, Rng&)>;

struct ScoredProtocol {
    ScoreSet scores;
    /// Score of each pair, in protocol order.
    std::vector<double> pair_scores;
    std::size_t unique_embeddings = 0;
};

/// Masks the flagged sides with `masker` (rng stream "benchmark-mask:<path>"
/// under `seed`, so a given image always gets the same mask), embeds each
/// distinct (image, masked) once, and scores every pair by cosine
/// similarity. Images come from `resolver` (load_face by default).
ScoredProtocol score_protocol(const PairProtocol& protocol, const Backbone& model, const Masker& masker,
                              std::int64_t seed, const ImageResolver& resolver = {}, int workers = 1);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::string name;
    std::string scenario;
    double fmr1000_fnmr = 0.0;
    double fmr100_fnmr = 0.0;
    double fdr = 0.0;
    double tpr_at_far2000 = 0.0;
    double acc2000 = 0.0;
    double max_acc = 0.0;
    std::optional<KFoldResult> kfold;
    std::map<std::string, double> thresholds;
    std::size_t num_genuine = 0;
    std::size_t num_impostor = 0;
};

struct ReportMetadata {
    std::string name;
    std::string scenario;
    /// With folds, kfold accuracy is included.
    const PairProtocol* protocol = nullptr;
    const std::vector<double>* pair_scores = nullptr;
};

MetricsReport report(const ScoreSet& scores, const ReportMetadata& meta = {});

/// Aligned text table: FMR1000, FMR100, FDR, FAR2000(TPR), ACC2000, ACC[, kfold].
std::string render_text(const std::vector<MetricsReport>& reports);
std::string render_csv(const std::vector<MetricsReport>& reports);

/// `pair_index,genuine,score`
void write_score_dump(const std::filesystem::path& path, const PairProtocol& protocol,
                      const std::vector<double>& pair_scores);
/// Reads a score dump back into (genuine flags, scores).
std::pair<std::vector<bool>, std::vector<double>> read_score_dump(const std::filesystem::path& path);

}  // namespace maskinv
