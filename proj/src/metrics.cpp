#include "maskinv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace maskinv {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_nonempty(const ScoreSet& s, const char* what) {
    if (s.genuine.empty()) throw MetricError(std::string(what) + ": empty genuine score list");
    if (s.impostor.empty()) throw MetricError(std::string(what) + ": empty impostor score list");
}

std::vector<double> sorted(std::vector<double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) throw MetricError("non-finite score");
    }
    std::sort(v.begin(), v.end());
    return v;
}

// Counts over pre-sorted lists.
std::size_t count_below(const std::vector<double>& sorted_scores, double t) {
    return static_cast<std::size_t>(std::lower_bound(sorted_scores.begin(), sorted_scores.end(), t) -
                                    sorted_scores.begin());
}
std::size_t count_at_or_above(const std::vector<double>& sorted_scores, double t) {
    return sorted_scores.size() - count_below(sorted_scores, t);
}

std::vector<double> candidates_from(const std::vector<double>& g, const std::vector<double>& i) {
    std::vector<double> c;
    c.reserve(g.size() + i.size() + 2);
    c.push_back(-kInf);
    std::merge(g.begin(), g.end(), i.begin(), i.end(), std::back_inserter(c));
    c.erase(std::unique(c.begin(), c.end()), c.end());
    c.push_back(kInf);
    return c;
}

bool within(double rate, double ceiling, Ceiling mode) {
    return mode == Ceiling::Strict ? rate < ceiling : rate <= ceiling;
}

}  // namespace

double cosine_score(const Embedding& a, const Embedding& b) {
    if (a.dim() != b.dim()) throw ContractError("embedding dimensions differ");
    require_unit_norm(a.values, "first embedding");
    require_unit_norm(b.values, "second embedding");
    double dot = 0.0;
    for (std::size_t i = 0; i < a.dim(); ++i) dot += a.values[i] * b.values[i];
    return std::clamp(dot, -1.0, 1.0);
}

double fmr_at(const ScoreSet& s, double t) {
    if (s.impostor.empty()) throw MetricError("fmr: empty impostor score list");
    const auto n = std::count_if(s.impostor.begin(), s.impostor.end(), [t](double x) { return x >= t; });
    return static_cast<double>(n) / static_cast<double>(s.impostor.size());
}

double fnmr_at(const ScoreSet& s, double t) {
    if (s.genuine.empty()) throw MetricError("fnmr: empty genuine score list");
    const auto n = std::count_if(s.genuine.begin(), s.genuine.end(), [t](double x) { return x < t; });
    return static_cast<double>(n) / static_cast<double>(s.genuine.size());
}

std::vector<double> candidate_thresholds(const ScoreSet& s) { return candidates_from(sorted(s.genuine), sorted(s.impostor)); }

OperatingPoint fnmr_at_fmr(const ScoreSet& s, double fmr_ceiling, Ceiling mode) {
    require_nonempty(s, "fnmr_at_fmr");
    if (!(fmr_ceiling > 0.0 && fmr_ceiling <= 1.0)) throw MetricError("fmr ceiling must lie in (0, 1]");
    const auto g = sorted(s.genuine);
    const auto i = sorted(s.impostor);
    const double ni = static_cast<double>(i.size());
    const double ng = static_cast<double>(g.size());
    // FMR is non-increasing and FNMR non-decreasing in t, so the first
    // feasible candidate is optimal.
    for (double t : candidates_from(g, i)) {
        if (within(static_cast<double>(count_at_or_above(i, t)) / ni, fmr_ceiling, mode)) {
            return {static_cast<double>(count_below(g, t)) / ng, t};
        }
    }
    return {1.0, kInf};
}

OperatingPoint tpr_at_far(const ScoreSet& s, double far_ceiling, Ceiling mode) {
    require_nonempty(s, "tpr_at_far");
    if (!(far_ceiling > 0.0 && far_ceiling <= 1.0)) throw MetricError("far ceiling must lie in (0, 1]");
    const auto g = sorted(s.genuine);
    const auto i = sorted(s.impostor);
    const double ni = static_cast<double>(i.size());
    const double ng = static_cast<double>(g.size());
    for (double t : candidates_from(g, i)) {
        if (within(static_cast<double>(count_at_or_above(i, t)) / ni, far_ceiling, mode)) {
            return {static_cast<double>(count_at_or_above(g, t)) / ng, t};
        }
    }
    return {0.0, kInf};
}

double fdr(const ScoreSet& s) {
    if (s.genuine.size() < 2 || s.impostor.size() < 2) {
        throw MetricError("fdr needs at least two genuine and two impostor scores");
    }
    auto moments = [](const std::vector<double>& v) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        return std::pair{mean, ss / static_cast<double>(v.size() - 1)};
    };
    const auto [mg, vg] = moments(s.genuine);
    const auto [mi, vi] = moments(s.impostor);
    const double num = (mg - mi) * (mg - mi);
    const double den = vg + vi;
    if (den == 0.0) {
        if (num == 0.0) return 0.0;
        throw MetricError("fdr undefined: zero variance with distinct means");
    }
    return num / den;
}

double accuracy_at_threshold(const ScoreSet& s, double t) {
    const std::size_t total = s.genuine.size() + s.impostor.size();
    if (total == 0) throw MetricError("accuracy of an empty score set");
    const auto tp = std::count_if(s.genuine.begin(), s.genuine.end(), [t](double x) { return x >= t; });
    const auto tn = std::count_if(s.impostor.begin(), s.impostor.end(), [t](double x) { return x < t; });
    return static_cast<double>(tp + tn) / static_cast<double>(total);
}

OperatingPoint max_accuracy(const ScoreSet& s) {
    const std::size_t total = s.genuine.size() + s.impostor.size();
    if (total == 0) throw MetricError("max_accuracy of an empty score set");
    const auto g = sorted(s.genuine);
    const auto i = sorted(s.impostor);
    std::size_t best_correct = 0;
    double best_t = -kInf;
    bool first = true;
    for (double t : candidates_from(g, i)) {
        const std::size_t correct = count_at_or_above(g, t) + count_below(i, t);
        if (first || correct > best_correct) {
            best_correct = correct;
            best_t = t;
            first = false;
        }
    }
    return {static_cast<double>(best_correct) / static_cast<double>(total), best_t};
}

KFoldResult kfold_accuracy(const PairProtocol& protocol, const std::vector<double>& scores) {
    if (!protocol.fold_boundaries || protocol.num_folds() < 2) {
        throw ProtocolError("k-fold accuracy needs at least two folds");
    }
    if (scores.size() != protocol.pairs.size()) throw ProtocolError("one score per pair is required");
    const auto& b = *protocol.fold_boundaries;
    KFoldResult out;
    for (std::size_t f = 0; f + 1 < b.size(); ++f) {
        ScoreSet train;
        ScoreSet test;
        for (std::size_t p = 0; p < scores.size(); ++p) {
            ScoreSet& dst = (p >= b[f] && p < b[f + 1]) ? test : train;
            (protocol.pairs[p].genuine ? dst.genuine : dst.impostor).push_back(scores[p]);
        }
        const double t = max_accuracy(train).threshold;
        out.fold_thresholds.push_back(t);
        out.fold_accuracies.push_back(accuracy_at_threshold(test, t));
    }
    double sum = 0.0;
    for (double a : out.fold_accuracies) sum += a;
    out.mean_accuracy = sum / static_cast<double>(out.fold_accuracies.size());
    return out;
}

std::vector<CurvePoint> det_curve(const ScoreSet& s) {
    require_nonempty(s, "det_curve");
    const auto g = sorted(s.genuine);
    const auto i = sorted(s.impostor);
    std::vector<CurvePoint> out;
    for (double t : candidates_from(g, i)) {
        out.push_back({t, static_cast<double>(count_at_or_above(i, t)) / static_cast<double>(i.size()),
                       static_cast<double>(count_below(g, t)) / static_cast<double>(g.size())});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Protocol scoring
// ---------------------------------------------------------------------------

ScoredProtocol score_protocol(const PairProtocol& protocol, const Backbone& model, const Masker& masker,
                              std::int64_t seed, const ImageResolver& resolver, int workers) {
    const ImageResolver load = resolver ? resolver : [](const std::string& p) { return load_face(p); };

    // Distinct (image, masked) keys in first-use order.
    std::unordered_map<std::string, std::size_t> slot_of;
    std::vector<std::pair<std::string, bool>> keys;
    std::vector<std::size_t> first_pair;
    std::vector<std::array<std::size_t, 2>> pair_slots;
    pair_slots.reserve(protocol.pairs.size());
    auto slot = [&](const std::string& path, bool masked, std::size_t pair_index) {
        const std::string key = (masked ? "1:" : "0:") + path;
        auto [it, inserted] = slot_of.emplace(key, keys.size());
        if (inserted) {
            keys.emplace_back(path, masked);
            first_pair.push_back(pair_index);
        }
        return it->second;
    };
    for (std::size_t p = 0; p < protocol.pairs.size(); ++p) {
        const auto& pair = protocol.pairs[p];
        pair_slots.push_back({slot(pair.reference, pair.mask_reference, p), slot(pair.probe, pair.mask_probe, p)});
    }

    constexpr std::size_t kChunk = 64;
    Matrix embeddings(static_cast<Eigen::Index>(keys.size()), model.embedding_dim());
    for (std::size_t begin = 0; begin < keys.size(); begin += kChunk) {
        const std::size_t end = std::min(keys.size(), begin + kChunk);
        std::vector<FaceImage> images;
        images.reserve(end - begin);
        for (std::size_t k = begin; k < end; ++k) {
            const auto& [path, masked] = keys[k];
            try {
                FaceImage img = load(path);
                if (masked) {
                    Rng rng = make_rng(seed, "benchmark-mask:" + path);
                    img = masker(img, rng);
                }
                images.push_back(std::move(img));
            } catch (const std::exception& e) {
                throw ScoringError("pair " + std::to_string(first_pair[k]) + ": cannot prepare " + path + ": " +
                                   e.what());
            }
        }
        std::vector<const FaceImage*> ptrs;
        for (const auto& img : images) ptrs.push_back(&img);
        embeddings.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) =
            embed(model, ptrs, workers);
    }

    ScoredProtocol out;
    out.unique_embeddings = keys.size();
    out.pair_scores.reserve(protocol.pairs.size());
    for (std::size_t p = 0; p < protocol.pairs.size(); ++p) {
        const auto [a, b] = pair_slots[p];
        const double score = std::clamp(
            embeddings.row(static_cast<Eigen::Index>(a)).dot(embeddings.row(static_cast<Eigen::Index>(b))), -1.0, 1.0);
        out.pair_scores.push_back(score);
        (protocol.pairs[p].genuine ? out.scores.genuine : out.scores.impostor).push_back(score);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

MetricsReport report(const ScoreSet& scores, const ReportMetadata& meta) {
    require_nonempty(scores, "report");
    MetricsReport r;
    r.name = meta.name;
    r.scenario = meta.scenario;
    r.num_genuine = scores.genuine.size();
    r.num_impostor = scores.impostor.size();

    const auto fmr1000 = fnmr_at_fmr(scores, kFmr1000, Ceiling::Strict);
    const auto fmr100 = fnmr_at_fmr(scores, kFmr100, Ceiling::Strict);
    const auto far2000 = tpr_at_far(scores, kFar2000, Ceiling::Inclusive);
    const auto best = max_accuracy(scores);
    r.fmr1000_fnmr = fmr1000.rate;
    r.fmr100_fnmr = fmr100.rate;
    r.tpr_at_far2000 = far2000.rate;
    r.acc2000 = accuracy_at_threshold(scores, far2000.threshold);
    r.max_acc = best.rate;
    r.fdr = fdr(scores);
    r.thresholds = {{"fmr1000", fmr1000.threshold},
                    {"fmr100", fmr100.threshold},
                    {"far2000", far2000.threshold},
                    {"acc2000", far2000.threshold},
                    {"acc", best.threshold}};
    if (meta.protocol && meta.pair_scores && meta.protocol->num_folds() >= 2) {
        r.kfold = kfold_accuracy(*meta.protocol, *meta.pair_scores);
    }
    return r;
}

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

}  // namespace

std::string render_text(const std::vector<MetricsReport>& reports) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof(line), "%-24s %-20s %9s %9s %9s %9s %9s %9s %9s\n", "model", "scenario", "FMR1000",
                  "FMR100", "FDR", "FAR2000", "ACC2000", "ACC", "kfold");
    os << line;
    for (const auto& r : reports) {
        const std::string kfold = r.kfold ? fmt("%.2f%%", 100.0 * r.kfold->mean_accuracy) : std::string("-");
        std::snprintf(line, sizeof(line), "%-24s %-20s %9.5f %9.5f %9.4f %8.2f%% %8.2f%% %8.2f%% %9s\n",
                      r.name.c_str(), r.scenario.c_str(), r.fmr1000_fnmr, r.fmr100_fnmr, r.fdr,
                      100.0 * r.tpr_at_far2000, 100.0 * r.acc2000, 100.0 * r.max_acc, kfold.c_str());
        os << line;
    }
    return os.str();
}

std::string render_csv(const std::vector<MetricsReport>& reports) {
    std::ostringstream os;
    os << "model,scenario,fmr1000,fmr100,fdr,tpr_at_far2000,acc2000,acc,kfold_acc,num_genuine,num_impostor,"
          "thr_fmr1000,thr_fmr100,thr_far2000,thr_acc\n";
    os.precision(17);
    for (const auto& r : reports) {
        os << r.name << ',' << r.scenario << ',' << r.fmr1000_fnmr << ',' << r.fmr100_fnmr << ',' << r.fdr << ','
           << r.tpr_at_far2000 << ',' << r.acc2000 << ',' << r.max_acc << ',';
        if (r.kfold) os << r.kfold->mean_accuracy;
        os << ',' << r.num_genuine << ',' << r.num_impostor << ',' << r.thresholds.at("fmr1000") << ','
           << r.thresholds.at("fmr100") << ',' << r.thresholds.at("far2000") << ',' << r.thresholds.at("acc") << '\n';
    }
    return os.str();
}

void write_score_dump(const std::filesystem::path& path, const PairProtocol& protocol,
                      const std::vector<double>& pair_scores) {
    if (pair_scores.size() != protocol.pairs.size()) throw ProtocolError("one score per pair is required");
    std::ofstream out(path);
    if (!out) throw ScoringError("cannot write " + path.string());
    out << "pair_index,genuine,score\n";
    char buf[64];
    for (std::size_t i = 0; i < pair_scores.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", pair_scores[i]);
        out << i << ',' << (protocol.pairs[i].genuine ? 1 : 0) << ',' << buf << '\n';
    }
}

std::pair<std::vector<bool>, std::vector<double>> read_score_dump(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScoringError("cannot open score dump " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<bool> genuine;
    std::vector<double> scores;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string idx, g, s;
        if (!std::getline(ls, idx, ',') || !std::getline(ls, g, ',') || !std::getline(ls, s)) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected pair_index,genuine,score");
        }
        genuine.push_back(g == "1");
        try {
            scores.push_back(std::stod(s));
        } catch (const std::exception&) {
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + s + "'");
        }
    }
    return {genuine, scores};
}

}  // namespace maskinv
