#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "maskinv/maskgen.hpp"
#include "maskinv/metrics.hpp"
#include "metric_oracle.hpp"
#include "support.hpp"

using namespace maskinv;
using namespace testing::oracle;

namespace {

ScoreSet transform(const ScoreSet& s, double (*f)(double)) {
    ScoreSet out;
    for (double x : s.genuine) out.genuine.push_back(f(x));
    for (double x : s.impostor) out.impostor.push_back(f(x));
    return out;
}

PairProtocol protocol_for(const std::vector<bool>& genuine, int folds) {
    PairProtocol p;
    for (bool g : genuine) p.pairs.push_back({"a", "b", g});
    assign_folds(p, folds);
    return p;
}

}  // namespace

TEST_CASE("cosine score") {
    const Embedding a{{1.0, 0.0}};
    const Embedding b{{std::sqrt(2.0) / 2, std::sqrt(2.0) / 2}};
    const Embedding c{{0.0, 1.0}};
    CHECK(cosine_score(a, a) == 1.0);
    CHECK(cosine_score(a, c) == 0.0);
    CHECK(cosine_score(a, b) == doctest::Approx(0.70710678).epsilon(1e-8));
    CHECK_THROWS_AS(cosine_score(a, Embedding{{1.01, 0.0}}), ContractError);
    CHECK_THROWS_AS(cosine_score(a, Embedding{{1.0, 0.0, 0.0}}), ContractError);
}

TEST_CASE("fnmr at fmr") {
    const ScoreSet worked{{0.9, 0.8, 0.7, 0.2}, {0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50}};
    const auto op = fnmr_at_fmr(worked, 0.1);
    CHECK(op.rate == 0.25);
    CHECK(op.threshold > 0.50);
    CHECK(fmr_at(worked, op.threshold) == 0.0);
    CHECK(fnmr_at(worked, op.threshold) == 0.25);

    const ScoreSet separated{{0.8, 0.9}, {0.1, 0.2, 0.3}};
    for (double ceiling : {0.001, 0.01, 0.5, 1.0}) CHECK(fnmr_at_fmr(separated, ceiling).rate == 0.0);
    const ScoreSet anti{{0.1, 0.2}, {0.8, 0.9}};
    CHECK(fnmr_at_fmr(anti, 0.001).rate == 1.0);
    CHECK_THROWS_AS(fnmr_at_fmr(ScoreSet{{}, {0.1}}, 0.1), MetricError);
    CHECK_THROWS_AS(fnmr_at_fmr(separated, 0.0), MetricError);
}

TEST_CASE("tpr at far") {
    const ScoreSet worked{{0.9, 0.5}, {0.6, 0.1}};
    const auto op = tpr_at_far(worked, 0.25);
    CHECK(op.rate == 0.5);
    CHECK(op.threshold > 0.6);
    CHECK(tpr_at_far(ScoreSet{{0.8, 0.9}, {0.1, 0.2}}, 0.002).rate == 1.0);
    const auto open = tpr_at_far(worked, 1.0);
    CHECK(open.rate == 1.0);
    CHECK(open.threshold == -kInf);
    // Inclusive by default: FAR exactly at the ceiling is allowed.
    CHECK(tpr_at_far(worked, 0.5).rate == 1.0);
    CHECK(tpr_at_far(worked, 0.5, Ceiling::Strict).rate == 0.5);
}

TEST_CASE("fdr") {
    CHECK(fdr(ScoreSet{{0.1, 0.3}, {0.0, 0.4}}) == 0.0);
    // mean 0.8 / 0.2, unbiased sd 0.1 each
    const ScoreSet s{{0.7, 0.8, 0.9}, {0.1, 0.2, 0.3}};
    CHECK(fdr(s) == doctest::Approx(18.0).epsilon(1e-12));
    const ScoreSet flat{{0.5, 0.5}, {0.5, 0.5}};
    CHECK(fdr(flat) == 0.0);
    CHECK_THROWS_AS(fdr(ScoreSet{{0.9, 0.9}, {0.1, 0.1}}), MetricError);
    CHECK_THROWS_AS(fdr(ScoreSet{{0.9}, {0.1, 0.2}}), MetricError);

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const ScoreSet r = random_scores(rng);
        if (r.genuine.size() < 2 || r.impostor.size() < 2) continue;
        double base = 0.0;
        try {
            base = fdr(r);
        } catch (const MetricError&) {
            continue;
        }
        for (auto [a, b] : {std::pair{1.0, 3.5}, {2.5, 0.0}, {-4.0, 1.0}, {0.01, -7.0}}) {
            ScoreSet t;
            for (double x : r.genuine) t.genuine.push_back(a * x + b);
            for (double x : r.impostor) t.impostor.push_back(a * x + b);
            CHECK(testing::rel_error(fdr(t), base, 1e-12) < 1e-9);
        }
    }
}

TEST_CASE("Monte-Carlo fdr approaches the population value") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g(0.8, 0.1), i(0.2, 0.1);
    ScoreSet s;
    for (int k = 0; k < 100000; ++k) {
        s.genuine.push_back(g(rng));
        s.impostor.push_back(i(rng));
    }
    CHECK(std::abs(fdr(s) - 18.0) <= 0.5);
}

TEST_CASE("accuracy at threshold and max accuracy") {
    const ScoreSet separated{{0.8, 0.9}, {0.1, 0.2}};
    CHECK(accuracy_at_threshold(separated, 0.5) == 1.0);
    CHECK(accuracy_at_threshold(ScoreSet{{0.9}, {0.1}}, 0.95) == 0.5);
    CHECK(accuracy_at_threshold(ScoreSet{{0.9, 0.3, 0.2}, {0.1}}, -kInf) == 0.75);
    CHECK(max_accuracy(separated).rate == 1.0);
    const auto best = max_accuracy(ScoreSet{{0.8, 0.3}, {0.7, 0.2}});
    CHECK(best.rate == 0.75);
    // 0.3 and anything just above 0.7 both reach 3/4; ties go to the smaller threshold.
    CHECK(best.threshold == 0.3);
    CHECK(accuracy_at_threshold(ScoreSet{{0.8, 0.3}, {0.7, 0.2}}, std::nextafter(0.7, 1.0)) == 0.75);
    CHECK(max_accuracy(ScoreSet{{0.4, 0.6}, {0.4, 0.6}}).rate == 0.5);
}

TEST_CASE("threshold metrics equal brute-force enumeration") {
    std::mt19937_64 rng(77);
    int checked = 0;
    for (int trial = 0; trial < 300; ++trial) {
        const ScoreSet s = random_scores(rng);
        for (double c : {0.001, 0.01, 0.1, 0.25, 0.5, 1.0}) {
            CHECK(fnmr_at_fmr(s, c).rate == brute_fnmr_at_fmr(s, c, true));
            CHECK(fnmr_at_fmr(s, c, Ceiling::Inclusive).rate == brute_fnmr_at_fmr(s, c, false));
            CHECK(tpr_at_far(s, c).rate == brute_tpr_at_far(s, c, false));
            CHECK(tpr_at_far(s, c, Ceiling::Strict).rate == brute_tpr_at_far(s, c, true));
            const auto f = fnmr_at_fmr(s, c);
            CHECK(fnmr_at(s, f.threshold) == f.rate);
            const auto t = tpr_at_far(s, c);
            CHECK(frac_at_or_above(s.genuine, t.threshold) == t.rate);
        }
        const auto m = max_accuracy(s);
        CHECK(m.rate == brute_max_accuracy(s));
        CHECK(m.threshold == brute_best_threshold(s));
        ++checked;
    }
    CHECK(checked == 300);
}

TEST_CASE("rate metrics are invariant under increasing transforms") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const ScoreSet s = random_scores(rng);
        for (auto f : {+[](double x) { return 3.0 * x + 1.0; }, +[](double x) { return std::exp(2.0 * x); },
                       +[](double x) { return x * x * x + x; }}) {
            const ScoreSet t = transform(s, f);
            for (double c : {0.001, 0.01, 0.2}) {
                CHECK(fnmr_at_fmr(t, c).rate == fnmr_at_fmr(s, c).rate);
                CHECK(tpr_at_far(t, c).rate == tpr_at_far(s, c).rate);
            }
            CHECK(max_accuracy(t).rate == max_accuracy(s).rate);
            std::vector<bool> genuine;
            std::vector<double> raw, mapped;
            for (std::size_t k = 0; k < std::min(s.genuine.size(), s.impostor.size()); ++k) {
                genuine.insert(genuine.end(), {true, false});
                raw.insert(raw.end(), {s.genuine[k], s.impostor[k]});
                mapped.insert(mapped.end(), {f(s.genuine[k]), f(s.impostor[k])});
            }
            if (raw.size() >= 4 && raw.size() % 4 == 0) {
                const auto p = protocol_for(genuine, 2);
                CHECK(kfold_accuracy(p, mapped).fold_accuracies == kfold_accuracy(p, raw).fold_accuracies);
            }
        }
    }
}

TEST_CASE("det curve is monotone") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        const auto curve = det_curve(random_scores(rng));
        REQUIRE(curve.size() >= 3);
        CHECK(curve.front().fmr == 1.0);
        CHECK(curve.front().fnmr == 0.0);
        CHECK(curve.back().fmr == 0.0);
        CHECK(curve.back().fnmr == 1.0);
        for (std::size_t k = 1; k < curve.size(); ++k) {
            CHECK(curve[k].threshold > curve[k - 1].threshold);
            CHECK(curve[k].fmr <= curve[k - 1].fmr);
            CHECK(curve[k].fnmr >= curve[k - 1].fnmr);
        }
    }
}

TEST_CASE("k-fold accuracy") {
    SUBCASE("separable folds") {
        std::vector<bool> genuine;
        std::vector<double> scores;
        for (int fold = 0; fold < 4; ++fold) {
            for (int k = 0; k < 10; ++k) {
                genuine.push_back(k % 2 == 0);
                scores.push_back(k % 2 == 0 ? 0.9 - 0.01 * k : 0.1 + 0.01 * k);
            }
        }
        const auto r = kfold_accuracy(protocol_for(genuine, 4), scores);
        CHECK(r.mean_accuracy == 1.0);
        CHECK(r.fold_accuracies.size() == 4);
    }
    SUBCASE("shifted second fold matches a brute-force replication") {
        std::mt19937_64 rng(31);
        std::normal_distribution<double> g(0.6, 0.2), i(0.3, 0.2);
        std::vector<bool> genuine;
        std::vector<double> fold0;
        for (int k = 0; k < 30; ++k) {
            const bool gen = k % 3 != 0;
            genuine.push_back(gen);
            fold0.push_back(gen ? g(rng) : i(rng));
        }
        const double shift = 0.15;
        std::vector<bool> all_genuine = genuine;
        all_genuine.insert(all_genuine.end(), genuine.begin(), genuine.end());
        std::vector<double> all = fold0;
        for (double x : fold0) all.push_back(x + shift);
        const auto r = kfold_accuracy(protocol_for(all_genuine, 2), all);

        ScoreSet s0, s1;
        for (std::size_t k = 0; k < fold0.size(); ++k) {
            (genuine[k] ? s0.genuine : s0.impostor).push_back(all[k]);
            (genuine[k] ? s1.genuine : s1.impostor).push_back(all[k + fold0.size()]);
        }
        const double t_for_0 = brute_best_threshold(s1);
        const double t_for_1 = brute_best_threshold(s0);
        REQUIRE(r.fold_accuracies.size() == 2);
        CHECK(r.fold_thresholds[0] == t_for_0);
        CHECK(r.fold_thresholds[1] == t_for_1);
        CHECK(r.fold_accuracies[0] == brute_accuracy(s0, t_for_0));
        CHECK(r.fold_accuracies[1] == brute_accuracy(s1, t_for_1));
        CHECK(r.mean_accuracy == (r.fold_accuracies[0] + r.fold_accuracies[1]) / 2);
    }
    SUBCASE("6000 pairs in 10 folds") {
        std::mt19937_64 rng(4);
        std::normal_distribution<double> g(0.6, 0.2), i(0.2, 0.2);
        std::vector<bool> genuine;
        std::vector<double> scores;
        for (int k = 0; k < 6000; ++k) {
            genuine.push_back(k % 2 == 0);
            scores.push_back(k % 2 == 0 ? g(rng) : i(rng));
        }
        const auto p = protocol_for(genuine, 10);
        const auto r = kfold_accuracy(p, scores);
        REQUIRE(r.fold_accuracies.size() == 10);
        double sum = 0.0;
        for (double a : r.fold_accuracies) sum += a;
        CHECK(r.mean_accuracy == doctest::Approx(sum / 10).epsilon(1e-15));
    }
    SUBCASE("fewer than two folds") {
        const auto p = protocol_for({true, false}, 1);
        CHECK_THROWS_AS(kfold_accuracy(p, {0.9, 0.1}), ProtocolError);
    }
}

TEST_CASE("report thresholds reproduce their rates") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.7, 0.15), i(0.1, 0.15);
    ScoreSet s;
    for (int k = 0; k < 3000; ++k) {
        s.genuine.push_back(g(rng));
        s.impostor.push_back(i(rng));
    }
    const MetricsReport r = report(s, {"toy", "none", nullptr, nullptr});
    CHECK(r.num_genuine == 3000);
    CHECK(r.num_impostor == 3000);
    CHECK(fnmr_at(s, r.thresholds.at("fmr1000")) == r.fmr1000_fnmr);
    CHECK(fnmr_at(s, r.thresholds.at("fmr100")) == r.fmr100_fnmr);
    CHECK(frac_at_or_above(s.genuine, r.thresholds.at("far2000")) == r.tpr_at_far2000);
    CHECK(accuracy_at_threshold(s, r.thresholds.at("acc2000")) == r.acc2000);
    CHECK(accuracy_at_threshold(s, r.thresholds.at("acc")) == r.max_acc);
    CHECK(fmr_at(s, r.thresholds.at("fmr1000")) < 0.001);
    CHECK(fmr_at(s, r.thresholds.at("far2000")) <= 0.002);
    CHECK(r.fmr1000_fnmr >= r.fmr100_fnmr);
    CHECK_FALSE(r.kfold.has_value());

    const std::string text = render_text({r});
    CHECK(text.find("FMR1000") != std::string::npos);
    CHECK(text.find("toy") != std::string::npos);
    CHECK(render_csv({r}).find("fmr1000") != std::string::npos);

    CHECK_THROWS_AS(report(ScoreSet{{0.5, 0.6}, {}}), MetricError);
}

TEST_CASE("score dump round-trip") {
    testing::TempDir dir("metrics");
    const auto p = protocol_for({true, false, true, false}, 2);
    const std::vector<double> scores{0.5, -0.25, 0.125, 1.0 / 3.0};
    write_score_dump(dir / "scores.csv", p, scores);
    const auto [genuine, back] = read_score_dump(dir / "scores.csv");
    CHECK(genuine == std::vector<bool>{true, false, true, false});
    CHECK(back == scores);
}

TEST_CASE("protocol scoring") {
    ToySpec spec;
    spec.num_identities = 3;
    spec.images_per_identity = 2;
    std::map<std::string, FaceImage> store;
    for (auto& f : generate_toy_faces(spec)) store[f.source_id] = f;
    const ImageResolver resolver = [&store](const std::string& p) {
        const auto it = store.find(p);
        if (it == store.end()) throw IngestionError("no image " + p);
        return it->second;
    };
    int mask_calls = 0;
    const Masker masker = [&mask_calls](const FaceImage& img, Rng& rng) {
        ++mask_calls;
        return mask_for_benchmark(img, rng);
    };
    const Backbone model(BackboneConfig{}, 16, 4);

    PairProtocol p;
    p.pairs = {{"id_0000/img_0000.png", "id_0000/img_0001.png", true},
               {"id_0001/img_0000.png", "id_0001/img_0001.png", true},
               {"id_0002/img_0000.png", "id_0002/img_0001.png", true},
               {"id_0000/img_0000.png", "id_0001/img_0000.png", false},
               {"id_0001/img_0001.png", "id_0002/img_0000.png", false}};

    stamp_scenario(p, Scenario::NoMask);
    const auto plain = score_protocol(p, model, masker, 0, resolver);
    CHECK(plain.scores.genuine.size() == 3);
    CHECK(plain.scores.impostor.size() == 2);
    CHECK(plain.unique_embeddings == 6);
    CHECK(mask_calls == 0);
    const Matrix e = embed(model, std::vector<const FaceImage*>{&store["id_0000/img_0000.png"],
                                                                &store["id_0001/img_0000.png"]});
    CHECK(plain.pair_scores[3] == doctest::Approx(e.row(0).dot(e.row(1))).epsilon(1e-12));

    stamp_scenario(p, Scenario::MaskedVsNonMasked);
    const auto mvn = score_protocol(p, model, masker, 0, resolver);
    CHECK(mask_calls == 5);
    CHECK(mvn.unique_embeddings == 9);
    const auto again = score_protocol(p, model, masker, 0, resolver);
    CHECK(again.pair_scores == mvn.pair_scores);
    CHECK(mvn.pair_scores != plain.pair_scores);

    stamp_scenario(p, Scenario::MaskedVsMasked);
    mask_calls = 0;
    const auto mvm = score_protocol(p, model, masker, 0, resolver);
    CHECK(mask_calls == 6);
    CHECK(mvm.unique_embeddings == 6);

    p.pairs.push_back({"id_0000/img_0000.png", "missing.png", false});
    try {
        score_protocol(p, model, masker, 0, resolver);
        FAIL("expected a scoring error");
    } catch (const ScoringError& err) {
        CHECK(std::string(err.what()).find("pair 5") != std::string::npos);
    }
}
