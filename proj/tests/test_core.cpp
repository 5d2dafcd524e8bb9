#include <doctest.h>

#include <fstream>
#include <functional>

#include "maskinv/core.hpp"
#include "support.hpp"

using namespace maskinv;

namespace {

std::vector<std::uint64_t> draws(Rng rng, int n) {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < n; ++i) out.push_back(rng());
    return out;
}

std::string error_message(const std::function<void()>& f) {
    try {
        f();
    } catch (const std::exception& e) {
        return e.what();
    }
    return {};
}

}  // namespace

TEST_CASE("empty config yields the documented defaults") {
    const Config c = parse_config("");
    CHECK(c.training.batch_size == 512);
    CHECK(c.training.total_iterations == 295000);
    CHECK(c.training.lr_initial == 0.1);
    CHECK(c.training.lr_milestones == std::vector<std::int64_t>{80000, 140000, 210000});
    CHECK(c.training.lr_decay_factor == 10.0);
    CHECK(c.training.momentum == 0.9);
    CHECK(c.training.weight_decay == 5e-4);
    CHECK(c.training.lambda_base == 100.0);
    CHECK(c.training.lambda_high == 3000.0);
    CHECK(c.training.lambda_switch_iteration == 227000);
    CHECK(c.training.p_mask == 0.5);
    CHECK(c.training.paradigm == Paradigm::HG);
    CHECK(c.head.scale == 64.0);
    CHECK(c.head.margin == 0.5);
    CHECK(c.head.sigma == 0.5);
    CHECK(c.head.embedding_dim == 512);
    CHECK_FALSE(c.head.num_classes.has_value());
}

TEST_CASE("load_config reads a file and fills absent keys") {
    testing::TempDir dir("core");
    const auto path = dir / "toy.cfg";
    std::ofstream(path) << "# toy run\nbatch_size = 32   # small\nembedding_dim = 64\n\nparadigm = LG\n";
    const Config c = load_config(path);
    CHECK(c.training.batch_size == 32);
    CHECK(c.head.embedding_dim == 64);
    CHECK(c.training.paradigm == Paradigm::LG);
    CHECK_FALSE(c.training.lambda_switch_iteration.has_value());
    CHECK(c.head.scale == 64.0);
    CHECK_THROWS_AS(load_config(dir / "missing.cfg"), ConfigError);
}

TEST_CASE("unordered milestones are a validation error") {
    CHECK_THROWS_AS(parse_config("lr_milestones = [140000, 80000]"), ValidationError);
    CHECK(error_message([] { parse_config("lr_milestones = [140000, 80000]"); }).find("lr_milestones not ascending") !=
          std::string::npos);
}

TEST_CASE("lambda switch with paradigm LG is a validation error") {
    CHECK_THROWS_AS(parse_config("paradigm = LG\nlambda_switch_iteration = 1000"), ValidationError);
    CHECK(error_message([] { parse_config("paradigm = LG\nlambda_switch_iteration = 1000"); })
              .find("lambda_switch_iteration") != std::string::npos);
    CHECK_NOTHROW(parse_config("paradigm = NO_KD"));
}

TEST_CASE("parse failures name the line") {
    CHECK_THROWS_AS(parse_config("batch_size = 4\nbogus_key = 1"), ConfigError);
    CHECK(error_message([] { parse_config("batch_size = 4\nbogus_key = 1"); }).find("line 2") != std::string::npos);
    CHECK(error_message([] { parse_config("\n\nbatch_size 4"); }).find("line 3") != std::string::npos);
    CHECK(error_message([] { parse_config("batch_size = four"); }).find("line 1") != std::string::npos);
    CHECK_THROWS_AS(parse_config("seed = 1\nseed = 2"), ConfigError);
    CHECK_THROWS_AS(parse_config("paradigm = MEDIUM"), ConfigError);
}

TEST_CASE("invariant violations name the field") {
    CHECK(error_message([] { parse_config("p_mask = 1.5"); }).find("p_mask") != std::string::npos);
    CHECK(error_message([] { parse_config("scale = 0"); }).find("scale") != std::string::npos);
    CHECK(error_message([] { parse_config("sigma = -0.1"); }).find("sigma") != std::string::npos);
    CHECK(error_message([] { parse_config("num_classes = 1"); }).find("num_classes") != std::string::npos);
    CHECK(error_message([] { parse_config("momentum = 1"); }).find("momentum") != std::string::npos);
    CHECK(error_message([] { parse_config("total_iterations = 1000"); }).find("lr_milestones") != std::string::npos);
    CHECK_THROWS_AS(parse_config("total_iterations = 1000\nlr_milestones = [10]\nlambda_switch_iteration = 1000"),
                    ValidationError);
}

TEST_CASE("config text round-trips") {
    const char* text =
        "batch_size = 32\ntotal_iterations = 2000\nlr_milestones = [1200, 1500, 1800]\nlambda_switch_iteration = "
        "1400\nlambda_base = 700\nweight_decay = 0.0001234\nembedding_dim = 64\nnum_classes = 40\nsigma = 0.3\n"
        "backbone_channels = [8, 16]\nmask_jitter_px = 1.5\nworkers = 2\nseed = -7\ninit_from_teacher = true\n";
    const Config a = parse_config(text);
    const Config b = parse_config(serialize_config(a));
    CHECK(a == b);
    CHECK(serialize_config(a) == serialize_config(b));
    const Config lg = parse_config("paradigm = LG");
    CHECK(parse_config(serialize_config(lg)) == lg);
}

TEST_CASE("config keys are documented with defaults") {
    const auto keys = config_keys();
    const std::string text = serialize_config(Config{});
    for (const auto& k : keys) {
        CHECK_FALSE(k.description.empty());
        CHECK(text.find(k.key + " = " + k.default_value + "\n") != std::string::npos);
    }
    CHECK(keys.size() == 24);
}

TEST_CASE("make_rng streams") {
    CHECK(draws(make_rng(42, "mask"), 100) == draws(make_rng(42, "mask"), 100));
    CHECK(draws(make_rng(42, "mask"), 100) != draws(make_rng(42, "margin"), 100));
    CHECK(draws(make_rng(42, "mask"), 100) != draws(make_rng(43, "mask"), 100));
    CHECK(draws(make_rng(42, "mask", 0), 100) != draws(make_rng(42, "mask", 1), 100));
}

TEST_CASE("normalize produces unit norm and rejects zero") {
    const std::vector<double> v{3.0, 4.0, 0.0};
    const Embedding e = normalize(v);
    CHECK(e.dim() == 3);
    CHECK(std::abs(l2_norm(e.values) - 1.0) < 1e-6);
    CHECK(e.values[0] == doctest::Approx(0.6));
    CHECK_THROWS_AS(normalize(std::vector<double>{0.0, 0.0}), ContractError);
    CHECK_NOTHROW(require_unit_norm(e.values, "e"));
    CHECK_THROWS_AS(require_unit_norm(std::vector<double>{1.001, 0.0}, "e"), ContractError);
}

TEST_CASE("landmark and face invariants") {
    CHECK_NOTHROW(validate_landmarks(reference_landmarks()));
    Landmarks nose_up = reference_landmarks();
    nose_up[Landmark::NoseTip].y = nose_up[Landmark::LeftEye].y - 1.0;
    CHECK_THROWS_AS(validate_landmarks(nose_up), ContractError);
    Landmarks outside = reference_landmarks();
    outside[Landmark::RightMouth].x = 112.0;
    CHECK_THROWS_AS(validate_landmarks(outside), ContractError);

    FaceImage img;
    img.landmarks = reference_landmarks();
    CHECK_NOTHROW(validate_face(img));
    img.at(3, 4, 1) = 1.0001F;
    CHECK_THROWS_AS(validate_face(img), ContractError);
    img.at(3, 4, 1) = -1.0F;
    img.pixels.pop_back();
    CHECK_THROWS_AS(validate_face(img), ContractError);
}

TEST_CASE("paradigm names") {
    for (auto p : {Paradigm::HG, Paradigm::LG, Paradigm::NO_KD}) CHECK(parse_paradigm(to_string(p)) == p);
    CHECK_THROWS_AS(parse_paradigm("xx"), ConfigError);
}

TEST_CASE("errors carry their category") {
    CHECK(ConfigError("x").category() == "config");
    CHECK(ProtocolError("x").category() == "protocol");
    CHECK(GeometryError("x").category() == "geometry");
}
