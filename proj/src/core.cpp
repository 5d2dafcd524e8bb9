#include "maskinv/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace maskinv {

Landmarks reference_landmarks() {
    // Standard 5-point template for 112x112 aligned crops.
    Landmarks l;
    l[Landmark::LeftEye] = {38.2946, 51.6963};
    l[Landmark::RightEye] = {73.5318, 51.5014};
    l[Landmark::NoseTip] = {56.0252, 71.7366};
    l[Landmark::LeftMouth] = {41.5493, 92.3655};
    l[Landmark::RightMouth] = {70.7299, 92.2041};
    return l;
}

void validate_landmarks(const Landmarks& landmarks) {
    static constexpr std::array<const char*, 5> kNames{"left eye", "right eye", "nose tip", "left mouth corner",
                                                       "right mouth corner"};
    for (std::size_t i = 0; i < landmarks.points.size(); ++i) {
        const auto& p = landmarks.points[i];
        if (!(p.x >= 0.0 && p.x < kFaceSize && p.y >= 0.0 && p.y < kFaceSize)) {
            std::ostringstream os;
            os << kNames[i] << " landmark (" << p.x << ", " << p.y << ") outside the 112x112 crop";
            throw ContractError(os.str());
        }
    }
    const double nose_y = landmarks[Landmark::NoseTip].y;
    if (!(nose_y > landmarks[Landmark::LeftEye].y && nose_y > landmarks[Landmark::RightEye].y)) {
        throw ContractError("nose tip is not below both eyes");
    }
}

void validate_face(const FaceImage& image) {
    if (image.pixels.size() != kFacePixelCount) {
        throw ContractError("face raster must be 112x112x3");
    }
    for (float v : image.pixels) {
        if (!(v >= -1.0F && v <= 1.0F)) {
            throw ContractError("pixel value outside [-1, 1] in " + image.source_id);
        }
    }
    validate_landmarks(image.landmarks);
    if (image.identity_label && *image.identity_label < 0) {
        throw ContractError("negative identity label in " + image.source_id);
    }
}

double l2_norm(std::span<const double> v) {
    double sum = 0.0;
    for (double x : v) sum += x * x;
    return std::sqrt(sum);
}

Embedding normalize(std::span<const double> features) {
    const double n = l2_norm(features);
    if (!(n > 0.0) || !std::isfinite(n)) {
        throw ContractError("cannot normalize a zero or non-finite feature vector");
    }
    Embedding e;
    e.values.resize(features.size());
    std::transform(features.begin(), features.end(), e.values.begin(), [n](double x) { return x / n; });
    return e;
}

void require_unit_norm(std::span<const double> v, std::string_view what, double tolerance) {
    const double n = l2_norm(v);
    if (!(std::abs(n - 1.0) <= tolerance)) {
        std::ostringstream os;
        os << what << " is not unit-norm (norm " << n << ")";
        throw ContractError(os.str());
    }
}

std::string to_string(Paradigm p) {
    switch (p) {
        case Paradigm::HG: return "HG";
        case Paradigm::LG: return "LG";
        case Paradigm::NO_KD: return "NO_KD";
    }
    return "?";
}

Paradigm parse_paradigm(std::string_view text) {
    std::string up(text);
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return std::toupper(c); });
    std::replace(up.begin(), up.end(), '-', '_');
    if (up == "HG") return Paradigm::HG;
    if (up == "LG") return Paradigm::LG;
    if (up == "NO_KD" || up == "NOKD") return Paradigm::NO_KD;
    throw ConfigError("unknown paradigm '" + std::string(text) + "' (expected HG, LG or NO_KD)");
}

// ---------------------------------------------------------------------------
// Config text format
// ---------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& text) {
    T value{};
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last) throw std::invalid_argument("not a number: '" + text + "'");
    return value;
}

bool parse_bool(const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw std::invalid_argument("not a boolean: '" + text + "'");
}

bool is_none(const std::string& text) { return text == "none" || text == "auto"; }

template <typename T>
std::vector<T> parse_list(std::string text) {
    text = trim(text);
    if (text.size() < 2 || text.front() != '[' || text.back() != ']') {
        throw std::invalid_argument("expected a [a, b, ...] list");
    }
    std::vector<T> out;
    std::stringstream ss(text.substr(1, text.size() - 2));
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        out.push_back(parse_number<T>(item));
    }
    return out;
}

template <typename T>
std::string format_list(const std::vector<T>& values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += std::to_string(values[i]);
    }
    return out + "]";
}

struct KeySpec {
    const char* key;
    const char* description;
    std::function<void(Config&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

const std::vector<KeySpec>& key_specs() {
    static const std::vector<KeySpec> specs = {
        {"batch_size", "mini-batch size N",
         [](Config& c, const std::string& v) { c.training.batch_size = parse_number<int>(v); },
         [](const Config& c) { return std::to_string(c.training.batch_size); }},
        {"total_iterations", "number of SGD steps",
         [](Config& c, const std::string& v) { c.training.total_iterations = parse_number<std::int64_t>(v); },
         [](const Config& c) { return std::to_string(c.training.total_iterations); }},
        {"lr_initial", "initial learning rate",
         [](Config& c, const std::string& v) { c.training.lr_initial = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.lr_initial); }},
        {"lr_milestones", "iterations at which the learning rate is divided",
         [](Config& c, const std::string& v) { c.training.lr_milestones = parse_list<std::int64_t>(v); },
         [](const Config& c) { return format_list(c.training.lr_milestones); }},
        {"lr_decay_factor", "divisor applied at each milestone",
         [](Config& c, const std::string& v) { c.training.lr_decay_factor = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.lr_decay_factor); }},
        {"momentum", "SGD momentum",
         [](Config& c, const std::string& v) { c.training.momentum = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.momentum); }},
        {"weight_decay", "L2 weight decay on all trainable parameters",
         [](Config& c, const std::string& v) { c.training.weight_decay = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.weight_decay); }},
        {"lambda_base", "KD weight before the switch (and throughout for LG)",
         [](Config& c, const std::string& v) { c.training.lambda_base = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.lambda_base); }},
        {"lambda_high", "KD weight after the switch (HG only)",
         [](Config& c, const std::string& v) { c.training.lambda_high = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.lambda_high); }},
        {"lambda_switch_iteration", "first iteration using lambda_high (HG only; 'none' otherwise)",
         [](Config& c, const std::string& v) {
             c.training.lambda_switch_iteration =
                 is_none(v) ? std::nullopt : std::optional<std::int64_t>(parse_number<std::int64_t>(v));
         },
         [](const Config& c) {
             return c.training.lambda_switch_iteration ? std::to_string(*c.training.lambda_switch_iteration)
                                                       : std::string("none");
         }},
        {"p_mask", "probability of masking a student input",
         [](Config& c, const std::string& v) { c.training.p_mask = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.training.p_mask); }},
        {"paradigm", "HG, LG or NO_KD",
         [](Config& c, const std::string& v) { c.training.paradigm = parse_paradigm(v); },
         [](const Config& c) { return to_string(c.training.paradigm); }},
        {"seed", "root seed for every random stream",
         [](Config& c, const std::string& v) { c.training.seed = parse_number<std::int64_t>(v); },
         [](const Config& c) { return std::to_string(c.training.seed); }},
        {"checkpoint_interval", "iterations between checkpoints (0 = every 10% of the run)",
         [](Config& c, const std::string& v) { c.training.checkpoint_interval = parse_number<std::int64_t>(v); },
         [](const Config& c) { return std::to_string(c.training.checkpoint_interval); }},
        {"init_from_teacher", "start the student as a copy of the teacher",
         [](Config& c, const std::string& v) { c.training.init_from_teacher = parse_bool(v); },
         [](const Config& c) { return std::string(c.training.init_from_teacher ? "true" : "false"); }},
        {"scale", "margin head scale s",
         [](Config& c, const std::string& v) { c.head.scale = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.head.scale); }},
        {"margin", "mean angular margin m",
         [](Config& c, const std::string& v) { c.head.margin = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.head.margin); }},
        {"sigma", "standard deviation of the angular margin",
         [](Config& c, const std::string& v) { c.head.sigma = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.head.sigma); }},
        {"num_classes", "number of identities ('auto' = from the dataset)",
         [](Config& c, const std::string& v) {
             c.head.num_classes = is_none(v) ? std::nullopt : std::optional<int>(parse_number<int>(v));
         },
         [](const Config& c) {
             return c.head.num_classes ? std::to_string(*c.head.num_classes) : std::string("auto");
         }},
        {"embedding_dim", "embedding dimension D",
         [](Config& c, const std::string& v) { c.head.embedding_dim = parse_number<int>(v); },
         [](const Config& c) { return std::to_string(c.head.embedding_dim); }},
        {"backbone_input_pool", "average-pool factor applied to the 112x112 input",
         [](Config& c, const std::string& v) { c.backbone.input_pool = parse_number<int>(v); },
         [](const Config& c) { return std::to_string(c.backbone.input_pool); }},
        {"backbone_channels", "output channels of each stride-2 conv stage",
         [](Config& c, const std::string& v) { c.backbone.channels = parse_list<int>(v); },
         [](const Config& c) { return format_list(c.backbone.channels); }},
        {"mask_jitter_px", "max per-vertex displacement of training masks",
         [](Config& c, const std::string& v) { c.mask.jitter_px = parse_number<double>(v); },
         [](const Config& c) { return format_double(c.mask.jitter_px); }},
        {"workers", "compute threads for forward/backward passes",
         [](Config& c, const std::string& v) { c.workers = parse_number<int>(v); },
         [](const Config& c) { return std::to_string(c.workers); }},
    };
    return specs;
}

}  // namespace

std::vector<ConfigKeyInfo> config_keys() {
    const Config defaults;
    std::vector<ConfigKeyInfo> out;
    for (const auto& spec : key_specs()) {
        out.push_back({spec.key, spec.get(defaults), spec.description});
    }
    return out;
}

Config parse_config(std::string_view text) {
    Config config;
    std::map<std::string, int> seen;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const auto eq = content.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(content).substr(0, eq));
        const std::string value = trim(std::string_view(content).substr(eq + 1));
        const auto& specs = key_specs();
        const auto it = std::find_if(specs.begin(), specs.end(), [&](const KeySpec& s) { return key == s.key; });
        if (it == specs.end()) {
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
        if (seen.count(key)) {
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        seen[key] = line_no;
        try {
            it->set(config, value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const std::exception& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": bad value for '" + key + "': " + e.what());
        }
    }
    if (!seen.count("lambda_switch_iteration") && config.training.paradigm != Paradigm::HG) {
        config.training.lambda_switch_iteration.reset();
    }
    validate(config);
    return config;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str());
}

std::string serialize_config(const Config& config) {
    std::string out;
    for (const auto& spec : key_specs()) {
        out += spec.key;
        out += " = ";
        out += spec.get(config);
        out += '\n';
    }
    return out;
}

void validate(const Config& config) {
    const auto& t = config.training;
    auto fail = [](const std::string& msg) { throw ValidationError(msg); };
    if (t.batch_size <= 0) fail("batch_size must be positive");
    if (t.total_iterations <= 0) fail("total_iterations must be positive");
    if (!(t.lr_initial > 0.0)) fail("lr_initial must be positive");
    for (std::size_t i = 1; i < t.lr_milestones.size(); ++i) {
        if (t.lr_milestones[i] <= t.lr_milestones[i - 1]) fail("lr_milestones not ascending");
    }
    for (auto m : t.lr_milestones) {
        if (m <= 0 || m >= t.total_iterations) fail("lr_milestones must lie in (0, total_iterations)");
    }
    if (!(t.lr_decay_factor > 0.0)) fail("lr_decay_factor must be positive");
    if (!(t.momentum >= 0.0 && t.momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(t.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(t.lambda_base >= 0.0)) fail("lambda_base must be non-negative");
    if (!(t.lambda_high >= 0.0)) fail("lambda_high must be non-negative");
    if (t.lambda_switch_iteration) {
        if (t.paradigm != Paradigm::HG) {
            fail("lambda_switch_iteration is only meaningful for paradigm HG (got " + to_string(t.paradigm) + ")");
        }
        if (*t.lambda_switch_iteration <= 0 || *t.lambda_switch_iteration >= t.total_iterations) {
            fail("lambda_switch_iteration must lie in (0, total_iterations)");
        }
    }
    if (!(t.p_mask >= 0.0 && t.p_mask <= 1.0)) fail("p_mask must lie in [0, 1]");
    if (t.checkpoint_interval < 0) fail("checkpoint_interval must be non-negative");

    const auto& h = config.head;
    if (!(h.scale > 0.0)) fail("scale must be positive");
    if (!(h.sigma >= 0.0)) fail("sigma must be non-negative");
    if (!std::isfinite(h.margin)) fail("margin must be finite");
    if (h.num_classes && *h.num_classes < 2) fail("num_classes must be at least 2");
    if (h.embedding_dim <= 0) fail("embedding_dim must be positive");

    const auto& b = config.backbone;
    if (b.input_pool < 1 || b.input_pool > kFaceSize) fail("backbone_input_pool must lie in [1, 112]");
    if (b.channels.empty()) fail("backbone_channels must not be empty");
    for (int c : b.channels) {
        if (c <= 0) fail("backbone_channels entries must be positive");
    }
    if (!(config.mask.jitter_px >= 0.0)) fail("mask_jitter_px must be non-negative");
    if (config.workers < 1) fail("workers must be at least 1");
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h) {
    for (std::byte b : bytes) {
        h ^= static_cast<std::uint64_t>(b);
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t config_hash(const Config& config) { return fnv1a(serialize_config(config)); }

Rng make_rng(std::int64_t seed, std::string_view stream_label, std::uint64_t worker_index) {
    const auto s = static_cast<std::uint64_t>(seed);
    const std::uint64_t label = fnv1a(stream_label);
    std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                      static_cast<std::uint32_t>(label), static_cast<std::uint32_t>(label >> 32),
                      static_cast<std::uint32_t>(worker_index), static_cast<std::uint32_t>(worker_index >> 32)};
    return Rng(seq);
}

}  // namespace maskinv
