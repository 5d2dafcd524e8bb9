#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace maskinv {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Base class for every error raised by the toolkit. `category()` is a short
/// machine-parsable tag ("config", "validation", "contract", ...) that the CLI
/// prints verbatim.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}
    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define MASKINV_DEFINE_ERROR(Name, tag)                                  \
    class Name : public Error {                                          \
    public:                                                              \
        explicit Name(const std::string& what) : Error(tag, what) {}     \
    };

MASKINV_DEFINE_ERROR(ConfigError, "config")
MASKINV_DEFINE_ERROR(ValidationError, "validation")
MASKINV_DEFINE_ERROR(ContractError, "contract")
MASKINV_DEFINE_ERROR(IndexError, "index")
MASKINV_DEFINE_ERROR(GeometryError, "geometry")
MASKINV_DEFINE_ERROR(IngestionError, "ingestion")
MASKINV_DEFINE_ERROR(ParseError, "parse")
MASKINV_DEFINE_ERROR(ProtocolError, "protocol")
MASKINV_DEFINE_ERROR(MetricError, "metric")
MASKINV_DEFINE_ERROR(ScoringError, "scoring")
MASKINV_DEFINE_ERROR(TrainingError, "training")
MASKINV_DEFINE_ERROR(CheckpointError, "checkpoint")

#undef MASKINV_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Face images
// ---------------------------------------------------------------------------

inline constexpr int kFaceSize = 112;
inline constexpr int kFaceChannels = 3;
inline constexpr std::size_t kFacePixelCount =
    static_cast<std::size_t>(kFaceSize) * kFaceSize * kFaceChannels;

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point2&, const Point2&) = default;
};

enum class Landmark : std::size_t {
    LeftEye = 0,
    RightEye = 1,
    NoseTip = 2,
    LeftMouth = 3,
    RightMouth = 4,
};

/// Five alignment points, ordered as in `Landmark`.
struct Landmarks {
    std::array<Point2, 5> points{};

    const Point2& operator[](Landmark l) const { return points[static_cast<std::size_t>(l)]; }
    Point2& operator[](Landmark l) { return points[static_cast<std::size_t>(l)]; }
    friend bool operator==(const Landmarks&, const Landmarks&) = default;
};

/// Canonical landmark positions of a 112x112 aligned crop.
Landmarks reference_landmarks();

/// Throws ContractError unless all points lie in [0, 112) and the nose tip is
/// strictly below both eyes.
void validate_landmarks(const Landmarks& landmarks);

/// Aligned 112x112x3 face crop. Pixels are stored HWC, row-major, in [-1, 1].
struct FaceImage {
    std::vector<float> pixels = std::vector<float>(kFacePixelCount, 0.0F);
    Landmarks landmarks{};
    std::string source_id;
    std::optional<int> identity_label;

    static constexpr std::size_t offset(int y, int x, int c) {
        return (static_cast<std::size_t>(y) * kFaceSize + static_cast<std::size_t>(x)) * kFaceChannels +
               static_cast<std::size_t>(c);
    }
    float at(int y, int x, int c) const { return pixels[offset(y, x, c)]; }
    float& at(int y, int x, int c) { return pixels[offset(y, x, c)]; }
};

/// Throws ContractError if any FaceImage invariant is violated.
void validate_face(const FaceImage& image);

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

inline constexpr double kUnitNormTolerance = 1e-4;

struct Embedding {
    std::vector<double> values;
    std::size_t dim() const { return values.size(); }
};

/// L2-normalizes a raw feature vector. Throws ContractError on a zero vector.
Embedding normalize(std::span<const double> features);

double l2_norm(std::span<const double> v);

/// Throws ContractError when |‖v‖ - 1| exceeds `tolerance`.
void require_unit_norm(std::span<const double> v, std::string_view what,
                       double tolerance = kUnitNormTolerance);

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class Paradigm { HG, LG, NO_KD };

std::string to_string(Paradigm p);
Paradigm parse_paradigm(std::string_view text);

struct TrainingConfig {
    int batch_size = 512;
    std::int64_t total_iterations = 295000;
    double lr_initial = 0.1;
    std::vector<std::int64_t> lr_milestones{80000, 140000, 210000};
    double lr_decay_factor = 10.0;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double lambda_base = 100.0;
    double lambda_high = 3000.0;
    std::optional<std::int64_t> lambda_switch_iteration = 227000;
    double p_mask = 0.5;
    Paradigm paradigm = Paradigm::HG;
    std::int64_t seed = 0;
    // 0 selects the default cadence of 10% of total_iterations.
    std::int64_t checkpoint_interval = 0;
    bool init_from_teacher = false;

    friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct MarginHeadConfig {
    double scale = 64.0;
    double margin = 0.5;
    double sigma = 0.5;
    // Absent means "take it from the training dataset".
    std::optional<int> num_classes;
    int embedding_dim = 512;

    friend bool operator==(const MarginHeadConfig&, const MarginHeadConfig&) = default;
};

/// Shape of the default convolutional backbone.
struct BackboneConfig {
    int input_pool = 4;
    std::vector<int> channels{16, 32, 64};

    friend bool operator==(const BackboneConfig&, const BackboneConfig&) = default;
};

struct MaskConfig {
    double jitter_px = 2.0;

    friend bool operator==(const MaskConfig&, const MaskConfig&) = default;
};

/// Everything one config file carries.
struct Config {
    TrainingConfig training;
    MarginHeadConfig head;
    BackboneConfig backbone;
    MaskConfig mask;
    int workers = 1;

    friend bool operator==(const Config&, const Config&) = default;
};

/// Parses `key = value` text. Absent keys keep their defaults; an absent
/// `lambda_switch_iteration` is filled with 227000 only for the HG paradigm.
Config parse_config(std::string_view text);
Config load_config(const std::filesystem::path& path);

/// Emits every key so that parse_config(serialize_config(c)) == c.
std::string serialize_config(const Config& config);

/// Throws ValidationError naming the offending field.
void validate(const Config& config);

std::uint64_t config_hash(const Config& config);

struct ConfigKeyInfo {
    std::string key;
    std::string default_value;
    std::string description;
};

/// Every recognised key with its default, in file order.
std::vector<ConfigKeyInfo> config_keys();

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

using Rng = std::mt19937_64;

/// Deterministic stream for (seed, label, worker). Streams with different
/// labels or workers are seeded independently.
Rng make_rng(std::int64_t seed, std::string_view stream_label, std::uint64_t worker_index = 0);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace maskinv
