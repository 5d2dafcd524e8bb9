#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "maskinv/core.hpp"

namespace maskinv {

/// Decoded 8-bit image, interleaved channels.
struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> data;
};

RawImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RawImage& image);

/// Sidecar path for an image: same stem, `.landmarks` extension.
std::filesystem::path landmark_sidecar(const std::filesystem::path& image_path);

/// Five lines `x y`, in Landmark order.
Landmarks read_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const Landmarks& landmarks);

/// Maps channel value p to p/127.5 - 1 and validates the result.
FaceImage preprocess(const RawImage& raw, const Landmarks& landmarks, std::string source_id = {},
                     std::optional<int> identity_label = std::nullopt);

/// Inverse of preprocess on the 8-bit lattice.
RawImage to_raw(const FaceImage& image);

/// Reads `<image>.png` and its sidecar and preprocesses them.
FaceImage load_face(const std::filesystem::path& image_path, std::optional<int> identity_label = std::nullopt);

/// Writes `<image>.png` plus its sidecar.
void save_face(const std::filesystem::path& image_path, const FaceImage& image);

// ---------------------------------------------------------------------------
// Identity datasets
// ---------------------------------------------------------------------------

struct DatasetRecord {
    std::filesystem::path image_path;
    int identity_label = 0;
    Landmarks landmarks{};
};

class IdentityDataset {
public:
    IdentityDataset() = default;

    /// Builds a dataset around images already in memory. Every image must
    /// carry an identity label; labels must form [0, c).
    static IdentityDataset from_faces(std::vector<FaceImage> faces);

    const std::vector<DatasetRecord>& records() const { return records_; }
    int num_identities() const { return num_identities_; }
    std::size_t size() const { return records_.size(); }
    /// Record positions of each identity.
    const std::vector<std::vector<std::size_t>>& index() const { return index_; }
    const std::vector<std::string>& identity_names() const { return names_; }

    /// Image i, from memory when preloaded, else decoded from disk.
    FaceImage face(std::size_t i) const;
    void preload();
    bool preloaded() const { return !faces_.empty(); }

    friend IdentityDataset load_dataset(const std::filesystem::path& root);

private:
    void build_index();

    std::vector<DatasetRecord> records_;
    std::vector<std::string> names_;
    std::vector<std::vector<std::size_t>> index_;
    std::vector<FaceImage> faces_;
    int num_identities_ = 0;
};

/// Layout: root/<identity>/<image>.png with a `<image>.landmarks` sidecar.
/// Identities are labelled in sorted directory-name order, images within an
/// identity in sorted file-name order.
IdentityDataset load_dataset(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Verification protocols
// ---------------------------------------------------------------------------

enum class Scenario { NoMask, MaskedVsNonMasked, MaskedVsMasked };

/// CLI spellings: none, masked-vs-nonmasked, both-masked.
Scenario parse_scenario(std::string_view text);
std::string to_string(Scenario s);

struct ProtocolPair {
    std::string reference;
    std::string probe;
    bool genuine = false;
    bool mask_reference = false;
    bool mask_probe = false;
};

struct PairProtocol {
    std::vector<ProtocolPair> pairs;
    Scenario scenario = Scenario::NoMask;
    /// k+1 offsets into `pairs`, first 0 and last pairs.size(), when folds are defined.
    std::optional<std::vector<std::size_t>> fold_boundaries;

    std::size_t num_folds() const { return fold_boundaries ? fold_boundaries->size() - 1 : 0; }
};

/// Sets the per-side mask flags for a scenario. The probe (second) side is
/// the masked one in MaskedVsNonMasked.
void stamp_scenario(PairProtocol& protocol, Scenario scenario);

/// Splits into k equal contiguous folds. Throws ProtocolError when the pair
/// count is not divisible by k.
void assign_folds(PairProtocol& protocol, int k_folds);

/// Parses a pair list. Accepted lines:
///   name i j            genuine pair in the LFW convention
///   name1 i name2 j     impostor pair in the LFW convention
///   pathA pathB 0|1     generic pair (1 = genuine)
/// An optional leading `folds pairs_per_fold` header line and `#` comments
/// are skipped. LFW names resolve to `<image_root>/<name>/<name>_<%04d>.png`;
/// generic paths resolve against `image_root` unless absolute. `image_root`
/// defaults to the pair file's directory.
PairProtocol build_protocol(const std::filesystem::path& pair_file, Scenario scenario,
                            std::optional<int> k_folds = std::nullopt,
                            std::optional<std::filesystem::path> image_root = std::nullopt);

PairProtocol parse_protocol(std::string_view text, Scenario scenario, std::optional<int> k_folds,
                            const std::filesystem::path& image_root);

/// Writes the generic three-column form.
void write_pair_file(const std::filesystem::path& path, const PairProtocol& protocol);

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Shuffled mini-batches without replacement. Epoch e uses the permutation
/// drawn from the ("shuffle", e) stream, so the batch of any iteration can be
/// recomputed without replaying earlier ones.
class BatchStream {
public:
    BatchStream(std::size_t dataset_size, int batch_size, std::int64_t seed);

    std::size_t batches_per_epoch() const { return batches_per_epoch_; }
    std::vector<std::size_t> batch_at(std::int64_t iteration);
    std::vector<std::size_t> next() { return batch_at(cursor_++); }
    void seek(std::int64_t iteration) { cursor_ = iteration; }

private:
    const std::vector<std::size_t>& permutation(std::int64_t epoch);

    std::size_t size_;
    std::size_t batch_size_;
    std::size_t batches_per_epoch_;
    std::int64_t seed_;
    std::int64_t cursor_ = 0;
    std::int64_t cached_epoch_ = -1;
    std::vector<std::size_t> cached_;
};

BatchStream training_batches(const IdentityDataset& dataset, const TrainingConfig& config);

// ---------------------------------------------------------------------------
// Procedural toy faces
// ---------------------------------------------------------------------------

struct ToySpec {
    int num_identities = 20;
    int images_per_identity = 20;
    /// Identity parameters come from ("toy-identity", first_identity + i), so
    /// disjoint ranges give disjoint populations under one seed.
    int first_identity = 0;
    std::int64_t seed = 0;
};

/// Each identity is a fixed layout of colored regions (hair, brows, eyes,
/// skin, mouth, chin); each image adds a global shift, a brightness change
/// and pixel noise. Labels are 0..num_identities-1.
std::vector<FaceImage> generate_toy_faces(const ToySpec& spec);

/// Writes generate_toy_faces(spec) in the dataset layout (`id_XXXX/img_XXXX.png`).
void write_toy_dataset(const std::filesystem::path& root, const ToySpec& spec);

/// Balanced verification pairs over a labelled face list: `per_class` genuine
/// and `per_class` impostor pairs, interleaved so contiguous folds stay
/// balanced. Paths are the faces' source ids.
PairProtocol make_toy_protocol(const std::vector<FaceImage>& faces, int per_class, Scenario scenario,
                               std::int64_t seed, std::optional<int> k_folds = std::nullopt);

}  // namespace maskinv
