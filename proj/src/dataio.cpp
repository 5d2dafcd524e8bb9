#include "maskinv/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <sstream>

namespace maskinv {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

RawImage read_png(const fs::path& path) {
    FilePtr file(std::fopen(path.c_str(), "rb"));
    if (!file) throw IngestionError("cannot open image " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("libpng initialisation failed");
    }
    RawImage out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IngestionError("corrupt PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);

    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    const std::size_t stride = png_get_rowbytes(png, info);
    out.data.resize(stride * static_cast<std::size_t>(out.height));
    rows.resize(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.data.data() + stride * y;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const fs::path& path, const RawImage& image) {
    if (image.channels != 3 || image.data.size() != static_cast<std::size_t>(image.width) * image.height * 3) {
        throw ContractError("write_png expects an 8-bit RGB raster");
    }
    FilePtr file(std::fopen(path.c_str(), "wb"));
    if (!file) throw IngestionError("cannot write image " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("libpng initialisation failed");
    }
    std::vector<png_const_bytep> rows(static_cast<std::size_t>(image.height));
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IngestionError("failed writing PNG " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * 3;
    for (int y = 0; y < image.height; ++y) rows[static_cast<std::size_t>(y)] = image.data.data() + stride * y;
    png_write_rows(png, const_cast<png_bytepp>(rows.data()), static_cast<png_uint_32>(image.height));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Landmark sidecars and preprocessing
// ---------------------------------------------------------------------------

fs::path landmark_sidecar(const fs::path& image_path) {
    fs::path p = image_path;
    p.replace_extension(".landmarks");
    return p;
}

Landmarks read_landmarks(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IngestionError("missing landmark sidecar " + path.string());
    Landmarks lm;
    std::string line;
    std::size_t n = 0;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (n == lm.points.size()) throw IngestionError(path.string() + ": more than 5 landmark lines");
        std::istringstream ls(line);
        double x = 0.0;
        double y = 0.0;
        std::string rest;
        if (!(ls >> x >> y) || (ls >> rest)) {
            throw IngestionError(path.string() + ":" + std::to_string(line_no) + ": expected 'x y'");
        }
        lm.points[n++] = {x, y};
    }
    if (n != lm.points.size()) throw IngestionError(path.string() + ": expected 5 landmark lines");
    return lm;
}

void write_landmarks(const fs::path& path, const Landmarks& landmarks) {
    std::ofstream out(path);
    if (!out) throw IngestionError("cannot write " + path.string());
    out.precision(17);
    for (const auto& p : landmarks.points) out << p.x << ' ' << p.y << '\n';
}

FaceImage preprocess(const RawImage& raw, const Landmarks& landmarks, std::string source_id,
                     std::optional<int> identity_label) {
    if (raw.width != kFaceSize || raw.height != kFaceSize || raw.channels != kFaceChannels ||
        raw.data.size() != kFacePixelCount) {
        throw ContractError("expected a 112x112x3 aligned crop, got " + std::to_string(raw.width) + "x" +
                            std::to_string(raw.height) + "x" + std::to_string(raw.channels) +
                            (source_id.empty() ? "" : " (" + source_id + ")"));
    }
    validate_landmarks(landmarks);
    FaceImage face;
    face.landmarks = landmarks;
    face.source_id = std::move(source_id);
    face.identity_label = identity_label;
    for (std::size_t i = 0; i < kFacePixelCount; ++i) {
        face.pixels[i] = static_cast<float>(raw.data[i] / 127.5 - 1.0);
    }
    return face;
}

RawImage to_raw(const FaceImage& image) {
    RawImage raw{kFaceSize, kFaceSize, kFaceChannels, std::vector<std::uint8_t>(kFacePixelCount)};
    for (std::size_t i = 0; i < kFacePixelCount; ++i) {
        const double v = std::round((static_cast<double>(image.pixels[i]) + 1.0) * 127.5);
        raw.data[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
    }
    return raw;
}

FaceImage load_face(const fs::path& image_path, std::optional<int> identity_label) {
    const Landmarks lm = read_landmarks(landmark_sidecar(image_path));
    try {
        return preprocess(read_png(image_path), lm, image_path.string(), identity_label);
    } catch (const ContractError& e) {
        throw IngestionError(image_path.string() + ": " + e.what());
    }
}

void save_face(const fs::path& image_path, const FaceImage& image) {
    if (image_path.has_parent_path()) fs::create_directories(image_path.parent_path());
    write_png(image_path, to_raw(image));
    write_landmarks(landmark_sidecar(image_path), image.landmarks);
}

// ---------------------------------------------------------------------------
// IdentityDataset
// ---------------------------------------------------------------------------

void IdentityDataset::build_index() {
    index_.assign(static_cast<std::size_t>(num_identities_), {});
    for (std::size_t i = 0; i < records_.size(); ++i) {
        const int label = records_[i].identity_label;
        if (label < 0 || label >= num_identities_) throw IngestionError("identity labels must form [0, c)");
        index_[static_cast<std::size_t>(label)].push_back(i);
    }
    for (std::size_t c = 0; c < index_.size(); ++c) {
        if (index_[c].empty()) throw IngestionError("identity " + std::to_string(c) + " has no images");
    }
}

IdentityDataset IdentityDataset::from_faces(std::vector<FaceImage> faces) {
    IdentityDataset ds;
    int max_label = -1;
    for (const auto& f : faces) {
        if (!f.identity_label) throw IngestionError("face " + f.source_id + " has no identity label");
        max_label = std::max(max_label, *f.identity_label);
        ds.records_.push_back({f.source_id, *f.identity_label, f.landmarks});
    }
    ds.num_identities_ = max_label + 1;
    ds.names_.resize(static_cast<std::size_t>(ds.num_identities_));
    for (int c = 0; c < ds.num_identities_; ++c) ds.names_[static_cast<std::size_t>(c)] = std::to_string(c);
    ds.faces_ = std::move(faces);
    ds.build_index();
    return ds;
}

FaceImage IdentityDataset::face(std::size_t i) const {
    if (i >= records_.size()) throw IndexError("record " + std::to_string(i) + " out of range");
    if (!faces_.empty()) return faces_[i];
    return load_face(records_[i].image_path, records_[i].identity_label);
}

void IdentityDataset::preload() {
    if (!faces_.empty()) return;
    std::vector<FaceImage> faces;
    faces.reserve(records_.size());
    for (const auto& r : records_) faces.push_back(load_face(r.image_path, r.identity_label));
    faces_ = std::move(faces);
}

IdentityDataset load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw IngestionError("dataset root " + root.string() + " is not a directory");
    std::vector<fs::path> identity_dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) identity_dirs.push_back(entry.path());
    }
    std::sort(identity_dirs.begin(), identity_dirs.end());
    if (identity_dirs.empty()) throw IngestionError("dataset root " + root.string() + " has no identities");

    IdentityDataset ds;
    for (std::size_t label = 0; label < identity_dirs.size(); ++label) {
        std::vector<fs::path> images;
        for (const auto& entry : fs::directory_iterator(identity_dirs[label])) {
            if (entry.is_regular_file() && entry.path().extension() == ".png") images.push_back(entry.path());
        }
        std::sort(images.begin(), images.end());
        if (images.empty()) throw IngestionError("identity directory " + identity_dirs[label].string() + " is empty");
        for (const auto& img : images) {
            const fs::path sidecar = landmark_sidecar(img);
            if (!fs::exists(sidecar)) throw IngestionError("missing landmark sidecar " + sidecar.string());
            const Landmarks lm = read_landmarks(sidecar);
            try {
                validate_landmarks(lm);
            } catch (const ContractError& e) {
                throw IngestionError(sidecar.string() + ": " + e.what());
            }
            ds.records_.push_back({img, static_cast<int>(label), lm});
        }
        ds.names_.push_back(identity_dirs[label].filename().string());
    }
    ds.num_identities_ = static_cast<int>(identity_dirs.size());
    ds.build_index();
    return ds;
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

Scenario parse_scenario(std::string_view text) {
    if (text == "none" || text == "no-mask") return Scenario::NoMask;
    if (text == "masked-vs-nonmasked") return Scenario::MaskedVsNonMasked;
    if (text == "both-masked" || text == "masked-vs-masked") return Scenario::MaskedVsMasked;
    throw ConfigError("unknown scenario '" + std::string(text) +
                      "' (expected none, masked-vs-nonmasked or both-masked)");
}

std::string to_string(Scenario s) {
    switch (s) {
        case Scenario::NoMask: return "none";
        case Scenario::MaskedVsNonMasked: return "masked-vs-nonmasked";
        case Scenario::MaskedVsMasked: return "both-masked";
    }
    return "?";
}

void stamp_scenario(PairProtocol& protocol, Scenario scenario) {
    protocol.scenario = scenario;
    for (auto& p : protocol.pairs) {
        p.mask_reference = scenario == Scenario::MaskedVsMasked;
        p.mask_probe = scenario != Scenario::NoMask;
    }
}

void assign_folds(PairProtocol& protocol, int k_folds) {
    if (k_folds < 1) throw ProtocolError("fold count must be positive");
    const std::size_t n = protocol.pairs.size();
    const auto k = static_cast<std::size_t>(k_folds);
    if (n == 0 || n % k != 0) {
        throw ProtocolError(std::to_string(n) + " pairs cannot be split into " + std::to_string(k) + " equal folds");
    }
    std::vector<std::size_t> bounds(k + 1);
    for (std::size_t f = 0; f <= k; ++f) bounds[f] = f * (n / k);
    protocol.fold_boundaries = std::move(bounds);
}

namespace {

bool is_integer(const std::string& s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

std::string lfw_path(const fs::path& root, const std::string& name, const std::string& index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "_%04d.png", std::stoi(index));
    return (root / name / (name + buf)).string();
}

std::string resolve(const fs::path& root, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path.string() : (root / path).string();
}

}  // namespace

PairProtocol parse_protocol(std::string_view text, Scenario scenario, std::optional<int> k_folds,
                            const fs::path& image_root) {
    PairProtocol protocol;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    bool first_content = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        const bool header = first_content && tok.size() == 2 && is_integer(tok[0]) && is_integer(tok[1]);
        first_content = false;
        if (header) continue;

        ProtocolPair pair;
        if (tok.size() == 3 && is_integer(tok[1]) && is_integer(tok[2])) {
            pair = {lfw_path(image_root, tok[0], tok[1]), lfw_path(image_root, tok[0], tok[2]), true};
        } else if (tok.size() == 4 && is_integer(tok[1]) && is_integer(tok[3])) {
            pair = {lfw_path(image_root, tok[0], tok[1]), lfw_path(image_root, tok[2], tok[3]), false};
        } else if (tok.size() == 3 && (tok[2] == "0" || tok[2] == "1")) {
            pair = {resolve(image_root, tok[0]), resolve(image_root, tok[1]), tok[2] == "1"};
        } else {
            throw ParseError("pair file line " + std::to_string(line_no) + ": unrecognised pair '" + line + "'");
        }
        protocol.pairs.push_back(std::move(pair));
    }
    stamp_scenario(protocol, scenario);
    if (k_folds) assign_folds(protocol, *k_folds);
    return protocol;
}

PairProtocol build_protocol(const fs::path& pair_file, Scenario scenario, std::optional<int> k_folds,
                            std::optional<fs::path> image_root) {
    std::ifstream in(pair_file);
    if (!in) throw ProtocolError("cannot open pair file " + pair_file.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_protocol(buffer.str(), scenario, k_folds, image_root.value_or(pair_file.parent_path()));
}

void write_pair_file(const fs::path& path, const PairProtocol& protocol) {
    std::ofstream out(path);
    if (!out) throw ProtocolError("cannot write pair file " + path.string());
    for (const auto& p : protocol.pairs) out << p.reference << ' ' << p.probe << ' ' << (p.genuine ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------------------
// BatchStream
// ---------------------------------------------------------------------------

BatchStream::BatchStream(std::size_t dataset_size, int batch_size, std::int64_t seed)
    : size_(dataset_size), batch_size_(static_cast<std::size_t>(batch_size)), seed_(seed) {
    if (dataset_size == 0) throw ContractError("cannot batch an empty dataset");
    if (batch_size <= 0) throw ContractError("batch_size must be positive");
    batches_per_epoch_ = (size_ + batch_size_ - 1) / batch_size_;
}

const std::vector<std::size_t>& BatchStream::permutation(std::int64_t epoch) {
    if (epoch != cached_epoch_) {
        cached_.resize(size_);
        std::iota(cached_.begin(), cached_.end(), std::size_t{0});
        auto rng = make_rng(seed_, "shuffle", static_cast<std::uint64_t>(epoch));
        std::shuffle(cached_.begin(), cached_.end(), rng);
        cached_epoch_ = epoch;
    }
    return cached_;
}

std::vector<std::size_t> BatchStream::batch_at(std::int64_t iteration) {
    if (iteration < 0) throw ContractError("negative iteration");
    const auto per_epoch = static_cast<std::int64_t>(batches_per_epoch_);
    const auto& perm = permutation(iteration / per_epoch);
    const auto b = static_cast<std::size_t>(iteration % per_epoch);
    const std::size_t begin = b * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, size_);
    return {perm.begin() + static_cast<std::ptrdiff_t>(begin), perm.begin() + static_cast<std::ptrdiff_t>(end)};
}

BatchStream training_batches(const IdentityDataset& dataset, const TrainingConfig& config) {
    return BatchStream(dataset.size(), config.batch_size, config.seed);
}

// ---------------------------------------------------------------------------
// Toy faces
// ---------------------------------------------------------------------------

namespace {

using Color = std::array<double, 3>;

struct ToyIdentity {
    Color background, skin, hair, brow, eye, nose, mouth, chin, cheek;
    double hairline = 30.0;
    double brow_thickness = 3.0;
    double eye_radius = 4.0;
    double mouth_half_width = 12.0;
    double mouth_half_height = 4.0;
    double chin_radius = 10.0;
    double cheek_radius = 6.0;
    int cheek_side = 1;
};

Color random_color(Rng& rng) {
    std::uniform_real_distribution<double> u(15.0, 240.0);
    return {u(rng), u(rng), u(rng)};
}

ToyIdentity make_identity(std::int64_t seed, int identity) {
    auto rng = make_rng(seed, "toy-identity", static_cast<std::uint64_t>(identity));
    auto u = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    ToyIdentity id;
    id.background = random_color(rng);
    id.skin = random_color(rng);
    id.hair = random_color(rng);
    id.brow = random_color(rng);
    id.eye = random_color(rng);
    id.nose = random_color(rng);
    id.mouth = random_color(rng);
    id.chin = random_color(rng);
    id.cheek = random_color(rng);
    id.hairline = u(22.0, 38.0);
    id.brow_thickness = u(2.0, 6.0);
    id.eye_radius = u(3.0, 6.5);
    id.mouth_half_width = u(9.0, 17.0);
    id.mouth_half_height = u(2.5, 6.0);
    id.chin_radius = u(7.0, 13.0);
    id.cheek_radius = u(4.0, 9.0);
    id.cheek_side = u(0.0, 1.0) < 0.5 ? -1 : 1;
    return id;
}

double sq(double v) { return v * v; }

FaceImage render_toy(const ToyIdentity& id, const std::string& source_id, int label, Rng& rng) {
    std::uniform_real_distribution<double> shift(-2.0, 2.0);
    std::uniform_real_distribution<double> gain_dist(0.85, 1.15);
    std::normal_distribution<double> noise(0.0, 6.0);
    const double dx = shift(rng);
    const double dy = shift(rng);
    const double gain = gain_dist(rng);

    Landmarks lm = reference_landmarks();
    for (auto& p : lm.points) {
        p.x += dx;
        p.y += dy;
    }
    const Point2 le = lm[Landmark::LeftEye];
    const Point2 re = lm[Landmark::RightEye];
    const Point2 nose = lm[Landmark::NoseTip];
    const Point2 mouth{0.5 * (lm[Landmark::LeftMouth].x + lm[Landmark::RightMouth].x),
                       0.5 * (lm[Landmark::LeftMouth].y + lm[Landmark::RightMouth].y)};
    const double cx = 56.0 + dx;
    const double cy = 62.0 + dy;

    RawImage raw{kFaceSize, kFaceSize, kFaceChannels, std::vector<std::uint8_t>(kFacePixelCount)};
    for (int y = 0; y < kFaceSize; ++y) {
        for (int x = 0; x < kFaceSize; ++x) {
            const double px = x + 0.5;
            const double py = y + 0.5;
            const Color* c = &id.background;
            const bool in_face = sq((px - cx) / 42.0) + sq((py - cy) / 54.0) <= 1.0;
            if (in_face) c = &id.skin;
            if ((in_face || py < cy) && py < id.hairline + dy && sq((px - cx) / 48.0) + sq((py - cy) / 60.0) <= 1.0) {
                c = &id.hair;
            }
            for (const Point2& eye : {le, re}) {
                const double brow_bottom = eye.y - 8.0;
                if (py <= brow_bottom && py >= brow_bottom - id.brow_thickness && std::abs(px - eye.x) <= 9.0) {
                    c = &id.brow;
                }
                if (sq(px - eye.x) + sq(py - eye.y) <= sq(id.eye_radius)) c = &id.eye;
            }
            if (sq(px - nose.x) + sq(py - nose.y) <= 16.0) c = &id.nose;
            const double cheek_x = nose.x + id.cheek_side * 24.0;
            if (sq(px - cheek_x) + sq(py - (nose.y + 8.0)) <= sq(id.cheek_radius)) c = &id.cheek;
            if (sq(px - mouth.x) + sq(py - (mouth.y + 16.0)) <= sq(id.chin_radius)) c = &id.chin;
            if (sq((px - mouth.x) / id.mouth_half_width) + sq((py - mouth.y) / id.mouth_half_height) <= 1.0) {
                c = &id.mouth;
            }
            for (int ch = 0; ch < kFaceChannels; ++ch) {
                const double v = (*c)[static_cast<std::size_t>(ch)] * gain + noise(rng);
                raw.data[FaceImage::offset(y, x, ch)] = static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
            }
        }
    }
    return preprocess(raw, lm, source_id, label);
}

}  // namespace

std::vector<FaceImage> generate_toy_faces(const ToySpec& spec) {
    if (spec.num_identities < 1 || spec.images_per_identity < 1) {
        throw ContractError("toy dataset needs at least one identity and one image per identity");
    }
    std::vector<FaceImage> faces;
    faces.reserve(static_cast<std::size_t>(spec.num_identities) * spec.images_per_identity);
    for (int i = 0; i < spec.num_identities; ++i) {
        const int identity = spec.first_identity + i;
        const ToyIdentity id = make_identity(spec.seed, identity);
        char dir[16];
        std::snprintf(dir, sizeof(dir), "id_%04d", identity);
        for (int j = 0; j < spec.images_per_identity; ++j) {
            char name[64];
            std::snprintf(name, sizeof(name), "%s/img_%04d.png", dir, j);
            auto rng = make_rng(spec.seed, std::string("toy-image:") + name);
            faces.push_back(render_toy(id, name, i, rng));
        }
    }
    return faces;
}

void write_toy_dataset(const fs::path& root, const ToySpec& spec) {
    for (const auto& face : generate_toy_faces(spec)) save_face(root / face.source_id, face);
}

PairProtocol make_toy_protocol(const std::vector<FaceImage>& faces, int per_class, Scenario scenario,
                               std::int64_t seed, std::optional<int> k_folds) {
    std::map<int, std::vector<std::size_t>> by_label;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        if (!faces[i].identity_label) throw ContractError("toy protocol needs labelled faces");
        by_label[*faces[i].identity_label].push_back(i);
    }
    std::vector<int> multi;
    std::vector<int> labels;
    for (const auto& [label, idx] : by_label) {
        labels.push_back(label);
        if (idx.size() >= 2) multi.push_back(label);
    }
    if (multi.empty() || labels.size() < 2) throw ProtocolError("toy protocol needs two identities with two images");

    auto rng = make_rng(seed, "toy-protocol");
    auto pick = [&rng](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    PairProtocol protocol;
    for (int k = 0; k < per_class; ++k) {
        const auto& same = by_label[multi[pick(multi.size())]];
        const std::size_t a = pick(same.size());
        std::size_t b = pick(same.size() - 1);
        if (b >= a) ++b;
        protocol.pairs.push_back({faces[same[a]].source_id, faces[same[b]].source_id, true});

        const std::size_t la = pick(labels.size());
        std::size_t lb = pick(labels.size() - 1);
        if (lb >= la) ++lb;
        const auto& ia = by_label[labels[la]];
        const auto& ib = by_label[labels[lb]];
        protocol.pairs.push_back({faces[ia[pick(ia.size())]].source_id, faces[ib[pick(ib.size())]].source_id, false});
    }
    stamp_scenario(protocol, scenario);
    if (k_folds) assign_folds(protocol, *k_folds);
    return protocol;
}

}  // namespace maskinv
