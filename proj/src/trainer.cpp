#include "maskinv/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace maskinv {

namespace fs = std::filesystem;

double lr_schedule(std::int64_t iteration, const TrainingConfig& config) {
    double lr = config.lr_initial;
    for (const auto milestone : config.lr_milestones) {
        if (iteration >= milestone) lr /= config.lr_decay_factor;
    }
    return lr;
}

double lambda_schedule(std::int64_t iteration, const TrainingConfig& config) {
    switch (config.paradigm) {
        case Paradigm::NO_KD: return 0.0;
        case Paradigm::LG: return config.lambda_base;
        case Paradigm::HG:
            if (!config.lambda_switch_iteration) {
                throw ConfigError("paradigm HG requires lambda_switch_iteration");
            }
            return iteration < *config.lambda_switch_iteration ? config.lambda_base : config.lambda_high;
    }
    return 0.0;
}

TrainState initial_state(const Config& config, int num_classes, const TeacherHandle* teacher) {
    TrainState state;
    if (config.training.init_from_teacher) {
        if (!teacher) throw ConfigError("init_from_teacher requires a teacher");
        if (teacher->backbone().embedding_dim() != config.head.embedding_dim) {
            throw ConfigError("teacher embedding dimension differs from embedding_dim");
        }
        state.student = teacher->backbone();
    } else {
        state.student = Backbone(config.backbone, config.head.embedding_dim, config.training.seed);
    }
    state.head = MarginHead::initialize(config.head, num_classes, config.training.seed);
    if (config.training.init_from_teacher && teacher && teacher->head() && teacher->head()->rows() == num_classes) {
        state.head.prototypes = *teacher->head();
    }
    for (const auto& p : state.student.params()) state.momentum.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    state.momentum.push_back(Matrix::Zero(state.head.prototypes.rows(), state.head.prototypes.cols()));
    return state;
}

Rng step_rng(std::int64_t seed, std::int64_t iteration) {
    return make_rng(seed, "step", static_cast<std::uint64_t>(iteration));
}

namespace {

void sgd_update(Matrix& param, Matrix& velocity, Matrix grad, double lr, const TrainingConfig& config) {
    grad += config.weight_decay * param;
    velocity = config.momentum * velocity + grad;
    param -= lr * velocity;
}

std::string describe(const LossBreakdown& b, std::int64_t iteration, double lr) {
    std::ostringstream os;
    os.precision(10);
    os << "non-finite loss at iteration " << iteration << ": l_arc=" << b.l_elastic_arc << " l_kd=" << b.l_kd
       << " lambda=" << b.lambda_effective << " l_total=" << b.l_total << " lr=" << lr;
    return os.str();
}

}  // namespace

void train_step(TrainState& state, const TeacherHandle* teacher, const std::vector<FaceImage>& batch,
                const MaskPolicy& policy, const Config& config, Rng& rng) {
    if (batch.empty()) throw ContractError("empty training batch");
    const std::int64_t it = state.iteration;
    const double lambda = lambda_schedule(it, config.training);
    if (lambda > 0.0 && !teacher) throw ContractError("a teacher is required when lambda > 0");

    std::vector<int> labels;
    labels.reserve(batch.size());
    std::vector<const FaceImage*> clean;
    clean.reserve(batch.size());
    for (const auto& img : batch) {
        validate_face(img);
        if (!img.identity_label) throw ContractError("training image " + img.source_id + " has no label");
        labels.push_back(*img.identity_label);
        clean.push_back(&img);
    }

    std::vector<FaceImage> student_inputs;
    student_inputs.reserve(batch.size());
    for (const auto& img : batch) student_inputs.push_back(maybe_mask(img, policy, rng).first);
    const auto margins = draw_elastic_margin(state.head.config, rng, static_cast<int>(batch.size()));

    std::vector<const FaceImage*> student_ptrs;
    student_ptrs.reserve(student_inputs.size());
    for (const auto& img : student_inputs) student_ptrs.push_back(&img);

    ForwardCache cache;
    const Matrix features = state.student.forward(student_ptrs, &cache, config.workers);
    if (!features.allFinite()) {
        throw TrainingError("non-finite student features at iteration " + std::to_string(it));
    }
    const Matrix embeddings = normalize_rows(features);
    const Matrix prototypes = normalize_rows(state.head.prototypes);
    const MarginHead normalized{prototypes, state.head.config};

    const ArcLossResult arc = elastic_arc_loss(embeddings, labels, normalized, margins);
    KdLossResult kd{0.0, Matrix::Zero(embeddings.rows(), embeddings.cols())};
    if (teacher) kd = kd_embedding_loss(embeddings, teacher->embed(clean, config.workers));

    const double lr = lr_schedule(it, config.training);
    const LossBreakdown losses = total_loss(arc.loss, kd.loss, lambda);
    if (!std::isfinite(losses.l_total) || !std::isfinite(losses.l_kd) || !std::isfinite(losses.l_elastic_arc)) {
        throw TrainingError(describe(losses, it, lr));
    }

    const Matrix grad_embeddings = arc.grad_embeddings + lambda * kd.grad_student;
    const Matrix grad_features = normalize_rows_backward(features, embeddings, grad_embeddings);
    std::vector<Matrix> grads = state.student.backward(cache, grad_features, config.workers);
    const Matrix grad_prototypes = normalize_rows_backward(state.head.prototypes, prototypes, arc.grad_prototypes);

    auto& params = state.student.params();
    for (std::size_t p = 0; p < params.size(); ++p) {
        sgd_update(params[p].value, state.momentum[p], std::move(grads[p]), lr, config.training);
    }
    sgd_update(state.head.prototypes, state.momentum.back(), grad_prototypes, lr, config.training);
    state.head.prototypes = normalize_rows(state.head.prototypes);

    state.log.push_back({it, losses, lr});
    ++state.iteration;
}

std::vector<std::int64_t> checkpoint_iterations(const TrainingConfig& config) {
    std::set<std::int64_t> its;
    const std::int64_t total = config.total_iterations;
    const std::int64_t interval =
        config.checkpoint_interval > 0 ? config.checkpoint_interval : std::max<std::int64_t>(1, total / 10);
    for (std::int64_t k = interval; k <= total; k += interval) its.insert(k);
    for (auto m : config.lr_milestones) its.insert(m);
    if (config.paradigm == Paradigm::HG && config.lambda_switch_iteration) its.insert(*config.lambda_switch_iteration);
    its.insert(total);
    return {its.begin(), its.end()};
}

namespace {

std::string checkpoint_name(std::int64_t iteration) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "ckpt_%09lld.ckpt", static_cast<long long>(iteration));
    return buf;
}

}  // namespace

TrainState train(const Config& config, const IdentityDataset& dataset, const TeacherHandle* teacher,
                 const TrainOptions& options) {
    validate(config);
    if (dataset.size() == 0) throw ContractError("empty training dataset");
    const int num_classes = config.head.num_classes.value_or(dataset.num_identities());
    if (num_classes < dataset.num_identities()) {
        throw ConfigError("num_classes smaller than the dataset's identity count");
    }

    TrainState state;
    const auto& dir = options.checkpoint_dir;
    if (dir) fs::create_directories(*dir);
    if (dir && options.resume && fs::exists(*dir / "latest.ckpt")) {
        state = load_checkpoint(*dir / "latest.ckpt", config);
    } else {
        state = initial_state(config, num_classes, teacher);
    }

    std::ofstream log_file;
    if (dir) {
        write_loss_log(*dir / "loss_log.csv", state.log);
        log_file.open(*dir / "loss_log.csv", std::ios::app);
    }

    const auto checkpoints = checkpoint_iterations(config.training);
    const MaskPolicy policy{config.training.p_mask, MaskTemplate::training(config.mask.jitter_px)};
    auto batches = training_batches(dataset, config.training);
    const std::int64_t end = std::min(config.training.total_iterations,
                                      options.stop_at.value_or(config.training.total_iterations));

    std::vector<FaceImage> batch;
    while (state.iteration < end) {
        batch.clear();
        for (auto idx : batches.batch_at(state.iteration)) {
            FaceImage face = dataset.face(idx);
            face.identity_label = dataset.records()[idx].identity_label;
            batch.push_back(std::move(face));
        }
        Rng rng = step_rng(config.training.seed, state.iteration);
        try {
            train_step(state, teacher, batch, policy, config, rng);
        } catch (const TrainingError&) {
            if (dir) save_checkpoint(*dir / "diagnostic.ckpt", state, config);
            throw;
        }
        const LogRecord& rec = state.log.back();
        if (log_file) log_file << format_log_record(rec) << '\n' << std::flush;
        if (options.on_step) options.on_step(rec);
        if (dir && std::binary_search(checkpoints.begin(), checkpoints.end(), state.iteration)) {
            const fs::path path = *dir / checkpoint_name(state.iteration);
            save_checkpoint(path, state, config);
            fs::copy_file(path, *dir / "latest.ckpt", fs::copy_options::overwrite_existing);
        }
    }
    return state;
}

TeacherHandle train_teacher(const Config& config, const IdentityDataset& dataset, const TrainOptions& options) {
    if (config.training.paradigm != Paradigm::NO_KD) {
        throw ConfigError("teacher training requires paradigm NO_KD");
    }
    if (config.training.p_mask != 0.0) {
        throw ConfigError("teacher training requires p_mask = 0 (teachers see unmasked faces only)");
    }
    TrainState state = train(config, dataset, nullptr, options);
    return TeacherHandle(std::move(state.student), normalize_rows(state.head.prototypes));
}

// ---------------------------------------------------------------------------
// Archive I/O
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'A', 'S', 'K', 'I', 'N', 'V', '1'};

// The container is little-endian; this build assumes a little-endian host.
static_assert(std::endian::native == std::endian::little);

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof(v)); }
void put_str(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t get_u32(std::istream& in) {
    std::uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(v))) throw CheckpointError("truncated archive");
    return v;
}
std::string get_str(std::istream& in) {
    const std::uint32_t n = get_u32(in);
    if (n > (1U << 28)) throw CheckpointError("corrupt archive string");
    std::string s(n, '\0');
    if (!in.read(s.data(), n)) throw CheckpointError("truncated archive");
    return s;
}

std::string config_for_hash(Config config) {
    config.workers = 1;
    return serialize_config(config);
}

}  // namespace

const Matrix& Archive::array(const std::string& name) const {
    for (const auto& a : arrays) {
        if (a.name == name) return a.value;
    }
    throw CheckpointError("archive has no array '" + name + "'");
}

void write_archive(const fs::path& path, const Archive& archive) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = fs::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write " + path.string());
        out.write(kMagic, sizeof(kMagic));
        put_u32(out, static_cast<std::uint32_t>(archive.kind));
        put_u32(out, static_cast<std::uint32_t>(archive.meta.size()));
        for (const auto& [k, v] : archive.meta) {
            put_str(out, k);
            put_str(out, v);
        }
        put_u32(out, static_cast<std::uint32_t>(archive.arrays.size()));
        for (const auto& a : archive.arrays) {
            put_str(out, a.name);
            put_u32(out, static_cast<std::uint32_t>(a.value.rows()));
            put_u32(out, static_cast<std::uint32_t>(a.value.cols()));
            out.write(reinterpret_cast<const char*>(a.value.data()),
                      static_cast<std::streamsize>(a.value.size() * sizeof(double)));
        }
        if (!out) throw CheckpointError("failed writing " + path.string());
    }
    fs::rename(tmp, path);
}

Archive read_archive(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError(path.string() + " is not a maskinv archive");
    }
    Archive a;
    a.kind = static_cast<Archive::Kind>(get_u32(in));
    const std::uint32_t n_meta = get_u32(in);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string k = get_str(in);
        a.meta[k] = get_str(in);
    }
    const std::uint32_t n_arrays = get_u32(in);
    for (std::uint32_t i = 0; i < n_arrays; ++i) {
        NamedParam p;
        p.name = get_str(in);
        const std::uint32_t rows = get_u32(in);
        const std::uint32_t cols = get_u32(in);
        p.value.resize(rows, cols);
        if (!in.read(reinterpret_cast<char*>(p.value.data()),
                     static_cast<std::streamsize>(p.value.size() * sizeof(double)))) {
            throw CheckpointError("truncated array '" + p.name + "' in " + path.string());
        }
        a.arrays.push_back(std::move(p));
    }
    return a;
}

namespace {

void store_model(Archive& a, const Backbone& model) {
    a.meta["backbone_input_pool"] = std::to_string(model.config().input_pool);
    std::string channels;
    for (int c : model.config().channels) channels += (channels.empty() ? "" : ",") + std::to_string(c);
    a.meta["backbone_channels"] = channels;
    a.meta["embedding_dim"] = std::to_string(model.embedding_dim());
    for (const auto& p : model.params()) a.arrays.push_back({"model/" + p.name, p.value});
}

Backbone restore_model(const Archive& a) {
    BackboneConfig cfg;
    try {
        cfg.input_pool = std::stoi(a.meta.at("backbone_input_pool"));
        cfg.channels.clear();
        std::stringstream ss(a.meta.at("backbone_channels"));
        for (std::string item; std::getline(ss, item, ',');) cfg.channels.push_back(std::stoi(item));
        Backbone model(cfg, std::stoi(a.meta.at("embedding_dim")), 0);
        for (auto& p : model.params()) {
            const Matrix& stored = a.array("model/" + p.name);
            if (stored.rows() != p.value.rows() || stored.cols() != p.value.cols()) {
                throw CheckpointError("shape mismatch for " + p.name);
            }
            p.value = stored;
        }
        return model;
    } catch (const std::out_of_range&) {
        throw CheckpointError("archive is missing model metadata");
    } catch (const std::invalid_argument&) {
        throw CheckpointError("archive has malformed model metadata");
    }
}

}  // namespace

void save_model(const fs::path& path, const Backbone& model) {
    Archive a;
    a.kind = Archive::Kind::Model;
    store_model(a, model);
    write_archive(path, a);
}

Backbone load_model(const fs::path& path) {
    const Archive a = read_archive(path);
    return restore_model(a);
}

void export_teacher(const fs::path& path, const TeacherHandle& teacher) {
    Archive a;
    a.kind = Archive::Kind::Model;
    store_model(a, teacher.backbone());
    if (teacher.head()) a.arrays.push_back({"head/prototypes", *teacher.head()});
    write_archive(path, a);
}

TeacherHandle import_teacher(const fs::path& path) {
    const Archive a = read_archive(path);
    std::optional<Matrix> head;
    for (const auto& p : a.arrays) {
        if (p.name == "head/prototypes") head = normalize_rows(p.value);
    }
    return TeacherHandle(restore_model(a), std::move(head));
}

void save_checkpoint(const fs::path& path, const TrainState& state, const Config& config) {
    Archive a;
    a.kind = Archive::Kind::Checkpoint;
    store_model(a, state.student);
    a.meta["iteration"] = std::to_string(state.iteration);
    a.meta["config_hash"] = std::to_string(fnv1a(config_for_hash(config)));
    a.meta["config"] = serialize_config(config);
    a.arrays.push_back({"head/prototypes", state.head.prototypes});
    for (std::size_t i = 0; i < state.momentum.size(); ++i) {
        a.arrays.push_back({"momentum/" + std::to_string(i), state.momentum[i]});
    }
    Matrix log(static_cast<Eigen::Index>(state.log.size()), 6);
    for (std::size_t i = 0; i < state.log.size(); ++i) {
        const auto& r = state.log[i];
        log.row(static_cast<Eigen::Index>(i)) << static_cast<double>(r.iteration), r.losses.l_elastic_arc,
            r.losses.l_kd, r.losses.lambda_effective, r.losses.l_total, r.lr;
    }
    a.arrays.push_back({"loss_log", log});
    write_archive(path, a);
}

TrainState load_checkpoint(const fs::path& path, const Config& config) {
    const Archive a = read_archive(path);
    if (a.kind != Archive::Kind::Checkpoint) throw CheckpointError(path.string() + " is not a training checkpoint");
    if (a.meta.at("config_hash") != std::to_string(fnv1a(config_for_hash(config)))) {
        throw CheckpointError(path.string() + " was written with a different configuration");
    }
    TrainState state;
    state.student = restore_model(a);
    state.iteration = std::stoll(a.meta.at("iteration"));
    state.head.config = config.head;
    state.head.prototypes = a.array("head/prototypes");
    state.head.config.num_classes = static_cast<int>(state.head.prototypes.rows());
    for (std::size_t i = 0; i < state.student.params().size() + 1; ++i) {
        state.momentum.push_back(a.array("momentum/" + std::to_string(i)));
    }
    const Matrix& log = a.array("loss_log");
    for (Eigen::Index i = 0; i < log.rows(); ++i) {
        state.log.push_back({static_cast<std::int64_t>(log(i, 0)), {log(i, 1), log(i, 2), log(i, 3), log(i, 4)},
                             log(i, 5)});
    }
    if (static_cast<std::int64_t>(state.log.size()) != state.iteration) {
        throw CheckpointError(path.string() + ": loss log length differs from iteration");
    }
    return state;
}

std::string loss_log_header() { return "iteration,l_arc,l_kd,lambda,l_total,lr"; }

std::string format_log_record(const LogRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<long long>(r.iteration),
                  r.losses.l_elastic_arc, r.losses.l_kd, r.losses.lambda_effective, r.losses.l_total, r.lr);
    return buf;
}

void write_loss_log(const fs::path& path, const std::vector<LogRecord>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw TrainingError("cannot write loss log " + path.string());
    out << loss_log_header() << '\n';
    for (const auto& r : log) out << format_log_record(r) << '\n';
}

}  // namespace maskinv
