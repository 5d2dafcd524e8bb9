#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maskinv/backbone.hpp"
#include "maskinv/core.hpp"
#include "maskinv/dataio.hpp"
#include "maskinv/losses.hpp"
#include "maskinv/maskgen.hpp"

namespace maskinv {

/// Frozen embedding network. Only const access to the backbone is exposed.
class TeacherHandle {
public:
    explicit TeacherHandle(Backbone backbone, std::optional<Matrix> head = std::nullopt)
        : backbone_(std::move(backbone)), head_(std::move(head)) {}

    const Backbone& backbone() const { return backbone_; }
    /// Unit-norm class prototypes of the teacher's own training head, when known.
    const std::optional<Matrix>& head() const { return head_; }
    Matrix embed(std::span<const FaceImage* const> batch, int workers = 1) const {
        return maskinv::embed(backbone_, batch, workers);
    }
    std::uint64_t checksum() const { return backbone_.checksum(); }

private:
    Backbone backbone_;
    std::optional<Matrix> head_;
};

struct LogRecord {
    std::int64_t iteration = 0;
    LossBreakdown losses;
    double lr = 0.0;
};

struct TrainState {
    std::int64_t iteration = 0;
    Backbone student;
    /// Raw prototypes; rows are renormalized on every forward pass.
    MarginHead head;
    /// Momentum buffers: student params in order, then the head prototypes.
    std::vector<Matrix> momentum;
    std::vector<LogRecord> log;
};

double lr_schedule(std::int64_t iteration, const TrainingConfig& config);

/// NO_KD -> 0; LG -> lambda_base; HG -> lambda_base before
/// lambda_switch_iteration and lambda_high from it onward.
double lambda_schedule(std::int64_t iteration, const TrainingConfig& config);

/// Fresh state: random student (or a teacher copy when init_from_teacher),
/// head with `num_classes` prototypes, zero momentum.
TrainState initial_state(const Config& config, int num_classes, const TeacherHandle* teacher = nullptr);

/// One step: teacher embeds the unaltered batch, the student embeds the
/// maybe-masked batch, losses use lambda_schedule(iteration), then SGD with
/// momentum and weight decay updates the student and the head. `rng`
/// supplies the mask draws (in image order) followed by the margins.
/// `teacher` may be null only when the effective lambda is 0.
void train_step(TrainState& state, const TeacherHandle* teacher, const std::vector<FaceImage>& batch,
                const MaskPolicy& policy, const Config& config, Rng& rng);

/// Per-iteration random stream used by train().
Rng step_rng(std::int64_t seed, std::int64_t iteration);

/// Iterations after which train() writes a checkpoint: every interval
/// (default 10% of the run), every lr/lambda milestone, and the last one.
std::vector<std::int64_t> checkpoint_iterations(const TrainingConfig& config);

struct TrainOptions {
    std::optional<std::filesystem::path> checkpoint_dir;
    /// Resume from checkpoint_dir/latest.ckpt when it exists.
    bool resume = true;
    /// Stop once this many iterations are done (simulates an interruption).
    std::optional<std::int64_t> stop_at;
    std::function<void(const LogRecord&)> on_step;
};

/// Runs the student to total_iterations. Writes `loss_log.csv` and
/// checkpoints under checkpoint_dir when one is given.
TrainState train(const Config& config, const IdentityDataset& dataset, const TeacherHandle* teacher,
                 const TrainOptions& options = {});

/// Plain margin-loss training on unmasked data. Requires paradigm NO_KD and
/// p_mask = 0.
TeacherHandle train_teacher(const Config& config, const IdentityDataset& dataset, const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

/// Binary container shared by checkpoints and model files:
///   "MASKINV1" | u32 kind | u32 n_meta | (str key, str value)* |
///   u32 n_arrays | (str name, u32 rows, u32 cols, f64[rows*cols] col-major)*
/// with strings as u32 length + bytes, all little-endian.
struct Archive {
    enum class Kind : std::uint32_t { Model = 1, Checkpoint = 2 };
    Kind kind = Kind::Model;
    std::map<std::string, std::string> meta;
    std::vector<NamedParam> arrays;

    const Matrix& array(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const Backbone& model);
Backbone load_model(const std::filesystem::path& path);

void export_teacher(const std::filesystem::path& path, const TeacherHandle& teacher);
TeacherHandle import_teacher(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const Config& config);
TrainState load_checkpoint(const std::filesystem::path& path, const Config& config);

/// `iteration,l_arc,l_kd,lambda,l_total,lr`
std::string loss_log_header();
std::string format_log_record(const LogRecord& record);
void write_loss_log(const std::filesystem::path& path, const std::vector<LogRecord>& log);

}  // namespace maskinv
