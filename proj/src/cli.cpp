#include "maskinv/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "maskinv/core.hpp"
#include "maskinv/dataio.hpp"
#include "maskinv/maskgen.hpp"
#include "maskinv/metrics.hpp"
#include "maskinv/trainer.hpp"

namespace maskinv::cli {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
    std::string config_path;
    std::string out_dir;
    std::optional<std::int64_t> seed;
    std::optional<int> workers;
};

std::string config_help_footer() {
    std::string text = "\nConfig keys (key = value, '#' comments) and defaults:\n";
    for (const auto& k : config_keys()) {
        text += "  " + k.key + " = " + k.default_value + "    # " + k.description + "\n";
    }
    text += "\nEnvironment: MASKINV_SEED and MASKINV_WORKERS override seed and workers.\n";
    return text;
}

Config resolve_config(const CommonOptions& opts) {
    Config config = opts.config_path.empty() ? Config{} : load_config(opts.config_path);
    if (const char* env = std::getenv("MASKINV_SEED")) config.training.seed = std::stoll(env);
    if (const char* env = std::getenv("MASKINV_WORKERS")) config.workers = std::stoi(env);
    if (opts.seed) config.training.seed = *opts.seed;
    if (opts.workers) config.workers = *opts.workers;
    validate(config);
    return config;
}

fs::path prepare_run_dir(const std::string& out, const Config& config, const std::vector<std::string>& args) {
    const fs::path dir(out);
    fs::create_directories(dir);
    std::ofstream(dir / "config.cfg") << serialize_config(config);
    std::ofstream cmd(dir / "command.txt");
    cmd << "maskinv";
    for (const auto& a : args) cmd << ' ' << a;
    cmd << '\n';
    return dir;
}

void add_common(CLI::App* app, CommonOptions& opts, bool require_config) {
    auto* c = app->add_option("--config", opts.config_path, "config file (key = value)");
    if (require_config) c->required();
    c->check(CLI::ExistingFile);
    app->add_option("--out", opts.out_dir, "run directory for all outputs")->required();
    app->add_option("--seed", opts.seed, "override the config seed");
    app->add_option("--workers", opts.workers, "override the worker count");
}

Masker counting_masker(std::size_t& calls) {
    return [&calls](const FaceImage& img, Rng& rng) {
        ++calls;
        return mask_for_benchmark(img, rng);
    };
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"maskinv: mask-invariant face embedding training and evaluation", "maskinv"};
    app.require_subcommand(1, 1);
    app.footer(config_help_footer());

    CommonOptions common;
    std::string data_dir, teacher_path, model_path, pairs_path, scenario_text = "none", image_root, paradigm_text;
    std::string name = "model";
    std::optional<int> folds;
    std::vector<std::string> score_files;
    bool benchmark = false;
    int toy_ids = 20, toy_images = 20, toy_first = 0, toy_pairs = 0;

    auto* teacher_cmd = app.add_subcommand("train-teacher", "train a teacher with the margin loss on unmasked faces");
    add_common(teacher_cmd, common, true);
    teacher_cmd->add_option("--data", data_dir, "dataset root (<identity>/<image>.png + .landmarks)")
        ->required()
        ->check(CLI::ExistingDirectory);

    auto* student_cmd = app.add_subcommand("train-student", "train a student against a frozen teacher");
    add_common(student_cmd, common, true);
    student_cmd->add_option("--data", data_dir, "dataset root")->required()->check(CLI::ExistingDirectory);
    student_cmd->add_option("--teacher", teacher_path, "teacher model file (required unless paradigm NO_KD)")
        ->check(CLI::ExistingFile);
    student_cmd->add_option("--paradigm", paradigm_text, "override paradigm: HG, LG or NO_KD");

    auto* mask_cmd = app.add_subcommand("mask", "write masked copies of a dataset with a manifest");
    add_common(mask_cmd, common, false);
    mask_cmd->add_option("--data", data_dir, "dataset root")->required()->check(CLI::ExistingDirectory);
    mask_cmd->add_flag("--benchmark", benchmark, "no positional jitter (benchmark masks)");

    auto* protocol_cmd = app.add_subcommand("protocol", "parse a pair list and write the resolved protocol");
    add_common(protocol_cmd, common, false);
    protocol_cmd->add_option("--pairs", pairs_path, "pair list file")->required()->check(CLI::ExistingFile);
    protocol_cmd->add_option("--scenario", scenario_text, "none | masked-vs-nonmasked | both-masked")
        ->capture_default_str();
    protocol_cmd->add_option("--folds", folds, "split into k equal contiguous folds");
    protocol_cmd->add_option("--image-root", image_root, "root for relative image names (default: pair file dir)");

    auto* eval_cmd = app.add_subcommand("evaluate", "score a protocol with a model and write metric reports");
    add_common(eval_cmd, common, false);
    eval_cmd->add_option("--protocol", pairs_path, "pair list file")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--scenario", scenario_text, "none | masked-vs-nonmasked | both-masked")
        ->capture_default_str();
    eval_cmd->add_option("--model", model_path, "model file or training checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--folds", folds, "k for k-fold accuracy");
    eval_cmd->add_option("--image-root", image_root, "root for relative image names (default: pair file dir)");
    eval_cmd->add_option("--name", name, "model name in the report")->capture_default_str();

    auto* report_cmd = app.add_subcommand("report", "recompute reports from score dumps");
    add_common(report_cmd, common, false);
    report_cmd->add_option("--scores", score_files, "score dump(s): pair_index,genuine,score")
        ->required()
        ->check(CLI::ExistingFile);
    report_cmd->add_option("--folds", folds, "k for k-fold accuracy");

    auto* toy_cmd = app.add_subcommand("make-toy", "write a procedural toy dataset (and optionally a pair list)");
    add_common(toy_cmd, common, false);
    toy_cmd->add_option("--identities", toy_ids, "number of identities")->capture_default_str();
    toy_cmd->add_option("--images", toy_images, "images per identity")->capture_default_str();
    toy_cmd->add_option("--first-identity", toy_first, "first identity index")->capture_default_str();
    toy_cmd->add_option("--pairs", toy_pairs, "genuine (and impostor) pairs to write to pairs.txt")
        ->capture_default_str();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        const Config config = resolve_config(common);
        const fs::path run_dir = prepare_run_dir(common.out_dir, config, args);

        if (teacher_cmd->parsed()) {
            IdentityDataset ds = load_dataset(data_dir);
            ds.preload();
            TrainOptions opts;
            opts.checkpoint_dir = run_dir / "checkpoints";
            const TeacherHandle teacher = train_teacher(config, ds, opts);
            export_teacher(run_dir / "teacher.model", teacher);
            out << "teacher written to " << (run_dir / "teacher.model").string() << '\n';
        } else if (student_cmd->parsed()) {
            Config cfg = config;
            if (!paradigm_text.empty()) {
                cfg.training.paradigm = parse_paradigm(paradigm_text);
                if (cfg.training.paradigm != Paradigm::HG) cfg.training.lambda_switch_iteration.reset();
                else if (!cfg.training.lambda_switch_iteration) cfg.training.lambda_switch_iteration = 227000;
                validate(cfg);
                std::ofstream(run_dir / "config.cfg") << serialize_config(cfg);
            }
            std::optional<TeacherHandle> teacher;
            if (!teacher_path.empty()) teacher = import_teacher(teacher_path);
            if (!teacher && cfg.training.paradigm != Paradigm::NO_KD) {
                throw ConfigError("paradigm " + to_string(cfg.training.paradigm) + " needs --teacher");
            }
            IdentityDataset ds = load_dataset(data_dir);
            ds.preload();
            TrainOptions opts;
            opts.checkpoint_dir = run_dir / "checkpoints";
            const TrainState state = train(cfg, ds, teacher ? &*teacher : nullptr, opts);
            save_model(run_dir / "student.model", state.student);
            out << "student written to " << (run_dir / "student.model").string() << '\n';
        } else if (mask_cmd->parsed()) {
            const IdentityDataset ds = load_dataset(data_dir);
            const MaskTemplate tmpl =
                benchmark ? MaskTemplate::benchmark() : MaskTemplate::training(config.mask.jitter_px);
            std::ofstream manifest(run_dir / "manifest.csv");
            manifest << "source,output,color,seed\n";
            for (std::size_t i = 0; i < ds.size(); ++i) {
                const auto& rec = ds.records()[i];
                const fs::path rel = fs::relative(rec.image_path, data_dir);
                Rng rng = make_rng(config.training.seed, "mask:" + rel.string());
                const MaskRender render = render_mask_detailed(ds.face(i), tmpl, rng);
                const fs::path dst = run_dir / "images" / rel;
                save_face(dst, render.image);
                manifest << rec.image_path.string() << ',' << dst.string() << ',' << render.color.r << ' '
                         << render.color.g << ' ' << render.color.b << ',' << config.training.seed << '\n';
            }
            out << "masked " << ds.size() << " images into " << (run_dir / "images").string() << '\n';
        } else if (protocol_cmd->parsed()) {
            const PairProtocol protocol =
                build_protocol(pairs_path, parse_scenario(scenario_text), folds,
                               image_root.empty() ? std::nullopt : std::optional<fs::path>(image_root));
            std::ofstream csv(run_dir / "protocol.csv");
            csv << "pair_index,reference,probe,genuine,mask_reference,mask_probe,fold\n";
            std::size_t fold = 0;
            for (std::size_t i = 0; i < protocol.pairs.size(); ++i) {
                if (protocol.fold_boundaries) {
                    while (i >= (*protocol.fold_boundaries)[fold + 1]) ++fold;
                }
                const auto& p = protocol.pairs[i];
                csv << i << ',' << p.reference << ',' << p.probe << ',' << p.genuine << ',' << p.mask_reference << ','
                    << p.mask_probe << ',';
                if (protocol.fold_boundaries) csv << fold;
                csv << '\n';
            }
            out << protocol.pairs.size() << " pairs, scenario " << to_string(protocol.scenario) << ", "
                << protocol.num_folds() << " folds\n";
        } else if (eval_cmd->parsed()) {
            const Scenario scenario = parse_scenario(scenario_text);
            const PairProtocol protocol =
                build_protocol(pairs_path, scenario, folds,
                               image_root.empty() ? std::nullopt : std::optional<fs::path>(image_root));
            const Backbone model = load_model(model_path);
            std::size_t mask_calls = 0;
            const ScoredProtocol scored =
                score_protocol(protocol, model, counting_masker(mask_calls), config.training.seed, {}, config.workers);
            write_score_dump(run_dir / "scores.csv", protocol, scored.pair_scores);
            const MetricsReport r =
                report(scored.scores, {name, to_string(scenario), &protocol, &scored.pair_scores});
            std::ofstream(run_dir / "report.csv") << render_csv({r});
            std::ofstream(run_dir / "report.txt") << render_text({r});
            std::ofstream det(run_dir / "det.csv");
            det << "threshold,fmr,fnmr\n";
            for (const auto& p : det_curve(scored.scores)) det << p.threshold << ',' << p.fmr << ',' << p.fnmr << '\n';
            out << render_text({r});
        } else if (report_cmd->parsed()) {
            std::vector<MetricsReport> reports;
            for (const auto& file : score_files) {
                const auto [genuine, scores] = read_score_dump(file);
                PairProtocol protocol;
                ScoreSet set;
                for (std::size_t i = 0; i < scores.size(); ++i) {
                    protocol.pairs.push_back({"", "", static_cast<bool>(genuine[i])});
                    (genuine[i] ? set.genuine : set.impostor).push_back(scores[i]);
                }
                if (folds) assign_folds(protocol, *folds);
                reports.push_back(report(set, {fs::path(file).stem().string(), "", &protocol, &scores}));
            }
            std::ofstream(run_dir / "report.csv") << render_csv(reports);
            std::ofstream(run_dir / "report.txt") << render_text(reports);
            out << render_text(reports);
        } else if (toy_cmd->parsed()) {
            const ToySpec spec{toy_ids, toy_images, toy_first, config.training.seed};
            const fs::path images = run_dir / "images";
            write_toy_dataset(images, spec);
            if (toy_pairs > 0) {
                const auto faces = generate_toy_faces(spec);
                const PairProtocol protocol =
                    make_toy_protocol(faces, toy_pairs, Scenario::NoMask, config.training.seed);
                write_pair_file(images / "pairs.txt", protocol);
            }
            out << "wrote " << toy_ids * toy_images << " toy faces to " << images.string() << '\n';
        }
    } catch (const Error& e) {
        err << "error: " << e.category() << ": " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace maskinv::cli
