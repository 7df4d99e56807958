// amber: command-line front end for the hyperspectral segmentation pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "amber/experiment.hpp"
#include "amber/gradcheck.hpp"
#include "amber/parallel.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace amber;

namespace {

struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

void write_json(const fs::path& path, const ojson& j) { write_text(path, j.dump(2) + "\n"); }

std::string metrics_table(const MetricSummary& s, const std::string& title) {
    std::string out = fmt::format("{} ({} pixels)\n", title, s.pixels);
    for (std::size_t k = 0; k < s.per_class.size(); ++k)
        out += s.per_class[k] ? fmt::format("{:<14}{:>10.2f}\n", fmt::format("class {}", k + 1), *s.per_class[k])
                              : fmt::format("{:<14}{:>10}\n", fmt::format("class {}", k + 1), "-");
    out += fmt::format("{:<14}{:>10.2f}\n", "OA (%)", s.oa);
    out += fmt::format("{:<14}{:>10.2f}\n", "Kappa x 100", 100.0 * s.kappa);
    out += fmt::format("{:<14}{:>10.2f}\n", "AA (%)", s.aa);
    return out;
}

LogFn info_log() {
    return [](const std::string& msg) { spdlog::info("{}", msg); };
}

struct Overrides {
    std::int64_t epochs = 0;
    std::int64_t batch_size = 0;
    double lr = 0;
    std::int64_t seed = -1;
    std::string out;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--epochs", o.epochs, "Override train.epochs");
    cmd->add_option("--batch-size", o.batch_size, "Override train.batch_size");
    cmd->add_option("--lr", o.lr, "Override train.learning_rate");
    cmd->add_option("--seed", o.seed, "Override the master seed");
    cmd->add_option("--out", o.out, "Override the output directory");
}

RunConfig load_config(const std::string& path, const Overrides& o) {
    auto doc = RunConfig::read_document(path);
    if (o.epochs > 0) set_config_value(doc, "train.epochs", o.epochs);
    if (o.batch_size > 0) set_config_value(doc, "train.batch_size", o.batch_size);
    if (o.lr > 0) set_config_value(doc, "train.learning_rate", o.lr);
    if (o.seed >= 0) set_config_value(doc, "seed", o.seed);
    if (!o.out.empty()) set_config_value(doc, "output", o.out);
    return RunConfig::from_json(doc);
}

int cmd_synth(std::int64_t classes, std::int64_t bands, std::int64_t height, std::int64_t width, double noise,
              std::uint64_t seed, const std::string& out) {
    if (classes < 2) throw UsageError("--classes must be >= 2");
    if (bands < 1 || height < 1 || width < 1) throw UsageError("--bands, --height and --width must be >= 1");
    if (noise < 0) throw UsageError("--noise must be >= 0");
    auto scene = generate_synthetic_scene(classes, bands, height, width, seed, noise);
    fs::create_directories(out);
    write_cube(scene.cube, fs::path(out) / "cube.hdr.json");
    write_labels(scene.labels, fs::path(out) / "labels.hdr.json");
    ojson j{{"cube", (fs::path(out) / "cube.hdr.json").string()}, {"labels", (fs::path(out) / "labels.hdr.json").string()}};
    ojson hist = ojson::array();
    for (std::int64_t k = 1; k <= classes; ++k) hist.push_back(scene.labels.count(static_cast<std::uint16_t>(k)));
    j["class_pixels"] = hist;
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_sample(const std::string& labels_path, std::int64_t n, double fraction, std::uint64_t seed, std::int64_t crop,
               const std::string& out) {
    const auto labels = read_labels(labels_path);
    auto ps = split_patches(sample_patches(labels, n, seed, crop), fraction, derive_seed(seed, 1));
    ojson j;
    j["seed"] = seed;
    j["crop"] = crop;
    j["train_fraction"] = fraction;
    j["train"] = ps.count(Split::train);
    j["test"] = ps.count(Split::test);
    j["overlap"] = train_test_overlap(ps);
    ojson list = ojson::array();
    for (const auto& p : ps.patches)
        list.push_back({{"row", p.row}, {"col", p.col}, {"split", p.split == Split::train ? "train" : "test"}});
    j["patches"] = list;
    if (out.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        write_json(out, j);
        spdlog::info("{} train / {} test patches, overlap {:.4f} -> {}", ps.count(Split::train), ps.count(Split::test),
                     train_test_overlap(ps), out);
    }
    return 0;
}

int cmd_train(const std::string& config, bool dry, const Overrides& o) {
    const auto rc = load_config(config, o);
    if (dry) {
        const auto r = dry_run(rc);
        std::cout << r.to_json().dump(2) << '\n';
        spdlog::info("dry run of {} took {:.1f}s", rc.name, r.seconds);
        return r.ok() ? 0 : 1;
    }
    const auto data = load_dataset(rc);
    spdlog::info("{}: cube {}x{}x{}, {} classes, model {} parameters", rc.name, data.cube.bands, data.cube.height,
                 data.cube.width, rc.n_classes, AmberModel<float>(rc.model, 0).parameter_count());
    auto run = run_fold(rc, data, rc.seed, info_log());
    const fs::path out = rc.output;
    save_checkpoint(run.checkpoint, out);
    write_loss_csv(run.result.loss_history, out / "loss.csv");

    const auto& r = run.result;
    ojson j;
    j["name"] = rc.name;
    j["seed"] = rc.seed;
    j["train_patches"] = r.train_patches;
    j["test_patches"] = r.test_patches;
    j["overlap"] = r.overlap;
    j["loss_history"] = r.loss_history;
    j["train_centers"] = summary_json(summarize(r.train_centers));
    j["test_centers"] = summary_json(summarize(r.test_centers));
    j["test_confusion"] = confusion_json(r.test_centers);
    if (r.full_map) j["full_map"] = summary_json(summarize(*r.full_map));
    write_json(out / "metrics.json", j);

    std::cout << metrics_table(summarize(r.test_centers), "test centers");
    if (r.full_map) std::cout << metrics_table(summarize(*r.full_map), "full map");
    spdlog::info("checkpoint, loss.csv and metrics.json written to {}", out.string());
    return 0;
}

int cmd_predict(const std::string& ckpt_dir, const std::string& cube_path, const std::string& out, std::int64_t micro) {
    const auto ckpt = load_checkpoint(ckpt_dir);
    const auto cube = read_cube(cube_path);
    const auto pred = predict_full(ckpt, cube, micro);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    write_labels(pred, out);
    spdlog::info("prediction {}x{} written to {}", pred.height, pred.width, out);
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path, std::int64_t classes, const std::string& out) {
    if (classes < 1) throw UsageError("--classes must be >= 1");
    const auto pred = read_labels(pred_path);
    const auto truth = read_labels(truth_path);
    const auto m = confusion(pred, truth, classes);
    const auto s = summarize(m);
    ojson j = summary_json(s);
    j["confusion"] = confusion_json(m);
    if (!out.empty()) write_json(out, j);
    std::cout << metrics_table(s, "evaluation");
    if (out.empty()) std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_cv(const std::string& config, std::int64_t folds, const Overrides& o) {
    if (folds < 1) throw UsageError("--folds must be >= 1");
    const auto rc = load_config(config, o);
    const auto data = load_dataset(rc);
    const auto report = monte_carlo_cv(rc, data, folds, info_log());
    const fs::path out = rc.output;
    write_json(out / "cv_report.json", report.to_json());
    write_text(out / "cv_report.txt", report.table());
    std::cout << report.table();
    spdlog::info("cv report written to {}", out.string());
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, double tol, double model_tol) {
    const auto report = run_gradcheck(seed, tol, model_tol);
    std::cout << fmt::format("{:<28}{:>14}{:>12}  {}\n", "op", "max rel err", "tolerance", "result");
    for (const auto& e : report.entries)
        std::cout << fmt::format("{:<28}{:>14.3e}{:>12.1e}  {}\n", e.name, e.error, e.tolerance,
                                 e.pass() ? "PASS" : "FAIL");
    std::cout << (report.pass() ? "all within tolerance\n" : "gradient check FAILED\n");
    return report.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_default_logger(spdlog::stderr_color_mt("amber"));

    CLI::App app{"amber: hyperspectral segmentation with a 3D transformer encoder"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "amber 0.1.0");
    app.footer(fmt::format("AMBER_THREADS caps internal parallelism (currently {}).", max_threads()));

    auto* synth = app.add_subcommand("synth", "Write a synthetic cube and label map");
    std::int64_t s_classes = 0, s_bands = 16, s_height = 64, s_width = 64;
    double s_noise = 0.05;
    std::uint64_t s_seed = 7;
    std::string s_out;
    synth->add_option("--classes", s_classes, "Number of classes (>= 2)")->required();
    synth->add_option("--bands", s_bands, "Spectral bands");
    synth->add_option("--height", s_height, "Rows");
    synth->add_option("--width", s_width, "Columns");
    synth->add_option("--noise", s_noise, "Gaussian noise sigma");
    synth->add_option("--seed", s_seed, "Seed");
    synth->add_option("--out", s_out, "Output directory")->required();

    auto* sample = app.add_subcommand("sample", "Sample and split patch centers");
    std::string p_labels, p_out;
    std::int64_t p_n = 0, p_crop = kCropSize;
    double p_fraction = 0.2;
    std::uint64_t p_seed = 0;
    sample->add_option("--labels", p_labels, "Label map header")->required();
    sample->add_option("--patches", p_n, "Number of patches")->required();
    sample->add_option("--train-fraction", p_fraction, "Fraction assigned to train");
    sample->add_option("--seed", p_seed, "Seed");
    sample->add_option("--crop", p_crop, "Crop size");
    sample->add_option("--out", p_out, "Output JSON (stdout when omitted)");

    auto* train_cmd = app.add_subcommand("train", "Train one model from a run configuration");
    std::string t_config;
    bool t_dry = false;
    Overrides t_over;
    train_cmd->add_option("--config", t_config, "Run configuration JSON")->required();
    train_cmd->add_flag("--dry-run", t_dry, "Build the full model and run one forward pass on one batch");
    add_overrides(train_cmd, t_over);

    auto* predict = app.add_subcommand("predict", "Classify every pixel of a cube");
    std::string r_ckpt, r_cube, r_out;
    std::int64_t r_micro = 4;
    predict->add_option("--checkpoint", r_ckpt, "Checkpoint directory")->required();
    predict->add_option("--cube", r_cube, "Cube header")->required();
    predict->add_option("--out", r_out, "Output label map header")->required();
    predict->add_option("--micro-batch", r_micro, "Tiles per forward pass");

    auto* eval = app.add_subcommand("eval", "Compare a prediction with ground truth");
    std::string e_pred, e_truth, e_out;
    std::int64_t e_classes = 0;
    eval->add_option("--pred", e_pred, "Predicted label map header")->required();
    eval->add_option("--truth", e_truth, "Ground-truth label map header")->required();
    eval->add_option("--classes", e_classes, "Number of classes")->required();
    eval->add_option("--out", e_out, "Output JSON");

    auto* cv = app.add_subcommand("cv", "Monte Carlo cross-validation");
    std::string c_config;
    std::int64_t c_folds = 5;
    Overrides c_over;
    cv->add_option("--config", c_config, "Run configuration JSON")->required();
    cv->add_option("--folds", c_folds, "Number of folds");
    add_overrides(cv, c_over);

    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::uint64_t g_seed = 1;
    double g_tol = 1e-4, g_model_tol = 1e-3;
    gc->add_option("--seed", g_seed, "Seed");
    gc->add_option("--tolerance", g_tol, "Per-op relative error tolerance");
    gc->add_option("--model-tolerance", g_model_tol, "Tolerance for composite blocks and the tiny model");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) return cmd_synth(s_classes, s_bands, s_height, s_width, s_noise, s_seed, s_out);
        if (*sample) return cmd_sample(p_labels, p_n, p_fraction, p_seed, p_crop, p_out);
        if (*train_cmd) return cmd_train(t_config, t_dry, t_over);
        if (*predict) return cmd_predict(r_ckpt, r_cube, r_out, r_micro);
        if (*eval) return cmd_eval(e_pred, e_truth, e_classes, e_out);
        if (*cv) return cmd_cv(c_config, c_folds, c_over);
        if (*gc) return cmd_gradcheck(g_seed, g_tol, g_model_tol);
    } catch (const UsageError& e) {
        spdlog::error("usage: {}", e.what());
        return 2;
    } catch (const ConfigError& e) {
        spdlog::error("config: {}", e.what());
        return 2;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
