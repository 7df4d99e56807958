#include "amber/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <fmt/format.h>

namespace amber {

using ojson = nlohmann::ordered_json;

Dataset load_dataset(const RunConfig& rc) {
    Dataset ds;
    if (rc.synthetic) {
        const auto& s = *rc.synthetic;
        auto scene = generate_synthetic_scene(s.classes, s.bands, s.height, s.width, s.seed, s.noise);
        ds.cube = std::move(scene.cube);
        ds.labels = std::move(scene.labels);
    } else {
        ds.cube = read_cube(rc.cube);
        ds.labels = read_labels(rc.labels);
    }
    if (ds.cube.bands != rc.bands)
        throw ConfigError("cube has " + std::to_string(ds.cube.bands) + " bands, config says " + std::to_string(rc.bands));
    if (ds.labels.height != ds.cube.height || ds.labels.width != ds.cube.width)
        throw FormatError("label map extents differ from the cube");
    ds.labels.validate(rc.n_classes);
    if (rc.rebalance)
        ds.labels = rebalance_to_undefined(ds.labels, rc.rebalance->class_id, rc.rebalance->pixels, rc.rebalance->seed);
    return ds;
}

FoldRun run_fold(const RunConfig& rc, const Dataset& data, std::uint64_t seed, const LogFn& log) {
    auto ps = split_patches(sample_patches(data.labels, rc.patches, seed, rc.crop), rc.train_fraction,
                            derive_seed(seed, 1));
    const auto stats = train_band_stats(data.cube, ps);
    HyperCube cube = data.cube;
    stats.apply(cube);

    FoldRun run{FoldResult{}, Checkpoint{AmberModel<float>(rc.model, derive_seed(seed, 2)), stats, {}, rc.document}};
    auto& res = run.result;
    res.seed = seed;
    res.train_patches = ps.count(Split::train);
    res.test_patches = ps.count(Split::test);
    res.overlap = train_test_overlap(ps);
    if (log)
        log(fmt::format("seed {}: {} train / {} test patches, {:.1f}% of test crops overlap a train crop", seed,
                        res.train_patches, res.test_patches, 100.0 * res.overlap));

    TrainConfig tc = rc.train;
    tc.seed = seed;
    res.loss_history = train(tc, run.checkpoint.model, cube, data.labels, ps, [&](std::int64_t epoch, double loss) {
        if (log) log(fmt::format("epoch {}/{} mean loss {:.6f}", epoch, tc.epochs, loss));
    });
    run.checkpoint.loss_history = res.loss_history;

    auto centers = [&](Split s) {
        const auto patches = ps.of(s);
        const auto pred = predict_centers(run.checkpoint.model, cube, data.labels, patches, rc.crop, rc.micro_batch);
        ConfusionMatrix m(rc.n_classes);
        for (std::size_t i = 0; i < patches.size(); ++i) m.add(data.labels.at(patches[i].row, patches[i].col), pred[i]);
        return m;
    };
    res.train_centers = centers(Split::train);
    res.test_centers = centers(Split::test);
    if (rc.full_map)
        res.full_map = confusion(predict_full(run.checkpoint, data.cube, rc.micro_batch), data.labels, rc.n_classes);
    return run;
}

DryRunReport dry_run(const RunConfig& rc) {
    const auto t0 = std::chrono::steady_clock::now();
    AmberModel<float> model(rc.model, derive_seed(rc.seed, 2));
    Rng rng(rc.seed);
    Tensor<float> x(Shape{rc.train.batch_size, 1, rc.bands, rc.crop, rc.crop});
    for (auto& v : x.data()) v = static_cast<float>(rng.normal());
    const auto y = model.infer(x, 1);
    DryRunReport r;
    r.name = rc.name;
    r.parameters = model.parameter_count();
    r.input_shape = x.shape();
    r.output_shape = y.shape();
    r.expected_shape = {rc.train.batch_size, rc.n_classes, rc.crop, rc.crop};
    r.finite = std::all_of(y.data().begin(), y.data().end(), [](float v) { return std::isfinite(v); });
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

ojson DryRunReport::to_json() const {
    ojson j;
    j["name"] = name;
    j["parameters"] = parameters;
    j["input_shape"] = input_shape;
    j["output_shape"] = output_shape;
    j["finite"] = finite;
    j["seconds"] = seconds;
    j["ok"] = ok();
    return j;
}

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate a;
    if (values.empty()) return a;
    double s = 0;
    for (double v : values) s += v;
    a.mean = s / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - a.mean) * (v - a.mean);
        a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return a;
}

ojson summary_json(const MetricSummary& s) {
    ojson j;
    j["pixels"] = s.pixels;
    j["oa"] = s.oa;
    j["kappa"] = s.kappa;
    j["aa"] = s.aa;
    ojson pc = ojson::array();
    for (const auto& v : s.per_class) pc.push_back(v ? ojson(*v) : ojson(nullptr));
    j["per_class"] = pc;
    return j;
}

ojson confusion_json(const ConfusionMatrix& m) {
    ojson rows = ojson::array();
    for (std::int64_t i = 0; i < m.classes; ++i) {
        std::vector<std::int64_t> row(m.counts.begin() + i * m.classes, m.counts.begin() + (i + 1) * m.classes);
        rows.push_back(row);
    }
    return rows;
}

namespace {

ojson agg_json(const Aggregate& a) { return ojson{{"mean", a.mean}, {"std", a.stddev}}; }

struct MetricColumns {
    std::vector<double> oa, kappa, aa;
    std::vector<std::vector<double>> per_class;
};

MetricColumns collect(const std::vector<MetricSummary>& runs, std::int64_t classes) {
    MetricColumns c;
    c.per_class.resize(static_cast<std::size_t>(classes));
    for (const auto& s : runs) {
        c.oa.push_back(s.oa);
        c.kappa.push_back(s.kappa);
        c.aa.push_back(s.aa);
        for (std::int64_t k = 0; k < classes; ++k)
            if (s.per_class[k]) c.per_class[k].push_back(*s.per_class[k]);
    }
    return c;
}

ojson aggregate_json(const std::vector<MetricSummary>& runs, std::int64_t classes) {
    const auto c = collect(runs, classes);
    ojson j;
    j["oa"] = agg_json(aggregate(c.oa));
    j["kappa"] = agg_json(aggregate(c.kappa));
    j["aa"] = agg_json(aggregate(c.aa));
    ojson pc = ojson::array();
    for (const auto& v : c.per_class) pc.push_back(v.empty() ? ojson(nullptr) : agg_json(aggregate(v)));
    j["per_class"] = pc;
    return j;
}

}  // namespace

ojson CvReport::to_json() const {
    ojson j;
    j["name"] = name;
    j["seed"] = seed;
    j["folds"] = folds.size();
    j["std"] = "sample";
    std::vector<MetricSummary> test, full;
    ojson fj = ojson::array();
    for (const auto& f : folds) {
        ojson e;
        e["seed"] = f.seed;
        e["train_patches"] = f.train_patches;
        e["test_patches"] = f.test_patches;
        e["overlap"] = f.overlap;
        e["first_epoch_loss"] = f.loss_history.front();
        e["final_epoch_loss"] = f.loss_history.back();
        e["train_centers"] = summary_json(summarize(f.train_centers));
        test.push_back(summarize(f.test_centers));
        e["test_centers"] = summary_json(test.back());
        e["test_confusion"] = confusion_json(f.test_centers);
        if (f.full_map) {
            full.push_back(summarize(*f.full_map));
            e["full_map"] = summary_json(full.back());
        }
        fj.push_back(e);
    }
    j["per_fold"] = fj;
    j["test_centers"] = aggregate_json(test, classes);
    if (!full.empty()) j["full_map"] = aggregate_json(full, classes);
    return j;
}

std::string CvReport::table() const {
    std::vector<MetricSummary> test, full;
    for (const auto& f : folds) {
        test.push_back(summarize(f.test_centers));
        if (f.full_map) full.push_back(summarize(*f.full_map));
    }
    const auto tc = collect(test, classes);
    const auto fc = collect(full, classes);
    const bool with_full = !full.empty();
    auto cell = [](const std::vector<double>& v, double factor) {
        if (v.empty()) return std::string("-");
        const auto a = aggregate(v);
        return fmt::format("{:.2f} ± {:.2f}", factor * a.mean, factor * a.stddev);
    };
    std::string out = fmt::format("{} ({} folds, seed {})\n", name, folds.size(), seed);
    out += fmt::format("{:<14}{:>22}", "", "test centers");
    if (with_full) out += fmt::format("{:>22}", "full map");
    out += '\n';
    auto row = [&](const std::string& label, const std::vector<double>& a, const std::vector<double>& b, double factor) {
        out += fmt::format("{:<14}{:>22}", label, cell(a, factor));
        if (with_full) out += fmt::format("{:>22}", cell(b, factor));
        out += '\n';
    };
    for (std::int64_t k = 0; k < classes; ++k)
        row(fmt::format("class {}", k + 1), tc.per_class[k], with_full ? fc.per_class[k] : std::vector<double>{}, 1.0);
    row("OA (%)", tc.oa, fc.oa, 1.0);
    row("Kappa x 100", tc.kappa, fc.kappa, 100.0);
    row("AA (%)", tc.aa, fc.aa, 1.0);
    return out;
}

CvReport monte_carlo_cv(const RunConfig& rc, const Dataset& data, std::int64_t folds, const LogFn& log) {
    if (folds < 1) throw std::invalid_argument("cv: folds must be >= 1");
    CvReport report;
    report.name = rc.name;
    report.classes = rc.n_classes;
    report.seed = rc.seed;
    for (std::int64_t f = 0; f < folds; ++f) {
        if (log) log(fmt::format("fold {}/{}", f + 1, folds));
        report.folds.push_back(run_fold(rc, data, rc.seed + static_cast<std::uint64_t>(f), log).result);
    }
    return report;
}

}  // namespace amber
