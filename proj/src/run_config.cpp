#include "amber/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace amber {

using ojson = nlohmann::ordered_json;

namespace {

void check_keys(const ojson& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError("unknown key '" + (where.empty() ? key : where + "." + key) + "'");
}

template <typename V>
V get(const ojson& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ConfigError("missing required key '" + (where.empty() ? std::string(key) : where + "." + key) + "'");
    try {
        return j.at(key).get<V>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("key '" + (where.empty() ? std::string(key) : where + "." + key) + "' has the wrong type");
    }
}

template <typename V>
V get_or(const ojson& j, const char* key, V fallback, const std::string& where) {
    return j.contains(key) ? get<V>(j, key, where) : fallback;
}

ModelConfig parse_model(const ojson& m, std::int64_t bands, std::int64_t n_classes, std::int64_t crop) {
    check_keys(m, "model", {"preset", "schedule", "channels", "blocks", "heads", "reduction", "ffn_expansion",
                            "decoder_channels"});
    const auto preset = get_or<std::string>(m, "preset", "standard", "model");
    StrideSchedule schedule;
    try {
        schedule = parse_stride_schedule(get_or<std::string>(m, "schedule", "preserving", "model"));
    } catch (const std::exception& e) {
        throw ConfigError(std::string("model.schedule: ") + e.what());
    }
    ModelConfig cfg;
    if (preset == "standard")
        cfg = ModelConfig::standard(bands, n_classes, schedule);
    else if (preset == "tiny")
        cfg = ModelConfig::tiny(bands, n_classes, schedule);
    else
        throw ConfigError("model.preset must be 'standard' or 'tiny', got '" + preset + "'");
    cfg.crop = crop;

    std::vector<std::int64_t> c, l, h, r;
    for (const auto& s : cfg.encoder.stages) {
        c.push_back(s.channels);
        l.push_back(s.blocks);
        h.push_back(s.heads);
        r.push_back(s.reduction);
    }
    c = get_or(m, "channels", c, "model");
    l = get_or(m, "blocks", l, "model");
    h = get_or(m, "heads", h, "model");
    r = get_or(m, "reduction", r, "model");
    const auto expansion = get_or<std::int64_t>(m, "ffn_expansion", cfg.encoder.ffn_expansion, "model");
    try {
        cfg.encoder = EncoderConfig::make(schedule, c, l, h, r);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    cfg.encoder.ffn_expansion = expansion;
    cfg.decoder_channels = get_or<std::int64_t>(m, "decoder_channels", cfg.decoder_channels, "model");
    try {
        cfg.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("model: ") + e.what());
    }
    return cfg;
}

}  // namespace

RunConfig RunConfig::from_json(const ojson& j) {
    check_keys(j, "", {"name", "data", "synthetic", "bands", "n_classes", "sampling", "rebalance", "seed", "model",
                       "train", "eval", "output"});
    RunConfig rc;
    rc.document = j;
    rc.name = get_or<std::string>(j, "name", "run", "");
    rc.seed = get<std::uint64_t>(j, "seed", "");
    rc.n_classes = get<std::int64_t>(j, "n_classes", "");
    rc.bands = get<std::int64_t>(j, "bands", "");
    if (rc.n_classes < 2) throw ConfigError("n_classes must be >= 2");
    if (rc.bands < 1) throw ConfigError("bands must be >= 1");

    if (j.contains("data") == j.contains("synthetic"))
        throw ConfigError("exactly one of 'data' and 'synthetic' must be given");
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, "data", {"cube", "labels"});
        rc.cube = get<std::string>(d, "cube", "data");
        rc.labels = get<std::string>(d, "labels", "data");
    } else {
        const auto& s = j.at("synthetic");
        check_keys(s, "synthetic", {"classes", "bands", "height", "width", "noise", "seed"});
        SyntheticSpec sp;
        sp.classes = get_or(s, "classes", rc.n_classes, "synthetic");
        sp.bands = get_or(s, "bands", rc.bands, "synthetic");
        sp.height = get<std::int64_t>(s, "height", "synthetic");
        sp.width = get<std::int64_t>(s, "width", "synthetic");
        sp.noise = get<double>(s, "noise", "synthetic");
        sp.seed = get<std::uint64_t>(s, "seed", "synthetic");
        if (sp.classes != rc.n_classes) throw ConfigError("synthetic.classes differs from n_classes");
        if (sp.bands != rc.bands) throw ConfigError("synthetic.bands differs from bands");
        if (sp.height < 1 || sp.width < 1 || sp.noise < 0) throw ConfigError("synthetic extents/noise out of range");
        rc.synthetic = sp;
    }

    const auto& s = j.contains("sampling") ? j.at("sampling") : ojson::object();
    check_keys(s, "sampling", {"patches", "train_fraction", "crop_size"});
    rc.patches = get<std::int64_t>(s, "patches", "sampling");
    rc.train_fraction = get_or(s, "train_fraction", 0.2, "sampling");
    rc.crop = get_or<std::int64_t>(s, "crop_size", kCropSize, "sampling");
    if (rc.patches < 1) throw ConfigError("sampling.patches must be >= 1");
    if (!(rc.train_fraction > 0 && rc.train_fraction <= 1)) throw ConfigError("sampling.train_fraction must lie in (0, 1]");
    if (rc.crop < 2 || rc.crop % 2) throw ConfigError("sampling.crop_size must be even and >= 2");

    if (j.contains("rebalance")) {
        const auto& r = j.at("rebalance");
        check_keys(r, "rebalance", {"class_id", "pixels", "seed"});
        RebalanceSpec rb;
        rb.class_id = get<std::uint16_t>(r, "class_id", "rebalance");
        rb.pixels = get<std::int64_t>(r, "pixels", "rebalance");
        rb.seed = get_or<std::uint64_t>(r, "seed", rc.seed, "rebalance");
        if (rb.class_id < 1 || rb.class_id > rc.n_classes) throw ConfigError("rebalance.class_id out of range");
        if (rb.pixels < 0) throw ConfigError("rebalance.pixels must be >= 0");
        rc.rebalance = rb;
    }

    rc.model = parse_model(j.contains("model") ? j.at("model") : ojson::object(), rc.bands, rc.n_classes, rc.crop);

    const auto& t = j.contains("train") ? j.at("train") : ojson::object();
    check_keys(t, "train", {"batch_size", "epochs", "learning_rate", "momentum", "flip"});
    rc.train.batch_size = get<std::int64_t>(t, "batch_size", "train");
    rc.train.epochs = get<std::int64_t>(t, "epochs", "train");
    rc.train.learning_rate = get_or(t, "learning_rate", 0.01, "train");
    rc.train.momentum = get_or(t, "momentum", 0.0, "train");
    rc.train.flip = get_or(t, "flip", true, "train");
    rc.train.seed = rc.seed;
    try {
        rc.train.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }

    const auto& e = j.contains("eval") ? j.at("eval") : ojson::object();
    check_keys(e, "eval", {"full_map", "micro_batch"});
    rc.full_map = get_or(e, "full_map", true, "eval");
    rc.micro_batch = get_or<std::int64_t>(e, "micro_batch", 8, "eval");
    if (rc.micro_batch < 1) throw ConfigError("eval.micro_batch must be >= 1");

    rc.output = get_or<std::string>(j, "output", "runs/" + rc.name, "");
    return rc;
}

ojson RunConfig::read_document(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    try {
        return ojson::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
}

void set_config_value(ojson& doc, const std::string& dotted_key, const ojson& value) {
    ojson* node = &doc;
    std::stringstream ss(dotted_key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) (*node)[parts[i]] = ojson::object();
        node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = value;
}

}  // namespace amber
