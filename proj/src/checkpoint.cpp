#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "amber/training.hpp"

namespace amber {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kManifest = "model.manifest.json";
constexpr const char* kPayload = "model.params.raw";
constexpr const char* kFormat = "amber-checkpoint";
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

template <typename V>
std::vector<V> get_list(const ojson& j, const char* key) {
    if (!j.contains(key) || !j.at(key).is_array()) throw std::invalid_argument(std::string("model: '") + key + "' must be a list");
    return j.at(key).get<std::vector<V>>();
}

}  // namespace

ojson model_config_to_json(const ModelConfig& cfg) {
    ojson j;
    j["bands"] = cfg.bands;
    j["crop"] = cfg.crop;
    j["n_classes"] = cfg.n_classes;
    j["schedule"] = to_string(cfg.schedule);
    std::vector<std::int64_t> c, l, h, r;
    for (const auto& s : cfg.encoder.stages) {
        c.push_back(s.channels);
        l.push_back(s.blocks);
        h.push_back(s.heads);
        r.push_back(s.reduction);
    }
    j["channels"] = c;
    j["blocks"] = l;
    j["heads"] = h;
    j["reduction"] = r;
    j["ffn_expansion"] = cfg.encoder.ffn_expansion;
    j["decoder_channels"] = cfg.decoder_channels;
    return j;
}

ModelConfig model_config_from_json(const ojson& j) {
    static const std::vector<std::string> known{"bands", "crop", "n_classes", "schedule", "channels", "blocks",
                                                "heads", "reduction", "ffn_expansion", "decoder_channels"};
    for (const auto& [key, value] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::invalid_argument("model: unknown key '" + key + "'");
    ModelConfig cfg;
    cfg.bands = j.at("bands").get<std::int64_t>();
    cfg.crop = j.value("crop", kCropSize);
    cfg.n_classes = j.at("n_classes").get<std::int64_t>();
    cfg.schedule = parse_stride_schedule(j.value("schedule", std::string("preserving")));
    cfg.encoder = EncoderConfig::make(cfg.schedule, get_list<std::int64_t>(j, "channels"),
                                      get_list<std::int64_t>(j, "blocks"), get_list<std::int64_t>(j, "heads"),
                                      get_list<std::int64_t>(j, "reduction"));
    cfg.encoder.ffn_expansion = j.value("ffn_expansion", std::int64_t{4});
    cfg.decoder_channels = j.value("decoder_channels", std::int64_t{256});
    cfg.validate();
    return cfg;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
    fs::create_directories(dir);
    const auto params = ckpt.model.parameters();
    ojson index = ojson::array();
    std::vector<float> payload;
    for (const auto& [name, t] : params) {
        ojson e;
        e["name"] = name;
        e["shape"] = t.shape();
        e["offset"] = payload.size() * sizeof(float);
        e["count"] = t.numel();
        index.push_back(e);
        payload.insert(payload.end(), t.data().begin(), t.data().end());
    }
    ojson m;
    m["format"] = kFormat;
    m["version"] = kVersion;
    m["config"] = ckpt.config;
    m["model"] = model_config_to_json(ckpt.model.config());
    m["band_stats"] = {{"mean", ckpt.stats.mean}, {"std", ckpt.stats.stddev}};
    m["loss_history"] = ckpt.loss_history;
    m["payload"] = kPayload;
    m["payload_bytes"] = payload.size() * sizeof(float);
    m["params"] = index;

    std::ofstream raw(dir / kPayload, std::ios::binary | std::ios::trunc);
    raw.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!raw) throw std::runtime_error("cannot write " + (dir / kPayload).string());
    std::ofstream man(dir / kManifest, std::ios::trunc);
    man << m.dump(2) << '\n';
    if (!man) throw std::runtime_error("cannot write " + (dir / kManifest).string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream man(dir / kManifest);
    if (!man) throw FormatError("cannot open " + (dir / kManifest).string());
    ojson m;
    try {
        m = ojson::parse(man);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint manifest: ") + e.what());
    }
    if (m.value("format", std::string()) != kFormat || m.value("version", 0) != kVersion)
        throw FormatError("not an amber checkpoint: " + dir.string());

    std::ifstream raw(dir / m.value("payload", std::string(kPayload)), std::ios::binary);
    if (!raw) throw FormatError("cannot open checkpoint payload in " + dir.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
    if (bytes.size() != m.at("payload_bytes").get<std::size_t>())
        throw FormatError("checkpoint payload length differs from the manifest");

    Checkpoint ck{AmberModel<float>(model_config_from_json(m.at("model")), 0), {}, {}, m.value("config", ojson::object())};
    ck.stats.mean = m.at("band_stats").at("mean").get<std::vector<double>>();
    ck.stats.stddev = m.at("band_stats").at("std").get<std::vector<double>>();
    ck.loss_history = m.value("loss_history", std::vector<double>{});

    auto params = ck.model.parameters();
    const auto& index = m.at("params");
    if (index.size() != params.size())
        throw FormatError("checkpoint lists " + std::to_string(index.size()) + " parameters, model has " +
                          std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& [name, t] = params[i];
        const auto& e = index[i];
        if (e.at("name") != name || e.at("shape").get<Shape>() != t.shape())
            throw FormatError("checkpoint parameter " + e.at("name").get<std::string>() + " does not match model " + name);
        const auto offset = e.at("offset").get<std::size_t>();
        const auto count = e.at("count").get<std::size_t>();
        if (count != static_cast<std::size_t>(t.numel()) || offset + count * sizeof(float) > bytes.size())
            throw FormatError("checkpoint parameter " + name + " lies outside the payload");
        std::memcpy(t.data().data(), bytes.data() + offset, count * sizeof(float));
    }
    return ck;
}

}  // namespace amber
