#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

#include "amber/data.hpp"

namespace amber {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kMagic = "HSC1";
constexpr int kVersion = 1;
constexpr const char* kHeaderSuffix = ".hdr.json";

template <typename T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
}

template <typename T>
void write_payload(const fs::path& path, const std::vector<T>& values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    std::vector<T> le(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) le[i] = to_little(values[i]);
    out.write(reinterpret_cast<const char*>(le.data()), static_cast<std::streamsize>(le.size() * sizeof(T)));
    if (!out) throw FormatError("short write to " + path.string());
}

template <typename T>
std::vector<T> read_payload(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open payload " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != count * sizeof(T))
        throw FormatError("payload " + path.string() + " holds " + std::to_string(bytes.size()) +
                          " bytes, header extents need " + std::to_string(count * sizeof(T)));
    std::vector<T> out(count);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    for (auto& v : out) v = to_little(v);
    return out;
}

void write_header(const fs::path& path, const ojson& h) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    out << h.dump(2) << '\n';
}

ojson read_header(const fs::path& path, const std::string& dtype) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open header " + path.string());
    ojson h;
    try {
        h = ojson::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("header " + path.string() + ": " + e.what());
    }
    auto need = [&](const char* key) -> const ojson& {
        if (!h.contains(key)) throw FormatError("header " + path.string() + " lacks '" + key + "'");
        return h.at(key);
    };
    if (need("magic") != kMagic) throw FormatError("bad magic in " + path.string());
    if (h.contains("version") && h.at("version") != kVersion)
        throw FormatError("unsupported version in " + path.string());
    if (need("dtype") != dtype)
        throw FormatError("header " + path.string() + " has dtype " + need("dtype").dump() + ", expected " + dtype);
    if (need("layout") != "BSQ") throw FormatError("only BSQ layout is supported");
    if (need("endianness") != "little") throw FormatError("only little-endian payloads are supported");
    for (const char* key : {"bands", "height", "width"}) {
        const auto& v = need(key);
        if (!v.is_number_integer() || v.get<std::int64_t>() < 1)
            throw FormatError(std::string("header field '") + key + "' must be a positive integer");
    }
    return h;
}

ojson base_header(const char* dtype, std::int64_t d, std::int64_t h, std::int64_t w) {
    ojson j;
    j["magic"] = kMagic;
    j["version"] = kVersion;
    j["dtype"] = dtype;
    j["layout"] = "BSQ";
    j["bands"] = d;
    j["height"] = h;
    j["width"] = w;
    j["endianness"] = "little";
    return j;
}

}  // namespace

void HyperCube::validate() const {
    if (bands < 1 || height < 1 || width < 1) throw FormatError("cube extents must be positive");
    if (static_cast<std::int64_t>(values.size()) != bands * height * width)
        throw FormatError("cube holds " + std::to_string(values.size()) + " values, extents need " +
                          std::to_string(bands * height * width));
    for (float v : values)
        if (!std::isfinite(v)) throw FormatError("cube contains non-finite values");
    if (!wavelengths.empty() && static_cast<std::int64_t>(wavelengths.size()) != bands)
        throw FormatError("wavelength list length differs from band count");
}

std::uint16_t LabelMap::max_label() const {
    std::uint16_t m = 0;
    for (auto v : labels) m = std::max(m, v);
    return m;
}

std::int64_t LabelMap::count(std::uint16_t k) const {
    std::int64_t n = 0;
    for (auto v : labels) n += v == k;
    return n;
}

void LabelMap::validate(std::int64_t n_classes) const {
    if (height < 1 || width < 1) throw FormatError("label map extents must be positive");
    if (static_cast<std::int64_t>(labels.size()) != height * width) throw FormatError("label map size mismatch");
    if (n_classes > 0 && max_label() > n_classes)
        throw FormatError("label " + std::to_string(max_label()) + " exceeds class count " + std::to_string(n_classes));
}

fs::path payload_path(const fs::path& header) {
    auto name = header.filename().string();
    const std::string suffix = kHeaderSuffix;
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
        name.resize(name.size() - suffix.size());
    else
        name = header.stem().string();
    return header.parent_path() / (name + ".raw");
}

void write_cube(const HyperCube& cube, const fs::path& header) {
    cube.validate();
    auto h = base_header("f32", cube.bands, cube.height, cube.width);
    if (!cube.wavelengths.empty()) h["wavelengths"] = cube.wavelengths;
    write_payload(payload_path(header), cube.values);
    write_header(header, h);
}

HyperCube read_cube(const fs::path& header) {
    const auto h = read_header(header, "f32");
    HyperCube cube;
    cube.bands = h["bands"];
    cube.height = h["height"];
    cube.width = h["width"];
    if (h.contains("wavelengths")) cube.wavelengths = h["wavelengths"].get<std::vector<double>>();
    cube.values = read_payload<float>(payload_path(header),
                                      static_cast<std::size_t>(cube.bands * cube.height * cube.width));
    cube.validate();
    return cube;
}

void write_labels(const LabelMap& labels, const fs::path& header) {
    labels.validate(0);
    write_payload(payload_path(header), labels.labels);
    write_header(header, base_header("u16", 1, labels.height, labels.width));
}

LabelMap read_labels(const fs::path& header) {
    const auto h = read_header(header, "u16");
    if (h["bands"] != 1) throw FormatError("label map must have exactly one band");
    LabelMap labels;
    labels.height = h["height"];
    labels.width = h["width"];
    labels.labels = read_payload<std::uint16_t>(payload_path(header),
                                                static_cast<std::size_t>(labels.height * labels.width));
    return labels;
}

}  // namespace amber
