#include "fitpath/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fitpath/errors.hpp"
#include "binio.hpp"

namespace fitpath {

using ordered_json = nlohmann::ordered_json;

namespace {
constexpr std::uint32_t kVersion = 1;

ordered_json spec_to_json(const LayerSpec& s) {
    ordered_json j;
    j["name"] = s.name;
    j["kind"] = layer_kind_name(s.kind);
    switch (s.kind) {
        case LayerKind::Conv2d:
            j["in_ch"] = s.in_ch;
            j["out_ch"] = s.out_ch;
            j["kernel"] = s.kernel;
            j["stride"] = s.stride;
            j["pad"] = s.pad;
            break;
        case LayerKind::Dense:
            j["in_features"] = s.in_features;
            j["out_features"] = s.out_features;
            break;
        case LayerKind::MaxPool:
            j["pool"] = s.pool;
            j["pool_stride"] = s.pool_stride;
            break;
        default:
            break;
    }
    j["prunable"] = s.prunable;
    return j;
}

LayerSpec spec_from_json(const ordered_json& j) {
    LayerSpec s;
    s.name = j.at("name").get<std::string>();
    s.kind = layer_kind_from_name(j.at("kind").get<std::string>());
    switch (s.kind) {
        case LayerKind::Conv2d:
            s.in_ch = j.at("in_ch").get<int>();
            s.out_ch = j.at("out_ch").get<int>();
            s.kernel = j.at("kernel").get<int>();
            s.stride = j.at("stride").get<int>();
            s.pad = j.at("pad").get<int>();
            break;
        case LayerKind::Dense:
            s.in_features = j.at("in_features").get<std::int64_t>();
            s.out_features = j.at("out_features").get<std::int64_t>();
            break;
        case LayerKind::MaxPool:
            s.pool = j.at("pool").get<int>();
            s.pool_stride = j.at("pool_stride").get<int>();
            break;
        default:
            break;
    }
    s.prunable = j.value("prunable", false);
    return s;
}
}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    ordered_json header;
    header["input_shape"] = model.input_shape();
    ordered_json layers = ordered_json::array();
    for (const auto& spec : model.layers()) layers.push_back(spec_to_json(spec));
    header["layers"] = layers;
    ordered_json tensors = ordered_json::array();
    for (const auto& [name, t] : model.params()) {
        ordered_json e;
        e["name"] = name;
        e["shape"] = t.shape();
        tensors.push_back(e);
    }
    header["tensors"] = tensors;
    ordered_json meta = ordered_json::object();
    for (const auto& [k, v] : model.meta()) meta[k] = v;
    header["meta"] = meta;
    const std::string header_str = header.dump();

    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'F', 'I', 'T', 'C'});
    binio::put_u32(out, kVersion);
    binio::put_u64(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    for (const auto& [name, t] : model.params()) {
        (void)name;
        for (std::int64_t i = 0; i < t.numel(); ++i) binio::put_f64(out, t[i]);
    }
    binio::put_u32(out, binio::crc32(out.data(), out.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("checkpoint: cannot write '" + path + "'");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("checkpoint: short write to '" + path + "'");
}

Model load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("checkpoint: cannot read '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    if (buf.size() < 20) throw CheckpointError("checkpoint: truncated file '" + path + "'");
    if (std::memcmp(buf.data(), "FITC", 4) != 0) {
        throw CheckpointError("checkpoint: bad magic in '" + path + "'");
    }
    const auto version = binio::get_u32(buf.data() + 4);
    if (version != kVersion) {
        throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version) +
                              " in '" + path + "'");
    }
    const auto stored_crc = binio::get_u32(buf.data() + buf.size() - 4);
    const auto actual_crc = binio::crc32(buf.data(), buf.size() - 4);
    if (stored_crc != actual_crc) {
        throw CheckpointError("checkpoint: CRC mismatch in '" + path + "' (corrupt file)");
    }

    const auto header_len = binio::get_u64(buf.data() + 8);
    size_t pos = 16;
    if (pos + header_len + 4 > buf.size()) {
        throw CheckpointError("checkpoint: truncated header in '" + path + "'");
    }
    ordered_json header;
    try {
        header = ordered_json::parse(buf.begin() + static_cast<std::ptrdiff_t>(pos),
                                     buf.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw CheckpointError("checkpoint: bad header JSON in '" + path + "': " + e.what());
    }
    pos += header_len;

    std::vector<LayerSpec> specs;
    for (const auto& j : header.at("layers")) specs.push_back(spec_from_json(j));
    Shape input_shape = header.at("input_shape").get<Shape>();
    Model model(std::move(specs), std::move(input_shape));

    for (const auto& e : header.at("tensors")) {
        const auto name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<Shape>();
        const auto n = shape_numel(shape);
        if (pos + static_cast<size_t>(n) * 8 + 4 > buf.size()) {
            throw CheckpointError("checkpoint: truncated payload in '" + path + "'");
        }
        std::vector<double> data(static_cast<size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) data[static_cast<size_t>(i)] =
            binio::get_f64(buf.data() + pos + static_cast<size_t>(i) * 8);
        pos += static_cast<size_t>(n) * 8;
        if (!model.has_param(name)) {
            throw CheckpointError("checkpoint: tensor '" + name + "' does not match any layer");
        }
        model.set_param(name, Tensor(shape, std::move(data)));
    }
    if (header.contains("meta")) {
        for (const auto& [k, v] : header.at("meta").items()) model.meta()[k] = v.get<double>();
    }
    return model;
}

}  // namespace fitpath
