#include "fitpath/compression.hpp"

#include <array>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "fitpath/errors.hpp"
#include "fitpath/model.hpp"
#include "binio.hpp"

namespace fitpath {

using ordered_json = nlohmann::ordered_json;

double signed_qmax(int bits) { return std::ldexp(1.0, bits - 1) - 1.0; }
double unsigned_qmax(int bits) { return std::ldexp(1.0, bits) - 1.0; }

static void check_bits(const char* where, int bits) {
    if (bits < 2) {
        throw ConfigError(std::string(where) + ": bit-width must be >= 2, got " +
                          std::to_string(bits));
    }
}

double weight_quant_scale(const Tensor& t, int bits) {
    check_bits("weight_quant_scale", bits);
    if (bits >= 32) return 0.0;
    return t.max_abs() / signed_qmax(bits);
}

Tensor quantize_weights(const Tensor& t, int bits) {
    check_bits("quantize_weights", bits);
    if (bits >= 32) return t;
    const double qmax = signed_qmax(bits);
    const double s = t.max_abs() / qmax;
    if (s == 0.0) return t;
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double q = std::round(t[i] / s);
        q = std::min(std::max(q, -qmax), qmax);
        out[i] = q * s;
    }
    return out;
}

Tensor quantize_acts(const Tensor& t, int bits, double calib_max) {
    check_bits("quantize_acts", bits);
    if (bits >= 32) return t;
    Tensor out(t.shape());
    if (calib_max <= 0.0) return out;
    const double qmax = unsigned_qmax(bits);
    const double s = calib_max / qmax;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double q = std::round(t[i] / s);
        q = std::min(std::max(q, 0.0), qmax);
        out[i] = q * s;
    }
    return out;
}

Tensor quantize_acts_signed(const Tensor& t, int bits, double calib_max) {
    check_bits("quantize_acts_signed", bits);
    if (bits >= 32) return t;
    Tensor out(t.shape());
    if (calib_max <= 0.0) return out;
    const double qmax = signed_qmax(bits);
    const double s = calib_max / qmax;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double q = std::round(t[i] / s);
        q = std::min(std::max(q, -qmax), qmax);
        out[i] = q * s;
    }
    return out;
}

Tensor apply_keep_mask(const Tensor& t, const KeepMask& mask) {
    if (static_cast<std::int64_t>(mask.size()) != t.numel()) {
        throw ShapeError("apply_keep_mask: mask size " + std::to_string(mask.size()) +
                         " vs tensor " + shape_str(t.shape()));
    }
    Tensor out(t.shape());
    for (std::int64_t i = 0; i < t.numel(); ++i) out[i] = mask[static_cast<size_t>(i)] ? t[i] : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// PruneMask

PruneMask::PruneMask(std::map<std::string, std::int64_t> layer_sizes) {
    for (const auto& [name, size] : layer_sizes) {
        layers_[name] = std::make_shared<KeepMask>(static_cast<size_t>(size), std::uint8_t{1});
    }
}

const KeepMask& PruneMask::layer(const std::string& name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw ConfigError("prune mask: unknown layer '" + name + "'");
    return *it->second;
}

std::shared_ptr<const KeepMask> PruneMask::layer_shared(const std::string& name) const {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw ConfigError("prune mask: unknown layer '" + name + "'");
    return it->second;
}

std::int64_t PruneMask::total_count() const {
    std::int64_t n = 0;
    for (const auto& [_, m] : layers_) n += static_cast<std::int64_t>(m->size());
    return n;
}

std::int64_t PruneMask::pruned_count() const {
    std::int64_t n = 0;
    for (const auto& [_, m] : layers_)
        for (auto b : *m) n += (b == 0);
    return n;
}

double PruneMask::sparsity() const {
    const auto total = total_count();
    return total == 0 ? 0.0 : static_cast<double>(pruned_count()) / static_cast<double>(total);
}

std::int64_t PruneMask::layer_pruned(const std::string& name) const {
    std::int64_t n = 0;
    for (auto b : layer(name)) n += (b == 0);
    return n;
}

std::int64_t PruneMask::layer_size(const std::string& name) const {
    return static_cast<std::int64_t>(layer(name).size());
}

void PruneMask::prune(const std::string& name, std::int64_t index) {
    auto it = layers_.find(name);
    if (it == layers_.end()) throw ConfigError("prune mask: unknown layer '" + name + "'");
    KeepMask& m = *it->second;
    if (index < 0 || index >= static_cast<std::int64_t>(m.size())) {
        throw ConfigError("prune mask: index " + std::to_string(index) + " out of range for '" +
                          name + "'");
    }
    if (!m[static_cast<size_t>(index)]) {
        throw ConfigError("prune mask: weight already pruned ('" + name + "'[" +
                          std::to_string(index) + "]); masks must be nested");
    }
    m[static_cast<size_t>(index)] = 0;
}

static std::vector<std::uint8_t> pack_mask_payload(
    const std::map<std::string, std::shared_ptr<KeepMask>>& layers) {
    std::vector<std::uint8_t> payload;
    for (const auto& [_, m] : layers) {
        std::vector<std::uint8_t> packed((m->size() + 7) / 8, 0);
        for (size_t i = 0; i < m->size(); ++i)
            if ((*m)[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
        payload.insert(payload.end(), packed.begin(), packed.end());
    }
    return payload;
}

void PruneMask::save(const std::string& path) const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), {'F', 'I', 'T', 'M'});
    binio::put_u32(out, 1);
    binio::put_u32(out, static_cast<std::uint32_t>(layers_.size()));
    for (const auto& [name, m] : layers_) {
        binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        binio::put_u64(out, m->size());
    }
    auto payload = pack_mask_payload(layers_);
    out.insert(out.end(), payload.begin(), payload.end());
    binio::put_u32(out, binio::crc32(payload.data(), payload.size()));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("mask: cannot write '" + path + "'");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
}

PruneMask PruneMask::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("mask: cannot read '" + path + "'");
    std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
    size_t pos = 0;
    auto need = [&](size_t n) {
        if (pos + n > buf.size()) throw CheckpointError("mask: truncated file '" + path + "'");
    };
    need(12);
    if (std::memcmp(buf.data(), "FITM", 4) != 0)
        throw CheckpointError("mask: bad magic in '" + path + "'");
    pos = 4;
    const auto version = binio::get_u32(buf.data() + pos); pos += 4;
    if (version != 1)
        throw CheckpointError("mask: unsupported version " + std::to_string(version));
    const auto layer_count = binio::get_u32(buf.data() + pos); pos += 4;
    PruneMask mask;
    std::vector<std::pair<std::string, std::uint64_t>> order;
    for (std::uint32_t l = 0; l < layer_count; ++l) {
        need(4);
        const auto len = binio::get_u32(buf.data() + pos); pos += 4;
        need(len + 8);
        std::string name(reinterpret_cast<const char*>(buf.data() + pos), len); pos += len;
        const auto bits = binio::get_u64(buf.data() + pos); pos += 8;
        order.emplace_back(std::move(name), bits);
    }
    const size_t payload_start = pos;
    for (const auto& [name, nbits] : order) {
        const size_t nbytes = (static_cast<size_t>(nbits) + 7) / 8;
        need(nbytes);
        auto m = std::make_shared<KeepMask>(static_cast<size_t>(nbits), std::uint8_t{0});
        for (size_t i = 0; i < nbits; ++i)
            (*m)[i] = (buf[pos + i / 8] >> (i % 8)) & 1u;
        pos += nbytes;
        mask.layers_[name] = std::move(m);
    }
    need(4);
    const auto stored = binio::get_u32(buf.data() + pos);
    const auto actual = binio::crc32(buf.data() + payload_start, pos - payload_start);
    if (stored != actual) throw CheckpointError("mask: CRC mismatch in '" + path + "' (corrupt)");
    return mask;
}

std::string PruneMask::digest() const {
    auto payload = pack_mask_payload(layers_);
    return binio::crc32_hex(payload.data(), payload.size());
}

// ---------------------------------------------------------------------------
// CompressionConfig

CompressionConfig CompressionConfig::identity(const Model& model) {
    CompressionConfig c;
    std::map<std::string, std::int64_t> sizes;
    for (const auto& layer : model.quantizable_layers()) {
        c.weight_bits[layer] = 32;
        c.act_bits[layer] = 32;
    }
    for (const auto& layer : model.prunable_layers()) {
        sizes[layer] = model.param(layer + ".weight").numel();
    }
    c.mask = PruneMask(std::move(sizes));
    return c;
}

bool CompressionConfig::is_identity() const {
    for (const auto& [_, b] : weight_bits)
        if (b < 32) return false;
    for (const auto& [_, b] : act_bits)
        if (b < 32) return false;
    return mask.pruned_count() == 0;
}

int CompressionConfig::w_bits(const std::string& layer) const {
    auto it = weight_bits.find(layer);
    if (it == weight_bits.end()) throw ConfigError("config: no weight bits for layer '" + layer + "'");
    return it->second;
}

int CompressionConfig::a_bits(const std::string& layer) const {
    auto it = act_bits.find(layer);
    if (it == act_bits.end()) throw ConfigError("config: no act bits for layer '" + layer + "'");
    return it->second;
}

std::string CompressionConfig::to_json() const {
    ordered_json j;
    ordered_json layers = ordered_json::object();
    for (const auto& [name, wb] : weight_bits) {
        ordered_json entry;
        entry["w_bits"] = wb;
        auto it = act_bits.find(name);
        entry["a_bits"] = it == act_bits.end() ? 32 : it->second;
        layers[name] = entry;
    }
    j["layers"] = layers;
    j["kappa_index"] = kappa_index;
    j["sparsity"] = mask.sparsity();
    j["mask_digest"] = mask.digest();
    return j.dump(2) + "\n";
}

void CompressionConfig::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("config: cannot write '" + path + "'");
    f << to_json();
    if (!mask.layers().empty()) mask.save(path + ".mask");
}

CompressionConfig CompressionConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("config: cannot read '" + path + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    CompressionConfig c;
    try {
        for (const auto& [name, entry] : j.at("layers").items()) {
            c.weight_bits[name] = entry.at("w_bits").get<int>();
            c.act_bits[name] = entry.at("a_bits").get<int>();
        }
        c.kappa_index = j.at("kappa_index").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: bad schema in '" + path + "': " + e.what());
    }
    std::ifstream mf(path + ".mask");
    if (mf.good()) {
        mf.close();
        c.mask = PruneMask::load(path + ".mask");
        const auto digest = j.value("mask_digest", std::string());
        if (!digest.empty() && digest != c.mask.digest()) {
            throw CheckpointError("config: mask digest mismatch for '" + path + "'");
        }
    } else if (c.kappa_index > 0) {
        throw ConfigError("config: '" + path + "' has kappa_index > 0 but no mask sidecar");
    }
    return c;
}

// ---------------------------------------------------------------------------
// apply_config

ApplyResult apply_config(const Model& model, const CompressionConfig& config,
                         const PruneMask* previous_mask) {
    ApplyResult res;
    for (const auto& name : model.quantizable_layers()) {
        if (!config.weight_bits.count(name)) {
            throw ConfigError("apply_config: config is missing layer '" + name + "'");
        }
    }
    for (const auto& [name, _] : config.weight_bits) {
        if (!model.has_param(name + ".weight")) {
            throw ConfigError("apply_config: model has no layer '" + name + "'");
        }
    }
    for (const auto& name : model.quantizable_layers()) {
        const Tensor& latent = model.param(name + ".weight");
        const bool has_mask = config.mask.has_layer(name);
        Tensor masked = has_mask ? apply_keep_mask(latent, config.mask.layer(name)) : latent;
        Tensor effective = quantize_weights(masked, config.w_bits(name));

        Tensor qd(latent.shape());
        for (std::int64_t i = 0; i < latent.numel(); ++i) qd[i] = effective[i] - masked[i];
        res.quant_delta[name] = std::move(qd);

        if (previous_mask && has_mask) {
            const KeepMask& now = config.mask.layer(name);
            const KeepMask& before = previous_mask->layer(name);
            Tensor pd(latent.shape());
            for (std::int64_t i = 0; i < latent.numel(); ++i) {
                if (before[static_cast<size_t>(i)] && !now[static_cast<size_t>(i)]) pd[i] = latent[i];
            }
            res.prune_delta[name] = std::move(pd);
        }
        res.effective[name] = std::move(effective);
    }
    return res;
}

}  // namespace fitpath
