#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "ptrl/error.hpp"
#include "ptrl/freeze.hpp"
#include "ptrl/net.hpp"

namespace ptrl {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'P', 'T', 'R', 'L'};

/// Provenance carried alongside the parameters.
struct CheckpointMeta {
    std::string robot_name;
    std::uint64_t iterations = 0;
    std::uint64_t seed = 0;

    bool operator==(const CheckpointMeta&) const = default;
};

// ---------------------------------------------------------------------------
// Checkpoint file layout (all integers and floats little-endian):
//   magic "PTRL" | u32 version
//   u32 name_len | name bytes | u64 iterations | u64 seed
//   actor shape:  u32 input | u32 n_hidden | n_hidden * u32 | u32 output
//   critic shape: same encoding
//   actor blocks in order (input, L1, L2, output): weight row-major f64,
//   then bias f64; actor log-std f64; critic blocks likewise.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
public:
    ByteReader(const std::string& data, const std::string& path)
        : data_(data), path_(path) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool exhausted() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) {
        if (pos_ + n > data_.size())
            throw CheckpointError("corrupt checkpoint '" + path_ + "': truncated at byte " +
                                  std::to_string(pos_));
    }

    const std::string& data_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline void put_shape(std::string& out, const MlpShape& s) {
    put_u32(out, std::uint32_t(s.input_dim));
    put_u32(out, std::uint32_t(s.hidden.size()));
    for (int h : s.hidden) put_u32(out, std::uint32_t(h));
    put_u32(out, std::uint32_t(s.output_dim));
}

inline MlpShape read_shape(ByteReader& r, const std::string& path) {
    MlpShape s;
    s.input_dim = int(r.u32());
    const std::uint32_t n_hidden = r.u32();
    if (n_hidden > 64)
        throw CheckpointError("corrupt checkpoint '" + path + "': implausible hidden count " +
                              std::to_string(n_hidden));
    s.hidden.clear();
    for (std::uint32_t i = 0; i < n_hidden; ++i) s.hidden.push_back(int(r.u32()));
    s.output_dim = int(r.u32());
    return s;
}

}  // namespace detail

/// Writes a bit-exact checkpoint; the file is staged to a temporary name and
/// renamed so readers never observe partial contents.
inline void save_checkpoint(const ActorCriticParams& params, const CheckpointMeta& meta,
                            const std::filesystem::path& path) {
    std::string out;
    out.append(kCheckpointMagic, 4);
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, std::uint32_t(meta.robot_name.size()));
    out.append(meta.robot_name);
    detail::put_u64(out, meta.iterations);
    detail::put_u64(out, meta.seed);
    detail::put_shape(out, params.actor_shape());
    detail::put_shape(out, params.critic_shape());
    for (const auto& b : params.actor) {
        for (double w : b.weight) detail::put_f64(out, w);
        for (double v : b.bias) detail::put_f64(out, v);
    }
    for (double v : params.actor_log_std) detail::put_f64(out, v);
    for (const auto& b : params.critic) {
        for (double w : b.weight) detail::put_f64(out, w);
        for (double v : b.bias) detail::put_f64(out, v);
    }

    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw CheckpointError("cannot open '" + tmp.string() + "' for writing");
        f.write(out.data(), std::streamsize(out.size()));
        if (!f) throw CheckpointError("short write to '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

/// Validates magic, version, and shape consistency before any parameter
/// array is materialized.
inline std::pair<ActorCriticParams, CheckpointMeta> load_checkpoint(
    const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::ByteReader r(data, path.string());
    const std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
        throw CheckpointError("corrupt checkpoint '" + path.string() + "': bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw CheckpointError("checkpoint '" + path.string() + "' has version " +
                              std::to_string(version) + ", this build reads version " +
                              std::to_string(kCheckpointVersion));

    CheckpointMeta meta;
    const std::uint32_t name_len = r.u32();
    if (name_len > 4096)
        throw CheckpointError("corrupt checkpoint '" + path.string() + "': implausible name length");
    meta.robot_name = r.bytes(name_len);
    meta.iterations = r.u64();
    meta.seed = r.u64();

    const MlpShape actor_shape = detail::read_shape(r, path.string());
    const MlpShape critic_shape = detail::read_shape(r, path.string());
    try {
        actor_shape.validate();
        critic_shape.validate();
    } catch (const ConfigError& e) {
        throw CheckpointError("invalid checkpoint '" + path.string() + "': " + e.what());
    }

    // The remaining payload size is fully determined by the shapes; check it
    // before allocating anything.
    const std::int64_t expected_doubles = actor_shape.weight_param_count() +
                                          actor_shape.output_dim +
                                          critic_shape.weight_param_count();
    if (std::int64_t(r.remaining()) != expected_doubles * 8)
        throw CheckpointError("corrupt checkpoint '" + path.string() + "': payload is " +
                              std::to_string(r.remaining()) + " bytes, shapes require " +
                              std::to_string(expected_doubles * 8));

    ActorCriticParams p;
    auto read_net = [&r](const MlpShape& shape) {
        std::vector<LayerBlock> layers;
        for (auto [fi, fo] : shape.layer_dims()) {
            LayerBlock b = LayerBlock::zeros(fi, fo);
            for (auto& w : b.weight) w = r.f64();
            for (auto& v : b.bias) v = r.f64();
            layers.push_back(std::move(b));
        }
        return layers;
    };
    p.actor = read_net(actor_shape);
    p.actor_log_std.resize(actor_shape.output_dim);
    for (auto& v : p.actor_log_std) v = r.f64();
    p.critic = read_net(critic_shape);

    if (!r.exhausted())
        throw CheckpointError("corrupt checkpoint '" + path.string() + "': trailing bytes");
    return {std::move(p), std::move(meta)};
}

/// Initializes a target network from a source: hidden-to-hidden actor blocks
/// are copied bit-exactly, input/output blocks and the log-std are freshly
/// seeded (their dimensions are robot-specific), and the critic is always
/// fresh. With copy_io_when_matching set, an input or output block whose
/// dimensions happen to match is copied as well.
inline ActorCriticParams transfer_actor(const ActorCriticParams& source,
                                        const MlpShape& target_actor_shape,
                                        const MlpShape& target_critic_shape,
                                        std::uint64_t seed,
                                        bool copy_io_when_matching = false) {
    target_actor_shape.validate();
    target_critic_shape.validate();
    const MlpShape src_shape = source.actor_shape();
    if (src_shape.hidden != target_actor_shape.hidden) {
        auto fmt = [](const std::vector<int>& v) {
            std::string s = "[";
            for (std::size_t i = 0; i < v.size(); ++i)
                s += (i ? "," : "") + std::to_string(v[i]);
            return s + "]";
        };
        throw IncompatibleTransferError("hidden widths differ: source " +
                                        fmt(src_shape.hidden) + " vs target " +
                                        fmt(target_actor_shape.hidden));
    }

    ActorCriticParams target = init_params(target_actor_shape, target_critic_shape, seed);
    const std::size_t n_blocks = target.actor.size();
    for (std::size_t i = 1; i + 1 < n_blocks; ++i) target.actor[i] = source.actor[i];
    if (copy_io_when_matching) {
        if (source.actor.front().fan_in == target.actor.front().fan_in)
            target.actor.front() = source.actor.front();
        if (source.actor.back().fan_out == target.actor.back().fan_out)
            target.actor.back() = source.actor.back();
    }
    return target;
}

/// Actor parameters left trainable under a freeze spec (weights + biases +
/// log-std). The critic is always fully trainable and counted separately.
inline std::int64_t trainable_param_count(const ActorCriticParams& params,
                                          const FreezeSpec& spec) {
    std::int64_t n = params.actor_param_count();
    for (int idx : spec.frozen_blocks) {
        if (idx < 1 || idx > int(params.actor.size()) - 2)
            throw ConfigError("trainable_param_count: invalid frozen block " +
                              std::to_string(idx));
        n -= params.actor[idx].param_count();
    }
    return n;
}

struct MmdConfig {
    /// RBF kernel bandwidth; when unset, the median of the pooled pairwise
    /// distances is used.
    std::optional<double> bandwidth;
    /// Weight of the discrepancy term in a combined transfer loss. Recorded
    /// for completeness; the diagnostic below never feeds a loss.
    double lambda_mmd = 0.0;
};

/// Biased squared-MMD estimate with an RBF kernel
/// k(x,y) = exp(-|x-y|^2 / (2 h^2)); negative round-off is clamped to zero.
/// The two sets are ordered canonically before accumulation so that swapping
/// the arguments yields the identical floating-point value.
inline double mmd(const std::vector<std::vector<double>>& samples_a,
                  const std::vector<std::vector<double>>& samples_b,
                  const MmdConfig& cfg = {}) {
    if (samples_a.empty() || samples_b.empty())
        throw InputError("mmd: sample sets must be non-empty");
    const bool swap_args = samples_b < samples_a;
    const auto& samples_s = swap_args ? samples_b : samples_a;
    const auto& samples_t = swap_args ? samples_a : samples_b;
    const std::size_t dim = samples_s.front().size();
    for (const auto& v : samples_s)
        if (v.size() != dim) throw InputError("mmd: inconsistent sample dimensions");
    for (const auto& v : samples_t)
        if (v.size() != dim) throw InputError("mmd: inconsistent sample dimensions");

    auto sqdist = [dim](const std::vector<double>& a, const std::vector<double>& b) {
        double d = 0.0;
        for (std::size_t k = 0; k < dim; ++k) {
            const double diff = a[k] - b[k];
            d += diff * diff;
        }
        return d;
    };

    double h;
    if (cfg.bandwidth) {
        if (*cfg.bandwidth <= 0.0) throw InputError("mmd: bandwidth must be positive");
        h = *cfg.bandwidth;
    } else {
        // Median heuristic over the pooled set.
        std::vector<std::vector<double>> pooled = samples_s;
        pooled.insert(pooled.end(), samples_t.begin(), samples_t.end());
        std::vector<double> dists;
        for (std::size_t i = 0; i < pooled.size(); ++i)
            for (std::size_t j = i + 1; j < pooled.size(); ++j)
                dists.push_back(std::sqrt(sqdist(pooled[i], pooled[j])));
        if (dists.empty()) return 0.0;
        std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
        h = dists[dists.size() / 2];
        if (h <= 0.0) h = 1.0;  // degenerate: all points coincide
    }
    const double inv_2h2 = 1.0 / (2.0 * h * h);

    auto mean_kernel = [&](const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b) {
        double sum = 0.0;
        for (const auto& x : a)
            for (const auto& y : b) sum += std::exp(-sqdist(x, y) * inv_2h2);
        return sum / (double(a.size()) * double(b.size()));
    };

    const double value = mean_kernel(samples_s, samples_s) + mean_kernel(samples_t, samples_t) -
                         2.0 * mean_kernel(samples_s, samples_t);
    return value < 0.0 ? 0.0 : value;
}

}  // namespace ptrl
