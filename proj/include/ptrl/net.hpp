#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "ptrl/error.hpp"
#include "ptrl/freeze.hpp"
#include "ptrl/rng.hpp"

namespace ptrl {

/// Layer widths of one MLP: input, an ordered list of hidden widths
/// (canonically [512, 256, 128]) and the output width.
struct MlpShape {
    int input_dim = 0;
    std::vector<int> hidden = {512, 256, 128};
    int output_dim = 0;

    void validate() const {
        if (input_dim < 1 || output_dim < 1)
            throw ConfigError("MlpShape: input and output dims must be >= 1");
        if (hidden.size() < 2)
            throw ConfigError("MlpShape: at least two hidden widths required");
        for (int h : hidden)
            if (h < 1) throw ConfigError("MlpShape: hidden widths must be >= 1");
    }

    /// (fan_in, fan_out) per weight block, input layer first.
    std::vector<std::pair<int, int>> layer_dims() const {
        std::vector<std::pair<int, int>> dims;
        int prev = input_dim;
        for (int h : hidden) {
            dims.emplace_back(prev, h);
            prev = h;
        }
        dims.emplace_back(prev, output_dim);
        return dims;
    }

    std::int64_t weight_param_count() const {
        std::int64_t n = 0;
        for (auto [fi, fo] : layer_dims()) n += std::int64_t(fi) * fo + fo;
        return n;
    }

    bool operator==(const MlpShape&) const = default;
};

/// One dense layer: weight stored row-major as fan_in x fan_out, plus bias.
struct LayerBlock {
    int fan_in = 0;
    int fan_out = 0;
    std::vector<double> weight;  // fan_in * fan_out
    std::vector<double> bias;    // fan_out

    static LayerBlock zeros(int fan_in, int fan_out) {
        LayerBlock b;
        b.fan_in = fan_in;
        b.fan_out = fan_out;
        b.weight.assign(std::size_t(fan_in) * fan_out, 0.0);
        b.bias.assign(fan_out, 0.0);
        return b;
    }

    std::int64_t param_count() const { return std::int64_t(fan_in) * fan_out + fan_out; }

    bool operator==(const LayerBlock&) const = default;
};

/// All parameters of the actor-critic pair. Actor blocks are indexed
/// 0..n-1 with block 1 = L1 and block 2 = L2 in the canonical four-block
/// layout; the log-std vector is state-independent.
struct ActorCriticParams {
    std::vector<LayerBlock> actor;
    std::vector<double> actor_log_std;
    std::vector<LayerBlock> critic;

    int obs_dim() const { return actor.empty() ? 0 : actor.front().fan_in; }
    int action_dim() const { return actor.empty() ? 0 : actor.back().fan_out; }

    MlpShape actor_shape() const { return shape_of(actor); }
    MlpShape critic_shape() const { return shape_of(critic); }

    std::int64_t actor_param_count() const {
        std::int64_t n = std::int64_t(actor_log_std.size());
        for (const auto& b : actor) n += b.param_count();
        return n;
    }
    std::int64_t critic_param_count() const {
        std::int64_t n = 0;
        for (const auto& b : critic) n += b.param_count();
        return n;
    }

    bool operator==(const ActorCriticParams&) const = default;

private:
    static MlpShape shape_of(const std::vector<LayerBlock>& layers) {
        MlpShape s;
        s.input_dim = layers.front().fan_in;
        s.hidden.clear();
        for (std::size_t i = 0; i + 1 < layers.size(); ++i)
            s.hidden.push_back(layers[i].fan_out);
        s.output_dim = layers.back().fan_out;
        return s;
    }
};

/// Partial derivatives of a scalar loss, structurally congruent to the
/// parameter set.
struct GradientSet {
    std::vector<LayerBlock> actor;
    std::vector<double> actor_log_std;
    std::vector<LayerBlock> critic;

    static GradientSet zeros_like(const ActorCriticParams& p) {
        GradientSet g;
        for (const auto& b : p.actor) g.actor.push_back(LayerBlock::zeros(b.fan_in, b.fan_out));
        g.actor_log_std.assign(p.actor_log_std.size(), 0.0);
        for (const auto& b : p.critic) g.critic.push_back(LayerBlock::zeros(b.fan_in, b.fan_out));
        return g;
    }

    void set_zero() {
        for (auto& b : actor) {
            std::fill(b.weight.begin(), b.weight.end(), 0.0);
            std::fill(b.bias.begin(), b.bias.end(), 0.0);
        }
        std::fill(actor_log_std.begin(), actor_log_std.end(), 0.0);
        for (auto& b : critic) {
            std::fill(b.weight.begin(), b.weight.end(), 0.0);
            std::fill(b.bias.begin(), b.bias.end(), 0.0);
        }
    }
};

inline double elu(double x) { return x >= 0.0 ? x : std::exp(x) - 1.0; }

// ELU is monotone with elu(0) = 0, so the derivative can be recovered from
// the activation value alone.
inline double elu_deriv_from_value(double a) { return a >= 0.0 ? 1.0 : a + 1.0; }

/// Seeded init: weights uniform in [-b, b] with b = sqrt(6 / (fan_in +
/// fan_out)), biases zero, log-std zero. Identical (shapes, seed) give
/// bit-identical parameters.
inline ActorCriticParams init_params(const MlpShape& actor_shape,
                                     const MlpShape& critic_shape,
                                     std::uint64_t seed) {
    actor_shape.validate();
    critic_shape.validate();

    Rng rng = Rng::stream(seed, /*tag=*/0x1a17);
    auto init_net = [&rng](const MlpShape& shape) {
        std::vector<LayerBlock> layers;
        for (auto [fi, fo] : shape.layer_dims()) {
            LayerBlock b = LayerBlock::zeros(fi, fo);
            double bound = std::sqrt(6.0 / double(fi + fo));
            for (auto& w : b.weight) w = rng.uniform(-bound, bound);
            layers.push_back(std::move(b));
        }
        return layers;
    };

    ActorCriticParams p;
    p.actor = init_net(actor_shape);
    p.actor_log_std.assign(actor_shape.output_dim, 0.0);
    p.critic = init_net(critic_shape);
    return p;
}

/// Post-activation values per layer, kept for the backward pass.
/// acts[0] is the input; acts[i] the output of layer i-1.
struct MlpCache {
    std::vector<std::vector<double>> acts;
};

namespace detail {

inline void layer_forward(const LayerBlock& layer, std::span<const double> x,
                          std::vector<double>& out, bool activate) {
    out.assign(layer.bias.begin(), layer.bias.end());
    for (int i = 0; i < layer.fan_in; ++i) {
        const double xi = x[i];
        const double* wrow = layer.weight.data() + std::size_t(i) * layer.fan_out;
        for (int j = 0; j < layer.fan_out; ++j) out[j] += xi * wrow[j];
    }
    if (activate)
        for (auto& v : out) v = elu(v);
}

}  // namespace detail

/// Forward pass: ELU on hidden layers, identity on the output layer. The
/// cache keeps post-activation values per layer and reuses its buffers
/// across calls; the returned span points into the cache.
inline std::span<const double> mlp_forward_cached(const std::vector<LayerBlock>& layers,
                                                  std::span<const double> input,
                                                  MlpCache& cache) {
    if (int(input.size()) != layers.front().fan_in)
        throw ShapeError("mlp_forward: input length " + std::to_string(input.size()) +
                         " != fan_in " + std::to_string(layers.front().fan_in));
    cache.acts.resize(layers.size() + 1);
    cache.acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < layers.size(); ++l)
        detail::layer_forward(layers[l], cache.acts[l], cache.acts[l + 1],
                              /*activate=*/l + 1 < layers.size());
    return cache.acts.back();
}

inline std::vector<double> mlp_forward(const std::vector<LayerBlock>& layers,
                                       std::span<const double> input,
                                       MlpCache* cache = nullptr) {
    MlpCache local;
    const auto out = mlp_forward_cached(layers, input, cache ? *cache : local);
    return {out.begin(), out.end()};
}

/// Accumulates dL/dW and dL/db for every layer into `grads`, given the
/// gradient of the loss w.r.t. the (identity) output layer.
inline void mlp_backward(const std::vector<LayerBlock>& layers, const MlpCache& cache,
                         std::span<const double> d_output,
                         std::vector<LayerBlock>& grads) {
    std::vector<double> delta(d_output.begin(), d_output.end());
    std::vector<double> delta_prev;
    for (int l = int(layers.size()) - 1; l >= 0; --l) {
        const LayerBlock& layer = layers[l];
        LayerBlock& grad = grads[l];
        const std::vector<double>& x = cache.acts[l];
        for (int j = 0; j < layer.fan_out; ++j) grad.bias[j] += delta[j];
        for (int i = 0; i < layer.fan_in; ++i) {
            const double xi = x[i];
            double* grow = grad.weight.data() + std::size_t(i) * layer.fan_out;
            for (int j = 0; j < layer.fan_out; ++j) grow[j] += xi * delta[j];
        }
        if (l == 0) break;
        delta_prev.assign(layer.fan_in, 0.0);
        for (int i = 0; i < layer.fan_in; ++i) {
            const double* wrow = layer.weight.data() + std::size_t(i) * layer.fan_out;
            double acc = 0.0;
            for (int j = 0; j < layer.fan_out; ++j) acc += wrow[j] * delta[j];
            // x is the post-ELU output of layer l-1.
            delta_prev[i] = acc * elu_deriv_from_value(x[i]);
        }
        delta.swap(delta_prev);
    }
}

/// Policy head: mean = MLP(obs), log-std returned as stored.
inline std::vector<double> actor_forward(const ActorCriticParams& params,
                                         std::span<const double> obs,
                                         MlpCache* cache = nullptr) {
    return mlp_forward(params.actor, obs, cache);
}

inline double critic_forward(const ActorCriticParams& params,
                             std::span<const double> obs,
                             MlpCache* cache = nullptr) {
    return mlp_forward(params.critic, obs, cache)[0];
}

struct LogProbEntropy {
    double log_prob = 0.0;
    double entropy = 0.0;
};

/// Diagonal-Gaussian log-density and differential entropy.
inline LogProbEntropy log_prob_and_entropy(std::span<const double> mean,
                                           std::span<const double> log_std,
                                           std::span<const double> action) {
    if (mean.size() != log_std.size() || mean.size() != action.size())
        throw ShapeError("log_prob_and_entropy: length mismatch");
    constexpr double half_log_2pi = 0.9189385332046727;  // 0.5 * log(2*pi)
    LogProbEntropy out;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const double std_i = std::exp(log_std[i]);
        const double z = (action[i] - mean[i]) / std_i;
        out.log_prob += -0.5 * z * z - log_std[i] - half_log_2pi;
        out.entropy += log_std[i] + half_log_2pi + 0.5;
    }
    return out;
}

/// Checks that every frozen index names a hidden-to-hidden block of an
/// actor with n_actor_blocks layers (input and output are never freezable).
inline void validate_freeze_spec(const FreezeSpec& spec, int n_actor_blocks) {
    for (int idx : spec.frozen_blocks)
        if (idx < 1 || idx > n_actor_blocks - 2)
            throw ConfigError("freeze spec: block " + std::to_string(idx) +
                              " is not a freezable hidden block (valid: 1.." +
                              std::to_string(n_actor_blocks - 2) + ")");
}

/// Zeroes the gradients of frozen actor blocks (weight and bias). The
/// critic and the log-std are never frozen.
inline void apply_freeze(GradientSet& grads, const FreezeSpec& spec) {
    validate_freeze_spec(spec, int(grads.actor.size()));
    for (int idx : spec.frozen_blocks) {
        auto& b = grads.actor[idx];
        std::fill(b.weight.begin(), b.weight.end(), 0.0);
        std::fill(b.bias.begin(), b.bias.end(), 0.0);
    }
}

}  // namespace ptrl
