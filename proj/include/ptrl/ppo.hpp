#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ptrl/envsim.hpp"
#include "ptrl/error.hpp"
#include "ptrl/freeze.hpp"
#include "ptrl/net.hpp"
#include "ptrl/rng.hpp"

namespace ptrl {

/// PPO hyperparameters. Defaults follow the training-environment table;
/// epoch/minibatch counts, the entropy coefficient, gradient clipping and
/// the KL target are artifact choices.
struct PpoConfig {
    double clip_eps = 0.2;
    double gamma = 0.998;
    double gae_lambda = 0.95;
    double value_loss_coef = 1.0;
    double entropy_coef = 0.01;
    double learning_rate = 1e-3;
    bool lr_adaptive = true;
    double desired_kl = 0.01;
    int epochs = 5;
    int minibatches = 4;
    double max_grad_norm = 1.0;
    int num_envs = 256;
    int steps_per_iter = 24;
    int iterations = 0;

    void validate() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("PpoConfig: gamma must be in (0, 1]");
        if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
            throw ConfigError("PpoConfig: gae_lambda must be in [0, 1]");
        if (!(clip_eps > 0.0)) throw ConfigError("PpoConfig: clip_eps must be positive");
        if (epochs < 1 || minibatches < 1)
            throw ConfigError("PpoConfig: epochs and minibatches must be >= 1");
        if (num_envs < 1 || steps_per_iter < 1)
            throw ConfigError("PpoConfig: num_envs and steps_per_iter must be >= 1");
        if (iterations < 0) throw ConfigError("PpoConfig: iterations must be >= 0");
        for (double c : {value_loss_coef, entropy_coef, learning_rate, desired_kl, max_grad_norm})
            if (!std::isfinite(c)) throw ConfigError("PpoConfig: non-finite coefficient");
    }
};

/// One collection phase across all environments, env-major layout:
/// flat index = env * steps + t.
struct RolloutBatch {
    int num_envs = 0;
    int steps = 0;
    int obs_dim = 0;
    int action_dim = 0;
    std::vector<double> obs;        // size * obs_dim
    std::vector<double> actions;    // size * action_dim
    std::vector<double> log_probs;  // behavior-policy density at collection time
    std::vector<double> values;
    std::vector<double> rewards;
    std::vector<std::uint8_t> dones;
    std::vector<double> bootstrap_values;  // per env, critic value of the final next state

    int size() const { return num_envs * steps; }

    void resize(int envs, int n_steps, int obs_d, int act_d) {
        num_envs = envs;
        steps = n_steps;
        obs_dim = obs_d;
        action_dim = act_d;
        const std::size_t n = std::size_t(envs) * n_steps;
        obs.resize(n * obs_d);
        actions.resize(n * act_d);
        log_probs.resize(n);
        values.resize(n);
        rewards.resize(n);
        dones.resize(n);
        bootstrap_values.resize(envs);
    }

    std::span<const double> obs_row(int i) const {
        return {obs.data() + std::size_t(i) * obs_dim, std::size_t(obs_dim)};
    }
    std::span<const double> action_row(int i) const {
        return {actions.data() + std::size_t(i) * action_dim, std::size_t(action_dim)};
    }
};

struct IterationMetrics {
    int iteration = 0;  // 1-based
    double mean_episode_reward = 0.0;
    std::array<double, kNumRewardTerms> reward_term_means{};  // weighted, per step
    double surrogate_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
    double learning_rate = 0.0;
    double wall_seconds = 0.0;  // cumulative
};

/// Backward GAE recursion over one environment's trajectory:
///   delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t
///   A_t     = delta_t + gamma lambda (1 - done_t) A_{t+1}
/// with V_{T} taken from the bootstrap value. Returns = advantages + values.
inline void compute_gae(std::span<const double> rewards, std::span<const double> values,
                        std::span<const std::uint8_t> dones, double bootstrap_value,
                        double gamma, double lam, std::span<double> advantages,
                        std::span<double> returns) {
    const std::size_t n = rewards.size();
    if (values.size() != n || dones.size() != n || advantages.size() != n || returns.size() != n)
        throw ShapeError("compute_gae: length mismatch");
    double next_adv = 0.0;
    double next_value = bootstrap_value;
    for (std::size_t t = n; t-- > 0;) {
        const double not_done = dones[t] ? 0.0 : 1.0;
        const double delta = rewards[t] + gamma * next_value * not_done - values[t];
        const double adv = delta + gamma * lam * not_done * next_adv;
        advantages[t] = adv;
        returns[t] = adv + values[t];
        next_adv = adv;
        next_value = values[t];
    }
}

inline std::pair<std::vector<double>, std::vector<double>> compute_gae(
    const std::vector<double>& rewards, const std::vector<double>& values,
    const std::vector<std::uint8_t>& dones, double bootstrap_value, double gamma, double lam) {
    std::vector<double> adv(rewards.size()), ret(rewards.size());
    compute_gae(rewards, values, dones, bootstrap_value, gamma, lam, adv, ret);
    return {std::move(adv), std::move(ret)};
}

/// Per-sample clipped surrogate objective (the loss is its negation,
/// averaged over the minibatch).
inline double ppo_surrogate(double ratio, double advantage, double clip_eps) {
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

/// KL-driven learning-rate rule: shrink when the update overshoots the
/// target divergence, grow when it undershoots, clamped to [1e-5, 1e-2].
inline double adapt_lr(double current_lr, double approx_kl, double desired_kl) {
    double lr = current_lr;
    if (approx_kl > 2.0 * desired_kl)
        lr /= 1.5;
    else if (approx_kl < 0.5 * desired_kl)
        lr *= 1.5;
    return std::clamp(lr, 1e-5, 1e-2);
}

struct UpdateStats {
    double surrogate_loss = 0.0;  // mean policy loss term, -mean(surrogate)
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;            // mean(logp_behavior - logp_new)
    double first_mean_ratio = 0.0;     // mean ratio of the first minibatch before any step
    int gradient_steps = 0;
};

/// Normalized advantages for the whole batch; zeros when there is no spread.
inline std::vector<double> normalize_advantages(std::span<const double> adv) {
    const std::size_t n = adv.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) return out;
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= double(n);
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double std_dev = std::sqrt(var / double(n - 1));
    if (std_dev == 0.0) return out;
    for (std::size_t i = 0; i < n; ++i) out[i] = (adv[i] - mean) / std_dev;
    return out;
}

/// Reusable buffers for ppo_loss_and_grad.
struct PpoLossWorkspace {
    MlpCache actor_cache;
    MlpCache critic_cache;
    std::vector<double> d_mean;
    std::vector<double> d_value;
};

struct PpoLossResult {
    double loss = 0.0;
    double surrogate_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double approx_kl = 0.0;
    double mean_ratio = 0.0;
};

/// Loss and analytic gradients of the PPO objective over one minibatch:
///   L = -mean(surrogate) + c_v mean((V - returns)^2) - c_e mean(entropy).
/// `grads` must be zeroed by the caller; normalized advantages and returns
/// are treated as constants.
inline PpoLossResult ppo_loss_and_grad(const ActorCriticParams& params,
                                       const RolloutBatch& batch,
                                       std::span<const int> indices,
                                       std::span<const double> norm_advantages,
                                       std::span<const double> returns,
                                       const PpoConfig& cfg, GradientSet& grads,
                                       PpoLossWorkspace& ws) {
    if (indices.empty()) return {};
    const int action_dim = batch.action_dim;
    const double inv_m = 1.0 / double(indices.size());
    std::span<const double> log_std(params.actor_log_std);

    PpoLossResult res;
    ws.d_mean.resize(action_dim);
    ws.d_value.resize(1);

    for (int idx : indices) {
        const auto obs = batch.obs_row(idx);
        const auto action = batch.action_row(idx);

        const auto mean = mlp_forward_cached(params.actor, obs, ws.actor_cache);
        const double value = mlp_forward_cached(params.critic, obs, ws.critic_cache)[0];
        const auto lp = log_prob_and_entropy(mean, log_std, action);

        const double adv = norm_advantages[idx];
        const double ratio = std::exp(lp.log_prob - batch.log_probs[idx]);
        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        const double unclipped_obj = ratio * adv;
        const double clipped_obj = clipped * adv;
        const double surrogate = std::min(unclipped_obj, clipped_obj);

        const double value_err = value - returns[idx];

        res.surrogate_loss += -surrogate;
        res.value_loss += value_err * value_err;
        res.entropy += lp.entropy;
        res.approx_kl += batch.log_probs[idx] - lp.log_prob;
        res.mean_ratio += ratio;

        // d(-surrogate)/d logp_new; zero when the clipped branch is active.
        const double d_logp = (unclipped_obj <= clipped_obj) ? -unclipped_obj : 0.0;

        for (int j = 0; j < action_dim; ++j) {
            const double sigma = std::exp(log_std[j]);
            const double z = (action[j] - mean[j]) / sigma;
            // d logp / d mean_j = z / sigma; d logp / d log_std_j = z^2 - 1.
            ws.d_mean[j] = inv_m * d_logp * (z / sigma);
            grads.actor_log_std[j] +=
                inv_m * (d_logp * (z * z - 1.0) - cfg.entropy_coef);
        }
        mlp_backward(params.actor, ws.actor_cache, ws.d_mean, grads.actor);

        ws.d_value[0] = inv_m * cfg.value_loss_coef * 2.0 * value_err;
        mlp_backward(params.critic, ws.critic_cache, ws.d_value, grads.critic);
    }

    res.surrogate_loss *= inv_m;
    res.value_loss *= inv_m;
    res.entropy *= inv_m;
    res.approx_kl *= inv_m;
    res.mean_ratio *= inv_m;
    res.loss = res.surrogate_loss + cfg.value_loss_coef * res.value_loss -
               cfg.entropy_coef * res.entropy;
    return res;
}

namespace detail {

inline double gradient_global_norm(const GradientSet& g) {
    double sum = 0.0;
    auto add = [&sum](const std::vector<double>& v) {
        for (double x : v) sum += x * x;
    };
    for (const auto& b : g.actor) {
        add(b.weight);
        add(b.bias);
    }
    add(g.actor_log_std);
    for (const auto& b : g.critic) {
        add(b.weight);
        add(b.bias);
    }
    return std::sqrt(sum);
}

inline void scale_gradients(GradientSet& g, double factor) {
    auto scale = [factor](std::vector<double>& v) {
        for (double& x : v) x *= factor;
    };
    for (auto& b : g.actor) {
        scale(b.weight);
        scale(b.bias);
    }
    scale(g.actor_log_std);
    for (auto& b : g.critic) {
        scale(b.weight);
        scale(b.bias);
    }
}

/// Plain gradient step. Frozen actor blocks are skipped entirely so their
/// parameters stay bit-identical.
inline void apply_gradient_step(ActorCriticParams& params, const GradientSet& g, double lr,
                                const FreezeSpec& freeze) {
    for (std::size_t b = 0; b < params.actor.size(); ++b) {
        if (freeze.contains(int(b))) continue;
        auto& dst = params.actor[b];
        const auto& src = g.actor[b];
        for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight[i] -= lr * src.weight[i];
        for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] -= lr * src.bias[i];
    }
    for (std::size_t i = 0; i < params.actor_log_std.size(); ++i)
        params.actor_log_std[i] -= lr * g.actor_log_std[i];
    for (std::size_t b = 0; b < params.critic.size(); ++b) {
        auto& dst = params.critic[b];
        const auto& src = g.critic[b];
        for (std::size_t i = 0; i < dst.weight.size(); ++i) dst.weight[i] -= lr * src.weight[i];
        for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] -= lr * src.bias[i];
    }
}

}  // namespace detail

/// Runs epochs x minibatches clipped-surrogate gradient steps on a batch
/// collected under the current params. Gradients of frozen blocks are
/// masked before each step and the global gradient norm is clipped.
/// Mutates params in place (single-writer phase) and reports update stats.
inline UpdateStats update(ActorCriticParams& params, const RolloutBatch& batch,
                          const PpoConfig& cfg, const FreezeSpec& freeze, Rng& shuffle_rng) {
    cfg.validate();
    const int n = batch.size();
    if (n == 0) return {};

    // GAE over each environment's trajectory.
    std::vector<double> advantages(n), returns(n);
    for (int e = 0; e < batch.num_envs; ++e) {
        const std::size_t off = std::size_t(e) * batch.steps;
        const std::size_t len = batch.steps;
        compute_gae({batch.rewards.data() + off, len}, {batch.values.data() + off, len},
                    {batch.dones.data() + off, len}, batch.bootstrap_values[e], cfg.gamma,
                    cfg.gae_lambda, {advantages.data() + off, len}, {returns.data() + off, len});
    }
    const std::vector<double> norm_adv = normalize_advantages(advantages);

    GradientSet grads = GradientSet::zeros_like(params);
    PpoLossWorkspace ws;
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    UpdateStats stats;
    bool first = true;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates reshuffle per epoch.
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[std::size_t(shuffle_rng.below(std::uint64_t(i) + 1))]);
        for (int mb = 0; mb < cfg.minibatches; ++mb) {
            const int begin = int(std::size_t(mb) * n / cfg.minibatches);
            const int end = int(std::size_t(mb + 1) * n / cfg.minibatches);
            if (begin == end) continue;
            grads.set_zero();
            const auto res = ppo_loss_and_grad(
                params, batch, std::span<const int>(order.data() + begin, end - begin),
                norm_adv, returns, cfg, grads, ws);
            if (!std::isfinite(res.loss))
                throw DivergenceError("non-finite PPO loss (epoch " + std::to_string(epoch) +
                                      ", minibatch " + std::to_string(mb) + ")");
            if (first) {
                stats.first_mean_ratio = res.mean_ratio;
                first = false;
            }
            apply_freeze(grads, freeze);
            const double norm = detail::gradient_global_norm(grads);
            if (norm > cfg.max_grad_norm && norm > 0.0)
                detail::scale_gradients(grads, cfg.max_grad_norm / norm);
            detail::apply_gradient_step(params, grads, cfg.learning_rate, freeze);

            stats.surrogate_loss += res.surrogate_loss;
            stats.value_loss += res.value_loss;
            stats.entropy += res.entropy;
            stats.approx_kl += res.approx_kl;
            ++stats.gradient_steps;
        }
    }
    if (stats.gradient_steps > 0) {
        const double inv = 1.0 / stats.gradient_steps;
        stats.surrogate_loss *= inv;
        stats.value_loss *= inv;
        stats.entropy *= inv;
        stats.approx_kl *= inv;
    }
    return stats;
}

/// Anything that behaves like a toy robot environment.
template <typename E>
concept TrainableEnv = requires(E e, std::span<const double> a) {
    { e.reset() } -> std::convertible_to<std::vector<double>>;
    { e.step(a) } -> std::convertible_to<StepResult>;
    { e.obs_dim() } -> std::convertible_to<int>;
    { e.action_dim() } -> std::convertible_to<int>;
    { e.episode_length() } -> std::convertible_to<int>;
    { e.control_dt() } -> std::convertible_to<double>;
};

struct StageOptions {
    /// When set, the wall_seconds metric counts simulated time
    /// (env steps x dt) instead of host time, making metrics byte-reproducible.
    bool deterministic_clock = false;
};

using MetricsSink = std::function<void(const IterationMetrics&)>;

/// One training stage: repeated {collect, GAE, update, adapt LR} cycles.
/// Pre-training and fine-tuning are the same loop with different initial
/// params and freeze spec. The env factory is called once per environment
/// index; every environment owns its own RNG stream, so batch contents do
/// not depend on collection order.
template <typename EnvFactory>
std::pair<ActorCriticParams, std::vector<IterationMetrics>> train_stage(
    EnvFactory&& env_factory, ActorCriticParams params, const FreezeSpec& freeze,
    const PpoConfig& cfg, std::uint64_t seed, const StageOptions& opts = {},
    const MetricsSink& sink = {}) {
    cfg.validate();
    validate_freeze_spec(freeze, int(params.actor.size()));

    using EnvType = std::decay_t<decltype(env_factory(0))>;
    static_assert(TrainableEnv<EnvType>);

    std::vector<EnvType> envs;
    envs.reserve(cfg.num_envs);
    for (int e = 0; e < cfg.num_envs; ++e) envs.push_back(env_factory(e));

    if (envs.front().obs_dim() != params.obs_dim() ||
        envs.front().action_dim() != params.action_dim())
        throw ConfigError("train_stage: env dims (" + std::to_string(envs.front().obs_dim()) +
                          "/" + std::to_string(envs.front().action_dim()) +
                          ") do not match network dims (" + std::to_string(params.obs_dim()) +
                          "/" + std::to_string(params.action_dim()) + ")");

    std::vector<IterationMetrics> metrics;
    if (cfg.iterations == 0) return {std::move(params), std::move(metrics)};

    const int obs_dim = envs.front().obs_dim();
    const int action_dim = envs.front().action_dim();
    const int episode_length = envs.front().episode_length();
    const double dt = envs.front().control_dt();

    std::vector<std::vector<double>> cur_obs(cfg.num_envs);
    std::vector<Rng> noise_rngs;
    noise_rngs.reserve(cfg.num_envs);
    for (int e = 0; e < cfg.num_envs; ++e) {
        cur_obs[e] = envs[e].reset();
        noise_rngs.push_back(Rng::stream(seed, /*tag=*/0xac7, std::uint64_t(e)));
    }
    Rng shuffle_rng = Rng::stream(seed, /*tag=*/0x5f1e);

    RolloutBatch batch;
    batch.resize(cfg.num_envs, cfg.steps_per_iter, obs_dim, action_dim);

    PpoConfig live_cfg = cfg;
    MlpCache actor_cache, critic_cache;
    std::vector<double> action(action_dim);

    const auto t_start = std::chrono::steady_clock::now();

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        double reward_sum = 0.0;
        std::array<double, kNumRewardTerms> term_sums{};

        for (int e = 0; e < cfg.num_envs; ++e) {
            auto& env = envs[e];
            auto& rng = noise_rngs[e];
            for (int t = 0; t < cfg.steps_per_iter; ++t) {
                const int i = e * cfg.steps_per_iter + t;
                const auto mean = mlp_forward_cached(params.actor, cur_obs[e], actor_cache);
                for (int j = 0; j < action_dim; ++j)
                    action[j] = mean[j] + std::exp(params.actor_log_std[j]) * rng.gaussian();
                const auto lp = log_prob_and_entropy(mean, params.actor_log_std, action);
                const double value = mlp_forward_cached(params.critic, cur_obs[e], critic_cache)[0];

                StepResult res = env.step(action);

                std::copy(cur_obs[e].begin(), cur_obs[e].end(),
                          batch.obs.begin() + std::size_t(i) * obs_dim);
                std::copy(action.begin(), action.end(),
                          batch.actions.begin() + std::size_t(i) * action_dim);
                batch.log_probs[i] = lp.log_prob;
                batch.values[i] = value;
                batch.rewards[i] = res.reward;
                batch.dones[i] = res.done ? 1 : 0;

                reward_sum += res.reward;
                for (int k = 0; k < kNumRewardTerms; ++k) term_sums[k] += res.terms.weighted[k];

                cur_obs[e] = res.done ? env.reset() : std::move(res.obs);
            }
            batch.bootstrap_values[e] = mlp_forward_cached(params.critic, cur_obs[e], critic_cache)[0];
        }

        UpdateStats stats;
        try {
            stats = update(params, batch, live_cfg, freeze, shuffle_rng);
        } catch (const DivergenceError& e) {
            throw DivergenceError("iteration " + std::to_string(iter + 1) + ": " + e.what());
        }

        IterationMetrics m;
        m.iteration = iter + 1;
        const double inv_n = 1.0 / double(batch.size());
        m.mean_episode_reward = reward_sum * inv_n * episode_length;
        for (int k = 0; k < kNumRewardTerms; ++k) m.reward_term_means[k] = term_sums[k] * inv_n;
        m.surrogate_loss = stats.surrogate_loss;
        m.value_loss = stats.value_loss;
        m.entropy = stats.entropy;
        m.approx_kl = stats.approx_kl;
        m.learning_rate = live_cfg.learning_rate;
        if (opts.deterministic_clock) {
            m.wall_seconds = double(iter + 1) * cfg.num_envs * cfg.steps_per_iter * dt;
        } else {
            m.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        }
        metrics.push_back(m);
        if (sink) sink(m);

        if (live_cfg.lr_adaptive)
            live_cfg.learning_rate =
                adapt_lr(live_cfg.learning_rate, stats.approx_kl, live_cfg.desired_kl);
    }
    return {std::move(params), std::move(metrics)};
}

}  // namespace ptrl
