#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ptrl/error.hpp"
#include "ptrl/rng.hpp"

#include <json.hpp>

namespace ptrl {

struct CommandRanges {
    std::array<double, 2> vx = {-0.6, 0.6};
    std::array<double, 2> vy = {-0.3, 0.3};
    std::array<double, 2> wz = {-0.5, 0.5};
};

/// Table of reward weights; names match the metrics columns.
struct RewardWeights {
    double lin_track = 1.0;
    double ang_track = 0.5;
    double zvel = -2.0;
    double xyang = -0.05;
    double torque = -2e-4;
    double jacc = -2.5e-7;
    double limits = -10.0;
    double action_rate = -0.01;
    double orientation = 0.0;  // only active with RobotConfig::orientation_penalty
};

struct DomainRandConfig {
    bool enabled = false;
    std::array<double, 2> mass_range = {0.8, 1.2};
    std::array<double, 2> kp_range = {0.9, 1.1};
};

/// Parametric toy legged robot: J actuated joints driven by a PD loop,
/// with base velocities derived from weighted joint rates.
struct RobotConfig {
    std::string name = "custom";
    int joints = 2;
    double kp = 40.0;
    double kd = 0.5;
    std::vector<double> q_default;  // sized J by finalize(); default 0
    std::vector<double> c1;         // lower joint limits; default -1.5
    std::vector<double> c2;         // upper joint limits; default +1.5
    double tau_max = 20.0;
    double joint_mass = 1.0;
    double joint_damping = 0.1;
    double dt = 0.01;
    double base_filter = 0.05;   // beta
    double vz_gain = 0.1;        // kappa
    double tilt_gain = 0.1;      // mu
    double action_scale = 0.5;
    int episode_length = 1000;
    CommandRanges commands;
    RewardWeights weights;
    double tracking_sigma = 0.25;
    DomainRandConfig domain_rand;
    bool orientation_penalty = false;

    int obs_dim() const { return 9 + 3 * joints; }

    /// Fills per-joint vectors that were left empty and checks invariants.
    void finalize() {
        if (joints < 1) throw ConfigError("RobotConfig: joints must be >= 1");
        auto fit = [this](std::vector<double>& v, double fill) {
            if (v.empty()) v.assign(joints, fill);
            if (int(v.size()) == 1 && joints > 1) v.assign(joints, v[0]);
            if (int(v.size()) != joints)
                throw ConfigError("RobotConfig: per-joint vector has wrong length");
        };
        fit(q_default, 0.0);
        fit(c1, -1.5);
        fit(c2, 1.5);
        for (int i = 0; i < joints; ++i)
            if (!(c1[i] < c2[i])) throw ConfigError("RobotConfig: requires c1 < c2 per joint");
        if (dt <= 0.0) throw ConfigError("RobotConfig: dt must be positive");
        if (tracking_sigma <= 0.0) throw ConfigError("RobotConfig: tracking_sigma must be positive");
        if (episode_length < 1) throw ConfigError("RobotConfig: episode_length must be >= 1");
        for (double g : {kp, kd, tau_max, joint_mass, joint_damping, base_filter, vz_gain,
                         tilt_gain, action_scale})
            if (!std::isfinite(g)) throw ConfigError("RobotConfig: non-finite gain");
        if (joint_mass <= 0.0) throw ConfigError("RobotConfig: joint_mass must be positive");
    }
};

struct SimState {
    std::vector<double> q;
    std::vector<double> qdot;
    std::vector<double> qdot_prev;
    std::array<double, 3> v = {0, 0, 0};      // base linear velocity
    std::array<double, 3> omega = {0, 0, 0};  // base angular velocity
    double roll = 0.0;
    double pitch = 0.0;
    std::vector<double> prev_action;
    int step_index = 0;
    std::array<double, 3> command = {0, 0, 0};
};

enum class DoneReason { none, timeout, tilt };

inline const char* done_reason_name(DoneReason r) {
    switch (r) {
        case DoneReason::none: return "none";
        case DoneReason::timeout: return "timeout";
        case DoneReason::tilt: return "tilt";
    }
    return "?";
}

inline constexpr int kNumRewardTerms = 9;

inline const std::array<const char*, kNumRewardTerms>& reward_term_names() {
    static const std::array<const char*, kNumRewardTerms> names = {
        "lin_track", "ang_track", "zvel", "xyang", "torque",
        "jacc",      "limits",    "action_rate", "orientation"};
    return names;
}

/// Per-term raw values and weighted contributions, in the fixed order of
/// reward_term_names().
struct RewardTerms {
    std::array<double, kNumRewardTerms> raw{};
    std::array<double, kNumRewardTerms> weighted{};
};

struct StepResult {
    std::vector<double> obs;
    double reward = 0.0;
    RewardTerms terms;
    bool done = false;
    DoneReason done_reason = DoneReason::none;
};

/// PD torque with zero velocity target: tau = kp (q_target - q) - kd qdot,
/// clamped to +-tau_max.
inline std::vector<double> pd_torque(std::span<const double> q_target,
                                     std::span<const double> q,
                                     std::span<const double> qdot,
                                     const RobotConfig& cfg) {
    if (q_target.size() != q.size() || q.size() != qdot.size())
        throw ShapeError("pd_torque: length mismatch");
    std::vector<double> tau(q.size());
    for (std::size_t i = 0; i < q.size(); ++i)
        tau[i] = std::clamp(cfg.kp * (q_target[i] - q[i]) - cfg.kd * qdot[i],
                            -cfg.tau_max, cfg.tau_max);
    return tau;
}

/// Gravity direction in the body frame for the given roll/pitch; always a
/// unit vector, (0, 0, -1) at level pose.
inline std::array<double, 3> gravity_body(double roll, double pitch) {
    return {std::sin(pitch) * std::cos(roll), -std::sin(roll),
            -std::cos(roll) * std::cos(pitch)};
}

/// One step of the toy dynamics: PD torque on each joint, semi-implicit
/// Euler, then base quantities derived from the new joint rates through a
/// first-order filter. Pure function of (state, action, cfg).
inline SimState step_dynamics(const SimState& state, std::span<const double> action,
                              const RobotConfig& cfg) {
    const int J = cfg.joints;
    if (int(action.size()) != J) throw ShapeError("step_dynamics: action length != joints");
    for (double a : action)
        if (!std::isfinite(a)) throw InputError("step_dynamics: non-finite action");

    SimState next = state;
    next.qdot_prev = state.qdot;

    std::vector<double> q_target(J);
    for (int i = 0; i < J; ++i) q_target[i] = cfg.q_default[i] + cfg.action_scale * action[i];
    const std::vector<double> tau = pd_torque(q_target, state.q, state.qdot, cfg);

    std::vector<double> qddot(J);
    for (int i = 0; i < J; ++i) {
        qddot[i] = (tau[i] - cfg.joint_damping * state.qdot[i]) / cfg.joint_mass;
        next.qdot[i] = state.qdot[i] + qddot[i] * cfg.dt;
        next.q[i] = state.q[i] + next.qdot[i] * cfg.dt;
    }

    double sum_vx = 0.0, sum_vy = 0.0, sum_wz = 0.0, sum_acc = 0.0;
    for (int i = 0; i < J; ++i) {
        sum_vx += std::sin(double(i + 1)) * next.qdot[i];
        sum_vy += std::cos(double(i + 1)) * next.qdot[i];
        sum_wz += std::sin(2.0 * double(i + 1)) * next.qdot[i];
        sum_acc += qddot[i];
    }
    const double beta = cfg.base_filter;
    next.v[0] = (1.0 - beta) * state.v[0] + beta * sum_vx / J;
    next.v[1] = (1.0 - beta) * state.v[1] + beta * sum_vy / J;
    next.omega[2] = (1.0 - beta) * state.omega[2] + beta * sum_wz / J;
    next.v[2] = cfg.vz_gain * (sum_acc / J) * cfg.dt;

    const int front = (J + 1) / 2;
    double mean_front = 0.0, mean_rear = 0.0, mean_even = 0.0, mean_odd = 0.0;
    int n_even = 0, n_odd = 0;
    for (int i = 0; i < J; ++i) {
        if (i < front) mean_front += next.qdot[i];
        else mean_rear += next.qdot[i];
        if (i % 2 == 0) { mean_even += next.qdot[i]; ++n_even; }
        else            { mean_odd += next.qdot[i]; ++n_odd; }
    }
    mean_front /= front;
    if (J > front) mean_rear /= (J - front);
    if (n_even > 0) mean_even /= n_even;
    if (n_odd > 0) mean_odd /= n_odd;
    next.omega[0] = cfg.tilt_gain * (mean_front - mean_rear);
    next.omega[1] = cfg.tilt_gain * (mean_even - mean_odd);
    next.roll = state.roll + next.omega[0] * cfg.dt;
    next.pitch = state.pitch + next.omega[1] * cfg.dt;

    next.prev_action.assign(action.begin(), action.end());
    next.step_index = state.step_index + 1;
    return next;
}

/// Observation layout: body angular velocity (3), body-frame gravity (3),
/// joint positions (J), joint velocities (J), command (3), previous
/// action (J). Total 9 + 3J.
inline std::vector<double> assemble_observation(const SimState& state, const RobotConfig& cfg) {
    std::vector<double> obs;
    obs.reserve(cfg.obs_dim());
    obs.insert(obs.end(), state.omega.begin(), state.omega.end());
    const auto g = gravity_body(state.roll, state.pitch);
    obs.insert(obs.end(), g.begin(), g.end());
    obs.insert(obs.end(), state.q.begin(), state.q.end());
    obs.insert(obs.end(), state.qdot.begin(), state.qdot.end());
    obs.insert(obs.end(), state.command.begin(), state.command.end());
    obs.insert(obs.end(), state.prev_action.begin(), state.prev_action.end());
    return obs;
}

/// Reward terms evaluated on the post-step state. The total is the sum of
/// the weighted contributions.
inline std::pair<double, RewardTerms> compute_reward(const SimState& state_t,
                                                     const SimState& /*state_prev*/,
                                                     std::span<const double> action_t,
                                                     std::span<const double> action_prev,
                                                     std::span<const double> tau,
                                                     const RobotConfig& cfg) {
    const int J = cfg.joints;
    const RewardWeights& w = cfg.weights;
    RewardTerms terms;

    const double ex = state_t.command[0] - state_t.v[0];
    const double ey = state_t.command[1] - state_t.v[1];
    terms.raw[0] = std::exp(-(ex * ex + ey * ey) / cfg.tracking_sigma);

    const double ew = state_t.command[2] - state_t.omega[2];
    terms.raw[1] = std::exp(-(ew * ew) / cfg.tracking_sigma);

    terms.raw[2] = state_t.v[2] * state_t.v[2];
    terms.raw[3] = state_t.omega[0] * state_t.omega[0] + state_t.omega[1] * state_t.omega[1];

    double sum_tau2 = 0.0;
    for (int i = 0; i < J; ++i) sum_tau2 += tau[i] * tau[i];
    terms.raw[4] = sum_tau2;

    double sum_jacc = 0.0;
    for (int i = 0; i < J; ++i) {
        const double acc = (state_t.qdot[i] - state_t.qdot_prev[i]) / cfg.dt;
        sum_jacc += acc * acc;
    }
    terms.raw[5] = sum_jacc;

    double out_of_range = 0.0;
    for (int i = 0; i < J; ++i) {
        out_of_range += std::max(0.0, cfg.c1[i] - state_t.q[i]);
        out_of_range += std::max(0.0, state_t.q[i] - cfg.c2[i]);
    }
    terms.raw[6] = out_of_range;

    double sum_da2 = 0.0;
    for (int i = 0; i < J; ++i) {
        const double da = action_t[i] - action_prev[i];
        sum_da2 += da * da;
    }
    terms.raw[7] = sum_da2;

    if (cfg.orientation_penalty) {
        const auto g = gravity_body(state_t.roll, state_t.pitch);
        terms.raw[8] = g[0] * g[0] + g[1] * g[1];
    }

    const std::array<double, kNumRewardTerms> weights = {
        w.lin_track, w.ang_track, w.zvel, w.xyang, w.torque,
        w.jacc,      w.limits,    w.action_rate,
        cfg.orientation_penalty ? w.orientation : 0.0};
    double total = 0.0;
    for (int k = 0; k < kNumRewardTerms; ++k) {
        terms.weighted[k] = weights[k] * terms.raw[k];
        total += terms.weighted[k];
    }
    return {total, terms};
}

inline std::array<double, 3> sample_command(Rng& rng, const RobotConfig& cfg) {
    return {rng.uniform(cfg.commands.vx[0], cfg.commands.vx[1]),
            rng.uniform(cfg.commands.vy[0], cfg.commands.vy[1]),
            rng.uniform(cfg.commands.wz[0], cfg.commands.wz[1])};
}

inline std::pair<bool, DoneReason> is_done(const SimState& state, const RobotConfig& cfg) {
    if (std::abs(state.roll) > 1.0 || std::abs(state.pitch) > 1.0)
        return {true, DoneReason::tilt};
    if (state.step_index >= cfg.episode_length) return {true, DoneReason::timeout};
    return {false, DoneReason::none};
}

/// Per-episode multiplicative perturbation of mass and kp; no-op unless
/// enabled.
inline RobotConfig domain_randomize(const RobotConfig& cfg, Rng& rng) {
    if (!cfg.domain_rand.enabled) return cfg;
    RobotConfig out = cfg;
    out.joint_mass = cfg.joint_mass *
                     rng.uniform(cfg.domain_rand.mass_range[0], cfg.domain_rand.mass_range[1]);
    out.kp = cfg.kp * rng.uniform(cfg.domain_rand.kp_range[0], cfg.domain_rand.kp_range[1]);
    return out;
}

/// A single environment instance owning its state and RNG stream. Not
/// shared between concurrent callers; independent instances need no
/// coordination.
class ToyLeggedEnv {
public:
    ToyLeggedEnv(RobotConfig cfg, std::uint64_t stream_seed)
        : base_cfg_(std::move(cfg)), active_cfg_(base_cfg_), rng_(stream_seed) {
        base_cfg_.finalize();
        active_cfg_ = base_cfg_;
    }

    int obs_dim() const { return base_cfg_.obs_dim(); }
    int action_dim() const { return base_cfg_.joints; }
    int episode_length() const { return base_cfg_.episode_length; }
    double control_dt() const { return base_cfg_.dt; }
    const RobotConfig& config() const { return active_cfg_; }
    const SimState& state() const { return state_; }

    /// New episode: domain randomization (if enabled), zeroed dynamics with
    /// q at the default pose, fresh command.
    std::vector<double> reset() {
        active_cfg_ = domain_randomize(base_cfg_, rng_);
        state_ = SimState{};
        state_.q = active_cfg_.q_default;
        state_.qdot.assign(active_cfg_.joints, 0.0);
        state_.qdot_prev.assign(active_cfg_.joints, 0.0);
        state_.prev_action.assign(active_cfg_.joints, 0.0);
        state_.command = sample_command(rng_, active_cfg_);
        return assemble_observation(state_, active_cfg_);
    }

    /// Overrides the current command (used by evaluation with a fixed
    /// command).
    void set_command(const std::array<double, 3>& command) { state_.command = command; }

    StepResult step(std::span<const double> action) {
        const SimState prev = state_;
        std::vector<double> q_target(active_cfg_.joints);
        for (int i = 0; i < active_cfg_.joints; ++i)
            q_target[i] = active_cfg_.q_default[i] + active_cfg_.action_scale * action[i];
        const std::vector<double> tau = pd_torque(q_target, prev.q, prev.qdot, active_cfg_);

        state_ = step_dynamics(prev, action, active_cfg_);

        StepResult result;
        auto [total, terms] =
            compute_reward(state_, prev, action, prev.prev_action, tau, active_cfg_);
        result.reward = total;
        result.terms = terms;
        auto [done, reason] = is_done(state_, active_cfg_);
        result.done = done;
        result.done_reason = reason;
        result.obs = assemble_observation(state_, active_cfg_);
        return result;
    }

private:
    RobotConfig base_cfg_;
    RobotConfig active_cfg_;
    SimState state_;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// Presets and JSON loading
// ---------------------------------------------------------------------------

/// Built-in robots. The pair shares hidden widths so actor transfer applies
/// but differs in joint count, mirroring a quadruped-to-biped transfer.
/// Compared with the raw field defaults, the presets use a better-damped
/// servo, joint limits wide enough that a full episode of velocity tracking
/// fits inside them, and command ranges wide enough that an untrained
/// policy scores well below a trained one.
inline RobotConfig robot_preset(const std::string& name) {
    RobotConfig cfg;
    if (name == "toy-quad") {
        cfg.name = "toy-quad";
        cfg.joints = 2;
        cfg.commands.vx = {-1.2, 1.2};
        cfg.commands.vy = {-0.3, 0.3};
        cfg.commands.wz = {-0.5, 0.5};
    } else if (name == "toy-biped") {
        cfg.name = "toy-biped";
        cfg.joints = 3;
        cfg.commands.vx = {-1.2, 1.2};
        cfg.commands.vy = {-0.3, 0.3};
        cfg.commands.wz = {-0.7, 0.7};
    } else {
        throw ConfigError("unknown robot preset '" + name + "'");
    }
    cfg.kd = 2.0;
    cfg.joint_damping = 0.3;
    cfg.episode_length = 600;
    cfg.c1.assign(cfg.joints, -12.0);
    cfg.c2.assign(cfg.joints, 12.0);
    cfg.finalize();
    return cfg;
}

namespace detail {

inline void read_range(const nlohmann::json& j, const char* key, std::array<double, 2>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(std::string(key) + ": expected [lo, hi]");
    out = {v[0].get<double>(), v[1].get<double>()};
}

inline void read_joint_vector(const nlohmann::json& j, const char* key,
                              std::vector<double>& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (v.is_number()) {
        out.assign(1, v.get<double>());
    } else {
        out = v.get<std::vector<double>>();
    }
}

}  // namespace detail

inline RobotConfig robot_config_from_json(const nlohmann::json& j) {
    RobotConfig cfg;
    if (j.contains("base")) cfg = robot_preset(j.at("base").get<std::string>());
    if (j.contains("name")) cfg.name = j.at("name").get<std::string>();
    if (j.contains("J")) cfg.joints = j.at("J").get<int>();
    if (j.contains("kp")) cfg.kp = j.at("kp").get<double>();
    if (j.contains("kd")) cfg.kd = j.at("kd").get<double>();
    detail::read_joint_vector(j, "q_default", cfg.q_default);
    detail::read_joint_vector(j, "c1", cfg.c1);
    detail::read_joint_vector(j, "c2", cfg.c2);
    if (j.contains("tau_max")) cfg.tau_max = j.at("tau_max").get<double>();
    if (j.contains("joint_mass")) cfg.joint_mass = j.at("joint_mass").get<double>();
    if (j.contains("joint_damping")) cfg.joint_damping = j.at("joint_damping").get<double>();
    if (j.contains("dt")) cfg.dt = j.at("dt").get<double>();
    if (j.contains("base_filter")) cfg.base_filter = j.at("base_filter").get<double>();
    if (j.contains("vz_gain")) cfg.vz_gain = j.at("vz_gain").get<double>();
    if (j.contains("tilt_gain")) cfg.tilt_gain = j.at("tilt_gain").get<double>();
    if (j.contains("action_scale")) cfg.action_scale = j.at("action_scale").get<double>();
    if (j.contains("episode_length")) cfg.episode_length = j.at("episode_length").get<int>();
    if (j.contains("tracking_sigma")) cfg.tracking_sigma = j.at("tracking_sigma").get<double>();
    if (j.contains("command_ranges")) {
        const auto& c = j.at("command_ranges");
        detail::read_range(c, "vx", cfg.commands.vx);
        detail::read_range(c, "vy", cfg.commands.vy);
        detail::read_range(c, "wz", cfg.commands.wz);
    }
    if (j.contains("reward_weights")) {
        const auto& r = j.at("reward_weights");
        auto get = [&r](const char* key, double& out) {
            if (r.contains(key)) out = r.at(key).get<double>();
        };
        get("lin_track", cfg.weights.lin_track);
        get("ang_track", cfg.weights.ang_track);
        get("zvel", cfg.weights.zvel);
        get("xyang", cfg.weights.xyang);
        get("torque", cfg.weights.torque);
        get("jacc", cfg.weights.jacc);
        get("limits", cfg.weights.limits);
        get("action_rate", cfg.weights.action_rate);
        get("orientation", cfg.weights.orientation);
    }
    if (j.contains("domain_rand")) {
        const auto& d = j.at("domain_rand");
        if (d.contains("enabled")) cfg.domain_rand.enabled = d.at("enabled").get<bool>();
        detail::read_range(d, "mass_range", cfg.domain_rand.mass_range);
        detail::read_range(d, "kp_range", cfg.domain_rand.kp_range);
    }
    if (j.contains("orientation_penalty"))
        cfg.orientation_penalty = j.at("orientation_penalty").get<bool>();
    cfg.finalize();
    return cfg;
}

inline nlohmann::json robot_config_to_json(const RobotConfig& cfg) {
    nlohmann::json j;
    j["name"] = cfg.name;
    j["J"] = cfg.joints;
    j["kp"] = cfg.kp;
    j["kd"] = cfg.kd;
    j["q_default"] = cfg.q_default;
    j["c1"] = cfg.c1;
    j["c2"] = cfg.c2;
    j["tau_max"] = cfg.tau_max;
    j["joint_mass"] = cfg.joint_mass;
    j["joint_damping"] = cfg.joint_damping;
    j["dt"] = cfg.dt;
    j["base_filter"] = cfg.base_filter;
    j["vz_gain"] = cfg.vz_gain;
    j["tilt_gain"] = cfg.tilt_gain;
    j["action_scale"] = cfg.action_scale;
    j["episode_length"] = cfg.episode_length;
    j["tracking_sigma"] = cfg.tracking_sigma;
    j["command_ranges"] = {{"vx", cfg.commands.vx}, {"vy", cfg.commands.vy},
                           {"wz", cfg.commands.wz}};
    j["reward_weights"] = {{"lin_track", cfg.weights.lin_track},
                           {"ang_track", cfg.weights.ang_track},
                           {"zvel", cfg.weights.zvel},
                           {"xyang", cfg.weights.xyang},
                           {"torque", cfg.weights.torque},
                           {"jacc", cfg.weights.jacc},
                           {"limits", cfg.weights.limits},
                           {"action_rate", cfg.weights.action_rate},
                           {"orientation", cfg.weights.orientation}};
    j["domain_rand"] = {{"enabled", cfg.domain_rand.enabled},
                        {"mass_range", cfg.domain_rand.mass_range},
                        {"kp_range", cfg.domain_rand.kp_range}};
    j["orientation_penalty"] = cfg.orientation_penalty;
    return j;
}

/// Resolves a preset name or a JSON file path to a RobotConfig.
inline RobotConfig load_robot(const std::string& name_or_path) {
    if (name_or_path == "toy-quad" || name_or_path == "toy-biped")
        return robot_preset(name_or_path);
    std::ifstream f(name_or_path);
    if (!f) throw ConfigError("robot '" + name_or_path + "' is neither a preset nor a readable file");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("failed to parse robot config '" + name_or_path + "': " + e.what());
    }
    return robot_config_from_json(j);
}

}  // namespace ptrl
