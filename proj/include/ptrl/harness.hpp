#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "ptrl/envsim.hpp"
#include "ptrl/error.hpp"
#include "ptrl/ppo.hpp"
#include "ptrl/transfer.hpp"

#include <json.hpp>

namespace ptrl {

// CLI exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitIncompatible = 4;

/// Everything one run needs: robot, network widths, PPO settings, seed,
/// freeze mode, optional source checkpoint, and the output directory.
struct ExperimentConfig {
    std::string robot = "toy-quad";  // preset name or JSON path
    std::vector<int> hidden = {512, 256, 128};
    PpoConfig ppo;
    std::uint64_t seed = 1;
    FreezeMode freeze_mode = FreezeMode::none;
    std::optional<std::string> source_checkpoint;
    std::string output_dir;
    bool deterministic_schedule = false;
    int ablate_seeds = 5;
};

struct EvalOptions {
    int episodes = 1;
    std::uint64_t seed = 1;
    std::optional<std::array<double, 3>> fixed_command;
    std::optional<int> max_steps;  // cap per episode; default: run to done
};

// ---------------------------------------------------------------------------
// Config (de)serialization
// ---------------------------------------------------------------------------

inline nlohmann::json ppo_config_to_json(const PpoConfig& c) {
    return {{"clip_eps", c.clip_eps},
            {"gamma", c.gamma},
            {"gae_lambda", c.gae_lambda},
            {"value_loss_coef", c.value_loss_coef},
            {"entropy_coef", c.entropy_coef},
            {"learning_rate", c.learning_rate},
            {"lr_adaptive", c.lr_adaptive},
            {"desired_kl", c.desired_kl},
            {"epochs", c.epochs},
            {"minibatches", c.minibatches},
            {"max_grad_norm", c.max_grad_norm},
            {"num_envs", c.num_envs},
            {"steps_per_iter", c.steps_per_iter},
            {"iterations", c.iterations}};
}

inline PpoConfig ppo_config_from_json(const nlohmann::json& j, PpoConfig c = {}) {
    auto get = [&j](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    get("clip_eps", c.clip_eps);
    get("gamma", c.gamma);
    get("gae_lambda", c.gae_lambda);
    get("value_loss_coef", c.value_loss_coef);
    get("entropy_coef", c.entropy_coef);
    get("learning_rate", c.learning_rate);
    get("lr_adaptive", c.lr_adaptive);
    get("desired_kl", c.desired_kl);
    get("epochs", c.epochs);
    get("minibatches", c.minibatches);
    get("max_grad_norm", c.max_grad_norm);
    get("num_envs", c.num_envs);
    get("steps_per_iter", c.steps_per_iter);
    get("iterations", c.iterations);
    return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["robot"] = c.robot;
    j["hidden"] = c.hidden;
    j["ppo"] = ppo_config_to_json(c.ppo);
    j["seed"] = c.seed;
    j["freeze"] = freeze_mode_name(c.freeze_mode);
    if (c.source_checkpoint) j["source"] = *c.source_checkpoint;
    j["out"] = c.output_dir;
    j["deterministic"] = c.deterministic_schedule;
    j["ablate_seeds"] = c.ablate_seeds;
    return j;
}

inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j,
                                                    ExperimentConfig c = {}) {
    if (j.contains("robot")) c.robot = j.at("robot").get<std::string>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("ppo")) c.ppo = ppo_config_from_json(j.at("ppo"), c.ppo);
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("freeze")) c.freeze_mode = parse_freeze_mode(j.at("freeze").get<std::string>());
    if (j.contains("source")) c.source_checkpoint = j.at("source").get<std::string>();
    if (j.contains("out")) c.output_dir = j.at("out").get<std::string>();
    if (j.contains("deterministic")) c.deterministic_schedule = j.at("deterministic").get<bool>();
    if (j.contains("ablate_seeds")) c.ablate_seeds = j.at("ablate_seeds").get<int>();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path,
                                               ExperimentConfig base = {}) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("failed to parse config '" + path + "': " + e.what());
    }
    return experiment_config_from_json(j, std::move(base));
}

// ---------------------------------------------------------------------------
// Formatting and small file helpers
// ---------------------------------------------------------------------------

namespace detail {

/// Round-trip-exact double formatting so byte-identical runs produce
/// byte-identical text artifacts.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write '" + tmp.string() + "'");
        f << content;
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace detail

// Normative metrics.csv column order.
inline const char* kMetricsHeader =
    "iteration,mean_episode_reward,rew_lin_track,rew_ang_track,rew_zvel,rew_xyang,"
    "rew_torque,rew_jacc,rew_limits,rew_action_rate,surrogate_loss,value_loss,entropy,"
    "approx_kl,learning_rate,wall_seconds";

inline std::string metrics_csv_row(const IterationMetrics& m) {
    std::string row = std::to_string(m.iteration);
    auto add = [&row](double v) {
        row += ',';
        row += detail::fmt_double(v);
    };
    add(m.mean_episode_reward);
    for (int k = 0; k < 8; ++k) add(m.reward_term_means[k]);
    add(m.surrogate_loss);
    add(m.value_loss);
    add(m.entropy);
    add(m.approx_kl);
    add(m.learning_rate);
    add(m.wall_seconds);
    return row;
}

/// Streams metrics rows to disk as they arrive so a diverged run still
/// leaves its partial history behind.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw ConfigError("cannot open '" + path.string() + "' for writing");
        out_ << kMetricsHeader << '\n';
        out_.flush();
    }

    void operator()(const IterationMetrics& m) {
        out_ << metrics_csv_row(m) << '\n';
        out_.flush();
    }

private:
    std::ofstream out_;
};

// ---------------------------------------------------------------------------
// SVG polyline charts (dependency-free, diff-friendly)
// ---------------------------------------------------------------------------

struct ChartSeries {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;
};

inline std::string render_line_chart(const std::string& title,
                                     const std::vector<ChartSeries>& series,
                                     const std::string& x_label = "iteration",
                                     const std::string& y_label = "reward") {
    const int width = 720, height = 420;
    const int ml = 64, mr = 16, mt = 36, mb = 44;
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto sx = [&](double x) {
        return ml + (x - xmin) / (xmax - xmin) * (width - ml - mr);
    };
    auto sy = [&](double y) {
        return height - mb - (y - ymin) / (ymax - ymin) * (height - mt - mb);
    };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6g", v);
        return std::string(buf);
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
           "\" height=\"" + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + std::to_string(width / 2) + "\" y=\"20\" text-anchor=\"middle\" "
           "font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
    // Axes.
    svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(height - mb) + "\" x2=\"" +
           num(width - mr) + "\" y2=\"" + num(height - mb) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + num(ml) + "\" y1=\"" + num(mt) + "\" x2=\"" + num(ml) + "\" y2=\"" +
           num(height - mb) + "\" stroke=\"black\"/>\n";
    svg += "<text x=\"" + num(ml) + "\" y=\"" + num(height - 8) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + num(xmin) + "</text>\n";
    svg += "<text x=\"" + num(width - mr) + "\" y=\"" + num(height - 8) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + num(xmax) +
           " " + x_label + "</text>\n";
    svg += "<text x=\"4\" y=\"" + num(height - mb) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + num(ymin) + "</text>\n";
    svg += "<text x=\"4\" y=\"" + num(mt + 10) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + num(ymax) + " " + y_label +
           "</text>\n";
    int legend_y = mt + 6;
    for (const auto& s : series) {
        if (s.points.empty()) continue;
        std::string pts;
        for (auto [x, y] : s.points) pts += num(sx(x)) + "," + num(sy(y)) + " ";
        svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\" points=\"" +
               pts + "\"/>\n";
        svg += "<text x=\"" + num(width - mr - 150) + "\" y=\"" + num(legend_y) +
               "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" + s.color + "\">" +
               s.name + "</text>\n";
        legend_y += 16;
    }
    svg += "</svg>\n";
    return svg;
}

// ---------------------------------------------------------------------------
// Metrics analysis
// ---------------------------------------------------------------------------

/// Mean of the last `window` values ending at index end_excl-1; requires a
/// full window.
inline double trailing_mean(const std::vector<double>& values, int end_excl, int window = 10) {
    const int lo = end_excl - window;
    if (lo < 0 || end_excl > int(values.size())) throw InputError("trailing_mean: bad range");
    double s = 0.0;
    for (int i = lo; i < end_excl; ++i) s += values[i];
    return s / window;
}

/// First iteration (1-based) whose trailing-window mean reaches the
/// threshold; the window must be full, so the answer is at least `window`.
/// Returns one past the series length when never reached.
inline int iterations_to_threshold(const std::vector<double>& rewards, double threshold,
                                   int window = 10) {
    const int n = int(rewards.size());
    const int w = std::min(window, n);
    if (w == 0) return 1;
    for (int i = w; i <= n; ++i)
        if (trailing_mean(rewards, i, w) >= threshold) return i;
    return n + 1;
}

inline std::vector<double> reward_series(const std::vector<IterationMetrics>& metrics) {
    std::vector<double> r;
    r.reserve(metrics.size());
    for (const auto& m : metrics) r.push_back(m.mean_episode_reward);
    return r;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw InputError("median of empty set");
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------------

/// Canonical per-environment stream seeding shared by every command.
inline auto make_env_factory(const RobotConfig& robot, std::uint64_t seed) {
    return [robot, seed](int env_index) {
        return ToyLeggedEnv(robot, Rng::stream(seed, 0xe17, std::uint64_t(env_index)).next_u64());
    };
}

struct RunResult {
    ActorCriticParams params;
    std::vector<IterationMetrics> metrics;
    RobotConfig robot;
    std::filesystem::path dir;
};

namespace detail {

inline MlpShape actor_shape_for(const RobotConfig& robot, const std::vector<int>& hidden) {
    return {robot.obs_dim(), hidden, robot.joints};
}

inline MlpShape critic_shape_for(const RobotConfig& robot, const std::vector<int>& hidden) {
    return {robot.obs_dim(), hidden, 1};
}

inline nlohmann::json run_summary(const ExperimentConfig& cfg, const RobotConfig& robot,
                                  const ActorCriticParams& params,
                                  const std::vector<IterationMetrics>& metrics,
                                  double wall_seconds) {
    const FreezeSpec spec = make_freeze_spec(cfg.freeze_mode);
    const std::int64_t total = params.actor_param_count();
    const std::int64_t trainable = trainable_param_count(params, spec);
    nlohmann::json j;
    j["robot"] = robot.name;
    j["seed"] = cfg.seed;
    j["freeze"] = freeze_mode_name(cfg.freeze_mode);
    j["iterations"] = metrics.size();
    const auto rewards = reward_series(metrics);
    if (!rewards.empty()) {
        const int w = std::min<int>(10, int(rewards.size()));
        const double final_mean = trailing_mean(rewards, int(rewards.size()), w);
        j["final_mean_reward"] = final_mean;
        // Against the run's own final level; cross-condition thresholds are
        // computed by the ablation command.
        j["iterations_to_threshold"] = iterations_to_threshold(rewards, 0.8 * final_mean);
    } else {
        j["final_mean_reward"] = nullptr;
        j["iterations_to_threshold"] = nullptr;
    }
    j["wall_seconds"] = wall_seconds;
    j["actor_params_total"] = total;
    j["actor_params_trainable"] = trainable;
    j["actor_params_frozen"] = total - trainable;
    j["critic_params"] = params.critic_param_count();
    return j;
}

/// Trains from the given initial parameters and writes the five run
/// artifacts. Divergence still produces metrics.csv, a FAILED marker, and
/// rethrows for the caller to map to an exit code.
inline RunResult execute_run(const ExperimentConfig& cfg, const RobotConfig& robot,
                             ActorCriticParams init) {
    const std::filesystem::path dir(cfg.output_dir);
    std::filesystem::create_directories(dir);
    write_text_atomic(dir / "config.json", experiment_config_to_json(cfg).dump(2) + "\n");

    const FreezeSpec spec = make_freeze_spec(cfg.freeze_mode);
    StageOptions opts;
    opts.deterministic_clock = cfg.deterministic_schedule;

    MetricsWriter writer(dir / "metrics.csv");
    const auto t0 = std::chrono::steady_clock::now();
    std::pair<ActorCriticParams, std::vector<IterationMetrics>> outcome;
    try {
        outcome = train_stage(make_env_factory(robot, cfg.seed), std::move(init), spec, cfg.ppo,
                              cfg.seed, opts, std::ref(writer));
    } catch (const DivergenceError& e) {
        write_text_atomic(dir / "FAILED", std::string(e.what()) + "\n");
        throw;
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    auto& [params, metrics] = outcome;
    CheckpointMeta meta{robot.name, std::uint64_t(metrics.size()), cfg.seed};
    save_checkpoint(params, meta, dir / "final.ckpt");

    ChartSeries series{"mean_episode_reward", "black", {}};
    for (const auto& m : metrics) series.points.emplace_back(m.iteration, m.mean_episode_reward);
    write_text_atomic(dir / "reward_curve.svg",
                      render_line_chart(robot.name + " training reward", {series}));

    write_text_atomic(dir / "summary.json",
                      run_summary(cfg, robot, params, metrics, wall).dump(2) + "\n");

    return {std::move(params), std::move(metrics), robot, dir};
}

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return kExitDivergence;
    if (dynamic_cast<const CheckpointError*>(&e)) return kExitIncompatible;
    if (dynamic_cast<const IncompatibleTransferError*>(&e)) return kExitIncompatible;
    return kExitConfigError;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code and reports errors on stderr.
// ---------------------------------------------------------------------------

/// Stage-1 training from a fresh initialization.
inline int cmd_train(const ExperimentConfig& cfg, RunResult* out = nullptr) {
    try {
        if (cfg.freeze_mode != FreezeMode::none && !cfg.source_checkpoint)
            throw ConfigError("freeze requires a source checkpoint; trainings from scratch "
                              "must use --freeze none");
        if (cfg.source_checkpoint)
            throw ConfigError("train does not take a source checkpoint; use the transfer command");
        if (cfg.output_dir.empty()) throw ConfigError("no output directory given");
        const RobotConfig robot = load_robot(cfg.robot);
        auto init = init_params(detail::actor_shape_for(robot, cfg.hidden),
                                detail::critic_shape_for(robot, cfg.hidden), cfg.seed);
        RunResult res = detail::execute_run(cfg, robot, std::move(init));
        if (out) *out = std::move(res);
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "train: " << e.what() << "\n";
        return detail::exit_code_for(e);
    }
}

/// Stage-2 training: copy the source actor's hidden blocks, freeze per the
/// configured mode, fine-tune on the target robot.
inline int cmd_transfer(const ExperimentConfig& cfg, RunResult* out = nullptr) {
    try {
        if (!cfg.source_checkpoint) throw ConfigError("transfer requires --source");
        if (!std::filesystem::exists(*cfg.source_checkpoint))
            throw ConfigError("source checkpoint '" + *cfg.source_checkpoint + "' does not exist");
        if (cfg.output_dir.empty()) throw ConfigError("no output directory given");
        const RobotConfig robot = load_robot(cfg.robot);
        auto [source, meta] = load_checkpoint(*cfg.source_checkpoint);
        auto init = transfer_actor(source, detail::actor_shape_for(robot, cfg.hidden),
                                   detail::critic_shape_for(robot, cfg.hidden), cfg.seed);
        RunResult res = detail::execute_run(cfg, robot, std::move(init));
        if (out) *out = std::move(res);
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "transfer: " << e.what() << "\n";
        return detail::exit_code_for(e);
    }
}

struct AblateOutcome {
    // condition -> per-seed reward curves / iteration counts
    std::map<std::string, std::vector<std::vector<double>>> curves;
    std::map<std::string, std::vector<int>> iters_to_threshold;
    std::map<std::string, double> median_iters;
    std::map<std::string, double> median_final;
};

/// The four-condition freeze ablation on the target robot:
/// {scratch, freeze-l1, freeze-l2, freeze-both} x seeds 1..N, each a full
/// run directory, plus a combined CSV, a four-curve chart, and a summary of
/// iterations-to-threshold per condition. Thresholds are 80% of the scratch
/// condition's final trailing mean, per seed.
inline int cmd_ablate(const ExperimentConfig& cfg, AblateOutcome* out = nullptr) {
    try {
        if (!cfg.source_checkpoint) throw ConfigError("ablate requires --source");
        if (!std::filesystem::exists(*cfg.source_checkpoint))
            throw ConfigError("source checkpoint '" + *cfg.source_checkpoint + "' does not exist");
        if (cfg.output_dir.empty()) throw ConfigError("no output directory given");
        if (cfg.ablate_seeds < 1) throw ConfigError("ablate needs at least one seed");
        const std::filesystem::path dir(cfg.output_dir);
        std::filesystem::create_directories(dir);

        struct Condition {
            const char* name;
            const char* color;  // legend colors follow the four-curve convention
            bool transfer;
            FreezeMode mode;
        };
        const std::array<Condition, 4> conditions = {{{"scratch", "black", false, FreezeMode::none},
                                                      {"freeze-both", "red", true, FreezeMode::both},
                                                      {"freeze-l2", "blue", true, FreezeMode::l2},
                                                      {"freeze-l1", "green", true, FreezeMode::l1}}};

        AblateOutcome result;
        std::map<std::string, std::int64_t> trainable_counts;
        for (const auto& cond : conditions) {
            for (int s = 1; s <= cfg.ablate_seeds; ++s) {
                ExperimentConfig run_cfg = cfg;
                run_cfg.seed = std::uint64_t(s);
                run_cfg.freeze_mode = cond.mode;
                run_cfg.output_dir =
                    (dir / (std::string(cond.name) + "-seed" + std::to_string(s))).string();
                if (!cond.transfer) run_cfg.source_checkpoint.reset();

                RunResult res;
                const int code = cond.transfer ? cmd_transfer(run_cfg, &res)
                                               : cmd_train(run_cfg, &res);
                if (code != kExitOk) return code;
                result.curves[cond.name].push_back(reward_series(res.metrics));
                if (trainable_counts.find(cond.name) == trainable_counts.end())
                    trainable_counts[cond.name] =
                        trainable_param_count(res.params, make_freeze_spec(cond.mode));
            }
        }

        // Per-seed thresholds anchored on the scratch condition.
        std::vector<double> thresholds;
        for (int s = 0; s < cfg.ablate_seeds; ++s) {
            const auto& scratch = result.curves["scratch"][s];
            const int w = std::min<int>(10, int(scratch.size()));
            thresholds.push_back(w > 0 ? 0.8 * trailing_mean(scratch, int(scratch.size()), w)
                                       : 0.0);
        }

        std::string combined = "condition,seed,iteration,mean_reward\n";
        nlohmann::json summary;
        summary["thresholds"] = thresholds;
        std::vector<ChartSeries> chart;
        for (const auto& cond : conditions) {
            const auto& curves = result.curves[cond.name];
            std::vector<double> finals;
            for (int s = 0; s < cfg.ablate_seeds; ++s) {
                const auto& r = curves[s];
                for (std::size_t i = 0; i < r.size(); ++i)
                    combined += std::string(cond.name) + "," + std::to_string(s + 1) + "," +
                                std::to_string(i + 1) + "," + detail::fmt_double(r[i]) + "\n";
                result.iters_to_threshold[cond.name].push_back(
                    iterations_to_threshold(r, thresholds[s]));
                const int w = std::min<int>(10, int(r.size()));
                finals.push_back(w > 0 ? trailing_mean(r, int(r.size()), w) : 0.0);
            }
            std::vector<double> its(result.iters_to_threshold[cond.name].begin(),
                                    result.iters_to_threshold[cond.name].end());
            result.median_iters[cond.name] = median(its);
            result.median_final[cond.name] = median(finals);

            // Chart the per-iteration median across seeds.
            ChartSeries series{cond.name, cond.color, {}};
            if (!curves.empty() && !curves.front().empty()) {
                for (std::size_t i = 0; i < curves.front().size(); ++i) {
                    std::vector<double> vals;
                    for (const auto& r : curves) vals.push_back(r[i]);
                    series.points.emplace_back(double(i + 1), median(vals));
                }
            }
            chart.push_back(std::move(series));

            nlohmann::json jc;
            jc["iters_to_threshold"] = result.iters_to_threshold[cond.name];
            jc["median_iters_to_threshold"] = result.median_iters[cond.name];
            jc["median_final_reward"] = result.median_final[cond.name];
            jc["trainable_actor_params"] = trainable_counts[cond.name];
            summary["conditions"][cond.name] = jc;
        }

        detail::write_text_atomic(dir / "combined.csv", combined);
        detail::write_text_atomic(dir / "ablate_curves.svg",
                                  render_line_chart("freeze ablation on " + cfg.robot, chart));
        detail::write_text_atomic(dir / "ablate_summary.json", summary.dump(2) + "\n");
        if (out) *out = std::move(result);
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "ablate: " << e.what() << "\n";
        return detail::exit_code_for(e);
    }
}

struct EvalOutcome {
    std::vector<double> episode_rewards;
    // Per-episode mean |command - actual| over the trailing 500 steps of the
    // trace, for (vx, vy, wz).
    std::vector<std::array<double, 3>> tracking_error;
};

/// Deterministic (mean-action) evaluation producing per-step tracking
/// traces and a JSON report. With an empty robot name, the robot recorded
/// in the checkpoint is used.
inline int cmd_eval(const std::string& checkpoint_path, const std::string& robot_name,
                    const EvalOptions& opts, const std::string& out_dir,
                    EvalOutcome* out = nullptr) {
    try {
        if (out_dir.empty()) throw ConfigError("no output directory given");
        if (!std::filesystem::exists(checkpoint_path))
            throw ConfigError("checkpoint '" + checkpoint_path + "' does not exist");
        auto [params, meta] = load_checkpoint(checkpoint_path);
        const RobotConfig robot = load_robot(robot_name.empty() ? meta.robot_name : robot_name);
        if (params.obs_dim() != robot.obs_dim() || params.action_dim() != robot.joints)
            throw IncompatibleTransferError(
                "checkpoint dims (" + std::to_string(params.obs_dim()) + "/" +
                std::to_string(params.action_dim()) + ") do not match robot '" + robot.name +
                "' (" + std::to_string(robot.obs_dim()) + "/" + std::to_string(robot.joints) + ")");

        const std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        std::string trace = "episode,step,cmd_vx,vx,cmd_vy,vy,cmd_wz,wz,reward\n";

        EvalOutcome result;
        nlohmann::json report;
        report["checkpoint"] = checkpoint_path;
        report["robot"] = robot.name;
        report["episodes"] = nlohmann::json::array();
        MlpCache cache;
        for (int ep = 0; ep < opts.episodes; ++ep) {
            ToyLeggedEnv env(robot, Rng::stream(opts.seed, 0xeba1, std::uint64_t(ep)).next_u64());
            env.reset();
            if (opts.fixed_command) env.set_command(*opts.fixed_command);

            double total = 0.0;
            std::array<double, kNumRewardTerms> term_sums{};
            std::vector<std::array<double, 6>> vel_trace;  // cmd/actual pairs
            const int cap = opts.max_steps.value_or(robot.episode_length);
            for (int t = 0; t < cap; ++t) {
                const auto obs = assemble_observation(env.state(), env.config());
                const auto mean = mlp_forward_cached(params.actor, obs, cache);
                const std::vector<double> action(mean.begin(), mean.end());
                const StepResult res = env.step(action);
                const SimState& st = env.state();
                total += res.reward;
                for (int k = 0; k < kNumRewardTerms; ++k) term_sums[k] += res.terms.weighted[k];
                vel_trace.push_back({st.command[0], st.v[0], st.command[1], st.v[1],
                                     st.command[2], st.omega[2]});
                trace += std::to_string(ep) + "," + std::to_string(t);
                for (double v : vel_trace.back()) trace += "," + detail::fmt_double(v);
                trace += "," + detail::fmt_double(res.reward) + "\n";
                if (res.done) break;
            }

            std::array<double, 3> err{};
            const std::size_t n = vel_trace.size();
            const std::size_t lo = n > 500 ? n - 500 : 0;
            for (std::size_t t = lo; t < n; ++t)
                for (int k = 0; k < 3; ++k)
                    err[k] += std::abs(vel_trace[t][2 * k] - vel_trace[t][2 * k + 1]);
            if (n > lo)
                for (int k = 0; k < 3; ++k) err[k] /= double(n - lo);

            result.episode_rewards.push_back(total);
            result.tracking_error.push_back(err);

            nlohmann::json je;
            je["steps"] = n;
            je["total_reward"] = total;
            nlohmann::json terms;
            for (int k = 0; k < kNumRewardTerms; ++k)
                terms[reward_term_names()[k]] = n > 0 ? term_sums[k] / double(n) : 0.0;
            je["mean_step_reward_terms"] = terms;
            je["tracking_error_last500"] = {{"vx", err[0]}, {"vy", err[1]}, {"wz", err[2]}};
            report["episodes"].push_back(je);
        }

        detail::write_text_atomic(dir / "eval_trace.csv", trace);
        detail::write_text_atomic(dir / "eval_report.json", report.dump(2) + "\n");
        if (out) *out = std::move(result);
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "eval: " << e.what() << "\n";
        return detail::exit_code_for(e);
    }
}

namespace detail {

/// Observation features shared by every robot regardless of joint count:
/// body angular velocity, body-frame gravity, and the command.
inline std::vector<std::vector<double>> common_obs_features(const RobotConfig& robot,
                                                            const ActorCriticParams& params,
                                                            int episodes, std::uint64_t seed) {
    std::vector<std::vector<double>> rows;
    MlpCache cache;
    for (int ep = 0; ep < episodes; ++ep) {
        ToyLeggedEnv env(robot, Rng::stream(seed, 0x0b5, std::uint64_t(ep)).next_u64());
        env.reset();
        for (int t = 0; t < robot.episode_length; ++t) {
            const auto obs = assemble_observation(env.state(), env.config());
            std::vector<double> row(obs.begin(), obs.begin() + 6);
            const int cmd_off = 6 + 2 * robot.joints;
            row.insert(row.end(), obs.begin() + cmd_off, obs.begin() + cmd_off + 3);
            rows.push_back(std::move(row));
            const auto mean = mlp_forward_cached(params.actor, obs, cache);
            const std::vector<double> action(mean.begin(), mean.end());
            if (env.step(action).done) break;
        }
    }
    return rows;
}

inline void standardize_features(std::vector<std::vector<double>>& a,
                                 std::vector<std::vector<double>>& b) {
    if (a.empty() || b.empty()) return;
    const std::size_t dim = a.front().size();
    for (std::size_t k = 0; k < dim; ++k) {
        double mean = 0.0;
        const double n = double(a.size() + b.size());
        for (const auto& r : a) mean += r[k];
        for (const auto& r : b) mean += r[k];
        mean /= n;
        double var = 0.0;
        for (const auto& r : a) var += (r[k] - mean) * (r[k] - mean);
        for (const auto& r : b) var += (r[k] - mean) * (r[k] - mean);
        const double sd = std::sqrt(var / n);
        for (auto& r : a) r[k] = sd > 0 ? (r[k] - mean) / sd : 0.0;
        for (auto& r : b) r[k] = sd > 0 ? (r[k] - mean) / sd : 0.0;
    }
}

}  // namespace detail

/// Merges run directories into one report: summaries, overlaid reward
/// curves, and (when runs from two different robots are present) an MMD
/// diagnostic between their observation distributions over the shared
/// feature blocks. Malformed directories are listed, not fatal, unless all
/// inputs are malformed.
inline int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    try {
        if (out_dir.empty()) throw ConfigError("no output directory given");
        if (run_dirs.empty()) throw ConfigError("report needs at least one run directory");

        // Deduplicate by canonical path, preserving order.
        std::vector<std::filesystem::path> dirs;
        std::set<std::string> seen;
        for (const auto& d : run_dirs) {
            std::error_code ec;
            const auto canon = std::filesystem::weakly_canonical(d, ec);
            const std::string key = ec ? d : canon.string();
            if (seen.insert(key).second) dirs.push_back(d);
        }

        nlohmann::json report;
        report["runs"] = nlohmann::json::array();
        report["errors"] = nlohmann::json::array();
        std::vector<ChartSeries> chart;
        const std::array<const char*, 6> palette = {"black", "blue",   "green",
                                                    "red",   "orange", "purple"};
        struct LoadedRun {
            std::string robot;
            std::filesystem::path dir;
        };
        std::vector<LoadedRun> loaded;

        for (const auto& dir : dirs) {
            try {
                nlohmann::json summary =
                    nlohmann::json::parse(detail::read_text(dir / "summary.json"));
                summary["dir"] = dir.string();
                report["runs"].push_back(summary);

                // Reward curve from metrics.csv (column 2).
                const std::string csv = detail::read_text(dir / "metrics.csv");
                ChartSeries series{dir.filename().string(),
                                   palette[chart.size() % palette.size()],
                                   {}};
                std::size_t pos = csv.find('\n');
                int it = 0;
                while (pos != std::string::npos && pos + 1 < csv.size()) {
                    const std::size_t eol = csv.find('\n', pos + 1);
                    const std::string line =
                        csv.substr(pos + 1, eol == std::string::npos ? eol : eol - pos - 1);
                    if (!line.empty()) {
                        const std::size_t c1 = line.find(',');
                        const std::size_t c2 = line.find(',', c1 + 1);
                        if (c1 != std::string::npos && c2 != std::string::npos)
                            series.points.emplace_back(++it,
                                                       std::stod(line.substr(c1 + 1, c2 - c1 - 1)));
                    }
                    pos = eol;
                }
                chart.push_back(std::move(series));
                loaded.push_back({summary.value("robot", std::string()), dir});
            } catch (const std::exception& e) {
                report["errors"].push_back({{"dir", dir.string()}, {"error", e.what()}});
            }
        }

        if (loaded.empty()) {
            std::cerr << "report: all run directories are malformed\n";
            const std::filesystem::path dir(out_dir);
            std::filesystem::create_directories(dir);
            detail::write_text_atomic(dir / "report.json", report.dump(2) + "\n");
            return kExitConfigError;
        }

        // MMD between the first pair of runs with different robots. Robots
        // are re-resolved through each run's config snapshot so custom JSON
        // robots work too.
        auto run_robot = [](const std::filesystem::path& dir) {
            const auto cfg = experiment_config_from_json(
                nlohmann::json::parse(detail::read_text(dir / "config.json")));
            return load_robot(cfg.robot);
        };
        for (std::size_t i = 0; i < loaded.size() && !report.contains("mmd_obs"); ++i) {
            for (std::size_t k = i + 1; k < loaded.size(); ++k) {
                if (loaded[i].robot == loaded[k].robot || loaded[i].robot.empty()) continue;
                try {
                    auto [pa, ma] = load_checkpoint(loaded[i].dir / "final.ckpt");
                    auto [pb, mb] = load_checkpoint(loaded[k].dir / "final.ckpt");
                    auto fa = detail::common_obs_features(run_robot(loaded[i].dir), pa, 4, 7);
                    auto fb = detail::common_obs_features(run_robot(loaded[k].dir), pb, 4, 7);
                    detail::standardize_features(fa, fb);
                    report["mmd_obs"] = mmd(fa, fb);
                    report["mmd_between"] = {loaded[i].robot, loaded[k].robot};
                } catch (const std::exception& e) {
                    report["errors"].push_back(
                        {{"dir", loaded[k].dir.string()},
                         {"error", std::string("mmd failed: ") + e.what()}});
                }
                break;
            }
        }

        const std::filesystem::path dir(out_dir);
        std::filesystem::create_directories(dir);
        detail::write_text_atomic(dir / "report.json", report.dump(2) + "\n");
        detail::write_text_atomic(dir / "report_curves.svg",
                                  render_line_chart("training reward", chart));
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "report: " << e.what() << "\n";
        return detail::exit_code_for(e);
    }
}

/// Default output root: $PTRL_OUT_ROOT or ./runs.
inline std::filesystem::path default_out_root() {
    if (const char* env = std::getenv("PTRL_OUT_ROOT")) return env;
    return "runs";
}

}  // namespace ptrl
