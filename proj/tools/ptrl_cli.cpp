// ptrl: train, transfer, ablate, evaluate and report on toy legged robots.

#include <array>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ptrl/harness.hpp"

namespace {

struct SharedFlags {
    std::optional<std::string> config_path;
    std::optional<std::string> robot;
    std::optional<std::uint64_t> seed;
    std::optional<int> iterations;
    std::optional<std::string> freeze;
    std::optional<std::string> source;
    std::optional<std::string> out;
    std::optional<int> seeds;
    bool deterministic = false;
    std::optional<std::vector<int>> hidden;
    std::optional<int> num_envs;
    std::optional<int> steps;
    std::optional<double> gamma;
    std::optional<double> entropy_coef;
    std::optional<double> max_grad_norm;
    std::optional<double> learning_rate;
    std::optional<bool> lr_adaptive;
};

void add_shared_flags(CLI::App* cmd, SharedFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
    cmd->add_option("--robot", f.robot, "robot preset name (toy-quad, toy-biped) or JSON path");
    cmd->add_option("--seed", f.seed, "master seed");
    cmd->add_option("--iterations", f.iterations, "training iterations");
    cmd->add_option("--freeze", f.freeze, "frozen actor blocks: none|l1|l2|both");
    cmd->add_option("--source", f.source, "source checkpoint path");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_flag("--deterministic", f.deterministic,
                  "byte-reproducible mode (wall_seconds counts simulated time)");
    cmd->add_option("--hidden", f.hidden, "hidden layer widths")->expected(2, 8);
    cmd->add_option("--num-envs", f.num_envs, "parallel environments per iteration");
    cmd->add_option("--steps", f.steps, "env steps per environment per iteration");
    cmd->add_option("--gamma", f.gamma, "discount factor");
    cmd->add_option("--entropy-coef", f.entropy_coef, "entropy bonus coefficient");
    cmd->add_option("--max-grad-norm", f.max_grad_norm, "global gradient norm clip");
    cmd->add_option("--lr", f.learning_rate, "learning rate");
    cmd->add_option("--lr-adaptive", f.lr_adaptive, "KL-adaptive learning rate on/off");
}

ptrl::ExperimentConfig build_config(const SharedFlags& f, const std::string& default_name) {
    ptrl::ExperimentConfig cfg;
    if (f.config_path) cfg = ptrl::load_experiment_config(*f.config_path, cfg);
    if (f.robot) cfg.robot = *f.robot;
    if (f.seed) cfg.seed = *f.seed;
    if (f.iterations) cfg.ppo.iterations = *f.iterations;
    if (f.freeze) cfg.freeze_mode = ptrl::parse_freeze_mode(*f.freeze);
    if (f.source) cfg.source_checkpoint = *f.source;
    if (f.out) cfg.output_dir = *f.out;
    if (f.deterministic) cfg.deterministic_schedule = true;
    if (f.hidden) cfg.hidden = *f.hidden;
    if (f.num_envs) cfg.ppo.num_envs = *f.num_envs;
    if (f.steps) cfg.ppo.steps_per_iter = *f.steps;
    if (f.gamma) cfg.ppo.gamma = *f.gamma;
    if (f.entropy_coef) cfg.ppo.entropy_coef = *f.entropy_coef;
    if (f.max_grad_norm) cfg.ppo.max_grad_norm = *f.max_grad_norm;
    if (f.learning_rate) cfg.ppo.learning_rate = *f.learning_rate;
    if (f.lr_adaptive) cfg.ppo.lr_adaptive = *f.lr_adaptive;
    if (f.seeds) cfg.ablate_seeds = *f.seeds;
    if (cfg.output_dir.empty())
        cfg.output_dir = (ptrl::default_out_root() / default_name).string();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PPO transfer laboratory for toy legged robots"};
    app.require_subcommand(1);

    SharedFlags train_f, transfer_f, ablate_f;
    auto* train = app.add_subcommand("train", "train a policy from scratch");
    add_shared_flags(train, train_f);
    auto* transfer = app.add_subcommand(
        "transfer", "initialize from a source checkpoint, freeze blocks, fine-tune");
    add_shared_flags(transfer, transfer_f);
    auto* ablate = app.add_subcommand(
        "ablate", "run the scratch/freeze-l1/freeze-l2/freeze-both grid");
    add_shared_flags(ablate, ablate_f);
    ablate->add_option("--seeds", ablate_f.seeds, "number of seeds per condition");

    // eval
    std::string eval_checkpoint;
    SharedFlags eval_f;
    int eval_episodes = 1;
    std::optional<std::vector<double>> eval_command;
    std::optional<int> eval_steps;
    auto* eval = app.add_subcommand("eval", "deterministic policy evaluation with traces");
    eval->add_option("checkpoint", eval_checkpoint, "checkpoint to evaluate")->required();
    eval->add_option("--robot", eval_f.robot,
                     "robot preset or JSON path (default: the checkpoint's robot)");
    eval->add_option("--seed", eval_f.seed, "evaluation seed");
    eval->add_option("--episodes", eval_episodes, "number of episodes");
    eval->add_option("--command", eval_command, "fixed command vx vy wz")->expected(3);
    eval->add_option("--steps", eval_steps, "cap steps per episode");
    eval->add_option("--out", eval_f.out, "output directory");

    // report
    std::vector<std::string> report_dirs;
    std::string report_out;
    auto* report = app.add_subcommand("report", "merge run directories into one report");
    report->add_option("runs", report_dirs, "run directories")->required();
    report->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return ptrl::kExitConfigError;
    }

    try {
        if (train->parsed()) return ptrl::cmd_train(build_config(train_f, "train"));
        if (transfer->parsed()) return ptrl::cmd_transfer(build_config(transfer_f, "transfer"));
        if (ablate->parsed()) return ptrl::cmd_ablate(build_config(ablate_f, "ablate"));
        if (eval->parsed()) {
            ptrl::EvalOptions opts;
            opts.episodes = eval_episodes;
            if (eval_f.seed) opts.seed = *eval_f.seed;
            if (eval_command)
                opts.fixed_command = {(*eval_command)[0], (*eval_command)[1], (*eval_command)[2]};
            if (eval_steps) opts.max_steps = *eval_steps;
            const std::string out =
                eval_f.out ? *eval_f.out : (ptrl::default_out_root() / "eval").string();
            return ptrl::cmd_eval(eval_checkpoint, eval_f.robot.value_or(""), opts, out);
        }
        if (report->parsed()) {
            const std::string out =
                report_out.empty() ? (ptrl::default_out_root() / "report").string() : report_out;
            return ptrl::cmd_report(report_dirs, out);
        }
    } catch (const std::exception& e) {
        std::cerr << "ptrl: " << e.what() << "\n";
        return ptrl::kExitConfigError;
    }
    return ptrl::kExitConfigError;
}
