#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "ptrl/net.hpp"
#include "ptrl/transfer.hpp"

using namespace ptrl;

namespace {

MlpShape small_actor() { return {4, {8, 8}, 2}; }
MlpShape small_critic() { return {4, {8, 8}, 1}; }

}  // namespace

TEST_CASE("elu closed forms", "[net]") {
    CHECK(elu(0.0) == 0.0);
    CHECK(elu(1.0) == 1.0);
    CHECK(elu(-1.0) == Catch::Approx(std::exp(-1.0) - 1.0).epsilon(1e-14));
    CHECK(elu(3.5) == 3.5);

    // C1 at zero: both one-sided derivatives are 1.
    const double h = 1e-9;
    CHECK((elu(h) - elu(0.0)) / h == Catch::Approx(1.0).margin(1e-6));
    CHECK((elu(0.0) - elu(-h)) / h == Catch::Approx(1.0).margin(1e-6));
    CHECK(elu_deriv_from_value(elu(0.0)) == 1.0);

    // Monotone on a coarse grid.
    double prev = elu(-6.0);
    for (double x = -5.9; x < 6.0; x += 0.1) {
        CHECK(elu(x) > prev);
        prev = elu(x);
    }
}

TEST_CASE("init_params parameter counts and determinism", "[net]") {
    SECTION("canonical quadruped shape") {
        auto p = init_params({45, {512, 256, 128}, 12}, {45, {512, 256, 128}, 1}, 7);
        CHECK(p.actor_param_count() == 189336);
        CHECK(int(p.actor.size()) == 4);
        CHECK(p.actor[1].fan_in == 512);
        CHECK(p.actor[1].fan_out == 256);
        CHECK(p.actor[2].fan_in == 256);
        CHECK(p.actor[2].fan_out == 128);
    }
    SECTION("toy source robot shape") {
        auto p = init_params({15, {512, 256, 128}, 2}, {15, {512, 256, 128}, 1}, 7);
        CHECK(p.actor_param_count() == 172676);
    }
    SECTION("same seed twice is bit-identical, different seed is not") {
        auto a = init_params(small_actor(), small_critic(), 123);
        auto b = init_params(small_actor(), small_critic(), 123);
        auto c = init_params(small_actor(), small_critic(), 124);
        CHECK(a == b);
        CHECK(a != c);
    }
    SECTION("uniform bounds, zero biases, zero log-std") {
        auto p = init_params(small_actor(), small_critic(), 9);
        for (const auto& block : p.actor) {
            const double bound = std::sqrt(6.0 / (block.fan_in + block.fan_out));
            for (double w : block.weight) CHECK(std::abs(w) <= bound);
            for (double b : block.bias) CHECK(b == 0.0);
        }
        for (double ls : p.actor_log_std) CHECK(ls == 0.0);
    }
    SECTION("invalid shapes are rejected") {
        CHECK_THROWS_AS(init_params({0, {8, 8}, 2}, small_critic(), 1), ConfigError);
        CHECK_THROWS_AS(init_params({4, {8}, 2}, small_critic(), 1), ConfigError);
        CHECK_THROWS_AS(init_params({4, {8, 0}, 2}, small_critic(), 1), ConfigError);
    }
}

TEST_CASE("parameter count identity over random shapes", "[net]") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        MlpShape shape;
        shape.input_dim = 1 + int(rng.below(20));
        shape.hidden.clear();
        const int n_hidden = 2 + int(rng.below(3));
        for (int i = 0; i < n_hidden; ++i) shape.hidden.push_back(1 + int(rng.below(16)));
        shape.output_dim = 1 + int(rng.below(6));

        auto p = init_params(shape, {shape.input_dim, shape.hidden, 1}, trial);
        std::int64_t expected = shape.output_dim;  // log-std entries
        int prev = shape.input_dim;
        for (int h : shape.hidden) {
            expected += std::int64_t(prev) * h + h;
            prev = h;
        }
        expected += std::int64_t(prev) * shape.output_dim + shape.output_dim;
        CHECK(p.actor_param_count() == expected);
    }
}

TEST_CASE("actor_forward basics", "[net]") {
    SECTION("all-zero parameters give a zero mean") {
        auto p = init_params(small_actor(), small_critic(), 3);
        for (auto& b : p.actor) {
            std::fill(b.weight.begin(), b.weight.end(), 0.0);
            std::fill(b.bias.begin(), b.bias.end(), 0.0);
        }
        const std::vector<double> obs = {0.3, -1.2, 0.7, 2.0};
        for (double m : actor_forward(p, obs)) CHECK(m == 0.0);
    }
    SECTION("single identity layer passes the input through") {
        std::vector<LayerBlock> layers = {LayerBlock::zeros(1, 1)};
        layers[0].weight[0] = 1.0;
        const std::vector<double> obs = {0.37};
        CHECK(mlp_forward(layers, obs)[0] == 0.37);
    }
    SECTION("dimension mismatch throws") {
        auto p = init_params(small_actor(), small_critic(), 3);
        const std::vector<double> bad = {1.0, 2.0};
        CHECK_THROWS_AS(actor_forward(p, bad), ShapeError);
    }
}

namespace {

// Hand-rolled forward pass, independent of the library kernels.
std::vector<double> oracle_forward(const std::vector<LayerBlock>& layers,
                                   const std::vector<double>& input) {
    std::vector<double> x = input;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& L = layers[l];
        std::vector<double> y(L.fan_out);
        for (int j = 0; j < L.fan_out; ++j) {
            double acc = L.bias[j];
            for (int i = 0; i < L.fan_in; ++i) acc += x[i] * L.weight[std::size_t(i) * L.fan_out + j];
            y[j] = acc;
        }
        if (l + 1 < layers.size())
            for (auto& v : y) v = v >= 0.0 ? v : std::expm1(v);
        x = std::move(y);
    }
    return x;
}

}  // namespace

TEST_CASE("forward matches an independent matrix-multiply oracle", "[net]") {
    Rng rng(5150);
    for (int trial = 0; trial < 5; ++trial) {
        auto p = init_params(small_actor(), small_critic(), 100 + trial);
        std::vector<double> obs(4);
        for (auto& o : obs) o = rng.uniform(-2.0, 2.0);

        const auto mean = actor_forward(p, obs);
        const auto expected = oracle_forward(p.actor, obs);
        REQUIRE(mean.size() == expected.size());
        for (std::size_t i = 0; i < mean.size(); ++i)
            CHECK(mean[i] == Catch::Approx(expected[i]).margin(1e-12));

        const double v = critic_forward(p, obs);
        CHECK(v == Catch::Approx(oracle_forward(p.critic, obs)[0]).margin(1e-12));
    }
}

TEST_CASE("log_prob_and_entropy closed forms", "[net]") {
    SECTION("density at the mode with unit std") {
        const std::vector<double> mean = {0.4, -1.0, 2.5};
        const std::vector<double> log_std = {0.0, 0.0, 0.0};
        const auto lp = log_prob_and_entropy(mean, log_std, mean);
        CHECK(lp.log_prob ==
              Catch::Approx(-1.5 * std::log(2.0 * std::numbers::pi)).margin(1e-12));
    }
    SECTION("unit-Gaussian entropy in one dimension") {
        const std::vector<double> z = {0.0};
        const auto lp = log_prob_and_entropy(z, z, z);
        CHECK(lp.entropy == Catch::Approx(1.4189385332046727).margin(1e-12));
    }
    SECTION("translation invariance") {
        Rng rng(77);
        std::vector<double> mean(4), log_std(4), action(4), shift(4);
        for (int i = 0; i < 4; ++i) {
            mean[i] = rng.uniform(-1, 1);
            log_std[i] = rng.uniform(-0.5, 0.5);
            action[i] = rng.uniform(-1, 1);
            shift[i] = rng.uniform(-3, 3);
        }
        const auto base = log_prob_and_entropy(mean, log_std, action);
        for (int i = 0; i < 4; ++i) {
            mean[i] += shift[i];
            action[i] += shift[i];
        }
        const auto moved = log_prob_and_entropy(mean, log_std, action);
        CHECK(moved.log_prob == Catch::Approx(base.log_prob).margin(1e-12));
        CHECK(moved.entropy == base.entropy);
    }
    SECTION("length mismatch throws") {
        const std::vector<double> a = {0.0, 1.0};
        const std::vector<double> b = {0.0};
        CHECK_THROWS_AS(log_prob_and_entropy(a, b, a), ShapeError);
    }
}

namespace {

// Scalar test loss: sum of weighted actor outputs plus squared critic value,
// over two probe observations.
double probe_loss(const ActorCriticParams& p, const std::vector<std::vector<double>>& probes,
                  const std::vector<double>& out_weights) {
    double loss = 0.0;
    for (const auto& obs : probes) {
        const auto mean = actor_forward(p, obs);
        for (std::size_t j = 0; j < mean.size(); ++j) loss += out_weights[j] * mean[j];
        const double v = critic_forward(p, obs);
        loss += 0.5 * v * v;
        for (std::size_t j = 0; j < p.actor_log_std.size(); ++j)
            loss += 0.25 * p.actor_log_std[j] * p.actor_log_std[j];
    }
    return loss;
}

GradientSet probe_loss_grad(const ActorCriticParams& p,
                            const std::vector<std::vector<double>>& probes,
                            const std::vector<double>& out_weights) {
    GradientSet g = GradientSet::zeros_like(p);
    for (const auto& obs : probes) {
        MlpCache ca, cc;
        mlp_forward_cached(p.actor, obs, ca);
        const double v = mlp_forward_cached(p.critic, obs, cc)[0];
        mlp_backward(p.actor, ca, out_weights, g.actor);
        const std::vector<double> dv = {v};
        mlp_backward(p.critic, cc, dv, g.critic);
        for (std::size_t j = 0; j < p.actor_log_std.size(); ++j)
            g.actor_log_std[j] += 0.5 * p.actor_log_std[j];
    }
    return g;
}

// Central finite difference of probe_loss w.r.t. one scalar parameter.
template <typename Getter>
double central_diff(ActorCriticParams p, Getter&& get,
                    const std::vector<std::vector<double>>& probes,
                    const std::vector<double>& out_weights, double h = 1e-5) {
    double& x = get(p);
    const double x0 = x;
    x = x0 + h;
    const double lp = probe_loss(p, probes, out_weights);
    x = x0 - h;
    const double lm = probe_loss(p, probes, out_weights);
    return (lp - lm) / (2.0 * h);
}

bool grad_close(double analytic, double numeric) {
    const double diff = std::abs(analytic - numeric);
    if (diff < 1e-7) return true;
    return diff / std::max(std::abs(analytic), std::abs(numeric)) < 1e-4;
}

}  // namespace

TEST_CASE("backward matches central finite differences", "[net]") {
    auto p = init_params(small_actor(), small_critic(), 2024);
    // Non-trivial log-std so its gradient path is exercised.
    Rng rng(11);
    for (auto& ls : p.actor_log_std) ls = rng.uniform(-0.4, 0.4);

    std::vector<std::vector<double>> probes(2, std::vector<double>(4));
    for (auto& obs : probes)
        for (auto& o : obs) o = rng.uniform(-1.5, 1.5);
    const std::vector<double> out_weights = {0.7, -1.3};

    const GradientSet g = probe_loss_grad(p, probes, out_weights);

    int checked = 0;
    for (std::size_t b = 0; b < p.actor.size(); ++b) {
        for (std::size_t i = 0; i < p.actor[b].weight.size(); ++i) {
            const double fd = central_diff(
                p, [&](ActorCriticParams& q) -> double& { return q.actor[b].weight[i]; },
                probes, out_weights);
            CHECK(grad_close(g.actor[b].weight[i], fd));
            ++checked;
        }
        for (std::size_t i = 0; i < p.actor[b].bias.size(); ++i) {
            const double fd = central_diff(
                p, [&](ActorCriticParams& q) -> double& { return q.actor[b].bias[i]; },
                probes, out_weights);
            CHECK(grad_close(g.actor[b].bias[i], fd));
            ++checked;
        }
    }
    for (std::size_t b = 0; b < p.critic.size(); ++b)
        for (std::size_t i = 0; i < p.critic[b].weight.size(); ++i) {
            const double fd = central_diff(
                p, [&](ActorCriticParams& q) -> double& { return q.critic[b].weight[i]; },
                probes, out_weights);
            CHECK(grad_close(g.critic[b].weight[i], fd));
            ++checked;
        }
    for (std::size_t j = 0; j < p.actor_log_std.size(); ++j) {
        const double fd = central_diff(
            p, [&](ActorCriticParams& q) -> double& { return q.actor_log_std[j]; }, probes,
            out_weights);
        CHECK(grad_close(g.actor_log_std[j], fd));
        ++checked;
    }
    CHECK(checked > 200);
}

TEST_CASE("zero output gradient gives zero parameter gradients", "[net]") {
    auto p = init_params(small_actor(), small_critic(), 31);
    MlpCache cache;
    const std::vector<double> obs = {0.1, 0.2, -0.3, 0.4};
    mlp_forward_cached(p.actor, obs, cache);
    GradientSet g = GradientSet::zeros_like(p);
    const std::vector<double> d_out = {0.0, 0.0};
    mlp_backward(p.actor, cache, d_out, g.actor);
    for (const auto& b : g.actor) {
        for (double w : b.weight) CHECK(w == 0.0);
        for (double v : b.bias) CHECK(v == 0.0);
    }
}

TEST_CASE("apply_freeze masks exactly the frozen blocks", "[net]") {
    auto p = init_params({45, {512, 256, 128}, 12}, {45, {512, 256, 128}, 1}, 8);
    GradientSet g = GradientSet::zeros_like(p);
    auto fill_ones = [](GradientSet& gs) {
        for (auto& b : gs.actor) {
            std::fill(b.weight.begin(), b.weight.end(), 1.0);
            std::fill(b.bias.begin(), b.bias.end(), 1.0);
        }
        std::fill(gs.actor_log_std.begin(), gs.actor_log_std.end(), 1.0);
        for (auto& b : gs.critic) {
            std::fill(b.weight.begin(), b.weight.end(), 1.0);
            std::fill(b.bias.begin(), b.bias.end(), 1.0);
        }
    };

    SECTION("empty spec leaves gradients untouched") {
        fill_ones(g);
        apply_freeze(g, FreezeSpec{});
        for (double w : g.actor[1].weight) CHECK(w == 1.0);
    }
    SECTION("L1 spec zeroes block 1 and nothing else") {
        fill_ones(g);
        apply_freeze(g, make_freeze_spec(FreezeMode::l1));
        for (double w : g.actor[1].weight) CHECK(w == 0.0);
        for (double w : g.actor[1].bias) CHECK(w == 0.0);
        for (double w : g.actor[0].weight) CHECK(w == 1.0);
        for (double w : g.actor[2].weight) CHECK(w == 1.0);
        for (double w : g.actor[3].weight) CHECK(w == 1.0);
        for (double w : g.actor_log_std) CHECK(w == 1.0);
        for (double w : g.critic[1].weight) CHECK(w == 1.0);
    }
    SECTION("out-of-range index is a configuration error") {
        CHECK_THROWS_AS(apply_freeze(g, FreezeSpec{{3}}), ConfigError);
        CHECK_THROWS_AS(apply_freeze(g, FreezeSpec{{0}}), ConfigError);
    }
    SECTION("frozen trainable count arithmetic for the canonical shape") {
        CHECK(trainable_param_count(p, make_freeze_spec(FreezeMode::both)) == 189336 - 164224);
    }
}
