#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ptrl/transfer.hpp"

using namespace ptrl;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("ptrl-test-" + std::to_string(std::uintptr_t(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ActorCriticParams random_params(std::uint64_t seed) {
    auto p = init_params({5, {8, 6}, 3}, {5, {8, 6}, 1}, seed);
    Rng rng(seed + 1);
    for (auto& ls : p.actor_log_std) ls = rng.uniform(-1.0, 1.0);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& data) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f.write(data.data(), std::streamsize(data.size()));
}

}  // namespace

TEST_CASE("checkpoint round trip is bit-exact", "[transfer]") {
    TempDir dir;
    const auto p = random_params(71);
    CheckpointMeta meta{"toy-quad", 300, 42};
    const auto path = dir.path / "a.ckpt";
    save_checkpoint(p, meta, path);

    auto [loaded, loaded_meta] = load_checkpoint(path);
    CHECK(loaded == p);
    CHECK(loaded_meta == meta);

    // Saving the identical state twice produces identical bytes.
    const auto path2 = dir.path / "b.ckpt";
    save_checkpoint(p, meta, path2);
    CHECK(slurp(path) == slurp(path2));
}

TEST_CASE("checkpoint error contracts", "[transfer]") {
    TempDir dir;
    const auto p = random_params(72);
    const auto path = dir.path / "c.ckpt";
    save_checkpoint(p, {"toy-quad", 10, 1}, path);
    const std::string good = slurp(path);

    SECTION("truncated file") {
        for (std::size_t cut : {std::size_t(3), std::size_t(20), good.size() / 2, good.size() - 1}) {
            spit(path, good.substr(0, cut));
            CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
        }
    }
    SECTION("trailing bytes") {
        spit(path, good + "zz");
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    SECTION("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        spit(path, bad);
        CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    }
    SECTION("version bump names both versions") {
        std::string bad = good;
        bad[4] = char(kCheckpointVersion + 1);
        spit(path, bad);
        try {
            load_checkpoint(path);
            FAIL("expected CheckpointError");
        } catch (const CheckpointError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("version " + std::to_string(kCheckpointVersion + 1)) !=
                  std::string::npos);
            CHECK(msg.find("version " + std::to_string(kCheckpointVersion)) != std::string::npos);
        }
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_checkpoint(dir.path / "nope.ckpt"), CheckpointError);
    }
}

TEST_CASE("transfer_actor copies hidden blocks and reseeds the rest", "[transfer]") {
    const auto source = init_params({15, {16, 12, 8}, 2}, {15, {16, 12, 8}, 1}, 5);

    SECTION("mismatched input/output dims") {
        const MlpShape tgt_actor{18, {16, 12, 8}, 3};
        const MlpShape tgt_critic{18, {16, 12, 8}, 1};
        const auto target = transfer_actor(source, tgt_actor, tgt_critic, 99);

        CHECK(target.actor[1] == source.actor[1]);
        CHECK(target.actor[2] == source.actor[2]);
        CHECK(target.actor[0].fan_in == 18);
        CHECK(target.actor[3].fan_out == 3);

        // Fresh input/output/log-std/critic come from the seed.
        const auto fresh = init_params(tgt_actor, tgt_critic, 99);
        CHECK(target.actor[0] == fresh.actor[0]);
        CHECK(target.actor[3] == fresh.actor[3]);
        CHECK(target.actor_log_std == fresh.actor_log_std);
        CHECK(target.critic == fresh.critic);
    }
    SECTION("hidden width mismatch is an incompatible transfer") {
        CHECK_THROWS_AS(
            transfer_actor(source, {18, {16, 12, 4}, 3}, {18, {16, 12, 4}, 1}, 1),
            IncompatibleTransferError);
    }
    SECTION("identical shapes with copy_io_when_matching") {
        const MlpShape same_actor{15, {16, 12, 8}, 2};
        const MlpShape same_critic{15, {16, 12, 8}, 1};
        const auto target = transfer_actor(source, same_actor, same_critic, 7, true);
        for (std::size_t b = 0; b < source.actor.size(); ++b)
            CHECK(target.actor[b] == source.actor[b]);
        CHECK(target.critic != source.critic);  // critic always fresh
    }
    SECTION("matching flag off keeps io fresh even for identical shapes") {
        const auto target =
            transfer_actor(source, {15, {16, 12, 8}, 2}, {15, {16, 12, 8}, 1}, 7, false);
        CHECK(target.actor[0] != source.actor[0]);
        CHECK(target.actor[3] != source.actor[3]);
    }
}

TEST_CASE("make_freeze_spec modes", "[transfer]") {
    CHECK(make_freeze_spec(FreezeMode::none).frozen_blocks.empty());
    CHECK(make_freeze_spec("l1").frozen_blocks == std::set<int>{1});
    CHECK(make_freeze_spec("l2").frozen_blocks == std::set<int>{2});
    CHECK(make_freeze_spec("both").frozen_blocks == std::set<int>{1, 2});
    CHECK(make_freeze_spec("none").frozen_blocks.empty());
    CHECK_THROWS_AS(parse_freeze_mode("later"), ConfigError);
}

TEST_CASE("trainable_param_count canonical numbers", "[transfer]") {
    const auto p = init_params({45, {512, 256, 128}, 12}, {45, {512, 256, 128}, 1}, 1);
    CHECK(trainable_param_count(p, make_freeze_spec(FreezeMode::none)) == 189336);
    CHECK(trainable_param_count(p, make_freeze_spec(FreezeMode::l2)) == 156440);
    CHECK(trainable_param_count(p, make_freeze_spec(FreezeMode::l1)) == 58008);
    CHECK(trainable_param_count(p, make_freeze_spec(FreezeMode::both)) == 25112);
}

TEST_CASE("trainable count arithmetic holds for arbitrary shapes", "[transfer]") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        MlpShape shape;
        shape.input_dim = 3 + int(rng.below(30));
        shape.hidden = {int(4 + rng.below(20)), int(4 + rng.below(20)), int(4 + rng.below(20))};
        shape.output_dim = 1 + int(rng.below(8));
        const auto p = init_params(shape, {shape.input_dim, shape.hidden, 1}, trial);

        for (FreezeMode mode : {FreezeMode::l1, FreezeMode::l2, FreezeMode::both}) {
            const auto spec = make_freeze_spec(mode);
            std::int64_t frozen = 0;
            for (int b : spec.frozen_blocks) frozen += p.actor[b].param_count();
            CHECK(trainable_param_count(p, make_freeze_spec(FreezeMode::none)) -
                      trainable_param_count(p, spec) ==
                  frozen);
        }
    }
}

TEST_CASE("mmd diagnostic", "[transfer]") {
    SECTION("identical sets vanish") {
        std::vector<std::vector<double>> xs;
        Rng rng(3);
        for (int i = 0; i < 12; ++i)
            xs.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
        CHECK(mmd(xs, xs) <= 1e-12);
    }
    SECTION("single-point closed form at distance h") {
        MmdConfig cfg;
        cfg.bandwidth = 0.7;
        const std::vector<std::vector<double>> a = {{0.0, 0.0}};
        const std::vector<std::vector<double>> b = {{0.7, 0.0}};
        const double expected = 2.0 - 2.0 * std::exp(-0.5);
        CHECK(mmd(a, b, cfg) == Catch::Approx(expected).margin(1e-12));
    }
    SECTION("symmetry and non-negativity") {
        Rng rng(4);
        std::vector<std::vector<double>> a, b;
        for (int i = 0; i < 9; ++i) a.push_back({rng.gaussian(), rng.gaussian()});
        for (int i = 0; i < 7; ++i) b.push_back({1.0 + rng.gaussian(), rng.gaussian()});
        const double ab = mmd(a, b);
        const double ba = mmd(b, a);
        CHECK(ab == ba);
        CHECK(ab >= 0.0);
    }
    SECTION("input errors") {
        const std::vector<std::vector<double>> empty;
        const std::vector<std::vector<double>> one = {{1.0}};
        const std::vector<std::vector<double>> two = {{1.0, 2.0}};
        CHECK_THROWS_AS(mmd(empty, one), InputError);
        CHECK_THROWS_AS(mmd(one, two), InputError);
        MmdConfig bad;
        bad.bandwidth = -1.0;
        CHECK_THROWS_AS(mmd(one, one, bad), InputError);
    }
}
