#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hdexpit/dataset.hpp"

using namespace hdexpit;
namespace fs = std::filesystem;

namespace {

struct Fixture {
    EnvConfig cfg;
    TaskRegistry reg = TaskRegistry::standard();
    std::uint64_t digest;

    Fixture() { digest = env_digest(cfg, reg); }

    Trajectory make_traj(int task, std::uint64_t seed) {
        Rng rng(seed);
        PushWorldEnv env(cfg, reg);
        Context ctx;
        ctx.initial_state = PushWorldEnv::reset_state(cfg, rng);
        ctx.task = task;
        ctx.origin = ContextOrigin::env_reset;
        return scripted_expert(ctx, env, rng);
    }

    Dataset make_dataset(int per_task, std::uint64_t seed) {
        DatasetMeta meta;
        meta.env_digest = digest;
        meta.obs_h = cfg.height;
        meta.obs_w = cfg.width;
        Dataset d(meta);
        for (int t = 0; t < reg.size(); ++t)
            for (int i = 0; i < per_task; ++i)
                d.add(make_traj(t, derive_seed(seed, t, i)));
        return d;
    }
};

std::string temp_dir(const char* tag) {
    auto p = fs::temp_directory_path() / (std::string("hdexpit_test_") + tag);
    fs::remove_all(p);
    return p.string();
}

}  // namespace

TEST_CASE("dataset add enforces success and counts") {
    Fixture fx;
    DatasetMeta meta;
    meta.env_digest = fx.digest;
    meta.obs_h = fx.cfg.height;
    meta.obs_w = fx.cfg.width;
    Dataset d(meta);
    CHECK(d.per_task_count("push_red_left") == 0);
    CHECK(d.per_task_count("no_such_task") == 0);

    for (int i = 0; i < 3; ++i) d.add(fx.make_traj(0, i));
    CHECK(d.per_task_count("push_red_left") == 3);

    auto bad = fx.make_traj(1, 99);
    bad.success = false;
    CHECK_THROWS_AS(d.add(bad), IntegrityError);
}

TEST_CASE("aggregate: merge and replace semantics") {
    Fixture fx;
    auto d10 = fx.make_dataset(1, 1);  // 10 trajectories
    DatasetMeta meta = d10.meta();
    Dataset r4(meta);
    for (int i = 0; i < 4; ++i) r4.add(fx.make_traj(i % 3, derive_seed(2, i)));

    const auto merged = aggregate(d10, r4, AggregationStrategy::merge);
    CHECK(merged.size() == 14);
    const auto replaced = aggregate(d10, r4, AggregationStrategy::replace);
    CHECK(replaced.size() == 4);
    CHECK(replaced.digest() == r4.digest());

    CHECK(merged.meta().parents.size() == 2);
    CHECK(merged.meta().parents[0] == d10.digest());
    CHECK(merged.meta().parents[1] == r4.digest());
    CHECK(merged.meta().strategy == "merge");

    // counts stay consistent with a full recount
    std::map<std::string, int> recount;
    for (const auto& t : merged.trajectories()) recount[t.task_id]++;
    CHECK(recount == merged.counts());

    DatasetMeta other = meta;
    other.env_digest ^= 1;
    Dataset alien(other);
    alien.add(fx.make_traj(0, 123));
    CHECK_THROWS_AS(aggregate(d10, alien, AggregationStrategy::merge), ConfigError);
}

TEST_CASE("merge is associative on trajectory multisets") {
    Fixture fx;
    DatasetMeta meta;
    meta.env_digest = fx.digest;
    meta.obs_h = fx.cfg.height;
    meta.obs_w = fx.cfg.width;
    auto mk = [&](int n, std::uint64_t seed) {
        Dataset d(meta);
        for (int i = 0; i < n; ++i) d.add(fx.make_traj(i % fx.reg.size(), derive_seed(seed, i)));
        return d;
    };
    const auto A = mk(3, 10), B = mk(2, 20), C = mk(4, 30);
    const auto left = aggregate(aggregate(A, B, AggregationStrategy::merge), C,
                                AggregationStrategy::merge);
    const auto right = aggregate(A, aggregate(B, C, AggregationStrategy::merge),
                                 AggregationStrategy::merge);
    auto record_multiset = [&](const Dataset& d) {
        std::vector<std::uint64_t> hs;
        for (const auto& t : d.trajectories()) {
            const auto bytes = trajectory_record_bytes(t, meta.obs_h, meta.obs_w);
            hs.push_back(fnv1a64(bytes.data(), bytes.size()));
        }
        std::sort(hs.begin(), hs.end());
        return hs;
    };
    CHECK(record_multiset(left) == record_multiset(right));
    CHECK(left.size() == 9);
}

TEST_CASE("save/load round-trips bit-exactly") {
    Fixture fx;
    auto d = fx.make_dataset(1, 5);
    const auto dir = temp_dir("roundtrip");
    save_dataset(d, dir);
    const auto back = load_dataset(dir, fx.digest);

    CHECK(back.size() == d.size());
    CHECK(back.digest() == d.digest());
    CHECK(back.counts() == d.counts());
    CHECK(back.meta().env_digest == d.meta().env_digest);
    for (int i = 0; i < d.size(); ++i) {
        CHECK(back.at(i).states == d.at(i).states);
        CHECK(back.at(i).actions == d.at(i).actions);
        CHECK(back.at(i).observations == d.at(i).observations);
        CHECK(back.at(i).task_id == d.at(i).task_id);
        CHECK(back.at(i).goal_id == d.at(i).goal_id);
    }

    // loaded observations still re-render from loaded states
    for (int i = 0; i < back.size(); ++i) {
        const auto& t = back.at(i);
        for (std::size_t k = 0; k < t.states.size(); ++k)
            CHECK(t.observations[k] == PushWorldEnv::render_quantized(fx.cfg, t.states[k]));
    }
    fs::remove_all(dir);
}

TEST_CASE("load errors: version, truncation, digest") {
    Fixture fx;
    auto d = fx.make_dataset(1, 9);
    const auto dir = temp_dir("errors");
    save_dataset(d, dir);

    SUBCASE("truncated record") {
        const auto f = fs::path(dir) / "traj_000000.bin";
        const auto size = fs::file_size(f);
        fs::resize_file(f, size - 16);
        CHECK_THROWS_WITH_AS(static_cast<void>(load_dataset(dir)),
                             doctest::Contains("truncated"), IntegrityError);
    }
    SUBCASE("version mismatch") {
        std::ifstream in(fs::path(dir) / "manifest.json");
        std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
        in.close();
        const auto pos = text.find("hdexpit-ds-1");
        text.replace(pos, 12, "hdexpit-ds-9");
        std::ofstream out(fs::path(dir) / "manifest.json");
        out << text;
        out.close();
        CHECK_THROWS_WITH_AS(static_cast<void>(load_dataset(dir)),
                             doctest::Contains("version"), IntegrityError);
    }
    SUBCASE("env digest mismatch") {
        CHECK_THROWS_AS(static_cast<void>(load_dataset(dir, fx.digest ^ 7)), IntegrityError);
    }
    fs::remove_all(dir);
}

TEST_CASE("larger round-trip keeps counts intact") {
    Fixture fx;
    auto d = fx.make_dataset(4, 77);  // 40 trajectories
    const auto dir = temp_dir("counts");
    save_dataset(d, dir);
    const auto back = load_dataset(dir);
    std::map<std::string, int> recount;
    for (const auto& t : back.trajectories()) recount[t.task_id]++;
    CHECK(recount == d.counts());
    fs::remove_all(dir);
}
