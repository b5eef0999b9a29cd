#include <doctest.h>

#include <set>

#include "cpnet/config.hpp"
#include "cpnet/errors.hpp"

using namespace cpnet;

TEST_CASE("config: defaults resolve without any input") {
    const RunConfig cfg;
    CHECK(cfg.seed() == 42);
    CHECK(cfg.dataset_n_points() == 256);
    CHECK(cfg.dataset_kinds() == std::vector<std::string>{"sphere", "cube", "torus"});
    const TrainConfig t = cfg.train();
    CHECK(t.epochs == 100);
    CHECK(t.lr0 == 0.001);
    CHECK(t.manner == Manner::H);
    CHECK(t.noise_std == 0.02);
    const CpNetConfig m = cfg.model();
    CHECK(m.variant == CpNetConfig::Variant::segmentation);
    CHECK(m.points_per_level.size() == 4);
}

TEST_CASE("config: overrides, comments and whitespace") {
    const RunConfig cfg = RunConfig::from_string(
        "# experiment\n"
        "seed = 7\n"
        "data.n_points = 64   # small\n"
        "model.variant = classification\n"
        "loss.preset = classification\n"
        "aug.manner = E\n"
        "train.epochs = 5\n");
    CHECK(cfg.seed() == 7);
    CHECK(cfg.dataset_n_points() == 64);
    const CpNetConfig m = cfg.model();
    CHECK(m.variant == CpNetConfig::Variant::classification);
    CHECK(m.points_per_level.size() == 3);
    const TrainConfig t = cfg.train();
    CHECK(t.epochs == 5);
    CHECK(t.manner == Manner::E);
    CHECK(t.loss.enabled ==
          std::set<LossTerm>{LossTerm::cg, LossTerm::cl, LossTerm::cl2g, LossTerm::recon});
}

TEST_CASE("config: unknown keys and malformed lines are rejected") {
    CHECK_THROWS_AS(RunConfig::from_string("bogus.key = 3\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_string("seed 7\n"), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_string("seed = x\n").seed(), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_string("aug.manner = Z\n").train(), ConfigError);
    CHECK_THROWS_AS(RunConfig::from_string("loss.preset = nope\n").train(), ConfigError);
}

TEST_CASE("config: echo lists every documented key with resolved values") {
    const RunConfig cfg = RunConfig::from_string("seed = 9\n");
    const std::string echo = cfg.echo();
    CHECK(echo.find("seed = 9\n") != std::string::npos);
    for (const auto& doc : RunConfig::documented_keys())
        CHECK(echo.find(doc.key + " = ") != std::string::npos);
    // The echo itself parses back to the same configuration.
    const RunConfig back = RunConfig::from_string(echo);
    CHECK(back.echo() == echo);
}

TEST_CASE("config: model points override and normal-head consistency check") {
    const RunConfig cfg = RunConfig::from_string(
        "data.n_points = 64\n"
        "model.points = 64,32\n"
        "model.channels = 8,16\n");
    const CpNetConfig m = cfg.model();
    CHECK(m.points_per_level == std::vector<int>{64, 32});
    CHECK(m.channels_per_level == std::vector<int>{8, 16});

    CHECK_THROWS_AS(RunConfig::from_string("model.normal_head = false\n").train(), ConfigError);
}

TEST_CASE("generate_dataset: one class per kind, deterministic per seed") {
    const RunConfig cfg = RunConfig::from_string(
        "data.kinds = sphere,barbell\n"
        "data.count = 3\n"
        "data.n_points = 64\n"
        "seed = 5\n");
    const SyntheticDataset a = generate_dataset(cfg);
    CHECK(a.clouds.size() == 6);
    CHECK(a.kinds == std::vector<std::string>{"sphere", "barbell"});
    CHECK(a.class_labels == std::vector<int>{0, 0, 0, 1, 1, 1});
    for (const PointCloud& c : a.clouds) {
        CHECK(c.points.size() == 64);
        CHECK(c.part_labels.has_value());
        CHECK(c.normals.has_value());
    }
    const SyntheticDataset b = generate_dataset(cfg);
    for (std::size_t i = 0; i < a.clouds.size(); ++i)
        CHECK(a.clouds[i].points == b.clouds[i].points);
    // Clouds differ across indices (seeded per cloud).
    CHECK_FALSE(a.clouds[0].points == a.clouds[1].points);
}
