#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <sgl/config.hpp>

using namespace sgl;
using nlohmann::json;

namespace {

json minimal_sweep() {
    return json::parse(R"({
        "kind": "sweep",
        "name": "t",
        "model": {"family": "mlp", "total_depth": 3, "trunk_width": 16,
                  "classes_per_factor": [4, 4], "input_shape": [8, 8]},
        "data": {
            "sources": [
                {"kind": "pattern", "classes": 4, "shape": [8, 8],
                 "n_train_per_class": 8, "n_test_per_class": 4},
                {"kind": "pattern", "classes": 4, "shape": [8, 8],
                 "n_train_per_class": 8, "n_test_per_class": 4}
            ],
            "n_train": 32, "n_test": 8, "n_random": 64
        },
        "train": {"batch_size": 8, "iterations": 5}
    })");
}

} // namespace

TEST_CASE("minimal config parses with defaults filled in", "[config]") {
    const ExperimentConfig cfg = parse_config(minimal_sweep(), "desk");
    CHECK(cfg.kind == "sweep");
    CHECK(cfg.name == "t");
    CHECK(cfg.model.family == "mlp");
    CHECK(cfg.model.total_depth == 3);
    CHECK(cfg.model.use_bias);
    CHECK(cfg.model.head_mode == "softmax");
    CHECK(cfg.data.scheme == "diagonal");
    CHECK(cfg.data.merge == "average");
    CHECK(cfg.data.sources.size() == 2);
    CHECK(cfg.data.sources[0].family == "mixed");
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.train.learning_rate == 0.001);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
    CHECK(cfg.depths.empty());
    CHECK(cfg.out_dir == "runs/t");
    CHECK(cfg.scale == "desk");
    CHECK_NOTHROW(validate_config(cfg));
}

TEST_CASE("unknown keys fail closed at every level", "[config]") {
    json bad_top = minimal_sweep();
    bad_top["extra"] = 1;
    CHECK_THROWS_AS(parse_config(bad_top, "desk"), ParseError);

    json bad_model = minimal_sweep();
    bad_model["model"]["depht"] = 3; // typo must not be silently ignored
    CHECK_THROWS_AS(parse_config(bad_model, "desk"), ParseError);

    json bad_train = minimal_sweep();
    bad_train["train"]["lr"] = 0.1;
    CHECK_THROWS_AS(parse_config(bad_train, "desk"), ParseError);

    json bad_source = minimal_sweep();
    bad_source["data"]["sources"][0]["path"] = "x";
    CHECK_THROWS_AS(parse_config(bad_source, "desk"), ParseError);

    json bad_scales = minimal_sweep();
    bad_scales["scales"] = {{"huge", json::object()}};
    CHECK_THROWS_AS(parse_config(bad_scales, "desk"), ParseError);
}

TEST_CASE("wrong value types are parse errors, not silent coercions", "[config]") {
    json j = minimal_sweep();
    j["train"]["batch_size"] = "many";
    CHECK_THROWS_AS(parse_config(j, "desk"), ParseError);

    json j2 = minimal_sweep();
    j2["seeds"] = "1,2,3";
    CHECK_THROWS_AS(parse_config(j2, "desk"), ParseError);

    json j3 = minimal_sweep();
    j3["model"]["family"] = 7;
    CHECK_THROWS_AS(parse_config(j3, "desk"), ParseError);
}

TEST_CASE("scale overlay merges objects and replaces arrays", "[config]") {
    json j = minimal_sweep();
    j["seeds"] = {1, 2};
    j["scales"] = {
        {"paper", {{"model", {{"trunk_width", 512}}},
                   {"train", {{"iterations", 2000}}},
                   {"seeds", {7, 8, 9}}}},
        {"desk", json::object()}
    };

    const ExperimentConfig desk = parse_config(j, "desk");
    CHECK(desk.model.trunk_width == 16);
    CHECK(desk.train.iterations == 5);
    CHECK(desk.seeds == std::vector<std::uint64_t>{1, 2});
    CHECK_FALSE(desk.resolved.contains("scales"));

    const ExperimentConfig paper = parse_config(j, "paper");
    CHECK(paper.model.trunk_width == 512);
    CHECK(paper.model.total_depth == 3);     // untouched sibling key survives
    CHECK(paper.train.iterations == 2000);
    CHECK(paper.train.batch_size == 8);
    CHECK(paper.seeds == std::vector<std::uint64_t>{7, 8, 9});
    CHECK(paper.scale == "paper");
    CHECK_FALSE(paper.resolved.contains("scales"));

    CHECK_THROWS_AS(parse_config(j, "lab"), ParseError);
}

TEST_CASE("overrides update the config and its resolved manifest view", "[config]") {
    ExperimentConfig cfg = parse_config(minimal_sweep(), "desk");
    apply_overrides(cfg, {42}, {0, 3}, "runs/elsewhere");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{42});
    CHECK(cfg.depths == std::vector<int>{0, 3});
    CHECK(cfg.out_dir == "runs/elsewhere");
    CHECK(cfg.resolved.at("seeds").get<std::vector<std::uint64_t>>() ==
          std::vector<std::uint64_t>{42});
    CHECK(cfg.resolved.at("depths").get<std::vector<int>>() == std::vector<int>{0, 3});
    CHECK(cfg.resolved.at("out_dir") == "runs/elsewhere");

    apply_overrides(cfg, {}, {}, "");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{42}); // empty override is a no-op
}

TEST_CASE("configs load from files and from embedded recipes", "[config]") {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / "sgl-config-test";
    std::filesystem::create_directories(dir);
    const std::filesystem::path file = dir / "mini.json";
    {
        json j = minimal_sweep();
        j.erase("name");
        std::ofstream out(file);
        out << j.dump();
    }
    const ExperimentConfig cfg = load_config(file.string(), "desk");
    CHECK(cfg.name == "mini"); // falls back to the file stem
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(load_config(dir.string() + "/gone.json", "desk"), ValidationError);

    for (const char* name : {"fig2", "fig4a-dnn", "fig4b-cnn-scaled", "d1-track",
                             "d2-newclass", "d5-spiralxor", "d7-tile", "d7-onelabel"}) {
        INFO(name);
        const ExperimentConfig builtin = load_config(name, "desk");
        CHECK(builtin.name == name);
        CHECK_NOTHROW(validate_config(builtin));
    }

    try {
        load_config("no-such-recipe", "desk");
        FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("fig2") != std::string::npos);
    }

    const std::filesystem::path broken = dir;
    std::filesystem::create_directories(broken);
    const std::filesystem::path bad = broken / "bad.json";
    std::ofstream(bad) << "{ not json";
    CHECK_THROWS_AS(load_config(bad.string(), "desk"), ParseError);
    std::filesystem::remove_all(broken);
}

TEST_CASE("a run manifest loads as the resolved recipe it embeds", "[config]") {
    const std::filesystem::path dir =
        std::filesystem::temp_directory_path() / "sgl-manifest-test";
    std::filesystem::create_directories(dir);
    const std::filesystem::path file = dir / "manifest.json";

    ExperimentConfig base = parse_config(minimal_sweep(), "desk");
    json manifest = {{"version", 1}, {"recipe", base.name}, {"config", base.resolved}};
    std::ofstream(file) << manifest.dump();

    const ExperimentConfig replay = load_config(file.string(), "desk");
    CHECK(replay.name == base.name);
    CHECK(replay.resolved == base.resolved);
    std::filesystem::remove_all(dir);
}

TEST_CASE("embedded recipes resolve at paper scale too", "[config]") {
    for (const char* name : {"fig4a-dnn", "fig4b-cnn-scaled", "d1-track", "d2-newclass",
                             "d7-tile", "d7-onelabel"}) {
        INFO(name);
        const ExperimentConfig cfg = load_config(name, "paper");
        CHECK(cfg.scale == "paper");
        CHECK(cfg.model.trunk_width >= 64);
        CHECK_NOTHROW(validate_config(cfg));
        for (const SourceConfig& s : cfg.data.sources) CHECK(s.kind != "pattern");
    }
}

TEST_CASE("model spec conversion maps names onto the validated spec", "[config]") {
    ModelConfig m;
    m.family = "mlp";
    m.total_depth = 4;
    m.trunk_width = 32;
    m.factor_count = 2;
    m.classes_per_factor = {5, 5};
    m.input_shape = {6, 6};
    const SplitModelSpec spec = to_model_spec(m, 2);
    CHECK(spec.shared_depth == 2);
    CHECK(spec.total_depth == 4);
    CHECK(spec.head_mode == HeadMode::Softmax);
    CHECK(spec.activation == Activation::Relu);

    m.head_mode = "sigmoid"; // not a head mode
    CHECK_THROWS_AS(to_model_spec(m, 2), ValidationError);
    m.head_mode = "softmax";
    CHECK_THROWS_AS(to_model_spec(m, 9), ValidationError); // shared depth > total
}

TEST_CASE("validate_config rejects structurally unrunnable experiments", "[config]") {
    ExperimentConfig cfg = parse_config(minimal_sweep(), "desk");

    ExperimentConfig bad = cfg;
    bad.kind = "survey";
    CHECK_THROWS_AS(validate_config(bad), ValidationError);

    bad = cfg;
    bad.seeds.clear();
    CHECK_THROWS_AS(validate_config(bad), ValidationError);

    bad = cfg;
    bad.data.sources.pop_back();
    CHECK_THROWS_AS(validate_config(bad), ValidationError);

    bad = cfg;
    bad.data.scheme = "stairs";
    CHECK_THROWS_AS(validate_config(bad), ValidationError);

    bad = cfg;
    bad.kind = "partition-track";
    bad.train.eval_every = 3; // does not divide iterations=5
    CHECK_THROWS_AS(validate_config(bad), ValidationError);
    bad.train.eval_every = 5;
    CHECK_NOTHROW(validate_config(bad));

    bad = cfg;
    bad.kind = "newclass";
    CHECK_THROWS_AS(validate_config(bad), ValidationError); // softmax heads, two sources

    bad = cfg;
    bad.data.n_train = 0;
    CHECK_THROWS_AS(validate_config(bad), ValidationError);

    bad = cfg;
    bad.kind = "viz2d";
    CHECK_THROWS_AS(validate_config(bad), ValidationError); // needs mlp2d and variants

    bad = cfg;
    bad.train.batch_size = 0;
    CHECK_THROWS_AS(validate_config(bad), ValidationError);
}
