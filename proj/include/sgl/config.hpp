#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgl/data.hpp"
#include "sgl/error.hpp"
#include "sgl/model.hpp"
#include "sgl/train.hpp"

#include <sgl/recipes_embedded.hpp>

namespace sgl {

// One factor input pool. File-backed kinds point at train and test files;
// the pattern kind synthesizes both portions from shared class parameters.
struct SourceConfig {
    std::string kind;  // "pattern" | "idx" | "cifar"
    std::string name;
    std::string train_images; // idx
    std::string train_labels; // idx, optional (derived from the images path)
    std::string test_images;  // idx
    std::string test_labels;  // idx, optional
    std::string train_path;   // cifar
    std::string test_path;    // cifar
    int classes = 10;          // pattern
    int n_train_per_class = 0; // pattern
    int n_test_per_class = 0;  // pattern
    Shape shape;               // pattern item shape [H, W]
    std::string family = "mixed";
    int channels = 0; // when > 0, broadcast single-channel items to this many
    Shape resize;     // when set, nearest-neighbour resize to [h, w]
};

struct DataConfig {
    std::vector<SourceConfig> sources;
    std::string scheme = "diagonal";
    std::string merge = "average";
    std::string synth2d_case; // mlp2d experiments draw from the 2d synthesizer
    int n_train = 0;
    int n_test = 0;
    int n_random = 10000;
};

// Model shape minus shared_depth, which is the sweep variable.
struct ModelConfig {
    std::string family = "mlp";
    int total_depth = 1;
    int trunk_width = 8;
    int fc_width = 128;
    int factor_count = 2;
    std::vector<int> classes_per_factor;
    Shape input_shape;
    bool use_bias = true;
    std::string activation = "relu";
    std::string head_mode = "softmax";
};

// One deep-or-shallow model variant for the 2D figure runs.
struct VizVariant {
    std::string name;
    int total_depth = 0;
    int shared_depth = 0;
};

struct VizConfig {
    std::vector<std::string> cases{"blobs-a"};
    int resolution = 200;
    std::vector<VizVariant> variants;
};

struct ExperimentConfig {
    std::string kind; // sweep | viz2d | partition-track | newclass | gradcheck | train-once
    std::string name = "unnamed";
    ModelConfig model;
    DataConfig data;
    TrainConfig train;
    std::vector<std::uint64_t> seeds{0};
    std::vector<int> depths;
    std::string out_dir = "runs/out";
    VizConfig viz;
    std::string scale = "desk";
    nlohmann::json resolved; // the fully merged JSON this config was built from
};

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!j.is_object()) throw ParseError(where + " must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return key == a; }) == allowed.end())
            throw ParseError("unknown key \"" + key + "\" in " + where);
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad value for \"") + key + "\": " + e.what());
    }
}

// Objects merge key-by-key; scalars and arrays in the overlay replace.
inline nlohmann::json deep_merge(nlohmann::json base, const nlohmann::json& overlay) {
    if (!base.is_object() || !overlay.is_object()) return overlay;
    for (const auto& [key, value] : overlay.items())
        base[key] = base.contains(key) ? deep_merge(base.at(key), value) : value;
    return base;
}

inline SourceConfig parse_source(const nlohmann::json& j, const std::string& where) {
    require_keys(j,
                 {"kind", "name", "train_images", "train_labels", "test_images", "test_labels",
                  "train_path", "test_path", "classes", "n_train_per_class", "n_test_per_class",
                  "shape", "family", "channels", "resize"},
                 where);
    SourceConfig s;
    s.kind = get_or<std::string>(j, "kind", "");
    s.name = get_or<std::string>(j, "name", "");
    s.train_images = get_or<std::string>(j, "train_images", "");
    s.train_labels = get_or<std::string>(j, "train_labels", "");
    s.test_images = get_or<std::string>(j, "test_images", "");
    s.test_labels = get_or<std::string>(j, "test_labels", "");
    s.train_path = get_or<std::string>(j, "train_path", "");
    s.test_path = get_or<std::string>(j, "test_path", "");
    s.classes = get_or<int>(j, "classes", 10);
    s.n_train_per_class = get_or<int>(j, "n_train_per_class", 0);
    s.n_test_per_class = get_or<int>(j, "n_test_per_class", 0);
    s.shape = get_or<Shape>(j, "shape", Shape{});
    s.family = get_or<std::string>(j, "family", "mixed");
    s.channels = get_or<int>(j, "channels", 0);
    s.resize = get_or<Shape>(j, "resize", Shape{});
    if (s.kind != "pattern" && s.kind != "idx" && s.kind != "cifar")
        throw ParseError("unknown source kind \"" + s.kind + "\" in " + where);
    return s;
}

} // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& raw, const std::string& scale) {
    using detail::get_or;
    using detail::require_keys;

    if (scale != "paper" && scale != "desk")
        throw ParseError("unknown scale \"" + scale + "\" (expected paper or desk)");
    require_keys(raw, {"kind", "name", "model", "data", "train", "seeds", "depths", "out_dir",
                       "viz", "scales"},
                 "config");
    nlohmann::json merged = raw;
    if (raw.contains("scales")) {
        const nlohmann::json& scales = raw.at("scales");
        require_keys(scales, {"paper", "desk"}, "scales");
        if (scales.contains(scale)) merged = detail::deep_merge(merged, scales.at(scale));
        merged.erase("scales");
    }

    ExperimentConfig cfg;
    cfg.kind = get_or<std::string>(merged, "kind", "");
    cfg.name = get_or<std::string>(merged, "name", "unnamed");
    cfg.out_dir = get_or<std::string>(merged, "out_dir", "runs/" + cfg.name);
    cfg.seeds = get_or<std::vector<std::uint64_t>>(merged, "seeds", {0});
    cfg.depths = get_or<std::vector<int>>(merged, "depths", {});

    if (merged.contains("model")) {
        const nlohmann::json& m = merged.at("model");
        require_keys(m,
                     {"family", "total_depth", "trunk_width", "fc_width", "factor_count",
                      "classes_per_factor", "input_shape", "use_bias", "activation", "head_mode"},
                     "model");
        cfg.model.family = get_or<std::string>(m, "family", "mlp");
        cfg.model.total_depth = get_or<int>(m, "total_depth", 1);
        cfg.model.trunk_width = get_or<int>(m, "trunk_width", 8);
        cfg.model.fc_width = get_or<int>(m, "fc_width", 128);
        cfg.model.factor_count = get_or<int>(m, "factor_count", 2);
        cfg.model.classes_per_factor = get_or<std::vector<int>>(m, "classes_per_factor", {});
        cfg.model.input_shape = get_or<Shape>(m, "input_shape", Shape{});
        cfg.model.use_bias = get_or<bool>(m, "use_bias", true);
        cfg.model.activation = get_or<std::string>(m, "activation", "relu");
        cfg.model.head_mode = get_or<std::string>(m, "head_mode", "softmax");
    }

    if (merged.contains("data")) {
        const nlohmann::json& d = merged.at("data");
        require_keys(d, {"sources", "scheme", "merge", "synth2d_case", "n_train", "n_test",
                         "n_random"},
                     "data");
        cfg.data.scheme = get_or<std::string>(d, "scheme", "diagonal");
        cfg.data.merge = get_or<std::string>(d, "merge", "average");
        cfg.data.synth2d_case = get_or<std::string>(d, "synth2d_case", "");
        cfg.data.n_train = get_or<int>(d, "n_train", 0);
        cfg.data.n_test = get_or<int>(d, "n_test", 0);
        cfg.data.n_random = get_or<int>(d, "n_random", 10000);
        if (d.contains("sources")) {
            if (!d.at("sources").is_array()) throw ParseError("data.sources must be an array");
            int at = 0;
            for (const nlohmann::json& s : d.at("sources"))
                cfg.data.sources.push_back(
                    detail::parse_source(s, "data.sources[" + std::to_string(at++) + "]"));
        }
    }

    if (merged.contains("train")) {
        const nlohmann::json& t = merged.at("train");
        require_keys(t,
                     {"learning_rate", "beta1", "beta2", "eps", "batch_size", "iterations",
                      "loss_mode", "eval_every", "plateau_window", "plateau_tol", "snapshot_cap"},
                     "train");
        cfg.train.learning_rate = get_or<double>(t, "learning_rate", cfg.train.learning_rate);
        cfg.train.beta1 = get_or<double>(t, "beta1", cfg.train.beta1);
        cfg.train.beta2 = get_or<double>(t, "beta2", cfg.train.beta2);
        cfg.train.eps = get_or<double>(t, "eps", cfg.train.eps);
        cfg.train.batch_size = get_or<int>(t, "batch_size", cfg.train.batch_size);
        cfg.train.iterations = get_or<int>(t, "iterations", cfg.train.iterations);
        cfg.train.loss_mode = get_or<std::string>(t, "loss_mode", cfg.train.loss_mode);
        cfg.train.eval_every = get_or<int>(t, "eval_every", cfg.train.eval_every);
        cfg.train.plateau_window = get_or<int>(t, "plateau_window", cfg.train.plateau_window);
        cfg.train.plateau_tol = get_or<double>(t, "plateau_tol", cfg.train.plateau_tol);
        cfg.train.snapshot_cap = get_or<int>(t, "snapshot_cap", cfg.train.snapshot_cap);
    }

    if (merged.contains("viz")) {
        const nlohmann::json& v = merged.at("viz");
        require_keys(v, {"cases", "resolution", "variants"}, "viz");
        cfg.viz.cases = get_or<std::vector<std::string>>(v, "cases", cfg.viz.cases);
        cfg.viz.resolution = get_or<int>(v, "resolution", 200);
        if (v.contains("variants")) {
            if (!v.at("variants").is_array()) throw ParseError("viz.variants must be an array");
            for (const nlohmann::json& e : v.at("variants")) {
                detail::require_keys(e, {"name", "total_depth", "shared_depth"}, "viz.variants[]");
                VizVariant var;
                var.name = get_or<std::string>(e, "name", "");
                var.total_depth = get_or<int>(e, "total_depth", 0);
                var.shared_depth = get_or<int>(e, "shared_depth", 0);
                cfg.viz.variants.push_back(var);
            }
        }
    }

    cfg.scale = scale;
    cfg.resolved = merged;
    return cfg;
}

// Command-line overrides are applied to both the config and its resolved
// JSON, so the manifest always matches what actually ran.
inline void apply_overrides(ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                            const std::vector<int>& depths, const std::string& out_dir) {
    if (!seeds.empty()) {
        cfg.seeds = seeds;
        cfg.resolved["seeds"] = seeds;
    }
    if (!depths.empty()) {
        cfg.depths = depths;
        cfg.resolved["depths"] = depths;
    }
    if (!out_dir.empty()) {
        cfg.out_dir = out_dir;
        cfg.resolved["out_dir"] = out_dir;
    }
}

// Loads a config by file path or embedded recipe name.
inline ExperimentConfig load_config(const std::string& path_or_name, const std::string& scale) {
    std::string text;
    if (std::filesystem::exists(path_or_name)) {
        std::ifstream in(path_or_name, std::ios::binary);
        if (!in) throw IoError("cannot read config file: " + path_or_name);
        text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    } else {
        const auto& table = embedded_recipes();
        auto it = table.find(path_or_name);
        if (it == table.end()) {
            std::string names;
            for (const auto& [n, _] : table) names += (names.empty() ? "" : ", ") + n;
            throw ValidationError("no config file or built-in recipe named \"" + path_or_name +
                                  "\" (built-ins: " + names + ")");
        }
        text = it->second;
    }
    nlohmann::json raw;
    try {
        raw = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("config " + path_or_name + ": " + e.what());
    }
    // A run manifest embeds its fully resolved recipe; accept the manifest
    // itself so a past run replays straight from its artifacts.
    if (raw.is_object() && raw.contains("version") && raw.contains("config") &&
        raw["config"].is_object())
        raw = raw["config"];
    ExperimentConfig cfg = parse_config(raw, scale);
    if (cfg.name == "unnamed") cfg.name = std::filesystem::path(path_or_name).stem().string();
    return cfg;
}

// Model spec for one sweep cell.
inline SplitModelSpec to_model_spec(const ModelConfig& m, int shared_depth) {
    SplitModelSpec spec;
    spec.family = family_from_name(m.family);
    spec.total_depth = m.total_depth;
    spec.shared_depth = shared_depth;
    spec.trunk_width = m.trunk_width;
    spec.fc_width = m.fc_width;
    spec.factor_count = m.factor_count;
    spec.classes_per_factor = m.classes_per_factor;
    spec.input_shape = m.input_shape;
    spec.use_bias = m.use_bias;
    spec.activation = activation_from_name(m.activation);
    spec.head_mode = head_mode_from_name(m.head_mode);
    spec.validate();
    return spec;
}

// Every module precondition checkable without touching data files is
// enforced here, before any cell starts.
inline void validate_config(const ExperimentConfig& cfg) {
    static const std::set<std::string> kinds{"sweep",    "viz2d",     "partition-track",
                                             "newclass", "gradcheck", "train-once"};
    if (!kinds.count(cfg.kind)) throw ValidationError("unknown experiment kind: " + cfg.kind);
    if (cfg.seeds.empty()) throw ValidationError("seeds list is empty");
    if (cfg.out_dir.empty()) throw ValidationError("out_dir is empty");

    if (cfg.kind == "viz2d") {
        if (cfg.model.family != "mlp2d")
            throw ValidationError("viz2d requires the mlp2d family, got " + cfg.model.family);
        if (cfg.viz.cases.empty()) throw ValidationError("viz2d needs at least one case");
        if (cfg.viz.resolution < 2) throw ValidationError("viz resolution must be >= 2");
        if (cfg.viz.variants.empty()) throw ValidationError("viz2d needs at least one variant");
        for (const VizVariant& v : cfg.viz.variants) {
            ModelConfig m = cfg.model;
            m.total_depth = v.total_depth;
            cfg.train.validate(to_model_spec(m, v.shared_depth));
        }
        if (cfg.data.n_train < 1) throw ValidationError("viz2d needs data.n_train >= 1");
        return;
    }

    if (cfg.kind == "newclass") {
        if (cfg.model.head_mode != "binary")
            throw ValidationError("newclass requires binary head mode");
        if (cfg.model.use_bias) throw ValidationError("newclass networks do not use biases");
        if (cfg.data.sources.size() != 1)
            throw ValidationError("newclass uses exactly one source, got " +
                                  std::to_string(cfg.data.sources.size()));
        if (cfg.data.scheme != "new-classes")
            throw ValidationError("newclass requires the new-classes scheme");
    } else if (cfg.kind != "gradcheck" && cfg.model.family != "mlp2d") {
        if (cfg.data.sources.size() != 2)
            throw ValidationError("paired experiments need exactly two sources, got " +
                                  std::to_string(cfg.data.sources.size()));
        scheme_from_name(cfg.data.scheme);
        merge_mode_from_name(cfg.data.merge);
    }

    if (cfg.kind == "partition-track") {
        if (cfg.train.eval_every < 1 || cfg.train.iterations % cfg.train.eval_every != 0)
            throw ValidationError("partition-track needs eval_every dividing iterations");
    }

    if (cfg.kind != "viz2d" && cfg.kind != "gradcheck") {
        if (cfg.data.n_train < 1) throw ValidationError("data.n_train must be >= 1");
        if (cfg.data.n_test < 1) throw ValidationError("data.n_test must be >= 1");
        if (cfg.data.n_random < 1) throw ValidationError("data.n_random must be >= 1");
    }

    std::vector<int> depths = cfg.depths;
    if (depths.empty()) depths = {0, cfg.model.total_depth};
    for (int d : depths) cfg.train.validate(to_model_spec(cfg.model, d));
}

} // namespace sgl
