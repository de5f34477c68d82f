#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgl/graph.hpp"
#include "sgl/labels.hpp"
#include "sgl/rng.hpp"
#include "sgl/tensor.hpp"

namespace sgl {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

enum class Family : std::uint8_t { Mlp, Cnn, Mlp2d };
enum class Activation : std::uint8_t { Relu, Tanh };
enum class HeadMode : std::uint8_t { Softmax, Binary };

inline std::string family_name(Family f) {
    switch (f) {
    case Family::Mlp: return "mlp";
    case Family::Cnn: return "cnn";
    case Family::Mlp2d: return "mlp2d";
    }
    return "?";
}

inline Family family_from_name(const std::string& s) {
    if (s == "mlp") return Family::Mlp;
    if (s == "cnn") return Family::Cnn;
    if (s == "mlp2d") return Family::Mlp2d;
    throw ValidationError("unknown model family: " + s);
}

inline std::string activation_name(Activation a) { return a == Activation::Relu ? "relu" : "tanh"; }
inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    throw ValidationError("unknown activation: " + s);
}

inline std::string head_mode_name(HeadMode m) { return m == HeadMode::Softmax ? "softmax" : "binary"; }
inline HeadMode head_mode_from_name(const std::string& s) {
    if (s == "softmax") return HeadMode::Softmax;
    if (s == "binary") return HeadMode::Binary;
    throw ValidationError("unknown head mode: " + s);
}

// Architecture description: a trunk of shared_depth hidden layers at full
// width, then factor_count head stacks covering the remaining hidden layers
// at width max(1, trunk_width / factor_count), then one output layer per
// factor. total_depth counts hidden layers only; for the cnn family that is
// (total_depth - 1) conv layers plus one fully connected hidden layer.
struct SplitModelSpec {
    Family family = Family::Mlp;
    int total_depth = 1;
    int shared_depth = 0;
    int trunk_width = 8;
    int fc_width = 128;
    int factor_count = 2;
    std::vector<int> classes_per_factor;
    Shape input_shape;
    bool use_bias = true;
    Activation activation = Activation::Relu;
    HeadMode head_mode = HeadMode::Softmax;

    void validate() const {
        if (total_depth < 1) throw ValidationError("total_depth must be >= 1");
        if (shared_depth < 0 || shared_depth > total_depth)
            throw ValidationError("shared_depth " + std::to_string(shared_depth) +
                                  " outside [0, " + std::to_string(total_depth) + "]");
        if (trunk_width < 1) throw ValidationError("trunk_width must be >= 1");
        if (fc_width < 1) throw ValidationError("fc_width must be >= 1");
        if (factor_count < 1) throw ValidationError("factor_count must be >= 1");
        if (static_cast<int>(classes_per_factor.size()) != factor_count)
            throw ValidationError("classes_per_factor length " +
                                  std::to_string(classes_per_factor.size()) +
                                  " != factor_count " + std::to_string(factor_count));
        for (int c : classes_per_factor)
            if (c < 1) throw ValidationError("classes_per_factor entries must be >= 1");
        if (input_shape.empty()) throw ValidationError("input_shape must be non-empty");
        shape_numel(input_shape);
        if (family == Family::Cnn && input_shape.size() != 3)
            throw ValidationError("cnn family expects input_shape [H, W, C], got " +
                                  shape_to_string(input_shape));
        if (family == Family::Mlp2d && (input_shape.size() != 1 || input_shape[0] != 2))
            throw ValidationError("mlp2d family expects input_shape [2], got " +
                                  shape_to_string(input_shape));
        if (head_mode == HeadMode::Binary)
            for (int c : classes_per_factor)
                if (c != 1)
                    throw ValidationError("binary head mode requires one node per factor");
    }

    int head_width() const { return std::max(1, trunk_width / factor_count); }
    int head_fc_width() const { return std::max(1, fc_width / factor_count); }
};

inline nlohmann::json spec_to_json(const SplitModelSpec& s) {
    return nlohmann::json{{"family", family_name(s.family)},
                          {"total_depth", s.total_depth},
                          {"shared_depth", s.shared_depth},
                          {"trunk_width", s.trunk_width},
                          {"fc_width", s.fc_width},
                          {"factor_count", s.factor_count},
                          {"classes_per_factor", s.classes_per_factor},
                          {"input_shape", s.input_shape},
                          {"use_bias", s.use_bias},
                          {"activation", activation_name(s.activation)},
                          {"head_mode", head_mode_name(s.head_mode)}};
}

inline SplitModelSpec spec_from_json(const nlohmann::json& j) {
    static const std::set<std::string> known = {
        "family", "total_depth", "shared_depth", "trunk_width", "fc_width",
        "factor_count", "classes_per_factor", "input_shape", "use_bias",
        "activation", "head_mode"};
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ParseError("unknown model spec key: " + key);
    SplitModelSpec s;
    s.family = family_from_name(j.at("family").get<std::string>());
    s.total_depth = j.at("total_depth").get<int>();
    s.shared_depth = j.at("shared_depth").get<int>();
    s.trunk_width = j.at("trunk_width").get<int>();
    if (j.contains("fc_width")) s.fc_width = j.at("fc_width").get<int>();
    s.factor_count = j.at("factor_count").get<int>();
    s.classes_per_factor = j.at("classes_per_factor").get<std::vector<int>>();
    s.input_shape = j.at("input_shape").get<Shape>();
    if (j.contains("use_bias")) s.use_bias = j.at("use_bias").get<bool>();
    if (j.contains("activation"))
        s.activation = activation_from_name(j.at("activation").get<std::string>());
    if (j.contains("head_mode"))
        s.head_mode = head_mode_from_name(j.at("head_mode").get<std::string>());
    s.validate();
    return s;
}

struct SplitModel {
    SplitModelSpec spec;
    Graph graph;
    int input_id = -1;
    std::vector<int> logit_ids;                // one per factor
    std::vector<int> loss_ids;                 // one per factor
    int total_loss_id = -1;
    std::vector<int> trunk_params;
    std::vector<std::vector<int>> head_params; // per head, in layer order
    std::vector<int> param_registry;           // construction order
    std::vector<int> hidden_layer_totals;      // summed node count per hidden layer
    std::string notes;

    std::int64_t param_count() const {
        std::int64_t n = 0;
        for (int pid : param_registry) n += graph.value(pid).numel();
        return n;
    }

    void check_batch(const Tensor& batch) const {
        const std::size_t want = spec.input_shape.size() + 1;
        bool ok = batch.shape.size() == want;
        for (std::size_t i = 0; ok && i + 1 < want; ++i)
            ok = batch.shape[i + 1] == spec.input_shape[i];
        if (!ok)
            throw DimensionError("batch shape " + shape_to_string(batch.shape) +
                                 " does not extend input shape " +
                                 shape_to_string(spec.input_shape));
    }

    // K logit tensors without touching loss nodes (labels may be unset).
    std::vector<Tensor> forward(const Tensor& batch) {
        check_batch(batch);
        graph.set_value(input_id, batch);
        int last = 0;
        for (int id : logit_ids) last = std::max(last, id);
        graph.forward_to(last);
        std::vector<Tensor> out;
        out.reserve(logit_ids.size());
        for (int id : logit_ids) out.push_back(graph.value(id));
        return out;
    }

    // Per factor, argmax with lowest-index tie break. Binary heads instead
    // threshold each node independently at logit 0 (sigmoid 0.5), so a sample
    // is correct only when every node fires on the right side.
    std::vector<LabelTuple> predict(const Tensor& batch) {
        std::vector<Tensor> logits = forward(batch);
        const int n = batch.dim(0);
        std::vector<LabelTuple> out(static_cast<std::size_t>(n));
        if (spec.head_mode == HeadMode::Binary) {
            const int k = spec.factor_count;
            for (int i = 0; i < n; ++i) {
                LabelTuple t(static_cast<std::size_t>(k));
                for (int f = 0; f < k; ++f)
                    t[static_cast<std::size_t>(f)] =
                        logits[static_cast<std::size_t>(f)].at2(i, 0) > 0.0 ? 1 : 0;
                out[static_cast<std::size_t>(i)] = std::move(t);
            }
            return out;
        }
        for (int i = 0; i < n; ++i) {
            LabelTuple t(static_cast<std::size_t>(spec.factor_count));
            for (int f = 0; f < spec.factor_count; ++f) {
                const Tensor& lg = logits[static_cast<std::size_t>(f)];
                int best = 0;
                for (int c = 1; c < lg.dim(1); ++c)
                    if (lg.at2(i, c) > lg.at2(i, best)) best = c;
                t[static_cast<std::size_t>(f)] = best;
            }
            out[static_cast<std::size_t>(i)] = std::move(t);
        }
        return out;
    }

    // Stages a minibatch on the graph; caller runs forward/backward.
    void set_minibatch(const Tensor& batch, const std::vector<LabelTuple>& labels) {
        check_batch(batch);
        const int n = batch.dim(0);
        if (static_cast<int>(labels.size()) != n)
            throw ValidationError("minibatch has " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " inputs");
        const std::size_t arity = spec.head_mode == HeadMode::Binary
                                      ? 1
                                      : static_cast<std::size_t>(spec.factor_count);
        for (const LabelTuple& t : labels)
            if (t.size() != arity)
                throw ValidationError("label tuple arity " + std::to_string(t.size()) +
                                      ", model expects " + std::to_string(arity));
        graph.set_value(input_id, batch);
        if (spec.head_mode == HeadMode::Binary) {
            for (int f = 0; f < spec.factor_count; ++f) {
                Tensor target(Shape{n, 1});
                for (int i = 0; i < n; ++i)
                    target.at2(i, 0) = labels[static_cast<std::size_t>(i)].at(0) == f ? 1.0 : 0.0;
                graph.set_targets(loss_ids[static_cast<std::size_t>(f)], std::move(target));
            }
            return;
        }
        for (int f = 0; f < spec.factor_count; ++f) {
            std::vector<int> ls(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                ls[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)].at(static_cast<std::size_t>(f));
            graph.set_labels(loss_ids[static_cast<std::size_t>(f)], std::move(ls));
        }
    }
};

namespace detail {

inline Tensor glorot(Shape shape, int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-limit, limit);
    return t;
}

struct LayerBuilder {
    Graph& g;
    Rng& rng;
    const SplitModelSpec& spec;
    std::vector<int>* sink = nullptr; // receives new param ids

    int track(int pid) {
        sink->push_back(pid);
        return pid;
    }

    int dense(int x, int in_dim, int out_dim, bool activate) {
        int w = track(g.param(glorot(Shape{in_dim, out_dim}, in_dim, out_dim, rng)));
        int y = g.matmul(x, w);
        if (spec.use_bias) y = g.bias_add(y, track(g.param(Tensor(Shape{out_dim}))));
        if (!activate) return y;
        return spec.activation == Activation::Relu ? g.relu(y) : g.tanh_op(y);
    }

    int conv(int x, int cin, int cout) {
        int k = track(g.param(glorot(Shape{3, 3, cin, cout}, 9 * cin, 9 * cout, rng)));
        int y = g.conv2d(x, k);
        if (spec.use_bias) y = g.bias_add(y, track(g.param(Tensor(Shape{cout}))));
        return spec.activation == Activation::Relu ? g.relu(y) : g.tanh_op(y);
    }
};

} // namespace detail

// Builds the split network. Hidden layers 1..shared_depth sit in the trunk at
// full width; the rest are duplicated per factor at reduced width so each
// hidden level keeps its summed node count (exact when factor_count divides
// the widths). Parameter ids are issued in a fixed order, so one seed yields
// bit-identical weights.
inline SplitModel build_split_model(const SplitModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    SplitModel m;
    m.spec = spec;
    Rng rng(seed);
    Graph& g = m.graph;
    m.input_id = g.input();
    m.notes = "init=glorot-uniform;bias=zero";
    if (spec.trunk_width < spec.factor_count)
        m.notes += ";head-width-floor-hit=1-node-heads";

    const int L = spec.total_depth, s = spec.shared_depth, K = spec.factor_count;
    const bool cnn = spec.family == Family::Cnn;
    const int conv_layers = cnn ? L - 1 : 0; // last hidden layer of a cnn is dense
    const std::int64_t flat_in = shape_numel(spec.input_shape);

    detail::LayerBuilder build{g, rng, spec, &m.trunk_params};

    // Trunk: hidden layers 1..s. Tracks (node id, width) of the live tensor
    // and whether it is still spatial (cnn only).
    int cur = m.input_id;
    bool spatial = cnn;
    int cur_width = cnn ? spec.input_shape[2] : static_cast<int>(flat_in);
    if (!cnn && spec.input_shape.size() >= 2) cur = g.flatten(cur);
    m.hidden_layer_totals.assign(static_cast<std::size_t>(L), 0);
    for (int layer = 1; layer <= s; ++layer) {
        if (cnn && layer <= conv_layers) {
            cur = build.conv(cur, cur_width, spec.trunk_width);
            cur_width = spec.trunk_width;
        } else {
            if (spatial) {
                cur = g.flatten(cur);
                cur_width = cur_width * spec.input_shape[0] * spec.input_shape[1];
                spatial = false;
            }
            const int out = cnn ? spec.fc_width : spec.trunk_width;
            cur = build.dense(cur, cur_width, out, true);
            cur_width = out;
        }
        m.hidden_layer_totals[static_cast<std::size_t>(layer - 1)] =
            (cnn && layer <= conv_layers) ? spec.trunk_width
                                          : (cnn ? spec.fc_width : spec.trunk_width);
    }

    // Heads: hidden layers s+1..L at reduced width, then the output layer.
    // Logits are created for all heads before any loss node so prediction can
    // run the graph only that far.
    const int hw = spec.head_width();
    const int hfc = spec.head_fc_width();
    m.head_params.resize(static_cast<std::size_t>(K));
    for (int f = 0; f < K; ++f) {
        build.sink = &m.head_params[static_cast<std::size_t>(f)];
        int hcur = cur;
        int hwidth = cur_width;
        bool hspatial = spatial;
        for (int layer = s + 1; layer <= L; ++layer) {
            if (cnn && layer <= conv_layers) {
                hcur = build.conv(hcur, hwidth, hw);
                hwidth = hw;
            } else {
                if (hspatial) {
                    hcur = g.flatten(hcur);
                    hwidth = hwidth * spec.input_shape[0] * spec.input_shape[1];
                    hspatial = false;
                }
                const int out = cnn ? hfc : hw;
                hcur = build.dense(hcur, hwidth, out, true);
                hwidth = out;
            }
            m.hidden_layer_totals[static_cast<std::size_t>(layer - 1)] +=
                (cnn && layer <= conv_layers) ? hw : (cnn ? hfc : hw);
        }
        if (hspatial) {
            hcur = g.flatten(hcur);
            hwidth = hwidth * spec.input_shape[0] * spec.input_shape[1];
            hspatial = false;
        }
        const int classes = spec.classes_per_factor[static_cast<std::size_t>(f)];
        m.logit_ids.push_back(build.dense(hcur, hwidth, classes, false));
    }

    // Loss per factor, then the summed total.
    for (int f = 0; f < K; ++f) {
        const int lg = m.logit_ids[static_cast<std::size_t>(f)];
        m.loss_ids.push_back(spec.head_mode == HeadMode::Softmax
                                 ? g.softmax_cross_entropy(lg)
                                 : g.sigmoid_bce(lg));
    }
    int total = m.loss_ids[0];
    for (int f = 1; f < K; ++f) total = g.add(total, m.loss_ids[static_cast<std::size_t>(f)]);
    m.total_loss_id = total;

    m.param_registry = g.param_ids();
    return m;
}

// Checkpoint container: magic "SGL1", u32 little-endian metadata length, the
// spec as UTF-8 JSON, then every parameter tensor as raw little-endian
// float64 in registry order.
inline void save_checkpoint(const SplitModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    nlohmann::json meta = spec_to_json(m.spec);
    meta["notes"] = m.notes;
    meta["param_count"] = m.param_count();
    const std::string text = meta.dump();
    const std::uint32_t len = static_cast<std::uint32_t>(text.size());
    out.write("SGL1", 4);
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (int pid : m.param_registry) {
        const Tensor& t = m.graph.value(pid);
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    }
    if (!out) throw IoError("short write on checkpoint: " + path);
}

inline SplitModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!in.read(magic, 4) || std::string(magic, 4) != "SGL1")
        throw ParseError("bad checkpoint magic at byte 0: " + path);
    std::uint32_t len = 0;
    if (!in.read(reinterpret_cast<char*>(&len), 4))
        throw ParseError("truncated checkpoint at byte 4: " + path);
    std::string text(len, '\0');
    if (!in.read(text.data(), len))
        throw ParseError("truncated checkpoint metadata at byte 8: " + path);
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
    }
    const std::int64_t expected = meta.at("param_count").get<std::int64_t>();
    const std::string notes = meta.value("notes", std::string());
    meta.erase("notes");
    meta.erase("param_count");
    SplitModel m = build_split_model(spec_from_json(meta), 0);
    m.notes = notes;
    if (m.param_count() != expected)
        throw ParseError("checkpoint parameter count mismatch: file says " +
                         std::to_string(expected) + ", spec rebuilds " +
                         std::to_string(m.param_count()));
    for (int pid : m.param_registry) {
        Tensor& t = m.graph.param_value(pid);
        if (!in.read(reinterpret_cast<char*>(t.data.data()),
                     static_cast<std::streamsize>(t.data.size() * sizeof(double))))
            throw ParseError("truncated checkpoint parameters: " + path);
    }
    char extra;
    if (in.read(&extra, 1)) throw ParseError("trailing bytes after checkpoint parameters: " + path);
    return m;
}

} // namespace sgl
