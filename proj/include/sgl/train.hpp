#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "sgl/data.hpp"
#include "sgl/metrics.hpp"
#include "sgl/model.hpp"
#include "sgl/rng.hpp"

namespace sgl {

struct TrainConfig {
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int batch_size = 32;
    int iterations = 1000;
    std::uint64_t seed = 0;
    std::string loss_mode = "sum-of-factor-cross-entropy"; // or "summed-binary"
    int eval_every = 0;      // 0: snapshots only at start and end
    int plateau_window = 0;  // 0: run the full iteration budget
    double plateau_tol = 0.0;
    int snapshot_cap = 4096; // train-accuracy probe size for interim snapshots

    void validate(const SplitModelSpec& spec) const {
        if (learning_rate <= 0 || beta1 <= 0 || beta2 <= 0 || eps <= 0)
            throw ValidationError("optimizer constants must be positive");
        if (beta1 >= 1.0 || beta2 >= 1.0)
            throw ValidationError("adam betas must be < 1");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (iterations < 0) throw ValidationError("iterations must be >= 0");
        if (eval_every < 0) throw ValidationError("eval_every must be >= 0");
        if (loss_mode != "sum-of-factor-cross-entropy" && loss_mode != "summed-binary")
            throw ValidationError("unknown loss_mode: " + loss_mode);
        if ((loss_mode == "summed-binary") != (spec.head_mode == HeadMode::Binary))
            throw ValidationError("loss_mode " + loss_mode + " does not match head mode " +
                                  head_mode_name(spec.head_mode));
        if (plateau_window < 0 || plateau_tol < 0)
            throw ValidationError("plateau settings must be non-negative");
    }
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::int64_t t = 0;
};

inline AdamState make_adam_state(const Graph& g, const std::vector<int>& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (int pid : params) {
        st.m.emplace_back(g.value(pid).shape);
        st.v.emplace_back(g.value(pid).shape);
    }
    return st;
}

// Standard Adam with bias correction; reads grads from the graph, updates
// parameter values in place.
inline void adam_step(Graph& g, const std::vector<int>& params, AdamState& st,
                      const TrainConfig& cfg) {
    if (st.m.size() != params.size())
        throw ContractError("adam state holds " + std::to_string(st.m.size()) +
                            " moments for " + std::to_string(params.size()) + " parameters");
    ++st.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = g.param_value(params[k]);
        const Tensor& grad = g.grad(params[k]);
        Tensor& m = st.m[k];
        Tensor& v = st.v[k];
        if (!p.same_shape(m) || !p.same_shape(grad))
            throw ContractError("adam state shape mismatch at parameter " +
                                std::to_string(params[k]));
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            p[i] -= cfg.learning_rate * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

struct Snapshot {
    int iteration = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    MetricsRecord metrics; // has_values only when a hook is installed
};

struct RunHistory {
    std::vector<Snapshot> snapshots;
    std::string stop_reason; // "iterations" | "plateau"
    int final_iteration = 0;

    const Snapshot& final_snapshot() const {
        if (snapshots.empty()) throw ContractError("empty history");
        return snapshots.back();
    }
};

using MetricHook = std::function<MetricsRecord(SplitModel&)>;

namespace detail {

// Loss and exact-tuple accuracy over rows [0, probe) of the dataset.
// Evaluated in bounded slices: one full-probe forward through a conv graph
// would materialise im2col caches for every row at once. Both loss kinds are
// means over the batch, so the slice losses recombine by size-weighted mean.
inline std::pair<double, double> probe_train(SplitModel& model, const PairDataset& data,
                                             int probe) {
    const int chunk = 512;
    double loss_sum = 0.0;
    std::int64_t hits = 0;
    for (int at = 0; at < probe; at += chunk) {
        const int take = std::min(chunk, probe - at);
        std::vector<int> idx(static_cast<std::size_t>(take));
        std::iota(idx.begin(), idx.end(), at);
        Tensor inputs = gather_rows(data.inputs, idx);
        std::vector<LabelTuple> labels(data.labels.begin() + at,
                                       data.labels.begin() + at + take);
        model.set_minibatch(inputs, labels);
        model.graph.forward();
        loss_sum += model.graph.value(model.total_loss_id).data[0] * take;
        const std::vector<LabelTuple> pred = model.predict(inputs);
        for (int i = 0; i < take; ++i)
            if (pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)]) ++hits;
    }
    return {loss_sum / probe, static_cast<double>(hits) / probe};
}

} // namespace detail

// Minibatch loop: uniform with-replacement sampling, summed per-factor loss,
// Adam updates. Snapshots at iteration 0, every eval_every, and at the end
// (the final one probes the full training set). Non-finite loss aborts.
inline RunHistory train(SplitModel& model, const PairDataset& data, const TrainConfig& cfg,
                        const MetricHook& hook = nullptr) {
    cfg.validate(model.spec);
    if (data.size() < 1) throw ValidationError("training dataset is empty");
    const int n = data.size();
    Rng rng(cfg.seed);
    AdamState st = make_adam_state(model.graph, model.param_registry);
    RunHistory hist;

    const auto snapshot = [&](int iteration, bool full) {
        Snapshot s;
        s.iteration = iteration;
        const int probe = full ? n : std::min(cfg.snapshot_cap, n);
        auto [loss, acc] = detail::probe_train(model, data, probe);
        s.loss = loss;
        s.train_acc = acc;
        if (hook) {
            s.metrics = hook(model);
            s.metrics.check();
        }
        hist.snapshots.push_back(std::move(s));
    };

    snapshot(0, /*full=*/cfg.iterations == 0);
    std::deque<double> window;
    double last_loss = hist.snapshots.front().loss;
    hist.stop_reason = "iterations";
    int it = 0;
    while (it < cfg.iterations) {
        ++it;
        std::vector<int> idx(static_cast<std::size_t>(cfg.batch_size));
        for (int& i : idx) i = rng.uniform_int(n);
        Tensor batch = gather_rows(data.inputs, idx);
        std::vector<LabelTuple> labels;
        labels.reserve(idx.size());
        for (int i : idx) labels.push_back(data.labels[static_cast<std::size_t>(i)]);
        model.set_minibatch(batch, labels);
        model.graph.forward();
        const double loss = model.graph.value(model.total_loss_id).data[0];
        if (!std::isfinite(loss))
            throw TrainingDiverged("loss became non-finite at iteration " + std::to_string(it) +
                                   " (last finite loss " + std::to_string(last_loss) + ")");
        last_loss = loss;
        model.graph.backward(model.total_loss_id);
        adam_step(model.graph, model.param_registry, st, cfg);

        if (cfg.plateau_window > 0) {
            window.push_back(loss);
            if (static_cast<int>(window.size()) > 2 * cfg.plateau_window) window.pop_front();
            if (static_cast<int>(window.size()) == 2 * cfg.plateau_window) {
                const auto mid = window.begin() + cfg.plateau_window;
                const double prev = std::accumulate(window.begin(), mid, 0.0) / cfg.plateau_window;
                const double curr = std::accumulate(mid, window.end(), 0.0) / cfg.plateau_window;
                if (std::abs(curr - prev) < cfg.plateau_tol) {
                    hist.stop_reason = "plateau";
                    break;
                }
            }
        }
        if (cfg.eval_every > 0 && it % cfg.eval_every == 0 && it != cfg.iterations)
            snapshot(it, /*full=*/false);
    }
    hist.final_iteration = it;
    if (cfg.iterations > 0) snapshot(it, /*full=*/true);
    return hist;
}

// History CSV, one row per snapshot. Metric columns are blank when no hook
// ran at that snapshot.
inline void write_history_csv(std::ostream& out, const RunHistory& hist) {
    out << "iteration,loss,train_acc,test_sample_acc,test_set_acc,random_set_acc,ood_partitions\n";
    for (const Snapshot& s : hist.snapshots) {
        out << s.iteration << ',' << s.loss << ',' << s.train_acc << ',';
        if (s.metrics.has_values)
            out << s.metrics.test_sample_acc << ',' << s.metrics.test_set_acc << ','
                << s.metrics.random_set_acc << ',' << s.metrics.ood_partition_count;
        else
            out << ",,,";
        out << '\n';
    }
}

} // namespace sgl
