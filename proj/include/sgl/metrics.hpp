#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sgl/labels.hpp"
#include "sgl/tensor.hpp"

namespace sgl {

// Classifier surface shared by models, oracles and hand-built test stubs:
// a batch of inputs in, one label tuple per row out.
using PredictFn = std::function<std::vector<LabelTuple>(const Tensor&)>;

// Random-input source for the random-set metric: count -> [count, ...] batch.
using InputSampler = std::function<Tensor(int)>;

struct MetricsRecord {
    double test_sample_acc = 0.0;
    double test_set_acc = 0.0;
    double random_set_acc = 0.0;
    int ood_partition_count = 0;
    double ood_sample_ratio = 0.0;
    int n_eval = 0;
    bool has_values = false;

    // A correct test tuple is itself an unseen-combo prediction, so the
    // sample accuracy can never exceed the set accuracy.
    void check() const {
        if (has_values && test_sample_acc > test_set_acc + 1e-12)
            throw ContractError("metrics invariant violated: test_sample_acc " +
                                std::to_string(test_sample_acc) + " > test_set_acc " +
                                std::to_string(test_set_acc));
    }
};

// Evaluates predictions in bounded slices so arbitrarily large probe sets
// never materialize giant activation tensors.
inline std::vector<LabelTuple> predict_chunked(const PredictFn& predict, const Tensor& inputs,
                                               int chunk = 512) {
    const int n = inputs.dim(0);
    std::vector<LabelTuple> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int at = 0; at < n; at += chunk) {
        const int take = std::min(chunk, n - at);
        std::vector<int> idx(static_cast<std::size_t>(take));
        std::iota(idx.begin(), idx.end(), at);
        std::vector<LabelTuple> part = predict(gather_rows(inputs, idx));
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

inline double test_sample_accuracy(const PredictFn& predict, const Tensor& inputs,
                                   const std::vector<LabelTuple>& truth) {
    if (truth.empty()) throw ValidationError("test_sample_accuracy on an empty set");
    if (inputs.dim(0) != static_cast<int>(truth.size()))
        throw ValidationError("inputs and labels disagree in count");
    const std::vector<LabelTuple> pred = predict_chunked(predict, inputs);
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (pred[i] == truth[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

inline double test_set_accuracy(const PredictFn& predict, const Tensor& inputs,
                                const TupleSet& test_combos) {
    if (test_combos.empty()) throw ValidationError("test_set_accuracy with no test combos");
    if (inputs.numel() == 0 || inputs.dim(0) == 0)
        throw ValidationError("test_set_accuracy on empty inputs");
    const std::vector<LabelTuple> pred = predict_chunked(predict, inputs);
    std::int64_t hits = 0;
    for (const LabelTuple& t : pred)
        if (test_combos.count(t)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline double random_set_accuracy(const PredictFn& predict, const InputSampler& sample,
                                  const TupleSet& test_combos, int n) {
    if (n < 1) throw ValidationError("random_set_accuracy needs n >= 1");
    if (test_combos.empty()) throw ValidationError("random_set_accuracy with no test combos");
    std::int64_t hits = 0;
    int done = 0;
    while (done < n) {
        const int take = std::min(512, n - done);
        for (const LabelTuple& t : predict(sample(take)))
            if (test_combos.count(t)) ++hits;
        done += take;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

struct OodReport {
    int partition_count = 0;
    double sample_ratio = 0.0;
};

// 50-of-10000 proportionally rescaled for other probe sizes.
inline int default_min_count(int n) {
    return static_cast<int>(std::ceil(0.005 * n));
}

// Counts unseen label combinations that the classifier assigns to at least
// min_count of the probe inputs; the ratio is the fraction of probes landing
// in such a partition.
inline OodReport ood_partition_report(const PredictFn& predict, const Tensor& inputs,
                                      const TupleSet& unseen_combos, int min_count) {
    OodReport rep;
    const std::vector<LabelTuple> pred = predict_chunked(predict, inputs);
    std::map<LabelTuple, int> counts;
    for (const LabelTuple& t : pred)
        if (unseen_combos.count(t)) ++counts[t];
    std::int64_t covered = 0;
    for (const auto& [_, c] : counts)
        if (c >= min_count) {
            ++rep.partition_count;
            covered += c;
        }
    rep.sample_ratio = pred.empty() ? 0.0 : static_cast<double>(covered) /
                                                static_cast<double>(pred.size());
    return rep;
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
    if (xs.empty()) return {0.0, 0.0};
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) /
                        static_cast<double>(xs.size());
    if (xs.size() == 1) return {mean, 0.0};
    double acc = 0.0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return {mean, std::sqrt(acc / static_cast<double>(xs.size() - 1))};
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

} // namespace detail

// Spearman rank correlation with average ranks on ties; the depth-vs-accuracy
// trend statistic.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw ValidationError("spearman needs two equal-length series of size >= 2");
    const std::vector<double> rx = detail::average_ranks(xs);
    const std::vector<double> ry = detail::average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double num = 0, dx = 0, dy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx) * (rx[i] - mx);
        dy += (ry[i] - my) * (ry[i] - my);
    }
    if (dx == 0.0 || dy == 0.0) return 0.0;
    return num / std::sqrt(dx * dy);
}

} // namespace sgl
