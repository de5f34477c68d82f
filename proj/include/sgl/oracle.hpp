#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sgl/labels.hpp"
#include "sgl/metrics.hpp"
#include "sgl/tensor.hpp"

namespace sgl {

// A deterministic classifier under test: same input row, same tuple.
struct ClassifierHandle {
    PredictFn predict;
    std::string description;
};

// The seen-prediction projection: f agrees with g wherever g emits a tuple it
// already produces on the training inputs, and falls back to g's output on
// the first training input everywhere else. Every f output therefore lies in
// g(X_train).
inline ClassifierHandle project_to_seen(const ClassifierHandle& g, const Tensor& x_train) {
    if (x_train.numel() == 0)
        throw ValidationError("project_to_seen needs a non-empty training set");
    const std::vector<LabelTuple> train_out = predict_chunked(g.predict, x_train);
    TupleSet seen(train_out.begin(), train_out.end());
    LabelTuple anchor = train_out.front(); // g on the first training input
    ClassifierHandle f;
    f.description = "project_to_seen(" + g.description + ")";
    f.predict = [inner = g.predict, seen = std::move(seen),
                 anchor = std::move(anchor)](const Tensor& batch) {
        std::vector<LabelTuple> out = inner(batch);
        for (LabelTuple& t : out)
            if (!seen.count(t)) t = anchor;
        return out;
    };
    return f;
}

struct RefinementReport {
    bool ok = true;
    int first = -1;   // probe indices of the earliest violating pair
    int second = -1;
    LabelTuple g_tuple;
    LabelTuple f_first;
    LabelTuple f_second;
};

// Checks the refinement relation on a probe set: whenever g assigns two
// probes the same tuple, f must as well. Scan order makes the reported
// witness deterministic.
inline RefinementReport refinement_check(const ClassifierHandle& f, const ClassifierHandle& g,
                                         const Tensor& probes) {
    if (probes.numel() == 0)
        throw ValidationError("refinement_check needs a non-empty probe set");
    const std::vector<LabelTuple> fo = predict_chunked(f.predict, probes);
    const std::vector<LabelTuple> go = predict_chunked(g.predict, probes);
    std::map<LabelTuple, std::pair<int, LabelTuple>> groups; // g tuple -> (first idx, f tuple)
    RefinementReport rep;
    for (int i = 0; i < static_cast<int>(go.size()); ++i) {
        auto [it, fresh] = groups.try_emplace(go[static_cast<std::size_t>(i)], i,
                                              fo[static_cast<std::size_t>(i)]);
        if (!fresh && it->second.second != fo[static_cast<std::size_t>(i)]) {
            rep.ok = false;
            rep.first = it->second.first;
            rep.second = i;
            rep.g_tuple = it->first;
            rep.f_first = it->second.second;
            rep.f_second = fo[static_cast<std::size_t>(i)];
            return rep;
        }
    }
    return rep;
}

// Counts probes whose prediction falls outside the training label set; zero
// means every prediction is a training ground-truth output.
inline int seen_label_check(const ClassifierHandle& f, const Tensor& probes,
                            const TupleSet& y_train) {
    const std::vector<LabelTuple> out = predict_chunked(f.predict, probes);
    int violations = 0;
    for (const LabelTuple& t : out)
        if (!y_train.count(t)) ++violations;
    return violations;
}

} // namespace sgl
