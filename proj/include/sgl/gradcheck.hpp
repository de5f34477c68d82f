#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "sgl/graph.hpp"
#include "sgl/rng.hpp"
#include "sgl/tensor.hpp"

namespace sgl {

// Smallest |input| across every relu feeding into node `last`. A central
// difference whose step exceeds this straddles a kink and stops estimating
// the derivative. Forward values must be current.
inline double relu_kink_clearance(const Graph& g, int last) {
    double clearance = std::numeric_limits<double>::infinity();
    for (int id = 0; id <= last; ++id) {
        if (g.op_kind(id) != OpKind::Relu) continue;
        const Tensor& pre = g.value(g.arg_a(id));
        for (std::int64_t i = 0; i < pre.numel(); ++i)
            clearance = std::min(clearance, std::abs(pre[i]));
    }
    return clearance;
}

// Shifts every trainable parameter by uniform noise so the loss is evaluated
// at a generic point. Zero-initialised biases can leave relu pre-activations
// exactly at the kink (a dead row times any weight is exactly zero), where
// central differences measure the one-sided slope instead of the gradient.
// Redraws the noise until every relu input clears the given margin.
inline void perturb_params(Graph& g, int loss, std::uint64_t seed, double scale = 0.05,
                           double clearance = 1e-4) {
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng(seed + static_cast<std::uint64_t>(attempt));
        for (int pid : g.param_ids()) {
            Tensor& value = g.param_value(pid);
            for (std::int64_t i = 0; i < value.numel(); ++i)
                value[i] += rng.uniform(-scale, scale);
        }
        g.forward_to(loss);
        if (relu_kink_clearance(g, loss) > clearance) return;
    }
    throw ContractError("perturb_params: relu inputs kept landing within the kink margin");
}

struct FdReport {
    double max_rel_error = 0.0;
    int worst_param = -1;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    double tolerance = 0.0;
    bool passed = true;
};

// Central differences carry intrinsic roundoff of roughly eps * |f| / (2h),
// about 1e-11 for unit-scale losses at h = 1e-5. The denominator floor keeps
// that noise below a 1e-4 relative tolerance on near-zero gradient entries.
inline double fd_rel_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

// Central differences per parameter entry against supplied analytic gradients.
// Exposed separately so a deliberately corrupted gradient can be fed in.
inline FdReport fd_compare(Graph& g, int loss,
                           const std::map<int, Tensor>& analytic, double step) {
    FdReport rep;
    for (const auto& [pid, agrad] : analytic) {
        Tensor& value = g.param_value(pid);
        if (!value.same_shape(agrad))
            throw ContractError("fd_compare: analytic gradient shape mismatch for param " +
                                std::to_string(pid));
        for (std::int64_t i = 0; i < value.numel(); ++i) {
            const double saved = value[i];
            value[i] = saved + step;
            g.forward_to(loss);
            const double up = g.value(loss).data[0];
            value[i] = saved - step;
            g.forward_to(loss);
            const double down = g.value(loss).data[0];
            value[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double rel = fd_rel_error(agrad[i], numeric);
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_param = pid;
                rep.worst_index = i;
                rep.analytic = agrad[i];
                rep.numeric = numeric;
            }
        }
    }
    g.forward_to(loss);
    return rep;
}

inline FdReport finite_difference_check(Graph& g, int loss, double step = 1e-5,
                                        double tolerance = 1e-4) {
    if (step <= 0.0) throw ContractError("finite_difference_check: step must be positive");
    g.forward_to(loss);
    g.backward(loss);
    std::map<int, Tensor> analytic;
    for (int pid : g.param_ids()) analytic.emplace(pid, g.grad(pid));
    FdReport rep = fd_compare(g, loss, analytic, step);
    rep.tolerance = tolerance;
    rep.passed = rep.max_rel_error <= tolerance;
    return rep;
}

} // namespace sgl
