#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "sgl/error.hpp"

namespace sgl {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw DimensionError("non-positive dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_to_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Dense row-major array of 64-bit reals; the sole numeric carrier.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(Shape s)
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), 0.0) {}

    Tensor(Shape s, double fill)
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {}

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape))
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_to_string(shape));
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    /// Element (r, c) of a rank-2 tensor.
    double& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    double at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Number of elements per leading-dimension slice (rows of a batch).
    std::int64_t row_numel() const {
        if (shape.empty()) throw DimensionError("row_numel on rank-0 tensor");
        return numel() / shape[0];
    }
};

/// Stacks rows `indices` of `src` (leading dim) into a new tensor.
inline Tensor gather_rows(const Tensor& src, const std::vector<int>& indices) {
    Shape out_shape = src.shape;
    out_shape[0] = static_cast<int>(indices.size());
    Tensor out(out_shape);
    const std::int64_t row = src.row_numel();
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* from = src.data.data() + static_cast<std::int64_t>(indices[i]) * row;
        std::copy(from, from + row, out.data.data() + static_cast<std::int64_t>(i) * row);
    }
    return out;
}

/// FNV-1a over the raw bytes; used for dataset checksums in manifests.
inline std::uint64_t fnv1a(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t tensor_checksum(const Tensor& t) {
    return fnv1a(t.data.data(), t.data.size() * sizeof(double));
}

} // namespace sgl
