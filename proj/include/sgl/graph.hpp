#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <cblas.h>

#include "sgl/tensor.hpp"

extern "C" void openblas_set_num_threads(int);

namespace sgl {

// BLAS reductions must not race: one thread per gemm keeps results
// bit-reproducible. Call once at program start; cell-level parallelism
// happens above the graph layer.
inline void pin_blas_single_thread() { openblas_set_num_threads(1); }

// Reverse-mode autodiff over a re-runnable tape.
//
// Nodes are appended in construction order, so inputs always precede their
// consumers and a single reverse sweep visits each node exactly once. The
// same graph is re-executed every iteration: leaves keep their tensors,
// interior nodes recompute values (shapes may change with the batch size).

enum class OpKind : std::uint8_t {
    Input,
    Param,
    MatMul,
    Conv2d,
    Relu,
    Tanh,
    Add,
    BiasAdd,
    Flatten,
    Mean,
    Sum,
    SoftmaxCE,
    SigmoidBCE,
};

struct Node {
    OpKind op;
    int a = -1;
    int b = -1;
    Tensor value;
    Tensor grad;
    Tensor cache;              // softmax probabilities / im2col matrix
    std::vector<int> labels;   // SoftmaxCE only
    Tensor targets;            // SigmoidBCE only
    bool trainable = false;
};

class Graph {
public:
    int input(Tensor v = {}) {
        Node n;
        n.op = OpKind::Input;
        n.value = std::move(v);
        return push(std::move(n));
    }

    int param(Tensor v) {
        Node n;
        n.op = OpKind::Param;
        n.value = std::move(v);
        n.trainable = true;
        return push(std::move(n));
    }

    int matmul(int a, int b) { return binary(OpKind::MatMul, a, b); }
    int conv2d(int x, int kernel) { return binary(OpKind::Conv2d, x, kernel); }
    int add(int a, int b) { return binary(OpKind::Add, a, b); }
    int bias_add(int x, int bias) { return binary(OpKind::BiasAdd, x, bias); }
    int relu(int x) { return unary(OpKind::Relu, x); }
    int tanh_op(int x) { return unary(OpKind::Tanh, x); }
    int flatten(int x) { return unary(OpKind::Flatten, x); }
    int mean(int x) { return unary(OpKind::Mean, x); }
    int sum(int x) { return unary(OpKind::Sum, x); }
    int softmax_cross_entropy(int logits) { return unary(OpKind::SoftmaxCE, logits); }
    int sigmoid_bce(int logits) { return unary(OpKind::SigmoidBCE, logits); }

    void set_value(int id, Tensor v) {
        Node& n = at(id);
        if (n.op != OpKind::Input)
            throw ContractError("set_value on non-input node " + std::to_string(id));
        n.value = std::move(v);
    }

    void set_labels(int id, std::vector<int> labels) {
        Node& n = at(id);
        if (n.op != OpKind::SoftmaxCE)
            throw ContractError("set_labels on non-cross-entropy node");
        n.labels = std::move(labels);
    }

    void set_targets(int id, Tensor t) {
        Node& n = at(id);
        if (n.op != OpKind::SigmoidBCE)
            throw ContractError("set_targets on non-bce node");
        n.targets = std::move(t);
    }

    const Tensor& value(int id) const { return at(id).value; }
    const Tensor& grad(int id) const { return at(id).grad; }
    OpKind op_kind(int id) const { return at(id).op; }
    int arg_a(int id) const { return at(id).a; }
    int arg_b(int id) const { return at(id).b; }
    Tensor& param_value(int id) {
        Node& n = at(id);
        if (!n.trainable) throw ContractError("param_value on non-parameter node");
        return n.value;
    }

    std::vector<int> param_ids() const {
        std::vector<int> out;
        for (int i = 0; i < static_cast<int>(nodes_.size()); ++i)
            if (nodes_[static_cast<std::size_t>(i)].trainable) out.push_back(i);
        return out;
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    void forward() { forward_to(size() - 1); }

    void forward_to(int last) {
        for (int i = 0; i <= last; ++i) compute(i);
    }

    // Exact reverse-mode sweep; deterministic for a fixed graph and values.
    void backward(int loss) {
        Node& l = at(loss);
        if (l.value.numel() != 1)
            throw ContractError("backward requires a scalar loss, got shape " +
                                shape_to_string(l.value.shape));
        for (int i = 0; i <= loss; ++i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.value.same_shape(n.grad)) n.grad = Tensor(n.value.shape);
            else std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
        }
        l.grad.data[0] = 1.0;
        for (int i = loss; i >= 0; --i) push_grad(i);
    }

private:
    std::vector<Node> nodes_;

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int unary(OpKind op, int x) {
        check_id(x);
        Node n;
        n.op = op;
        n.a = x;
        return push(std::move(n));
    }

    int binary(OpKind op, int a, int b) {
        check_id(a);
        check_id(b);
        Node n;
        n.op = op;
        n.a = a;
        n.b = b;
        return push(std::move(n));
    }

    void check_id(int id) const {
        if (id < 0 || id >= size()) throw ContractError("node id out of range");
    }

    Node& at(int id) {
        check_id(id);
        return nodes_[static_cast<std::size_t>(id)];
    }
    const Node& at(int id) const {
        const_cast<Graph*>(this)->check_id(id);
        return nodes_[static_cast<std::size_t>(id)];
    }

    static void require_rank(const Tensor& t, int r, const char* what) {
        if (t.rank() != r)
            throw DimensionError(std::string(what) + " expects rank-" + std::to_string(r) +
                                 " input, got " + shape_to_string(t.shape));
    }

    void compute(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
        case OpKind::Input:
        case OpKind::Param:
            break;
        case OpKind::MatMul: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
            require_rank(A, 2, "matmul");
            require_rank(B, 2, "matmul");
            if (A.dim(1) != B.dim(0))
                throw DimensionError("matmul inner dimensions disagree: " +
                                     shape_to_string(A.shape) + " * " + shape_to_string(B.shape));
            const int m = A.dim(0), k = A.dim(1), c = B.dim(1);
            if (n.value.shape != Shape{m, c}) n.value = Tensor(Shape{m, c});
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, m, c, k, 1.0,
                        A.data.data(), k, B.data.data(), c, 0.0, n.value.data.data(), c);
            break;
        }
        case OpKind::Conv2d:
            conv_forward(n);
            break;
        case OpKind::Relu: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            if (n.value.shape != x.shape) n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.numel(); ++i)
                n.value[i] = x[i] > 0.0 ? x[i] : 0.0;
            break;
        }
        case OpKind::Tanh: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            if (n.value.shape != x.shape) n.value = Tensor(x.shape);
            for (std::int64_t i = 0; i < x.numel(); ++i) n.value[i] = std::tanh(x[i]);
            break;
        }
        case OpKind::Add: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
            if (A.shape != B.shape)
                throw DimensionError("add shape mismatch: " + shape_to_string(A.shape) +
                                     " vs " + shape_to_string(B.shape));
            if (n.value.shape != A.shape) n.value = Tensor(A.shape);
            for (std::int64_t i = 0; i < A.numel(); ++i) n.value[i] = A[i] + B[i];
            break;
        }
        case OpKind::BiasAdd: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& b = nodes_[static_cast<std::size_t>(n.b)].value;
            if (x.rank() < 1 || b.rank() != 1 || b.dim(0) != x.shape.back())
                throw DimensionError("bias_add: bias " + shape_to_string(b.shape) +
                                     " does not match last dim of " + shape_to_string(x.shape));
            if (n.value.shape != x.shape) n.value = Tensor(x.shape);
            const std::int64_t width = b.numel();
            for (std::int64_t i = 0; i < x.numel(); ++i)
                n.value[i] = x[i] + b[i % width];
            break;
        }
        case OpKind::Flatten: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            if (x.rank() < 2) throw DimensionError("flatten expects rank >= 2");
            n.value.shape = Shape{x.dim(0), static_cast<int>(x.row_numel())};
            n.value.data = x.data;
            break;
        }
        case OpKind::Mean: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            double acc = 0.0;
            for (double v : x.data) acc += v;
            n.value = Tensor::scalar(acc / static_cast<double>(x.numel()));
            break;
        }
        case OpKind::Sum: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            double acc = 0.0;
            for (double v : x.data) acc += v;
            n.value = Tensor::scalar(acc);
            break;
        }
        case OpKind::SoftmaxCE:
            softmax_ce_forward(n);
            break;
        case OpKind::SigmoidBCE:
            sigmoid_bce_forward(n);
            break;
        }
    }

    void conv_forward(Node& n) {
        const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& k = nodes_[static_cast<std::size_t>(n.b)].value;
        require_rank(x, 4, "conv2d");
        require_rank(k, 4, "conv2d kernel");
        const int kh = k.dim(0), kw = k.dim(1), cin = k.dim(2), cout = k.dim(3);
        if (kh % 2 == 0 || kw % 2 == 0)
            throw ValidationError("conv2d kernel dims must be odd, got " +
                                  shape_to_string(k.shape));
        if (x.dim(3) != cin)
            throw DimensionError("conv2d channel mismatch: input " + shape_to_string(x.shape) +
                                 " vs kernel " + shape_to_string(k.shape));
        const int batch = x.dim(0), h = x.dim(1), w = x.dim(2);
        const std::int64_t rows = static_cast<std::int64_t>(batch) * h * w;
        const int cols = kh * kw * cin;
        if (n.cache.shape != Shape{static_cast<int>(rows), cols})
            n.cache = Tensor(Shape{static_cast<int>(rows), cols});
        im2col(x, kh, kw, n.cache);
        if (n.value.shape != Shape{batch, h, w, cout}) n.value = Tensor(Shape{batch, h, w, cout});
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(rows), cout,
                    cols, 1.0, n.cache.data.data(), cols, k.data.data(), cout, 0.0,
                    n.value.data.data(), cout);
    }

    // Zero "same" padding, stride 1: output row (b, i, j) holds the receptive
    // field at (i, j) laid out kh*kw*cin, matching the kernel's memory order.
    static void im2col(const Tensor& x, int kh, int kw, Tensor& col) {
        const int batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
        const int ph = kh / 2, pw = kw / 2;
        const int cols = kh * kw * cin;
        double* out = col.data.data();
        for (int b = 0; b < batch; ++b) {
            const double* xb = x.data.data() + static_cast<std::int64_t>(b) * h * w * cin;
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    double* row = out;
                    out += cols;
                    for (int di = 0; di < kh; ++di) {
                        const int si = i + di - ph;
                        if (si < 0 || si >= h) {
                            std::fill(row, row + kw * cin, 0.0);
                            row += kw * cin;
                            continue;
                        }
                        for (int dj = 0; dj < kw; ++dj) {
                            const int sj = j + dj - pw;
                            if (sj < 0 || sj >= w) {
                                std::fill(row, row + cin, 0.0);
                            } else {
                                const double* px = xb + (static_cast<std::int64_t>(si) * w + sj) * cin;
                                std::copy(px, px + cin, row);
                            }
                            row += cin;
                        }
                    }
                }
            }
        }
    }

    static void col2im_accumulate(const Tensor& col, int kh, int kw, Tensor& dx) {
        const int batch = dx.dim(0), h = dx.dim(1), w = dx.dim(2), cin = dx.dim(3);
        const int ph = kh / 2, pw = kw / 2;
        const int cols = kh * kw * cin;
        const double* in = col.data.data();
        for (int b = 0; b < batch; ++b) {
            double* gb = dx.data.data() + static_cast<std::int64_t>(b) * h * w * cin;
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    const double* row = in;
                    in += cols;
                    for (int di = 0; di < kh; ++di) {
                        const int si = i + di - ph;
                        if (si < 0 || si >= h) {
                            row += kw * cin;
                            continue;
                        }
                        for (int dj = 0; dj < kw; ++dj) {
                            const int sj = j + dj - pw;
                            if (sj >= 0 && sj < w) {
                                double* px = gb + (static_cast<std::int64_t>(si) * w + sj) * cin;
                                for (int c = 0; c < cin; ++c) px[c] += row[c];
                            }
                            row += cin;
                        }
                    }
                }
            }
        }
    }

    void softmax_ce_forward(Node& n) {
        const Tensor& logits = nodes_[static_cast<std::size_t>(n.a)].value;
        require_rank(logits, 2, "softmax_cross_entropy");
        const int batch = logits.dim(0), classes = logits.dim(1);
        if (static_cast<int>(n.labels.size()) != batch)
            throw ValidationError("softmax_cross_entropy: " + std::to_string(n.labels.size()) +
                                  " labels for batch of " + std::to_string(batch));
        for (int lab : n.labels)
            if (lab < 0 || lab >= classes)
                throw ValidationError("label " + std::to_string(lab) + " out of range [0, " +
                                      std::to_string(classes) + ")");
        if (n.cache.shape != logits.shape) n.cache = Tensor(logits.shape);
        double loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            const double* row = logits.data.data() + static_cast<std::int64_t>(b) * classes;
            double* p = n.cache.data.data() + static_cast<std::int64_t>(b) * classes;
            double mx = row[0];
            for (int c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
            double denom = 0.0;
            for (int c = 0; c < classes; ++c) {
                p[c] = std::exp(row[c] - mx);
                denom += p[c];
            }
            for (int c = 0; c < classes; ++c) p[c] /= denom;
            loss -= (row[n.labels[static_cast<std::size_t>(b)]] - mx) - std::log(denom);
        }
        n.value = Tensor::scalar(loss / batch);
    }

    void sigmoid_bce_forward(Node& n) {
        const Tensor& logits = nodes_[static_cast<std::size_t>(n.a)].value;
        require_rank(logits, 2, "sigmoid_bce");
        if (n.targets.shape != logits.shape)
            throw DimensionError("sigmoid_bce targets " + shape_to_string(n.targets.shape) +
                                 " vs logits " + shape_to_string(logits.shape));
        for (double t : n.targets.data)
            if (t != 0.0 && t != 1.0)
                throw ValidationError("sigmoid_bce target outside {0,1}: " + std::to_string(t));
        const int batch = logits.dim(0);
        double loss = 0.0;
        for (std::int64_t i = 0; i < logits.numel(); ++i) {
            const double z = logits[i], t = n.targets[i];
            loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
        }
        n.value = Tensor::scalar(loss / batch);
    }

    void push_grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
        case OpKind::Input:
        case OpKind::Param:
            break;
        case OpKind::MatMul: {
            const Tensor& A = nodes_[static_cast<std::size_t>(n.a)].value;
            const Tensor& B = nodes_[static_cast<std::size_t>(n.b)].value;
            Tensor& dA = nodes_[static_cast<std::size_t>(n.a)].grad;
            Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].grad;
            const int m = A.dim(0), k = A.dim(1), c = B.dim(1);
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, m, k, c, 1.0,
                        n.grad.data.data(), c, B.data.data(), c, 1.0, dA.data.data(), k);
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, k, c, m, 1.0,
                        A.data.data(), k, n.grad.data.data(), c, 1.0, dB.data.data(), c);
            break;
        }
        case OpKind::Conv2d: {
            const Tensor& k = nodes_[static_cast<std::size_t>(n.b)].value;
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            Tensor& dk = nodes_[static_cast<std::size_t>(n.b)].grad;
            const int kh = k.dim(0), kw = k.dim(1), cin = k.dim(2), cout = k.dim(3);
            const int rows = n.cache.dim(0), cols = kh * kw * cin;
            cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, cols, cout, rows, 1.0,
                        n.cache.data.data(), cols, n.grad.data.data(), cout, 1.0,
                        dk.data.data(), cout);
            Tensor dcol(Shape{rows, cols});
            cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, rows, cols, cout, 1.0,
                        n.grad.data.data(), cout, k.data.data(), cout, 0.0,
                        dcol.data.data(), cols);
            col2im_accumulate(dcol, kh, kw, dx);
            break;
        }
        case OpKind::Relu: {
            const Tensor& x = nodes_[static_cast<std::size_t>(n.a)].value;
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            // subgradient 0 at exactly 0
            for (std::int64_t i = 0; i < x.numel(); ++i)
                if (x[i] > 0.0) dx[i] += n.grad[i];
            break;
        }
        case OpKind::Tanh: {
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            for (std::int64_t i = 0; i < n.value.numel(); ++i)
                dx[i] += n.grad[i] * (1.0 - n.value[i] * n.value[i]);
            break;
        }
        case OpKind::Add: {
            Tensor& dA = nodes_[static_cast<std::size_t>(n.a)].grad;
            Tensor& dB = nodes_[static_cast<std::size_t>(n.b)].grad;
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
                dA[i] += n.grad[i];
                dB[i] += n.grad[i];
            }
            break;
        }
        case OpKind::BiasAdd: {
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            Tensor& db = nodes_[static_cast<std::size_t>(n.b)].grad;
            const std::int64_t width = db.numel();
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) {
                dx[i] += n.grad[i];
                db[i % width] += n.grad[i];
            }
            break;
        }
        case OpKind::Flatten: {
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            for (std::int64_t i = 0; i < n.grad.numel(); ++i) dx[i] += n.grad[i];
            break;
        }
        case OpKind::Mean: {
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            const double g = n.grad.data[0] / static_cast<double>(dx.numel());
            for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += g;
            break;
        }
        case OpKind::Sum: {
            Tensor& dx = nodes_[static_cast<std::size_t>(n.a)].grad;
            const double g = n.grad.data[0];
            for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += g;
            break;
        }
        case OpKind::SoftmaxCE: {
            Tensor& dl = nodes_[static_cast<std::size_t>(n.a)].grad;
            const int batch = n.cache.dim(0), classes = n.cache.dim(1);
            const double g = n.grad.data[0] / batch;
            for (int b = 0; b < batch; ++b) {
                const double* p = n.cache.data.data() + static_cast<std::int64_t>(b) * classes;
                double* d = dl.data.data() + static_cast<std::int64_t>(b) * classes;
                const int lab = n.labels[static_cast<std::size_t>(b)];
                for (int c = 0; c < classes; ++c) d[c] += g * (p[c] - (c == lab ? 1.0 : 0.0));
            }
            break;
        }
        case OpKind::SigmoidBCE: {
            const Tensor& logits = nodes_[static_cast<std::size_t>(n.a)].value;
            Tensor& dl = nodes_[static_cast<std::size_t>(n.a)].grad;
            const int batch = logits.dim(0);
            const double g = n.grad.data[0] / batch;
            for (std::int64_t i = 0; i < logits.numel(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-logits[i]));
                dl[i] += g * (s - n.targets[i]);
            }
            break;
        }
        }
    }
};

// Contract form: run the reverse sweep and hand back a parameter-id keyed
// copy of the gradients. Training uses Graph::backward in place instead.
inline std::map<int, Tensor> backward(Graph& g, int loss) {
    g.backward(loss);
    std::map<int, Tensor> out;
    for (int pid : g.param_ids()) out.emplace(pid, g.grad(pid));
    return out;
}

} // namespace sgl
