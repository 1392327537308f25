#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "planaudio/common.hpp"
#include "planaudio/tensor.hpp"

namespace planaudio {

// Reverse-mode autodiff tape over dense f64 tensors.
//
// A Graph is built for one forward pass: adding an op computes its value
// immediately, so node ids are already in topological order and backward()
// is a single reverse sweep. Param nodes bind external storage (the model's
// parameter store); recompute() refreshes leaves from that storage and
// re-evaluates every interior node in order, which is what the
// finite-difference oracle leans on.

enum class OpKind {
    Param,
    Const,
    MatMul,
    MatMulNT,
    Add,
    AddRowVec,
    Mul,
    Affine,
    Gelu,
    LayerNorm,
    CausalSoftmax,
    GatherRows,
    ScatterRows,
    VStack,
    HStack,
    SliceRows,
    SliceCols,
    Mse,
    CosineSim,
    SoftmaxXentSum,
    Sum,
};

class Graph {
public:
    struct Node {
        OpKind kind;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;              // allocated lazily by backward()
        bool grad_alloc = false;
        std::vector<int64_t> iattrs;
        std::vector<double> dattrs;
        std::vector<double> aux;  // op-specific forward cache
        const Tensor* bound = nullptr;  // Param storage
        std::string name;               // Param name
    };

    // ---- leaves ----

    int param(const std::string& name, const Tensor* storage) {
        Node n;
        n.kind = OpKind::Param;
        n.bound = storage;
        n.name = name;
        n.value = *storage;
        return push(std::move(n));
    }

    int constant(Tensor t) {
        Node n;
        n.kind = OpKind::Const;
        n.value = std::move(t);
        return push(std::move(n));
    }

    // ---- ops ----

    int matmul(int a, int b) {
        check_2d(a, "matmul");
        check_2d(b, "matmul");
        if (val(a).shape[1] != val(b).shape[0]) {
            throw ShapeError(strformat("matmul: inner extents differ, %s vs %s",
                                       val(a).shape_str().c_str(), val(b).shape_str().c_str()));
        }
        return op(OpKind::MatMul, {a, b});
    }

    // a * b^T with b stored row-major [n x k]
    int matmul_nt(int a, int b) {
        check_2d(a, "matmul_nt");
        check_2d(b, "matmul_nt");
        if (val(a).shape[1] != val(b).shape[1]) {
            throw ShapeError(strformat("matmul_nt: inner extents differ, %s vs %s",
                                       val(a).shape_str().c_str(), val(b).shape_str().c_str()));
        }
        return op(OpKind::MatMulNT, {a, b});
    }

    int add(int a, int b) {
        if (!val(a).same_shape(val(b))) {
            throw ShapeError(strformat("add: shape mismatch %s vs %s", val(a).shape_str().c_str(),
                                       val(b).shape_str().c_str()));
        }
        return op(OpKind::Add, {a, b});
    }

    // a: [m x n], b: vector of n entries broadcast over rows
    int add_rowvec(int a, int b) {
        check_2d(a, "add_rowvec");
        if (val(b).numel() != val(a).shape[1]) {
            throw ShapeError(strformat("add_rowvec: %s vs row of %zu", val(a).shape_str().c_str(),
                                       val(b).numel()));
        }
        return op(OpKind::AddRowVec, {a, b});
    }

    int mul(int a, int b) {
        if (!val(a).same_shape(val(b))) {
            throw ShapeError(strformat("mul: shape mismatch %s vs %s", val(a).shape_str().c_str(),
                                       val(b).shape_str().c_str()));
        }
        return op(OpKind::Mul, {a, b});
    }

    // alpha * x + beta, elementwise
    int affine(int a, double alpha, double beta) {
        return op(OpKind::Affine, {a}, {}, {alpha, beta});
    }

    int gelu(int a) { return op(OpKind::Gelu, {a}); }

    int layer_norm(int x, int gain, int bias, double eps = 1e-5) {
        check_2d(x, "layer_norm");
        const size_t d = val(x).shape[1];
        if (val(gain).numel() != d || val(bias).numel() != d) {
            throw ShapeError("layer_norm: gain/bias size must match feature dim");
        }
        return op(OpKind::LayerNorm, {x, gain, bias}, {}, {eps});
    }

    // Row-wise softmax of square scores where row i is restricted to
    // columns j <= i; later columns get probability zero.
    int causal_softmax(int scores) {
        check_2d(scores, "causal_softmax");
        if (val(scores).shape[0] != val(scores).shape[1]) {
            throw ShapeError("causal_softmax: scores must be square");
        }
        return op(OpKind::CausalSoftmax, {scores});
    }

    // out[r] = table[ids[r]]; ids[r] < 0 selects a zero row that routes no
    // gradient (used to mask positions owned by another input family).
    int gather_rows(int table, const std::vector<int64_t>& ids) {
        check_2d(table, "gather_rows");
        const int64_t rows = static_cast<int64_t>(val(table).shape[0]);
        for (int64_t id : ids) {
            if (id >= rows) {
                throw IndexError(strformat("gather_rows: id %lld out of table of %lld rows",
                                           static_cast<long long>(id), static_cast<long long>(rows)));
            }
        }
        return op(OpKind::GatherRows, {table}, ids);
    }

    // out has out_rows rows; out[positions[r]] = src[r], all other rows zero.
    int scatter_rows(int src, const std::vector<int64_t>& positions, size_t out_rows) {
        check_2d(src, "scatter_rows");
        if (positions.size() != val(src).shape[0]) {
            throw ShapeError("scatter_rows: one position per source row required");
        }
        std::vector<int64_t> attrs;
        attrs.push_back(static_cast<int64_t>(out_rows));
        for (int64_t p : positions) {
            if (p < 0 || p >= static_cast<int64_t>(out_rows)) {
                throw IndexError("scatter_rows: position out of range");
            }
            attrs.push_back(p);
        }
        return op(OpKind::ScatterRows, {src}, attrs);
    }

    int vstack(const std::vector<int>& parts) {
        if (parts.empty()) throw ContractError("vstack: no inputs");
        const size_t cpart = val(parts[0]).shape[1];
        for (int p : parts) {
            check_2d(p, "vstack");
            if (val(p).shape[1] != cpart) throw ShapeError("vstack: column mismatch");
        }
        return op(OpKind::VStack, parts);
    }

    int hstack(const std::vector<int>& parts) {
        if (parts.empty()) throw ContractError("hstack: no inputs");
        const size_t rpart = val(parts[0]).shape[0];
        for (int p : parts) {
            check_2d(p, "hstack");
            if (val(p).shape[0] != rpart) throw ShapeError("hstack: row mismatch");
        }
        return op(OpKind::HStack, parts);
    }

    int slice_rows(int x, size_t r0, size_t r1) {
        check_2d(x, "slice_rows");
        if (r0 > r1 || r1 > val(x).shape[0]) throw IndexError("slice_rows: bad range");
        return op(OpKind::SliceRows, {x}, {static_cast<int64_t>(r0), static_cast<int64_t>(r1)});
    }

    int slice_cols(int x, size_t c0, size_t c1) {
        check_2d(x, "slice_cols");
        if (c0 > c1 || c1 > val(x).shape[1]) throw IndexError("slice_cols: bad range");
        return op(OpKind::SliceCols, {x}, {static_cast<int64_t>(c0), static_cast<int64_t>(c1)});
    }

    int mse(int a, int b) {
        if (!val(a).same_shape(val(b))) {
            throw ShapeError(strformat("mse: shape mismatch %s vs %s", val(a).shape_str().c_str(),
                                       val(b).shape_str().c_str()));
        }
        return op(OpKind::Mse, {a, b});
    }

    int cosine_sim(int a, int b) {
        if (!val(a).same_shape(val(b))) {
            throw ShapeError(strformat("cosine_sim: shape mismatch %s vs %s",
                                       val(a).shape_str().c_str(), val(b).shape_str().c_str()));
        }
        return op(OpKind::CosineSim, {a, b});
    }

    // Sum over rows r of cross_entropy(logits[r], targets[r]).
    int softmax_xent_sum(int logits, const std::vector<int64_t>& targets) {
        check_2d(logits, "softmax_xent_sum");
        if (targets.size() != val(logits).shape[0]) {
            throw ShapeError("softmax_xent_sum: one target per row required");
        }
        const int64_t vocab = static_cast<int64_t>(val(logits).shape[1]);
        for (int64_t t : targets) {
            if (t < 0 || t >= vocab) {
                throw IndexError(strformat("softmax_xent_sum: target %lld out of range [0, %lld)",
                                           static_cast<long long>(t), static_cast<long long>(vocab)));
            }
        }
        return op(OpKind::SoftmaxXentSum, {logits}, targets);
    }

    // -log softmax(logits)[target] for a single logit row (any shape,
    // flattened).
    int softmax_cross_entropy(int logits, int64_t target) {
        const size_t vocab = val(logits).numel();
        if (target < 0 || target >= static_cast<int64_t>(vocab)) {
            throw IndexError(strformat("softmax_cross_entropy: target %lld out of range [0, %zu)",
                                       static_cast<long long>(target), vocab));
        }
        int row = val(logits).ndim() == 2 && val(logits).shape[0] == 1
                      ? logits
                      : reshape_row(logits);
        return softmax_xent_sum(row, {target});
    }

    int sum(int a) { return op(OpKind::Sum, {a}); }

    int mean(int a) {
        const double n = static_cast<double>(val(a).numel());
        return affine(sum(a), 1.0 / n, 0.0);
    }

    // ---- evaluation ----

    const Tensor& value(int id) const { return nodes_[id].value; }
    const Tensor& grad(int id) const { return nodes_[id].grad; }
    const Node& node(int id) const { return nodes_[id]; }
    size_t size() const { return nodes_.size(); }

    // Locate the unique Param node bound under a name. A parameter appearing
    // twice would split its gradient across nodes, so duplication is an error.
    int find_param(const std::string& name) const {
        int found = -1;
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].kind == OpKind::Param && nodes_[i].name == name) {
                if (found >= 0) throw ContractError("find_param: " + name + " bound more than once");
                found = static_cast<int>(i);
            }
        }
        if (found < 0) throw IndexError("find_param: no parameter named " + name);
        return found;
    }

    // Refresh Param leaves from bound storage and re-evaluate every node.
    void recompute() {
        for (Node& n : nodes_) {
            if (n.kind == OpKind::Param) {
                n.value = *n.bound;
            } else if (n.kind != OpKind::Const) {
                forward_node(n);
            }
        }
    }

    // Fill gradient slots of every node reachable from the scalar loss.
    void backward(int loss) {
        if (val(loss).numel() != 1) {
            throw ContractError(strformat("backward: loss must be scalar, got %s",
                                          val(loss).shape_str().c_str()));
        }
        std::vector<char> reach(nodes_.size(), 0);
        mark_reachable(loss, reach);
        for (size_t i = 0; i < nodes_.size(); ++i) {
            if (reach[i]) {
                nodes_[i].grad = Tensor::zeros(nodes_[i].value.shape);
                nodes_[i].grad_alloc = true;
            } else {
                nodes_[i].grad_alloc = false;
            }
        }
        nodes_[loss].grad.v[0] = 1.0;
        for (int id = loss; id >= 0; --id) {
            if (!reach[id]) continue;
            backward_node(nodes_[id]);
        }
    }

    // After backward(), add every Param node's gradient (times scale) into
    // the matching slot of `grads` looked up by parameter name.
    template <typename GradLookup>
    void accumulate_param_grads(GradLookup&& slot_for, double scale = 1.0) const {
        for (const Node& n : nodes_) {
            if (n.kind != OpKind::Param || !n.grad_alloc) continue;
            Tensor& dst = slot_for(n.name);
            if (!dst.same_shape(n.grad)) {
                throw ShapeError("accumulate_param_grads: gradient shape mismatch for " + n.name);
            }
            for (size_t i = 0; i < dst.numel(); ++i) dst.v[i] += scale * n.grad.v[i];
        }
    }

    // Central finite differences against the autodiff gradient of one Param
    // node. Perturbs the bound storage in place (restoring it afterwards)
    // and re-runs the tape, so the check is independent of the backward
    // pass it is judging. Returns max over entries of
    // |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    double finite_diff_check(int loss, int param_node, double h) {
        if (h <= 0.0) throw ContractError("finite_diff_check: h must be positive");
        if (nodes_[param_node].kind != OpKind::Param) {
            throw ContractError("finite_diff_check: node is not a parameter");
        }
        backward(loss);
        const Tensor analytic = nodes_[param_node].grad;
        Tensor* storage = const_cast<Tensor*>(nodes_[param_node].bound);
        double worst = 0.0;
        for (size_t i = 0; i < storage->numel(); ++i) {
            const double keep = storage->v[i];
            storage->v[i] = keep + h;
            recompute();
            const double lp = val(loss).item();
            storage->v[i] = keep - h;
            recompute();
            const double lm = val(loss).item();
            storage->v[i] = keep;
            const double numeric = (lp - lm) / (2.0 * h);
            const double denom = std::max({std::abs(analytic.v[i]), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic.v[i] - numeric) / denom);
        }
        recompute();
        return worst;
    }

    // Debug hook for the negative-control test: scales the backward
    // contribution of Gelu nodes, leaving forward untouched.
    void set_gradient_fault(double factor) { grad_fault_ = factor; }

private:
    std::vector<Node> nodes_;
    double grad_fault_ = 1.0;

    const Tensor& val(int id) const { return nodes_[id].value; }

    void check_2d(int id, const char* who) const {
        if (val(id).ndim() != 2) {
            throw ShapeError(strformat("%s: expected rank-2 tensor, got %s", who,
                                       val(id).shape_str().c_str()));
        }
    }

    int reshape_row(int x) {
        // View any tensor as a single row. Encoded as a SliceRows node with
        // the flatten marker {-1, -1} so recompute and backward treat it as
        // a plain copy.
        Node n;
        n.kind = OpKind::SliceRows;
        n.inputs = {x};
        n.iattrs = {-1, -1};
        n.value = Tensor({1, val(x).numel()}, val(x).v);
        return push(std::move(n));
    }

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int op(OpKind kind, std::vector<int> inputs, std::vector<int64_t> iattrs = {},
           std::vector<double> dattrs = {}) {
        Node n;
        n.kind = kind;
        n.inputs = std::move(inputs);
        n.iattrs = std::move(iattrs);
        n.dattrs = std::move(dattrs);
        forward_node(n);
        return push(std::move(n));
    }

    void mark_reachable(int id, std::vector<char>& reach) const {
        std::vector<int> stack{id};
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            if (reach[cur]) continue;
            reach[cur] = 1;
            for (int in : nodes_[cur].inputs) stack.push_back(in);
        }
    }

    static double gelu_fwd(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

    static double gelu_grad(double x) {
        const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        return cdf + x * pdf;
    }

    void forward_node(Node& n) {
        switch (n.kind) {
            case OpKind::Param:
            case OpKind::Const:
                return;
            case OpKind::MatMul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                n.value = Tensor({a.shape[0], b.shape[1]});
                mm_nn(a.v.data(), b.v.data(), n.value.v.data(), a.shape[0], a.shape[1], b.shape[1]);
                return;
            }
            case OpKind::MatMulNT: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                n.value = Tensor({a.shape[0], b.shape[0]});
                mm_nt(a.v.data(), b.v.data(), n.value.v.data(), a.shape[0], a.shape[1], b.shape[0]);
                return;
            }
            case OpKind::Add: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                n.value = a;
                for (size_t i = 0; i < b.numel(); ++i) n.value.v[i] += b.v[i];
                return;
            }
            case OpKind::AddRowVec: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                n.value = a;
                const size_t cols = a.shape[1];
                for (size_t i = 0; i < a.shape[0]; ++i) {
                    double* row = n.value.v.data() + i * cols;
                    for (size_t j = 0; j < cols; ++j) row[j] += b.v[j];
                }
                return;
            }
            case OpKind::Mul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                n.value = a;
                for (size_t i = 0; i < b.numel(); ++i) n.value.v[i] *= b.v[i];
                return;
            }
            case OpKind::Affine: {
                const Tensor& a = val(n.inputs[0]);
                n.value = a;
                for (double& x : n.value.v) x = n.dattrs[0] * x + n.dattrs[1];
                return;
            }
            case OpKind::Gelu: {
                const Tensor& a = val(n.inputs[0]);
                n.value = a;
                for (double& x : n.value.v) x = gelu_fwd(x);
                return;
            }
            case OpKind::LayerNorm: {
                const Tensor& x = val(n.inputs[0]);
                const Tensor& gain = val(n.inputs[1]);
                const Tensor& bias = val(n.inputs[2]);
                const double eps = n.dattrs[0];
                const size_t rows = x.shape[0], d = x.shape[1];
                n.value = Tensor({rows, d});
                n.aux.assign(rows * d + rows, 0.0);  // normalized values + inv_std per row
                double* xhat = n.aux.data();
                double* inv_std = n.aux.data() + rows * d;
                for (size_t i = 0; i < rows; ++i) {
                    const double* row = x.v.data() + i * d;
                    double mean = 0.0;
                    for (size_t j = 0; j < d; ++j) mean += row[j];
                    mean /= static_cast<double>(d);
                    double var = 0.0;
                    for (size_t j = 0; j < d; ++j) {
                        const double c = row[j] - mean;
                        var += c * c;
                    }
                    var /= static_cast<double>(d);
                    const double is = 1.0 / std::sqrt(var + eps);
                    inv_std[i] = is;
                    double* out = n.value.v.data() + i * d;
                    double* xh = xhat + i * d;
                    for (size_t j = 0; j < d; ++j) {
                        xh[j] = (row[j] - mean) * is;
                        out[j] = gain.v[j] * xh[j] + bias.v[j];
                    }
                }
                return;
            }
            case OpKind::CausalSoftmax: {
                const Tensor& x = val(n.inputs[0]);
                const size_t t = x.shape[0];
                n.value = Tensor({t, t});
                for (size_t i = 0; i < t; ++i) {
                    const double* row = x.v.data() + i * t;
                    double* out = n.value.v.data() + i * t;
                    softmax_row(row, out, i + 1);
                    for (size_t j = i + 1; j < t; ++j) out[j] = 0.0;
                }
                return;
            }
            case OpKind::GatherRows: {
                const Tensor& table = val(n.inputs[0]);
                const size_t d = table.shape[1];
                const size_t rows = n.iattrs.size();
                n.value = Tensor({rows, d});
                for (size_t r = 0; r < rows; ++r) {
                    const int64_t id = n.iattrs[r];
                    if (id < 0) continue;
                    std::copy_n(table.v.data() + static_cast<size_t>(id) * d, d,
                                n.value.v.data() + r * d);
                }
                return;
            }
            case OpKind::ScatterRows: {
                const Tensor& src = val(n.inputs[0]);
                const size_t d = src.shape[1];
                const size_t out_rows = static_cast<size_t>(n.iattrs[0]);
                n.value = Tensor({out_rows, d});
                for (size_t r = 0; r < src.shape[0]; ++r) {
                    const size_t pos = static_cast<size_t>(n.iattrs[1 + r]);
                    std::copy_n(src.v.data() + r * d, d, n.value.v.data() + pos * d);
                }
                return;
            }
            case OpKind::VStack: {
                size_t rows = 0;
                const size_t d = val(n.inputs[0]).shape[1];
                for (int in : n.inputs) rows += val(in).shape[0];
                n.value = Tensor({rows, d});
                size_t at = 0;
                for (int in : n.inputs) {
                    const Tensor& part = val(in);
                    std::copy(part.v.begin(), part.v.end(), n.value.v.begin() + at);
                    at += part.numel();
                }
                return;
            }
            case OpKind::HStack: {
                const size_t rows = val(n.inputs[0]).shape[0];
                size_t cols = 0;
                for (int in : n.inputs) cols += val(in).shape[1];
                n.value = Tensor({rows, cols});
                size_t c0 = 0;
                for (int in : n.inputs) {
                    const Tensor& part = val(in);
                    const size_t pc = part.shape[1];
                    for (size_t i = 0; i < rows; ++i) {
                        std::copy_n(part.v.data() + i * pc, pc, n.value.v.data() + i * cols + c0);
                    }
                    c0 += pc;
                }
                return;
            }
            case OpKind::SliceRows: {
                const Tensor& x = val(n.inputs[0]);
                if (n.iattrs[0] < 0) {  // flattened-row view (see reshape_row)
                    n.value = Tensor({1, x.numel()}, x.v);
                    return;
                }
                const size_t r0 = static_cast<size_t>(n.iattrs[0]);
                const size_t r1 = static_cast<size_t>(n.iattrs[1]);
                const size_t d = x.shape[1];
                n.value = Tensor({r1 - r0, d});
                std::copy_n(x.v.data() + r0 * d, (r1 - r0) * d, n.value.v.data());
                return;
            }
            case OpKind::SliceCols: {
                const Tensor& x = val(n.inputs[0]);
                const size_t c0 = static_cast<size_t>(n.iattrs[0]);
                const size_t c1 = static_cast<size_t>(n.iattrs[1]);
                const size_t rows = x.shape[0], cols = x.shape[1];
                n.value = Tensor({rows, c1 - c0});
                for (size_t i = 0; i < rows; ++i) {
                    std::copy_n(x.v.data() + i * cols + c0, c1 - c0,
                                n.value.v.data() + i * (c1 - c0));
                }
                return;
            }
            case OpKind::Mse: {
                n.value = Tensor::scalar(mse_value(val(n.inputs[0]), val(n.inputs[1])));
                return;
            }
            case OpKind::CosineSim: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                double dot = 0.0, na2 = 0.0, nb2 = 0.0;
                for (size_t i = 0; i < a.numel(); ++i) {
                    dot += a.v[i] * b.v[i];
                    na2 += a.v[i] * a.v[i];
                    nb2 += b.v[i] * b.v[i];
                }
                const double na = std::max(std::sqrt(na2), kCosineEps);
                const double nb = std::max(std::sqrt(nb2), kCosineEps);
                n.aux = {na, nb, std::sqrt(na2), std::sqrt(nb2)};
                n.value = Tensor::scalar(dot / (na * nb));
                return;
            }
            case OpKind::SoftmaxXentSum: {
                const Tensor& logits = val(n.inputs[0]);
                const size_t rows = logits.shape[0], vocab = logits.shape[1];
                n.aux.assign(rows * vocab, 0.0);
                double total = 0.0;
                for (size_t r = 0; r < rows; ++r) {
                    const double* row = logits.v.data() + r * vocab;
                    double* probs = n.aux.data() + r * vocab;
                    softmax_row(row, probs, vocab);
                    total += log_sum_exp(row, vocab) - row[n.iattrs[r]];
                }
                n.value = Tensor::scalar(total);
                return;
            }
            case OpKind::Sum: {
                double total = 0.0;
                for (double x : val(n.inputs[0]).v) total += x;
                n.value = Tensor::scalar(total);
                return;
            }
        }
    }

    Tensor& g(int id) { return nodes_[id].grad; }
    bool has_grad(int id) const { return nodes_[id].grad_alloc; }

    void backward_node(Node& n) {
        const Tensor& gout = n.grad;
        switch (n.kind) {
            case OpKind::Param:
            case OpKind::Const:
                return;
            case OpKind::MatMul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                const size_t m = a.shape[0], k = a.shape[1], cols = b.shape[1];
                if (has_grad(n.inputs[0])) {
                    std::vector<double> tmp(m * k);
                    mm_nt(gout.v.data(), b.v.data(), tmp.data(), m, cols, k);
                    axpy(g(n.inputs[0]).v, tmp);
                }
                if (has_grad(n.inputs[1])) {
                    std::vector<double> tmp(k * cols);
                    mm_tn(a.v.data(), gout.v.data(), tmp.data(), m, k, cols);
                    axpy(g(n.inputs[1]).v, tmp);
                }
                return;
            }
            case OpKind::MatMulNT: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                const size_t m = a.shape[0], k = a.shape[1], rows_b = b.shape[0];
                if (has_grad(n.inputs[0])) {
                    std::vector<double> tmp(m * k);
                    mm_nn(gout.v.data(), b.v.data(), tmp.data(), m, rows_b, k);
                    axpy(g(n.inputs[0]).v, tmp);
                }
                if (has_grad(n.inputs[1])) {
                    std::vector<double> tmp(rows_b * k);
                    mm_tn(gout.v.data(), a.v.data(), tmp.data(), m, rows_b, k);
                    axpy(g(n.inputs[1]).v, tmp);
                }
                return;
            }
            case OpKind::Add: {
                for (int side = 0; side < 2; ++side) {
                    if (has_grad(n.inputs[side])) axpy(g(n.inputs[side]).v, gout.v);
                }
                return;
            }
            case OpKind::AddRowVec: {
                if (has_grad(n.inputs[0])) axpy(g(n.inputs[0]).v, gout.v);
                if (has_grad(n.inputs[1])) {
                    const size_t rows = gout.shape[0], cols = gout.shape[1];
                    Tensor& gb = g(n.inputs[1]);
                    for (size_t i = 0; i < rows; ++i) {
                        const double* grow = gout.v.data() + i * cols;
                        for (size_t j = 0; j < cols; ++j) gb.v[j] += grow[j];
                    }
                }
                return;
            }
            case OpKind::Mul: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                if (has_grad(n.inputs[0])) {
                    Tensor& ga = g(n.inputs[0]);
                    for (size_t i = 0; i < a.numel(); ++i) ga.v[i] += gout.v[i] * b.v[i];
                }
                if (has_grad(n.inputs[1])) {
                    Tensor& gb = g(n.inputs[1]);
                    for (size_t i = 0; i < a.numel(); ++i) gb.v[i] += gout.v[i] * a.v[i];
                }
                return;
            }
            case OpKind::Affine: {
                if (has_grad(n.inputs[0])) {
                    Tensor& ga = g(n.inputs[0]);
                    for (size_t i = 0; i < gout.numel(); ++i) ga.v[i] += n.dattrs[0] * gout.v[i];
                }
                return;
            }
            case OpKind::Gelu: {
                if (has_grad(n.inputs[0])) {
                    const Tensor& x = val(n.inputs[0]);
                    Tensor& ga = g(n.inputs[0]);
                    for (size_t i = 0; i < x.numel(); ++i) {
                        ga.v[i] += grad_fault_ * gout.v[i] * gelu_grad(x.v[i]);
                    }
                }
                return;
            }
            case OpKind::LayerNorm: {
                const Tensor& x = val(n.inputs[0]);
                const Tensor& gain = val(n.inputs[1]);
                const size_t rows = x.shape[0], d = x.shape[1];
                const double* xhat = n.aux.data();
                const double* inv_std = n.aux.data() + rows * d;
                if (has_grad(n.inputs[1])) {
                    Tensor& gg = g(n.inputs[1]);
                    for (size_t i = 0; i < rows; ++i) {
                        for (size_t j = 0; j < d; ++j) {
                            gg.v[j] += gout.v[i * d + j] * xhat[i * d + j];
                        }
                    }
                }
                if (has_grad(n.inputs[2])) {
                    Tensor& gb = g(n.inputs[2]);
                    for (size_t i = 0; i < rows; ++i) {
                        for (size_t j = 0; j < d; ++j) gb.v[j] += gout.v[i * d + j];
                    }
                }
                if (has_grad(n.inputs[0])) {
                    Tensor& gx = g(n.inputs[0]);
                    std::vector<double> a(d);
                    for (size_t i = 0; i < rows; ++i) {
                        double m1 = 0.0, m2 = 0.0;
                        for (size_t j = 0; j < d; ++j) {
                            a[j] = gout.v[i * d + j] * gain.v[j];
                            m1 += a[j];
                            m2 += a[j] * xhat[i * d + j];
                        }
                        m1 /= static_cast<double>(d);
                        m2 /= static_cast<double>(d);
                        for (size_t j = 0; j < d; ++j) {
                            gx.v[i * d + j] += inv_std[i] * (a[j] - m1 - xhat[i * d + j] * m2);
                        }
                    }
                }
                return;
            }
            case OpKind::CausalSoftmax: {
                if (!has_grad(n.inputs[0])) return;
                const size_t t = n.value.shape[0];
                Tensor& gx = g(n.inputs[0]);
                for (size_t i = 0; i < t; ++i) {
                    const double* p = n.value.v.data() + i * t;
                    const double* go = gout.v.data() + i * t;
                    double dot = 0.0;
                    for (size_t j = 0; j <= i; ++j) dot += go[j] * p[j];
                    double* gxr = gx.v.data() + i * t;
                    for (size_t j = 0; j <= i; ++j) gxr[j] += p[j] * (go[j] - dot);
                }
                return;
            }
            case OpKind::GatherRows: {
                if (!has_grad(n.inputs[0])) return;
                Tensor& gt = g(n.inputs[0]);
                const size_t d = gt.shape[1];
                for (size_t r = 0; r < n.iattrs.size(); ++r) {
                    const int64_t id = n.iattrs[r];
                    if (id < 0) continue;
                    const double* grow = gout.v.data() + r * d;
                    double* trow = gt.v.data() + static_cast<size_t>(id) * d;
                    for (size_t j = 0; j < d; ++j) trow[j] += grow[j];
                }
                return;
            }
            case OpKind::ScatterRows: {
                if (!has_grad(n.inputs[0])) return;
                Tensor& gs = g(n.inputs[0]);
                const size_t d = gs.shape[1];
                for (size_t r = 0; r < gs.shape[0]; ++r) {
                    const size_t pos = static_cast<size_t>(n.iattrs[1 + r]);
                    const double* grow = gout.v.data() + pos * d;
                    double* srow = gs.v.data() + r * d;
                    for (size_t j = 0; j < d; ++j) srow[j] += grow[j];
                }
                return;
            }
            case OpKind::VStack: {
                size_t at = 0;
                for (int in : n.inputs) {
                    const size_t count = val(in).numel();
                    if (has_grad(in)) {
                        Tensor& gi = g(in);
                        for (size_t i = 0; i < count; ++i) gi.v[i] += gout.v[at + i];
                    }
                    at += count;
                }
                return;
            }
            case OpKind::HStack: {
                const size_t rows = n.value.shape[0], cols = n.value.shape[1];
                size_t c0 = 0;
                for (int in : n.inputs) {
                    const size_t pc = val(in).shape[1];
                    if (has_grad(in)) {
                        Tensor& gi = g(in);
                        for (size_t i = 0; i < rows; ++i) {
                            for (size_t j = 0; j < pc; ++j) {
                                gi.v[i * pc + j] += gout.v[i * cols + c0 + j];
                            }
                        }
                    }
                    c0 += pc;
                }
                return;
            }
            case OpKind::SliceRows: {
                if (!has_grad(n.inputs[0])) return;
                Tensor& gx = g(n.inputs[0]);
                if (n.iattrs[0] < 0) {  // flattened-row view
                    for (size_t i = 0; i < gout.numel(); ++i) gx.v[i] += gout.v[i];
                    return;
                }
                const size_t r0 = static_cast<size_t>(n.iattrs[0]);
                const size_t d = gx.shape[1];
                for (size_t i = 0; i < gout.numel(); ++i) gx.v[r0 * d + i] += gout.v[i];
                return;
            }
            case OpKind::SliceCols: {
                if (!has_grad(n.inputs[0])) return;
                Tensor& gx = g(n.inputs[0]);
                const size_t c0 = static_cast<size_t>(n.iattrs[0]);
                const size_t rows = n.value.shape[0], w = n.value.shape[1], cols = gx.shape[1];
                for (size_t i = 0; i < rows; ++i) {
                    for (size_t j = 0; j < w; ++j) {
                        gx.v[i * cols + c0 + j] += gout.v[i * w + j];
                    }
                }
                return;
            }
            case OpKind::Mse: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                const double go = gout.v[0];
                const double scale = 2.0 / static_cast<double>(a.numel());
                if (has_grad(n.inputs[0])) {
                    Tensor& ga = g(n.inputs[0]);
                    for (size_t i = 0; i < a.numel(); ++i) {
                        ga.v[i] += go * scale * (a.v[i] - b.v[i]);
                    }
                }
                if (has_grad(n.inputs[1])) {
                    Tensor& gb = g(n.inputs[1]);
                    for (size_t i = 0; i < a.numel(); ++i) {
                        gb.v[i] -= go * scale * (a.v[i] - b.v[i]);
                    }
                }
                return;
            }
            case OpKind::CosineSim: {
                const Tensor& a = val(n.inputs[0]);
                const Tensor& b = val(n.inputs[1]);
                const double go = gout.v[0];
                const double na = n.aux[0], nb = n.aux[1];       // guarded
                const double ra = n.aux[2], rb = n.aux[3];       // raw norms
                const double c = n.value.v[0];
                if (has_grad(n.inputs[0])) {
                    Tensor& ga = g(n.inputs[0]);
                    for (size_t i = 0; i < a.numel(); ++i) {
                        double d = b.v[i] / (na * nb);
                        if (ra > kCosineEps) d -= c * a.v[i] / (na * na);
                        ga.v[i] += go * d;
                    }
                }
                if (has_grad(n.inputs[1])) {
                    Tensor& gb = g(n.inputs[1]);
                    for (size_t i = 0; i < b.numel(); ++i) {
                        double d = a.v[i] / (na * nb);
                        if (rb > kCosineEps) d -= c * b.v[i] / (nb * nb);
                        gb.v[i] += go * d;
                    }
                }
                return;
            }
            case OpKind::SoftmaxXentSum: {
                if (!has_grad(n.inputs[0])) return;
                const double go = gout.v[0];
                Tensor& gl = g(n.inputs[0]);
                const size_t rows = gl.shape[0], vocab = gl.shape[1];
                for (size_t r = 0; r < rows; ++r) {
                    const double* probs = n.aux.data() + r * vocab;
                    double* grow = gl.v.data() + r * vocab;
                    for (size_t j = 0; j < vocab; ++j) grow[j] += go * probs[j];
                    grow[n.iattrs[r]] -= go;
                }
                return;
            }
            case OpKind::Sum: {
                if (!has_grad(n.inputs[0])) return;
                Tensor& ga = g(n.inputs[0]);
                const double go = gout.v[0];
                for (double& x : ga.v) x += go;
                return;
            }
        }
    }

    static void axpy(std::vector<double>& dst, const std::vector<double>& src) {
        for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
    }
};

}  // namespace planaudio
