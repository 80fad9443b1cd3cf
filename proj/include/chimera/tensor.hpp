// Dense double-precision tensors and a reverse-mode tape.
//
// The operation catalog is fixed: matmul, add, sub, mul (elementwise),
// smul (by constant), relu, exp, log, softmax/log-softmax over rows,
// l2-normalize over rows, mean/sum reductions, square, concat-rows and
// select-rows. Everything the training objectives need is assembled from
// these. Tape values are canonicalized to 2-D (row-major); vectors are
// 1 x d rows, scalars 1 x 1.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace chimera {

struct TensorError : std::runtime_error {
    explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // filled by Tape::backward for leaves

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v, bool rg = false)
        : shape(std::move(s)), values(std::move(v)), requires_grad(rg) {
        if (numel() != values.size())
            throw TensorError("Tensor: shape/value size mismatch");
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t e : shape) n *= e;
        return n;
    }
    std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
    std::size_t cols() const {
        if (shape.empty()) return 1;
        return shape.size() == 2 ? shape[1] : shape[0];
    }
    double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    bool is_scalar() const { return numel() == 1; }
    double item() const {
        if (!is_scalar()) throw TensorError("Tensor::item: tensor is not scalar");
        return values[0];
    }
};

inline Tensor make_matrix(std::size_t r, std::size_t c, std::vector<double> v, bool rg = false) {
    return Tensor({r, c}, std::move(v), rg);
}
inline Tensor make_row(std::vector<double> v, bool rg = false) {
    const std::size_t d = v.size();
    return Tensor({1, d}, std::move(v), rg);
}
inline Tensor make_scalar(double x, bool rg = false) { return Tensor({1, 1}, {x}, rg); }
inline Tensor zeros(std::size_t r, std::size_t c, bool rg = false) {
    return Tensor({r, c}, std::vector<double>(r * c, 0.0), rg);
}

inline std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape[i]);
    }
    return s + "]";
}

// ---------------------------------------------------------------------------
// Plain kernels, shared by the tape and by no-grad evaluation paths.
// ---------------------------------------------------------------------------

// C(m x n) = A(m x k) * B(k x n), or A * B^T when trans_b (B is n x k).
inline void matmul_kernel(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n, bool trans_b) {
    std::fill(c, c + m * n, 0.0);
    if (!trans_b) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                if (av == 0.0) continue;
                const double* brow = b + kk * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const double* brow = b + j * k;
                double acc = 0.0;
                for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
                crow[j] = acc;
            }
        }
    }
}

inline void softmax_row_kernel(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = std::exp(x[i] - mx);
        z += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= z;
}

inline void log_softmax_row_kernel(const double* x, double* y, std::size_t n) {
    double mx = x[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(x[i] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] - lse;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

enum class Op {
    leaf,
    matmul,
    add,
    sub,
    mul,
    smul,
    relu,
    exp_op,
    log_op,
    softmax_rows,
    log_softmax_rows,
    l2_normalize_rows,
    mean,
    sum,
    square,
    concat_rows,
    select_rows,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::matmul: return "matmul";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "elementwise-mul";
        case Op::smul: return "scalar-mul";
        case Op::relu: return "relu";
        case Op::exp_op: return "exp";
        case Op::log_op: return "log";
        case Op::softmax_rows: return "softmax-rows";
        case Op::log_softmax_rows: return "log-softmax-rows";
        case Op::l2_normalize_rows: return "l2-normalize-rows";
        case Op::mean: return "mean";
        case Op::sum: return "sum";
        case Op::square: return "square";
        case Op::concat_rows: return "concat-rows";
        case Op::select_rows: return "select-rows";
    }
    return "?";
}

// Reduction axis: All collapses to a scalar, Rows collapses the row
// dimension (result 1 x c), Cols collapses each row (result r x 1).
enum class Axis { All = -1, Rows = 0, Cols = 1 };

struct Val {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Val input(const Tensor& t) { return push_leaf(t, t.requires_grad); }
    Val constant(const Tensor& t) { return push_leaf(t, false); }
    Val constant_scalar(double x) { return push_leaf(make_scalar(x), false); }

    Val matmul(Val a, Val b, bool trans_b = false) {
        const Node& na = node(a);
        const Node& nb = node(b);
        const std::size_t m = na.r, k = na.c;
        const std::size_t bk = trans_b ? nb.c : nb.r;
        const std::size_t n = trans_b ? nb.r : nb.c;
        if (k != bk)
            throw TensorError(std::string("matmul: inner dimensions differ: ") + dims(a) +
                              " vs " + dims(b) + (trans_b ? " (trans_b)" : ""));
        Node out = make_node(Op::matmul, m, n, a, b);
        out.trans_b = trans_b;
        matmul_kernel(na.value.data(), nb.value.data(), out.value.data(), m, k, n, trans_b);
        return push(std::move(out));
    }

    Val add(Val a, Val b) { return add_sub(a, b, /*sub=*/false); }
    Val sub(Val a, Val b) { return add_sub(a, b, /*sub=*/true); }

    Val mul(Val a, Val b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        if (na.r != nb.r || na.c != nb.c)
            throw TensorError(std::string("elementwise-mul: shape mismatch: ") + dims(a) + " vs " + dims(b));
        Node out = make_node(Op::mul, na.r, na.c, a, b);
        for (std::size_t i = 0; i < out.value.size(); ++i)
            out.value[i] = na.value[i] * nb.value[i];
        return push(std::move(out));
    }

    Val smul(Val a, double s) {
        const Node& na = node(a);
        Node out = make_node(Op::smul, na.r, na.c, a);
        out.scalar = s;
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = s * na.value[i];
        return push(std::move(out));
    }

    Val relu(Val a) {
        const Node& na = node(a);
        Node out = make_node(Op::relu, na.r, na.c, a);
        for (std::size_t i = 0; i < out.value.size(); ++i)
            out.value[i] = na.value[i] > 0.0 ? na.value[i] : 0.0;
        return push(std::move(out));
    }

    Val exp(Val a) {
        const Node& na = node(a);
        Node out = make_node(Op::exp_op, na.r, na.c, a);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = std::exp(na.value[i]);
        return push(std::move(out));
    }

    Val log(Val a) {
        const Node& na = node(a);
        for (double v : na.value)
            if (!(v > 0.0))
                throw TensorError("log: non-positive input " + std::to_string(v));
        Node out = make_node(Op::log_op, na.r, na.c, a);
        for (std::size_t i = 0; i < out.value.size(); ++i) out.value[i] = std::log(na.value[i]);
        return push(std::move(out));
    }

    Val softmax_rows(Val a) {
        const Node& na = node(a);
        Node out = make_node(Op::softmax_rows, na.r, na.c, a);
        for (std::size_t i = 0; i < na.r; ++i)
            softmax_row_kernel(na.value.data() + i * na.c, out.value.data() + i * na.c, na.c);
        return push(std::move(out));
    }

    Val log_softmax_rows(Val a) {
        const Node& na = node(a);
        Node out = make_node(Op::log_softmax_rows, na.r, na.c, a);
        for (std::size_t i = 0; i < na.r; ++i)
            log_softmax_row_kernel(na.value.data() + i * na.c, out.value.data() + i * na.c, na.c);
        return push(std::move(out));
    }

    Val l2_normalize_rows(Val a) {
        const Node& na = node(a);
        Node out = make_node(Op::l2_normalize_rows, na.r, na.c, a);
        for (std::size_t i = 0; i < na.r; ++i) {
            const double* x = na.value.data() + i * na.c;
            double n2 = 0.0;
            for (std::size_t j = 0; j < na.c; ++j) n2 += x[j] * x[j];
            const double norm = std::sqrt(n2);
            if (norm < 1e-8)
                throw TensorError("l2-normalize-rows: row " + std::to_string(i) +
                                  " has norm " + std::to_string(norm) + " below 1e-8");
            for (std::size_t j = 0; j < na.c; ++j) out.value[i * na.c + j] = x[j] / norm;
        }
        return push(std::move(out));
    }

    Val mean(Val a, Axis axis = Axis::All) { return reduce(a, axis, /*is_mean=*/true); }
    Val sum(Val a, Axis axis = Axis::All) { return reduce(a, axis, /*is_mean=*/false); }

    Val square(Val a) {
        const Node& na = node(a);
        Node out = make_node(Op::square, na.r, na.c, a);
        for (std::size_t i = 0; i < out.value.size(); ++i)
            out.value[i] = na.value[i] * na.value[i];
        return push(std::move(out));
    }

    Val concat_rows(Val a, Val b) {
        const Node& na = node(a);
        const Node& nb = node(b);
        if (na.c != nb.c)
            throw TensorError(std::string("concat-rows: column mismatch: ") + dims(a) + " vs " + dims(b));
        Node out = make_node(Op::concat_rows, na.r + nb.r, na.c, a, b);
        std::copy(na.value.begin(), na.value.end(), out.value.begin());
        std::copy(nb.value.begin(), nb.value.end(), out.value.begin() + static_cast<long>(na.value.size()));
        return push(std::move(out));
    }

    Val select_rows(Val a, std::vector<int> rows) {
        const Node& na = node(a);
        for (int r : rows)
            if (r < 0 || static_cast<std::size_t>(r) >= na.r)
                throw TensorError("select-rows: index " + std::to_string(r) + " out of range for " + dims(a));
        Node out = make_node(Op::select_rows, rows.size(), na.c, a);
        for (std::size_t i = 0; i < rows.size(); ++i)
            std::copy(na.value.begin() + static_cast<long>(rows[i]) * static_cast<long>(na.c),
                      na.value.begin() + (static_cast<long>(rows[i]) + 1) * static_cast<long>(na.c),
                      out.value.begin() + static_cast<long>(i * na.c));
        out.rows_sel = std::move(rows);
        return push(std::move(out));
    }

    void backward(Val output) {
        Node& out = node(output);
        if (out.r != 1 || out.c != 1)
            throw TensorError("backward: output must be scalar, got " + dims(output));
        if (!out.requires_grad)
            throw TensorError("backward: output is detached from all gradients");
        if (backward_done_)
            throw TensorError("backward: repeated call without reset");
        backward_done_ = true;

        for (Node& n : nodes_)
            if (n.requires_grad) n.grad.assign(n.value.size(), 0.0);
        out.grad[0] = 1.0;

        for (int id = output.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.requires_grad || n.op == Op::leaf) continue;
            backward_node(n);
        }
    }

    void clear_grads() {
        for (Node& n : nodes_) n.grad.clear();
        backward_done_ = false;
    }

    Tensor value(Val v) const {
        const Node& n = node(v);
        return Tensor({n.r, n.c}, n.value);
    }
    double scalar_value(Val v) const {
        const Node& n = node(v);
        if (n.r != 1 || n.c != 1) throw TensorError("scalar_value: not a scalar");
        return n.value[0];
    }
    const std::vector<double>& raw_value(Val v) const { return node(v).value; }
    std::size_t rows(Val v) const { return node(v).r; }
    std::size_t cols(Val v) const { return node(v).c; }

    const std::vector<double>& grad(Val v) const {
        const Node& n = node(v);
        if (n.grad.empty())
            throw TensorError("grad: no gradient recorded (run backward, and check requires_grad)");
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Op op = Op::leaf;
        int a = -1, b = -1;
        double scalar = 0.0;
        bool trans_b = false;
        Axis axis = Axis::All;
        std::vector<int> rows_sel;
        std::size_t r = 0, c = 0;
        std::vector<double> value;
        std::vector<double> grad;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    Node& node(Val v) {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw TensorError("invalid tape value handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }
    const Node& node(Val v) const {
        if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw TensorError("invalid tape value handle");
        return nodes_[static_cast<std::size_t>(v.id)];
    }

    std::string dims(Val v) const {
        const Node& n = node(v);
        return "[" + std::to_string(n.r) + "x" + std::to_string(n.c) + "]";
    }

    Val push(Node n) {
        nodes_.push_back(std::move(n));
        return Val{static_cast<int>(nodes_.size()) - 1};
    }

    Val push_leaf(const Tensor& t, bool rg) {
        if (t.shape.size() > 2)
            throw TensorError("tape values must be rank <= 2, got " + shape_str(t));
        Node n;
        n.op = Op::leaf;
        n.r = t.rows();
        n.c = t.cols();
        n.value = t.values;
        n.requires_grad = rg;
        return push(std::move(n));
    }

    Node make_node(Op op, std::size_t r, std::size_t c, Val a, Val b = Val{}) {
        Node n;
        n.op = op;
        n.a = a.id;
        n.b = b.id;
        n.r = r;
        n.c = c;
        n.value.assign(r * c, 0.0);
        n.requires_grad = node(a).requires_grad || (b.valid() && node(b).requires_grad);
        return n;
    }

    Val add_sub(Val a, Val b, bool sub) {
        const Node& na = node(a);
        const Node& nb = node(b);
        const bool same = na.r == nb.r && na.c == nb.c;
        const bool bcast = nb.r == 1 && nb.c == na.c;  // row( bias ) broadcast
        if (!same && !bcast)
            throw TensorError(std::string(sub ? "sub" : "add") + ": shape mismatch: " + dims(a) +
                              " vs " + dims(b));
        Node out = make_node(sub ? Op::sub : Op::add, na.r, na.c, a, b);
        const double sgn = sub ? -1.0 : 1.0;
        for (std::size_t i = 0; i < na.r; ++i)
            for (std::size_t j = 0; j < na.c; ++j)
                out.value[i * na.c + j] =
                    na.value[i * na.c + j] + sgn * nb.value[(same ? i : 0) * na.c + j];
        return push(std::move(out));
    }

    Val reduce(Val a, Axis axis, bool is_mean) {
        const Node& na = node(a);
        std::size_t r = 1, c = 1;
        if (axis == Axis::Rows) c = na.c;
        if (axis == Axis::Cols) r = na.r;
        Node out = make_node(is_mean ? Op::mean : Op::sum, r, c, a);
        out.axis = axis;
        for (std::size_t i = 0; i < na.r; ++i)
            for (std::size_t j = 0; j < na.c; ++j) {
                const double v = na.value[i * na.c + j];
                if (axis == Axis::All) out.value[0] += v;
                else if (axis == Axis::Rows) out.value[j] += v;
                else out.value[i] += v;
            }
        if (is_mean) {
            const double denom = axis == Axis::All ? static_cast<double>(na.r * na.c)
                               : axis == Axis::Rows ? static_cast<double>(na.r)
                                                    : static_cast<double>(na.c);
            for (double& v : out.value) v /= denom;
        }
        return push(std::move(out));
    }

    void accumulate(int id, const std::vector<double>& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    void backward_node(Node& n) {
        Node& A = nodes_[static_cast<std::size_t>(n.a)];
        const std::vector<double>& gy = n.grad;
        switch (n.op) {
            case Op::matmul: {
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                const std::size_t m = A.r, k = A.c, nn = n.c;
                if (A.requires_grad) {
                    // dA = gy * B^T, or gy * B when trans_b
                    std::vector<double> ga(m * k);
                    matmul_kernel(gy.data(), B.value.data(), ga.data(), m, nn, k, !n.trans_b);
                    accumulate(n.a, ga);
                }
                if (B.requires_grad) {
                    std::vector<double> gb(B.value.size());
                    if (!n.trans_b) {
                        // dB = A^T * gy  (k x m * m x n)
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t kk = 0; kk < k; ++kk) {
                                const double av = A.value[i * k + kk];
                                if (av == 0.0) continue;
                                for (std::size_t j = 0; j < nn; ++j)
                                    gb[kk * nn + j] += av * gy[i * nn + j];
                            }
                    } else {
                        // C = A * B^T: dB = gy^T * A  (n x m * m x k)
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t j = 0; j < nn; ++j) {
                                const double gv = gy[i * nn + j];
                                if (gv == 0.0) continue;
                                for (std::size_t kk = 0; kk < k; ++kk)
                                    gb[j * k + kk] += gv * A.value[i * k + kk];
                            }
                    }
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::add:
            case Op::sub: {
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                const double sgn = n.op == Op::sub ? -1.0 : 1.0;
                if (A.requires_grad) accumulate(n.a, gy);
                if (B.requires_grad) {
                    if (B.r == n.r) {
                        std::vector<double> gb(gy.size());
                        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] = sgn * gy[i];
                        accumulate(n.b, gb);
                    } else {
                        std::vector<double> gb(n.c, 0.0);
                        for (std::size_t i = 0; i < n.r; ++i)
                            for (std::size_t j = 0; j < n.c; ++j) gb[j] += sgn * gy[i * n.c + j];
                        accumulate(n.b, gb);
                    }
                }
                break;
            }
            case Op::mul: {
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                if (A.requires_grad) {
                    std::vector<double> ga(gy.size());
                    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] = gy[i] * B.value[i];
                    accumulate(n.a, ga);
                }
                if (B.requires_grad) {
                    std::vector<double> gb(gy.size());
                    for (std::size_t i = 0; i < gy.size(); ++i) gb[i] = gy[i] * A.value[i];
                    accumulate(n.b, gb);
                }
                break;
            }
            case Op::smul: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] = n.scalar * gy[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::relu: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < gy.size(); ++i)
                    ga[i] = A.value[i] > 0.0 ? gy[i] : 0.0;
                accumulate(n.a, ga);
                break;
            }
            case Op::exp_op: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] = gy[i] * n.value[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::log_op: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] = gy[i] / A.value[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::softmax_rows: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < n.r; ++i) {
                    const double* y = n.value.data() + i * n.c;
                    const double* g = gy.data() + i * n.c;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n.c; ++j) dot += g[j] * y[j];
                    for (std::size_t j = 0; j < n.c; ++j) ga[i * n.c + j] = y[j] * (g[j] - dot);
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::log_softmax_rows: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < n.r; ++i) {
                    const double* y = n.value.data() + i * n.c;
                    const double* g = gy.data() + i * n.c;
                    double gsum = 0.0;
                    for (std::size_t j = 0; j < n.c; ++j) gsum += g[j];
                    for (std::size_t j = 0; j < n.c; ++j)
                        ga[i * n.c + j] = g[j] - std::exp(y[j]) * gsum;
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::l2_normalize_rows: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < n.r; ++i) {
                    const double* x = A.value.data() + i * n.c;
                    const double* y = n.value.data() + i * n.c;
                    const double* g = gy.data() + i * n.c;
                    double n2 = 0.0;
                    for (std::size_t j = 0; j < n.c; ++j) n2 += x[j] * x[j];
                    const double norm = std::sqrt(n2);
                    double dot = 0.0;
                    for (std::size_t j = 0; j < n.c; ++j) dot += g[j] * y[j];
                    for (std::size_t j = 0; j < n.c; ++j)
                        ga[i * n.c + j] = (g[j] - y[j] * dot) / norm;
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::mean:
            case Op::sum: {
                if (!A.requires_grad) break;
                const bool is_mean = n.op == Op::mean;
                const double denom = !is_mean ? 1.0
                                   : n.axis == Axis::All ? static_cast<double>(A.r * A.c)
                                   : n.axis == Axis::Rows ? static_cast<double>(A.r)
                                                          : static_cast<double>(A.c);
                std::vector<double> ga(A.value.size());
                for (std::size_t i = 0; i < A.r; ++i)
                    for (std::size_t j = 0; j < A.c; ++j) {
                        const double g = n.axis == Axis::All ? gy[0]
                                       : n.axis == Axis::Rows ? gy[j]
                                                              : gy[i];
                        ga[i * A.c + j] = g / denom;
                    }
                accumulate(n.a, ga);
                break;
            }
            case Op::square: {
                if (!A.requires_grad) break;
                std::vector<double> ga(gy.size());
                for (std::size_t i = 0; i < gy.size(); ++i) ga[i] = 2.0 * A.value[i] * gy[i];
                accumulate(n.a, ga);
                break;
            }
            case Op::concat_rows: {
                Node& B = nodes_[static_cast<std::size_t>(n.b)];
                if (A.requires_grad)
                    accumulate(n.a, std::vector<double>(gy.begin(),
                                                        gy.begin() + static_cast<long>(A.value.size())));
                if (B.requires_grad)
                    accumulate(n.b, std::vector<double>(gy.begin() + static_cast<long>(A.value.size()),
                                                        gy.end()));
                break;
            }
            case Op::select_rows: {
                if (!A.requires_grad) break;
                std::vector<double> ga(A.value.size(), 0.0);
                for (std::size_t i = 0; i < n.rows_sel.size(); ++i) {
                    const std::size_t src = static_cast<std::size_t>(n.rows_sel[i]);
                    for (std::size_t j = 0; j < n.c; ++j)
                        ga[src * n.c + j] += gy[i * n.c + j];
                }
                accumulate(n.a, ga);
                break;
            }
            case Op::leaf:
                break;
        }
    }
};

// Attributes for the generic dispatcher; only the field the op consumes
// is read.
struct OpAttrs {
    double scalar = 1.0;
    bool trans_b = false;
    Axis axis = Axis::All;
    std::vector<int> rows;
};

inline Val forward_op(Tape& tape, Op kind, const std::vector<Val>& in, const OpAttrs& attrs = {}) {
    auto need = [&](std::size_t n) {
        if (in.size() != n)
            throw TensorError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                              " inputs, got " + std::to_string(in.size()));
    };
    switch (kind) {
        case Op::matmul: need(2); return tape.matmul(in[0], in[1], attrs.trans_b);
        case Op::add: need(2); return tape.add(in[0], in[1]);
        case Op::sub: need(2); return tape.sub(in[0], in[1]);
        case Op::mul: need(2); return tape.mul(in[0], in[1]);
        case Op::smul: need(1); return tape.smul(in[0], attrs.scalar);
        case Op::relu: need(1); return tape.relu(in[0]);
        case Op::exp_op: need(1); return tape.exp(in[0]);
        case Op::log_op: need(1); return tape.log(in[0]);
        case Op::softmax_rows: need(1); return tape.softmax_rows(in[0]);
        case Op::log_softmax_rows: need(1); return tape.log_softmax_rows(in[0]);
        case Op::l2_normalize_rows: need(1); return tape.l2_normalize_rows(in[0]);
        case Op::mean: need(1); return tape.mean(in[0], attrs.axis);
        case Op::sum: need(1); return tape.sum(in[0], attrs.axis);
        case Op::square: need(1); return tape.square(in[0]);
        case Op::concat_rows: need(2); return tape.concat_rows(in[0], in[1]);
        case Op::select_rows: need(1); return tape.select_rows(in[0], attrs.rows);
        case Op::leaf: throw TensorError("forward_op: leaf is not an operation");
    }
    throw TensorError("forward_op: unknown op");
}

// max(x, floor) assembled from catalog ops; used to clamp probabilities
// before log without leaving the differentiable path.
inline Val clamp_min(Tape& tape, Val x, double floor) {
    Tensor f = make_matrix(tape.rows(x), tape.cols(x),
                           std::vector<double>(tape.rows(x) * tape.cols(x), floor));
    Val fv = tape.constant(f);
    return tape.add(tape.relu(tape.sub(x, fv)), fv);
}

}  // namespace chimera
