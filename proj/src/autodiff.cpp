#include "mftrack/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mft::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_count_macs = false;
thread_local int64_t g_mac_count = 0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool track(const std::initializer_list<Var>& ins) {
    if (!g_grad_enabled) return false;
    for (const auto& v : ins)
        if (v && v->requires_grad) return true;
    return false;
}

Var make_node(Tensor val, bool req, std::vector<Var> parents,
              std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    n->requires_grad = req;
    if (req) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(fn);
    }
    return n;
}

// Shapes padded on the left to rank 4 for the broadcast loop.
struct B4 {
    int64_t d[4];
    int64_t stride[4];
};

B4 pad4(const std::vector<int64_t>& shape) {
    B4 r{};
    int off = 4 - static_cast<int>(shape.size());
    for (int i = 0; i < 4; ++i) r.d[i] = (i < off) ? 1 : shape[static_cast<size_t>(i - off)];
    r.stride[3] = 1;
    for (int i = 2; i >= 0; --i) r.stride[i] = r.stride[i + 1] * r.d[i + 1];
    for (int i = 0; i < 4; ++i)
        if (r.d[i] == 1) r.stride[i] = 0;  // broadcast dims do not advance
    return r;
}

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("broadcast: rank mismatch " + Tensor::shape_str(a) +
                                    " vs " + Tensor::shape_str(b));
    std::vector<int64_t> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || a[i] == 1 || b[i] == 1)
            out[i] = std::max(a[i], b[i]);
        else
            throw std::invalid_argument("broadcast: incompatible shapes " +
                                        Tensor::shape_str(a) + " vs " + Tensor::shape_str(b));
    }
    return out;
}

template <class F>
Tensor broadcast_eval(const Tensor& a, const Tensor& b,
                      const std::vector<int64_t>& oshape, F f) {
    Tensor out(oshape);
    B4 ba = pad4(a.shape()), bb = pad4(b.shape()), bo = pad4(oshape);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i0 = 0; i0 < bo.d[0]; ++i0)
        for (int64_t i1 = 0; i1 < bo.d[1]; ++i1)
            for (int64_t i2 = 0; i2 < bo.d[2]; ++i2) {
                const double* ra = pa + i0 * ba.stride[0] + i1 * ba.stride[1] + i2 * ba.stride[2];
                const double* rb = pb + i0 * bb.stride[0] + i1 * bb.stride[1] + i2 * bb.stride[2];
                double* ro = po + i0 * bo.stride[0] + i1 * bo.stride[1] + i2 * bo.stride[2];
                int64_t sa = ba.stride[3], sb = bb.stride[3];
                for (int64_t i3 = 0; i3 < bo.d[3]; ++i3)
                    ro[i3] = f(ra[i3 * sa], rb[i3 * sb]);
            }
    return out;
}

// Accumulates grad_out into grad_in, summing over dims the input broadcast.
void broadcast_accum(Tensor& grad_in, const std::vector<int64_t>& in_shape,
                     const Tensor& grad_out, const Tensor& mask) {
    B4 bi = pad4(in_shape), bo = pad4(grad_out.shape());
    double* pi = grad_in.data();
    const double* po = grad_out.data();
    const double* pm = mask.empty() ? nullptr : mask.data();
    for (int64_t i0 = 0; i0 < bo.d[0]; ++i0)
        for (int64_t i1 = 0; i1 < bo.d[1]; ++i1)
            for (int64_t i2 = 0; i2 < bo.d[2]; ++i2) {
                double* ri = pi + i0 * bi.stride[0] + i1 * bi.stride[1] + i2 * bi.stride[2];
                const double* ro = po + i0 * bo.stride[0] + i1 * bo.stride[1] + i2 * bo.stride[2];
                const double* rm = pm ? pm + i0 * bo.stride[0] + i1 * bo.stride[1] + i2 * bo.stride[2] : nullptr;
                int64_t si = bi.stride[3], so = bo.stride[3];
                for (int64_t i3 = 0; i3 < bo.d[3]; ++i3) {
                    double g = ro[i3 * so];
                    if (rm) g *= rm[i3 * so];
                    ri[i3 * si] += g;
                }
            }
}

// Accumulates grad_out into grad_in where grad_out's shape broadcasts UP to
// grad_in's (reduction backward): every input slot reads the clamped slot.
void expand_accum(Tensor& grad_in, const Tensor& grad_out) {
    B4 bi = pad4(grad_in.shape()), bo = pad4(grad_out.shape());
    double* pi = grad_in.data();
    const double* po = grad_out.data();
    for (int64_t i0 = 0; i0 < bi.d[0]; ++i0)
        for (int64_t i1 = 0; i1 < bi.d[1]; ++i1)
            for (int64_t i2 = 0; i2 < bi.d[2]; ++i2) {
                double* ri = pi + i0 * bi.stride[0] + i1 * bi.stride[1] + i2 * bi.stride[2];
                const double* ro = po + i0 * bo.stride[0] + i1 * bo.stride[1] + i2 * bo.stride[2];
                int64_t si = bi.stride[3], so = bo.stride[3];
                for (int64_t i3 = 0; i3 < bi.d[3]; ++i3) ri[i3 * si] += ro[i3 * so];
            }
}

Var binary_op(const Var& a, const Var& b,
              double (*fwd)(double, double),
              // factor tensors w.r.t. a and b evaluated at forward time;
              // empty factor means "multiply grad by 1"
              Tensor fa, Tensor fb) {
    auto oshape = broadcast_shape(a->val.shape(), b->val.shape());
    Tensor out = broadcast_eval(a->val, b->val, oshape, fwd);
    bool req = track({a, b});
    Var va = a, vb = b;
    return make_node(std::move(out), req, {a, b},
                     [va, vb, fa = std::move(fa), fb = std::move(fb)](Node& n) {
                         if (va->requires_grad) {
                             va->ensure_grad();
                             broadcast_accum(va->grad, va->val.shape(), n.grad, fa);
                         }
                         if (vb->requires_grad) {
                             vb->ensure_grad();
                             broadcast_accum(vb->grad, vb->val.shape(), n.grad, fb);
                         }
                     });
}

template <class F, class G>
Var unary_op(const Var& a, F fwd, G dfn) {
    Tensor out(a->val.shape());
    const int64_t n = a->val.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = fwd(a->val[i]);
    bool req = track({a});
    Var va = a;
    // dfn(x, y) is the local derivative given input x and output y
    Tensor deriv;
    if (req) {
        deriv = Tensor(a->val.shape());
        for (int64_t i = 0; i < n; ++i) deriv[i] = dfn(a->val[i], out[i]);
    }
    return make_node(std::move(out), req, {a}, [va, deriv = std::move(deriv)](Node& nd) {
        if (!va->requires_grad) return;
        va->ensure_grad();
        const int64_t m = nd.grad.numel();
        for (int64_t i = 0; i < m; ++i) va->grad[i] += nd.grad[i] * deriv[i];
    });
}

}  // namespace

Var constant(Tensor v) { return leaf(std::move(v), false); }

Var leaf(Tensor v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void mac_counter_reset() { g_mac_count = 0; }
void mac_counter_enable(bool on) { g_count_macs = on; }
int64_t mac_counter_value() { return g_mac_count; }

void backward(const Var& root) {
    if (!root) throw std::invalid_argument("backward: null root");
    if (root->val.numel() != 1)
        throw std::invalid_argument("backward: root must be scalar");
    // iterative topological order
    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    std::unordered_set<Node*> visited;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

Var add(const Var& a, const Var& b) {
    return binary_op(a, b, [](double x, double y) { return x + y; }, Tensor(), Tensor());
}

Var sub(const Var& a, const Var& b) {
    auto oshape = broadcast_shape(a->val.shape(), b->val.shape());
    Tensor out = broadcast_eval(a->val, b->val, oshape,
                                [](double x, double y) { return x - y; });
    bool req = track({a, b});
    Var va = a, vb = b;
    return make_node(std::move(out), req, {a, b}, [va, vb](Node& n) {
        if (va->requires_grad) {
            va->ensure_grad();
            broadcast_accum(va->grad, va->val.shape(), n.grad, Tensor());
        }
        if (vb->requires_grad) {
            vb->ensure_grad();
            Tensor neg_grad(n.grad.shape());
            for (int64_t i = 0; i < n.grad.numel(); ++i) neg_grad[i] = -n.grad[i];
            broadcast_accum(vb->grad, vb->val.shape(), neg_grad, Tensor());
        }
    });
}

Var mul(const Var& a, const Var& b) {
    auto oshape = broadcast_shape(a->val.shape(), b->val.shape());
    bool req = track({a, b});
    Tensor fa, fb;
    if (req) {
        // d(out)/da = b broadcast to out, and vice versa
        fa = broadcast_eval(a->val, b->val, oshape, [](double, double y) { return y; });
        fb = broadcast_eval(a->val, b->val, oshape, [](double x, double) { return x; });
    }
    return binary_op(a, b, [](double x, double y) { return x * y; }, std::move(fa), std::move(fb));
}

Var div(const Var& a, const Var& b) {
    auto oshape = broadcast_shape(a->val.shape(), b->val.shape());
    bool req = track({a, b});
    Tensor fa, fb;
    if (req) {
        fa = broadcast_eval(a->val, b->val, oshape, [](double, double y) { return 1.0 / y; });
        fb = broadcast_eval(a->val, b->val, oshape,
                            [](double x, double y) { return -x / (y * y); });
    }
    return binary_op(a, b, [](double x, double y) { return x / y; }, std::move(fa), std::move(fb));
}

Var minimum(const Var& a, const Var& b) {
    auto oshape = broadcast_shape(a->val.shape(), b->val.shape());
    bool req = track({a, b});
    Tensor fa, fb;
    if (req) {
        // ties route the subgradient to a
        fa = broadcast_eval(a->val, b->val, oshape,
                            [](double x, double y) { return x <= y ? 1.0 : 0.0; });
        fb = broadcast_eval(a->val, b->val, oshape,
                            [](double x, double y) { return x <= y ? 0.0 : 1.0; });
    }
    return binary_op(a, b, [](double x, double y) { return x < y ? x : y; },
                     std::move(fa), std::move(fb));
}

Var maximum(const Var& a, const Var& b) {
    auto oshape = broadcast_shape(a->val.shape(), b->val.shape());
    bool req = track({a, b});
    Tensor fa, fb;
    if (req) {
        fa = broadcast_eval(a->val, b->val, oshape,
                            [](double x, double y) { return x >= y ? 1.0 : 0.0; });
        fb = broadcast_eval(a->val, b->val, oshape,
                            [](double x, double y) { return x >= y ? 0.0 : 1.0; });
    }
    return binary_op(a, b, [](double x, double y) { return x > y ? x : y; },
                     std::move(fa), std::move(fb));
}

Var add_scalar(const Var& a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
    return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var neg(const Var& a) { return mul_scalar(a, -1.0); }

Var relu(const Var& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(const Var& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Var log(const Var& a) {
    return unary_op(a, [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Var exp(const Var& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Var sqrt(const Var& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Var clamp(const Var& a, double lo, double hi) {
    return unary_op(a, [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : x); },
                    [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var detach(const Var& a) { return leaf(a->val, false); }

Var reshape(const Var& a, std::vector<int64_t> shape) {
    Tensor out = a->val.reshaped(std::move(shape));
    bool req = track({a});
    Var va = a;
    return make_node(std::move(out), req, {a}, [va](Node& n) {
        if (!va->requires_grad) return;
        va->ensure_grad();
        for (int64_t i = 0; i < n.grad.numel(); ++i) va->grad[i] += n.grad[i];
    });
}

Var concat(const Var& a, const Var& b, int axis) {
    const auto& sa = a->val.shape();
    const auto& sb = b->val.shape();
    if (sa.size() != sb.size()) throw std::invalid_argument("concat: rank mismatch");
    if (axis < 0 || axis >= static_cast<int>(sa.size()))
        throw std::invalid_argument("concat: bad axis");
    for (size_t i = 0; i < sa.size(); ++i)
        if (static_cast<int>(i) != axis && sa[i] != sb[i])
            throw std::invalid_argument("concat: shape mismatch " + Tensor::shape_str(sa) +
                                        " vs " + Tensor::shape_str(sb));
    std::vector<int64_t> oshape = sa;
    oshape[static_cast<size_t>(axis)] += sb[static_cast<size_t>(axis)];

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sa[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < sa.size(); ++i) inner *= sa[i];
    const int64_t ca = sa[static_cast<size_t>(axis)] * inner;
    const int64_t cb = sb[static_cast<size_t>(axis)] * inner;

    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o) {
        std::copy_n(a->val.data() + o * ca, ca, out.data() + o * (ca + cb));
        std::copy_n(b->val.data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
    }
    bool req = track({a, b});
    Var va = a, vb = b;
    return make_node(std::move(out), req, {a, b}, [va, vb, outer, ca, cb](Node& n) {
        if (va->requires_grad) {
            va->ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < ca; ++i)
                    va->grad[o * ca + i] += n.grad[o * (ca + cb) + i];
        }
        if (vb->requires_grad) {
            vb->ensure_grad();
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < cb; ++i)
                    vb->grad[o * cb + i] += n.grad[o * (ca + cb) + ca + i];
        }
    });
}

Var slice(const Var& a, int axis, int64_t start, int64_t len) {
    const auto& s = a->val.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw std::invalid_argument("slice: bad axis");
    const int64_t d = s[static_cast<size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > d)
        throw std::invalid_argument("slice: range out of bounds");
    std::vector<int64_t> oshape = s;
    oshape[static_cast<size_t>(axis)] = len;

    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];

    Tensor out(oshape);
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(a->val.data() + (o * d + start) * inner, len * inner,
                    out.data() + o * len * inner);
    bool req = track({a});
    Var va = a;
    return make_node(std::move(out), req, {a}, [va, outer, inner, d, start, len](Node& n) {
        if (!va->requires_grad) return;
        va->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t i = 0; i < len * inner; ++i)
                va->grad[(o * d + start) * inner + i] += n.grad[o * len * inner + i];
    });
}

Var transpose12(const Var& a) {
    if (a->val.rank() != 3) throw std::invalid_argument("transpose12: expected rank 3");
    const int64_t N = a->val.dim(0), P = a->val.dim(1), Q = a->val.dim(2);
    Tensor out({N, Q, P});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < P; ++i)
            for (int64_t j = 0; j < Q; ++j)
                out[(n * Q + j) * P + i] = a->val[(n * P + i) * Q + j];
    bool req = track({a});
    Var va = a;
    return make_node(std::move(out), req, {a}, [va, N, P, Q](Node& n) {
        if (!va->requires_grad) return;
        va->ensure_grad();
        for (int64_t b = 0; b < N; ++b)
            for (int64_t i = 0; i < P; ++i)
                for (int64_t j = 0; j < Q; ++j)
                    va->grad[(b * P + i) * Q + j] += n.grad[(b * Q + j) * P + i];
    });
}

Var sum(const Var& a, const std::vector<int>& axes) {
    std::vector<int64_t> oshape = a->val.shape();
    for (int ax : axes) {
        if (ax < 0 || ax >= a->val.rank()) throw std::invalid_argument("sum: bad axis");
        oshape[static_cast<size_t>(ax)] = 1;
    }
    Tensor out(oshape);
    B4 bi = pad4(a->val.shape()), bo = pad4(oshape);
    // iterate input coords, folding reduced axes into the size-1 output slot
    const double* pa = a->val.data();
    double* po = out.data();
    int64_t idx[4];
    for (idx[0] = 0; idx[0] < bi.d[0]; ++idx[0])
        for (idx[1] = 0; idx[1] < bi.d[1]; ++idx[1])
            for (idx[2] = 0; idx[2] < bi.d[2]; ++idx[2])
                for (idx[3] = 0; idx[3] < bi.d[3]; ++idx[3]) {
                    int64_t ii = 0, oi = 0;
                    for (int d = 0; d < 4; ++d) {
                        ii = ii * bi.d[d] + idx[d];
                        oi = oi * bo.d[d] + std::min(idx[d], bo.d[d] - 1);
                    }
                    po[oi] += pa[ii];
                }
    bool req = track({a});
    Var va = a;
    return make_node(std::move(out), req, {a}, [va](Node& n) {
        if (!va->requires_grad) return;
        va->ensure_grad();
        expand_accum(va->grad, n.grad);
    });
}

Var mean(const Var& a, const std::vector<int>& axes) {
    int64_t cnt = 1;
    for (int ax : axes) cnt *= a->val.dim(ax);
    return mul_scalar(sum(a, axes), 1.0 / static_cast<double>(cnt));
}

Var sum_all(const Var& a) {
    Tensor out({1});
    double acc = 0.0;
    for (int64_t i = 0; i < a->val.numel(); ++i) acc += a->val[i];
    out[0] = acc;
    bool req = track({a});
    Var va = a;
    return make_node(std::move(out), req, {a}, [va](Node& n) {
        if (!va->requires_grad) return;
        va->ensure_grad();
        const double g = n.grad[0];
        for (int64_t i = 0; i < va->grad.numel(); ++i) va->grad[i] += g;
    });
}

Var mean_all(const Var& a) {
    return mul_scalar(sum_all(a), 1.0 / static_cast<double>(a->val.numel()));
}

Var softmax(const Var& a, int axis) {
    if (axis < 0 || axis >= a->val.rank()) throw std::invalid_argument("softmax: bad axis");
    const auto& shape = a->val.shape();
    int64_t outer = 1, inner = 1, n = shape[static_cast<size_t>(axis)];
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];

    Tensor out(shape);
    const double* px = a->val.data();
    double* py = out.data();
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            double mx = px[base];
            for (int64_t k = 1; k < n; ++k) mx = std::max(mx, px[base + k * inner]);
            double z = 0.0;
            for (int64_t k = 0; k < n; ++k) {
                double e = std::exp(px[base + k * inner] - mx);
                py[base + k * inner] = e;
                z += e;
            }
            for (int64_t k = 0; k < n; ++k) py[base + k * inner] /= z;
        }
    bool req = track({a});
    Var va = a;
    Tensor yv = req ? out : Tensor();
    return make_node(std::move(out), req, {a},
                     [va, yv = std::move(yv), outer, inner, n](Node& nd) {
                         if (!va->requires_grad) return;
                         va->ensure_grad();
                         for (int64_t o = 0; o < outer; ++o)
                             for (int64_t in = 0; in < inner; ++in) {
                                 const int64_t base = o * n * inner + in;
                                 double dot = 0.0;
                                 for (int64_t k = 0; k < n; ++k)
                                     dot += nd.grad[base + k * inner] * yv[base + k * inner];
                                 for (int64_t k = 0; k < n; ++k)
                                     va->grad[base + k * inner] +=
                                         yv[base + k * inner] * (nd.grad[base + k * inner] - dot);
                             }
                     });
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x->val.rank() != 2 || w->val.rank() != 2)
        throw std::invalid_argument("linear: expected rank-2 inputs");
    const int64_t N = x->val.dim(0), K = x->val.dim(1), M = w->val.dim(0);
    if (w->val.dim(1) != K) throw std::invalid_argument("linear: K mismatch");
    if (b && b->val.numel() != M) throw std::invalid_argument("linear: bias size mismatch");

    Tensor out({N, M});
    {
        CMapMat mx(x->val.data(), N, K);
        CMapMat mw(w->val.data(), M, K);
        MapMat mo(out.data(), N, M);
        mo.noalias() = mx * mw.transpose();
        if (b)
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < M; ++j) out.at2(i, j) += b->val[j];
    }
    if (g_count_macs) g_mac_count += N * M * K;
    bool req = b ? track({x, w, b}) : track({x, w});
    Var vx = x, vw = w, vb = b;
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(out), req, std::move(parents), [vx, vw, vb, N, K, M](Node& n) {
        CMapMat mg(n.grad.data(), N, M);
        if (vx->requires_grad) {
            vx->ensure_grad();
            MapMat mxg(vx->grad.data(), N, K);
            CMapMat mw(vw->val.data(), M, K);
            mxg.noalias() += mg * mw;
        }
        if (vw->requires_grad) {
            vw->ensure_grad();
            MapMat mwg(vw->grad.data(), M, K);
            CMapMat mx(vx->val.data(), N, K);
            mwg.noalias() += mg.transpose() * mx;
        }
        if (vb && vb->requires_grad) {
            vb->ensure_grad();
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < M; ++j) vb->grad[j] += n.grad.at2(i, j);
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    if (a->val.rank() != 3 || b->val.rank() != 3)
        throw std::invalid_argument("bmm: expected rank-3 inputs");
    const int64_t N = a->val.dim(0), P = a->val.dim(1), K = a->val.dim(2);
    if (b->val.dim(0) != N || b->val.dim(1) != K)
        throw std::invalid_argument("bmm: shape mismatch");
    const int64_t Q = b->val.dim(2);
    Tensor out({N, P, Q});
    for (int64_t i = 0; i < N; ++i) {
        CMapMat ma(a->val.data() + i * P * K, P, K);
        CMapMat mb(b->val.data() + i * K * Q, K, Q);
        MapMat mo(out.data() + i * P * Q, P, Q);
        mo.noalias() = ma * mb;
    }
    if (g_count_macs) g_mac_count += N * P * K * Q;
    bool req = track({a, b});
    Var va = a, vb = b;
    return make_node(std::move(out), req, {a, b}, [va, vb, N, P, K, Q](Node& n) {
        for (int64_t i = 0; i < N; ++i) {
            CMapMat mg(n.grad.data() + i * P * Q, P, Q);
            if (va->requires_grad) {
                va->ensure_grad();
                MapMat mag(va->grad.data() + i * P * K, P, K);
                CMapMat mb(vb->val.data() + i * K * Q, K, Q);
                mag.noalias() += mg * mb.transpose();
            }
            if (vb->requires_grad) {
                vb->ensure_grad();
                MapMat mbg(vb->grad.data() + i * K * Q, K, Q);
                CMapMat ma(va->val.data() + i * P * K, P, K);
                mbg.noalias() += ma.transpose() * mg;
            }
        }
    });
}

namespace {

void im2col(const double* img, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* col) {
    // col: (C*kh*kw, Ho*Wo)
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
                double* dst = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill_n(dst + oy * Wo, Wo, 0.0);
                        continue;
                    }
                    const double* src = img + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        int64_t ix = ox * stride - pad + kx;
                        dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
}

void col2im_accum(const double* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
                  int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, double* img) {
    for (int64_t c = 0; c < C; ++c)
        for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
                const double* src = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
                for (int64_t oy = 0; oy < Ho; ++oy) {
                    int64_t iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = img + (c * H + iy) * W;
                    for (int64_t ox = 0; ox < Wo; ++ox) {
                        int64_t ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
                    }
                }
            }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    if (x->val.rank() != 4 || w->val.rank() != 4)
        throw std::invalid_argument("conv2d: expected rank-4 input and weight");
    const int64_t N = x->val.dim(0), Cin = x->val.dim(1), H = x->val.dim(2), W = x->val.dim(3);
    const int64_t Cout = w->val.dim(0), Cg = w->val.dim(1), kh = w->val.dim(2), kw = w->val.dim(3);
    const int64_t g = groups;
    if (Cin % g != 0 || Cout % g != 0 || Cg != Cin / g)
        throw std::invalid_argument("conv2d: group/channel mismatch");
    if (b && b->val.numel() != Cout) throw std::invalid_argument("conv2d: bias size mismatch");
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");

    const int64_t Cog = Cout / g;
    const int64_t colrows = Cg * kh * kw;
    Tensor out({N, Cout, Ho, Wo});
    std::vector<double> col(static_cast<size_t>(colrows * Ho * Wo));

    for (int64_t n = 0; n < N; ++n)
        for (int64_t gi = 0; gi < g; ++gi) {
            const double* img = x->val.data() + (n * Cin + gi * Cg) * H * W;
            im2col(img, Cg, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
            CMapMat mw(w->val.data() + gi * Cog * colrows, Cog, colrows);
            CMapMat mc(col.data(), colrows, Ho * Wo);
            MapMat mo(out.data() + (n * Cout + gi * Cog) * Ho * Wo, Cog, Ho * Wo);
            mo.noalias() = mw * mc;
        }
    if (b) {
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < Cout; ++c) {
                double* p = out.data() + (n * Cout + c) * Ho * Wo;
                const double bv = b->val[c];
                for (int64_t i = 0; i < Ho * Wo; ++i) p[i] += bv;
            }
    }
    if (g_count_macs) g_mac_count += N * Cout * Cg * kh * kw * Ho * Wo;

    bool req = b ? track({x, w, b}) : track({x, w});
    Var vx = x, vw = w, vb = b;
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    int64_t s = stride, p = pad;
    return make_node(std::move(out), req, std::move(parents),
                     [vx, vw, vb, N, Cin, H, W, Cout, Cg, kh, kw, g, Cog, colrows, s, p](Node& n) {
                         const int64_t Ho = (H + 2 * p - kh) / s + 1;
                         const int64_t Wo = (W + 2 * p - kw) / s + 1;
                         std::vector<double> col(static_cast<size_t>(colrows * Ho * Wo));
                         std::vector<double> dcol(static_cast<size_t>(colrows * Ho * Wo));
                         if (vx->requires_grad) vx->ensure_grad();
                         if (vw->requires_grad) vw->ensure_grad();
                         for (int64_t ni = 0; ni < N; ++ni)
                             for (int64_t gi = 0; gi < g; ++gi) {
                                 CMapMat mg(n.grad.data() + (ni * Cout + gi * Cog) * Ho * Wo,
                                            Cog, Ho * Wo);
                                 if (vw->requires_grad) {
                                     const double* img =
                                         vx->val.data() + (ni * Cin + gi * Cg) * H * W;
                                     im2col(img, Cg, H, W, kh, kw, s, p, Ho, Wo, col.data());
                                     CMapMat mc(col.data(), colrows, Ho * Wo);
                                     MapMat mwg(vw->grad.data() + gi * Cog * colrows, Cog, colrows);
                                     mwg.noalias() += mg * mc.transpose();
                                 }
                                 if (vx->requires_grad) {
                                     CMapMat mw(vw->val.data() + gi * Cog * colrows, Cog, colrows);
                                     MapMat mdc(dcol.data(), colrows, Ho * Wo);
                                     mdc.noalias() = mw.transpose() * mg;
                                     double* dimg =
                                         vx->grad.data() + (ni * Cin + gi * Cg) * H * W;
                                     col2im_accum(dcol.data(), Cg, H, W, kh, kw, s, p, Ho, Wo,
                                                  dimg);
                                 }
                             }
                         if (vb && vb->requires_grad) {
                             vb->ensure_grad();
                             for (int64_t ni = 0; ni < N; ++ni)
                                 for (int64_t c = 0; c < Cout; ++c) {
                                     const double* pg =
                                         n.grad.data() + (ni * Cout + c) * Ho * Wo;
                                     double acc = 0.0;
                                     for (int64_t i = 0; i < Ho * Wo; ++i) acc += pg[i];
                                     vb->grad[c] += acc;
                                 }
                         }
                     });
}

}  // namespace mft::ad
