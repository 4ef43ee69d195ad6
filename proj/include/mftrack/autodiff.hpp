#ifndef MFTRACK_AUTODIFF_HPP
#define MFTRACK_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <vector>

#include "mftrack/tensor.hpp"

namespace mft::ad {

// Reverse-mode autodiff over Tensor. Each op returns a fresh Node that
// stores its value, its parents, and a closure accumulating into the
// parents' grads. Graphs are rebuilt per forward pass.

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated lazily by ensure_grad()
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backward_fn;  // reads this->grad, adds to parents

    void ensure_grad() {
        if (grad.empty() && !val.empty()) grad = Tensor(val.shape());
    }
    void zero_grad() { grad = Tensor(); }
};

// Leafs
Var constant(Tensor v);
Var leaf(Tensor v, bool requires_grad);

// Grad-mode switch; ops record no graph while disabled.
bool grad_enabled();
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Runs reverse accumulation from a scalar (numel==1) root.
void backward(const Var& root);

// --- elementwise / broadcast binary ops (equal rank, dims match or are 1) ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// --- scalar ops ---
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);

// --- unary ---
Var neg(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var detach(const Var& a);

// --- shape ---
Var reshape(const Var& a, std::vector<int64_t> shape);
Var concat(const Var& a, const Var& b, int axis);
Var slice(const Var& a, int axis, int64_t start, int64_t len);
// swap the last two axes of a rank-3 tensor
Var transpose12(const Var& a);

// --- reductions (keepdim) ---
Var sum(const Var& a, const std::vector<int>& axes);
Var mean(const Var& a, const std::vector<int>& axes);
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}

// --- softmax along one axis ---
Var softmax(const Var& a, int axis);

// --- linear algebra ---
// x:(N,K) w:(M,K) b:(M) -> (N,M)
Var linear(const Var& x, const Var& w, const Var& b);
// a:(N,P,K) b:(N,K,Q) -> (N,P,Q)
Var bmm(const Var& a, const Var& b);
// x:(N,Cin,H,W) w:(Cout,Cin/groups,kh,kw) b:(Cout) or null
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups);

// Multiply-add instrumentation for the bench harness: conv2d/linear/bmm add
// their analytic MAC counts here when enabled.
void mac_counter_reset();
void mac_counter_enable(bool on);
int64_t mac_counter_value();

}  // namespace mft::ad

#endif
