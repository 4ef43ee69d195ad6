#ifndef MFTRACK_NN_HPP
#define MFTRACK_NN_HPP

#include <functional>
#include <string>
#include <vector>

#include "mftrack/adaptation.hpp"
#include "mftrack/autodiff.hpp"
#include "mftrack/rng.hpp"
#include "mftrack/tensor.hpp"

namespace mft::nn {

// Named handle to a learnable tensor; the optimizer and the checkpoint walk
// these lists in construction order, which fixes serialization layout.
struct ParamRef {
    std::string name;
    ad::Var var;
};

// Named handle to a non-learnable persistent tensor (running statistics).
struct BufferRef {
    std::string name;
    Tensor* tensor;
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int64_t cin, int64_t cout, int k, int stride, int pad,
           int groups, bool bias, Rng& rng);

    ad::Var forward(const ad::Var& x) const;
    void collect_params(std::vector<ParamRef>& out) const;
    int64_t param_count() const;

    ad::Var w;  // (cout, cin/groups, k, k)
    ad::Var b;  // (cout) or null

private:
    std::string name_;
    int stride_ = 1, pad_ = 0, groups_ = 1;
};

class Linear {
public:
    Linear() = default;
    Linear(std::string name, int64_t in, int64_t out, bool bias, Rng& rng);

    ad::Var forward(const ad::Var& x) const;  // x: (N, in)
    void collect_params(std::vector<ParamRef>& out) const;
    int64_t param_count() const;

    ad::Var w;  // (out, in)
    ad::Var b;  // (out) or null

private:
    std::string name_;
};

// Record handed to the observer each time an adapting batch-norm layer
// resolves its evaluation statistics; used by diagnostics and tests.
struct BnEvalRecord {
    std::string layer;
    Tensor eff_mean, eff_var;
    Tensor inst_mean, inst_var;
    Tensor src_mean, src_var;
};
using BnObserver = std::function<void(const BnEvalRecord&)>;

// Batch normalization over (N,C,H,W) or (N,C) inputs. Variance is the biased
// (population) estimator throughout, including the running statistics, so the
// train-time accumulation and the test-time instance statistics agree.
//
// At evaluation time the layer normalizes with its running statistics unless
// an adaptation config is attached, in which case the effective statistics
// come from adapt::effective_stats. The running statistics act as the frozen
// source anchor and are never mutated outside training.
class BatchNorm {
public:
    BatchNorm() = default;
    BatchNorm(std::string name, int64_t c, double eps = 1e-5, double momentum = 0.1);

    ad::Var forward(const ad::Var& x, bool training);

    void collect_params(std::vector<ParamRef>& out) const;
    void collect_buffers(std::vector<BufferRef>& out);
    int64_t param_count() const;

    // Adaptation surface; both pointers may be null (plain frozen eval).
    void set_adaptation(const adapt::Config* cfg) { adapt_cfg_ = cfg; }
    void set_observer(const BnObserver* obs) { observer_ = obs; }
    void reset_adaptation();
    const std::string& name() const { return name_; }
    int64_t channels() const { return c_; }

    ad::Var gamma, beta;          // (c)
    Tensor running_mean;          // (c), frozen source stats at eval
    Tensor running_var;
    adapt::LayerState adapt_state;

private:
    ad::Var normalize_with(const ad::Var& x, const Tensor& m, const Tensor& v) const;

    std::string name_;
    int64_t c_ = 0;
    double eps_ = 1e-5;
    double momentum_ = 0.1;
    const adapt::Config* adapt_cfg_ = nullptr;
    const BnObserver* observer_ = nullptr;
};

// Layer normalization across the channel vector at every (n, y, x) position,
// with learnable per-channel affine.
class LayerNormChannels {
public:
    LayerNormChannels() = default;
    LayerNormChannels(std::string name, int64_t c, double eps = 1e-5);

    ad::Var forward(const ad::Var& x) const;  // x: (N,C,H,W)
    void collect_params(std::vector<ParamRef>& out) const;
    int64_t param_count() const;

    ad::Var gamma, beta;  // (c)

private:
    std::string name_;
    int64_t c_ = 0;
    double eps_ = 1e-5;
};

// Per-channel mean and biased variance of x over batch and spatial axes.
void channel_stats(const Tensor& x, Tensor& mean, Tensor& var);

}  // namespace mft::nn

#endif
