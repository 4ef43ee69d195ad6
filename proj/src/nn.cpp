#include "mftrack/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace mft::nn {

namespace ad = mft::ad;

namespace {

ad::Var he_normal(const std::vector<int64_t>& shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
    return ad::leaf(std::move(t), true);
}

}  // namespace

Conv2d::Conv2d(std::string name, int64_t cin, int64_t cout, int k, int stride, int pad,
               int groups, bool bias, Rng& rng)
    : name_(std::move(name)), stride_(stride), pad_(pad), groups_(groups) {
    if (cin % groups != 0 || cout % groups != 0)
        throw std::invalid_argument(name_ + ": channels not divisible by groups");
    const int64_t fan_in = (cin / groups) * k * k;
    w = he_normal({cout, cin / groups, k, k}, fan_in, rng);
    if (bias) b = ad::leaf(Tensor({cout}), true);
}

ad::Var Conv2d::forward(const ad::Var& x) const {
    return ad::conv2d(x, w, b, stride_, pad_, groups_);
}

void Conv2d::collect_params(std::vector<ParamRef>& out) const {
    out.push_back({name_ + ".w", w});
    if (b) out.push_back({name_ + ".b", b});
}

int64_t Conv2d::param_count() const {
    return w->val.numel() + (b ? b->val.numel() : 0);
}

Linear::Linear(std::string name, int64_t in, int64_t out, bool bias, Rng& rng)
    : name_(std::move(name)) {
    w = he_normal({out, in}, in, rng);
    if (bias) b = ad::leaf(Tensor({out}), true);
}

ad::Var Linear::forward(const ad::Var& x) const { return ad::linear(x, w, b); }

void Linear::collect_params(std::vector<ParamRef>& out) const {
    out.push_back({name_ + ".w", w});
    if (b) out.push_back({name_ + ".b", b});
}

int64_t Linear::param_count() const {
    return w->val.numel() + (b ? b->val.numel() : 0);
}

void channel_stats(const Tensor& x, Tensor& mean, Tensor& var) {
    const int64_t n = x.dim(0), c = x.dim(1);
    const int64_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    const int64_t cnt = n * spatial;
    mean = Tensor({c});
    var = Tensor({c});
    for (int64_t ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double* p = x.data() + (i * c + ch) * spatial;
            for (int64_t s = 0; s < spatial; ++s) acc += p[s];
        }
        const double mu = acc / static_cast<double>(cnt);
        double vacc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            const double* p = x.data() + (i * c + ch) * spatial;
            for (int64_t s = 0; s < spatial; ++s) {
                const double d = p[s] - mu;
                vacc += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = vacc / static_cast<double>(cnt);
    }
}

BatchNorm::BatchNorm(std::string name, int64_t c, double eps, double momentum)
    : name_(std::move(name)), c_(c), eps_(eps), momentum_(momentum) {
    gamma = ad::leaf(Tensor::full({c}, 1.0), true);
    beta = ad::leaf(Tensor({c}), true);
    running_mean = Tensor({c});
    running_var = Tensor::full({c}, 1.0);
}

ad::Var BatchNorm::normalize_with(const ad::Var& x, const Tensor& m, const Tensor& v) const {
    const bool spatial = x->val.rank() == 4;
    const std::vector<int64_t> bshape =
        spatial ? std::vector<int64_t>{1, c_, 1, 1} : std::vector<int64_t>{1, c_};
    Tensor mu(bshape), inv(bshape);
    for (int64_t ch = 0; ch < c_; ++ch) {
        mu[ch] = m[ch];
        inv[ch] = 1.0 / std::sqrt(v[ch] + eps_);
    }
    auto g = ad::reshape(gamma, bshape);
    auto bt = ad::reshape(beta, bshape);
    auto xn = ad::mul(ad::sub(x, ad::constant(std::move(mu))), ad::constant(std::move(inv)));
    return ad::add(ad::mul(xn, g), bt);
}

ad::Var BatchNorm::forward(const ad::Var& x, bool training) {
    if (x->val.dim(1) != c_)
        throw std::invalid_argument(name_ + ": channel mismatch, got " +
                                    Tensor::shape_str(x->val.shape()));
    const bool spatial = x->val.rank() == 4;
    const std::vector<int64_t> bshape =
        spatial ? std::vector<int64_t>{1, c_, 1, 1} : std::vector<int64_t>{1, c_};
    const std::vector<int> axes = spatial ? std::vector<int>{0, 2, 3} : std::vector<int>{0};

    if (training) {
        auto mu = ad::mean(x, axes);
        auto xc = ad::sub(x, mu);
        auto var = ad::mean(ad::mul(xc, xc), axes);
        auto xn = ad::div(xc, ad::sqrt(ad::add_scalar(var, eps_)));
        auto out = ad::add(ad::mul(xn, ad::reshape(gamma, bshape)), ad::reshape(beta, bshape));
        // running statistics update happens outside the graph
        for (int64_t ch = 0; ch < c_; ++ch) {
            running_mean[ch] = (1.0 - momentum_) * running_mean[ch] + momentum_ * mu->val[ch];
            running_var[ch] = (1.0 - momentum_) * running_var[ch] + momentum_ * var->val[ch];
        }
        return out;
    }

    if (!adapt_cfg_ || adapt_cfg_->mode == adapt::Mode::Off)
        return normalize_with(x, running_mean, running_var);

    Tensor inst_mean, inst_var;
    channel_stats(x->val, inst_mean, inst_var);
    if (adapt_state.adapted_mean.empty()) reset_adaptation();
    Tensor eff_mean, eff_var;
    adapt::effective_stats(*adapt_cfg_, adapt_state, running_mean, running_var, inst_mean,
                           inst_var, eff_mean, eff_var);
    if (observer_ && *observer_) {
        BnEvalRecord rec;
        rec.layer = name_;
        rec.eff_mean = eff_mean;
        rec.eff_var = eff_var;
        rec.inst_mean = inst_mean;
        rec.inst_var = inst_var;
        rec.src_mean = running_mean;
        rec.src_var = running_var;
        (*observer_)(rec);
    }
    return normalize_with(x, eff_mean, eff_var);
}

void BatchNorm::reset_adaptation() {
    adapt::Config fallback;
    adapt::reset_state(adapt_cfg_ ? *adapt_cfg_ : fallback, adapt_state, running_mean,
                       running_var);
}

void BatchNorm::collect_params(std::vector<ParamRef>& out) const {
    out.push_back({name_ + ".gamma", gamma});
    out.push_back({name_ + ".beta", beta});
}

void BatchNorm::collect_buffers(std::vector<BufferRef>& out) {
    out.push_back({name_ + ".running_mean", &running_mean});
    out.push_back({name_ + ".running_var", &running_var});
}

int64_t BatchNorm::param_count() const { return 2 * c_; }

LayerNormChannels::LayerNormChannels(std::string name, int64_t c, double eps)
    : name_(std::move(name)), c_(c), eps_(eps) {
    gamma = ad::leaf(Tensor::full({c}, 1.0), true);
    beta = ad::leaf(Tensor({c}), true);
}

ad::Var LayerNormChannels::forward(const ad::Var& x) const {
    if (x->val.rank() != 4 || x->val.dim(1) != c_)
        throw std::invalid_argument(name_ + ": expected (N," + std::to_string(c_) + ",H,W)");
    const std::vector<int64_t> bshape{1, c_, 1, 1};
    auto mu = ad::mean(x, {1});  // (N,1,H,W)
    auto xc = ad::sub(x, mu);
    auto var = ad::mean(ad::mul(xc, xc), {1});
    auto xn = ad::div(xc, ad::sqrt(ad::add_scalar(var, eps_)));
    return ad::add(ad::mul(xn, ad::reshape(gamma, bshape)), ad::reshape(beta, bshape));
}

void LayerNormChannels::collect_params(std::vector<ParamRef>& out) const {
    out.push_back({name_ + ".gamma", gamma});
    out.push_back({name_ + ".beta", beta});
}

int64_t LayerNormChannels::param_count() const { return 2 * c_; }

}  // namespace mft::nn
