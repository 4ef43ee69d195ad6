#include "mftrack/filtration.hpp"

#include <stdexcept>

namespace mft {

namespace ad = mft::ad;

MixedFilter::MixedFilter(std::string name, int64_t c2, int64_t squeeze, Rng& rng)
    : c2_(c2), inner_(c2 / squeeze) {
    if (c2 % 2 != 0) throw std::invalid_argument(name + ": channel count must be even");
    if (squeeze < 1 || c2 % squeeze != 0)
        throw std::invalid_argument(name + ": bad squeeze rate");
    value_ = nn::Conv2d(name + ".value", c2, inner_, 1, 1, 0, 1, true, rng);
    query_ch_ = nn::Conv2d(name + ".query_ch", c2, 1, 1, 1, 0, 1, true, rng);
    query_sp_ = nn::Conv2d(name + ".query_sp", c2, inner_, 1, 1, 0, 1, true, rng);
    expand_ = nn::Conv2d(name + ".expand", inner_, c2, 1, 1, 0, 1, true, rng);
    ln_ = nn::LayerNormChannels(name + ".ln", c2);
}

ad::Var MixedFilter::forward(const ad::Var& x, FilterTrace* trace) const {
    if (x->val.rank() != 4 || x->val.dim(1) != c2_)
        throw std::invalid_argument("mixed filter: expected (N," + std::to_string(c2_) +
                                    ",h,w), got " + Tensor::shape_str(x->val.shape()));
    const int64_t n = x->val.dim(0), h = x->val.dim(2), w = x->val.dim(3);

    auto v = value_.forward(x);  // (N,I,h,w), shared by both paths

    // channel filter: pool V against a softmax over spatial positions,
    // expand back to 2C, normalize the channel vector, squash
    auto q_ch = ad::reshape(ad::softmax(ad::reshape(query_ch_.forward(x), {n, 1, h * w}), 2),
                            {n, 1, h, w});
    auto pooled = ad::sum(ad::mul(v, q_ch), {2, 3});  // (N,I,1,1)
    auto a_ch = ad::sigmoid(ln_.forward(expand_.forward(pooled)));

    // spatial filter: contract V against a softmax over channels of the
    // spatially averaged query
    auto q_sp = ad::softmax(ad::mean(query_sp_.forward(x), {2, 3}), 1);  // (N,I,1,1)
    auto a_sp = ad::sigmoid(ad::sum(ad::mul(q_sp, v), {1}));             // (N,1,h,w)

    auto gate = ad::add(a_ch, a_sp);  // (N,2C,h,w)
    if (trace) {
        trace->a_ch = a_ch->val;
        trace->a_sp = a_sp->val;
        trace->q_ch = q_ch->val;
        trace->q_sp = q_sp->val;
        trace->gate = gate->val;
    }
    return ad::mul(gate, x);
}

void MixedFilter::collect_params(std::vector<nn::ParamRef>& out) const {
    value_.collect_params(out);
    query_ch_.collect_params(out);
    query_sp_.collect_params(out);
    expand_.collect_params(out);
    ln_.collect_params(out);
}

int64_t MixedFilter::param_count() const {
    return value_.param_count() + query_ch_.param_count() + query_sp_.param_count() +
           expand_.param_count() + ln_.param_count();
}

int64_t MixedFilter::expected_param_count(int64_t c2, int64_t squeeze) {
    const int64_t inner = c2 / squeeze;
    const int64_t value = c2 * inner + inner;
    const int64_t query_ch = c2 + 1;
    const int64_t query_sp = c2 * inner + inner;
    const int64_t expand = inner * c2 + c2;
    const int64_t ln = 2 * c2;
    return value + query_ch + query_sp + expand + ln;
}

PolarizedFilter::PolarizedFilter(std::string name, int64_t c2, int64_t squeeze, Rng& rng)
    : c2_(c2), inner_(c2 / squeeze) {
    if (c2 % 2 != 0) throw std::invalid_argument(name + ": channel count must be even");
    value_ch_ = nn::Conv2d(name + ".value_ch", c2, inner_, 1, 1, 0, 1, true, rng);
    value_sp_ = nn::Conv2d(name + ".value_sp", c2, inner_, 1, 1, 0, 1, true, rng);
    query_ch_ = nn::Conv2d(name + ".query_ch", c2, 1, 1, 1, 0, 1, true, rng);
    query_sp_ = nn::Conv2d(name + ".query_sp", c2, inner_, 1, 1, 0, 1, true, rng);
    expand_ = nn::Conv2d(name + ".expand", inner_, c2, 1, 1, 0, 1, true, rng);
    ln_ = nn::LayerNormChannels(name + ".ln", c2);
}

ad::Var PolarizedFilter::forward(const ad::Var& x) const {
    if (x->val.rank() != 4 || x->val.dim(1) != c2_)
        throw std::invalid_argument("polarized filter: expected (N," + std::to_string(c2_) +
                                    ",h,w), got " + Tensor::shape_str(x->val.shape()));
    const int64_t n = x->val.dim(0), h = x->val.dim(2), w = x->val.dim(3);
    const int64_t hw = h * w;

    // channel branch: (N,I,HW) x (N,HW,1) -> (N,I,1)
    auto v_ch = ad::reshape(value_ch_.forward(x), {n, inner_, hw});
    auto q_ch = ad::reshape(ad::softmax(ad::reshape(query_ch_.forward(x), {n, 1, hw}), 2),
                            {n, hw, 1});
    auto pooled = ad::reshape(ad::bmm(v_ch, q_ch), {n, inner_, 1, 1});
    auto a_ch = ad::sigmoid(ln_.forward(expand_.forward(pooled)));

    // spatial branch: (N,1,I) x (N,I,HW) -> (N,1,HW)
    auto q_sp = ad::reshape(ad::softmax(ad::mean(query_sp_.forward(x), {2, 3}), 1),
                            {n, 1, inner_});
    auto v_sp = ad::reshape(value_sp_.forward(x), {n, inner_, hw});
    auto a_sp = ad::sigmoid(ad::reshape(ad::bmm(q_sp, v_sp), {n, 1, h, w}));

    return ad::mul(ad::add(a_ch, a_sp), x);
}

void PolarizedFilter::collect_params(std::vector<nn::ParamRef>& out) const {
    value_ch_.collect_params(out);
    value_sp_.collect_params(out);
    query_ch_.collect_params(out);
    query_sp_.collect_params(out);
    expand_.collect_params(out);
    ln_.collect_params(out);
}

int64_t PolarizedFilter::param_count() const {
    return value_ch_.param_count() + value_sp_.param_count() + query_ch_.param_count() +
           query_sp_.param_count() + expand_.param_count() + ln_.param_count();
}

int64_t PolarizedFilter::expected_param_count(int64_t c2, int64_t squeeze) {
    const int64_t inner = c2 / squeeze;
    // mixed filter plus one extra value map
    return MixedFilter::expected_param_count(c2, squeeze) + (c2 * inner + inner);
}

}  // namespace mft
