#include "mftrack/backbone.hpp"

#include <stdexcept>

namespace mft {

namespace ad = mft::ad;

Backbone::Backbone(const BackboneConfig& cfg, Rng& rng) : width_(cfg.working_width) {
    if (cfg.widths.size() != 4)
        throw std::invalid_argument("backbone: exactly four stage widths expected");
    int64_t cin = 3;
    for (size_t i = 0; i < cfg.widths.size(); ++i) {
        const std::string stage = "backbone.stage" + std::to_string(i + 1);
        convs_.emplace_back(stage + ".conv", cin, cfg.widths[i], 3, 2, 1, 1, false, rng);
        bns_.emplace_back(stage + ".bn", cfg.widths[i]);
        cin = cfg.widths[i];
    }
    adapter_ = nn::Conv2d("backbone.adapter", cin, width_, 1, 1, 0, 1, true, rng);
}

ad::Var Backbone::forward(const ad::Var& x, bool training) {
    if (x->val.rank() != 4 || x->val.dim(1) != 3)
        throw std::invalid_argument("backbone: expected (N,3,S,S) input, got " +
                                    Tensor::shape_str(x->val.shape()));
    const int64_t s = x->val.dim(2);
    if (s != x->val.dim(3) || (s != 128 && s != 256))
        throw std::invalid_argument("backbone: input side must be 128 or 256, got " +
                                    Tensor::shape_str(x->val.shape()));
    auto h = x;
    for (size_t i = 0; i < convs_.size(); ++i)
        h = ad::relu(bns_[i].forward(convs_[i].forward(h), training));
    // adapter is linear on purpose, it only aligns channel width
    return adapter_.forward(h);
}

void Backbone::collect_params(std::vector<nn::ParamRef>& out) const {
    for (size_t i = 0; i < convs_.size(); ++i) {
        convs_[i].collect_params(out);
        bns_[i].collect_params(out);
    }
    adapter_.collect_params(out);
}

void Backbone::collect_buffers(std::vector<nn::BufferRef>& out) {
    for (auto& bn : bns_) bn.collect_buffers(out);
}

int64_t Backbone::param_count() const {
    int64_t n = adapter_.param_count();
    for (size_t i = 0; i < convs_.size(); ++i)
        n += convs_[i].param_count() + bns_[i].param_count();
    return n;
}

}  // namespace mft
