#ifndef MFTRACK_FILTRATION_HPP
#define MFTRACK_FILTRATION_HPP

#include <string>
#include <vector>

#include "mftrack/nn.hpp"

namespace mft {

// Intermediate values captured during a filter forward pass, for diagnostics
// and property tests (softmax normalization, gate range).
struct FilterTrace {
    Tensor a_ch;  // channel filter, (N,2C,1,1), sigmoid output
    Tensor a_sp;  // spatial filter, (N,1,h,w), sigmoid output
    Tensor q_ch;  // spatial softmax map, (N,1,h,w), sums to 1 over positions
    Tensor q_sp;  // channel softmax vector, (N,I,1,1), sums to 1 over channels
    Tensor gate;  // a_ch + a_sp broadcast, (N,2C,h,w), values in (0,2)
};

// Mixed channel/spatial filtration over a concatenated dual representation.
// A single squeezed value map V feeds both filter paths; the channel path
// pools V against a spatial softmax query, the spatial path contracts V
// against a channel softmax query. Both paths end in a sigmoid and the two
// filters are summed into a multiplicative gate on the input. Everything is
// 1x1 convolutions plus broadcast multiplications and summations, so the
// block is fully convolutional and size-agnostic.
class MixedFilter {
public:
    MixedFilter() = default;
    MixedFilter(std::string name, int64_t c2, int64_t squeeze, Rng& rng);

    // x: (N,2C,h,w) -> gated (N,2C,h,w)
    ad::Var forward(const ad::Var& x, FilterTrace* trace = nullptr) const;

    void collect_params(std::vector<nn::ParamRef>& out) const;
    int64_t param_count() const;
    static int64_t expected_param_count(int64_t c2, int64_t squeeze);

private:
    nn::Conv2d value_, query_ch_, query_sp_, expand_;
    nn::LayerNormChannels ln_;
    int64_t c2_ = 0, inner_ = 0;
};

// Polarized two-branch baseline: identical outer contract, but each branch
// owns its own value map and the contractions run as batched matrix
// multiplications. Exists for the parameter/latency comparison harness; it is
// strictly heavier than MixedFilter at every width because of the second
// value map.
class PolarizedFilter {
public:
    PolarizedFilter() = default;
    PolarizedFilter(std::string name, int64_t c2, int64_t squeeze, Rng& rng);

    ad::Var forward(const ad::Var& x) const;

    void collect_params(std::vector<nn::ParamRef>& out) const;
    int64_t param_count() const;
    static int64_t expected_param_count(int64_t c2, int64_t squeeze);

private:
    nn::Conv2d value_ch_, value_sp_, query_ch_, query_sp_, expand_;
    nn::LayerNormChannels ln_;
    int64_t c2_ = 0, inner_ = 0;
};

}  // namespace mft

#endif
