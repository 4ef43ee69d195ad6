#ifndef MFTRACK_BACKBONE_HPP
#define MFTRACK_BACKBONE_HPP

#include <vector>

#include "mftrack/nn.hpp"

namespace mft {

// Shared-weight feature extractor: four stride-2 conv stages followed by a
// linear 1x1 channel adapter to the working width. Output stride is 16 for
// both legal input sizes (128 -> 8, 256 -> 16).
struct BackboneConfig {
    std::vector<int64_t> widths{16, 32, 64, 96};
    int64_t working_width = 128;
};

class Backbone {
public:
    Backbone() = default;
    Backbone(const BackboneConfig& cfg, Rng& rng);

    // (N,3,S,S) with S in {128, 256} -> (N,C,S/16,S/16)
    ad::Var forward(const ad::Var& x, bool training);

    void collect_params(std::vector<nn::ParamRef>& out) const;
    void collect_buffers(std::vector<nn::BufferRef>& out);
    int64_t param_count() const;
    int64_t working_width() const { return width_; }

    static constexpr int kStride = 16;

private:
    std::vector<nn::Conv2d> convs_;
    std::vector<nn::BatchNorm> bns_;
    nn::Conv2d adapter_;
    int64_t width_ = 0;
};

}  // namespace mft

#endif
