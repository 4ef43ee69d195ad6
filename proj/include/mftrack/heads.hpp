#ifndef MFTRACK_HEADS_HPP
#define MFTRACK_HEADS_HPP

#include <string>
#include <vector>

#include "mftrack/box.hpp"
#include "mftrack/nn.hpp"

namespace mft {

// Depthwise 3x3 + pointwise 1x1 convolution, batch norm, ReLU. The batch
// norm layers here are the ones the test-time adaptation policies act on.
class SeparableBlock {
public:
    SeparableBlock() = default;
    SeparableBlock(std::string name, int64_t cin, int64_t cout, Rng& rng);

    ad::Var forward(const ad::Var& x, bool training);
    void collect_params(std::vector<nn::ParamRef>& out) const;
    void collect_buffers(std::vector<nn::BufferRef>& out);
    int64_t param_count() const;
    nn::BatchNorm& bn() { return bn_; }

private:
    nn::Conv2d dw_, pw_;
    nn::BatchNorm bn_;
};

struct HeadOutputs {
    ad::Var cls;  // (N,1,h,w), sigmoid confidences
    ad::Var box;  // (N,4,h,w), sigmoid normalized corners (x1,y1,x2,y2)
};

// Classification head: one separable block + linear 1x1 to one channel.
// Box head: three separable blocks + linear 1x1 to four channels.
// Both end in a sigmoid.
class Heads {
public:
    Heads() = default;
    Heads(std::string name, int64_t cin, Rng& rng);

    HeadOutputs forward(const ad::Var& fused, bool training);

    void collect_params(std::vector<nn::ParamRef>& out) const;
    void collect_buffers(std::vector<nn::BufferRef>& out);
    int64_t param_count() const;
    std::vector<nn::BatchNorm*> bn_layers();

private:
    SeparableBlock cls_block_;
    std::vector<SeparableBlock> box_blocks_;
    nn::Conv2d cls_final_, box_final_;
};

// Outer product of a Hann taper with itself, normalized so the maximum cell
// is exactly 1.
Tensor cosine_window(int64_t n);

struct Decoded {
    BBox box;      // search-region pixel coordinates, clamped and ordered
    double score;  // raw classification confidence at the selected cell
    int64_t row = 0, col = 0;
};

// Picks the argmax cell of (1-w)*cls + w*window and reads the regression
// channels there, scaled to search-region pixels. cls: (1,1,h,w),
// box: (1,4,h,w), window: (h,w) with max 1.
Decoded decode_prediction(const Tensor& cls, const Tensor& box, double search_size,
                          const Tensor& window, double window_weight);

}  // namespace mft

#endif
