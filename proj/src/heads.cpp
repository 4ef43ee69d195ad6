#include "mftrack/heads.hpp"

#include <cmath>
#include <stdexcept>

namespace mft {

namespace ad = mft::ad;

SeparableBlock::SeparableBlock(std::string name, int64_t cin, int64_t cout, Rng& rng) {
    dw_ = nn::Conv2d(name + ".dw", cin, cin, 3, 1, 1, static_cast<int>(cin), false, rng);
    pw_ = nn::Conv2d(name + ".pw", cin, cout, 1, 1, 0, 1, false, rng);
    bn_ = nn::BatchNorm(name + ".bn", cout);
}

ad::Var SeparableBlock::forward(const ad::Var& x, bool training) {
    return ad::relu(bn_.forward(pw_.forward(dw_.forward(x)), training));
}

void SeparableBlock::collect_params(std::vector<nn::ParamRef>& out) const {
    dw_.collect_params(out);
    pw_.collect_params(out);
    bn_.collect_params(out);
}

void SeparableBlock::collect_buffers(std::vector<nn::BufferRef>& out) {
    bn_.collect_buffers(out);
}

int64_t SeparableBlock::param_count() const {
    return dw_.param_count() + pw_.param_count() + bn_.param_count();
}

Heads::Heads(std::string name, int64_t cin, Rng& rng) {
    cls_block_ = SeparableBlock(name + ".cls.block1", cin, cin, rng);
    cls_final_ = nn::Conv2d(name + ".cls.final", cin, 1, 1, 1, 0, 1, true, rng);
    for (int i = 0; i < 3; ++i)
        box_blocks_.emplace_back(name + ".box.block" + std::to_string(i + 1), cin, cin, rng);
    box_final_ = nn::Conv2d(name + ".box.final", cin, 4, 1, 1, 0, 1, true, rng);
}

HeadOutputs Heads::forward(const ad::Var& fused, bool training) {
    HeadOutputs out;
    out.cls = ad::sigmoid(cls_final_.forward(cls_block_.forward(fused, training)));
    auto h = fused;
    for (auto& blk : box_blocks_) h = blk.forward(h, training);
    out.box = ad::sigmoid(box_final_.forward(h));
    return out;
}

void Heads::collect_params(std::vector<nn::ParamRef>& out) const {
    cls_block_.collect_params(out);
    cls_final_.collect_params(out);
    for (const auto& blk : box_blocks_) blk.collect_params(out);
    box_final_.collect_params(out);
}

void Heads::collect_buffers(std::vector<nn::BufferRef>& out) {
    cls_block_.collect_buffers(out);
    for (auto& blk : box_blocks_) blk.collect_buffers(out);
}

int64_t Heads::param_count() const {
    int64_t n = cls_block_.param_count() + cls_final_.param_count() + box_final_.param_count();
    for (const auto& blk : box_blocks_) n += blk.param_count();
    return n;
}

std::vector<nn::BatchNorm*> Heads::bn_layers() {
    std::vector<nn::BatchNorm*> out{&cls_block_.bn()};
    for (auto& blk : box_blocks_) out.push_back(&blk.bn());
    return out;
}

Tensor cosine_window(int64_t n) {
    std::vector<double> hann(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        hann[static_cast<size_t>(i)] =
            0.5 - 0.5 * std::cos(2.0 * M_PI * static_cast<double>(i) /
                                 static_cast<double>(n - 1));
    Tensor w({n, n});
    double mx = 0.0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            w.at2(i, j) = hann[static_cast<size_t>(i)] * hann[static_cast<size_t>(j)];
            mx = std::max(mx, w.at2(i, j));
        }
    for (int64_t i = 0; i < n * n; ++i) w[i] /= mx;
    return w;
}

Decoded decode_prediction(const Tensor& cls, const Tensor& box, double search_size,
                          const Tensor& window, double window_weight) {
    if (cls.rank() != 4 || cls.dim(0) != 1 || cls.dim(1) != 1)
        throw std::invalid_argument("decode: cls must be (1,1,h,w)");
    if (box.rank() != 4 || box.dim(0) != 1 || box.dim(1) != 4)
        throw std::invalid_argument("decode: box must be (1,4,h,w)");
    const int64_t h = cls.dim(2), w = cls.dim(3);

    Decoded d;
    double best = -1.0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            const double pen = (1.0 - window_weight) * cls.at4(0, 0, r, c) +
                               window_weight * window.at2(r, c);
            if (pen > best) {
                best = pen;
                d.row = r;
                d.col = c;
            }
        }
    d.score = cls.at4(0, 0, d.row, d.col);
    BBox raw{box.at4(0, 0, d.row, d.col) * search_size,
             box.at4(0, 1, d.row, d.col) * search_size,
             box.at4(0, 2, d.row, d.col) * search_size,
             box.at4(0, 3, d.row, d.col) * search_size};
    d.box = clamp_box(raw, search_size, search_size);
    return d;
}

}  // namespace mft
