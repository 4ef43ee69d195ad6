#include "mftrack/tracker.hpp"

#include <algorithm>
#include <stdexcept>

#include "mftrack/image.hpp"

namespace mft {

namespace {

BBox sane_box(const BBox& raw, double width, double height) {
    BBox b = clamp_box(raw, width, height);
    if (b.w() < 2.0) {
        const double c = std::clamp(b.cx(), 1.0, width - 1.0);
        b.x1 = c - 1.0;
        b.x2 = c + 1.0;
    }
    if (b.h() < 2.0) {
        const double c = std::clamp(b.cy(), 1.0, height - 1.0);
        b.y1 = c - 1.0;
        b.y2 = c + 1.0;
    }
    return b;
}

}  // namespace

Tracker::Tracker(TrackNet& net, TrackerOptions opt)
    : net_(net), opt_(opt), gate_(opt.policy),
      window_(cosine_window(opt.search_size / Backbone::kStride)) {
    if (opt_.search_size % Backbone::kStride != 0 ||
        opt_.template_size % Backbone::kStride != 0)
        throw std::invalid_argument("tracker: sizes must be stride multiples");
}

ad::Var Tracker::feature(const Tensor& img) {
    const ad::Var v = ad::constant(
        img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)}));
    return net_.extract(v, false);
}

void Tracker::refresh_cached(const Tensor& frame, const BBox& box) {
    const CropSpec spec = crop_region(box, opt_.search_offset);
    const Tensor search =
        extract_crop(frame, spec.cx, spec.cy, spec.side, opt_.search_size);
    search_feat_ = feature(search);
    const ad::Var f_dyn = feature(center_crop(search, opt_.template_size));
    cached_pair_ = net_.relation_block(f_dyn, template_feat_, false);
}

void Tracker::init(const Tensor& frame, const BBox& box) {
    if (frame.rank() != 3 || frame.dim(0) != 3)
        throw std::invalid_argument("tracker: frame must be (3,H,W)");
    if (box.w() <= 0.0 || box.h() <= 0.0)
        throw std::invalid_argument("tracker: zero-area init box");
    ad::NoGradGuard ng;
    gate_.reset();
    update_frames_.clear();
    frame_idx_ = 0;
    last_box_ = box;

    const CropSpec tspec = crop_region(box, opt_.template_offset);
    const Tensor tmpl =
        extract_crop(frame, tspec.cx, tspec.cy, tspec.side, opt_.template_size);
    template_feat_ = feature(tmpl);
    refresh_cached(frame, box);
}

TrackResult Tracker::track(const Tensor& frame) {
    if (!template_feat_) throw std::runtime_error("tracker: track before init");
    ad::NoGradGuard ng;
    frame_idx_ += 1;

    const CropSpec spec = crop_region(last_box_, opt_.search_offset);
    const Tensor crop =
        extract_crop(frame, spec.cx, spec.cy, spec.side, opt_.search_size);
    const ad::Var f_t = feature(crop);
    const ad::Var omega_s = net_.relation_block(f_t, search_feat_, false);
    const HeadOutputs out = net_.predict(cached_pair_, omega_s, f_t, false);
    const Decoded dec =
        decode_prediction(out.cls->val, out.box->val,
                          static_cast<double>(opt_.search_size), window_,
                          opt_.window_weight);

    TrackResult res;
    res.box = sane_box(box_to_frame(dec.box, spec, opt_.search_size),
                       static_cast<double>(frame.dim(2)),
                       static_cast<double>(frame.dim(1)));
    res.score = dec.score;
    res.updated = gate_.step(dec.score);
    if (res.updated) {
        refresh_cached(frame, res.box);
        update_frames_.push_back(frame_idx_);
    }
    last_box_ = res.box;
    return res;
}

}  // namespace mft
