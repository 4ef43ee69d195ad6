#include "mftrack/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mft {

namespace ad = mft::ad;

ProjectionMlp::ProjectionMlp(std::string name, int64_t c, Rng& rng) {
    l1_ = nn::Linear(name + ".l1", c, c, true, rng);
    bn_ = nn::BatchNorm(name + ".bn", c);
    l2_ = nn::Linear(name + ".l2", c, c, true, rng);
}

ad::Var ProjectionMlp::forward(const ad::Var& x, bool training) {
    return l2_.forward(ad::relu(bn_.forward(l1_.forward(x), training)));
}

void ProjectionMlp::collect_params(std::vector<nn::ParamRef>& out) const {
    l1_.collect_params(out);
    bn_.collect_params(out);
    l2_.collect_params(out);
}

void ProjectionMlp::collect_buffers(std::vector<nn::BufferRef>& out) {
    bn_.collect_buffers(out);
}

int64_t ProjectionMlp::param_count() const {
    return l1_.param_count() + bn_.param_count() + l2_.param_count();
}

ProjectionHeads::ProjectionHeads(const std::string& name, int64_t c, Rng& rng)
    : h1(name + ".h1", c, rng), h2(name + ".h2", c, rng) {}

void ProjectionHeads::collect_params(std::vector<nn::ParamRef>& out) const {
    h1.collect_params(out);
    h2.collect_params(out);
}

void ProjectionHeads::collect_buffers(std::vector<nn::BufferRef>& out) {
    h1.collect_buffers(out);
    h2.collect_buffers(out);
}

int64_t ProjectionHeads::param_count() const { return h1.param_count() + h2.param_count(); }

ad::Var global_avg_pool(const ad::Var& x) {
    if (x->val.rank() != 4) throw std::invalid_argument("global_avg_pool: expected rank 4");
    const int64_t n = x->val.dim(0), c = x->val.dim(1);
    return ad::reshape(ad::mean(x, {2, 3}), {n, c});
}

ad::Var cosine_distance_rows(const ad::Var& z1, const ad::Var& z2) {
    // eps on the norms guards the value, eps^2 under the root keeps the
    // derivative finite for exactly-zero rows
    constexpr double kEps = 1e-12;
    auto dot = ad::sum(ad::mul(z1, z2), {1});  // (N,1)
    auto n1 = ad::add_scalar(
        ad::sqrt(ad::add_scalar(ad::sum(ad::mul(z1, z1), {1}), kEps * kEps)), kEps);
    auto n2 = ad::add_scalar(
        ad::sqrt(ad::add_scalar(ad::sum(ad::mul(z2, z2), {1}), kEps * kEps)), kEps);
    auto cos = ad::div(dot, ad::mul(n1, n2));
    return ad::mean_all(ad::add_scalar(ad::neg(cos), 1.0));
}

ad::Var symmetric_relation_distance(const ad::Var& x1, const ad::Var& x2, ProjectionHeads& p,
                                    bool training) {
    auto p1 = global_avg_pool(x1);
    auto p2 = global_avg_pool(x2);
    auto d1 = cosine_distance_rows(p.h1.forward(p1, training),
                                   ad::detach(p.h2.forward(p2, training)));
    auto d2 = cosine_distance_rows(p.h1.forward(p2, training),
                                   ad::detach(p.h2.forward(p1, training)));
    return ad::mul_scalar(ad::add(d1, d2), 0.5);
}

void transitive_relation_losses(const ad::Var& omega_t_pair, const ad::Var& omega_s_pair,
                                const ad::Var& f_frame, ProjectionHeads& p, bool training,
                                ad::Var& l_tr, ad::Var& l_reg) {
    l_tr = symmetric_relation_distance(omega_t_pair, omega_s_pair, p, training);
    l_reg = symmetric_relation_distance(omega_t_pair, f_frame, p, training);
}

double giou_loss(const BBox& a, const BBox& b) {
    const double inter = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1)) *
                         std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double uni = a.area() + b.area() - inter;
    const double hull = std::max(0.0, std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                        std::max(0.0, std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
    if (hull <= 0.0) return 0.0;  // both boxes are the same degenerate point
    const double iou_v = uni > 0.0 ? inter / uni : 0.0;
    return 1.0 - (iou_v - (hull - uni) / hull);
}

namespace {

// broadcastable (N,1,1,1) constant from one gt coordinate column
ad::Var gt_coord(const Tensor& gt, int64_t k) {
    const int64_t n = gt.dim(0);
    Tensor t({n, 1, 1, 1});
    for (int64_t i = 0; i < n; ++i) t[i] = gt.at2(i, k);
    return ad::constant(std::move(t));
}

}  // namespace

ad::Var giou_loss_cells(const ad::Var& box, const Tensor& gt, const Tensor& mask) {
    if (box->val.rank() != 4 || box->val.dim(1) != 4)
        throw std::invalid_argument("giou_loss_cells: box must be (N,4,h,w)");
    double mask_sum = 0.0;
    for (int64_t i = 0; i < mask.numel(); ++i) mask_sum += mask[i];
    if (mask_sum == 0.0) return ad::constant(Tensor::scalar(0.0));

    auto px1 = ad::slice(box, 1, 0, 1);  // (N,1,h,w)
    auto py1 = ad::slice(box, 1, 1, 1);
    auto px2 = ad::slice(box, 1, 2, 1);
    auto py2 = ad::slice(box, 1, 3, 1);
    auto gx1 = gt_coord(gt, 0), gy1 = gt_coord(gt, 1);
    auto gx2 = gt_coord(gt, 2), gy2 = gt_coord(gt, 3);
    auto zero = ad::constant(Tensor({1, 1, 1, 1}));

    auto iw = ad::maximum(ad::sub(ad::minimum(px2, gx2), ad::maximum(px1, gx1)), zero);
    auto ih = ad::maximum(ad::sub(ad::minimum(py2, gy2), ad::maximum(py1, gy1)), zero);
    auto inter = ad::mul(iw, ih);
    auto area_p = ad::mul(ad::maximum(ad::sub(px2, px1), zero),
                          ad::maximum(ad::sub(py2, py1), zero));
    auto area_g = ad::mul(ad::sub(gx2, gx1), ad::sub(gy2, gy1));
    auto uni = ad::sub(ad::add(area_p, area_g), inter);
    auto iou_v = ad::div(inter, uni);  // gt has positive area, union > 0
    auto hull = ad::mul(ad::sub(ad::maximum(px2, gx2), ad::minimum(px1, gx1)),
                        ad::sub(ad::maximum(py2, gy2), ad::minimum(py1, gy1)));
    auto giou = ad::sub(iou_v, ad::div(ad::sub(hull, uni), hull));
    auto loss = ad::add_scalar(ad::neg(giou), 1.0);  // (N,1,h,w)
    auto masked = ad::mul(loss, ad::constant(mask));
    return ad::mul_scalar(ad::sum_all(masked), 1.0 / mask_sum);
}

namespace {

// x^g for strictly positive x; plain products for the default g=2
ad::Var pow_pos(const ad::Var& x, double g) {
    if (g == 2.0) return ad::mul(x, x);
    if (g == 1.0) return x;
    return ad::exp(ad::mul_scalar(ad::log(x), g));
}

}  // namespace

ad::Var focal_loss(const ad::Var& cls, const Tensor& target, double alpha, double gamma) {
    if (!cls->val.same_shape(target))
        throw std::invalid_argument("focal_loss: cls/target shape mismatch");
    auto p = ad::clamp(cls, 1e-7, 1.0 - 1e-7);
    auto one_minus_p = ad::add_scalar(ad::neg(p), 1.0);
    auto pos = ad::mul_scalar(ad::mul(pow_pos(one_minus_p, gamma), ad::log(p)), -alpha);
    auto neg = ad::mul_scalar(ad::mul(pow_pos(p, gamma), ad::log(one_minus_p)),
                              -(1.0 - alpha));
    auto t = ad::constant(target);
    auto not_t = ad::constant([&] {
        Tensor inv(target.shape());
        for (int64_t i = 0; i < target.numel(); ++i) inv[i] = 1.0 - target[i];
        return inv;
    }());
    return ad::mean_all(ad::add(ad::mul(t, pos), ad::mul(not_t, neg)));
}

Tensor classification_target_map(const BBox& gt, int64_t grid, double search_size) {
    Tensor map({grid, grid});
    if (gt.area() <= 0.0) return map;
    const double stride = search_size / static_cast<double>(grid);
    for (int64_t r = 0; r < grid; ++r)
        for (int64_t c = 0; c < grid; ++c) {
            const double cx = (static_cast<double>(c) + 0.5) * stride;
            const double cy = (static_cast<double>(r) + 0.5) * stride;
            if (cx >= gt.x1 && cx <= gt.x2 && cy >= gt.y1 && cy <= gt.y2)
                map.at2(r, c) = 1.0;
        }
    return map;
}

ad::Var total_loss(const ad::Var& l_iou, const ad::Var& l_fl, const ad::Var& l_tr,
                   const ad::Var& l_reg, const LossWeights& w) {
    // The two relation terms share a weight, so they are combined first;
    // summing left to right instead lands one ulp off the intended total for
    // unit losses under the default weights.
    auto relation = ad::add(ad::mul_scalar(l_tr, w.lambda_tr),
                            ad::mul_scalar(l_reg, w.lambda_reg));
    return ad::add(ad::add(l_iou, ad::mul_scalar(l_fl, w.lambda_fl)), relation);
}

}  // namespace mft
