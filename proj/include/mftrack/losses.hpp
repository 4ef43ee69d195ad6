#ifndef MFTRACK_LOSSES_HPP
#define MFTRACK_LOSSES_HPP

#include <string>
#include <vector>

#include "mftrack/box.hpp"
#include "mftrack/nn.hpp"

namespace mft {

struct LossWeights {
    double lambda_fl = 1.0;
    double lambda_tr = 1.0 / 3.0;
    double lambda_reg = 1.0 / 3.0;
};

// Two-layer MLP (C -> C, hidden width C, batch norm + ReLU between) used by
// the relation losses during training only.
class ProjectionMlp {
public:
    ProjectionMlp() = default;
    ProjectionMlp(std::string name, int64_t c, Rng& rng);

    ad::Var forward(const ad::Var& x, bool training);  // (N,C) -> (N,C)
    void collect_params(std::vector<nn::ParamRef>& out) const;
    void collect_buffers(std::vector<nn::BufferRef>& out);
    int64_t param_count() const;

private:
    nn::Linear l1_, l2_;
    nn::BatchNorm bn_;
};

// Predictor/projector pair; h2 is the branch behind the stop-gradient.
struct ProjectionHeads {
    ProjectionMlp h1, h2;

    ProjectionHeads() = default;
    ProjectionHeads(const std::string& name, int64_t c, Rng& rng);
    void collect_params(std::vector<nn::ParamRef>& out) const;
    void collect_buffers(std::vector<nn::BufferRef>& out);
    int64_t param_count() const;
};

// (N,C,h,w) -> (N,C)
ad::Var global_avg_pool(const ad::Var& x);

// Mean over rows of 1 - cosine(z1_i, z2_i); norms guarded with eps 1e-12.
ad::Var cosine_distance_rows(const ad::Var& z1, const ad::Var& z2);

// 0.5 * [D(h1(p1), stopgrad(h2(p2))) + D(h1(p2), stopgrad(h2(p1)))] where
// p = global average pool of the input map. Gradients never reach h2.
ad::Var symmetric_relation_distance(const ad::Var& x1, const ad::Var& x2, ProjectionHeads& p,
                                    bool training);

// l_tr ties the filtered template pair to the filtered search pair; l_reg
// ties the filtered template pair to the raw per-frame search features.
void transitive_relation_losses(const ad::Var& omega_t_pair, const ad::Var& omega_s_pair,
                                const ad::Var& f_frame, ProjectionHeads& p, bool training,
                                ad::Var& l_tr, ad::Var& l_reg);

// Scalar reference: 1 - [IoU - (hull - union)/hull].
double giou_loss(const BBox& a, const BBox& b);

// Differentiable version over prediction cells. box: (N,4,h,w) normalized
// corners; gt: (N,4) normalized corners; mask: (N,1,h,w) positive cells.
// Mean over positive cells; zero when the mask is empty.
ad::Var giou_loss_cells(const ad::Var& box, const Tensor& gt, const Tensor& mask);

// Mean over all cells of -alpha_t (1-p_t)^gamma log(p_t), probabilities
// clamped to [1e-7, 1-1e-7]. cls and target: (N,1,h,w).
ad::Var focal_loss(const ad::Var& cls, const Tensor& target, double alpha = 0.25,
                   double gamma = 2.0);

// Cell r,c is positive iff its center ((c+0.5)*stride, (r+0.5)*stride) lies
// inside gt, borders inclusive. Returns (grid, grid).
Tensor classification_target_map(const BBox& gt, int64_t grid, double search_size);

ad::Var total_loss(const ad::Var& l_iou, const ad::Var& l_fl, const ad::Var& l_tr,
                   const ad::Var& l_reg, const LossWeights& w);

}  // namespace mft

#endif
