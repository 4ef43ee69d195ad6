#include "mftrack/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <utility>

#include "mftrack/errors.hpp"

namespace mft {

Adam::Adam(std::vector<nn::ParamRef> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.var->val.shape());
        v_.emplace_back(p.var->val.shape());
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
}

void Adam::step() {
    t_ += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& node = *params_[i].var;
        if (node.grad.empty()) continue;
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (int64_t j = 0; j < node.val.numel(); ++j) {
            const double g = node.grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            node.val[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

double clip_global_norm(const std::vector<nn::ParamRef>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (p.var->grad.empty()) continue;
        for (int64_t j = 0; j < p.var->grad.numel(); ++j) sq += p.var->grad[j] * p.var->grad[j];
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const auto& p : params) {
            if (p.var->grad.empty()) continue;
            for (int64_t j = 0; j < p.var->grad.numel(); ++j) p.var->grad[j] *= scale;
        }
    }
    return norm;
}

TrainingOutputs forward_training(TrackNet& net, const ad::Var& tmpl, const ad::Var& dyn,
                                 const ad::Var& past, const ad::Var& cur) {
    const ad::Var f_t = net.extract(tmpl, true);
    const ad::Var f_d = net.extract(dyn, true);
    const ad::Var f_s = net.extract(past, true);
    TrainingOutputs out;
    out.f_frame = net.extract(cur, true);
    out.omega_t_pair = net.relation_block(f_d, f_t, true);
    out.omega_s_pair = net.relation_block(out.f_frame, f_s, true);
    out.heads = net.predict(out.omega_t_pair, out.omega_s_pair, out.f_frame, true);
    return out;
}

Batch assemble_batch(const std::vector<SequenceRecord>& dataset, const TrainConfig& cfg,
                     Rng& rng) {
    if (dataset.empty()) throw DataError("assemble_batch: empty dataset");
    const int64_t n = cfg.batch;
    if (n < 1) throw std::invalid_argument("assemble_batch: batch must be >= 1");
    const int64_t ts = cfg.template_size, ss = cfg.search_size, g = cfg.grid;

    Batch b;
    b.tmpl = Tensor({n, 3, ts, ts});
    b.dyn = Tensor({n, 3, ts, ts});
    b.past = Tensor({n, 3, ss, ss});
    b.cur = Tensor({n, 3, ss, ss});
    b.gt = Tensor({n, 4});
    b.target = Tensor({n, 1, g, g});

    for (int64_t i = 0; i < n; ++i) {
        const auto& rec =
            dataset[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(dataset.size()) - 1))];
        const TrainingTuple t =
            sample_training_tuple(rec, cfg.delta, cfg.aug, rng, ts, ss, g);
        std::copy(t.tmpl.vec().begin(), t.tmpl.vec().end(),
                  b.tmpl.vec().begin() + i * 3 * ts * ts);
        std::copy(t.dyn.vec().begin(), t.dyn.vec().end(),
                  b.dyn.vec().begin() + i * 3 * ts * ts);
        std::copy(t.past.vec().begin(), t.past.vec().end(),
                  b.past.vec().begin() + i * 3 * ss * ss);
        std::copy(t.cur.vec().begin(), t.cur.vec().end(),
                  b.cur.vec().begin() + i * 3 * ss * ss);
        const double s = static_cast<double>(ss);
        b.gt[i * 4 + 0] = t.gt.x1 / s;
        b.gt[i * 4 + 1] = t.gt.y1 / s;
        b.gt[i * 4 + 2] = t.gt.x2 / s;
        b.gt[i * 4 + 3] = t.gt.y2 / s;
        std::copy(t.target.vec().begin(), t.target.vec().end(),
                  b.target.vec().begin() + i * g * g);
    }
    return b;
}

StepStats train_step(TrackNet& net, Adam& opt, const Batch& batch,
                     const TrainConfig& cfg) {
    opt.zero_grad();
    const TrainingOutputs out =
        forward_training(net, ad::constant(batch.tmpl), ad::constant(batch.dyn),
                         ad::constant(batch.past), ad::constant(batch.cur));

    const ad::Var l_iou = giou_loss_cells(out.heads.box, batch.gt, batch.target);
    const ad::Var l_fl = focal_loss(out.heads.cls, batch.target);
    ad::Var l_tr, l_reg;
    transitive_relation_losses(out.omega_t_pair, out.omega_s_pair, out.f_frame,
                               net.projection, true, l_tr, l_reg);
    const ad::Var loss = total_loss(l_iou, l_fl, l_tr, l_reg, cfg.weights);

    StepStats stats;
    stats.loss = loss->val[0];
    stats.l_iou = l_iou->val[0];
    stats.l_fl = l_fl->val[0];
    stats.l_tr = l_tr->val[0];
    stats.l_reg = l_reg->val[0];
    if (!std::isfinite(stats.loss))
        throw NumericError("training loss is not finite");

    ad::backward(loss);
    stats.grad_norm = clip_global_norm(net.parameters(), cfg.clip_norm);
    opt.step();
    return stats;
}

StepStats train(TrackNet& net, const std::vector<SequenceRecord>& dataset,
                const TrainConfig& cfg, std::ostream* log) {
    Rng rng(cfg.seed);
    Adam opt(net.parameters(), cfg.adam);
    StepStats stats;
    for (int64_t step = 1; step <= cfg.steps; ++step) {
        const Batch batch = assemble_batch(dataset, cfg, rng);
        stats = train_step(net, opt, batch, cfg);
        if (log && (step % cfg.log_every == 0 || step == cfg.steps)) {
            char line[160];
            std::snprintf(line, sizeof(line),
                          "step %lld loss %.4f iou %.4f focal %.4f tr %.4f reg %.4f "
                          "gnorm %.4f",
                          static_cast<long long>(step), stats.loss, stats.l_iou,
                          stats.l_fl, stats.l_tr, stats.l_reg, stats.grad_norm);
            (*log) << line << "\n";
        }
    }
    return stats;
}

}  // namespace mft
