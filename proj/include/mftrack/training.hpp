#ifndef MFTRACK_TRAINING_HPP
#define MFTRACK_TRAINING_HPP

#include <cstdint>
#include <ostream>
#include <vector>

#include "mftrack/model.hpp"
#include "mftrack/sampling.hpp"

namespace mft {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Gradients are read from each parameter's grad
// tensor; an empty grad counts as zero.
class Adam {
public:
    Adam(std::vector<nn::ParamRef> params, AdamConfig cfg);

    void zero_grad();
    void step();
    int64_t steps_taken() const { return t_; }

private:
    std::vector<nn::ParamRef> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

// Scales all gradients so their joint L2 norm is at most max_norm.
// Returns the pre-clip norm.
double clip_global_norm(const std::vector<nn::ParamRef>& params, double max_norm);

struct TrainingOutputs {
    HeadOutputs heads;
    ad::Var omega_t_pair;  // filtered dual-template representation
    ad::Var omega_s_pair;  // filtered dual-search representation
    ad::Var f_frame;       // raw current-frame features
};

// Full training-mode forward over the four crops (each (N,3,s,s)).
TrainingOutputs forward_training(TrackNet& net, const ad::Var& tmpl, const ad::Var& dyn,
                                 const ad::Var& past, const ad::Var& cur);

struct TrainConfig {
    int64_t steps = 300;
    int64_t batch = 8;
    int64_t delta = 150;
    int64_t grid = 16;
    int64_t template_size = 128;
    int64_t search_size = 256;
    double clip_norm = 10.0;
    int64_t log_every = 10;
    uint64_t seed = 1;
    AdamConfig adam;
    AugmentParams aug;
    LossWeights weights;
};

struct Batch {
    Tensor tmpl, dyn, past, cur;  // (N,3,s,s)
    Tensor gt;                    // (N,4) corners normalized to [0,1]
    Tensor target;                // (N,1,grid,grid)
};

Batch assemble_batch(const std::vector<SequenceRecord>& dataset, const TrainConfig& cfg,
                     Rng& rng);

struct StepStats {
    double loss = 0.0;
    double l_iou = 0.0, l_fl = 0.0, l_tr = 0.0, l_reg = 0.0;
    double grad_norm = 0.0;
};

// One optimization step on an assembled batch. Throws NumericError when the
// loss stops being finite.
StepStats train_step(TrackNet& net, Adam& opt, const Batch& batch,
                     const TrainConfig& cfg);

// Full loop: sample, step, log every log_every steps when log is non-null.
// Returns the stats of the final step.
StepStats train(TrackNet& net, const std::vector<SequenceRecord>& dataset,
                const TrainConfig& cfg, std::ostream* log);

}  // namespace mft

#endif
