#ifndef MFTRACK_ADAPTATION_HPP
#define MFTRACK_ADAPTATION_HPP

#include <string>

#include "mftrack/tensor.hpp"

namespace mft::adapt {

// Test-time normalization policies for the prediction heads. All of them are
// backward-free: they move batch-norm statistics only, never weights.
enum class Mode { Off, Dtta, Momentum, Dua, AdaBn };

struct Config {
    Mode mode = Mode::Off;
    double lambda_bn = 0.1;        // dtta blend toward instance stats
    double momentum_rate = 1.0 / 17.0;  // fixed-rate recursive baseline
    double dua_init = 0.1;         // decaying-momentum baseline schedule
    double dua_decay = 0.94;
    double dua_min = 0.005;
};

Mode mode_from_string(const std::string& s);
std::string mode_to_string(Mode m);

// Per-layer transient state for the recursive baselines. The frozen source
// statistics live in the owning batch-norm layer and are never written here.
struct LayerState {
    Tensor adapted_mean;  // (C), evolves under momentum/dua
    Tensor adapted_var;
    double dua_rate = 0.1;
};

// mixed = (1-lambda)*anchor + lambda*inst, with an exact branch at lambda==0
// so the degenerate setting reproduces frozen inference bit-for-bit.
Tensor blend(const Tensor& anchor, const Tensor& inst, double lambda);

// Resolves the statistics a batch-norm layer should normalize with for the
// current input, updating `state` per the recursive baselines. `src_*` are
// the frozen source statistics; `inst_*` the current input's channel stats.
void effective_stats(const Config& cfg, LayerState& state, const Tensor& src_mean,
                     const Tensor& src_var, const Tensor& inst_mean, const Tensor& inst_var,
                     Tensor& eff_mean, Tensor& eff_var);

// Restores a layer's transient state to the frozen source statistics.
void reset_state(const Config& cfg, LayerState& state, const Tensor& src_mean,
                 const Tensor& src_var);

}  // namespace mft::adapt

#endif
