#include "mftrack/adaptation.hpp"

#include <algorithm>
#include <stdexcept>

namespace mft::adapt {

Mode mode_from_string(const std::string& s) {
    if (s == "off") return Mode::Off;
    if (s == "dtta") return Mode::Dtta;
    if (s == "momentum") return Mode::Momentum;
    if (s == "dua") return Mode::Dua;
    if (s == "adabn") return Mode::AdaBn;
    throw std::invalid_argument("unknown adaptation mode: " + s);
}

std::string mode_to_string(Mode m) {
    switch (m) {
        case Mode::Off: return "off";
        case Mode::Dtta: return "dtta";
        case Mode::Momentum: return "momentum";
        case Mode::Dua: return "dua";
        case Mode::AdaBn: return "adabn";
    }
    return "off";
}

Tensor blend(const Tensor& anchor, const Tensor& inst, double lambda) {
    if (lambda == 0.0) return anchor;
    Tensor out(anchor.shape());
    for (int64_t i = 0; i < anchor.numel(); ++i)
        out[i] = (1.0 - lambda) * anchor[i] + lambda * inst[i];
    return out;
}

void effective_stats(const Config& cfg, LayerState& state, const Tensor& src_mean,
                     const Tensor& src_var, const Tensor& inst_mean, const Tensor& inst_var,
                     Tensor& eff_mean, Tensor& eff_var) {
    switch (cfg.mode) {
        case Mode::Off:
            eff_mean = src_mean;
            eff_var = src_var;
            return;
        case Mode::Dtta:
            // memoryless: always anchored to the frozen source statistics
            eff_mean = blend(src_mean, inst_mean, cfg.lambda_bn);
            eff_var = blend(src_var, inst_var, cfg.lambda_bn);
            return;
        case Mode::Momentum:
            // normalize with the pre-update stats, then step the recursion
            eff_mean = state.adapted_mean;
            eff_var = state.adapted_var;
            state.adapted_mean = blend(state.adapted_mean, inst_mean, cfg.momentum_rate);
            state.adapted_var = blend(state.adapted_var, inst_var, cfg.momentum_rate);
            return;
        case Mode::Dua:
            eff_mean = state.adapted_mean;
            eff_var = state.adapted_var;
            state.adapted_mean = blend(state.adapted_mean, inst_mean, state.dua_rate);
            state.adapted_var = blend(state.adapted_var, inst_var, state.dua_rate);
            state.dua_rate = std::max(cfg.dua_min, state.dua_rate * cfg.dua_decay);
            return;
        case Mode::AdaBn:
            eff_mean = inst_mean;
            eff_var = inst_var;
            return;
    }
}

void reset_state(const Config& cfg, LayerState& state, const Tensor& src_mean,
                 const Tensor& src_var) {
    state.adapted_mean = src_mean;
    state.adapted_var = src_var;
    state.dua_rate = cfg.dua_init;
}

}  // namespace mft::adapt
