#ifndef MFTRACK_MODEL_HPP
#define MFTRACK_MODEL_HPP

#include <string>
#include <vector>

#include "mftrack/backbone.hpp"
#include "mftrack/filtration.hpp"
#include "mftrack/fusion.hpp"
#include "mftrack/heads.hpp"
#include "mftrack/losses.hpp"

namespace mft {

struct ModelConfig {
    std::vector<int64_t> widths{16, 32, 64, 96};  // backbone stage widths
    int64_t working_width = 128;                  // C
    int64_t head_width = 128;                     // fused map channels
    int64_t squeeze = 2;                          // filter squeeze rate
};

// The full network: shared backbone, mixed filtration with channel reduction
// applied to both concatenated pairs, pixel correlation, fusion, prediction
// heads, and the training-only projection heads.
class TrackNet {
public:
    TrackNet(const ModelConfig& cfg, uint64_t seed);

    // backbone + channel adapter, shared across all four inputs
    ad::Var extract(const ad::Var& img, bool training);

    // concat(first, second) -> mixed filter -> 2C->C reduction
    ad::Var relation_block(const ad::Var& first, const ad::Var& second, bool training,
                           FilterTrace* trace = nullptr);

    // correlation of the two filtered representations, fusion with the
    // per-frame features, prediction heads
    HeadOutputs predict(const ad::Var& omega_t_pair, const ad::Var& omega_s_pair,
                        const ad::Var& f_frame, bool training);

    std::vector<nn::ParamRef> parameters() const;
    std::vector<nn::BufferRef> buffers();
    int64_t param_count() const;

    // adaptation surface: prediction-head batch norms only
    std::vector<nn::BatchNorm*> adaptable_bn_layers() { return heads.bn_layers(); }
    void set_adaptation(const adapt::Config* cfg);
    void set_bn_observer(const nn::BnObserver* obs);
    void reset_adaptation();

    ModelConfig cfg;
    Backbone backbone;
    MixedFilter filter;
    nn::Conv2d reduce;  // 2C -> C, linear
    nn::Conv2d fuse;    // (corr + C) -> head_width, linear
    Heads heads;
    ProjectionHeads projection;
};

// Self-describing binary container: magic, version, config echo, then named
// double arrays for every parameter and buffer.
void save_checkpoint(const std::string& path, TrackNet& net, const std::string& config_json);
void load_checkpoint(const std::string& path, TrackNet& net);
std::string read_checkpoint_config(const std::string& path);

}  // namespace mft

#endif
