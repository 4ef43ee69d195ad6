#ifndef MFTRACK_EVALUATION_HPP
#define MFTRACK_EVALUATION_HPP

#include <string>
#include <vector>

#include "mftrack/adaptation.hpp"
#include "mftrack/sampling.hpp"
#include "mftrack/tracker.hpp"

namespace mft {

// Number of overlap thresholds on the success curve: 0, 0.05, ..., 1.0.
constexpr int kCurvePoints = 21;

struct Metrics {
    double auc = 0.0;             // mean of the 21-point success curve
    double op50 = 0.0;            // success at overlap 0.5
    double op75 = 0.0;            // success at overlap 0.75
    double precision = 0.0;       // center error <= 20 px
    double norm_precision = 0.0;  // center error / sqrt(gt area) <= 0.2
    double mean_iou = 0.0;
};

// Fraction of frames whose overlap reaches each threshold. A frame counts as
// a success at threshold t when iou + 1e-9 >= t, so exact-threshold overlaps
// land on the inclusive side despite rounding.
std::vector<double> success_curve(const std::vector<double>& ious);

Metrics compute_metrics(const std::vector<BBox>& pred, const std::vector<BBox>& gt);

struct SequenceResult {
    std::string name;
    Metrics metrics;
    std::vector<BBox> boxes;
    std::vector<double> scores;
    std::vector<int64_t> update_frames;
};

struct OpeResult {
    std::vector<SequenceResult> sequences;
    Metrics mean;                    // unweighted mean over sequences
    std::vector<double> mean_curve;  // mean success curve over sequences
};

// One-pass evaluation: init from the first ground-truth box, track the rest,
// score every frame with the first one standing in as its own prediction.
// Adaptation state resets before each sequence.
OpeResult ope_run(TrackNet& net, const std::vector<SequenceRecord>& dataset,
                  const TrackerOptions& topt, const adapt::Config& adapt_cfg);

struct BenchResult {
    std::string block;
    int64_t params = 0;
    int64_t macs = 0;
    int64_t repeats = 0;
    double median_ms = 0.0;
    double p95_ms = 0.0;
};

// Multiply-accumulate counts cover convolutions and the query contractions;
// elementwise gates, normalizations, and activations are excluded.
int64_t filter_macs(int64_t c2, int64_t squeeze, int64_t h, int64_t w, bool polarized);
int64_t tracking_step_macs(const ModelConfig& cfg);

// block is "fmf", "psa", or "full". fmf/psa time one filter forward on a
// (1, 2C, 16, 16) input; full times a complete per-frame tracking step with
// cached template features.
BenchResult bench_block(const std::string& block, const ModelConfig& cfg,
                        int64_t repeats, uint64_t seed);

}  // namespace mft

#endif
