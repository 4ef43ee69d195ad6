#ifndef MFTRACK_TRACKER_HPP
#define MFTRACK_TRACKER_HPP

#include <cstdint>
#include <vector>

#include "mftrack/box.hpp"
#include "mftrack/model.hpp"
#include "mftrack/sampling.hpp"

namespace mft {

struct UpdatePolicy {
    int64_t n = 60;          // minimum frames between refreshes
    double lambda_d = 0.25;  // moving-average rate for the confidence baseline
};

// Decides when the dynamic template and past search region get refreshed.
// Each frame: bump the counter, fire when the counter has reached n and the
// confidence beats the running average, reset the counter on firing, then
// fold the confidence into the average regardless of the outcome.
class ScoreUpdateGate {
public:
    explicit ScoreUpdateGate(UpdatePolicy policy) : policy_(policy) {}

    bool step(double score) {
        counter_ += 1;
        const bool update = counter_ >= policy_.n && score > average_;
        if (update) counter_ = 0;
        average_ = (1.0 - policy_.lambda_d) * average_ + policy_.lambda_d * score;
        return update;
    }

    double average() const { return average_; }
    int64_t counter() const { return counter_; }
    void reset() {
        counter_ = 0;
        average_ = 1.0;
    }

private:
    UpdatePolicy policy_;
    int64_t counter_ = 0;
    double average_ = 1.0;
};

struct TrackerOptions {
    UpdatePolicy policy;
    double window_weight = 0.3;
    double template_offset = 0.2;
    double search_offset = 2.0;
    int64_t template_size = 128;
    int64_t search_size = 256;
};

struct TrackResult {
    BBox box;
    double score = 0.0;
    bool updated = false;
};

// Online tracker around a trained network. The anchor template feature is
// frozen at init; the dynamic template and past search features are cached
// and refreshed only when the update gate fires.
class Tracker {
public:
    Tracker(TrackNet& net, TrackerOptions opt);

    void init(const Tensor& frame, const BBox& box);
    TrackResult track(const Tensor& frame);

    const BBox& last_box() const { return last_box_; }
    const std::vector<int64_t>& update_frames() const { return update_frames_; }
    const ScoreUpdateGate& gate() const { return gate_; }

private:
    ad::Var feature(const Tensor& img);
    void refresh_cached(const Tensor& frame, const BBox& box);

    TrackNet& net_;
    TrackerOptions opt_;
    ScoreUpdateGate gate_;
    Tensor window_;
    BBox last_box_{};
    ad::Var template_feat_;
    ad::Var search_feat_;
    ad::Var cached_pair_;
    int64_t frame_idx_ = 0;
    std::vector<int64_t> update_frames_;
};

}  // namespace mft

#endif
