#ifndef MFTRACK_SAMPLING_HPP
#define MFTRACK_SAMPLING_HPP

#include <string>
#include <vector>

#include "mftrack/box.hpp"
#include "mftrack/image.hpp"
#include "mftrack/rng.hpp"
#include "mftrack/tensor.hpp"

namespace mft {

// Square context crop: side = sqrt((w+m)(h+m)) with margin m scaled by the
// box perimeter, centered on the box.
struct CropSpec {
    double cx = 0.0, cy = 0.0, side = 0.0;
};

CropSpec crop_region(const BBox& box, double context_offset);

// Affine maps between frame pixels and crop pixels for a given spec.
BBox box_to_crop(const BBox& b, const CropSpec& spec, int64_t out_size);
BBox box_to_frame(const BBox& b, const CropSpec& spec, int64_t out_size);

struct AugmentParams {
    double template_offset = 0.2;
    double search_offset = 2.0;
    double scale_lo = 0.65, scale_hi = 1.35;
    double shift_lo = 0.92, shift_hi = 1.08;
    double gain_lo = 0.9, gain_hi = 1.1;
    double brightness = 0.05;
};

// Scales the crop side by u1 and multiplies the center coordinates by
// (u2, u3), drawn uniformly from the configured ranges in that order.
void apply_geometric_augment(CropSpec& spec, const AugmentParams& aug, Rng& rng);

// Independent per-channel gain plus a shared brightness shift.
void apply_color_jitter(Tensor& img, const AugmentParams& aug, Rng& rng);

// One sequence on disk: a directory of numbered PPM frames plus
// groundtruth.txt with one "x,y,w,h" line per frame.
struct SequenceRecord {
    std::string name;
    std::string dir;
    std::vector<std::string> frame_files;
    std::vector<BBox> boxes;

    int64_t size() const { return static_cast<int64_t>(frame_files.size()); }
};

SequenceRecord load_sequence(const std::string& dir);
std::vector<SequenceRecord> load_dataset(const std::string& dir);
Tensor load_frame(const SequenceRecord& rec, int64_t idx);

// One training sample: static template, dynamic template, past search
// region, current search region, and supervision in current-search pixels.
struct TrainingTuple {
    Tensor tmpl;    // (3,T,T) static template
    Tensor dyn;     // (3,T,T) dynamic template, center cut of `past`
    Tensor past;    // (3,S,S) past search region
    Tensor cur;     // (3,S,S) current search region, geometrically augmented
    BBox gt;        // ground truth in `cur` pixels, clamped to the crop
    Tensor target;  // (grid,grid) classification map
    int64_t i = 0, j = 0, k = 0;  // sampled frame indices, i <= k <= j
};

TrainingTuple sample_training_tuple(const SequenceRecord& rec, int64_t delta,
                                    const AugmentParams& aug, Rng& rng,
                                    int64_t template_size, int64_t search_size,
                                    int64_t grid);

// Synthetic corpus: a textured shape bouncing over a static textured
// background, with optional per-frame degradation.
struct SynthSpec {
    int64_t length = 100;
    int64_t width = 192, height = 144;
    double min_obj = 48.0, max_obj = 72.0;
    Corruption corruption = Corruption::None;
    double severity = 0.0;
};

SequenceRecord synth_generate_sequence(const SynthSpec& spec, const std::string& dir,
                                       Rng& rng);

}  // namespace mft

#endif
