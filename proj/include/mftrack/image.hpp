#ifndef MFTRACK_IMAGE_HPP
#define MFTRACK_IMAGE_HPP

#include <string>

#include "mftrack/rng.hpp"
#include "mftrack/tensor.hpp"

namespace mft {

// Images are (3,H,W) tensors with values in [0,1] in memory. File IO uses
// 8-bit binary PPM and clamps at quantization time; everything upstream works
// in unclamped linear values.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& img);

// Square crop of side `side` centered at (cx, cy) in source pixels, sampled
// bilinearly onto out_size x out_size. Taps outside the source are zero.
Tensor extract_crop(const Tensor& frame, double cx, double cy, double side,
                    int64_t out_size);

// Pixel-exact copy of the centered out x out window of a (C,H,W) image.
// H and W must be at least out and share its parity.
Tensor center_crop(const Tensor& img, int64_t out);

enum class Corruption { None, Brightness, Blur, Noise };

Corruption corruption_from_string(const std::string& s);
std::string corruption_to_string(Corruption c);

// In-place frame degradation. Brightness adds `severity` to every value,
// blur is a box filter of radius round(severity), noise adds N(0, severity).
// Values are left unclamped; write_ppm clamps.
void apply_corruption(Tensor& frame, Corruption mode, double severity, Rng& rng);

}  // namespace mft

#endif
