#ifndef MFTRACK_FUSION_HPP
#define MFTRACK_FUSION_HPP

#include "mftrack/autodiff.hpp"

namespace mft {

// Pixel-wise cross correlation: every spatial vector of the template map acts
// as a 1x1 kernel over the search map. t: (N,C,ht,wt), s: (N,C,hs,ws) ->
// (N, ht*wt, hs, ws), inner products scaled by 1/sqrt(C) so score magnitudes
// stay width-independent.
ad::Var pixel_correlation(const ad::Var& t, const ad::Var& s);

}  // namespace mft

#endif
