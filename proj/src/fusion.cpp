#include "mftrack/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace mft {

namespace ad = mft::ad;

ad::Var pixel_correlation(const ad::Var& t, const ad::Var& s) {
    if (t->val.rank() != 4 || s->val.rank() != 4)
        throw std::invalid_argument("pixel_correlation: expected rank-4 inputs");
    if (t->val.dim(0) != s->val.dim(0) || t->val.dim(1) != s->val.dim(1))
        throw std::invalid_argument("pixel_correlation: batch/channel mismatch, " +
                                    Tensor::shape_str(t->val.shape()) + " vs " +
                                    Tensor::shape_str(s->val.shape()));
    const int64_t n = t->val.dim(0), c = t->val.dim(1);
    const int64_t ht = t->val.dim(2), wt = t->val.dim(3);
    const int64_t hs = s->val.dim(2), ws = s->val.dim(3);

    auto tm = ad::transpose12(ad::reshape(t, {n, c, ht * wt}));  // (N, ht*wt, C)
    auto sm = ad::reshape(s, {n, c, hs * ws});                   // (N, C, hs*ws)
    auto corr = ad::reshape(ad::bmm(tm, sm), {n, ht * wt, hs, ws});
    return ad::mul_scalar(corr, 1.0 / std::sqrt(static_cast<double>(c)));
}

}  // namespace mft
