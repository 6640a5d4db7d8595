#ifndef SCMT_AUGMENT_HPP_
#define SCMT_AUGMENT_HPP_

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "scmt/common.hpp"
#include "scmt/rng.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

// One draw of the stochastic shift pair used by SCT/SCMT: a whole-frame time
// shift and a whole-bin mel shift.
struct ShiftSpec {
  int tau_frames = 0;  // signed, along the time axis
  int nu_bins = 0;     // signed, along the mel axis
};

struct ShiftParams {
  double max_shift_seconds = 2.0;
  int max_freq_bins = 4;
  double frames_per_second = 16000.0 / 255.0;  // input spectrogram frame rate

  int max_time_frames() const {
    return static_cast<int>(std::floor(max_shift_seconds * frames_per_second));
  }
};

// Truncated normal with the bound at two standard deviations, rounded to
// whole frames/bins. Rejection keeps the stated range exact.
inline ShiftSpec sample_shift(Rng& rng, const ShiftParams& params = {}) {
  ShiftSpec s;
  const double tau_sec = rng.truncated_normal(0.0, params.max_shift_seconds / 2.0,
                                              -params.max_shift_seconds,
                                              params.max_shift_seconds);
  s.tau_frames = static_cast<int>(std::llround(tau_sec * params.frames_per_second));
  const double nu = rng.truncated_normal(0.0, params.max_freq_bins / 2.0,
                                         -static_cast<double>(params.max_freq_bins),
                                         static_cast<double>(params.max_freq_bins));
  s.nu_bins = static_cast<int>(std::llround(nu));
  return s;
}

namespace aug_detail {
inline int64_t wrap(int64_t i, int64_t n) {
  int64_t r = i % n;
  return r < 0 ? r + n : r;
}
}  // namespace aug_detail

// Rescales a shift given in input-spectrogram frames to the (coarser) output
// frame grid, rounding to the nearest whole frame.
inline int scale_shift_frames(int tau_input_frames, int64_t input_frames,
                              int64_t output_frames) {
  SCMT_REQUIRE(input_frames > 0 && output_frames > 0,
               "scale_shift_frames: bad frame counts");
  return static_cast<int>(std::llround(static_cast<double>(tau_input_frames) *
                                       static_cast<double>(output_frames) /
                                       static_cast<double>(input_frames)));
}

// Circular shift along the time axis: output frame t holds input frame
// (t - tau) mod n, so positive tau moves content later in time. Works on
// [T x F] spectrograms, [B x T x C] sequences, and batched [B x C x T x F]
// activations alike via the rank dispatch below.
template <typename S>
Tensor<S> time_shift(const Tensor<S>& x, int tau) {
  Tensor<S> out(x.shape());
  if (x.rank() == 2) {
    const int64_t t_dim = x.dim(0), f_dim = x.dim(1);
    for (int64_t t = 0; t < t_dim; ++t) {
      int64_t src = aug_detail::wrap(t - tau, t_dim);
      const S* in_row = x.data() + src * f_dim;
      S* out_row = out.data() + t * f_dim;
      std::copy(in_row, in_row + f_dim, out_row);
    }
    return out;
  }
  if (x.rank() == 3) {
    const int64_t b_dim = x.dim(0), t_dim = x.dim(1), c_dim = x.dim(2);
    for (int64_t b = 0; b < b_dim; ++b) {
      const S* in_plane = x.data() + b * t_dim * c_dim;
      S* out_plane = out.data() + b * t_dim * c_dim;
      for (int64_t t = 0; t < t_dim; ++t) {
        int64_t src = aug_detail::wrap(t - tau, t_dim);
        std::copy(in_plane + src * c_dim, in_plane + (src + 1) * c_dim,
                  out_plane + t * c_dim);
      }
    }
    return out;
  }
  SCMT_REQUIRE(x.rank() == 4,
               "time_shift: expected [T x F], [B x T x C], or [B x C x T x F]");
  const int64_t b_dim = x.dim(0), c_dim = x.dim(1), t_dim = x.dim(2), f_dim = x.dim(3);
  for (int64_t b = 0; b < b_dim; ++b)
    for (int64_t c = 0; c < c_dim; ++c) {
      const S* in_plane = x.data() + ((b * c_dim + c) * t_dim) * f_dim;
      S* out_plane = out.data() + ((b * c_dim + c) * t_dim) * f_dim;
      for (int64_t t = 0; t < t_dim; ++t) {
        int64_t src = aug_detail::wrap(t - tau, t_dim);
        std::copy(in_plane + src * f_dim, in_plane + (src + 1) * f_dim,
                  out_plane + t * f_dim);
      }
    }
  return out;
}

// Circular time shift of a frame-level label raster [T_out x C] (or batched
// [B x T_out x C]); tau is given in input-spectrogram frames and scaled to
// the label frame rate, rounding to the nearest output frame.
template <typename S>
Tensor<S> shift_labels(const Tensor<S>& labels, int tau_input_frames,
                       int64_t input_frames, int64_t output_frames) {
  const int tau_out = scale_shift_frames(tau_input_frames, input_frames, output_frames);
  Tensor<S> out(labels.shape());
  auto shift_plane = [&](const S* in, S* dst, int64_t t_dim, int64_t c_dim) {
    for (int64_t t = 0; t < t_dim; ++t) {
      int64_t src = aug_detail::wrap(t - tau_out, t_dim);
      std::copy(in + src * c_dim, in + (src + 1) * c_dim, dst + t * c_dim);
    }
  };
  if (labels.rank() == 2) {
    SCMT_REQUIRE(labels.dim(0) == output_frames, "shift_labels: raster length mismatch");
    shift_plane(labels.data(), out.data(), labels.dim(0), labels.dim(1));
  } else {
    SCMT_REQUIRE(labels.rank() == 3 && labels.dim(1) == output_frames,
                 "shift_labels: raster length mismatch");
    const int64_t plane = labels.dim(1) * labels.dim(2);
    for (int64_t b = 0; b < labels.dim(0); ++b)
      shift_plane(labels.data() + b * plane, out.data() + b * plane, labels.dim(1),
                  labels.dim(2));
  }
  return out;
}

// Shift along the mel axis by nu bins; vacated bins are filled with the
// silence value. `fill` has one entry per destination mel bin so the call
// site can pass either a constant floor (raw spectrograms) or the per-bin
// normalized floor. Labels are never transformed by this: frequency shift
// preserves event timing.
template <typename S>
Tensor<S> freq_shift(const Tensor<S>& x, int nu, std::span<const S> fill) {
  auto fill_at = [&](int64_t f) -> S {
    return fill.size() == 1 ? fill[0] : fill[static_cast<size_t>(f)];
  };
  Tensor<S> out(x.shape());
  if (x.rank() == 2) {
    const int64_t t_dim = x.dim(0), f_dim = x.dim(1);
    SCMT_REQUIRE(fill.size() == 1 || static_cast<int64_t>(fill.size()) == f_dim,
                 "freq_shift: fill size mismatch");
    for (int64_t t = 0; t < t_dim; ++t) {
      const S* in_row = x.data() + t * f_dim;
      S* out_row = out.data() + t * f_dim;
      for (int64_t f = 0; f < f_dim; ++f) {
        int64_t src = f - nu;
        out_row[f] = (src >= 0 && src < f_dim) ? in_row[src] : fill_at(f);
      }
    }
    return out;
  }
  SCMT_REQUIRE(x.rank() == 4, "freq_shift: expected [T x F] or [B x C x T x F]");
  const int64_t f_dim = x.dim(3);
  SCMT_REQUIRE(fill.size() == 1 || static_cast<int64_t>(fill.size()) == f_dim,
               "freq_shift: fill size mismatch");
  const int64_t rows = x.numel() / f_dim;
  for (int64_t r = 0; r < rows; ++r) {
    const S* in_row = x.data() + r * f_dim;
    S* out_row = out.data() + r * f_dim;
    for (int64_t f = 0; f < f_dim; ++f) {
      int64_t src = f - nu;
      out_row[f] = (src >= 0 && src < f_dim) ? in_row[src] : fill_at(f);
    }
  }
  return out;
}

template <typename S>
Tensor<S> freq_shift(const Tensor<S>& x, int nu, S fill_value) {
  const S fill[1] = {fill_value};
  return freq_shift(x, nu, std::span<const S>(fill, 1));
}

// Element-wise lambda * a + (1 - lambda) * b.
template <typename S>
Tensor<S> mix(const Tensor<S>& a, const Tensor<S>& b, double lambda) {
  SCMT_REQUIRE(a.same_shape(b), "mix: shape mismatch");
  SCMT_REQUIRE(lambda >= 0.0 && lambda <= 1.0, "mix: lambda outside [0,1]");
  Tensor<S> out(a.shape());
  const S l = static_cast<S>(lambda);
  const S m = static_cast<S>(1.0 - lambda);
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = l * pa[i] + m * pb[i];
  return out;
}

// i.i.d. additive Gaussian noise; used on teacher inputs.
template <typename S>
Tensor<S> add_noise(const Tensor<S>& x, double sigma, Rng& rng) {
  SCMT_REQUIRE(sigma >= 0.0, "add_noise: sigma must be non-negative");
  if (sigma == 0.0) return x;
  Tensor<S> out = x;
  S* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    p[i] += static_cast<S>(rng.normal(0.0, sigma));
  return out;
}

}  // namespace scmt

#endif  // SCMT_AUGMENT_HPP_
