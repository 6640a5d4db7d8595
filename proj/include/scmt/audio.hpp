#ifndef SCMT_AUDIO_HPP_
#define SCMT_AUDIO_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "scmt/common.hpp"

namespace scmt {

// Raw waveform plus its rate. Samples are amplitudes in [-1, 1].
struct AudioClip {
  std::string clip_id;
  double sample_rate = 0.0;
  std::vector<float> samples;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

// Zero-pad or crop to exactly n samples.
inline void pad_or_crop(AudioClip& clip, size_t n) {
  clip.samples.resize(n, 0.0f);
}

// Windowed-sinc resampler (Hann window, 32 zero crossings per side). The
// identity case returns the input untouched so equal rates are bit-exact.
inline AudioClip resample(const AudioClip& clip, double target_rate) {
  SCMT_REQUIRE(clip.sample_rate > 0.0, "resample: source rate must be positive");
  SCMT_REQUIRE(target_rate > 0.0, "resample: target rate must be positive");
  SCMT_REQUIRE(!clip.samples.empty(), "resample: empty sample sequence");
  if (clip.sample_rate == target_rate) return clip;

  const double ratio = target_rate / clip.sample_rate;
  const int64_t n_in = static_cast<int64_t>(clip.samples.size());
  const int64_t n_out = std::llround(static_cast<double>(n_in) * ratio);

  // Anti-aliasing cutoff slightly below the tighter Nyquist.
  const double cutoff = 0.95 * 0.5 * std::min(1.0, ratio);
  const int half_width = 32;
  const double taps_scale = std::min(1.0, ratio);  // widen kernel when decimating

  AudioClip out;
  out.clip_id = clip.clip_id;
  out.sample_rate = target_rate;
  out.samples.resize(static_cast<size_t>(n_out));

  const double half = static_cast<double>(half_width) / taps_scale;
  for (int64_t i = 0; i < n_out; ++i) {
    double center = static_cast<double>(i) / ratio;
    int64_t lo = static_cast<int64_t>(std::ceil(center - half));
    int64_t hi = static_cast<int64_t>(std::floor(center + half));
    double acc = 0.0;
    for (int64_t k = std::max<int64_t>(0, lo); k <= std::min(n_in - 1, hi); ++k) {
      double x = static_cast<double>(k) - center;
      double sinc_arg = 2.0 * cutoff * x;
      double sinc = sinc_arg == 0.0 ? 1.0 : std::sin(M_PI * sinc_arg) / (M_PI * sinc_arg);
      double win = 0.5 * (1.0 + std::cos(M_PI * x / half));
      acc += static_cast<double>(clip.samples[static_cast<size_t>(k)]) * 2.0 * cutoff *
             sinc * win;
    }
    out.samples[static_cast<size_t>(i)] = static_cast<float>(acc);
  }
  return out;
}

}  // namespace scmt

#endif  // SCMT_AUDIO_HPP_
