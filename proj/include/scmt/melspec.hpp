#ifndef SCMT_MELSPEC_HPP_
#define SCMT_MELSPEC_HPP_

#include <cmath>
#include <complex>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "scmt/audio.hpp"
#include "scmt/common.hpp"
#include "scmt/fft.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

// Fixed-shape analysis front end: 10 s at 16 kHz -> 648 x 128 log-mel.
struct MelParams {
  double sample_rate = 16000.0;
  int n_fft = 2048;
  int hop = 255;
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 8000.0;
  int target_frames = 648;
  double power_floor = 1e-10;

  double clip_seconds = 10.0;

  size_t clip_samples() const {
    return static_cast<size_t>(std::llround(sample_rate * clip_seconds));
  }
  double log_floor() const { return std::log(power_floor); }
  // A centered STFT of clip_samples at this hop yields fewer frames than
  // target_frames; the difference is split between the two edges.
  int natural_frames() const {
    return 1 + static_cast<int>(clip_samples()) / hop;
  }
  int left_pad_frames() const { return (target_frames - natural_frames()) / 2; }
  double frame_hop_seconds() const { return hop / sample_rate; }
};

struct LogMelSpectrogram {
  Tensor<float> values;  // [n_frames x n_mels]
  double frame_hop_seconds = 0.0;

  int64_t n_frames() const { return values.dim(0); }
  int64_t n_mels() const { return values.dim(1); }
};

// HTK mel scale.
inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters on FFT bins, each normalized to unit weight sum.
class MelFilterbank {
 public:
  explicit MelFilterbank(const MelParams& p) : params_(p) {
    const int n_bins = p.n_fft / 2 + 1;
    const double mel_lo = hz_to_mel(p.fmin);
    const double mel_hi = hz_to_mel(p.fmax);
    std::vector<double> edges_hz(p.n_mels + 2);
    for (int i = 0; i < p.n_mels + 2; ++i)
      edges_hz[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (p.n_mels + 1));
    center_hz_.assign(edges_hz.begin() + 1, edges_hz.end() - 1);

    weights_.assign(static_cast<size_t>(p.n_mels) * n_bins, 0.0f);
    const double bin_hz = p.sample_rate / p.n_fft;
    for (int m = 0; m < p.n_mels; ++m) {
      double lo = edges_hz[m], mid = edges_hz[m + 1], hi = edges_hz[m + 2];
      double sum = 0.0;
      for (int k = 0; k < n_bins; ++k) {
        double f = k * bin_hz;
        double w = 0.0;
        if (f > lo && f < mid)
          w = (f - lo) / (mid - lo);
        else if (f >= mid && f < hi)
          w = (hi - f) / (hi - mid);
        weights_[static_cast<size_t>(m) * n_bins + k] = static_cast<float>(w);
        sum += w;
      }
      SCMT_CONFIG_REQUIRE(sum > 0.0, "mel filterbank: empty filter");
      for (int k = 0; k < n_bins; ++k)
        weights_[static_cast<size_t>(m) * n_bins + k] /= static_cast<float>(sum);
    }
  }

  const std::vector<float>& weights() const { return weights_; }
  const std::vector<double>& center_frequencies_hz() const { return center_hz_; }
  int n_bins() const { return params_.n_fft / 2 + 1; }

 private:
  MelParams params_;
  std::vector<float> weights_;  // [n_mels x n_bins]
  std::vector<double> center_hz_;
};

inline const MelFilterbank& filterbank(const MelParams& params) {
  static thread_local MelParams cached_params;
  static thread_local std::unique_ptr<MelFilterbank> cached;
  if (!cached || cached_params.n_fft != params.n_fft ||
      cached_params.n_mels != params.n_mels ||
      cached_params.sample_rate != params.sample_rate ||
      cached_params.fmin != params.fmin || cached_params.fmax != params.fmax) {
    cached = std::make_unique<MelFilterbank>(params);
    cached_params = params;
  }
  return *cached;
}

// Centered STFT (zero padding outside the clip), Hann window, power spectrum,
// mel projection, natural log with a floor, then symmetric log-floor padding
// of the time axis to the target frame count.
inline LogMelSpectrogram log_mel(const AudioClip& input, const MelParams& params = {}) {
  SCMT_REQUIRE(input.sample_rate == params.sample_rate,
               "log_mel: clip must be resampled to the analysis rate first");
  AudioClip clip = input;
  pad_or_crop(clip, params.clip_samples());

  static thread_local std::vector<double> hann;
  const int n_fft = params.n_fft;
  if (static_cast<int>(hann.size()) != n_fft) {
    hann.resize(n_fft);
    for (int i = 0; i < n_fft; ++i)
      hann[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n_fft);
  }

  const MelFilterbank& bank = filterbank(params);
  const int n_bins = bank.n_bins();
  const int n_frames = params.natural_frames();
  const int left = params.left_pad_frames();
  const float log_floor = static_cast<float>(params.log_floor());

  LogMelSpectrogram out;
  out.frame_hop_seconds = params.frame_hop_seconds();
  out.values = Tensor<float>::constant(
      {params.target_frames, params.n_mels}, log_floor);

  std::vector<std::complex<double>> buf(static_cast<size_t>(n_fft));
  std::vector<double> power(static_cast<size_t>(n_bins));
  const int64_t n_samples = static_cast<int64_t>(clip.samples.size());

  for (int f = 0; f < n_frames; ++f) {
    const int64_t start = static_cast<int64_t>(f) * params.hop - n_fft / 2;
    for (int i = 0; i < n_fft; ++i) {
      int64_t idx = start + i;
      double s = (idx >= 0 && idx < n_samples)
                     ? static_cast<double>(clip.samples[static_cast<size_t>(idx)])
                     : 0.0;
      buf[static_cast<size_t>(i)] = s * hann[static_cast<size_t>(i)];
    }
    Fft::transform(buf, false);
    for (int k = 0; k < n_bins; ++k) power[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);

    const int row = left + f;
    if (row < 0 || row >= params.target_frames) continue;  // cropped
    float* dst = out.values.data() + static_cast<size_t>(row) * params.n_mels;
    const float* w = bank.weights().data();
    for (int m = 0; m < params.n_mels; ++m) {
      double e = 0.0;
      const float* wm = w + static_cast<size_t>(m) * n_bins;
      for (int k = 0; k < n_bins; ++k) e += wm[k] * power[static_cast<size_t>(k)];
      dst[m] = static_cast<float>(std::log(std::max(e, params.power_floor)));
    }
  }
  return out;
}

// Per-mel-bin normalization statistics, computed once over the training split.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> std_dev;

  static NormStats compute(const std::vector<const LogMelSpectrogram*>& specs) {
    SCMT_REQUIRE(!specs.empty(), "norm stats: no spectrograms");
    const int64_t n_mels = specs[0]->n_mels();
    std::vector<double> sum(static_cast<size_t>(n_mels), 0.0);
    std::vector<double> sum_sq(static_cast<size_t>(n_mels), 0.0);
    int64_t count = 0;
    for (const LogMelSpectrogram* s : specs) {
      SCMT_REQUIRE(s->n_mels() == n_mels, "norm stats: inconsistent mel count");
      for (int64_t t = 0; t < s->n_frames(); ++t) {
        const float* row = s->values.data() + t * n_mels;
        for (int64_t m = 0; m < n_mels; ++m) {
          sum[static_cast<size_t>(m)] += row[m];
          sum_sq[static_cast<size_t>(m)] += static_cast<double>(row[m]) * row[m];
        }
      }
      count += s->n_frames();
    }
    NormStats st;
    st.mean.resize(static_cast<size_t>(n_mels));
    st.std_dev.resize(static_cast<size_t>(n_mels));
    for (int64_t m = 0; m < n_mels; ++m) {
      double mu = sum[static_cast<size_t>(m)] / static_cast<double>(count);
      double var = sum_sq[static_cast<size_t>(m)] / static_cast<double>(count) - mu * mu;
      st.mean[static_cast<size_t>(m)] = static_cast<float>(mu);
      st.std_dev[static_cast<size_t>(m)] = static_cast<float>(std::sqrt(std::max(var, 1e-12)));
    }
    return st;
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("norm stats: cannot open " + path);
    f << "n_mels " << mean.size() << "\n";
    f.precision(9);
    f << "mean";
    for (float v : mean) f << " " << v;
    f << "\nstd";
    for (float v : std_dev) f << " " << v;
    f << "\n";
  }

  static NormStats load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("norm stats: cannot open " + path);
    std::string key;
    size_t n = 0;
    f >> key >> n;
    if (key != "n_mels" || n == 0) throw IoError("norm stats: bad header in " + path);
    NormStats st;
    st.mean.resize(n);
    st.std_dev.resize(n);
    f >> key;
    if (key != "mean") throw IoError("norm stats: missing mean in " + path);
    for (size_t i = 0; i < n; ++i) f >> st.mean[i];
    f >> key;
    if (key != "std") throw IoError("norm stats: missing std in " + path);
    for (size_t i = 0; i < n; ++i) f >> st.std_dev[i];
    if (!f) throw IoError("norm stats: truncated file " + path);
    for (float s : st.std_dev)
      SCMT_REQUIRE(s > 0.0f, "norm stats: std entries must be positive");
    return st;
  }

  // Value a silent (log-floor) frame maps to in each normalized bin.
  std::vector<float> normalized_floor(double log_floor) const {
    std::vector<float> out(mean.size());
    for (size_t i = 0; i < mean.size(); ++i)
      out[i] = (static_cast<float>(log_floor) - mean[i]) / std_dev[i];
    return out;
  }
};

// Element-wise (value - mean) / std per mel bin.
inline LogMelSpectrogram normalize(const LogMelSpectrogram& spec, const NormStats& stats) {
  SCMT_REQUIRE(static_cast<int64_t>(stats.mean.size()) == spec.n_mels() &&
                   stats.mean.size() == stats.std_dev.size(),
               "normalize: stats dimensionality mismatch");
  for (float s : stats.std_dev)
    SCMT_REQUIRE(s > 0.0f, "normalize: std entries must be positive");
  LogMelSpectrogram out = spec;
  const int64_t n_mels = spec.n_mels();
  for (int64_t t = 0; t < spec.n_frames(); ++t) {
    float* row = out.values.data() + t * n_mels;
    for (int64_t m = 0; m < n_mels; ++m)
      row[m] = (row[m] - stats.mean[static_cast<size_t>(m)]) /
               stats.std_dev[static_cast<size_t>(m)];
  }
  return out;
}

}  // namespace scmt

#endif  // SCMT_MELSPEC_HPP_
