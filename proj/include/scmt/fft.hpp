#ifndef SCMT_FFT_HPP_
#define SCMT_FFT_HPP_

#include <cmath>
#include <complex>
#include <map>
#include <vector>

#include "scmt/common.hpp"

namespace scmt {

// Iterative radix-2 Cooley-Tukey with cached twiddle tables. Sizes used here
// are small powers of two (2048 for analysis frames, up to 2^19 for fast
// convolution in the soundscape generator).
class Fft {
 public:
  static bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

  static size_t next_pow2(size_t n) {
    size_t p = 1;
    while (p < n) p <<= 1;
    return p;
  }

  // In-place transform; inverse applies the 1/n factor.
  static void transform(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    SCMT_REQUIRE(is_pow2(n), "fft: size must be a power of two");
    if (n <= 1) return;

    for (size_t i = 1, j = 0; i < n; ++i) {
      size_t bit = n >> 1;
      for (; j & bit; bit >>= 1) j ^= bit;
      j ^= bit;
      if (i < j) std::swap(a[i], a[j]);
    }

    const std::vector<std::complex<double>>& tw = twiddles(n, inverse);
    for (size_t len = 2; len <= n; len <<= 1) {
      size_t step = n / len;
      for (size_t i = 0; i < n; i += len) {
        for (size_t k = 0; k < len / 2; ++k) {
          std::complex<double> u = a[i + k];
          std::complex<double> v = a[i + k + len / 2] * tw[k * step];
          a[i + k] = u + v;
          a[i + k + len / 2] = u - v;
        }
      }
    }
    if (inverse) {
      double scale = 1.0 / static_cast<double>(n);
      for (auto& x : a) x *= scale;
    }
  }

  // Linear convolution of two real signals via zero-padded FFT.
  static std::vector<double> convolve(const std::vector<double>& x,
                                      const std::vector<double>& h) {
    if (x.empty() || h.empty()) return {};
    size_t out_len = x.size() + h.size() - 1;
    size_t n = next_pow2(out_len);
    std::vector<std::complex<double>> fx(n), fh(n);
    for (size_t i = 0; i < x.size(); ++i) fx[i] = x[i];
    for (size_t i = 0; i < h.size(); ++i) fh[i] = h[i];
    transform(fx, false);
    transform(fh, false);
    for (size_t i = 0; i < n; ++i) fx[i] *= fh[i];
    transform(fx, true);
    std::vector<double> out(out_len);
    for (size_t i = 0; i < out_len; ++i) out[i] = fx[i].real();
    return out;
  }

 private:
  static const std::vector<std::complex<double>>& twiddles(size_t n, bool inverse) {
    static std::map<std::pair<size_t, bool>, std::vector<std::complex<double>>> cache;
    auto key = std::make_pair(n, inverse);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<std::complex<double>> tw(n / 2);
    double sign = inverse ? 1.0 : -1.0;
    for (size_t k = 0; k < n / 2; ++k) {
      double ang = sign * 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(n);
      tw[k] = {std::cos(ang), std::sin(ang)};
    }
    return cache.emplace(key, std::move(tw)).first->second;
  }
};

// Magnitude spectrum of a real signal, padded to the next power of two.
// Returns bins 0..nfft/2 and the bin width in Hz. Test oracles use this for
// peak picking; the feature pipeline has its own windowed STFT.
struct SpectrumPeak {
  double frequency_hz = 0.0;
  double magnitude = 0.0;
};

inline SpectrumPeak dominant_frequency(const std::vector<float>& samples,
                                       double sample_rate) {
  SCMT_REQUIRE(!samples.empty(), "dominant_frequency: empty signal");
  size_t n = Fft::next_pow2(samples.size());
  std::vector<std::complex<double>> buf(n);
  for (size_t i = 0; i < samples.size(); ++i) buf[i] = samples[i];
  Fft::transform(buf, false);
  SpectrumPeak peak;
  for (size_t k = 1; k <= n / 2; ++k) {
    double mag = std::abs(buf[k]);
    if (mag > peak.magnitude) {
      peak.magnitude = mag;
      peak.frequency_hz = sample_rate * static_cast<double>(k) / static_cast<double>(n);
    }
  }
  return peak;
}

}  // namespace scmt

#endif  // SCMT_FFT_HPP_
