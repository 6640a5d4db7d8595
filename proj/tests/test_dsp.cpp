// Front-end checks: FFT against a naive DFT, WAV round trips, resampling,
// mel filterbank geometry against an independently computed center-frequency
// formula, and the fixed 648 x 128 log-mel output contract.

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <vector>

#include "scmt/audio.hpp"
#include "scmt/fft.hpp"
#include "scmt/melspec.hpp"
#include "scmt/rng.hpp"
#include "scmt/wav.hpp"

namespace {

// Quadratic-time DFT used as the oracle for the fast transform.
std::vector<std::complex<double>> naive_dft(const std::vector<std::complex<double>>& x) {
  const size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (size_t k = 0; k < n; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (size_t t = 0; t < n; ++t) {
      double angle = -2.0 * M_PI * static_cast<double>(k * t) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(angle), std::sin(angle));
    }
    out[k] = acc;
  }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(Fft, MatchesNaiveDftOnRandomInput) {
  scmt::Rng rng(42);
  for (size_t n : {8u, 64u, 256u}) {
    std::vector<std::complex<double>> x(n);
    for (auto& v : x) v = {rng.normal(), rng.normal()};
    auto expect = naive_dft(x);
    auto got = x;
    scmt::Fft::transform(got, false);
    for (size_t k = 0; k < n; ++k) {
      EXPECT_NEAR(got[k].real(), expect[k].real(), 1e-8 * static_cast<double>(n));
      EXPECT_NEAR(got[k].imag(), expect[k].imag(), 1e-8 * static_cast<double>(n));
    }
  }
}

TEST(Fft, InverseRecoversInput) {
  scmt::Rng rng(7);
  std::vector<std::complex<double>> x(128);
  for (auto& v : x) v = {rng.normal(), rng.normal()};
  auto y = x;
  scmt::Fft::transform(y, false);
  scmt::Fft::transform(y, true);
  for (size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(y[i].real(), x[i].real(), 1e-10);
    EXPECT_NEAR(y[i].imag(), x[i].imag(), 1e-10);
  }
}

TEST(Fft, ConvolveDeltaIsIdentity) {
  std::vector<double> delta(16, 0.0);
  delta[0] = 1.0;
  std::vector<double> h = {0.5, -0.25, 0.125, 1.0, -0.375};
  auto y = scmt::Fft::convolve(delta, h);
  ASSERT_EQ(y.size(), delta.size() + h.size() - 1);
  for (size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(y[i], h[i], 1e-12);
  for (size_t i = h.size(); i < y.size(); ++i) EXPECT_NEAR(y[i], 0.0, 1e-12);
}

TEST(Fft, DominantFrequencyFindsPureTone) {
  const double sr = 16000.0, f0 = 1000.0;
  std::vector<float> x(16000);
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(std::sin(2.0 * M_PI * f0 * static_cast<double>(i) / sr));
  scmt::SpectrumPeak peak = scmt::dominant_frequency(x, sr);
  EXPECT_NEAR(peak.frequency_hz, f0, sr / static_cast<double>(scmt::Fft::next_pow2(x.size())));
}

TEST(Wav, RoundTripPreservesSamplesWithinQuantization) {
  scmt::Rng rng(3);
  std::vector<float> x(2048);
  for (auto& v : x) v = static_cast<float>(0.8 * rng.uniform(-1.0, 1.0));
  std::string path = temp_path("scmt_wav_roundtrip.wav");
  scmt::write_wav(path, x, 16000);
  scmt::WavData back = scmt::read_wav(path);
  ASSERT_EQ(back.samples.size(), x.size());
  EXPECT_EQ(back.sample_rate, 16000u);
  for (size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(back.samples[i], x[i], 1.0 / 32767.0 + 1e-6);
  std::filesystem::remove(path);
}

TEST(Wav, WriteThenReadIsDeterministic) {
  std::vector<float> x = {0.0f, 0.5f, -0.5f, 1.0f, -1.0f, 0.25f};
  std::string p1 = temp_path("scmt_wav_det1.wav");
  std::string p2 = temp_path("scmt_wav_det2.wav");
  scmt::write_wav(p1, x, 16000);
  scmt::write_wav(p2, x, 16000);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(s1, s2);
  std::filesystem::remove(p1);
  std::filesystem::remove(p2);
}

TEST(Resample, PureTonePreservesFrequency) {
  const double sr_in = 44100.0, f0 = 440.0;
  scmt::AudioClip clip;
  clip.sample_rate = sr_in;
  clip.samples.resize(44100);
  for (size_t i = 0; i < clip.samples.size(); ++i)
    clip.samples[i] =
        static_cast<float>(std::sin(2.0 * M_PI * f0 * static_cast<double>(i) / sr_in));
  scmt::AudioClip out = scmt::resample(clip, 16000.0);
  EXPECT_NEAR(static_cast<double>(out.samples.size()), 16000.0, 2.0);
  // Trim the filter edges before measuring the peak.
  std::vector<float> mid(out.samples.begin() + 1000, out.samples.end() - 1000);
  scmt::SpectrumPeak peak = scmt::dominant_frequency(mid, 16000.0);
  EXPECT_NEAR(peak.frequency_hz, f0, 2.0);
}

// Center frequencies of the triangular filters, computed straight from the
// mel formula as an independent reference.
TEST(Mel, FilterCentersMatchFormula) {
  scmt::MelParams p;
  const scmt::MelFilterbank& fb = scmt::filterbank(p);
  double mel_lo = scmt::hz_to_mel(p.fmin), mel_hi = scmt::hz_to_mel(p.fmax);
  for (int m = 0; m < p.n_mels; ++m) {
    double expect =
        scmt::mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (p.n_mels + 1));
    EXPECT_NEAR(fb.center_frequencies_hz()[static_cast<size_t>(m)], expect, 1e-6);
  }
}

TEST(Mel, PureToneEnergyPeaksAtMatchingFilter) {
  scmt::MelParams p;
  const double f0 = 1000.0;
  scmt::AudioClip clip;
  clip.sample_rate = p.sample_rate;
  clip.samples.resize(p.clip_samples());
  for (size_t i = 0; i < clip.samples.size(); ++i)
    clip.samples[i] = static_cast<float>(
        0.5 * std::sin(2.0 * M_PI * f0 * static_cast<double>(i) / p.sample_rate));
  scmt::LogMelSpectrogram spec = scmt::log_mel(clip, p);

  // Expected bin: the filter whose center frequency is nearest 1 kHz.
  const auto& centers = scmt::filterbank(p).center_frequencies_hz();
  int expect_bin = 0;
  for (int m = 1; m < p.n_mels; ++m)
    if (std::abs(centers[static_cast<size_t>(m)] - f0) <
        std::abs(centers[static_cast<size_t>(expect_bin)] - f0))
      expect_bin = m;

  // Average over interior frames, then find the argmax bin.
  std::vector<double> mean(static_cast<size_t>(p.n_mels), 0.0);
  for (int64_t t = 100; t < 500; ++t)
    for (int m = 0; m < p.n_mels; ++m)
      mean[static_cast<size_t>(m)] += spec.values.at(t, m);
  int got_bin = 0;
  for (int m = 1; m < p.n_mels; ++m)
    if (mean[static_cast<size_t>(m)] > mean[static_cast<size_t>(got_bin)]) got_bin = m;
  EXPECT_LE(std::abs(got_bin - expect_bin), 1);
}

TEST(Mel, OutputShapeIs648By128ForTenSecondClip) {
  scmt::MelParams p;
  scmt::AudioClip clip;
  clip.sample_rate = p.sample_rate;
  clip.samples.assign(p.clip_samples(), 0.1f);
  scmt::LogMelSpectrogram spec = scmt::log_mel(clip, p);
  EXPECT_EQ(spec.n_frames(), 648);
  EXPECT_EQ(spec.n_mels(), 128);
}

TEST(Mel, SilentClipHitsLogFloorEverywhere) {
  scmt::MelParams p;
  scmt::AudioClip clip;
  clip.sample_rate = p.sample_rate;
  clip.samples.assign(p.clip_samples(), 0.0f);
  scmt::LogMelSpectrogram spec = scmt::log_mel(clip, p);
  for (int64_t i = 0; i < spec.values.numel(); ++i)
    EXPECT_FLOAT_EQ(spec.values[i], static_cast<float>(p.log_floor()));
}

TEST(Mel, NormStatsRoundTripAndNormalize) {
  scmt::MelParams p;
  scmt::Rng rng(11);
  scmt::AudioClip clip;
  clip.sample_rate = p.sample_rate;
  clip.samples.resize(p.clip_samples());
  for (auto& v : clip.samples) v = static_cast<float>(0.3 * rng.normal());
  scmt::LogMelSpectrogram spec = scmt::log_mel(clip, p);

  scmt::NormStats stats = scmt::NormStats::compute({&spec});
  std::string path = temp_path("scmt_norm_stats.txt");
  stats.save(path);
  scmt::NormStats back = scmt::NormStats::load(path);
  ASSERT_EQ(back.mean.size(), stats.mean.size());
  for (size_t i = 0; i < stats.mean.size(); ++i) {
    EXPECT_NEAR(back.mean[i], stats.mean[i], 1e-4);
    EXPECT_NEAR(back.std_dev[i], stats.std_dev[i], 1e-4);
  }

  scmt::LogMelSpectrogram normed = scmt::normalize(spec, stats);
  // Per-bin mean ~0 and std ~1 after normalizing with the clip's own stats.
  for (int m = 0; m < p.n_mels; m += 17) {
    double mu = 0.0, var = 0.0;
    for (int64_t t = 0; t < normed.n_frames(); ++t) mu += normed.values.at(t, m);
    mu /= static_cast<double>(normed.n_frames());
    for (int64_t t = 0; t < normed.n_frames(); ++t) {
      double d = normed.values.at(t, m) - mu;
      var += d * d;
    }
    var /= static_cast<double>(normed.n_frames());
    EXPECT_NEAR(mu, 0.0, 1e-3);
    EXPECT_NEAR(var, 1.0, 1e-2);
  }
  std::filesystem::remove(path);
}

}  // namespace
