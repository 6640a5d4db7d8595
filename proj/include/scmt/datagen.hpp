#pragma once

// Synthetic soundscape generator. Ten parametric event classes (five
// synthesis kinds, each in a low and a high frequency variant) are mixed
// over a pink-noise bed into 10 s clips. A "domainify" pass (synthetic
// reverb, spectral tilt, additive noise) manufactures a second acoustic
// domain from the clean render, so the two-domain adaptation story can be
// exercised without shipping any real audio.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "scmt/audio.hpp"
#include "scmt/common.hpp"
#include "scmt/events.hpp"
#include "scmt/fft.hpp"
#include "scmt/rng.hpp"
#include "scmt/wav.hpp"

namespace scmt {

enum class EventKind { tone, chirp, noise_band, am_tone, harmonic_stack };

// Parameter ranges for one event class. synth_event draws the concrete
// duration / frequency / amplitude uniformly from these.
struct EventTemplate {
  int class_id = 0;
  std::string name;
  EventKind kind = EventKind::tone;
  double min_duration = 0.8;   // seconds
  double max_duration = 2.0;
  double min_freq = 440.0;     // Hz; chirps sweep from here to 2x
  double max_freq = 880.0;
  double min_amp = 0.3;        // peak amplitude of the rendered event
  double max_amp = 0.8;
};

// The fixed class inventory: tone, chirp, band-limited noise, AM tone and
// harmonic stack, each with a low-band and a high-band variant. Durations
// stay >= 0.6 s so that a correctly detected event is never erased by the
// median filter used at decode time.
inline std::vector<EventTemplate> default_event_classes() {
  auto make = [](int id, const char* name, EventKind kind, double d0, double d1,
                 double f0, double f1) {
    EventTemplate t;
    t.class_id = id;
    t.name = name;
    t.kind = kind;
    t.min_duration = d0;
    t.max_duration = d1;
    t.min_freq = f0;
    t.max_freq = f1;
    return t;
  };
  return {
      make(0, "tone_low", EventKind::tone, 0.8, 2.0, 300.0, 600.0),
      make(1, "tone_high", EventKind::tone, 0.8, 2.0, 1500.0, 3000.0),
      make(2, "chirp_low", EventKind::chirp, 0.6, 1.5, 250.0, 500.0),
      make(3, "chirp_high", EventKind::chirp, 0.6, 1.5, 1000.0, 2000.0),
      make(4, "band_low", EventKind::noise_band, 0.6, 1.8, 400.0, 800.0),
      make(5, "band_high", EventKind::noise_band, 0.6, 1.8, 2000.0, 3500.0),
      make(6, "am_low", EventKind::am_tone, 0.8, 2.0, 500.0, 900.0),
      make(7, "am_high", EventKind::am_tone, 0.8, 2.0, 2500.0, 4000.0),
      make(8, "stack_low", EventKind::harmonic_stack, 0.8, 2.2, 200.0, 400.0),
      make(9, "stack_high", EventKind::harmonic_stack, 0.8, 2.2, 800.0, 1600.0),
  };
}

struct SynthEvent {
  std::vector<float> samples;
  double duration = 0.0;  // seconds, == samples.size() / sample_rate
};

namespace datagen_detail {

// 10 ms raised-cosine fade at both ends so event boundaries do not click.
inline void apply_fade(std::vector<float>& x, double sample_rate) {
  size_t ramp = std::min(x.size() / 2, static_cast<size_t>(0.01 * sample_rate));
  for (size_t i = 0; i < ramp; ++i) {
    double g = 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / ramp);
    x[i] *= static_cast<float>(g);
    x[x.size() - 1 - i] *= static_cast<float>(g);
  }
}

inline void normalize_peak(std::vector<float>& x, double target) {
  double peak = 0.0;
  for (float v : x) peak = std::max(peak, std::abs(static_cast<double>(v)));
  if (peak <= 0.0) return;
  double g = target / peak;
  for (float& v : x) v = static_cast<float>(v * g);
}

// Band-limited noise via random-phase spectral synthesis: fill bins inside
// [f_lo, f_hi] with unit magnitude and uniform phase, inverse transform,
// keep the first n samples. Deterministic given the rng.
inline std::vector<float> spectral_noise(size_t n, double f_lo, double f_hi,
                                         double sample_rate, Rng& rng) {
  size_t nfft = Fft::next_pow2(std::max<size_t>(n, 2));
  std::vector<std::complex<double>> spec(nfft, {0.0, 0.0});
  double bin_hz = sample_rate / static_cast<double>(nfft);
  size_t k_lo = static_cast<size_t>(std::ceil(f_lo / bin_hz));
  size_t k_hi = std::min(nfft / 2 - 1, static_cast<size_t>(std::floor(f_hi / bin_hz)));
  for (size_t k = std::max<size_t>(k_lo, 1); k <= k_hi; ++k) {
    double phi = rng.uniform(0.0, 2.0 * M_PI);
    spec[k] = std::polar(1.0, phi);
    spec[nfft - k] = std::conj(spec[k]);  // keep the signal real
  }
  Fft::transform(spec, true);
  std::vector<float> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<float>(spec[i].real());
  return out;
}

// Paul Kellet's economy pink noise filter: white gaussian input, three
// one-pole lowpass taps summed. Close enough to 1/f over the audible band.
inline std::vector<float> pink_noise(size_t n, Rng& rng) {
  std::vector<float> out(n);
  double b0 = 0.0, b1 = 0.0, b2 = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double w = rng.normal(0.0, 1.0);
    b0 = 0.99765 * b0 + w * 0.0990460;
    b1 = 0.96300 * b1 + w * 0.2965164;
    b2 = 0.57000 * b2 + w * 1.0526913;
    out[i] = static_cast<float>((b0 + b1 + b2 + w * 0.1848) * 0.05);
  }
  return out;
}

inline double rms(const std::vector<float>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

}  // namespace datagen_detail

// Render one event. All random draws (duration, frequency, amplitude,
// phases) come from the rng, so the same rng state reproduces the same
// waveform exactly.
inline SynthEvent synth_event(const EventTemplate& tmpl, double sample_rate, Rng& rng) {
  SCMT_REQUIRE(sample_rate > 0.0, "synth_event: sample rate must be positive");
  SCMT_REQUIRE(tmpl.min_duration > 0.0 && tmpl.min_duration <= tmpl.max_duration,
               "synth_event: bad duration range");
  SCMT_REQUIRE(tmpl.min_freq > 0.0 && tmpl.min_freq <= tmpl.max_freq,
               "synth_event: bad frequency range");
  SCMT_REQUIRE(tmpl.min_amp >= 0.0 && tmpl.min_amp <= tmpl.max_amp && tmpl.max_amp <= 1.0,
               "synth_event: amplitude range must sit inside [0, 1]");

  double dur = rng.uniform(tmpl.min_duration, tmpl.max_duration);
  double f0 = rng.uniform(tmpl.min_freq, tmpl.max_freq);
  double amp = rng.uniform(tmpl.min_amp, tmpl.max_amp);
  size_t n = static_cast<size_t>(std::llround(dur * sample_rate));
  n = std::max<size_t>(n, 1);

  std::vector<float> x(n, 0.0f);
  double dt = 1.0 / sample_rate;
  switch (tmpl.kind) {
    case EventKind::tone: {
      for (size_t i = 0; i < n; ++i)
        x[i] = static_cast<float>(amp * std::sin(2.0 * M_PI * f0 * i * dt));
      break;
    }
    case EventKind::chirp: {
      // Linear sweep from f0 to 2*f0 over the event.
      double k = f0 / dur;  // Hz per second
      for (size_t i = 0; i < n; ++i) {
        double t = i * dt;
        x[i] = static_cast<float>(amp * std::sin(2.0 * M_PI * (f0 * t + 0.5 * k * t * t)));
      }
      break;
    }
    case EventKind::noise_band: {
      x = datagen_detail::spectral_noise(n, f0, f0 * 1.5, sample_rate, rng);
      datagen_detail::normalize_peak(x, amp);
      break;
    }
    case EventKind::am_tone: {
      double f_mod = rng.uniform(4.0, 10.0);
      const double depth = 0.8;
      for (size_t i = 0; i < n; ++i) {
        double t = i * dt;
        double env = 1.0 - 0.5 * depth + 0.5 * depth * std::sin(2.0 * M_PI * f_mod * t);
        x[i] = static_cast<float>(amp * env * std::sin(2.0 * M_PI * f0 * t));
      }
      break;
    }
    case EventKind::harmonic_stack: {
      // Four harmonics with 1/k amplitudes, then renormalized to amp.
      for (size_t i = 0; i < n; ++i) {
        double t = i * dt;
        double s = 0.0;
        for (int k = 1; k <= 4; ++k)
          s += std::sin(2.0 * M_PI * k * f0 * t) / static_cast<double>(k);
        x[i] = static_cast<float>(s);
      }
      datagen_detail::normalize_peak(x, amp);
      break;
    }
  }
  datagen_detail::apply_fade(x, sample_rate);

  SynthEvent out;
  out.samples = std::move(x);
  out.duration = static_cast<double>(n) / sample_rate;
  return out;
}

struct PlacedEvent {
  EventTemplate tmpl;
  double onset = 0.0;  // seconds from clip start
};

struct Soundscape {
  AudioClip clip;
  std::vector<EventLabel> labels;
};

// Mix the given events over a pink-noise bed. Events are summed sample-wise
// at their onsets; anything extending past the clip end is truncated there
// and its label offset clipped to match. The mix is only ever scaled DOWN
// (to peak 0.99) so silence is never amplified.
inline Soundscape render_soundscape(const std::vector<PlacedEvent>& events,
                                    double clip_seconds, double sample_rate,
                                    double background_level, Rng& rng) {
  SCMT_REQUIRE(!events.empty(), "render_soundscape: at least one event required");
  SCMT_REQUIRE(clip_seconds > 0.0 && sample_rate > 0.0,
               "render_soundscape: clip length and rate must be positive");
  SCMT_REQUIRE(background_level >= 0.0, "render_soundscape: negative background level");

  size_t n = static_cast<size_t>(std::llround(clip_seconds * sample_rate));
  std::vector<double> mix(n, 0.0);

  Soundscape out;
  for (const PlacedEvent& pe : events) {
    SCMT_REQUIRE(pe.onset >= 0.0 && pe.onset < clip_seconds,
                 "render_soundscape: onset outside the clip");
    SynthEvent ev = synth_event(pe.tmpl, sample_rate, rng);
    size_t start = static_cast<size_t>(std::llround(pe.onset * sample_rate));
    size_t count = std::min(ev.samples.size(), n - std::min(n, start));
    for (size_t i = 0; i < count; ++i) mix[start + i] += ev.samples[i];

    EventLabel lab;
    lab.class_id = pe.tmpl.class_id;
    lab.onset = pe.onset;
    lab.offset = std::min(pe.onset + ev.duration, clip_seconds);
    out.labels.push_back(lab);
  }

  if (background_level > 0.0) {
    std::vector<float> bed = datagen_detail::pink_noise(n, rng);
    double r = datagen_detail::rms(bed);
    double g = r > 0.0 ? background_level / r : 0.0;
    for (size_t i = 0; i < n; ++i) mix[i] += g * bed[i];
  }

  double peak = 0.0;
  for (double v : mix) peak = std::max(peak, std::abs(v));
  double g = peak > 0.99 ? 0.99 / peak : 1.0;

  out.clip.sample_rate = sample_rate;
  out.clip.samples.resize(n);
  for (size_t i = 0; i < n; ++i) out.clip.samples[i] = static_cast<float>(mix[i] * g);
  return out;
}

// Channel simulation used to manufacture the second domain: synthetic
// reverb (exponentially decaying noise tail), a spectral tilt, and additive
// noise at a drawn SNR. With every stage disabled the input passes through
// untouched, bit for bit.
struct DomainifyConfig {
  bool reverb = true;
  bool eq_tilt = true;
  bool noise = true;
  double min_rir_seconds = 0.2;
  double max_rir_seconds = 0.5;
  double rir_tail_level = 0.3;   // tail amplitude relative to the direct path
  double max_tilt_db = 6.0;      // gain difference across the band is at most this
  double min_snr_db = 20.0;
  double max_snr_db = 30.0;

  static DomainifyConfig identity() {
    DomainifyConfig c;
    c.reverb = false;
    c.eq_tilt = false;
    c.noise = false;
    return c;
  }
};

namespace datagen_detail {

// Exponentially decaying white-noise reverb tail with a unit direct path.
// The decay reaches -60 dB at the chosen tail length.
inline std::vector<double> make_rir(double seconds, double sample_rate,
                                    double tail_level, Rng& rng) {
  size_t len = std::max<size_t>(2, static_cast<size_t>(std::llround(seconds * sample_rate)));
  std::vector<double> h(len, 0.0);
  h[0] = 1.0;
  for (size_t i = 1; i < len; ++i) {
    double decay = std::pow(10.0, -3.0 * static_cast<double>(i) / static_cast<double>(len));
    h[i] = tail_level * decay * rng.normal(0.0, 1.0);
  }
  return h;
}

// Linear-in-frequency gain tilt applied in the spectral domain. tilt_db is
// the total gain difference between DC and Nyquist, centered so the
// mid-band gain is 0 dB.
inline void apply_tilt(std::vector<float>& x, double tilt_db, double sample_rate) {
  size_t nfft = Fft::next_pow2(x.size());
  std::vector<std::complex<double>> spec(nfft, {0.0, 0.0});
  for (size_t i = 0; i < x.size(); ++i) spec[i] = {static_cast<double>(x[i]), 0.0};
  Fft::transform(spec, false);
  for (size_t k = 0; k <= nfft / 2; ++k) {
    double frac = static_cast<double>(k) / (static_cast<double>(nfft) / 2.0);
    double gain = std::pow(10.0, tilt_db * (frac - 0.5) / 20.0);
    spec[k] *= gain;
    if (k > 0 && k < nfft / 2) spec[nfft - k] *= gain;
  }
  Fft::transform(spec, true);
  for (size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(spec[i].real());
  (void)sample_rate;
}

}  // namespace datagen_detail

// Pass a clip through the domain channel. Deterministic given the rng; the
// identity() config returns the input unchanged.
inline AudioClip domainify(const AudioClip& clip, const DomainifyConfig& cfg, Rng& rng) {
  SCMT_REQUIRE(!clip.samples.empty(), "domainify: empty clip");
  if (!cfg.reverb && !cfg.eq_tilt && !cfg.noise) return clip;

  AudioClip out = clip;
  double in_peak = 0.0;
  for (float v : clip.samples) in_peak = std::max(in_peak, std::abs(static_cast<double>(v)));

  if (cfg.reverb) {
    double rir_sec = rng.uniform(cfg.min_rir_seconds, cfg.max_rir_seconds);
    std::vector<double> h =
        datagen_detail::make_rir(rir_sec, clip.sample_rate, cfg.rir_tail_level, rng);
    std::vector<double> x(out.samples.begin(), out.samples.end());
    std::vector<double> y = Fft::convolve(x, h);
    for (size_t i = 0; i < out.samples.size(); ++i)
      out.samples[i] = static_cast<float>(y[i]);
    // Reverb can grow the peak: restore the dry level so later SNR math and
    // the final headroom check see a comparable signal.
    double peak = 0.0;
    for (float v : out.samples) peak = std::max(peak, std::abs(static_cast<double>(v)));
    if (peak > 0.0 && in_peak > 0.0) {
      double g = in_peak / peak;
      for (float& v : out.samples) v = static_cast<float>(v * g);
    }
  }

  if (cfg.eq_tilt) {
    double tilt = rng.uniform(-cfg.max_tilt_db, cfg.max_tilt_db);
    datagen_detail::apply_tilt(out.samples, tilt, clip.sample_rate);
  }

  if (cfg.noise) {
    double snr_db = rng.uniform(cfg.min_snr_db, cfg.max_snr_db);
    double sig_rms = datagen_detail::rms(out.samples);
    double sigma = sig_rms / std::pow(10.0, snr_db / 20.0);
    for (float& v : out.samples) v = static_cast<float>(v + sigma * rng.normal(0.0, 1.0));
  }

  double peak = 0.0;
  for (float v : out.samples) peak = std::max(peak, std::abs(static_cast<double>(v)));
  if (peak > 0.99) {
    double g = 0.99 / peak;
    for (float& v : out.samples) v = static_cast<float>(v * g);
  }
  return out;
}

// Dataset assembly. Four splits mirror the usual DESED layout: a clean
// strongly labeled split (the synthetic domain), a domainified weakly
// labeled split, a domainified unlabeled split, and a domainified
// strongly labeled validation split (all three in the "real" domain).
struct DatasetConfig {
  std::string out_dir;
  int n_strong = 200;
  int n_weak = 200;
  int n_unlabeled = 400;
  int n_validation = 100;
  int min_events_per_clip = 1;
  int max_events_per_clip = 3;
  double clip_seconds = 10.0;
  double sample_rate = 16000.0;
  double background_level = 0.02;
  DomainifyConfig channel;

  std::string to_text() const {
    std::ostringstream os;
    os << "data.n_strong=" << n_strong << "\n"
       << "data.n_weak=" << n_weak << "\n"
       << "data.n_unlabeled=" << n_unlabeled << "\n"
       << "data.n_validation=" << n_validation << "\n"
       << "data.min_events_per_clip=" << min_events_per_clip << "\n"
       << "data.max_events_per_clip=" << max_events_per_clip << "\n"
       << "data.clip_seconds=" << clip_seconds << "\n"
       << "data.sample_rate=" << sample_rate << "\n"
       << "data.background_level=" << background_level << "\n";
    return os.str();
  }
};

struct DatasetPaths {
  std::string root;
  std::string strong_tsv;
  std::string weak_tsv;
  std::string unlabeled_tsv;
  std::string validation_tsv;
  std::string classes_txt;
};

namespace datagen_detail {

// Class assignment deck: one balanced bag of class ids per split, shuffled
// once, then dealt to events in order. Counts per class end up within one
// of each other, comfortably inside the +-20% balance requirement.
inline std::vector<int> balanced_deck(int n_events, int n_classes, Rng& rng) {
  int per = (n_events + n_classes - 1) / n_classes;
  std::vector<int> deck;
  deck.reserve(static_cast<size_t>(per) * n_classes);
  for (int rep = 0; rep < per; ++rep)
    for (int c = 0; c < n_classes; ++c) deck.push_back(c);
  rng.shuffle(deck);
  deck.resize(static_cast<size_t>(n_events));
  return deck;
}

inline std::string zero_pad(int v, int width) {
  std::ostringstream os;
  os << v;
  std::string s = os.str();
  while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
  return s;
}

inline std::string format_seconds(double v) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  os << v;
  return os.str();
}

}  // namespace datagen_detail

// Generate the full dataset on disk. Layout under cfg.out_dir:
//   audio/{strong,weak,unlabeled,validation}/<split>_<idx>.wav
//   strong.tsv        filename<TAB>onset<TAB>offset<TAB>event_label
//   weak.tsv          filename<TAB>event_labels   (comma separated)
//   unlabeled.tsv     filename
//   validation.tsv    same columns as strong.tsv
//   classes.txt       one class name per line, id order
// Everything is driven by rngs derived from the master seed: the same
// config and seed reproduce every file byte for byte.
inline DatasetPaths build_dataset(const DatasetConfig& cfg, uint64_t master_seed) {
  SCMT_REQUIRE(cfg.n_strong > 0 && cfg.n_weak > 0 && cfg.n_unlabeled > 0 && cfg.n_validation > 0,
               "build_dataset: every split needs at least one clip");
  SCMT_REQUIRE(cfg.min_events_per_clip >= 1 &&
                   cfg.min_events_per_clip <= cfg.max_events_per_clip,
               "build_dataset: bad events-per-clip range");
  SCMT_REQUIRE(!cfg.out_dir.empty(), "build_dataset: output directory not set");

  namespace fs = std::filesystem;
  const std::vector<EventTemplate> classes = default_event_classes();
  const int n_classes = static_cast<int>(classes.size());
  const Rng master(master_seed);

  DatasetPaths paths;
  paths.root = cfg.out_dir;
  paths.strong_tsv = (fs::path(cfg.out_dir) / "strong.tsv").string();
  paths.weak_tsv = (fs::path(cfg.out_dir) / "weak.tsv").string();
  paths.unlabeled_tsv = (fs::path(cfg.out_dir) / "unlabeled.tsv").string();
  paths.validation_tsv = (fs::path(cfg.out_dir) / "validation.tsv").string();
  paths.classes_txt = (fs::path(cfg.out_dir) / "classes.txt").string();

  struct SplitSpec {
    const char* name;
    int count;
    bool domainified;
    enum { strong, weak, unlabeled } labels;
  };
  const SplitSpec splits[] = {
      {"strong", cfg.n_strong, false, SplitSpec::strong},
      {"weak", cfg.n_weak, true, SplitSpec::weak},
      {"unlabeled", cfg.n_unlabeled, true, SplitSpec::unlabeled},
      {"validation", cfg.n_validation, true, SplitSpec::strong},
  };

  fs::create_directories(fs::path(cfg.out_dir) / "audio");
  for (const SplitSpec& sp : splits)
    fs::create_directories(fs::path(cfg.out_dir) / "audio" / sp.name);

  {
    std::ofstream cf(paths.classes_txt, std::ios::binary);
    if (!cf) throw IoError("build_dataset: cannot write " + paths.classes_txt);
    for (const EventTemplate& t : classes) cf << t.name << "\n";
  }

  int global_clip = 0;
  int split_index = 0;
  for (const SplitSpec& sp : splits) {
    // Split-level rng deals event counts and the class deck; each clip then
    // gets its own rng derived from its global index, so clip rendering
    // could run in any order (or in parallel) without changing the output.
    Rng split_rng = master.derive(1000 + static_cast<uint64_t>(split_index));
    std::vector<int> events_per_clip(static_cast<size_t>(sp.count));
    int total_events = 0;
    for (int i = 0; i < sp.count; ++i) {
      int k = static_cast<int>(
          split_rng.uniform_int(cfg.min_events_per_clip, cfg.max_events_per_clip));
      events_per_clip[static_cast<size_t>(i)] = k;
      total_events += k;
    }
    std::vector<int> deck =
        datagen_detail::balanced_deck(total_events, n_classes, split_rng);

    std::string manifest_path;
    switch (sp.labels) {
      case SplitSpec::strong:
        manifest_path = std::string(sp.name) == "strong" ? paths.strong_tsv
                                                         : paths.validation_tsv;
        break;
      case SplitSpec::weak:
        manifest_path = paths.weak_tsv;
        break;
      case SplitSpec::unlabeled:
        manifest_path = paths.unlabeled_tsv;
        break;
    }
    std::ofstream manifest(manifest_path, std::ios::binary);
    if (!manifest) throw IoError("build_dataset: cannot write " + manifest_path);
    switch (sp.labels) {
      case SplitSpec::strong:
        manifest << "filename\tonset\toffset\tevent_label\n";
        break;
      case SplitSpec::weak:
        manifest << "filename\tevent_labels\n";
        break;
      case SplitSpec::unlabeled:
        manifest << "filename\n";
        break;
    }

    int deck_pos = 0;
    for (int i = 0; i < sp.count; ++i, ++global_clip) {
      Rng clip_rng = master.derive(static_cast<uint64_t>(global_clip));
      std::vector<PlacedEvent> placed;
      for (int e = 0; e < events_per_clip[static_cast<size_t>(i)]; ++e) {
        PlacedEvent pe;
        pe.tmpl = classes[static_cast<size_t>(deck[static_cast<size_t>(deck_pos++)])];
        // Keep a little tail room so most events fit whole; the renderer
        // clips at the boundary when a long draw does not.
        pe.onset = clip_rng.uniform(0.0, cfg.clip_seconds - 1.0);
        placed.push_back(pe);
      }
      Soundscape sc = render_soundscape(placed, cfg.clip_seconds, cfg.sample_rate,
                                        cfg.background_level, clip_rng);
      if (sp.domainified) sc.clip = domainify(sc.clip, cfg.channel, clip_rng);

      std::string base = std::string(sp.name) + "_" + datagen_detail::zero_pad(i, 4);
      std::string rel = "audio/" + std::string(sp.name) + "/" + base + ".wav";
      sc.clip.clip_id = base;
      write_wav((fs::path(cfg.out_dir) / rel).string(), sc.clip.samples,
                static_cast<uint32_t>(cfg.sample_rate));

      switch (sp.labels) {
        case SplitSpec::strong: {
          std::vector<EventLabel> sorted = sc.labels;
          std::sort(sorted.begin(), sorted.end(), [](const EventLabel& a, const EventLabel& b) {
            return a.onset < b.onset || (a.onset == b.onset && a.class_id < b.class_id);
          });
          for (const EventLabel& lab : sorted) {
            manifest << rel << "\t" << datagen_detail::format_seconds(lab.onset) << "\t"
                     << datagen_detail::format_seconds(lab.offset) << "\t"
                     << classes[static_cast<size_t>(lab.class_id)].name << "\n";
          }
          break;
        }
        case SplitSpec::weak: {
          std::set<int> present;
          for (const EventLabel& lab : sc.labels) present.insert(lab.class_id);
          manifest << rel << "\t";
          bool first = true;
          for (int c : present) {
            if (!first) manifest << ",";
            manifest << classes[static_cast<size_t>(c)].name;
            first = false;
          }
          manifest << "\n";
          break;
        }
        case SplitSpec::unlabeled:
          manifest << rel << "\n";
          break;
      }
    }
    if (!manifest) throw IoError("build_dataset: short write to " + manifest_path);
    ++split_index;
  }
  return paths;
}

}  // namespace scmt
