// Soundscape generator: waveform-level checks on the synthesizer (spectral
// peak, determinism, amplitude bounds), label bookkeeping in the renderer,
// the identity and SNR behavior of the channel simulation, and the on-disk
// dataset layout end to end.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "scmt/audio.hpp"
#include "scmt/datagen.hpp"
#include "scmt/dataset.hpp"
#include "scmt/melspec.hpp"
#include "scmt/rng.hpp"
#include "scmt/wav.hpp"

namespace {

namespace fs = std::filesystem;
using scmt::EventKind;
using scmt::EventTemplate;
using scmt::Rng;

EventTemplate fixed_tone(double freq, double dur, double amp) {
  EventTemplate t;
  t.class_id = 0;
  t.name = "probe";
  t.kind = EventKind::tone;
  t.min_duration = t.max_duration = dur;
  t.min_freq = t.max_freq = freq;
  t.min_amp = t.max_amp = amp;
  return t;
}

double rms_of(const std::vector<float>& x, size_t lo, size_t hi) {
  double acc = 0.0;
  for (size_t i = lo; i < hi; ++i) acc += static_cast<double>(x[i]) * x[i];
  return std::sqrt(acc / static_cast<double>(hi - lo));
}

TEST(SynthEvent, PureToneLandsOnItsFrequency) {
  Rng rng(1);
  auto ev = scmt::synth_event(fixed_tone(1000.0, 0.5, 0.6), 16000.0, rng);
  EXPECT_EQ(ev.samples.size(), 8000u);
  EXPECT_DOUBLE_EQ(ev.duration, 0.5);
  EXPECT_NEAR(scmt::dominant_frequency(ev.samples, 16000.0).frequency_hz, 1000.0, 5.0);
  double peak = 0.0;
  for (float v : ev.samples) peak = std::max(peak, std::abs(static_cast<double>(v)));
  EXPECT_NEAR(peak, 0.6, 0.01);
}

TEST(SynthEvent, SameRngStateReproducesTheWaveform) {
  const auto classes = scmt::default_event_classes();
  Rng a(7), b(7), c(8);
  auto ea = scmt::synth_event(classes[4], 16000.0, a);  // noise band draws phases
  auto eb = scmt::synth_event(classes[4], 16000.0, b);
  auto ec = scmt::synth_event(classes[4], 16000.0, c);
  ASSERT_EQ(ea.samples.size(), eb.samples.size());
  for (size_t i = 0; i < ea.samples.size(); ++i)
    ASSERT_EQ(ea.samples[i], eb.samples[i]) << "sample " << i;
  bool differs = ea.samples.size() != ec.samples.size();
  for (size_t i = 0; !differs && i < ea.samples.size(); ++i)
    differs = ea.samples[i] != ec.samples[i];
  EXPECT_TRUE(differs);
}

TEST(SynthEvent, EveryKindRendersBoundedNonSilentAudio) {
  Rng rng(3);
  for (const EventTemplate& t : scmt::default_event_classes()) {
    auto ev = scmt::synth_event(t, 16000.0, rng);
    ASSERT_GT(ev.samples.size(), 0u) << t.name;
    double peak = 0.0, energy = 0.0;
    for (float v : ev.samples) {
      ASSERT_TRUE(std::isfinite(v)) << t.name;
      peak = std::max(peak, std::abs(static_cast<double>(v)));
      energy += static_cast<double>(v) * v;
    }
    EXPECT_LE(peak, 1.0 + 1e-6) << t.name;
    EXPECT_GT(energy, 1e-3) << t.name;
    EXPECT_GE(ev.duration, 0.6) << t.name;
  }
}

TEST(SynthEvent, RejectsBrokenTemplates) {
  Rng rng(4);
  auto bad_dur = fixed_tone(440.0, 1.0, 0.5);
  bad_dur.min_duration = 2.0;  // above max
  EXPECT_THROW(scmt::synth_event(bad_dur, 16000.0, rng), scmt::InvalidInputError);
  auto bad_amp = fixed_tone(440.0, 1.0, 0.5);
  bad_amp.max_amp = 1.5;
  EXPECT_THROW(scmt::synth_event(bad_amp, 16000.0, rng), scmt::InvalidInputError);
  EXPECT_THROW(scmt::synth_event(fixed_tone(440.0, 1.0, 0.5), 0.0, rng),
               scmt::InvalidInputError);
}

TEST(DefaultEventClasses, TenDistinctNamedClasses) {
  auto classes = scmt::default_event_classes();
  ASSERT_EQ(classes.size(), 10u);
  std::set<std::string> names;
  for (size_t i = 0; i < classes.size(); ++i) {
    EXPECT_EQ(classes[i].class_id, static_cast<int>(i));
    names.insert(classes[i].name);
  }
  EXPECT_EQ(names.size(), 10u);
}

TEST(RenderSoundscape, LabelsTrackPlacementsAndClipBoundary) {
  Rng rng(5);
  scmt::PlacedEvent early{fixed_tone(500.0, 1.0, 0.5), 2.0};
  early.tmpl.class_id = 3;
  scmt::PlacedEvent late{fixed_tone(700.0, 2.0, 0.5), 9.5};  // runs past the end
  late.tmpl.class_id = 7;
  auto sc = scmt::render_soundscape({early, late}, 10.0, 16000.0, 0.0, rng);

  ASSERT_EQ(sc.labels.size(), 2u);
  EXPECT_EQ(sc.labels[0].class_id, 3);
  EXPECT_DOUBLE_EQ(sc.labels[0].onset, 2.0);
  EXPECT_DOUBLE_EQ(sc.labels[0].offset, 3.0);
  EXPECT_EQ(sc.labels[1].class_id, 7);
  EXPECT_DOUBLE_EQ(sc.labels[1].onset, 9.5);
  EXPECT_DOUBLE_EQ(sc.labels[1].offset, 10.0);
  EXPECT_EQ(sc.clip.samples.size(), 160000u);
}

TEST(RenderSoundscape, SilenceOutsideEventsWhenBackgroundIsOff) {
  Rng rng(6);
  scmt::PlacedEvent pe{fixed_tone(500.0, 1.0, 0.5), 4.0};
  auto sc = scmt::render_soundscape({pe}, 10.0, 16000.0, 0.0, rng);
  for (size_t i = 0; i < 64000; ++i)
    ASSERT_EQ(sc.clip.samples[i], 0.0f) << "sample " << i << " before the onset";
  EXPECT_GT(rms_of(sc.clip.samples, 64000, 80000), 0.1);
}

TEST(RenderSoundscape, BackgroundBedSitsNearTheRequestedLevel) {
  Rng rng(7);
  scmt::PlacedEvent pe{fixed_tone(500.0, 0.8, 0.5), 8.0};
  const double level = 0.02;
  auto sc = scmt::render_soundscape({pe}, 10.0, 16000.0, level, rng);
  double quiet = rms_of(sc.clip.samples, 0, 16000 * 7);  // event-free region
  EXPECT_GT(quiet, level / 3.0);
  EXPECT_LT(quiet, level * 3.0);
  double peak = 0.0;
  for (float v : sc.clip.samples) peak = std::max(peak, std::abs(static_cast<double>(v)));
  EXPECT_LE(peak, 0.99 + 1e-5);
}

TEST(RenderSoundscape, RequiresEventsAndValidOnsets) {
  Rng rng(8);
  EXPECT_THROW(scmt::render_soundscape({}, 10.0, 16000.0, 0.02, rng),
               scmt::InvalidInputError);
  scmt::PlacedEvent pe{fixed_tone(500.0, 1.0, 0.5), 11.0};
  EXPECT_THROW(scmt::render_soundscape({pe}, 10.0, 16000.0, 0.02, rng),
               scmt::InvalidInputError);
}

scmt::AudioClip probe_clip(uint64_t seed) {
  Rng rng(seed);
  scmt::PlacedEvent pe{fixed_tone(800.0, 1.5, 0.5), 0.5};
  return scmt::render_soundscape({pe}, 3.0, 16000.0, 0.01, rng).clip;
}

TEST(Domainify, IdentityConfigIsBitExact) {
  scmt::AudioClip clip = probe_clip(9);
  Rng rng(10);
  scmt::AudioClip out = scmt::domainify(clip, scmt::DomainifyConfig::identity(), rng);
  ASSERT_EQ(out.samples.size(), clip.samples.size());
  for (size_t i = 0; i < clip.samples.size(); ++i)
    ASSERT_EQ(out.samples[i], clip.samples[i]) << "sample " << i;
}

TEST(Domainify, ZeroTiltIsANearIdentity) {
  scmt::AudioClip clip = probe_clip(11);
  scmt::DomainifyConfig cfg = scmt::DomainifyConfig::identity();
  cfg.eq_tilt = true;
  cfg.max_tilt_db = 0.0;  // the drawn tilt collapses to exactly 0 dB
  Rng rng(12);
  scmt::AudioClip out = scmt::domainify(clip, cfg, rng);
  for (size_t i = 0; i < clip.samples.size(); ++i)
    ASSERT_NEAR(out.samples[i], clip.samples[i], 1e-5) << "sample " << i;
}

TEST(Domainify, NoiseStageHitsTheDrawnSnr) {
  scmt::AudioClip clip = probe_clip(13);
  scmt::DomainifyConfig cfg = scmt::DomainifyConfig::identity();
  cfg.noise = true;
  cfg.min_snr_db = cfg.max_snr_db = 20.0;  // sigma is exactly rms/10
  Rng rng(14);
  scmt::AudioClip out = scmt::domainify(clip, cfg, rng);
  std::vector<float> diff(clip.samples.size());
  for (size_t i = 0; i < diff.size(); ++i) diff[i] = out.samples[i] - clip.samples[i];
  double want_sigma = rms_of(clip.samples, 0, clip.samples.size()) / 10.0;
  double got_sigma = rms_of(diff, 0, diff.size());
  EXPECT_NEAR(got_sigma, want_sigma, 0.3 * want_sigma);
}

TEST(Domainify, FullChannelIsSeedDeterministicAndBounded) {
  scmt::AudioClip clip = probe_clip(15);
  scmt::DomainifyConfig cfg;  // all stages on
  Rng r1(16), r2(16), r3(17);
  auto a = scmt::domainify(clip, cfg, r1);
  auto b = scmt::domainify(clip, cfg, r2);
  auto c = scmt::domainify(clip, cfg, r3);
  bool same_ab = true, same_ac = true;
  for (size_t i = 0; i < a.samples.size(); ++i) {
    same_ab = same_ab && a.samples[i] == b.samples[i];
    same_ac = same_ac && a.samples[i] == c.samples[i];
    ASSERT_LE(std::abs(a.samples[i]), 0.99f + 1e-5f);
  }
  EXPECT_TRUE(same_ab);
  EXPECT_FALSE(same_ac);

  scmt::AudioClip empty;
  empty.sample_rate = 16000.0;
  EXPECT_THROW(scmt::domainify(empty, cfg, r1), scmt::InvalidInputError);
}

TEST(Domainify, ChannelShiftsTheMelStatistics) {
  // The whole point of the channel pass: the two domains must be separable
  // in feature space, so the adaptation machinery has something to undo.
  scmt::MelParams params;
  double gap = 0.0;
  for (uint64_t seed = 20; seed < 23; ++seed) {
    Rng rng(seed);
    scmt::PlacedEvent pe{fixed_tone(600.0 + 50.0 * seed, 1.5, 0.5), 2.0};
    auto sc = scmt::render_soundscape({pe}, 10.0, 16000.0, 0.02, rng);
    scmt::AudioClip shifted = scmt::domainify(sc.clip, scmt::DomainifyConfig{}, rng);
    auto clean = scmt::log_mel(sc.clip, params);
    auto real = scmt::log_mel(shifted, params);
    double mean_clean = 0.0, mean_real = 0.0;
    for (int64_t i = 0; i < clean.values.numel(); ++i) {
      mean_clean += clean.values[i];
      mean_real += real.values[i];
    }
    gap += std::abs(mean_real - mean_clean) / static_cast<double>(clean.values.numel());
  }
  EXPECT_GT(gap / 3.0, 0.01);
}

scmt::DatasetConfig tiny_dataset_config(const std::string& dir) {
  scmt::DatasetConfig cfg;
  cfg.out_dir = dir;
  cfg.n_strong = 12;
  cfg.n_weak = 6;
  cfg.n_unlabeled = 6;
  cfg.n_validation = 4;
  cfg.clip_seconds = 3.0;
  cfg.max_events_per_clip = 2;
  return cfg;
}

std::string read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  EXPECT_TRUE(static_cast<bool>(f)) << path;
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

TEST(BuildDataset, LayoutManifestsAndLoaderAgree) {
  const std::string dir = testing::TempDir() + "scmt_ds_main";
  fs::remove_all(dir);
  auto cfg = tiny_dataset_config(dir);
  auto paths = scmt::build_dataset(cfg, 42);

  auto ds = scmt::SedDataset::load(dir);
  EXPECT_EQ(ds.n_classes(), 10);
  EXPECT_EQ(ds.strong.size(), 12u);
  EXPECT_EQ(ds.weak.size(), 6u);
  EXPECT_EQ(ds.unlabeled.size(), 6u);
  EXPECT_EQ(ds.validation.size(), 4u);

  for (const auto& rec : ds.strong) {
    EXPECT_EQ(rec.domain, scmt::kDomainSynthetic);
    ASSERT_FALSE(rec.events.empty()) << rec.filename;
    EXPECT_FALSE(rec.tags.empty());
    for (const auto& e : rec.events) {
      EXPECT_LT(e.onset, e.offset);
      EXPECT_LE(e.offset, cfg.clip_seconds + 1e-9);
    }
    EXPECT_TRUE(fs::exists(fs::path(dir) / rec.filename)) << rec.filename;
  }
  for (const auto& rec : ds.weak) EXPECT_EQ(rec.domain, scmt::kDomainReal);
  for (const auto& rec : ds.validation) EXPECT_EQ(rec.domain, scmt::kDomainReal);
  for (const auto& rec : ds.unlabeled) {
    EXPECT_TRUE(rec.events.empty());
    EXPECT_TRUE(fs::exists(fs::path(dir) / rec.filename));
  }

  // Audio sanity: nothing in the corpus is silent or clipped.
  for (const auto& rec : ds.strong) {
    auto wav = scmt::read_wav((fs::path(dir) / rec.filename).string());
    EXPECT_EQ(wav.sample_rate, 16000u);
    EXPECT_GT(rms_of(wav.samples, 0, wav.samples.size()), 1e-4) << rec.filename;
  }

  // The deck dealer keeps per-class event counts within one of each other
  // inside a split.
  std::map<int, int> counts;
  for (const auto& rec : ds.strong)
    for (const auto& e : rec.events) counts[e.class_id] += 1;
  int lo = INT32_MAX, hi = 0;
  for (const auto& [cls, n] : counts) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  EXPECT_LE(hi - lo, 1) << "class deck no longer balances the splits";
  (void)paths;
}

TEST(BuildDataset, SameSeedReproducesFilesByteForByte) {
  const std::string dir_a = testing::TempDir() + "scmt_ds_a";
  const std::string dir_b = testing::TempDir() + "scmt_ds_b";
  const std::string dir_c = testing::TempDir() + "scmt_ds_c";
  for (const auto& d : {dir_a, dir_b, dir_c}) fs::remove_all(d);

  scmt::DatasetConfig cfg = tiny_dataset_config(dir_a);
  cfg.n_strong = 3;
  cfg.n_weak = 2;
  cfg.n_unlabeled = 2;
  cfg.n_validation = 2;
  auto pa = scmt::build_dataset(cfg, 7);
  cfg.out_dir = dir_b;
  auto pb = scmt::build_dataset(cfg, 7);
  cfg.out_dir = dir_c;
  auto pc = scmt::build_dataset(cfg, 8);

  EXPECT_EQ(read_bytes(pa.strong_tsv), read_bytes(pb.strong_tsv));
  EXPECT_EQ(read_bytes(pa.weak_tsv), read_bytes(pb.weak_tsv));
  const std::string wav_rel = "audio/strong/strong_0000.wav";
  EXPECT_EQ(read_bytes((fs::path(dir_a) / wav_rel).string()),
            read_bytes((fs::path(dir_b) / wav_rel).string()));
  EXPECT_NE(read_bytes((fs::path(dir_a) / wav_rel).string()),
            read_bytes((fs::path(dir_c) / wav_rel).string()));
  EXPECT_NE(read_bytes(pa.strong_tsv), read_bytes(pc.strong_tsv));
}

TEST(Manifests, ParseGroupAndValidate) {
  const std::string dir = testing::TempDir() + "scmt_manifests";
  fs::create_directories(dir);
  const std::vector<std::string> classes = {"dog", "cat"};

  const std::string strong_path = dir + "/strong.tsv";
  {
    std::ofstream f(strong_path, std::ios::binary);
    f << "filename\tonset\toffset\tevent_label\n"
      << "a.wav\t0.500\t1.500\tdog\n"
      << "a.wav\t2.000\t3.000\tdog\n"
      << "b.wav\t1.000\t2.000\tcat\n";
  }
  auto strong = scmt::read_strong_manifest(strong_path, classes, 0.0f);
  ASSERT_EQ(strong.size(), 2u);
  EXPECT_EQ(strong[0].filename, "a.wav");
  EXPECT_EQ(strong[0].events.size(), 2u);
  EXPECT_EQ(strong[0].tags, std::vector<int>{0});
  EXPECT_DOUBLE_EQ(strong[0].events[0].onset, 0.5);
  EXPECT_EQ(strong[1].tags, std::vector<int>{1});

  const std::string weak_path = dir + "/weak.tsv";
  {
    std::ofstream f(weak_path, std::ios::binary);
    f << "filename\tevent_labels\n"
      << "c.wav\tcat,dog\n"
      << "d.wav\tdog\n";
  }
  auto weak = scmt::read_weak_manifest(weak_path, classes);
  ASSERT_EQ(weak.size(), 2u);
  EXPECT_EQ(weak[0].tags, (std::vector<int>{0, 1}));  // sorted by id, not name
  EXPECT_EQ(weak[1].tags, std::vector<int>{0});

  {
    std::ofstream f(strong_path, std::ios::binary);
    f << "filename\tonset\toffset\tevent_label\n"
      << "a.wav\t0.5\t1.5\twolf\n";
  }
  EXPECT_THROW(scmt::read_strong_manifest(strong_path, classes, 0.0f),
               scmt::InvalidInputError);
  {
    std::ofstream f(strong_path, std::ios::binary);
    f << "filename\tonset\toffset\tevent_label\n"
      << "a.wav\t2.0\t1.0\tdog\n";
  }
  EXPECT_THROW(scmt::read_strong_manifest(strong_path, classes, 0.0f),
               scmt::InvalidInputError);
  EXPECT_THROW(scmt::read_unlabeled_manifest(dir + "/missing.tsv"), scmt::IoError);
}

TEST(FeatureFiles, RoundTripAndFormatChecks) {
  const std::string dir = testing::TempDir() + "scmt_feat";
  fs::create_directories(dir);
  scmt::Tensor<float> m({5, 3});
  Rng rng(30);
  for (int64_t i = 0; i < m.numel(); ++i) m[i] = static_cast<float>(rng.normal());
  const std::string path = dir + "/probe.fbin";
  scmt::write_feature_file(path, m);
  auto back = scmt::read_feature_file(path);
  ASSERT_EQ(back.dim(0), 5);
  ASSERT_EQ(back.dim(1), 3);
  for (int64_t i = 0; i < m.numel(); ++i) ASSERT_EQ(back[i], m[i]);

  {
    std::ofstream f(dir + "/junk.fbin", std::ios::binary);
    f << "not a feature file at all";
  }
  EXPECT_THROW(scmt::read_feature_file(dir + "/junk.fbin"), scmt::IoError);
  EXPECT_THROW(scmt::read_feature_file(dir + "/absent.fbin"), scmt::IoError);
}

TEST(FeatureExtraction, StoreServesNormalizedMatrices) {
  const std::string dir = testing::TempDir() + "scmt_ds_feat";
  fs::remove_all(dir);
  scmt::DatasetConfig cfg = tiny_dataset_config(dir);
  cfg.n_strong = 2;
  cfg.n_weak = 2;
  cfg.n_unlabeled = 2;
  cfg.n_validation = 2;
  scmt::build_dataset(cfg, 5);

  auto ds = scmt::SedDataset::load(dir);
  scmt::MelParams params;
  std::string stats_path = scmt::extract_features(ds, params);
  EXPECT_TRUE(fs::exists(stats_path));

  auto store = scmt::FeatureStore::open(dir, params);
  const auto& feats = store.get(ds.strong[0].filename);
  EXPECT_EQ(feats.dim(0), 648);
  EXPECT_EQ(feats.dim(1), 128);
  for (int64_t i = 0; i < feats.numel(); i += 101)
    ASSERT_TRUE(std::isfinite(feats[i]));
  EXPECT_EQ(store.silence_floor().size(), 128u);
  // Second lookup hits the cache and must hand back the same storage.
  EXPECT_EQ(&store.get(ds.strong[0].filename), &feats);
}

TEST(BatchComposer, CyclesEachPoolWithoutTruncation) {
  scmt::BatchComposition comp;
  comp.n_strong = 1;
  comp.n_weak = 2;
  comp.n_unlabeled = 0;
  scmt::BatchComposer composer(5, 4, 1, comp, 99);

  std::set<int> seen_strong;
  for (int step = 0; step < 5; ++step) {
    auto draw = composer.next();
    ASSERT_EQ(draw.strong.size(), 1u);
    ASSERT_EQ(draw.weak.size(), 2u);
    ASSERT_TRUE(draw.unlabeled.empty());
    EXPECT_GE(draw.strong[0], 0);
    EXPECT_LT(draw.strong[0], 5);
    seen_strong.insert(draw.strong[0]);
  }
  // One full epoch of the strong pool is a permutation, never a repeat.
  EXPECT_EQ(seen_strong.size(), 5u);

  scmt::BatchComposer twin_a(5, 4, 1, comp, 123), twin_b(5, 4, 1, comp, 123);
  for (int step = 0; step < 12; ++step) {
    auto da = twin_a.next(), db = twin_b.next();
    ASSERT_EQ(da.strong, db.strong);
    ASSERT_EQ(da.weak, db.weak);
  }

  comp.n_unlabeled = 2;
  EXPECT_THROW(scmt::BatchComposer(5, 4, 0, comp, 1), scmt::InvalidInputError);
}

}  // namespace
