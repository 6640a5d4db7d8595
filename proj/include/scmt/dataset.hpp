#pragma once

// Dataset plumbing: TSV manifest parsing, a binary feature cache so the
// mel front end runs once per clip instead of once per epoch, and the
// batch composer that mixes strong / weak / unlabeled clips in fixed
// proportions with per-epoch reshuffles.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scmt/audio.hpp"
#include "scmt/common.hpp"
#include "scmt/events.hpp"
#include "scmt/melspec.hpp"
#include "scmt/rng.hpp"
#include "scmt/tensor.hpp"
#include "scmt/wav.hpp"

namespace scmt {

// Domain tags used throughout training: the clean strong split is the
// synthetic domain, everything passed through the channel simulation is
// the real domain.
constexpr float kDomainSynthetic = 0.0f;
constexpr float kDomainReal = 1.0f;

struct ClipRecord {
  std::string filename;             // path relative to the dataset root
  std::vector<EventLabel> events;   // strong labels, empty otherwise
  std::vector<int> tags;            // weak tags (class ids), sorted unique
  float domain = kDomainReal;
};

namespace dataset_detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().pop_back();
  return out;
}

inline int class_index(const std::vector<std::string>& names, const std::string& name,
                       const std::string& where) {
  auto it = std::find(names.begin(), names.end(), name);
  SCMT_REQUIRE(it != names.end(), where + ": unknown class '" + name + "'");
  return static_cast<int>(it - names.begin());
}

}  // namespace dataset_detail

inline std::vector<std::string> read_class_names(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_class_names: cannot open " + path);
  std::vector<std::string> names;
  std::string line;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  SCMT_REQUIRE(!names.empty(), "read_class_names: empty file " + path);
  return names;
}

// Strong manifest: one row per event, grouped into one record per clip.
// Clip order follows first appearance, so generation order is preserved.
inline std::vector<ClipRecord> read_strong_manifest(const std::string& path,
                                                    const std::vector<std::string>& classes,
                                                    float domain) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_strong_manifest: cannot open " + path);
  std::string line;
  SCMT_REQUIRE(static_cast<bool>(std::getline(f, line)),
               "read_strong_manifest: empty file " + path);

  std::vector<ClipRecord> records;
  std::map<std::string, size_t> index;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cols = dataset_detail::split_tabs(line);
    SCMT_REQUIRE(cols.size() == 4, "read_strong_manifest: expected 4 columns in " + path);
    auto [it, inserted] = index.try_emplace(cols[0], records.size());
    if (inserted) {
      ClipRecord rec;
      rec.filename = cols[0];
      rec.domain = domain;
      records.push_back(rec);
    }
    EventLabel e;
    e.class_id = dataset_detail::class_index(classes, cols[3], "read_strong_manifest");
    e.onset = std::stod(cols[1]);
    e.offset = std::stod(cols[2]);
    SCMT_REQUIRE(e.onset < e.offset, "read_strong_manifest: onset must precede offset");
    records[it->second].events.push_back(e);
  }
  for (ClipRecord& rec : records) {
    std::set<int> present;
    for (const EventLabel& e : rec.events) present.insert(e.class_id);
    rec.tags.assign(present.begin(), present.end());
  }
  return records;
}

inline std::vector<ClipRecord> read_weak_manifest(const std::string& path,
                                                  const std::vector<std::string>& classes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_weak_manifest: cannot open " + path);
  std::string line;
  SCMT_REQUIRE(static_cast<bool>(std::getline(f, line)),
               "read_weak_manifest: empty file " + path);

  std::vector<ClipRecord> records;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cols = dataset_detail::split_tabs(line);
    SCMT_REQUIRE(cols.size() == 2, "read_weak_manifest: expected 2 columns in " + path);
    ClipRecord rec;
    rec.filename = cols[0];
    rec.domain = kDomainReal;
    std::set<int> present;
    std::istringstream tags(cols[1]);
    std::string name;
    while (std::getline(tags, name, ',')) {
      if (!name.empty())
        present.insert(dataset_detail::class_index(classes, name, "read_weak_manifest"));
    }
    rec.tags.assign(present.begin(), present.end());
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::vector<ClipRecord> read_unlabeled_manifest(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_unlabeled_manifest: cannot open " + path);
  std::string line;
  SCMT_REQUIRE(static_cast<bool>(std::getline(f, line)),
               "read_unlabeled_manifest: empty file " + path);

  std::vector<ClipRecord> records;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto cols = dataset_detail::split_tabs(line);
    SCMT_REQUIRE(cols.size() == 1, "read_unlabeled_manifest: expected 1 column in " + path);
    ClipRecord rec;
    rec.filename = cols[0];
    rec.domain = kDomainReal;
    records.push_back(std::move(rec));
  }
  return records;
}

// The four-split dataset as produced by the generator.
struct SedDataset {
  std::string root;
  std::vector<std::string> class_names;
  std::vector<ClipRecord> strong;
  std::vector<ClipRecord> weak;
  std::vector<ClipRecord> unlabeled;
  std::vector<ClipRecord> validation;

  int n_classes() const { return static_cast<int>(class_names.size()); }

  static SedDataset load(const std::string& root_dir) {
    namespace fs = std::filesystem;
    SedDataset ds;
    ds.root = root_dir;
    ds.class_names = read_class_names((fs::path(root_dir) / "classes.txt").string());
    ds.strong = read_strong_manifest((fs::path(root_dir) / "strong.tsv").string(),
                                     ds.class_names, kDomainSynthetic);
    ds.weak = read_weak_manifest((fs::path(root_dir) / "weak.tsv").string(), ds.class_names);
    ds.unlabeled =
        read_unlabeled_manifest((fs::path(root_dir) / "unlabeled.tsv").string());
    ds.validation = read_strong_manifest((fs::path(root_dir) / "validation.tsv").string(),
                                         ds.class_names, kDomainReal);
    return ds;
  }
};

// Binary feature file: one log-mel matrix per clip, float32 row-major.
inline void write_feature_file(const std::string& path, const Tensor<float>& features) {
  SCMT_REQUIRE(features.rank() == 2, "write_feature_file: expected a [frames x mels] matrix");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_feature_file: cannot open " + path);
  const char magic[8] = {'S', 'C', 'M', 'T', 'F', 'E', 'A', 'T'};
  uint32_t version = 1;
  uint32_t rows = static_cast<uint32_t>(features.dim(0));
  uint32_t cols = static_cast<uint32_t>(features.dim(1));
  f.write(magic, 8);
  f.write(reinterpret_cast<const char*>(&version), 4);
  f.write(reinterpret_cast<const char*>(&rows), 4);
  f.write(reinterpret_cast<const char*>(&cols), 4);
  f.write(reinterpret_cast<const char*>(features.data()),
          static_cast<std::streamsize>(features.numel() * sizeof(float)));
  if (!f) throw IoError("write_feature_file: short write to " + path);
}

inline Tensor<float> read_feature_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_feature_file: cannot open " + path);
  char magic[8];
  uint32_t version = 0, rows = 0, cols = 0;
  f.read(magic, 8);
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&rows), 4);
  f.read(reinterpret_cast<char*>(&cols), 4);
  if (!f || std::string(magic, 8) != "SCMTFEAT")
    throw IoError("read_feature_file: not a feature file: " + path);
  if (version != 1)
    throw IoError("read_feature_file: unsupported version in " + path);
  Tensor<float> out({static_cast<int64_t>(rows), static_cast<int64_t>(cols)});
  f.read(reinterpret_cast<char*>(out.data()),
         static_cast<std::streamsize>(out.numel() * sizeof(float)));
  if (!f) throw IoError("read_feature_file: truncated file " + path);
  return out;
}

// Feature extraction pass: log-mel for every clip in every split, raw
// (un-normalized) matrices on disk, plus normalization stats computed over
// the three training splits. Returns the stats path.
inline std::string extract_features(const SedDataset& ds, const MelParams& params = {}) {
  namespace fs = std::filesystem;
  fs::path feat_root = fs::path(ds.root) / "features";

  auto process = [&](const std::vector<ClipRecord>& clips,
                     std::vector<LogMelSpectrogram>* collect) {
    for (const ClipRecord& rec : clips) {
      fs::path wav_path = fs::path(ds.root) / rec.filename;
      fs::path out_path = feat_root / fs::path(rec.filename).lexically_relative("audio");
      out_path.replace_extension(".fbin");
      fs::create_directories(out_path.parent_path());

      WavData wav = read_wav(wav_path.string());
      AudioClip clip;
      clip.clip_id = rec.filename;
      clip.sample_rate = wav.sample_rate;
      clip.samples = std::move(wav.samples);
      if (clip.sample_rate != params.sample_rate) clip = resample(clip, params.sample_rate);
      pad_or_crop(clip, params.clip_samples());

      LogMelSpectrogram spec = log_mel(clip, params);
      write_feature_file(out_path.string(), spec.values);
      if (collect) collect->push_back(std::move(spec));
    }
  };

  std::vector<LogMelSpectrogram> train_specs;
  process(ds.strong, &train_specs);
  process(ds.weak, &train_specs);
  process(ds.unlabeled, &train_specs);
  process(ds.validation, nullptr);

  std::vector<const LogMelSpectrogram*> ptrs;
  ptrs.reserve(train_specs.size());
  for (const auto& s : train_specs) ptrs.push_back(&s);
  NormStats stats = NormStats::compute(ptrs);
  std::string stats_path = (feat_root / "norm_stats.txt").string();
  stats.save(stats_path);
  return stats_path;
}

// In-memory store of normalized features, loaded lazily from the cache.
class FeatureStore {
 public:
  FeatureStore(std::string dataset_root, NormStats stats, double log_floor)
      : root_(std::move(dataset_root)), stats_(std::move(stats)) {
    floor_ = stats_.normalized_floor(log_floor);
  }

  static FeatureStore open(const std::string& dataset_root, const MelParams& params = {}) {
    namespace fs = std::filesystem;
    std::string stats_path = (fs::path(dataset_root) / "features" / "norm_stats.txt").string();
    return FeatureStore(dataset_root, NormStats::load(stats_path), params.log_floor());
  }

  // Normalized [frames x mels] features for a manifest filename.
  const Tensor<float>& get(const std::string& filename) {
    auto it = cache_.find(filename);
    if (it != cache_.end()) return it->second;

    namespace fs = std::filesystem;
    fs::path path = fs::path(root_) / "features" /
                    fs::path(filename).lexically_relative("audio");
    path.replace_extension(".fbin");
    Tensor<float> raw = read_feature_file(path.string());
    SCMT_REQUIRE(raw.dim(1) == static_cast<int64_t>(stats_.mean.size()),
                 "FeatureStore: mel count mismatch for " + filename);
    const int64_t n_mels = raw.dim(1);
    for (int64_t t = 0; t < raw.dim(0); ++t) {
      float* row = raw.data() + t * n_mels;
      for (int64_t m = 0; m < n_mels; ++m)
        row[m] = (row[m] - stats_.mean[static_cast<size_t>(m)]) /
                 stats_.std_dev[static_cast<size_t>(m)];
    }
    auto [ins, ok] = cache_.emplace(filename, std::move(raw));
    return ins->second;
  }

  // Fill values for frequency shifts: what a silent bin looks like after
  // normalization, one value per mel bin.
  const std::vector<float>& silence_floor() const { return floor_; }

 private:
  std::string root_;
  NormStats stats_;
  std::vector<float> floor_;
  std::map<std::string, Tensor<float>> cache_;
};

// Draws batches as index lists into the three training pools. Each pool
// cycles independently with its own per-epoch shuffle, so small pools
// repeat more often rather than truncating the epoch.
struct BatchComposition {
  int n_strong = 2;
  int n_weak = 2;
  int n_unlabeled = 2;
};

class BatchComposer {
 public:
  BatchComposer(int strong_pool, int weak_pool, int unlabeled_pool,
                const BatchComposition& comp, uint64_t seed)
      : comp_(comp), rng_(seed) {
    SCMT_REQUIRE(comp.n_strong >= 0 && comp.n_weak >= 0 && comp.n_unlabeled >= 0,
                 "BatchComposer: negative composition count");
    SCMT_REQUIRE(comp.n_strong + comp.n_weak + comp.n_unlabeled > 0,
                 "BatchComposer: empty batch composition");
    SCMT_REQUIRE((comp.n_strong == 0 || strong_pool > 0) &&
                     (comp.n_weak == 0 || weak_pool > 0) &&
                     (comp.n_unlabeled == 0 || unlabeled_pool > 0),
                 "BatchComposer: composition draws from an empty pool");
    init_pool(strong_, strong_pool);
    init_pool(weak_, weak_pool);
    init_pool(unlabeled_, unlabeled_pool);
  }

  struct Draw {
    std::vector<int> strong;
    std::vector<int> weak;
    std::vector<int> unlabeled;
  };

  Draw next() {
    Draw d;
    d.strong = take(strong_, comp_.n_strong);
    d.weak = take(weak_, comp_.n_weak);
    d.unlabeled = take(unlabeled_, comp_.n_unlabeled);
    return d;
  }

 private:
  struct Pool {
    std::vector<int> order;
    size_t pos = 0;
  };

  void init_pool(Pool& p, int n) {
    p.order.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) p.order[static_cast<size_t>(i)] = i;
    if (!p.order.empty()) rng_.shuffle(p.order);
  }

  std::vector<int> take(Pool& p, int count) {
    std::vector<int> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      if (p.pos >= p.order.size()) {
        rng_.shuffle(p.order);
        p.pos = 0;
      }
      out.push_back(p.order[p.pos++]);
    }
    return out;
  }

  BatchComposition comp_;
  Rng rng_;
  Pool strong_;
  Pool weak_;
  Pool unlabeled_;
};

}  // namespace scmt
