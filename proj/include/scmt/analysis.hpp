#pragma once

// Embedding analysis: per-clip embedding extraction, the silhouette score
// over domain tags (on raw embeddings and on the 2-D projection), and the
// report + coordinates files the analyze and compare commands emit.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "scmt/common.hpp"
#include "scmt/dataset.hpp"
#include "scmt/model.hpp"
#include "scmt/silhouette.hpp"
#include "scmt/trainer.hpp"
#include "scmt/tsne.hpp"

namespace scmt {

struct EmbeddingRecord {
  std::string clip_id;
  std::vector<double> vector;  // [d_embed]
  float domain = kDomainReal;
};

// One embedding per clip: the time mean of the recurrent output, computed
// in inference mode.
template <typename S>
std::vector<EmbeddingRecord> extract_embeddings(FpCrnn<S>& model, FeatureStore& store,
                                                const std::vector<ClipRecord>& clips,
                                                int64_t batch_size = 8) {
  SCMT_REQUIRE(!clips.empty(), "extract_embeddings: no clips");
  SCMT_REQUIRE(batch_size > 0, "extract_embeddings: batch size must be positive");
  std::vector<EmbeddingRecord> out;
  out.reserve(clips.size());

  size_t pos = 0;
  while (pos < clips.size()) {
    size_t take = std::min(static_cast<size_t>(batch_size), clips.size() - pos);
    std::vector<const ClipRecord*> chunk;
    for (size_t i = 0; i < take; ++i) chunk.push_back(&clips[pos + i]);
    Tensor<S> x = stack_features<S>(chunk, store);
    InferenceOut<S> inf = infer(model, x);

    const int64_t t_dim = inf.embedding.dim(1), d = inf.embedding.dim(2);
    for (size_t i = 0; i < take; ++i) {
      EmbeddingRecord rec;
      rec.clip_id = chunk[i]->filename;
      rec.domain = chunk[i]->domain;
      rec.vector.assign(static_cast<size_t>(d), 0.0);
      const S* base = inf.embedding.data() + static_cast<int64_t>(i) * t_dim * d;
      for (int64_t t = 0; t < t_dim; ++t)
        for (int64_t j = 0; j < d; ++j)
          rec.vector[static_cast<size_t>(j)] += static_cast<double>(base[t * d + j]);
      for (double& v : rec.vector) v /= static_cast<double>(t_dim);
      for (double v : rec.vector)
        SCMT_REQUIRE(std::isfinite(v), "extract_embeddings: non-finite embedding for " +
                                           rec.clip_id);
      out.push_back(std::move(rec));
    }
    pos += take;
  }
  return out;
}

// Silhouette over the records' domain tags, either on the raw embedding
// vectors or on a supplied 2-D projection.
inline SilhouetteResult domain_silhouette(const std::vector<EmbeddingRecord>& records) {
  std::vector<std::vector<double>> points;
  std::vector<int> labels;
  points.reserve(records.size());
  labels.reserve(records.size());
  for (const EmbeddingRecord& r : records) {
    points.push_back(r.vector);
    labels.push_back(r.domain > 0.5f ? 1 : 0);
  }
  return silhouette_score(points, labels);
}

struct GapReport {
  double silhouette_projection = 0.0;
  double silhouette_raw = 0.0;
  std::vector<std::array<double, 2>> coords;  // one row per record
  std::vector<EmbeddingRecord> records;       // coords[i] belongs to records[i]
};

// The domain-gap analysis: project the embeddings to 2-D, then score how
// separated the two domains are both in the projection (the headline
// number; lower = better aligned) and in the raw embedding space (the
// projection-free cross-check).
inline GapReport domain_gap_report(std::vector<EmbeddingRecord> records,
                                   const TsneOptions& tsne = {}) {
  SCMT_REQUIRE(records.size() >= 5, "domain_gap_report: need at least 5 clips");
  bool has0 = false, has1 = false;
  for (const EmbeddingRecord& r : records) (r.domain > 0.5f ? has1 : has0) = true;
  SCMT_REQUIRE(has0 && has1, "domain_gap_report: need clips from both domains");

  GapReport report;
  report.silhouette_raw = domain_silhouette(records).score;

  std::vector<std::vector<double>> points;
  points.reserve(records.size());
  for (const EmbeddingRecord& r : records) points.push_back(r.vector);
  report.coords = project_2d(points, tsne);

  std::vector<std::vector<double>> proj;
  std::vector<int> labels;
  proj.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    proj.push_back({report.coords[i][0], report.coords[i][1]});
    labels.push_back(records[i].domain > 0.5f ? 1 : 0);
  }
  report.silhouette_projection = silhouette_score(proj, labels).score;
  report.records = std::move(records);
  return report;
}

// Structured text report consumed by the compare command. One key per line,
// same key=value format as configs.
inline void write_gap_report(const std::string& path, const std::string& strategy,
                             bool ada, double f1, const GapReport& report,
                             uint64_t seed) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_gap_report: cannot write " + path);
  f.precision(9);
  f << "strategy=" << strategy << "\n"
    << "ada=" << (ada ? "true" : "false") << "\n"
    << "f1=" << f1 << "\n"
    << "silhouette_projection=" << report.silhouette_projection << "\n"
    << "silhouette_raw=" << report.silhouette_raw << "\n"
    << "seed=" << seed << "\n";
  if (!f) throw IoError("write_gap_report: short write to " + path);
}

// Plain-text coordinate table for external plotting: clip id, x, y, domain.
inline void write_coords(const std::string& path, const GapReport& report) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_coords: cannot write " + path);
  f << "clip_id\tx\ty\tdomain\n";
  f.precision(9);
  for (size_t i = 0; i < report.records.size(); ++i) {
    f << report.records[i].clip_id << "\t" << report.coords[i][0] << "\t"
      << report.coords[i][1] << "\t"
      << (report.records[i].domain > 0.5f ? "real" : "synthetic") << "\n";
  }
  if (!f) throw IoError("write_coords: short write to " + path);
}

// One row of the cross-run comparison table.
struct CompareRow {
  std::string strategy;
  bool ada = false;
  double f1 = 0.0;
  double silhouette_projection = 0.0;
  double silhouette_raw = 0.0;
  uint64_t seed = 0;
};

inline CompareRow read_gap_report(const std::string& path) {
  KvConfig kv = KvConfig::load(path);
  CompareRow row;
  row.strategy = kv.get_string("strategy");
  row.ada = kv.get_bool("ada");
  row.f1 = kv.get_double("f1");
  row.silhouette_projection = kv.get_double("silhouette_projection");
  row.silhouette_raw = kv.get_double("silhouette_raw");
  row.seed = static_cast<uint64_t>(kv.get_int("seed"));
  return row;
}

// Fixed-width table across runs, mirroring the F1-by-strategy and
// silhouette-by-strategy summaries.
inline std::string format_compare_table(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "strategy" << std::setw(6) << "ada"
     << std::setw(8) << "seed" << std::right << std::setw(10) << "f1"
     << std::setw(14) << "sil_proj" << std::setw(14) << "sil_raw" << "\n";
  for (const CompareRow& r : rows) {
    os << std::left << std::setw(10) << r.strategy << std::setw(6)
       << (r.ada ? "on" : "off") << std::setw(8) << r.seed << std::right
       << std::fixed << std::setprecision(4) << std::setw(10) << r.f1
       << std::setw(14) << r.silhouette_projection << std::setw(14)
       << r.silhouette_raw << "\n";
    os.unsetf(std::ios::fixed);
  }
  return os.str();
}

}  // namespace scmt
