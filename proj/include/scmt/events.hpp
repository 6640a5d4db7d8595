#ifndef SCMT_EVENTS_HPP_
#define SCMT_EVENTS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "scmt/common.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

struct EventLabel {
  int class_id = 0;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds
};

// The time grid of the model's output frames. Frame j spans
// [j * frame_period, (j+1) * frame_period) in clip time; rasterization and
// decoding share this grid so they invert each other on aligned events.
struct FrameGrid {
  double frame_period = 8.0 * 255.0 / 16000.0;
  int n_frames = 81;

  double frame_onset(int j) const { return j * frame_period; }
  double frame_offset(int j) const { return (j + 1) * frame_period; }
  double frame_center(int j) const { return (j + 0.5) * frame_period; }
};

// 0/1 frame raster of an event list: a frame is active for a class when its
// center time falls inside one of that class's events.
template <typename S>
Tensor<S> rasterize(const std::vector<EventLabel>& events, const FrameGrid& grid,
                    int n_classes) {
  Tensor<S> out({grid.n_frames, n_classes});
  for (const EventLabel& e : events) {
    SCMT_REQUIRE(e.class_id >= 0 && e.class_id < n_classes,
                 "rasterize: class id out of range");
    SCMT_REQUIRE(e.onset < e.offset, "rasterize: onset must precede offset");
    for (int j = 0; j < grid.n_frames; ++j) {
      double c = grid.frame_center(j);
      if (c >= e.onset && c < e.offset) out[static_cast<int64_t>(j) * n_classes +
                                            e.class_id] = S(1);
    }
  }
  return out;
}

// Binary median filter with zero padding at both ends; window must be odd.
inline std::vector<uint8_t> median_filter_binary(const std::vector<uint8_t>& x,
                                                 int window) {
  SCMT_REQUIRE(window >= 1 && window % 2 == 1, "median filter: window must be odd");
  const int n = static_cast<int>(x.size());
  const int half = window / 2;
  std::vector<uint8_t> out(x.size());
  for (int i = 0; i < n; ++i) {
    int ones = 0;
    for (int k = i - half; k <= i + half; ++k)
      if (k >= 0 && k < n && x[static_cast<size_t>(k)]) ++ones;
    out[static_cast<size_t>(i)] = ones > half ? 1 : 0;
  }
  return out;
}

// Threshold, median-filter, and turn maximal runs of active frames into
// events on the grid.
template <typename S>
std::vector<EventLabel> decode_events(const Tensor<S>& frame_probs,
                                      const FrameGrid& grid, double threshold = 0.5,
                                      int median_window = 7) {
  SCMT_REQUIRE(frame_probs.rank() == 2, "decode_events: expected [frames x classes]");
  SCMT_REQUIRE(frame_probs.dim(0) == grid.n_frames,
               "decode_events: frame count does not match the grid");
  SCMT_REQUIRE(threshold > 0.0 && threshold < 1.0,
               "decode_events: threshold must be inside (0,1)");
  const int n_frames = static_cast<int>(frame_probs.dim(0));
  const int n_classes = static_cast<int>(frame_probs.dim(1));
  std::vector<EventLabel> events;
  std::vector<uint8_t> active(static_cast<size_t>(n_frames));
  for (int c = 0; c < n_classes; ++c) {
    for (int j = 0; j < n_frames; ++j)
      active[static_cast<size_t>(j)] =
          frame_probs[static_cast<int64_t>(j) * n_classes + c] > static_cast<S>(threshold)
              ? 1
              : 0;
    std::vector<uint8_t> filtered = median_filter_binary(active, median_window);
    int run_start = -1;
    for (int j = 0; j <= n_frames; ++j) {
      bool on = j < n_frames && filtered[static_cast<size_t>(j)];
      if (on && run_start < 0) run_start = j;
      if (!on && run_start >= 0) {
        events.push_back({c, grid.frame_onset(run_start), grid.frame_offset(j - 1)});
        run_start = -1;
      }
    }
  }
  return events;
}

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int n_ref = 0;
  int n_pred = 0;
  int n_match = 0;
};

struct F1Result {
  std::map<int, ClassScore> per_class;
  double macro_f1 = 0.0;
};

namespace event_detail {

inline bool collar_match(const EventLabel& pred, const EventLabel& ref,
                         double onset_collar, double offset_collar_frac) {
  if (pred.class_id != ref.class_id) return false;
  double offset_tol =
      std::max(onset_collar, offset_collar_frac * (ref.offset - ref.onset));
  return std::abs(pred.onset - ref.onset) <= onset_collar &&
         std::abs(pred.offset - ref.offset) <= offset_tol;
}

// Augmenting-path maximum bipartite matching; returns the match count. The
// adjacency is tiny here (events per clip), so the simple O(V*E) form is
// plenty.
inline int max_matching(const std::vector<std::vector<int>>& adj, int n_right) {
  std::vector<int> right_owner(static_cast<size_t>(n_right), -1);
  std::vector<char> visited;
  std::function<bool(int)> try_assign = [&](int left) -> bool {
    for (int r : adj[static_cast<size_t>(left)]) {
      if (visited[static_cast<size_t>(r)]) continue;
      visited[static_cast<size_t>(r)] = 1;
      if (right_owner[static_cast<size_t>(r)] < 0 ||
          try_assign(right_owner[static_cast<size_t>(r)])) {
        right_owner[static_cast<size_t>(r)] = left;
        return true;
      }
    }
    return false;
  };
  int matched = 0;
  for (size_t l = 0; l < adj.size(); ++l) {
    visited.assign(static_cast<size_t>(n_right), 0);
    if (try_assign(static_cast<int>(l))) ++matched;
  }
  return matched;
}

}  // namespace event_detail

// Event-based scores with onset/offset collars. Predictions and references
// pair one-to-one; the pairing maximizes the number of matches per class so
// scores never depend on input order. Classes absent from both lists do not
// enter the macro average.
inline F1Result event_f1(const std::vector<EventLabel>& predicted,
                         const std::vector<EventLabel>& reference,
                         double onset_collar = 0.2, double offset_collar_frac = 0.2) {
  SCMT_REQUIRE(onset_collar > 0.0, "event_f1: collar must be positive");
  std::map<int, std::pair<std::vector<EventLabel>, std::vector<EventLabel>>> by_class;
  for (const auto& e : predicted) by_class[e.class_id].first.push_back(e);
  for (const auto& e : reference) by_class[e.class_id].second.push_back(e);

  F1Result result;
  double f1_sum = 0.0;
  for (const auto& [cls, lists] : by_class) {
    const auto& preds = lists.first;
    const auto& refs = lists.second;
    std::vector<std::vector<int>> adj(preds.size());
    for (size_t p = 0; p < preds.size(); ++p)
      for (size_t r = 0; r < refs.size(); ++r)
        if (event_detail::collar_match(preds[p], refs[r], onset_collar,
                                       offset_collar_frac))
          adj[p].push_back(static_cast<int>(r));
    int tp = event_detail::max_matching(adj, static_cast<int>(refs.size()));

    ClassScore s;
    s.n_pred = static_cast<int>(preds.size());
    s.n_ref = static_cast<int>(refs.size());
    s.n_match = tp;
    s.precision = s.n_pred > 0 ? static_cast<double>(tp) / s.n_pred : 0.0;
    s.recall = s.n_ref > 0 ? static_cast<double>(tp) / s.n_ref : 0.0;
    s.f1 = (s.precision + s.recall) > 0.0
               ? 2.0 * s.precision * s.recall / (s.precision + s.recall)
               : 0.0;
    f1_sum += s.f1;
    result.per_class.emplace(cls, s);
  }
  result.macro_f1 =
      result.per_class.empty() ? 0.0 : f1_sum / static_cast<double>(result.per_class.size());
  return result;
}

}  // namespace scmt

#endif  // SCMT_EVENTS_HPP_
