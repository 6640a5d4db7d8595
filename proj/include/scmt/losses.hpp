#ifndef SCMT_LOSSES_HPP_
#define SCMT_LOSSES_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "scmt/augment.hpp"
#include "scmt/autodiff.hpp"
#include "scmt/common.hpp"
#include "scmt/rng.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

// Consistency-weight schedule: 0 -> exp(-5), reaching 1 at step T and
// staying there. Strictly increasing on [0, T].
inline double ramp_up(double t, double T) {
  SCMT_REQUIRE(T > 0.0, "ramp_up: T must be positive");
  double frac = std::min(std::max(t, 0.0), T) / T;
  double d = 1.0 - frac;
  return std::exp(-5.0 * d * d);
}

enum class Strategy { none, ict, sct, scmt };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "none") return Strategy::none;
  if (s == "ict") return Strategy::ict;
  if (s == "sct") return Strategy::sct;
  if (s == "scmt") return Strategy::scmt;
  throw ConfigError("unknown strategy: " + s);
}

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::none: return "none";
    case Strategy::ict: return "ict";
    case Strategy::sct: return "sct";
    case Strategy::scmt: return "scmt";
  }
  return "?";
}

// Every component is stored raw (unweighted, >= 0); ramp_weight and lambda_d
// record the weights in force, and total is the weighted sum the strategy
// optimizes. strategy_total() is the single place that sum is defined.
struct LossBreakdown {
  double l_w_bce = 0, l_s_bce = 0, lp_w_mse = 0, lp_s_mse = 0;
  double l_ict = 0;
  double l_wf_bce = 0, l_sf_bce = 0, l_st_bce = 0, l_st_mse = 0;
  double lp_wt_mse = 0, lp_wf_mse = 0, lp_st_mse = 0, lp_sf_mse = 0;
  double l_d = 0;
  double ramp_weight = 0;
  double lambda_d = 0;
  double total = 0;

  static const std::vector<std::string>& field_names() {
    static const std::vector<std::string> names = {
        "l_w_bce",    "l_s_bce",    "lp_w_mse",  "lp_s_mse", "l_ict",
        "l_wf_bce",   "l_sf_bce",   "l_st_bce",  "l_st_mse", "lp_wt_mse",
        "lp_wf_mse",  "lp_st_mse",  "lp_sf_mse", "l_d",      "ramp_weight",
        "lambda_d",   "total"};
    return names;
  }

  std::vector<double> values() const {
    return {l_w_bce,   l_s_bce,   lp_w_mse,  lp_s_mse, l_ict,
            l_wf_bce,  l_sf_bce,  l_st_bce,  l_st_mse, lp_wt_mse,
            lp_wf_mse, lp_st_mse, lp_sf_mse, l_d,      ramp_weight,
            lambda_d,  total};
  }
};

inline double strategy_total(const LossBreakdown& p, Strategy s, bool with_domain) {
  double base = 0.0;
  switch (s) {
    case Strategy::none:
      base = p.l_w_bce + p.l_s_bce + p.ramp_weight * (p.lp_w_mse + p.lp_s_mse);
      break;
    case Strategy::ict:
      base = p.l_w_bce + p.l_s_bce +
             p.ramp_weight * (p.lp_w_mse + p.lp_s_mse + p.l_ict);
      break;
    case Strategy::sct:
      base = p.l_wf_bce + p.l_sf_bce + p.l_st_bce + p.ramp_weight * p.l_st_mse;
      break;
    case Strategy::scmt:
      base = p.l_wf_bce + p.l_sf_bce + p.l_st_bce +
             p.ramp_weight * (p.l_st_mse + p.lp_wt_mse + p.lp_wf_mse + p.lp_st_mse +
                              p.lp_sf_mse);
      break;
  }
  if (with_domain) base += p.lambda_d * p.l_d;
  return base;
}

// One training batch as the losses see it: normalized features plus label
// rasters and the index sets naming which clips carry which supervision.
template <typename S>
struct LossBatch {
  Tensor<S> x;        // [B x 1 x T_in x F]
  Tensor<S> weak;     // [B x C], 0/1 clip presence (defined where has-weak)
  Tensor<S> strong;   // [B x T_out x C], 0/1 frame raster (defined where has-strong)
  Tensor<S> domain;   // [B], 0 = synthetic, 1 = real
  std::vector<int64_t> weak_idx;
  std::vector<int64_t> strong_idx;
  std::vector<int64_t> unlabeled_idx;  // real unlabeled clips, for interpolation
  std::vector<S> freq_fill;            // per-bin floor for frequency shifts

  int64_t size() const { return x.numel() ? x.dim(0) : 0; }
};

// Student outputs already on the tape; teacher outputs are plain values.
struct StudentOut {
  Var clip_probs;   // [B x C]
  Var frame_probs;  // [B x T_out x C]
};

template <typename S>
struct TeacherOut {
  Tensor<S> clip;   // [B x C]
  Tensor<S> frame;  // [B x T_out x C]
};

// student_fn: builds a forward pass on the shared tape from an input Var.
// eval_fn: gradient-free forward of some parameter snapshot (teacher, or the
// student itself when a stop-gradient target is needed).
template <typename S>
using StudentFn = std::function<StudentOut(Tape<S>&, const Tensor<S>&)>;
template <typename S>
using EvalFn = std::function<TeacherOut<S>(const Tensor<S>&)>;

template <typename S>
struct GraphLoss {
  Var var;  // node to run backward on (raw domain term included unweighted)
  LossBreakdown parts;
  bool domain_degenerate = false;
  bool ict_skipped = false;
};

namespace loss_detail {

template <typename S>
Var zero_scalar(Tape<S>& t) {
  return t.constant(Tensor<S>({1}));
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int64_t>& idx) {
  SCMT_REQUIRE(x.rank() >= 1 && x.dim(0) > 0, "gather_rows: empty source");
  const int64_t stride = x.numel() / x.dim(0);
  std::vector<int64_t> shape = x.shape();
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor<S> out(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    SCMT_REQUIRE(idx[i] >= 0 && idx[i] < x.dim(0), "gather_rows: index out of range");
    std::copy(x.data() + idx[i] * stride, x.data() + (idx[i] + 1) * stride,
              out.data() + static_cast<int64_t>(i) * stride);
  }
  return out;
}

// BCE of the selected rows of probs against the selected rows of targets;
// zero when the selection is empty.
template <typename S>
Var masked_bce(Tape<S>& t, Var probs, const Tensor<S>& targets,
               const std::vector<int64_t>& idx) {
  if (idx.empty()) return zero_scalar(t);
  Var sel = ad::rows(t, probs, idx);
  return ad::bce_mean(t, sel, gather_rows(targets, idx));
}

}  // namespace loss_detail

// Base semi-supervised loss: supervised BCE on the labeled subsets plus
// ramped MSE consistency against the teacher on every clip. The teacher
// values arrive as constants; no gradient reaches them.
template <typename S>
GraphLoss<S> mean_teacher_loss(Tape<S>& t, const StudentOut& student,
                               const TeacherOut<S>& teacher, const LossBatch<S>& batch,
                               double step, double ramp_steps) {
  SCMT_REQUIRE(t.value(student.clip_probs).same_shape(teacher.clip) &&
                   t.value(student.frame_probs).same_shape(teacher.frame),
               "mean_teacher_loss: teacher/student shape mismatch");
  GraphLoss<S> out;
  const double r = ramp_up(step, ramp_steps);

  Var l_w = loss_detail::masked_bce(t, student.clip_probs, batch.weak, batch.weak_idx);
  Var l_s =
      loss_detail::masked_bce(t, student.frame_probs, batch.strong, batch.strong_idx);
  Var lp_w = ad::mse_mean(t, student.clip_probs, teacher.clip);
  Var lp_s = ad::mse_mean(t, student.frame_probs, teacher.frame);

  out.var = ad::weighted_sum(t, {{1.0, l_w}, {1.0, l_s}, {r, lp_w}, {r, lp_s}});
  out.parts.l_w_bce = t.scalar(l_w);
  out.parts.l_s_bce = t.scalar(l_s);
  out.parts.lp_w_mse = t.scalar(lp_w);
  out.parts.lp_s_mse = t.scalar(lp_s);
  out.parts.ramp_weight = r;
  out.parts.total = strategy_total(out.parts, Strategy::none, false);
  return out;
}

// Interpolation consistency on real unlabeled clips: the student's output on
// a lambda-mixture of two clips should equal the lambda-mixture of the
// teacher's outputs on the unmixed clips. Returns the RAW (unweighted) term;
// the strategy composition applies the ramp weight.
template <typename S>
GraphLoss<S> ict_loss(Tape<S>& t, const StudentFn<S>& student, const EvalFn<S>& teacher,
                      const Tensor<S>& unlabeled_x, const std::vector<int64_t>& perm,
                      double lambda) {
  GraphLoss<S> out;
  SCMT_REQUIRE(lambda >= 0.0 && lambda <= 1.0, "ict: lambda must be in [0,1]");
  const int64_t n = unlabeled_x.numel() ? unlabeled_x.dim(0) : 0;
  if (n < 2) {
    out.var = loss_detail::zero_scalar(t);
    out.ict_skipped = true;
    return out;
  }
  SCMT_REQUIRE(static_cast<int64_t>(perm.size()) == n, "ict: permutation size mismatch");

  Tensor<S> partner = loss_detail::gather_rows(unlabeled_x, perm);
  Tensor<S> mixed = mix(unlabeled_x, partner, lambda);
  StudentOut s = student(t, mixed);

  TeacherOut<S> te = teacher(unlabeled_x);
  Tensor<S> target_clip =
      mix(te.clip, loss_detail::gather_rows(te.clip, perm), lambda);
  Tensor<S> target_frame =
      mix(te.frame, loss_detail::gather_rows(te.frame, perm), lambda);

  Var m_clip = ad::mse_mean(t, s.clip_probs, target_clip);
  Var m_frame = ad::mse_mean(t, s.frame_probs, target_frame);
  out.var = ad::weighted_sum(t, {{1.0, m_clip}, {1.0, m_frame}});
  out.parts.l_ict = t.scalar(out.var);
  return out;
}

// Shift-consistency loss. Frequency-shifted inputs answer to the unshifted
// labels (clip BCE for weak, frame BCE for strong); time-shifted inputs
// answer to time-shifted strong labels plus a ramped MSE that anchors the
// time-shifted prediction to the shifted unshifted-input prediction, which
// is held constant (stop-gradient via the gradient-free eval pass).
template <typename S>
GraphLoss<S> sct_loss(Tape<S>& t, const StudentFn<S>& student,
                      const EvalFn<S>& student_eval, const LossBatch<S>& batch,
                      const ShiftSpec& shift, double step, double ramp_steps) {
  GraphLoss<S> out;
  const double r = ramp_up(step, ramp_steps);
  const int64_t in_frames = batch.x.dim(2);

  Tensor<S> x_f = freq_shift(batch.x, shift.nu_bins,
                                      std::span<const S>(batch.freq_fill));
  Tensor<S> x_t = time_shift(batch.x, shift.tau_frames);
  StudentOut s_f = student(t, x_f);
  StudentOut s_t = student(t, x_t);

  const int64_t out_frames = t.value(s_t.frame_probs).dim(1);
  Tensor<S> strong_shifted = batch.strong;
  if (!batch.strong_idx.empty())
    strong_shifted =
        shift_labels(batch.strong, shift.tau_frames, in_frames, out_frames);

  Var l_wf = loss_detail::masked_bce(t, s_f.clip_probs, batch.weak, batch.weak_idx);
  Var l_sf = loss_detail::masked_bce(t, s_f.frame_probs, batch.strong, batch.strong_idx);
  Var l_st = loss_detail::masked_bce(t, s_t.frame_probs, strong_shifted,
                                     batch.strong_idx);

  TeacherOut<S> own = student_eval(batch.x);
  const int64_t tau_out = scale_shift_frames(shift.tau_frames, in_frames, out_frames);
  Tensor<S> st_target = time_shift(own.frame, tau_out);
  Var l_st_mse = ad::mse_mean(t, s_t.frame_probs, st_target);

  out.var =
      ad::weighted_sum(t, {{1.0, l_wf}, {1.0, l_sf}, {1.0, l_st}, {r, l_st_mse}});
  out.parts.l_wf_bce = t.scalar(l_wf);
  out.parts.l_sf_bce = t.scalar(l_sf);
  out.parts.l_st_bce = t.scalar(l_st);
  out.parts.l_st_mse = t.scalar(l_st_mse);
  out.parts.ramp_weight = r;
  out.parts.total = strategy_total(out.parts, Strategy::sct, false);
  return out;
}

// Shift-consistency mean teacher: the SCT terms plus four ramped MSE terms
// tying the student's shifted outputs to the teacher's outputs on the same
// shifted inputs with noise added, at clip (w) and frame (s) level for the
// time (t) and frequency (f) shifts.
template <typename S>
GraphLoss<S> scmt_loss(Tape<S>& t, const StudentFn<S>& student,
                       const EvalFn<S>& student_eval, const EvalFn<S>& teacher,
                       const LossBatch<S>& batch, const ShiftSpec& shift,
                       double noise_sigma, Rng& rng, double step, double ramp_steps) {
  GraphLoss<S> out;
  const double r = ramp_up(step, ramp_steps);
  const int64_t in_frames = batch.x.dim(2);

  Tensor<S> x_f = freq_shift(batch.x, shift.nu_bins,
                                      std::span<const S>(batch.freq_fill));
  Tensor<S> x_t = time_shift(batch.x, shift.tau_frames);
  StudentOut s_f = student(t, x_f);
  StudentOut s_t = student(t, x_t);

  const int64_t out_frames = t.value(s_t.frame_probs).dim(1);
  Tensor<S> strong_shifted = batch.strong;
  if (!batch.strong_idx.empty())
    strong_shifted =
        shift_labels(batch.strong, shift.tau_frames, in_frames, out_frames);

  Var l_wf = loss_detail::masked_bce(t, s_f.clip_probs, batch.weak, batch.weak_idx);
  Var l_sf = loss_detail::masked_bce(t, s_f.frame_probs, batch.strong, batch.strong_idx);
  Var l_st = loss_detail::masked_bce(t, s_t.frame_probs, strong_shifted,
                                     batch.strong_idx);

  TeacherOut<S> own = student_eval(batch.x);
  const int64_t tau_out = scale_shift_frames(shift.tau_frames, in_frames, out_frames);
  Tensor<S> st_target = time_shift(own.frame, tau_out);
  Var l_st_mse = ad::mse_mean(t, s_t.frame_probs, st_target);

  TeacherOut<S> te_t = teacher(add_noise(x_t, noise_sigma, rng));
  TeacherOut<S> te_f = teacher(add_noise(x_f, noise_sigma, rng));
  Var lp_wt = ad::mse_mean(t, s_t.clip_probs, te_t.clip);
  Var lp_st = ad::mse_mean(t, s_t.frame_probs, te_t.frame);
  Var lp_wf = ad::mse_mean(t, s_f.clip_probs, te_f.clip);
  Var lp_sf = ad::mse_mean(t, s_f.frame_probs, te_f.frame);

  out.var = ad::weighted_sum(t, {{1.0, l_wf},
                                 {1.0, l_sf},
                                 {1.0, l_st},
                                 {r, l_st_mse},
                                 {r, lp_wt},
                                 {r, lp_wf},
                                 {r, lp_st},
                                 {r, lp_sf}});
  out.parts.l_wf_bce = t.scalar(l_wf);
  out.parts.l_sf_bce = t.scalar(l_sf);
  out.parts.l_st_bce = t.scalar(l_st);
  out.parts.l_st_mse = t.scalar(l_st_mse);
  out.parts.lp_wt_mse = t.scalar(lp_wt);
  out.parts.lp_wf_mse = t.scalar(lp_wf);
  out.parts.lp_st_mse = t.scalar(lp_st);
  out.parts.lp_sf_mse = t.scalar(lp_sf);
  out.parts.ramp_weight = r;
  out.parts.total = strategy_total(out.parts, Strategy::scmt, false);
  return out;
}

// Frame-level domain BCE: the clip's domain tag broadcast over frames. The
// term enters the graph UNWEIGHTED; the reversal layer inside the
// discriminator path already carries -lambda_d, so the discriminator itself
// descends the raw loss while the feature extractor receives the reversed,
// scaled gradient. The reported total applies lambda_d for bookkeeping.
template <typename S>
Var domain_bce(Tape<S>& t, Var domain_probs, const Tensor<S>& domain_tags,
               bool* degenerate) {
  const Tensor<S>& p = t.value(domain_probs);
  SCMT_REQUIRE(p.rank() == 2, "domain_bce: expected [B x T] probabilities");
  SCMT_REQUIRE(domain_tags.numel() == p.dim(0), "domain_bce: tag count mismatch");
  Tensor<S> target(p.shape());
  bool any0 = false, any1 = false;
  for (int64_t b = 0; b < p.dim(0); ++b) {
    const S tag = domain_tags[b];
    (tag > S(0.5) ? any1 : any0) = true;
    for (int64_t f = 0; f < p.dim(1); ++f) target[b * p.dim(1) + f] = tag;
  }
  if (degenerate) *degenerate = !(any0 && any1);
  return ad::bce_mean(t, domain_probs, target);
}

template <typename S>
double domain_accuracy(const Tensor<S>& domain_probs, const Tensor<S>& domain_tags) {
  SCMT_REQUIRE(domain_probs.rank() == 2 && domain_tags.numel() == domain_probs.dim(0),
               "domain_accuracy: shape mismatch");
  int64_t hit = 0;
  const int64_t b_dim = domain_probs.dim(0), t_dim = domain_probs.dim(1);
  for (int64_t b = 0; b < b_dim; ++b)
    for (int64_t f = 0; f < t_dim; ++f) {
      bool pred = domain_probs[b * t_dim + f] > S(0.5);
      bool truth = domain_tags[b] > S(0.5);
      hit += (pred == truth) ? 1 : 0;
    }
  return static_cast<double>(hit) / static_cast<double>(b_dim * t_dim);
}

// Plain supervised objective plus the adversarial domain term, for training
// without a consistency strategy (and for isolating the reversal-layer
// mechanics in tests).
template <typename S>
GraphLoss<S> ada_objective(Tape<S>& t, const StudentOut& student, Var domain_probs,
                           const LossBatch<S>& batch, double lambda_d) {
  GraphLoss<S> out;
  Var l_w = loss_detail::masked_bce(t, student.clip_probs, batch.weak, batch.weak_idx);
  Var l_s =
      loss_detail::masked_bce(t, student.frame_probs, batch.strong, batch.strong_idx);
  Var l_d = domain_bce(t, domain_probs, batch.domain, &out.domain_degenerate);
  out.var = ad::weighted_sum(t, {{1.0, l_w}, {1.0, l_s}, {1.0, l_d}});
  out.parts.l_w_bce = t.scalar(l_w);
  out.parts.l_s_bce = t.scalar(l_s);
  out.parts.l_d = t.scalar(l_d);
  out.parts.lambda_d = lambda_d;
  out.parts.total = out.parts.l_w_bce + out.parts.l_s_bce + lambda_d * out.parts.l_d;
  return out;
}

}  // namespace scmt

#endif  // SCMT_LOSSES_HPP_
