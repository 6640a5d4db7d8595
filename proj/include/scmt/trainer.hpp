#pragma once

// The training loops: stage 1 (semi-supervised, strategy-selected
// consistency) and stage 2 (same objective plus the adversarial domain
// term), the clip-tagger used for pseudo-labeling, and validation scoring.
// Every run writes a frozen config, an append-only metric log, and student
// plus teacher checkpoints into its run directory.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "scmt/augment.hpp"
#include "scmt/autodiff.hpp"
#include "scmt/config.hpp"
#include "scmt/dataset.hpp"
#include "scmt/events.hpp"
#include "scmt/losses.hpp"
#include "scmt/model.hpp"
#include "scmt/nn.hpp"
#include "scmt/rng.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

struct TrainingConfig {
  std::string data_dir;
  std::string run_dir;
  std::string pseudo_manifest;  // optional extra weak clips from pseudo-labeling

  std::string preset = "default";
  Strategy strategy = Strategy::scmt;
  uint64_t seed = 1;
  int stage = 1;
  bool ada = false;  // adversarial domain term (stage 2 only)

  int64_t max_steps = 10000;   // steps this invocation runs
  int64_t ramp_steps = 10000;  // consistency ramp length (continues across stages)
  double lr = 1e-3;
  int64_t lr_warmup_steps = 0;
  double ema_alpha = 0.999;
  double noise_sigma = 0.5;
  double beta_a = 0.5;  // interpolation-mixture distribution
  double beta_b = 0.5;

  BatchComposition batch;
  ShiftParams shifts;

  double lambda_d = 0.1;         // adversarial weight (stage 2)
  double ada_warmup_frac = 0.1;  // fraction of stage-2 steps to ramp lambda_d

  int64_t log_interval = 1;
  int64_t val_interval = 0;   // 0 = validate only at the end
  int64_t ckpt_interval = 0;  // 0 = checkpoint only at the end
  int64_t val_batch = 8;

  double decode_threshold = 0.5;
  int median_window = 7;

  KvConfig to_kv() const {
    KvConfig kv;
    kv.set("run.data_dir", data_dir);
    kv.set("run.dir", run_dir);
    kv.set("run.pseudo_manifest", pseudo_manifest);
    kv.set("run.preset", preset);
    kv.set("run.strategy", std::string(strategy_name(strategy)));
    kv.set("run.seed", static_cast<int64_t>(seed));
    kv.set("run.stage", static_cast<int64_t>(stage));
    kv.set("ada.enabled", ada);
    kv.set("train.max_steps", max_steps);
    kv.set("train.ramp_steps", ramp_steps);
    kv.set("train.lr", lr);
    kv.set("train.lr_warmup_steps", lr_warmup_steps);
    kv.set("train.ema_alpha", ema_alpha);
    kv.set("train.noise_sigma", noise_sigma);
    kv.set("train.beta_a", beta_a);
    kv.set("train.beta_b", beta_b);
    kv.set("train.batch_strong", static_cast<int64_t>(batch.n_strong));
    kv.set("train.batch_weak", static_cast<int64_t>(batch.n_weak));
    kv.set("train.batch_unlabeled", static_cast<int64_t>(batch.n_unlabeled));
    kv.set("shift.max_seconds", shifts.max_shift_seconds);
    kv.set("shift.max_freq_bins", static_cast<int64_t>(shifts.max_freq_bins));
    kv.set("ada.lambda_d", lambda_d);
    kv.set("ada.warmup_frac", ada_warmup_frac);
    kv.set("log.interval", log_interval);
    kv.set("log.val_interval", val_interval);
    kv.set("log.ckpt_interval", ckpt_interval);
    kv.set("log.val_batch", val_batch);
    kv.set("decode.threshold", decode_threshold);
    kv.set("decode.median_window", static_cast<int64_t>(median_window));
    return kv;
  }

  static TrainingConfig from_kv(const KvConfig& kv) {
    TrainingConfig c;
    c.data_dir = kv.get_string("run.data_dir", c.data_dir);
    c.run_dir = kv.get_string("run.dir", c.run_dir);
    c.pseudo_manifest = kv.get_string("run.pseudo_manifest", c.pseudo_manifest);
    c.preset = kv.get_string("run.preset", c.preset);
    c.strategy = parse_strategy(kv.get_string("run.strategy", strategy_name(c.strategy)));
    c.seed = static_cast<uint64_t>(kv.get_int("run.seed", static_cast<int64_t>(c.seed)));
    c.stage = static_cast<int>(kv.get_int("run.stage", c.stage));
    c.ada = kv.get_bool("ada.enabled", c.ada);
    c.max_steps = kv.get_int("train.max_steps", c.max_steps);
    c.ramp_steps = kv.get_int("train.ramp_steps", c.ramp_steps);
    c.lr = kv.get_double("train.lr", c.lr);
    c.lr_warmup_steps = kv.get_int("train.lr_warmup_steps", c.lr_warmup_steps);
    c.ema_alpha = kv.get_double("train.ema_alpha", c.ema_alpha);
    c.noise_sigma = kv.get_double("train.noise_sigma", c.noise_sigma);
    c.beta_a = kv.get_double("train.beta_a", c.beta_a);
    c.beta_b = kv.get_double("train.beta_b", c.beta_b);
    c.batch.n_strong = static_cast<int>(kv.get_int("train.batch_strong", c.batch.n_strong));
    c.batch.n_weak = static_cast<int>(kv.get_int("train.batch_weak", c.batch.n_weak));
    c.batch.n_unlabeled =
        static_cast<int>(kv.get_int("train.batch_unlabeled", c.batch.n_unlabeled));
    c.shifts.max_shift_seconds = kv.get_double("shift.max_seconds", c.shifts.max_shift_seconds);
    c.shifts.max_freq_bins =
        static_cast<int>(kv.get_int("shift.max_freq_bins", c.shifts.max_freq_bins));
    c.lambda_d = kv.get_double("ada.lambda_d", c.lambda_d);
    c.ada_warmup_frac = kv.get_double("ada.warmup_frac", c.ada_warmup_frac);
    c.log_interval = kv.get_int("log.interval", c.log_interval);
    c.val_interval = kv.get_int("log.val_interval", c.val_interval);
    c.ckpt_interval = kv.get_int("log.ckpt_interval", c.ckpt_interval);
    c.val_batch = kv.get_int("log.val_batch", c.val_batch);
    c.decode_threshold = kv.get_double("decode.threshold", c.decode_threshold);
    c.median_window = static_cast<int>(kv.get_int("decode.median_window", c.median_window));
    c.validate();
    return c;
  }

  void validate() const {
    SCMT_CONFIG_REQUIRE(ramp_steps > 0, "training config: ramp_steps must be > 0");
    SCMT_CONFIG_REQUIRE(max_steps >= 0, "training config: max_steps must be >= 0");
    SCMT_CONFIG_REQUIRE(ema_alpha >= 0.0 && ema_alpha < 1.0,
                        "training config: ema_alpha must lie in [0, 1)");
    SCMT_CONFIG_REQUIRE(lambda_d >= 0.0, "training config: lambda_d must be >= 0");
    SCMT_CONFIG_REQUIRE(noise_sigma >= 0.0, "training config: noise_sigma must be >= 0");
    SCMT_CONFIG_REQUIRE(batch.n_strong >= 0 && batch.n_weak >= 0 && batch.n_unlabeled >= 0,
                        "training config: negative batch composition");
    SCMT_CONFIG_REQUIRE(batch.n_strong + batch.n_weak > 0,
                        "training config: at least one labeled source per batch");
    SCMT_CONFIG_REQUIRE(stage == 1 || stage == 2, "training config: stage must be 1 or 2");
    SCMT_CONFIG_REQUIRE(!ada || stage == 2,
                        "training config: the adversarial term belongs to stage 2");
    SCMT_CONFIG_REQUIRE(decode_threshold > 0.0 && decode_threshold < 1.0,
                        "training config: decode threshold must lie in (0, 1)");
    SCMT_CONFIG_REQUIRE(median_window > 0 && median_window % 2 == 1,
                        "training config: median window must be odd");
  }
};

// Clips that received pseudo weak labels carry a provenance marker so the
// manifest records that the tags came from a tagger, not an annotator.
struct PseudoRecord {
  ClipRecord record;
  bool pseudo = true;
};

namespace trainer_detail {

template <typename S>
void check_parts_finite(const LossBreakdown& parts) {
  const auto& names = LossBreakdown::field_names();
  const auto vals = parts.values();
  for (size_t i = 0; i < names.size(); ++i) {
    if (!std::isfinite(vals[i]))
      throw NumericError("training aborted: loss component '" + names[i] +
                         "' is non-finite");
  }
}

template <typename S>
void check_grads_finite(const std::map<std::string, Tensor<S>>& grads) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      const char* group = "feature extractor";
      switch (param_group(name)) {
        case ParamGroup::label: group = "label head"; break;
        case ParamGroup::domain: group = "domain discriminator"; break;
        default: break;
      }
      throw NumericError("training aborted: non-finite gradient in parameter '" + name +
                         "' (" + group + ")");
    }
  }
}

inline std::string format_metric(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace trainer_detail

// Assemble one training batch: features stacked [B x 1 x T x F] in the order
// strong clips, weak clips, unlabeled clips, plus label rasters and the
// index sets the losses consume. Strong clips contribute derived weak
// labels, so they appear in both weak_idx and strong_idx.
template <typename S>
LossBatch<S> make_loss_batch(const std::vector<const ClipRecord*>& strong,
                             const std::vector<const ClipRecord*>& weak,
                             const std::vector<const ClipRecord*>& unlabeled,
                             FeatureStore& store, const FrameGrid& grid, int n_classes) {
  const int64_t b_total =
      static_cast<int64_t>(strong.size() + weak.size() + unlabeled.size());
  SCMT_REQUIRE(b_total > 0, "make_loss_batch: empty batch");

  std::vector<const ClipRecord*> order;
  order.reserve(static_cast<size_t>(b_total));
  order.insert(order.end(), strong.begin(), strong.end());
  order.insert(order.end(), weak.begin(), weak.end());
  order.insert(order.end(), unlabeled.begin(), unlabeled.end());

  const Tensor<float>& first = store.get(order[0]->filename);
  const int64_t t_in = first.dim(0), f_in = first.dim(1);

  LossBatch<S> batch;
  batch.x = Tensor<S>({b_total, 1, t_in, f_in});
  batch.weak = Tensor<S>({b_total, n_classes});
  batch.strong = Tensor<S>({b_total, grid.n_frames, n_classes});
  batch.domain = Tensor<S>({b_total});

  for (int64_t b = 0; b < b_total; ++b) {
    const ClipRecord& rec = *order[static_cast<size_t>(b)];
    const Tensor<float>& feat = store.get(rec.filename);
    SCMT_REQUIRE(feat.dim(0) == t_in && feat.dim(1) == f_in,
                 "make_loss_batch: feature shape mismatch for " + rec.filename);
    S* dst = batch.x.data() + b * t_in * f_in;
    const float* src = feat.data();
    for (int64_t i = 0; i < t_in * f_in; ++i) dst[i] = static_cast<S>(src[i]);
    batch.domain[b] = static_cast<S>(rec.domain);
  }

  int64_t b = 0;
  for (const ClipRecord* rec : strong) {
    for (int c : rec->tags) batch.weak[b * n_classes + c] = S(1);
    Tensor<S> raster = rasterize<S>(rec->events, grid, n_classes);
    std::copy(raster.data(), raster.data() + raster.numel(),
              batch.strong.data() + b * grid.n_frames * n_classes);
    batch.weak_idx.push_back(b);
    batch.strong_idx.push_back(b);
    ++b;
  }
  for (const ClipRecord* rec : weak) {
    for (int c : rec->tags) batch.weak[b * n_classes + c] = S(1);
    batch.weak_idx.push_back(b);
    ++b;
  }
  for (size_t i = 0; i < unlabeled.size(); ++i) {
    batch.unlabeled_idx.push_back(b);
    ++b;
  }

  const std::vector<float>& floor = store.silence_floor();
  batch.freq_fill.assign(floor.begin(), floor.end());
  return batch;
}

// Gradient-free forward of a model snapshot; used for the teacher and for
// stop-gradient targets. Evaluates with batch statistics (matching the
// student's training-mode view) and never touches the running buffers.
template <typename S>
TeacherOut<S> eval_forward(FpCrnn<S>& model, const Tensor<S>& x) {
  Tape<S> tape(false);
  auto bound = model.bind(tape, false, false, false);
  auto out = model.forward(bound, tape.constant(x), true, false);
  TeacherOut<S> result;
  result.clip = tape.value(out.clip_probs);
  result.frame = tape.value(out.frame_probs);
  return result;
}

// Inference-mode forward (running batch-norm statistics), the view used for
// validation, evaluation, and embedding extraction.
template <typename S>
struct InferenceOut {
  Tensor<S> clip_probs;   // [B x C]
  Tensor<S> frame_probs;  // [B x T_out x C]
  Tensor<S> embedding;    // [B x T_out x d_embed]
};

template <typename S>
InferenceOut<S> infer(FpCrnn<S>& model, const Tensor<S>& x) {
  Tape<S> tape(false);
  auto bound = model.bind(tape, false, false, false);
  auto out = model.forward(bound, tape.constant(x), false, false);
  InferenceOut<S> result;
  result.clip_probs = tape.value(out.clip_probs);
  result.frame_probs = tape.value(out.frame_probs);
  result.embedding = tape.value(out.embedding);
  return result;
}

// Stack features for a list of clips into one [B x 1 x T x F] tensor.
template <typename S>
Tensor<S> stack_features(const std::vector<const ClipRecord*>& clips, FeatureStore& store) {
  SCMT_REQUIRE(!clips.empty(), "stack_features: no clips");
  const Tensor<float>& first = store.get(clips[0]->filename);
  const int64_t t_in = first.dim(0), f_in = first.dim(1);
  Tensor<S> x({static_cast<int64_t>(clips.size()), 1, t_in, f_in});
  for (size_t b = 0; b < clips.size(); ++b) {
    const Tensor<float>& feat = store.get(clips[b]->filename);
    SCMT_REQUIRE(feat.dim(0) == t_in && feat.dim(1) == f_in,
                 "stack_features: feature shape mismatch for " + clips[b]->filename);
    S* dst = x.data() + static_cast<int64_t>(b) * t_in * f_in;
    for (int64_t i = 0; i < t_in * f_in; ++i) dst[i] = static_cast<S>(feat.data()[i]);
  }
  return x;
}

// Decode one clip's frame probabilities out of a batched [B x T x C] tensor.
template <typename S>
std::vector<EventLabel> decode_clip(const Tensor<S>& frame_probs, int64_t b,
                                    const FrameGrid& grid, double threshold,
                                    int median_window) {
  const int64_t t_dim = frame_probs.dim(1), c_dim = frame_probs.dim(2);
  Tensor<S> one({t_dim, c_dim});
  std::copy(frame_probs.data() + b * t_dim * c_dim,
            frame_probs.data() + (b + 1) * t_dim * c_dim, one.data());
  return decode_events(one, grid, threshold, median_window);
}

// Macro event-based F1 of a model over a strongly labeled clip list. Each
// clip is scored in its own time base; stacking clips 1000 s apart keeps
// the collar matching from ever pairing events across clips.
template <typename S>
double validate_f1(FpCrnn<S>& model, FeatureStore& store,
                   const std::vector<ClipRecord>& clips, int n_classes,
                   const TrainingConfig& cfg) {
  SCMT_REQUIRE(!clips.empty(), "validate_f1: no validation clips");
  const FrameGrid grid;
  const double clip_stride = 1000.0;

  std::vector<EventLabel> all_pred, all_ref;
  size_t pos = 0;
  int64_t clip_counter = 0;
  while (pos < clips.size()) {
    size_t take = std::min(static_cast<size_t>(cfg.val_batch), clips.size() - pos);
    std::vector<const ClipRecord*> chunk;
    for (size_t i = 0; i < take; ++i) chunk.push_back(&clips[pos + i]);
    Tensor<S> x = stack_features<S>(chunk, store);
    InferenceOut<S> out = infer(model, x);
    for (size_t i = 0; i < take; ++i) {
      double base = clip_stride * static_cast<double>(clip_counter++);
      std::vector<EventLabel> pred = decode_clip(out.frame_probs, static_cast<int64_t>(i),
                                                 grid, cfg.decode_threshold,
                                                 cfg.median_window);
      for (EventLabel& e : pred) {
        e.onset += base;
        e.offset += base;
        all_pred.push_back(e);
      }
      for (EventLabel e : chunk[i]->events) {
        e.onset += base;
        e.offset += base;
        all_ref.push_back(e);
      }
    }
    pos += take;
  }
  (void)n_classes;
  F1Result r = event_f1(all_pred, all_ref);
  return r.macro_f1;
}

struct StageResult {
  std::string student_ckpt;
  std::string teacher_ckpt;
  std::string metrics_path;
  double final_f1 = 0.0;
  int64_t end_step = 0;
  LossBreakdown last_parts;
};

// One run of the training loop. Stage 1 starts from a fresh initialization;
// stage 2 restores the given student/teacher checkpoints, re-initializes
// the discriminator, and adds the domain term to the same strategy
// objective. The step counter (and with it the consistency ramp) continues
// across stages through the checkpoint's stored step.
template <typename S = float>
class Trainer {
 public:
  Trainer(TrainingConfig cfg, const SedDataset& ds, FeatureStore& store)
      : cfg_(cfg), ds_(ds), store_(store), model_(make_model(cfg)), teacher_(make_model(cfg)) {
    cfg_.validate();
    weak_pool_ = ds_.weak;
    if (!cfg_.pseudo_manifest.empty()) {
      auto pseudo = read_pseudo_manifest(cfg_.pseudo_manifest, ds_.class_names);
      weak_pool_.insert(weak_pool_.end(), pseudo.begin(), pseudo.end());
    }
  }

  // Weak manifests with a provenance column, as written by pseudo-labeling.
  static std::vector<ClipRecord> read_pseudo_manifest(
      const std::string& path, const std::vector<std::string>& classes) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_pseudo_manifest: cannot open " + path);
    std::string line;
    SCMT_REQUIRE(static_cast<bool>(std::getline(f, line)),
                 "read_pseudo_manifest: empty file " + path);
    std::vector<ClipRecord> records;
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      auto cols = dataset_detail::split_tabs(line);
      SCMT_REQUIRE(cols.size() == 3 && cols[2] == "pseudo",
                   "read_pseudo_manifest: expected filename, labels, 'pseudo' in " + path);
      ClipRecord rec;
      rec.filename = cols[0];
      rec.domain = kDomainReal;
      std::set<int> present;
      std::istringstream tags(cols[1]);
      std::string name;
      while (std::getline(tags, name, ','))
        if (!name.empty())
          present.insert(dataset_detail::class_index(classes, name, "read_pseudo_manifest"));
      SCMT_REQUIRE(!present.empty(), "read_pseudo_manifest: empty tag set in " + path);
      rec.tags.assign(present.begin(), present.end());
      records.push_back(std::move(rec));
    }
    return records;
  }

  StageResult run() {
    namespace fs = std::filesystem;
    fs::create_directories(cfg_.run_dir);

    Rng master(cfg_.seed);
    int64_t start_step = 0;

    if (cfg_.stage == 1) {
      Rng init_rng = master.derive(1);
      model_.init(init_rng);
      teacher_.store() = model_.store();
    } else {
      SCMT_REQUIRE(!resume_student_.empty() && !resume_teacher_.empty(),
                   "stage 2 requires stage-1 student and teacher checkpoints");
      Checkpoint<S> st = load_checkpoint<S>(resume_student_);
      Checkpoint<S> te = load_checkpoint<S>(resume_teacher_);
      restore_into(model_.store(), st);
      restore_into(teacher_.store(), te);
      start_step = static_cast<int64_t>(st.step);
      if (cfg_.ada) {
        // Fresh discriminator for both copies; everything else continues.
        FpCrnn<S> scratch = make_model(cfg_);
        Rng disc_rng = master.derive(2);
        scratch.init(disc_rng);
        for (const auto& [name, value] : scratch.store().params) {
          if (param_group(name) == ParamGroup::domain) {
            model_.store().param(name) = value;
            teacher_.store().param(name) = value;
          }
        }
      }
    }

    // Frozen resolved config, including the model architecture.
    KvConfig frozen = cfg_.to_kv();
    {
      KvConfig model_kv = KvConfig::parse(model_.config().to_text());
      for (const auto& [k, v] : model_kv.raw()) frozen.set(k, v);
      frozen.save((fs::path(cfg_.run_dir) / "config.txt").string());
    }
    const std::string config_text = frozen.to_text();

    typename Adam<S>::Options opt_options;
    opt_options.lr = cfg_.lr;
    opt_options.warmup_steps = cfg_.lr_warmup_steps;
    Adam<S> opt(opt_options);

    BatchComposer composer(static_cast<int>(ds_.strong.size()),
                           static_cast<int>(weak_pool_.size()),
                           static_cast<int>(ds_.unlabeled.size()), cfg_.batch,
                           master.derive(3).next_u64());
    Rng aug_rng = master.derive(4);

    StageResult result;
    result.metrics_path = (fs::path(cfg_.run_dir) / "metrics.tsv").string();
    std::ofstream log(result.metrics_path, std::ios::binary);
    if (!log) throw IoError("trainer: cannot write " + result.metrics_path);
    log << "step";
    for (const std::string& name : LossBreakdown::field_names()) log << "\t" << name;
    log << "\tlr\tdomain_acc\tval_f1\n";

    const FrameGrid grid;
    const int n_classes = ds_.n_classes();
    double last_f1 = std::nan("");

    for (int64_t k = 1; k <= cfg_.max_steps; ++k) {
      const int64_t step = start_step + k;
      auto draw = composer.next();
      std::vector<const ClipRecord*> strong, weak, unlabeled;
      for (int i : draw.strong) strong.push_back(&ds_.strong[static_cast<size_t>(i)]);
      for (int i : draw.weak) weak.push_back(&weak_pool_[static_cast<size_t>(i)]);
      for (int i : draw.unlabeled)
        unlabeled.push_back(&ds_.unlabeled[static_cast<size_t>(i)]);
      LossBatch<S> batch =
          make_loss_batch<S>(strong, weak, unlabeled, store_, grid, n_classes);

      Tape<S> tape(true);
      const bool with_domain = cfg_.stage == 2 && cfg_.ada;
      auto bound = model_.bind(tape, true, true, with_domain);

      // The first student forward of the step refreshes the running
      // batch-norm statistics; later forwards on the same tape reuse them.
      bool stats_done = false;
      StudentFn<S> student_fn = [&](Tape<S>& t, const Tensor<S>& x) {
        auto out = model_.forward(bound, t.constant(x), true, !stats_done);
        stats_done = true;
        return StudentOut{out.clip_probs, out.frame_probs};
      };
      EvalFn<S> teacher_fn = [&](const Tensor<S>& x) { return eval_forward(teacher_, x); };
      EvalFn<S> student_eval_fn = [&](const Tensor<S>& x) { return eval_forward(model_, x); };

      GraphLoss<S> loss = build_strategy_loss(tape, student_fn, teacher_fn,
                                              student_eval_fn, batch, aug_rng,
                                              static_cast<double>(step));

      double domain_acc = std::nan("");
      if (with_domain) {
        double lam = lambda_schedule(k);
        auto fwd = model_.forward(bound, tape.constant(batch.x), true, false);
        Var dprob = model_.discriminate(bound, fwd.embedding, lam);
        Var l_d = domain_bce(tape, dprob, batch.domain, &loss.domain_degenerate);
        loss.var = ad::weighted_sum(tape, {{1.0, loss.var}, {1.0, l_d}});
        loss.parts.l_d = tape.scalar(l_d);
        loss.parts.lambda_d = lam;
        loss.parts.total = strategy_total(loss.parts, cfg_.strategy, true);
        domain_acc = domain_accuracy(tape.value(dprob), batch.domain);
      }

      trainer_detail::check_parts_finite<S>(loss.parts);
      tape.backward(loss.var);
      auto grads = model_.gradients(bound);
      trainer_detail::check_grads_finite(grads);
      opt.step(model_.store(), grads);
      ema_update(model_.store(), teacher_.store(), cfg_.ema_alpha);

      const bool validate_now = cfg_.val_interval > 0 && k % cfg_.val_interval == 0;
      if (validate_now || k == cfg_.max_steps)
        last_f1 = validate_f1(model_, store_, ds_.validation, n_classes, cfg_);

      if (k % cfg_.log_interval == 0 || k == cfg_.max_steps) {
        log << step;
        for (double v : loss.parts.values())
          log << "\t" << trainer_detail::format_metric(v);
        log << "\t" << trainer_detail::format_metric(opt.current_lr());
        log << "\t" << trainer_detail::format_metric(domain_acc);
        log << "\t" << trainer_detail::format_metric(last_f1);
        log << "\n";
        log.flush();
      }

      if (cfg_.ckpt_interval > 0 && k % cfg_.ckpt_interval == 0 && k != cfg_.max_steps)
        save_pair(step, config_text, true);
      result.end_step = step;
      result.last_parts = loss.parts;
    }

    if (cfg_.max_steps == 0) result.end_step = start_step;
    auto [student_path, teacher_path] =
        save_pair(result.end_step, config_text, false);
    result.student_ckpt = student_path;
    result.teacher_ckpt = teacher_path;
    if (std::isnan(last_f1) && cfg_.max_steps == 0 && !ds_.validation.empty())
      last_f1 = validate_f1(model_, store_, ds_.validation, n_classes, cfg_);
    result.final_f1 = last_f1;
    return result;
  }

  void resume_from(const std::string& student_ckpt, const std::string& teacher_ckpt) {
    resume_student_ = student_ckpt;
    resume_teacher_ = teacher_ckpt;
  }

  FpCrnn<S>& model() { return model_; }
  FpCrnn<S>& teacher() { return teacher_; }

 private:
  static FpCrnn<S> make_model(const TrainingConfig& cfg) {
    return FpCrnn<S>(FpCrnnConfig::preset(cfg.preset));
  }

  double lambda_schedule(int64_t k_in_stage) const {
    if (cfg_.lambda_d <= 0.0) return 0.0;
    double warm = cfg_.ada_warmup_frac * static_cast<double>(cfg_.max_steps);
    if (warm <= 0.0) return cfg_.lambda_d;
    double f = std::min(1.0, static_cast<double>(k_in_stage) / warm);
    return cfg_.lambda_d * f;
  }

  GraphLoss<S> build_strategy_loss(Tape<S>& tape, const StudentFn<S>& student_fn,
                                   const EvalFn<S>& teacher_fn,
                                   const EvalFn<S>& student_eval_fn, LossBatch<S>& batch,
                                   Rng& aug_rng, double step) {
    const double ramp_steps = static_cast<double>(cfg_.ramp_steps);
    switch (cfg_.strategy) {
      case Strategy::none: {
        StudentOut s = student_fn(tape, batch.x);
        TeacherOut<S> te = teacher_fn(add_noise(batch.x, cfg_.noise_sigma, aug_rng));
        return mean_teacher_loss(tape, s, te, batch, step, ramp_steps);
      }
      case Strategy::ict: {
        StudentOut s = student_fn(tape, batch.x);
        TeacherOut<S> te = teacher_fn(add_noise(batch.x, cfg_.noise_sigma, aug_rng));
        GraphLoss<S> mt = mean_teacher_loss(tape, s, te, batch, step, ramp_steps);

        GraphLoss<S> ict = make_ict(tape, student_fn, teacher_fn, batch, aug_rng);
        mt.ict_skipped = ict.ict_skipped;
        mt.parts.l_ict = ict.parts.l_ict;
        mt.var = ad::weighted_sum(tape, {{1.0, mt.var}, {mt.parts.ramp_weight, ict.var}});
        mt.parts.total = strategy_total(mt.parts, Strategy::ict, false);
        return mt;
      }
      case Strategy::sct: {
        ShiftSpec shift = sample_shift(aug_rng, cfg_.shifts);
        return sct_loss(tape, student_fn, student_eval_fn, batch, shift, step, ramp_steps);
      }
      case Strategy::scmt: {
        ShiftSpec shift = sample_shift(aug_rng, cfg_.shifts);
        return scmt_loss(tape, student_fn, student_eval_fn, teacher_fn, batch, shift,
                         cfg_.noise_sigma, aug_rng, step, ramp_steps);
      }
    }
    throw InvalidInputError("trainer: unknown strategy");
  }

  GraphLoss<S> make_ict(Tape<S>& tape, const StudentFn<S>& student_fn,
                        const EvalFn<S>& teacher_fn, const LossBatch<S>& batch,
                        Rng& aug_rng) {
    const size_t n = batch.unlabeled_idx.size();
    if (n < 2) {
      // Too few real unlabeled clips to interpolate; contributes zero.
      GraphLoss<S> out;
      out.var = loss_detail::zero_scalar(tape);
      out.ict_skipped = true;
      return out;
    }
    Tensor<S> ux = loss_detail::gather_rows(batch.x, batch.unlabeled_idx);
    std::vector<int64_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    aug_rng.shuffle(perm);
    double lambda = aug_rng.beta(cfg_.beta_a, cfg_.beta_b);
    return ict_loss(tape, student_fn, teacher_fn, ux, perm, lambda);
  }

  TrainingConfig cfg_;
  const SedDataset& ds_;
  FeatureStore& store_;
  FpCrnn<S> model_;
  FpCrnn<S> teacher_;
  std::vector<ClipRecord> weak_pool_;
  std::string resume_student_;
  std::string resume_teacher_;

  std::pair<std::string, std::string> save_pair(int64_t step, const std::string& config_text,
                                                bool interval) {
    namespace fs = std::filesystem;
    std::string suffix = interval ? "_" + std::to_string(step) : "";
    std::string sp = (fs::path(cfg_.run_dir) / ("student" + suffix + ".ckpt")).string();
    std::string tp = (fs::path(cfg_.run_dir) / ("teacher" + suffix + ".ckpt")).string();
    save_checkpoint(sp, model_.store(), config_text, static_cast<uint64_t>(step));
    save_checkpoint(tp, teacher_.store(), config_text, static_cast<uint64_t>(step));
    return {sp, tp};
  }
};

// Clip-level tagger used for pseudo-labeling: the same architecture trained
// with clip BCE only, on the strong (tags derived from events) and weak
// splits. No teacher, no consistency terms.
template <typename S = float>
std::string train_tagger(const TrainingConfig& cfg, const SedDataset& ds,
                         FeatureStore& store) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.run_dir);
  FpCrnn<S> model(FpCrnnConfig::preset(cfg.preset));
  Rng master(cfg.seed);
  Rng init_rng = master.derive(1);
  model.init(init_rng);

  typename Adam<S>::Options opt_options;
  opt_options.lr = cfg.lr;
  opt_options.warmup_steps = cfg.lr_warmup_steps;
  Adam<S> opt(opt_options);

  BatchComposition comp;
  comp.n_strong = cfg.batch.n_strong;
  comp.n_weak = cfg.batch.n_weak;
  comp.n_unlabeled = 0;
  BatchComposer composer(static_cast<int>(ds.strong.size()),
                         static_cast<int>(ds.weak.size()), 0, comp,
                         master.derive(3).next_u64());

  const FrameGrid grid;
  const int n_classes = ds.n_classes();
  std::string metrics_path = (fs::path(cfg.run_dir) / "metrics.tsv").string();
  std::ofstream log(metrics_path, std::ios::binary);
  if (!log) throw IoError("train_tagger: cannot write " + metrics_path);
  log << "step\tl_w_bce\tlr\n";

  for (int64_t k = 1; k <= cfg.max_steps; ++k) {
    auto draw = composer.next();
    std::vector<const ClipRecord*> strong, weak, none;
    for (int i : draw.strong) strong.push_back(&ds.strong[static_cast<size_t>(i)]);
    for (int i : draw.weak) weak.push_back(&ds.weak[static_cast<size_t>(i)]);
    LossBatch<S> batch = make_loss_batch<S>(strong, weak, none, store, grid, n_classes);

    Tape<S> tape(true);
    auto bound = model.bind(tape, true, true, false);
    auto out = model.forward(bound, tape.constant(batch.x), true, true);
    Var l_w = loss_detail::masked_bce(tape, out.clip_probs, batch.weak, batch.weak_idx);
    double loss_value = tape.scalar(l_w);
    if (!std::isfinite(loss_value))
      throw NumericError("train_tagger aborted: clip BCE is non-finite");
    tape.backward(l_w);
    auto grads = model.gradients(bound);
    trainer_detail::check_grads_finite(grads);
    opt.step(model.store(), grads);

    if (k % cfg.log_interval == 0 || k == cfg.max_steps) {
      log << k << "\t" << trainer_detail::format_metric(loss_value) << "\t"
          << trainer_detail::format_metric(opt.current_lr()) << "\n";
    }
  }

  KvConfig frozen = cfg.to_kv();
  KvConfig model_kv = KvConfig::parse(model.config().to_text());
  for (const auto& [k, v] : model_kv.raw()) frozen.set(k, v);
  frozen.save((fs::path(cfg.run_dir) / "config.txt").string());

  std::string ckpt = (fs::path(cfg.run_dir) / "tagger.ckpt").string();
  save_checkpoint(ckpt, model.store(), frozen.to_text(),
                  static_cast<uint64_t>(cfg.max_steps));
  return ckpt;
}

// Assign weak pseudo-labels: each clip receives every class whose tagger
// clip probability clears the threshold; clips where none does are left
// out (they simply stay unlabeled).
template <typename S = float>
std::vector<ClipRecord> pseudo_label(FpCrnn<S>& tagger, FeatureStore& store,
                                     const std::vector<ClipRecord>& unlabeled,
                                     double threshold, int64_t batch_size = 8) {
  SCMT_REQUIRE(batch_size > 0, "pseudo_label: batch size must be positive");
  std::vector<ClipRecord> out;
  size_t pos = 0;
  while (pos < unlabeled.size()) {
    size_t take = std::min(static_cast<size_t>(batch_size), unlabeled.size() - pos);
    std::vector<const ClipRecord*> chunk;
    for (size_t i = 0; i < take; ++i) chunk.push_back(&unlabeled[pos + i]);
    Tensor<S> x = stack_features<S>(chunk, store);
    InferenceOut<S> probs = infer(tagger, x);
    const int64_t n_classes = probs.clip_probs.dim(1);
    for (size_t i = 0; i < take; ++i) {
      ClipRecord rec = *chunk[i];
      rec.tags.clear();
      for (int64_t c = 0; c < n_classes; ++c) {
        if (static_cast<double>(probs.clip_probs[static_cast<int64_t>(i) * n_classes + c]) >=
            threshold)
          rec.tags.push_back(static_cast<int>(c));
      }
      if (!rec.tags.empty()) out.push_back(std::move(rec));
    }
    pos += take;
  }
  return out;
}

// Pseudo manifest: weak columns plus a provenance marker.
inline void write_pseudo_manifest(const std::string& path,
                                  const std::vector<ClipRecord>& records,
                                  const std::vector<std::string>& classes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("write_pseudo_manifest: cannot write " + path);
  f << "filename\tevent_labels\tprovenance\n";
  for (const ClipRecord& rec : records) {
    f << rec.filename << "\t";
    for (size_t i = 0; i < rec.tags.size(); ++i) {
      if (i) f << ",";
      f << classes[static_cast<size_t>(rec.tags[i])];
    }
    f << "\tpseudo\n";
  }
  if (!f) throw IoError("write_pseudo_manifest: short write to " + path);
}

}  // namespace scmt
