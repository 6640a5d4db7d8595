#ifndef SCMT_MODEL_HPP_
#define SCMT_MODEL_HPP_

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "scmt/autodiff.hpp"
#include "scmt/common.hpp"
#include "scmt/nn.hpp"
#include "scmt/rng.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

enum class ParamGroup { feature, label, domain };

// Conv-recurrent sound event detector: N conv blocks (conv 3x3, batch norm,
// GLU gate, average pool), an optional top-down feature pyramid over the
// deeper blocks, a bidirectional GRU, and two linear heads whose attention
// pooling turns frame probabilities into clip probabilities. A small MLP
// behind a gradient-reversal layer scores each frame's domain.
struct FpCrnnConfig {
  int n_mels = 128;
  int n_classes = 10;
  std::vector<int> channels = {32, 64, 128};
  std::vector<int> time_strides = {2, 2, 2};
  std::vector<int> freq_strides = {4, 4, 4};
  bool feature_pyramid = true;
  // 1-based consecutive block indices merged by the pyramid, shallow to deep.
  std::vector<int> pyramid_stages = {2, 3};
  int hidden = 128;
  int disc_hidden = 128;

  static FpCrnnConfig default_preset() { return FpCrnnConfig{}; }

  static FpCrnnConfig tiny() {
    FpCrnnConfig c;
    c.channels = {8, 16, 32};
    c.hidden = 32;
    c.disc_hidden = 32;
    return c;
  }

  static FpCrnnConfig preset(const std::string& name) {
    if (name == "default") return default_preset();
    if (name == "tiny") return tiny();
    throw ConfigError("unknown model preset: " + name);
  }

  int n_blocks() const { return static_cast<int>(channels.size()); }
  int d_embed() const { return 2 * hidden; }

  int time_downsample() const {
    return std::accumulate(time_strides.begin(), time_strides.end(), 1,
                           std::multiplies<int>());
  }
  int freq_downsample() const {
    return std::accumulate(freq_strides.begin(), freq_strides.end(), 1,
                           std::multiplies<int>());
  }

  int n_out_frames(int input_frames) const {
    SCMT_CONFIG_REQUIRE(input_frames % time_downsample() == 0,
                        "input frames must divide the total time stride");
    return input_frames / time_downsample();
  }

  int freq_out() const {
    SCMT_CONFIG_REQUIRE(n_mels % freq_downsample() == 0,
                        "mel bins must divide the total frequency stride");
    return n_mels / freq_downsample();
  }

  // Channel width of the map entering the recurrent layer.
  int seq_channels() const {
    if (!feature_pyramid || pyramid_stages.size() < 2) return channels.back();
    return channels[static_cast<size_t>(pyramid_stages.back() - 1)];
  }

  int gru_input() const { return seq_channels() * freq_out(); }

  void validate() const {
    SCMT_CONFIG_REQUIRE(n_mels > 0 && n_classes > 0 && hidden > 0 && disc_hidden > 0,
                        "model config: dimensions must be positive");
    SCMT_CONFIG_REQUIRE(!channels.empty() && channels.size() == time_strides.size() &&
                            channels.size() == freq_strides.size(),
                        "model config: per-block lists must align");
    if (feature_pyramid) {
      SCMT_CONFIG_REQUIRE(!pyramid_stages.empty(), "model config: empty pyramid");
      for (size_t i = 0; i < pyramid_stages.size(); ++i) {
        SCMT_CONFIG_REQUIRE(pyramid_stages[i] >= 1 && pyramid_stages[i] <= n_blocks(),
                            "model config: pyramid stage out of range");
        SCMT_CONFIG_REQUIRE(i == 0 || pyramid_stages[i] == pyramid_stages[i - 1] + 1,
                            "model config: pyramid stages must be consecutive");
      }
    }
  }

  std::string to_text() const {
    auto join = [](const std::vector<int>& v) {
      std::ostringstream os;
      for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
      return os.str();
    };
    std::ostringstream os;
    os << "model.n_mels=" << n_mels << "\n"
       << "model.n_classes=" << n_classes << "\n"
       << "model.channels=" << join(channels) << "\n"
       << "model.time_strides=" << join(time_strides) << "\n"
       << "model.freq_strides=" << join(freq_strides) << "\n"
       << "model.feature_pyramid=" << (feature_pyramid ? 1 : 0) << "\n"
       << "model.pyramid_stages=" << join(pyramid_stages) << "\n"
       << "model.hidden=" << hidden << "\n"
       << "model.disc_hidden=" << disc_hidden << "\n";
    return os.str();
  }

  static FpCrnnConfig from_text(const std::string& text) {
    auto split_ints = [](const std::string& s) {
      std::vector<int> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(std::stoi(item));
      return out;
    };
    FpCrnnConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq), val = line.substr(eq + 1);
      if (key == "model.n_mels") c.n_mels = std::stoi(val);
      else if (key == "model.n_classes") c.n_classes = std::stoi(val);
      else if (key == "model.channels") c.channels = split_ints(val);
      else if (key == "model.time_strides") c.time_strides = split_ints(val);
      else if (key == "model.freq_strides") c.freq_strides = split_ints(val);
      else if (key == "model.feature_pyramid") c.feature_pyramid = val != "0";
      else if (key == "model.pyramid_stages") c.pyramid_stages = split_ints(val);
      else if (key == "model.hidden") c.hidden = std::stoi(val);
      else if (key == "model.disc_hidden") c.disc_hidden = std::stoi(val);
    }
    c.validate();
    return c;
  }
};

inline ParamGroup param_group(const std::string& name) {
  if (name.rfind("disc.", 0) == 0) return ParamGroup::domain;
  if (name.rfind("head.", 0) == 0) return ParamGroup::label;
  return ParamGroup::feature;
}

template <typename S>
struct ForwardOut {
  Var clip_probs;   // [B x n_classes]
  Var frame_probs;  // [B x T_out x n_classes]
  Var embedding;    // [B x T_out x d_embed]
};

template <typename S>
class FpCrnn {
 public:
  explicit FpCrnn(FpCrnnConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    register_params();
  }

  const FpCrnnConfig& config() const { return cfg_; }
  ParamStore<S>& store() { return store_; }
  const ParamStore<S>& store() const { return store_; }

  // Fills parameters with fan-in-scaled uniform noise. Batch-norm scale is
  // one, every bias is zero, and the discriminator's output layer stays all
  // zero so an untrained discriminator reports exactly 0.5.
  void init(Rng& rng) {
    for (auto& [name, p] : store_.params) {
      if (ends_with(name, ".gamma")) {
        p.fill(S(1));
        continue;
      }
      if (ends_with(name, ".beta") || ends_with(name, ".b") ||
          name.rfind("disc.out.", 0) == 0) {
        p.fill(S(0));
        continue;
      }
      const double fan_in = static_cast<double>(p.numel() / p.dim(0));
      const double bound = std::sqrt(1.0 / fan_in);
      for (int64_t i = 0; i < p.numel(); ++i)
        p[i] = static_cast<S>(rng.uniform(-bound, bound));
    }
    for (auto& [name, b] : store_.buffers) b.fill(ends_with(name, ".var") ? S(1) : S(0));
  }

  // Parameters as tape leaves, one leaf per parameter per step no matter how
  // many forward passes share the tape, so gradients accumulate in one place.
  struct Bound {
    Tape<S>* tape = nullptr;
    FpCrnn* model = nullptr;
    std::map<std::string, Var> vars;

    Var at(const std::string& name) const {
      auto it = vars.find(name);
      SCMT_REQUIRE(it != vars.end(), "bound params: unknown name " + name);
      return it->second;
    }
  };

  Bound bind(Tape<S>& tape, bool grad_feature = true, bool grad_label = true,
             bool grad_domain = true) {
    Bound b;
    b.tape = &tape;
    b.model = this;
    for (auto& [name, p] : store_.params) {
      bool ng = false;
      switch (param_group(name)) {
        case ParamGroup::feature: ng = grad_feature; break;
        case ParamGroup::label: ng = grad_label; break;
        case ParamGroup::domain: ng = grad_domain; break;
      }
      b.vars.emplace(name, tape.leaf(p, ng));
    }
    return b;
  }

  // Collects accumulated gradients after backward(), keyed by parameter name.
  std::map<std::string, Tensor<S>> gradients(const Bound& b) const {
    std::map<std::string, Tensor<S>> out;
    for (const auto& [name, var] : b.vars) {
      if (!b.tape->needs_grad(var)) continue;
      if (!b.tape->grad_allocated(var)) continue;
      out.emplace(name, b.tape->grad(var));
    }
    return out;
  }

  // x: [B x 1 x frames x n_mels], normalized log-mel input.
  ForwardOut<S> forward(Bound& b, Var x, bool train_mode, bool update_running) {
    Tape<S>& t = *b.tape;
    const Tensor<S>& vx = t.value(x);
    SCMT_REQUIRE(vx.rank() == 4 && vx.dim(1) == 1 && vx.dim(3) == cfg_.n_mels,
                 "forward: expected [B x 1 x frames x n_mels] input");

    std::vector<Var> stages;
    Var h = x;
    int in_c = 1;
    for (int i = 0; i < cfg_.n_blocks(); ++i) {
      const std::string tag = std::to_string(i + 1);
      const int out_c = cfg_.channels[static_cast<size_t>(i)];
      h = ad::conv2d(t, h, b.at("conv" + tag + ".w"), b.at("conv" + tag + ".b"), in_c,
                     2 * out_c, 3, 3);
      ad::BnBuffers<S> buf;
      buf.running_mean = &store_.buffer("bn" + tag + ".mean");
      buf.running_var = &store_.buffer("bn" + tag + ".var");
      h = ad::batchnorm2d(t, h, b.at("bn" + tag + ".gamma"), b.at("bn" + tag + ".beta"),
                          buf, train_mode, update_running);
      h = ad::glu_channels(t, h);
      h = ad::avg_pool2d(t, h, cfg_.time_strides[static_cast<size_t>(i)],
                         cfg_.freq_strides[static_cast<size_t>(i)]);
      stages.push_back(h);
      in_c = out_c;
    }

    Var seq_map = stages.back();
    if (cfg_.feature_pyramid && cfg_.pyramid_stages.size() >= 2) {
      seq_map = merge_pyramid(b, stages);
      // The fused map sits at the shallowest merged stage's resolution; pool
      // back down so the recurrent layer sees the same frame rate either way.
      auto [pt, pf] = post_merge_pool();
      if (pt > 1 || pf > 1) seq_map = ad::avg_pool2d(t, seq_map, pt, pf);
    }

    Var seq = ad::to_sequence(t, seq_map);  // [B x T_out x C*F]
    Var emb = bigru(b, seq);
    SCMT_REQUIRE(t.value(emb).all_finite(), "forward: non-finite recurrent output");

    Var frame_logits = ad::linear(t, emb, b.at("head.frame.w"), b.at("head.frame.b"));
    Var frame_probs = ad::sigmoid(t, frame_logits);
    Var att_logits = ad::linear(t, emb, b.at("head.att.w"), b.at("head.att.b"));
    Var clip_probs = ad::attention_pool(t, frame_probs, att_logits);
    SCMT_REQUIRE(t.value(clip_probs).all_finite() && t.value(frame_probs).all_finite(),
                 "forward: non-finite head output");
    return {clip_probs, frame_probs, emb};
  }

  // Per-frame domain probability [B x T_out]; gradients to the feature
  // extractor pass through the reversal layer scaled by -lambda_d.
  Var discriminate(Bound& b, Var embedding, double lambda_d) {
    Tape<S>& t = *b.tape;
    Var g = ad::grl(t, embedding, lambda_d);
    Var h1 = ad::relu(t, ad::linear(t, g, b.at("disc.l1.w"), b.at("disc.l1.b")));
    Var h2 = ad::relu(t, ad::linear(t, h1, b.at("disc.l2.w"), b.at("disc.l2.b")));
    Var out = ad::sigmoid(t, ad::linear(t, h2, b.at("disc.out.w"), b.at("disc.out.b")));
    const Tensor<S>& v = t.value(out);
    return ad::reshape(t, out, {v.dim(0), v.dim(1)});
  }

 private:
  static bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  }

  std::pair<int, int> post_merge_pool() const {
    int pt = 1, pf = 1;
    for (int s = cfg_.pyramid_stages.front() + 1; s <= cfg_.n_blocks(); ++s) {
      pt *= cfg_.time_strides[static_cast<size_t>(s - 1)];
      pf *= cfg_.freq_strides[static_cast<size_t>(s - 1)];
    }
    return {pt, pf};
  }

  // Top-down pathway over the configured consecutive stages: the deepest map
  // is upsampled (nearest) and added to a bias-free 1x1 lateral projection at
  // each shallower stage.
  Var merge_pyramid(Bound& b, const std::vector<Var>& stages) {
    Tape<S>& t = *b.tape;
    const auto& ps = cfg_.pyramid_stages;
    Var top = stages[static_cast<size_t>(ps.back() - 1)];
    for (size_t k = ps.size() - 1; k-- > 0;) {
      const int stage = ps[k];
      const int deeper = ps[k + 1];
      Var up = ad::upsample_nearest2d(
          t, top, cfg_.time_strides[static_cast<size_t>(deeper - 1)],
          cfg_.freq_strides[static_cast<size_t>(deeper - 1)]);
      Var lat = lateral(b, stages[static_cast<size_t>(stage - 1)], stage);
      top = ad::add(t, lat, up);
    }
    return top;
  }

  Var lateral(Bound& b, Var x, int stage) {
    Tape<S>& t = *b.tape;
    const int in_c = cfg_.channels[static_cast<size_t>(stage - 1)];
    const int out_c = cfg_.seq_channels();
    Var zero_bias = t.constant(Tensor<S>({out_c}));
    return ad::conv2d(t, x, b.at("lat" + std::to_string(stage) + ".w"), zero_bias,
                      in_c, out_c, 1, 1);
  }

  // One bidirectional recurrent layer; gate layout r, z, n per direction.
  Var bigru(Bound& b, Var seq) {
    Tape<S>& t = *b.tape;
    const Tensor<S>& v = t.value(seq);
    const int64_t b_dim = v.dim(0), t_dim = v.dim(1);
    const int h_dim = cfg_.hidden;

    auto run_dir = [&](const std::string& dir, bool reverse) {
      Var w_ih = b.at("gru." + dir + ".w_ih");
      Var w_hh = b.at("gru." + dir + ".w_hh");
      Var b_ih = b.at("gru." + dir + ".b_ih");
      Var b_hh = b.at("gru." + dir + ".b_hh");
      Var h = t.constant(Tensor<S>({b_dim, h_dim}));
      std::vector<Var> steps(static_cast<size_t>(t_dim));
      for (int64_t i = 0; i < t_dim; ++i) {
        const int64_t step = reverse ? t_dim - 1 - i : i;
        Var x_t = ad::time_slice(t, seq, step);
        Var gi = ad::linear(t, x_t, w_ih, b_ih);
        Var gh_h = ad::linear(t, h, w_hh, b_hh);
        Var r = ad::sigmoid(t, ad::add(t, ad::slice_cols(t, gi, 0, h_dim),
                                       ad::slice_cols(t, gh_h, 0, h_dim)));
        Var z = ad::sigmoid(t, ad::add(t, ad::slice_cols(t, gi, h_dim, h_dim),
                                       ad::slice_cols(t, gh_h, h_dim, h_dim)));
        Var n = ad::tanh_op(
            t, ad::add(t, ad::slice_cols(t, gi, 2 * h_dim, h_dim),
                       ad::mul(t, r, ad::slice_cols(t, gh_h, 2 * h_dim, h_dim))));
        // h' = (1 - z) * n + z * h
        h = ad::add(t, n, ad::mul(t, z, ad::sub(t, h, n)));
        steps[static_cast<size_t>(step)] = h;
      }
      return steps;
    };

    std::vector<Var> fwd = run_dir("fwd", false);
    std::vector<Var> bwd = run_dir("bwd", true);
    std::vector<Var> joined(static_cast<size_t>(t_dim));
    for (int64_t i = 0; i < t_dim; ++i)
      joined[static_cast<size_t>(i)] =
          ad::concat_cols(t, fwd[static_cast<size_t>(i)], bwd[static_cast<size_t>(i)]);
    return ad::stack_time(t, joined);
  }

  void register_params() {
    int in_c = 1;
    for (int i = 0; i < cfg_.n_blocks(); ++i) {
      const std::string tag = std::to_string(i + 1);
      const int out_c = cfg_.channels[static_cast<size_t>(i)];
      store_.add_param("conv" + tag + ".w",
                       Tensor<S>({2 * out_c, static_cast<int64_t>(in_c) * 9}));
      store_.add_param("conv" + tag + ".b", Tensor<S>({2 * out_c}));
      store_.add_param("bn" + tag + ".gamma", Tensor<S>({2 * out_c}));
      store_.add_param("bn" + tag + ".beta", Tensor<S>({2 * out_c}));
      store_.add_buffer("bn" + tag + ".mean", Tensor<S>({2 * out_c}));
      store_.add_buffer("bn" + tag + ".var",
                        Tensor<S>::constant({2 * out_c}, S(1)));
      in_c = out_c;
    }
    if (cfg_.feature_pyramid && cfg_.pyramid_stages.size() >= 2) {
      const int p = cfg_.seq_channels();
      for (size_t k = 0; k + 1 < cfg_.pyramid_stages.size(); ++k) {
        const int stage = cfg_.pyramid_stages[k];
        const int c_s = cfg_.channels[static_cast<size_t>(stage - 1)];
        store_.add_param("lat" + std::to_string(stage) + ".w", Tensor<S>({p, c_s}));
      }
    }
    const int in_dim = cfg_.gru_input();
    const int h_dim = cfg_.hidden;
    for (const char* dir : {"fwd", "bwd"}) {
      const std::string base = std::string("gru.") + dir;
      store_.add_param(base + ".w_ih", Tensor<S>({3 * h_dim, in_dim}));
      store_.add_param(base + ".w_hh", Tensor<S>({3 * h_dim, h_dim}));
      store_.add_param(base + ".b_ih", Tensor<S>({3 * h_dim}));
      store_.add_param(base + ".b_hh", Tensor<S>({3 * h_dim}));
    }
    const int d = cfg_.d_embed();
    store_.add_param("head.frame.w", Tensor<S>({cfg_.n_classes, d}));
    store_.add_param("head.frame.b", Tensor<S>({cfg_.n_classes}));
    store_.add_param("head.att.w", Tensor<S>({cfg_.n_classes, d}));
    store_.add_param("head.att.b", Tensor<S>({cfg_.n_classes}));
    store_.add_param("disc.l1.w", Tensor<S>({cfg_.disc_hidden, d}));
    store_.add_param("disc.l1.b", Tensor<S>({cfg_.disc_hidden}));
    store_.add_param("disc.l2.w", Tensor<S>({cfg_.disc_hidden, cfg_.disc_hidden}));
    store_.add_param("disc.l2.b", Tensor<S>({cfg_.disc_hidden}));
    store_.add_param("disc.out.w", Tensor<S>({1, cfg_.disc_hidden}));
    store_.add_param("disc.out.b", Tensor<S>({1}));
  }

  FpCrnnConfig cfg_;
  ParamStore<S> store_;
};

}  // namespace scmt

#endif  // SCMT_MODEL_HPP_
