#ifndef SCMT_NN_HPP_
#define SCMT_NN_HPP_

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "scmt/common.hpp"
#include "scmt/tensor.hpp"

namespace scmt {

// Named parameter and buffer registry. std::map keeps iteration order
// deterministic, which the checkpoint format and EMA updates rely on.
template <typename S>
struct ParamStore {
  std::map<std::string, Tensor<S>> params;
  std::map<std::string, Tensor<S>> buffers;

  Tensor<S>& add_param(const std::string& name, Tensor<S> init) {
    SCMT_REQUIRE(params.find(name) == params.end(), "param already registered: " + name);
    return params.emplace(name, std::move(init)).first->second;
  }

  Tensor<S>& add_buffer(const std::string& name, Tensor<S> init) {
    SCMT_REQUIRE(buffers.find(name) == buffers.end(),
                 "buffer already registered: " + name);
    return buffers.emplace(name, std::move(init)).first->second;
  }

  Tensor<S>& param(const std::string& name) {
    auto it = params.find(name);
    SCMT_REQUIRE(it != params.end(), "unknown parameter: " + name);
    return it->second;
  }
  const Tensor<S>& param(const std::string& name) const {
    auto it = params.find(name);
    SCMT_REQUIRE(it != params.end(), "unknown parameter: " + name);
    return it->second;
  }

  Tensor<S>& buffer(const std::string& name) {
    auto it = buffers.find(name);
    SCMT_REQUIRE(it != buffers.end(), "unknown buffer: " + name);
    return it->second;
  }
  const Tensor<S>& buffer(const std::string& name) const {
    auto it = buffers.find(name);
    SCMT_REQUIRE(it != buffers.end(), "unknown buffer: " + name);
    return it->second;
  }

  bool all_finite() const {
    for (const auto& [k, v] : params)
      if (!v.all_finite()) return false;
    for (const auto& [k, v] : buffers)
      if (!v.all_finite()) return false;
    return true;
  }
};

// theta' <- alpha * theta' + (1 - alpha) * theta, element-wise over every
// parameter and buffer. Buffers ride along so the teacher's normalization
// statistics track the student's.
template <typename S>
void ema_update(const ParamStore<S>& student, ParamStore<S>& teacher, double alpha) {
  SCMT_REQUIRE(alpha >= 0.0 && alpha < 1.0, "ema: alpha must be in [0,1)");
  auto blend = [alpha](const std::map<std::string, Tensor<S>>& src,
                       std::map<std::string, Tensor<S>>& dst) {
    SCMT_REQUIRE(src.size() == dst.size(), "ema: store layout mismatch");
    auto sit = src.begin();
    auto dit = dst.begin();
    for (; sit != src.end(); ++sit, ++dit) {
      SCMT_REQUIRE(sit->first == dit->first && sit->second.same_shape(dit->second),
                   "ema: shape mismatch at " + sit->first);
      const Tensor<S>& s = sit->second;
      Tensor<S>& d = dit->second;
      const S a = static_cast<S>(alpha), na = static_cast<S>(1.0 - alpha);
      for (int64_t i = 0; i < s.numel(); ++i) d[i] = a * d[i] + na * s[i];
    }
  };
  blend(student.params, teacher.params);
  blend(student.buffers, teacher.buffers);
}

// ---------- checkpoint container ----------
//
// Binary layout, native endianness:
//   magic "SCMTCKPT", u32 version, u32 scalar_bytes, u64 step,
//   u64 config_len + bytes,
//   u64 n_params { u64 name_len + bytes, u8 rank, i64 dims[rank], raw data },
//   u64 n_buffers { same entry encoding }.
// Raw scalar bytes round-trip untouched, so reload is bit-exact.

template <typename S>
struct Checkpoint {
  uint64_t step = 0;
  std::string config_text;
  std::map<std::string, Tensor<S>> params;
  std::map<std::string, Tensor<S>> buffers;
};

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'S', 'C', 'M', 'T', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  SCMT_REQUIRE(static_cast<bool>(is), std::string("checkpoint: truncated ") + what);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
  uint64_t n = read_pod<uint64_t>(is, what);
  SCMT_REQUIRE(n < (1ull << 30), std::string("checkpoint: oversized ") + what);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  SCMT_REQUIRE(static_cast<bool>(is), std::string("checkpoint: truncated ") + what);
  return s;
}

template <typename S>
void write_entries(std::ostream& os, const std::map<std::string, Tensor<S>>& entries) {
  write_pod<uint64_t>(os, entries.size());
  for (const auto& [name, t] : entries) {
    write_string(os, name);
    write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
    for (size_t d = 0; d < t.rank(); ++d) write_pod<int64_t>(os, t.dim(d));
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.numel() * sizeof(S)));
  }
}

template <typename S>
std::map<std::string, Tensor<S>> read_entries(std::istream& is) {
  uint64_t n = read_pod<uint64_t>(is, "entry count");
  std::map<std::string, Tensor<S>> out;
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = read_string(is, "entry name");
    uint8_t rank = read_pod<uint8_t>(is, "entry rank");
    SCMT_REQUIRE(rank >= 1 && rank <= 4, "checkpoint: bad rank for " + name);
    std::vector<int64_t> dims(rank);
    for (auto& d : dims) d = read_pod<int64_t>(is, "entry dim");
    Tensor<S> t(dims);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(S)));
    SCMT_REQUIRE(static_cast<bool>(is), "checkpoint: truncated data for " + name);
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace ckpt_detail

template <typename S>
void save_checkpoint(const std::string& path, const ParamStore<S>& store,
                     const std::string& config_text, uint64_t step) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  SCMT_REQUIRE(os.good(), "checkpoint: cannot open for write: " + path);
  os.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
  ckpt_detail::write_pod<uint32_t>(os, ckpt_detail::kVersion);
  ckpt_detail::write_pod<uint32_t>(os, static_cast<uint32_t>(sizeof(S)));
  ckpt_detail::write_pod<uint64_t>(os, step);
  ckpt_detail::write_string(os, config_text);
  ckpt_detail::write_entries(os, store.params);
  ckpt_detail::write_entries(os, store.buffers);
  os.flush();
  SCMT_REQUIRE(os.good(), "checkpoint: write failed: " + path);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is.good()) throw IoError("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  SCMT_REQUIRE(is.good() && std::memcmp(magic, ckpt_detail::kMagic, 8) == 0,
               "checkpoint: bad magic in " + path);
  uint32_t version = ckpt_detail::read_pod<uint32_t>(is, "version");
  SCMT_REQUIRE(version == ckpt_detail::kVersion, "checkpoint: unsupported version");
  uint32_t sb = ckpt_detail::read_pod<uint32_t>(is, "scalar width");
  SCMT_REQUIRE(sb == sizeof(S), "checkpoint: scalar width mismatch");
  Checkpoint<S> ck;
  ck.step = ckpt_detail::read_pod<uint64_t>(is, "step");
  ck.config_text = ckpt_detail::read_string(is, "config");
  ck.params = ckpt_detail::read_entries<S>(is);
  ck.buffers = ckpt_detail::read_entries<S>(is);
  return ck;
}

// Copies checkpoint arrays into an already constructed store, insisting the
// architectures agree; the first mismatched name is reported.
template <typename S>
void restore_into(ParamStore<S>& store, const Checkpoint<S>& ck) {
  auto apply = [](std::map<std::string, Tensor<S>>& dst,
                  const std::map<std::string, Tensor<S>>& src, const char* kind) {
    for (auto& [name, t] : dst) {
      auto it = src.find(name);
      SCMT_REQUIRE(it != src.end(),
                   std::string("checkpoint: missing ") + kind + ": " + name);
      SCMT_REQUIRE(it->second.same_shape(t),
                   std::string("checkpoint: shape mismatch at ") + kind + ": " + name);
      t = it->second;
    }
    SCMT_REQUIRE(dst.size() == src.size(),
                 std::string("checkpoint: extra ") + kind + " entries present");
  };
  apply(store.params, ck.params, "parameter");
  apply(store.buffers, ck.buffers, "buffer");
}

// ---------- optimizer ----------

// Adam with bias correction, constant learning rate plus an optional linear
// warmup. Only names present in the gradient map are touched, which is how
// the two training stages select their parameter groups.
template <typename S>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t warmup_steps = 0;
  };

  explicit Adam(Options opt) : opt_(opt) {
    SCMT_CONFIG_REQUIRE(opt.lr >= 0.0 && opt.beta1 >= 0.0 && opt.beta1 < 1.0 &&
                            opt.beta2 >= 0.0 && opt.beta2 < 1.0 && opt.eps > 0.0,
                        "adam: invalid options");
  }

  double current_lr() const {
    if (opt_.warmup_steps <= 0) return opt_.lr;
    double f = std::min(1.0, static_cast<double>(t_) /
                                 static_cast<double>(opt_.warmup_steps));
    return opt_.lr * f;
  }

  void step(ParamStore<S>& store, const std::map<std::string, Tensor<S>>& grads) {
    ++t_;
    const double lr_t = current_lr();
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Tensor<S>& p = store.param(name);
      SCMT_REQUIRE(g.same_shape(p), "adam: gradient shape mismatch at " + name);
      Tensor<S>& m = state(m_, name, p);
      Tensor<S>& v = state(v_, name, p);
      for (int64_t i = 0; i < p.numel(); ++i) {
        double gi = static_cast<double>(g[i]);
        double mi = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
        double vi = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
        m[i] = static_cast<S>(mi);
        v[i] = static_cast<S>(vi);
        double update = lr_t * (mi / bc1) / (std::sqrt(vi / bc2) + opt_.eps);
        p[i] = static_cast<S>(p[i] - update);
      }
    }
  }

  int64_t steps_taken() const { return t_; }

 private:
  Tensor<S>& state(std::map<std::string, Tensor<S>>& pool, const std::string& name,
                   const Tensor<S>& like) {
    auto it = pool.find(name);
    if (it == pool.end()) it = pool.emplace(name, Tensor<S>(like.shape())).first;
    return it->second;
  }

  Options opt_;
  int64_t t_ = 0;
  std::map<std::string, Tensor<S>> m_, v_;
};

}  // namespace scmt

#endif  // SCMT_NN_HPP_
