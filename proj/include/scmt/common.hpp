#ifndef SCMT_COMMON_HPP_
#define SCMT_COMMON_HPP_

#include <cmath>
#include <cstdint>
#include <new>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace scmt {

// Numeric heap buffers are handed to Eigen as raw-pointer maps. Eigen's
// vectorized kernels peel a scalar prologue whose length depends on the
// pointer's alignment, so two allocations of the same buffer at different
// addresses can sum in different orders and differ in the last bit. Pinning
// every buffer to one alignment class keeps float results reproducible
// across reruns; 32 bytes covers the widest packet we compile for.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::align_val_t kAlign{32};

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const {
    return true;
  }
  template <typename U>
  bool operator!=(const AlignedAlloc<U>&) const {
    return false;
  }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

// Thrown when a caller violates an operation's contract.
class InvalidInputError : public std::runtime_error {
 public:
  explicit InvalidInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for bad or inconsistent configuration (architecture mismatches etc.).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on file format / filesystem problems.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a training step produces non-finite values; carries the name
// of the offending component so the abort message is actionable.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::string location_msg(const char* file, int line, const std::string& msg) {
  std::ostringstream os;
  os << msg << " (" << file << ":" << line << ")";
  return os.str();
}
}  // namespace detail

#define SCMT_REQUIRE(cond, msg)                                                   \
  do {                                                                            \
    if (!(cond))                                                                  \
      throw ::scmt::InvalidInputError(                                            \
          ::scmt::detail::location_msg(__FILE__, __LINE__, (msg)));               \
  } while (0)

#define SCMT_CONFIG_REQUIRE(cond, msg)                                            \
  do {                                                                            \
    if (!(cond))                                                                  \
      throw ::scmt::ConfigError(                                                  \
          ::scmt::detail::location_msg(__FILE__, __LINE__, (msg)));               \
  } while (0)

}  // namespace scmt

#endif  // SCMT_COMMON_HPP_
