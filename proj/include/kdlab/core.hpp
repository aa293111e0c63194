#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kdl {

enum class ErrorKind {
  shape,
  argument,
  numeric,
  config,
  bad_magic,
  truncated,
  out_of_range,
  schema,
  io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::argument: return "argument";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::config: return "config";
    case ErrorKind::bad_magic: return "bad-magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::out_of_range: return "out-of-range";
    case ErrorKind::schema: return "schema";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

template <typename... Args>
[[noreturn]] void fail(ErrorKind kind, Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  throw Error(kind, oss.str());
}

using Labels = std::vector<std::uint32_t>;

/// Dense row-major array. dims are outermost-first.
template <typename T>
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<T> values;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, T fill = T(0))
      : dims(std::move(d)), values(count(dims), fill) {}
  Tensor(std::vector<std::size_t> d, std::vector<T> v) : dims(std::move(d)), values(std::move(v)) {
    if (values.size() != count(dims))
      fail(ErrorKind::shape, "tensor has ", values.size(), " values but dims imply ", count(dims));
  }

  static std::size_t count(const std::vector<std::size_t>& d) {
    return std::accumulate(d.begin(), d.end(), std::size_t{1}, std::multiplies<>());
  }

  std::size_t size() const { return values.size(); }
  std::size_t dim(std::size_t i) const { return dims.at(i); }
  T* data() { return values.data(); }
  const T* data() const { return values.data(); }
  T& operator[](std::size_t i) { return values[i]; }
  const T& operator[](std::size_t i) const { return values[i]; }

  bool all_finite() const {
    for (const T& v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor&) const = default;
};

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  Tensor<To> out;
  out.dims = t.dims;
  out.values.assign(t.values.begin(), t.values.end());
  return out;
}

inline std::string dims_string(const std::vector<std::size_t>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

// Keyed random streams. Every randomized draw in the library is derived from
// (seed, stream, epoch, index) so that batch order never changes the draws.
enum class Stream : std::uint64_t {
  init = 1,
  order = 2,
  train_augment = 3,
  student_view = 4,
  probe_view = 5,
  val_augment = 6,
  synth = 7,
  longtail = 8,
  split = 9,
  teacher_seed = 10,
};

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream, std::uint64_t epoch = 0,
                                std::uint64_t index = 0) {
  std::uint64_t h = mix64(seed ^ 0x6b646c6162ULL);
  h = mix64(h ^ stream);
  h = mix64(h ^ (epoch * 0x100000001b3ULL));
  return mix64(h ^ (index + 0x51ed27ULL));
}

inline std::uint64_t stream_key(std::uint64_t seed, Stream stream, std::uint64_t epoch = 0,
                                std::uint64_t index = 0) {
  return stream_key(seed, static_cast<std::uint64_t>(stream), epoch, index);
}

using Rng = std::mt19937_64;

inline Rng keyed_rng(std::uint64_t seed, Stream stream, std::uint64_t epoch = 0, std::uint64_t index = 0) {
  return Rng(stream_key(seed, stream, epoch, index));
}

inline double uniform01(Rng& rng) {
  // 53 random mantissa bits; identical across standard library implementations.
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)) % n;
}

inline double normal(Rng& rng) {
  // Box-Muller; one draw per call keeps the stream position predictable.
  double u1 = uniform01(rng);
  double u2 = uniform01(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <typename Container>
void shuffle(Container& c, Rng& rng) {
  for (std::size_t i = c.size(); i > 1; --i) std::swap(c[i - 1], c[uniform_index(rng, i)]);
}

/// FNV-1a over raw bytes; used for content-addressed cache keys.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace kdl
