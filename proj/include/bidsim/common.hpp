#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bidsim {

// Error taxonomy: structural problems in case data, schema problems in config
// files, violated operation preconditions, infeasible programs (with a Farkas
// certificate), numerical solver failures, and size-guard refusals.
struct StructuralError : std::runtime_error {
  explicit StructuralError(const std::string& what) : std::runtime_error(what) {}
};

struct SchemaError : std::runtime_error {
  explicit SchemaError(const std::string& what) : std::runtime_error(what) {}
};

struct PreconditionError : std::runtime_error {
  explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

struct InfeasibleError : std::runtime_error {
  InfeasibleError(const std::string& what, std::vector<double> cert_row_weights, double cert_gap)
      : std::runtime_error(what), row_weights(std::move(cert_row_weights)), gap(cert_gap) {}
  // Farkas certificate: weights w over the equality rows such that the
  // aggregated constraint w'A u = w'rhs has w'A <= 0 (u >= 0) but w'rhs = gap > 0.
  std::vector<double> row_weights;
  double gap = 0.0;
};

struct SolverError : std::runtime_error {
  SolverError(const std::string& what, std::string log_text = {})
      : std::runtime_error(what), log(std::move(log_text)) {}
  std::string log;
};

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic named substream of a master seed.  All randomness in the
// engine flows through these, so a single config seed reproduces every draw
// regardless of platform or standard-library version.
class SubStream {
 public:
  SubStream(std::uint64_t master, std::string_view name, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : name) {
      h ^= static_cast<unsigned char>(ch);
      h *= 1099511628211ull;
    }
    state_ = master ^ h;
    state_ += 0x632be59bd9b4e019ull * (index + 1);
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  // Marsaglia polar method; deterministic and allocation-free.
  double normal() {
    for (;;) {
      double u = 2.0 * uniform01() - 1.0;
      double v = 2.0 * uniform01() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// 10 significant digits, C locale, "nan" for quiet NaN; the trace format.
std::string fmt_sig10(double v);

}  // namespace bidsim
