#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace difftraj {

inline constexpr double kPi = 3.14159265358979323846;

// Sampling interval and window lengths shared by the data pipeline,
// the integrators, and the evaluation protocol (0.2 s grid).
inline constexpr double kDt = 0.2;
inline constexpr int kHorizon = 25;  // 5 s of future
inline constexpr int kHistory = 15;  // 3 s of observations

// Error taxonomy. ContractViolation marks misuse at a call site; the
// others are recoverable input, config, or runtime problems.
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IntegrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrackingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Normalizes an angle to (-pi, pi]; -pi maps to +pi.
double wrap_angle(double a);

void log_warning(const std::string& msg);

// Deterministic random stream. Independent streams for e.g. parallel
// sample generation are derived by mixing a stream id into the seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  static Rng derive(uint64_t seed, uint64_t stream);

  double normal() { return normal_(gen_); }
  double uniform() { return uniform_(gen_); }
  // Uniform integer in [0, n).
  uint64_t integer(uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace difftraj
