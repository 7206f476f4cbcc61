#include "difftraj/common.hpp"

#include <cmath>
#include <iostream>

namespace difftraj {

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

void log_warning(const std::string& msg) {
  std::cerr << "[difftraj] warning: " << msg << "\n";
}

namespace {
// splitmix64 finalizer, used to decorrelate derived seeds.
uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace

Rng Rng::derive(uint64_t seed, uint64_t stream) {
  return Rng(mix64(seed ^ mix64(stream + 1)));
}

uint64_t Rng::integer(uint64_t n) {
  std::uniform_int_distribution<uint64_t> dist(0, n - 1);
  return dist(gen_);
}

}  // namespace difftraj
