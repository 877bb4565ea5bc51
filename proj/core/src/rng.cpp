#include "elmt/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace elmt::rng {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

}  // namespace

std::uint64_t derive(std::uint64_t seed, std::uint64_t domain, std::uint64_t index) {
  std::uint64_t k = mix64(seed + kGolden);
  k = mix64(k ^ (domain + kGolden));
  k = mix64(k ^ (index + kGolden));
  return k;
}

Stream::Stream(std::uint64_t seed, std::uint64_t domain, std::uint64_t index)
    : state_(derive(seed, domain, index)) {}

Stream::Stream(std::uint64_t key) : state_(key) {}

std::uint64_t Stream::next_u64() {
  state_ += kGolden;
  return mix64(state_);
}

std::uint64_t Stream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Stream::below: n must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return draw % n;
}

double Stream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Stream::uniform01_open() {
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Stream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform01();
}

double Stream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform01_open();
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 6.283185307179586476925286766559 * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

double Stream::normal(double mu, double var) {
  if (var < 0.0) throw std::invalid_argument("normal: variance must be nonnegative");
  return mu + std::sqrt(var) * normal();
}

double Stream::gamma(double shape, double scale) {
  if (shape <= 0.0 || scale <= 0.0)
    throw std::invalid_argument("gamma: shape and scale must be positive");
  if (shape < 1.0) {
    // Boost to shape + 1, then correct with U^(1/shape).
    const double boosted = gamma(shape + 1.0, 1.0);
    const double u = uniform01_open();
    return scale * boosted * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01_open();
    if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
  }
}

double Stream::student_t(double df) {
  if (df <= 0.0) throw std::invalid_argument("student_t: df must be positive");
  const double z = normal();
  const double chi2 = gamma(0.5 * df, 2.0);
  return z / std::sqrt(chi2 / df);
}

}  // namespace elmt::rng
