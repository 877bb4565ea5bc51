#ifndef ELMT_RNG_HPP
#define ELMT_RNG_HPP

#include <cstdint>

namespace elmt::rng {

// Derive a child seed from (seed, domain, index). Used to hand independent
// streams to simulation runs, calibration replicates, and data generation
// without any sequential state, so results do not depend on scheduling.
std::uint64_t derive(std::uint64_t seed, std::uint64_t domain, std::uint64_t index);

// Counter-based pseudo-random stream. Each stream is keyed by
// (seed, domain, index); successive outputs come from a SplitMix64 walk over
// the counter, so two streams with different keys are independent and a
// stream replays identically regardless of what other streams do.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t domain, std::uint64_t index);
  explicit Stream(std::uint64_t key);

  std::uint64_t next_u64();
  // Unbiased draw from {0, ..., n-1}.
  std::uint64_t below(std::uint64_t n);
  // Uniform on [0, 1).
  double uniform01();
  // Uniform on (0, 1); never returns an exact endpoint.
  double uniform01_open();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; pairs are cached inside the stream.
  double normal();
  // Normal with mean mu and *variance* var.
  double normal(double mu, double var);
  // Gamma(shape, scale), Marsaglia-Tsang rejection with a shape >= 1 fast
  // path; shape < 1 is boosted and corrected by a power of a uniform.
  double gamma(double shape, double scale);
  // Student t with df degrees of freedom (normal over root chi-square).
  double student_t(double df);

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stream domains used across the library. Centralized so no two call sites
// accidentally share a stream for different purposes.
inline constexpr std::uint64_t kDomainAmc = 0xA31C'0001;
inline constexpr std::uint64_t kDomainNbIndices = 0xB007'0001;
inline constexpr std::uint64_t kDomainMvChisq = 0xC415'0001;
inline constexpr std::uint64_t kDomainSimData = 0xD474'0001;
inline constexpr std::uint64_t kDomainSimCalib = 0xD474'0002;

}  // namespace elmt::rng

#endif
