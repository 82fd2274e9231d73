#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pertrender {

/// Standard (location 0, scale 1) noise distributions mu(z) ~ exp(-nu(z)).
enum class NoisePrior { Gaussian, Cauchy, Logistic, Gumbel, Uniform };

std::string_view to_string(NoisePrior prior);
NoisePrior parse_prior(std::string_view name);

/// True when nu is smooth, so the potential-gradient (score-function)
/// estimators are defined.
bool supports_score_estimator(NoisePrior prior);
bool is_symmetric(NoisePrior prior);

class UnsupportedPrior : public std::invalid_argument {
 public:
  explicit UnsupportedPrior(const std::string& what) : std::invalid_argument(what) {}
};

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

enum class Stage : std::uint32_t { Raster = 1, Aggregate = 2, Generic = 3, Pose = 4 };

/// Identifies one scalar draw. Equal streams give equal draws; any differing
/// field yields an independent draw.
struct NoiseStream {
  std::uint64_t seed = 0;
  std::uint32_t sample = 0;
  std::uint32_t pixel = 0;
  std::uint32_t face = 0;
  Stage stage = Stage::Generic;

  NoiseStream with_sample(std::uint32_t s) const {
    NoiseStream copy = *this;
    copy.sample = s;
    return copy;
  }
  NoiseStream with_face(std::uint32_t f) const {
    NoiseStream copy = *this;
    copy.face = f;
    return copy;
  }

  friend bool operator==(const NoiseStream&, const NoiseStream&) = default;
};

/// Two independent uniforms in the open interval (0, 1) for a stream.
std::array<double, 2> uniform_pair(const NoiseStream& stream);

double sample(NoisePrior prior, const NoiseStream& stream);

/// d nu / dz. Throws UnsupportedPrior for Uniform and Gumbel.
double nu_grad(NoisePrior prior, double z);

double cdf(NoisePrior prior, double x);
double pdf(NoisePrior prior, double x);

/// Smallest t with P(Z > t) <= 1e-9 (infinite for Cauchy).
double tail_quantile(NoisePrior prior);

/// Sequential uniform generator built on the same counter scheme, for
/// experiment-level randomness (pose perturbations).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}
  double uniform();
  double normal();

 private:
  std::uint64_t seed_;
  std::uint32_t counter_ = 0;
};

/// SplitMix64 finalizer, used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace pertrender
