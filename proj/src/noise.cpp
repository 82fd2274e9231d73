#include "pertrender/noise.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace pertrender {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t product = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(product >> 32);
  lo = static_cast<std::uint32_t>(product);
}

// 53 random bits mapped to the open interval (0, 1).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::string_view to_string(NoisePrior prior) {
  switch (prior) {
    case NoisePrior::Gaussian: return "gaussian";
    case NoisePrior::Cauchy: return "cauchy";
    case NoisePrior::Logistic: return "logistic";
    case NoisePrior::Gumbel: return "gumbel";
    case NoisePrior::Uniform: return "uniform";
  }
  return "unknown";
}

NoisePrior parse_prior(std::string_view name) {
  for (auto p : {NoisePrior::Gaussian, NoisePrior::Cauchy, NoisePrior::Logistic, NoisePrior::Gumbel,
                 NoisePrior::Uniform}) {
    if (to_string(p) == name) return p;
  }
  throw std::invalid_argument("unknown noise prior '" + std::string(name) + "'");
}

bool supports_score_estimator(NoisePrior prior) {
  return prior == NoisePrior::Gaussian || prior == NoisePrior::Cauchy || prior == NoisePrior::Logistic;
}

bool is_symmetric(NoisePrior prior) { return prior != NoisePrior::Gumbel; }

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

std::array<double, 2> uniform_pair(const NoiseStream& s) {
  const auto out = philox4x32({s.sample, s.pixel, s.face, static_cast<std::uint32_t>(s.stage)},
                              {static_cast<std::uint32_t>(s.seed), static_cast<std::uint32_t>(s.seed >> 32)});
  return {to_open_unit(out[0], out[1]), to_open_unit(out[2], out[3])};
}

namespace {

double transform(NoisePrior prior, double u, double u2) {
  switch (prior) {
    case NoisePrior::Gaussian:
      return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * std::numbers::pi * u2);
    case NoisePrior::Cauchy:
      return std::tan(std::numbers::pi * (u - 0.5));
    case NoisePrior::Logistic:
      return std::log(u) - std::log1p(-u);
    case NoisePrior::Gumbel:
      return -std::log(-std::log(u));
    case NoisePrior::Uniform:
      return u - 0.5;
  }
  return 0.0;
}

}  // namespace

double sample(NoisePrior prior, const NoiseStream& stream) {
  const auto u = uniform_pair(stream);
  return transform(prior, u[0], u[1]);
}

double nu_grad(NoisePrior prior, double z) {
  switch (prior) {
    case NoisePrior::Gaussian: return z;
    case NoisePrior::Cauchy: return 2.0 * z / (1.0 + z * z);
    case NoisePrior::Logistic: return std::tanh(0.5 * z);
    case NoisePrior::Gumbel:
    case NoisePrior::Uniform: break;
  }
  throw UnsupportedPrior("nu_grad is not defined for the " + std::string(to_string(prior)) + " prior");
}

double cdf(NoisePrior prior, double x) {
  switch (prior) {
    case NoisePrior::Gaussian: return 0.5 * std::erfc(-x * std::numbers::sqrt2 * 0.5);
    case NoisePrior::Cauchy:
      if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
      return 0.5 + std::atan(x) / std::numbers::pi;
    case NoisePrior::Logistic:
      if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
      return std::exp(x) / (1.0 + std::exp(x));
    case NoisePrior::Gumbel: return std::exp(-std::exp(-x));
    case NoisePrior::Uniform:
      if (x <= -0.5) return 0.0;
      if (x >= 0.5) return 1.0;
      return x + 0.5;
  }
  return 0.0;
}

double pdf(NoisePrior prior, double x) {
  if (std::isinf(x)) return 0.0;
  switch (prior) {
    case NoisePrior::Gaussian: return std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    case NoisePrior::Cauchy: return 1.0 / (std::numbers::pi * (1.0 + x * x));
    case NoisePrior::Logistic: {
      const double e = std::exp(-std::abs(x));
      return e / ((1.0 + e) * (1.0 + e));
    }
    case NoisePrior::Gumbel: return std::exp(-x - std::exp(-x));
    case NoisePrior::Uniform: return (x > -0.5 && x < 0.5) ? 1.0 : 0.0;
  }
  return 0.0;
}

double tail_quantile(NoisePrior prior) {
  switch (prior) {
    case NoisePrior::Gaussian: return 6.0;
    case NoisePrior::Logistic: return 20.8;
    case NoisePrior::Gumbel: return 20.8;
    case NoisePrior::Uniform: return 0.5;
    case NoisePrior::Cauchy: break;
  }
  return std::numeric_limits<double>::infinity();
}

double CounterRng::uniform() {
  NoiseStream s{seed_, counter_++, 0, 0, Stage::Pose};
  return uniform_pair(s)[0];
}

double CounterRng::normal() {
  NoiseStream s{seed_, counter_++, 0, 0, Stage::Pose};
  return sample(NoisePrior::Gaussian, s);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace pertrender
