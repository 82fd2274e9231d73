#include "pertrender/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pertrender {

void SmoothingParams::validate() const {
  if (!(sigma >= 0.0)) throw std::invalid_argument("smoothing: sigma must be >= 0");
  if (!(gamma >= 0.0)) throw std::invalid_argument("smoothing: gamma must be >= 0");
  if (!(alpha > 0.0)) throw std::invalid_argument("smoothing: alpha must be > 0");
  if (samples < 1) throw std::invalid_argument("smoothing: samples must be >= 1");
}

double smooth_heaviside(double x, double sigma, NoisePrior prior, const Evaluation& eval) {
  if (sigma < 0.0) throw std::invalid_argument("smooth_heaviside: sigma must be >= 0");
  if (sigma == 0.0) return hard_heaviside(x);
  if (std::holds_alternative<ClosedForm>(eval)) return cdf(prior, x / sigma);
  const auto& mc = std::get<MonteCarlo>(eval);
  double sum = 0.0;
  for (int i = 0; i < mc.samples; ++i) {
    sum += hard_heaviside(x + sigma * sample(prior, mc.stream.with_sample(static_cast<std::uint32_t>(i))));
  }
  return sum / mc.samples;
}

std::size_t hard_argmax_index(std::span<const double> scores) {
  std::size_t best = scores.size();
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (scores[j] > best_value) {
      best_value = scores[j];
      best = j;
    }
  }
  if (best == scores.size()) throw std::invalid_argument("hard_simplex_argmax: every score is -inf");
  return best;
}

Eigen::VectorXd hard_simplex_argmax(std::span<const double> scores) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(scores.size()));
  out[static_cast<Eigen::Index>(hard_argmax_index(scores))] = 1.0;
  return out;
}

Eigen::VectorXd barrier_scores(std::span<const double> z, std::span<const double> occupancy, double alpha,
                               double floor) {
  if (!(alpha > 0.0)) throw std::invalid_argument("barrier_scores: alpha must be > 0");
  if (z.size() != occupancy.size() + 1) throw std::invalid_argument("barrier_scores: need m+1 depths for m faces");
  const std::size_t m = occupancy.size();
  Eigen::VectorXd s(static_cast<Eigen::Index>(m + 1));
  for (std::size_t j = 0; j < m; ++j) {
    s[static_cast<Eigen::Index>(j)] = z[j] + std::log(std::max(occupancy[j], floor)) / alpha;
  }
  s[static_cast<Eigen::Index>(m)] = z[m];
  return s;
}

Eigen::VectorXd softmax(std::span<const double> scores, double temperature) {
  const double top = *std::max_element(scores.begin(), scores.end());
  Eigen::VectorXd w(static_cast<Eigen::Index>(scores.size()));
  double total = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    const double e = std::isinf(scores[j]) ? 0.0 : std::exp((scores[j] - top) / temperature);
    w[static_cast<Eigen::Index>(j)] = e;
    total += e;
  }
  return w / total;
}

Eigen::VectorXd smooth_simplex_argmax(std::span<const double> scores, double gamma, NoisePrior prior,
                                      const Evaluation& eval) {
  if (gamma < 0.0) throw std::invalid_argument("smooth_simplex_argmax: gamma must be >= 0");
  if (gamma == 0.0) return hard_simplex_argmax(scores);
  if (std::holds_alternative<ClosedForm>(eval)) {
    if (prior != NoisePrior::Gumbel) {
      throw UnsupportedPrior("closed-form simplex argmax requires the gumbel prior, got " +
                             std::string(to_string(prior)));
    }
    return softmax(scores, gamma);
  }
  const auto& mc = std::get<MonteCarlo>(eval);
  const std::size_t n = scores.size();
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  std::vector<double> perturbed(n);
  for (int i = 0; i < mc.samples; ++i) {
    const NoiseStream base = mc.stream.with_sample(static_cast<std::uint32_t>(i));
    for (std::size_t j = 0; j < n; ++j) {
      perturbed[j] = std::isinf(scores[j]) ? scores[j]
                                           : scores[j] + gamma * sample(prior, base.with_face(static_cast<std::uint32_t>(j)));
    }
    counts[static_cast<Eigen::Index>(hard_argmax_index(perturbed))] += 1.0;
  }
  return counts / mc.samples;
}

namespace {

struct SampleTerms {
  Eigen::VectorXd y;
  Eigen::VectorXd z;
  Eigen::VectorXd score;  // grad nu(Z)
};

SampleTerms draw(const HardSolver& solver, const Eigen::VectorXd& theta, double eps, NoisePrior prior,
                 const NoiseStream& stream, int i) {
  SampleTerms t;
  const NoiseStream base = stream.with_sample(static_cast<std::uint32_t>(i));
  t.z.resize(theta.size());
  t.score.resize(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    t.z[j] = sample(prior, base.with_face(static_cast<std::uint32_t>(j)));
    t.score[j] = nu_grad(prior, t.z[j]);
  }
  t.y = solver(theta + eps * t.z);
  return t;
}

void check_estimator_args(double eps, NoisePrior prior, int samples, const char* name) {
  if (!(eps > 0.0)) throw std::invalid_argument(std::string(name) + ": eps must be > 0");
  if (samples < 1) throw std::invalid_argument(std::string(name) + ": need at least one sample");
  if (!supports_score_estimator(prior)) {
    throw UnsupportedPrior(std::string(name) + ": the " + std::string(to_string(prior)) +
                           " prior has no usable grad nu");
  }
}

PerturbedEstimate jacobian_impl(const HardSolver& solver, const Eigen::VectorXd& theta, double eps,
                                NoisePrior prior, int samples, const NoiseStream& stream, bool control_variate) {
  const Eigen::VectorXd y0 = solver(theta);
  const Eigen::Index k = y0.size();
  const Eigen::Index n = theta.size();
  PerturbedEstimate est;
  est.samples = samples;
  est.value = Eigen::VectorXd::Zero(k);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(k, n);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(k, n);
  for (int i = 0; i < samples; ++i) {
    const SampleTerms t = draw(solver, theta, eps, prior, stream, i);
    est.value += t.y;
    const Eigen::VectorXd lhs = control_variate ? Eigen::VectorXd(t.y - y0) : t.y;
    const Eigen::MatrixXd term = lhs * t.score.transpose() / eps;
    sum += term;
    sum_sq += term.cwiseProduct(term);
  }
  est.value /= samples;
  est.jacobian = sum / samples;
  if (samples > 1) {
    est.variance = (sum_sq - sum.cwiseProduct(sum) / samples) / (samples - 1);
  } else {
    est.variance = Eigen::MatrixXd::Zero(k, n);
  }
  return est;
}

}  // namespace

PerturbedEstimate jacobian_plain(const HardSolver& solver, const Eigen::VectorXd& theta, double eps,
                                 NoisePrior prior, int samples, const NoiseStream& stream) {
  check_estimator_args(eps, prior, samples, "jacobian_plain");
  return jacobian_impl(solver, theta, eps, prior, samples, stream, false);
}

PerturbedEstimate jacobian_vr(const HardSolver& solver, const Eigen::VectorXd& theta, double eps, NoisePrior prior,
                              int samples, const NoiseStream& stream) {
  check_estimator_args(eps, prior, samples, "jacobian_vr");
  return jacobian_impl(solver, theta, eps, prior, samples, stream, true);
}

SensitivityEstimate sensitivity_vr(const HardSolver& solver, const Eigen::VectorXd& theta, double eps,
                                   NoisePrior prior, int samples, const NoiseStream& stream) {
  check_estimator_args(eps, prior, samples, "sensitivity_vr");
  const Eigen::VectorXd y0 = solver(theta);
  const double dim = static_cast<double>(theta.size());
  SensitivityEstimate est;
  est.samples = samples;
  est.value = Eigen::VectorXd::Zero(y0.size());
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(y0.size());
  Eigen::VectorXd sum_sq = Eigen::VectorXd::Zero(y0.size());
  for (int i = 0; i < samples; ++i) {
    const SampleTerms t = draw(solver, theta, eps, prior, stream, i);
    est.value += t.y;
    const Eigen::VectorXd term = (t.y - y0) * ((t.score.dot(t.z) - dim) / eps);
    sum += term;
    sum_sq += term.cwiseProduct(term);
  }
  est.value /= samples;
  est.derivative = sum / samples;
  est.variance = samples > 1 ? Eigen::VectorXd((sum_sq - sum.cwiseProduct(sum) / samples) / (samples - 1))
                             : Eigen::VectorXd::Zero(y0.size());
  return est;
}

}  // namespace pertrender
