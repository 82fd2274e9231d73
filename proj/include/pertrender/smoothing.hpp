#pragma once

#include "pertrender/noise.hpp"

#include <Eigen/Core>

#include <functional>
#include <span>
#include <variant>
#include <vector>

namespace pertrender {

struct SmoothingParams {
  double sigma = 0.05;   // rasterization scale (NDC units)
  double gamma = 0.02;   // aggregation scale (inverse-depth units)
  double alpha = 10.0;   // log-barrier strength
  int samples = 8;
  NoisePrior raster_prior = NoisePrior::Gaussian;
  NoisePrior agg_prior = NoisePrior::Gaussian;

  void validate() const;
  friend bool operator==(const SmoothingParams&, const SmoothingParams&) = default;
};

inline constexpr double kOccupancyFloor = 1e-7;

struct ClosedForm {};
/// Monte-Carlo evaluation; draw i uses `stream.with_sample(i)`, coordinate j
/// of a vector draw additionally uses `with_face(j)`.
struct MonteCarlo {
  int samples = 8;
  NoiseStream stream;
};
using Evaluation = std::variant<ClosedForm, MonteCarlo>;

/// 0 for x <= 0, 1 otherwise.
inline double hard_heaviside(double x) { return x > 0.0 ? 1.0 : 0.0; }

/// E[H(x + sigma X)]. sigma == 0 returns hard_heaviside(x) exactly.
double smooth_heaviside(double x, double sigma, NoisePrior prior, const Evaluation& eval);

/// Index of the maximal score; the smallest index wins ties, so a trailing
/// background slot loses every tie. Throws if every score is -inf.
std::size_t hard_argmax_index(std::span<const double> scores);
Eigen::VectorXd hard_simplex_argmax(std::span<const double> scores);

/// Face scores z_j + ln(max(I_j, floor)) / alpha followed by the background
/// score z_min. `inverse_depths` has m + 1 entries (last is the background).
Eigen::VectorXd barrier_scores(std::span<const double> inverse_depths, std::span<const double> occupancy,
                               double alpha, double floor = kOccupancyFloor);

Eigen::VectorXd softmax(std::span<const double> scores, double temperature);

/// E[argmax(scores + gamma Z)] over the simplex with i.i.d. coordinates.
/// Closed form exists only for the Gumbel prior (softmax).
Eigen::VectorXd smooth_simplex_argmax(std::span<const double> scores, double gamma, NoisePrior prior,
                                      const Evaluation& eval);

using HardSolver = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct PerturbedEstimate {
  Eigen::VectorXd value;     // y_eps^M
  Eigen::MatrixXd jacobian;  // rows: outputs, cols: inputs
  /// Per-entry empirical variance of the single-sample Jacobian terms.
  Eigen::MatrixXd variance;
  int samples = 0;
};

struct SensitivityEstimate {
  Eigen::VectorXd value;     // y_eps^M
  Eigen::VectorXd derivative;
  Eigen::VectorXd variance;
  int samples = 0;
};

/// (1/M) sum y*(theta + eps Z_i) grad_nu(Z_i)^T / eps.
PerturbedEstimate jacobian_plain(const HardSolver& solver, const Eigen::VectorXd& theta, double eps,
                                 NoisePrior prior, int samples, const NoiseStream& stream);

/// Control-variate version: y*(theta) is subtracted from every sample.
PerturbedEstimate jacobian_vr(const HardSolver& solver, const Eigen::VectorXd& theta, double eps, NoisePrior prior,
                              int samples, const NoiseStream& stream);

/// d y_eps / d eps with the same control variate. For n-dimensional noise the
/// score is (grad_nu(Z).Z - n) / eps, which reduces to the scalar form at n = 1.
SensitivityEstimate sensitivity_vr(const HardSolver& solver, const Eigen::VectorXd& theta, double eps,
                                   NoisePrior prior, int samples, const NoiseStream& stream);

}  // namespace pertrender
