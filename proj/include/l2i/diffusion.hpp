#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "l2i/errors.hpp"
#include "l2i/nn.hpp"

namespace l2i {

struct ScheduleConfig {
  int steps = 200;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
};

/// Linear beta schedule. Steps are 1-based; alpha_bar(0) = 1.
class DiffusionSchedule {
 public:
  explicit DiffusionSchedule(const ScheduleConfig& cfg = {});

  int steps() const { return cfg_.steps; }
  const ScheduleConfig& config() const { return cfg_; }
  double beta(int t) const;
  double alpha_bar(int t) const;

 private:
  ScheduleConfig cfg_;
  std::vector<double> beta_;       // index t, beta_[0] = 0
  std::vector<double> alpha_bar_;  // index t
};

/// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
template <typename Derived, typename DerivedEps>
auto forward_noise(const Eigen::MatrixBase<Derived>& z0, double alpha_bar, const Eigen::MatrixBase<DerivedEps>& eps) {
  using S = typename Derived::Scalar;
  return (static_cast<S>(std::sqrt(alpha_bar)) * z0 + static_cast<S>(std::sqrt(1.0 - alpha_bar)) * eps).eval();
}

template <typename Derived, typename DerivedEps>
auto forward_noise(const Eigen::MatrixBase<Derived>& z0, int t, const Eigen::MatrixBase<DerivedEps>& eps,
                   const DiffusionSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) throw Error(Errc::StepOutOfRange, "diffusion step outside [1, T]");
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols()) {
    throw Error(Errc::ShapeMismatch, "noise shape differs from signal shape");
  }
  return forward_noise(z0, schedule.alpha_bar(t), eps);
}

struct SamplerOptions {
  int steps = 50;
  /// 0 gives deterministic DDIM; 1 with steps == T gives ancestral DDPM.
  double eta = 1.0;
  bool clip_x0 = true;
};

/// Decreasing strided subsequence of [1, T] with `steps` entries ending at T.
std::vector<int> sampling_timesteps(int total, int steps);

using NoisePredictor = std::function<Eigen::MatrixXd(const Eigen::MatrixXd& x, int t)>;

/// Generalised DDIM update from x_T down to x_0 in model space.
Eigen::MatrixXd sample_loop(const NoisePredictor& predict, Eigen::MatrixXd x_T, const DiffusionSchedule& schedule,
                            const SamplerOptions& options, Rng& rng);

/// Same, with x split into rngs.size() equal row blocks that each draw their
/// noise from their own generator, so a sample does not depend on its batch.
Eigen::MatrixXd sample_loop(const NoisePredictor& predict, Eigen::MatrixXd x_T, const DiffusionSchedule& schedule,
                            const SamplerOptions& options, std::vector<Rng>& rngs);

}  // namespace l2i
