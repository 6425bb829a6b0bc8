#include "l2i/diffusion.hpp"

#include <cmath>
#include <random>

namespace l2i {

DiffusionSchedule::DiffusionSchedule(const ScheduleConfig& cfg) : cfg_(cfg) {
  if (cfg.steps < 1) throw Error(Errc::InvalidConfig, "schedule needs at least one step");
  if (!(cfg.beta_start > 0.0 && cfg.beta_end < 1.0 && cfg.beta_start <= cfg.beta_end)) {
    throw Error(Errc::InvalidConfig, "beta range must satisfy 0 < start <= end < 1");
  }
  beta_.assign(static_cast<std::size_t>(cfg.steps) + 1, 0.0);
  alpha_bar_.assign(static_cast<std::size_t>(cfg.steps) + 1, 1.0);
  for (int t = 1; t <= cfg.steps; ++t) {
    const double frac = cfg.steps == 1 ? 0.0 : static_cast<double>(t - 1) / (cfg.steps - 1);
    beta_[t] = cfg.beta_start + frac * (cfg.beta_end - cfg.beta_start);
    alpha_bar_[t] = alpha_bar_[t - 1] * (1.0 - beta_[t]);
  }
}

double DiffusionSchedule::beta(int t) const {
  if (t < 1 || t > cfg_.steps) throw Error(Errc::StepOutOfRange, "diffusion step outside [1, T]");
  return beta_[static_cast<std::size_t>(t)];
}

double DiffusionSchedule::alpha_bar(int t) const {
  if (t < 0 || t > cfg_.steps) throw Error(Errc::StepOutOfRange, "diffusion step outside [0, T]");
  return alpha_bar_[static_cast<std::size_t>(t)];
}

std::vector<int> sampling_timesteps(int total, int steps) {
  if (steps < 1 || steps > total) throw Error(Errc::StepOutOfRange, "sampling steps must lie in [1, T]");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int i = steps; i >= 1; --i) {
    ts.push_back(static_cast<int>((static_cast<long long>(i) * total + steps - 1) / steps));
  }
  return ts;
}

Eigen::MatrixXd sample_loop(const NoisePredictor& predict, Eigen::MatrixXd x, const DiffusionSchedule& schedule,
                            const SamplerOptions& options, Rng& rng) {
  std::vector<Rng> rngs{rng};
  x = sample_loop(predict, std::move(x), schedule, options, rngs);
  rng = rngs.front();
  return x;
}

Eigen::MatrixXd sample_loop(const NoisePredictor& predict, Eigen::MatrixXd x, const DiffusionSchedule& schedule,
                            const SamplerOptions& options, std::vector<Rng>& rngs) {
  if (rngs.empty() || x.rows() % static_cast<Eigen::Index>(rngs.size()) != 0) {
    throw Error(Errc::ShapeMismatch, "sample rows must split evenly across generators");
  }
  const Eigen::Index per = x.rows() / static_cast<Eigen::Index>(rngs.size());
  const std::vector<int> ts = sampling_timesteps(schedule.steps(), options.steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    Eigen::MatrixXd eps = predict(x, t);
    Eigen::MatrixXd x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    if (options.clip_x0) {
      x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
      // keep eps consistent with the clipped estimate
      eps = (x - std::sqrt(ab) * x0) / std::sqrt(1.0 - ab);
    }
    const double sigma =
        options.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_prev));
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    x = std::sqrt(ab_prev) * x0 + dir * eps;
    if (sigma > 0.0) {
      for (std::size_t b = 0; b < rngs.size(); ++b) {
        std::normal_distribution<double> normal(0.0, 1.0);
        auto block = x.middleRows(static_cast<Eigen::Index>(b) * per, per);
        for (Eigen::Index r = 0; r < block.rows(); ++r) {
          for (Eigen::Index c = 0; c < block.cols(); ++c) block(r, c) += sigma * normal(rngs[b]);
        }
      }
    }
  }
  return x;
}

}  // namespace l2i
