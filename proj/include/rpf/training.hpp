#pragma once

// KL-divergence training against unnormalized targets. The estimator is
// KL(q; p) = E_π[ln π(x) - logdet + u(f(x))] + ln Z over base samples;
// parameter gradients come from the implicit machinery in flow.hpp (or the
// unrolled cross-check path).

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rpf/errors.hpp"
#include "rpf/flow.hpp"
#include "rpf/targets.hpp"

namespace rpf {

enum class GradPath { implicit, unrolled };

std::string grad_path_name(GradPath p);
GradPath grad_path_from_name(const std::string& name);

struct TrainConfig {
  int batch_size = 256;
  int steps = 5000;
  double learning_rate = 1e-3;
  std::pair<double, double> adam_betas = {0.9, 0.999};
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  GradPath grad_path = GradPath::implicit;
  int eval_every = 500;
  int eval_samples = 20000;
  double early_stop_ess = 0.0;  // stop once eval ESS reaches this (0 = never)
  int unroll_steps = 50;

  void validate() const {
    if (!(learning_rate > 0.0))
      throw ConfigError("train.learning_rate", "must be positive");
    if (!(adam_betas.first > 0.0 && adam_betas.first < 1.0 &&
          adam_betas.second > 0.0 && adam_betas.second < 1.0))
      throw ConfigError("train.adam_betas", "must lie in (0, 1)");
    if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
    if (steps < 0) throw ConfigError("train.steps", "must be >= 0");
    if (eval_every < 1) throw ConfigError("train.eval_every", "must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

struct AdamState {
  Eigen::VectorXd m, v;
  long step = 0;
};

struct LossBreakdown {
  double kl_estimate = 0.0;
  double mean_logdet = 0.0;
  double mean_target_energy = 0.0;
  double non_converged_fraction = 0.0;
  std::size_t n_used = 0;
};

// Monte-Carlo KL over the given base samples. Non-converged inner solves are
// dropped and counted; more than 10% of them is a training-health error.
LossBreakdown kl_loss_batch(const FlowStack& stack, const ParamVector& theta,
                            const TargetEnergy& target,
                            const std::vector<Point>& batch, double log_z);

// Gradient of the batch KL estimate with respect to θ.
Eigen::VectorXd loss_param_grad(const FlowStack& stack, const ParamVector& theta,
                                const TargetEnergy& target,
                                const std::vector<Point>& batch,
                                GradPath path = GradPath::implicit,
                                int unroll_steps = 50);

// Standard bias-corrected Adam update. Non-finite gradients raise a
// training-health error naming the offending parameter segment.
void adam_step(AdamState& state, ParamVector& theta, const Eigen::VectorXd& grad,
               const TrainConfig& config);

struct MetricsRecord {
  long step = 0;
  double kl = 0.0;
  double ess = 0.0;
  double mean_logdet = 0.0;
  double nonconverged_frac = 0.0;
  double max_grad_psi = 0.0;
  double max_hess_psi = 0.0;
};

struct TrainHooks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const ParamVector&, const std::string& tag)> on_checkpoint;
};

struct TrainResult {
  ParamVector theta;
  std::vector<MetricsRecord> history;
  bool early_stopped = false;
};

// Runs the loop; deterministic given config.seed. Health errors abort after
// writing a checkpoint through the hooks.
TrainResult train(const TrainConfig& config, const FlowStack& stack,
                  ParamVector theta, const TargetEnergy& target,
                  const TrainHooks& hooks = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  int worst_index = -1;
  Eigen::VectorXd analytic;
  Eigen::VectorXd finite_diff;
};

// Central finite differences of the frozen-batch KL against loss_param_grad.
GradCheckReport grad_check(const FlowStack& stack, const ParamVector& theta,
                           const TargetEnergy& target, int n_points,
                           double epsilon,
                           GradPath path = GradPath::implicit,
                           std::uint64_t seed = 17);

}  // namespace rpf
