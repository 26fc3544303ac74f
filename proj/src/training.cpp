#include "rpf/training.hpp"

#include <algorithm>
#include <cmath>

#include "rpf/metrics.hpp"
#include "rpf/threading.hpp"

namespace rpf {

std::string grad_path_name(GradPath p) {
  return p == GradPath::implicit ? "implicit" : "unrolled";
}

GradPath grad_path_from_name(const std::string& name) {
  if (name == "implicit") return GradPath::implicit;
  if (name == "unrolled") return GradPath::unrolled;
  throw ConfigError("train.grad_path", "must be 'implicit' or 'unrolled'");
}

namespace {

struct BatchEval {
  std::vector<StackGradSample> samples;
  std::size_t n_converged = 0;
};

BatchEval eval_batch(const FlowStack& stack, const ParamVector& theta,
                     const TargetEnergy& target, const std::vector<Point>& batch,
                     bool with_grad, GradPath path, int unroll_steps) {
  BatchEval out;
  out.samples.resize(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    try {
      if (with_grad) {
        out.samples[i] =
            path == GradPath::implicit
                ? stack_loss_grad(stack, theta, target, batch[i])
                : unrolled_loss_grad(stack, theta, target, batch[i],
                                     unroll_steps);
      } else {
        StackForwardResult fr = stack_forward(stack, theta, batch[i]);
        StackGradSample& s = out.samples[i];
        s.converged = fr.all_converged;
        s.neg_logdet = -fr.total_logdet;
        s.y = fr.y;
        s.energy = target.energy_at(fr.y);
      }
    } catch (const DegenerateFlowError&) {
      out.samples[i].converged = false;
    } catch (const ImplicitSolveError&) {
      out.samples[i].converged = false;
    } catch (const CutLocusError&) {
      out.samples[i].converged = false;
    }
  });
  for (const auto& s : out.samples)
    if (s.converged) ++out.n_converged;
  return out;
}

}  // namespace

LossBreakdown kl_loss_batch(const FlowStack& stack, const ParamVector& theta,
                            const TargetEnergy& target,
                            const std::vector<Point>& batch, double log_z) {
  const ManifoldKernel& m = stack.layers.front().manifold;
  BatchEval be = eval_batch(stack, theta, target, batch, false,
                            GradPath::implicit, 0);
  LossBreakdown out;
  out.n_used = be.n_converged;
  out.non_converged_fraction =
      1.0 - static_cast<double>(be.n_converged) / batch.size();
  if (out.non_converged_fraction > 0.10)
    throw TrainingHealthError("kl_loss_batch: more than 10% of inner solves failed");
  if (be.n_converged == 0) return out;
  double acc = 0.0, acc_ld = 0.0, acc_u = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = be.samples[i];
    if (!s.converged) continue;
    acc += m.base_log_density(batch[i]) + s.neg_logdet + s.energy;
    acc_ld += -s.neg_logdet;
    acc_u += s.energy;
  }
  out.kl_estimate = acc / be.n_converged + log_z;
  out.mean_logdet = acc_ld / be.n_converged;
  out.mean_target_energy = acc_u / be.n_converged;
  return out;
}

Eigen::VectorXd loss_param_grad(const FlowStack& stack, const ParamVector& theta,
                                const TargetEnergy& target,
                                const std::vector<Point>& batch, GradPath path,
                                int unroll_steps) {
  BatchEval be =
      eval_batch(stack, theta, target, batch, true, path, unroll_steps);
  if (be.n_converged == 0)
    throw TrainingHealthError("loss_param_grad: no converged samples");
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
  for (const auto& s : be.samples)
    if (s.converged) grad += s.grad;
  grad /= static_cast<double>(be.n_converged);
  return grad;
}

void adam_step(AdamState& state, ParamVector& theta, const Eigen::VectorXd& grad,
               const TrainConfig& config) {
  if (grad.size() != theta.size())
    throw ContractError("adam_step: gradient/parameter size mismatch");
  if (!grad.allFinite()) {
    std::string segment = "unknown";
    for (int i = 0; i < grad.size(); ++i)
      if (!std::isfinite(grad[i])) {
        for (const auto& s : theta.layout().segments)
          if (i >= s.offset && i < s.offset + s.size) segment = s.name;
        break;
      }
    throw TrainingHealthError("adam_step: non-finite gradient in segment " + segment,
                              segment);
  }
  if (state.m.size() != grad.size()) {
    state.m = Eigen::VectorXd::Zero(grad.size());
    state.v = Eigen::VectorXd::Zero(grad.size());
    state.step = 0;
  }
  const auto [beta1, beta2] = config.adam_betas;
  state.step += 1;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  Eigen::VectorXd mhat = state.m / bc1;
  Eigen::VectorXd vhat = state.v / bc2;
  theta.values() -=
      config.learning_rate *
      mhat.cwiseQuotient(vhat.cwiseSqrt().array().max(0.0).matrix() +
                         Eigen::VectorXd::Constant(grad.size(), config.adam_eps));
}

TrainResult train(const TrainConfig& config, const FlowStack& stack,
                  ParamVector theta, const TargetEnergy& target,
                  const TrainHooks& hooks) {
  config.validate();
  const ManifoldKernel& m = stack.layers.front().manifold;
  const double log_z = log_z_quadrature(target).log_z;

  TrainResult result;
  AdamState adam;

  auto run_eval = [&](long step, double nonconv) {
    MetricsRecord rec;
    rec.step = step;
    rec.nonconverged_frac = nonconv;
    EssReport er = ess(stack, theta, target, config.eval_samples,
                       derive_seed(config.seed, "eval", step));
    rec.ess = er.ess_pct;
    KlReport kr = kl_report(stack, theta, target, config.eval_samples,
                            derive_seed(config.seed, "evalkl", step), log_z);
    rec.kl = kr.kl;
    rec.mean_logdet = kr.mean_logdet;
    BoundReport br =
        bound_check(*stack.layers.front().potential, theta, m, 0.0, 2048,
                    derive_seed(config.seed, "probe", step));
    rec.max_grad_psi = br.max_grad_norm;
    rec.max_hess_psi = br.max_hess_opnorm;
    result.history.push_back(rec);
    if (hooks.on_metrics) hooks.on_metrics(rec);
    return rec;
  };

  double last_nonconv = 0.0;
  try {
    for (long step = 1; step <= config.steps; ++step) {
      auto batch =
          m.sample_base(config.batch_size, derive_seed(config.seed, "batch", step));
      BatchEval be = eval_batch(stack, theta, target, batch, true,
                                config.grad_path, config.unroll_steps);
      last_nonconv = 1.0 - static_cast<double>(be.n_converged) / batch.size();
      if (last_nonconv > 0.10)
        throw TrainingHealthError(
            "train: more than 10% of inner solves failed at step " +
            std::to_string(step));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(theta.size());
      for (const auto& s : be.samples)
        if (s.converged) grad += s.grad;
      grad /= static_cast<double>(std::max<std::size_t>(1, be.n_converged));
      adam_step(adam, theta, grad, config);

      if (step % config.eval_every == 0 || step == config.steps) {
        MetricsRecord rec = run_eval(step, last_nonconv);
        if (config.early_stop_ess > 0.0 && rec.ess >= config.early_stop_ess) {
          result.early_stopped = true;
          break;
        }
      }
      if (hooks.on_checkpoint && step % std::max(1, config.steps / 4) == 0)
        hooks.on_checkpoint(theta, "periodic");
    }
  } catch (const TrainingHealthError&) {
    if (hooks.on_checkpoint) hooks.on_checkpoint(theta, "abort");
    throw;
  }
  if (config.steps == 0) run_eval(0, 0.0);
  if (hooks.on_checkpoint) hooks.on_checkpoint(theta, "final");
  result.theta = std::move(theta);
  return result;
}

GradCheckReport grad_check(const FlowStack& stack, const ParamVector& theta,
                           const TargetEnergy& target, int n_points,
                           double epsilon, GradPath path, std::uint64_t seed) {
  const ManifoldKernel& m = stack.layers.front().manifold;
  auto batch = m.sample_base(n_points, seed);
  const double log_z = 0.0;  // constant offset, drops out of the gradient

  GradCheckReport rep;
  rep.analytic = loss_param_grad(stack, theta, target, batch, path, 50);
  rep.finite_diff = Eigen::VectorXd::Zero(theta.size());

  auto batch_loss = [&](const ParamVector& th) {
    return kl_loss_batch(stack, th, target, batch, log_z).kl_estimate;
  };
  ParamVector work = theta;
  for (int k = 0; k < theta.size(); ++k) {
    double orig = theta.values()[k];
    work.values()[k] = orig + epsilon;
    double up = batch_loss(work);
    work.values()[k] = orig - epsilon;
    double dn = batch_loss(work);
    work.values()[k] = orig;
    rep.finite_diff[k] = (up - dn) / (2.0 * epsilon);
  }
  double scale = std::max(rep.analytic.cwiseAbs().maxCoeff(), 1e-10);
  rep.max_rel_error = 0.0;
  for (int k = 0; k < theta.size(); ++k) {
    double err = std::abs(rep.finite_diff[k] - rep.analytic[k]) / scale;
    if (err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = k;
    }
  }
  return rep;
}

}  // namespace rpf
