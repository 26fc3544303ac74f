#include "rpf/potential.hpp"

#include <algorithm>
#include <cmath>

namespace rpf {

std::string architecture_name(Architecture a) {
  switch (a) {
    case Architecture::mlp: return "mlp";
    case Architecture::symmetric_mlp: return "symmetric_mlp";
    case Architecture::energy_scaled: return "energy_scaled";
    case Architecture::energy_quadratic: return "energy_quadratic";
  }
  throw ContractError("architecture_name: bad enum");
}

Architecture architecture_from_name(const std::string& name) {
  if (name == "mlp") return Architecture::mlp;
  if (name == "symmetric_mlp") return Architecture::symmetric_mlp;
  if (name == "energy_scaled") return Architecture::energy_scaled;
  if (name == "energy_quadratic") return Architecture::energy_quadratic;
  throw ConfigError("network.architecture", "unknown architecture '" + name + "'");
}

namespace {

AVec<double> to_avec(const Eigen::VectorXd& v) {
  AVec<double> out{};
  for (int i = 0; i < v.size() && i < kMaxAmbient; ++i) out[i] = v[i];
  return out;
}

}  // namespace

Eigen::VectorXd MlpPotential::coord_gradient(const ParamVector& theta,
                                             const AVec<double>& coords) const {
  const int L = n_layers();
  thread_local std::vector<std::vector<double>> acts;
  thread_local std::vector<std::vector<double>> gates;
  acts.resize(L + 1);
  gates.resize(L);
  std::visit([&](const auto& fm) { fm.map(coords, acts[0]); }, features);

  const double* p = theta.values().data();
  std::vector<int> offsets(L);
  int off = 0;
  for (int l = 0; l < L; ++l) {
    offsets[l] = off;
    const int in = sizes[l], out_n = sizes[l + 1];
    acts[l + 1].assign(out_n, 0.0);
    gates[l].assign(out_n, 0.0);
    for (int o = 0; o < out_n; ++o) {
      double acc = p[off + out_n * in + o];
      const double* w = p + off + o * in;
      for (int i = 0; i < in; ++i) acc += w[i] * acts[l][i];
      if (l + 1 < L) {
        gates[l][o] = sigmoid(acc);
        acts[l + 1][o] = softplus(acc);
      } else {
        acts[l + 1][o] = acc;
      }
    }
    off += out_n * in + out_n;
  }

  thread_local std::vector<double> delta, delta_prev;
  delta.assign(1, 1.0 / output_scale);
  for (int l = L - 1; l >= 1; --l) {
    const int in = sizes[l], out_n = sizes[l + 1];
    delta_prev.assign(in, 0.0);
    const double* w = p + offsets[l];
    for (int o = 0; o < out_n; ++o)
      for (int i = 0; i < in; ++i) delta_prev[i] += w[o * in + i] * delta[o];
    for (int i = 0; i < in; ++i) delta_prev[i] *= gates[l - 1][i];
    std::swap(delta, delta_prev);
  }
  // gradient with respect to the features
  const int in0 = sizes[0], out0 = sizes[1];
  Eigen::VectorXd gfeat = Eigen::VectorXd::Zero(in0);
  const double* w0 = p + offsets[0];
  for (int o = 0; o < out0; ++o)
    for (int i = 0; i < in0; ++i) gfeat[i] += w0[o * in0 + i] * delta[o];

  Eigen::MatrixXd jac;
  std::visit([&](const auto& fm) { fm.jacobian(coords, jac); }, features);
  return jac.transpose() * gfeat;
}

DerivativeBundle Potential::eval(const ParamVector& theta, const Point& x,
                                 int order) const {
  if (order < 0 || order > 3)
    throw ContractError("Potential::eval: order must be in 0..3");
  const int dim = manifold_.dim();
  TangentBasis basis = manifold_.tangent_basis(x);

  DerivativeBundle out;
  out.value = chart_value<double>(theta, x, basis.rows, zero_avec<double>(dim));
  if (order >= 1) {
    out.grad_x = Eigen::VectorXd(dim);
    for (int i = 0; i < dim; ++i) {
      AVec<D1> up = zero_avec<D1>(dim);
      up[i] = d1_seed(0.0, 1.0);
      out.grad_x[i] = d_slot(chart_value<D1>(theta, x, basis.rows, up));
    }
  }
  if (order >= 2) {
    out.hess_x = Eigen::MatrixXd(dim, dim);
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        AVec<D2> up = zero_avec<D2>(dim);
        up[i] += d2_seed(0.0, 1.0, 0.0);
        up[j] += d2_seed(0.0, 0.0, 1.0);
        double h = d_slot01(chart_value<D2>(theta, x, basis.rows, up));
        out.hess_x(i, j) = h;
        out.hess_x(j, i) = h;
      }
  }
  if (order >= 3) {
    out.third_x.assign(dim, Eigen::MatrixXd::Zero(dim, dim));
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j)
        for (int k = j; k < dim; ++k) {
          AVec<D3> up = zero_avec<D3>(dim);
          up[i] += d3_seed(0.0, 1.0, 0.0, 0.0);
          up[j] += d3_seed(0.0, 0.0, 1.0, 0.0);
          up[k] += d3_seed(0.0, 0.0, 0.0, 1.0);
          double t = d_slot012(chart_value<D3>(theta, x, basis.rows, up));
          int idx[3] = {i, j, k};
          std::sort(idx, idx + 3);
          do {
            out.third_x[idx[2]](idx[0], idx[1]) = t;
            out.third_x[idx[2]](idx[1], idx[0]) = t;
          } while (std::next_permutation(idx, idx + 3));
        }
  }
  return out;
}

Eigen::VectorXd Potential::chart_gradient(const ParamVector& theta,
                                          const Point& x,
                                          const TangentBasis& basis) const {
  const int dim = manifold_.dim();
  if (const auto* mlp = std::get_if<MlpPotential>(&impl_)) {
    Eigen::VectorXd gc = mlp->coord_gradient(theta, to_avec(x.coords));
    return basis.rows * gc;
  }
  Eigen::VectorXd g(dim);
  for (int i = 0; i < dim; ++i) {
    AVec<D1> up = zero_avec<D1>(dim);
    up[i] = d1_seed(0.0, 1.0);
    g[i] = d_slot(chart_value<D1>(theta, x, basis.rows, up));
  }
  return g;
}

template <class S, class Extract>
void Potential::backprop_chart(const ParamVector& theta, const Point& center,
                               const Eigen::MatrixXd& basis,
                               const AVec<S>& upsilon, Extract&& extract,
                               double weight, Eigen::VectorXd& out) const {
  if (const auto* mlp = std::get_if<MlpPotential>(&impl_)) {
    manifold_.visit([&](const auto& m) {
      mlp->param_backprop(theta, m.chart_point(center, basis, upsilon),
                          extract, weight, out);
    });
    return;
  }
  if (const auto* en = std::get_if<EnergyPotential>(&impl_)) {
    manifold_.visit([&](const auto& m) {
      AVec<S> coords = m.chart_point(center, basis, upsilon);
      for (int k = 0; k < en->n_params(); ++k)
        out[k] += weight * extract(en->basis_value<S>(k, coords));
    });
    return;
  }
  // QuadraticPotential has no parameters
}

Eigen::VectorXd Potential::param_grad_value(const ParamVector& theta,
                                            const Point& y) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  param_grad_bundle(theta, y, 1.0, Eigen::VectorXd(), Eigen::MatrixXd(), 1.0,
                    out);
  return out;
}

Eigen::VectorXd Potential::param_grad_dir_grad(const ParamVector& theta,
                                               const Point& y,
                                               const Eigen::VectorXd& w) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  param_grad_bundle(theta, y, 0.0, w, Eigen::MatrixXd(), 1.0, out);
  return out;
}

Eigen::VectorXd Potential::param_grad_hess_quad(const ParamVector& theta,
                                                const Point& y,
                                                const Eigen::VectorXd& w,
                                                const Eigen::VectorXd& wp) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(theta.size());
  param_grad_bundle(theta, y, 0.0, Eigen::VectorXd(), w * wp.transpose(), 1.0,
                    out);
  return out;
}

void Potential::param_grad_bundle(const ParamVector& theta, const Point& y,
                                  double c0, const Eigen::VectorXd& w,
                                  const Eigen::MatrixXd& C, double weight,
                                  Eigen::VectorXd& out) const {
  const int dim = manifold_.dim();
  TangentBasis basis = manifold_.tangent_basis(y);

  const bool has_w = w.size() > 0 && w.squaredNorm() > 0.0;
  if (has_w) {
    AVec<D1> up = zero_avec<D1>(dim);
    for (int i = 0; i < dim; ++i) up[i] = d1_seed(0.0, w[i]);
    backprop_chart(
        theta, y, basis.rows, up,
        [c0](const D1& s) { return c0 * s.a + s.b; }, weight, out);
  } else if (c0 != 0.0) {
    backprop_chart(
        theta, y, basis.rows, zero_avec<double>(dim),
        [c0](double s) { return c0 * s; }, weight, out);
  }

  if (C.size() > 0) {
    for (int i = 0; i < dim; ++i)
      for (int j = i; j < dim; ++j) {
        double cw = (i == j) ? C(i, i) : C(i, j) + C(j, i);
        if (cw == 0.0) continue;
        AVec<D2> up = zero_avec<D2>(dim);
        up[i] += d2_seed(0.0, 1.0, 0.0);
        up[j] += d2_seed(0.0, 0.0, 1.0);
        backprop_chart(
            theta, y, basis.rows, up,
            [](const D2& s) { return d_slot01(s); }, weight * cw, out);
      }
  }
}

int Potential::param_count() const {
  if (const auto* mlp = std::get_if<MlpPotential>(&impl_)) {
    int n = 0;
    for (int l = 1; l < static_cast<int>(mlp->sizes.size()); ++l)
      n += mlp->sizes[l] * mlp->sizes[l - 1] + mlp->sizes[l];
    return n;
  }
  if (const auto* en = std::get_if<EnergyPotential>(&impl_)) return en->n_params();
  return 0;
}

namespace {

std::shared_ptr<const ParamLayout> energy_layout(const EnergyPotential& en) {
  auto layout = std::make_shared<ParamLayout>();
  layout->segments.push_back({"alpha", 0, 1});
  int total = 1;
  if (en.quadratic) {
    int nm = en.grad_dim * (en.grad_dim + 1) / 2;
    layout->segments.push_back({"M", 1, nm});
    total += nm;
  }
  layout->total = total;
  return layout;
}

std::shared_ptr<const ParamLayout> mlp_layout(const std::vector<int>& sizes) {
  auto layout = std::make_shared<ParamLayout>();
  int off = 0;
  for (int l = 1; l < static_cast<int>(sizes.size()); ++l) {
    int nw = sizes[l] * sizes[l - 1];
    layout->segments.push_back(
        {"layer" + std::to_string(l - 1) + ".weight", off, nw});
    off += nw;
    layout->segments.push_back(
        {"layer" + std::to_string(l - 1) + ".bias", off, sizes[l]});
    off += sizes[l];
  }
  layout->total = off;
  return layout;
}

double resolve_output_scale(const NetworkSpec& spec,
                            const ManifoldKernel& manifold) {
  if (spec.output_scale > 0.0) return spec.output_scale;
  return manifold.is_sphere() ? 20.0 : 1.0;
}

}  // namespace

std::shared_ptr<const ParamLayout> Potential::make_layout() const {
  if (const auto* mlp = std::get_if<MlpPotential>(&impl_))
    return mlp_layout(mlp->sizes);
  if (const auto* en = std::get_if<EnergyPotential>(&impl_))
    return energy_layout(*en);
  auto layout = std::make_shared<ParamLayout>();
  layout->total = 0;
  return layout;
}

std::pair<ParamVector, Potential> build_potential(
    const NetworkSpec& spec, const ManifoldKernel& manifold,
    std::shared_ptr<const TargetEnergy> target, std::uint64_t seed) {
  const Architecture arch = spec.architecture;

  if (arch == Architecture::mlp || arch == Architecture::symmetric_mlp) {
    if (spec.layer_sizes.empty() || spec.layer_sizes.back() != 1)
      throw ConfigError("network.layer_sizes",
                        "must be non-empty and end with a single output unit");
    FeatureMap fm;
    if (arch == Architecture::symmetric_mlp) {
      if (!manifold.is_torus() || manifold.dim() != 2)
        throw ConfigError("network.architecture",
                          "symmetric_mlp requires a 2D torus");
      const auto& torus = std::get<Torus>(manifold.impl());
      const auto& L = torus.circumferences();
      if (std::abs(L[0] - L[1]) > 1e-12)
        throw ConfigError("manifold.circumferences",
                          "symmetric_mlp requires equal circumferences");
      fm = TorusDiffTrigFeatures{2.0 * M_PI / L[0]};
    } else if (manifold.is_torus()) {
      const auto& torus = std::get<Torus>(manifold.impl());
      Eigen::VectorXd omegas(torus.dim());
      for (int i = 0; i < torus.dim(); ++i)
        omegas[i] = 2.0 * M_PI / torus.circumferences()[i];
      fm = TorusTrigFeatures{omegas};
    } else {
      fm = AmbientFeatures{manifold.ambient_dim()};
    }
    int n_feat = std::visit([](const auto& f) { return f.count(); }, fm);
    std::vector<int> sizes;
    sizes.push_back(n_feat);
    sizes.insert(sizes.end(), spec.layer_sizes.begin(), spec.layer_sizes.end());

    MlpPotential mlp{fm, sizes, resolve_output_scale(spec, manifold)};
    auto layout = mlp_layout(sizes);
    Eigen::VectorXd values = Eigen::VectorXd::Zero(layout->total);
    auto eng = make_engine(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    int off = 0;
    for (int l = 1; l < static_cast<int>(sizes.size()); ++l) {
      double scale = 1.0 / std::sqrt(static_cast<double>(sizes[l - 1]));
      for (int k = 0; k < sizes[l] * sizes[l - 1]; ++k)
        values[off + k] = scale * unit(eng);
      off += sizes[l] * sizes[l - 1] + sizes[l];  // biases stay zero
    }
    return {ParamVector(std::move(values), layout),
            Potential(std::move(mlp), manifold, spec)};
  }

  if (arch == Architecture::energy_scaled || arch == Architecture::energy_quadratic) {
    if (!target)
      throw ConfigError("network.target", "energy potentials need a target");
    if (!(target->manifold() == manifold))
      throw ConfigError("network.target",
                        "target manifold does not match the model manifold");
    EnergyPotential en;
    en.target = std::move(target);
    en.quadratic = (arch == Architecture::energy_quadratic);
    en.grad_dim = manifold.is_sphere() ? manifold.ambient_dim() : manifold.dim();

    auto layout = energy_layout(en);
    Eigen::VectorXd values = Eigen::VectorXd::Zero(layout->total);
    values[0] = 1.0;  // α starts at 1, M at 0
    return {ParamVector(std::move(values), layout),
            Potential(std::move(en), manifold, spec)};
  }

  throw ConfigError("network.architecture", "unsupported architecture");
}

std::pair<ParamVector, Potential> make_quadratic_potential(
    const Eigen::VectorXd& mu, const Eigen::MatrixXd& M) {
  auto layout = std::make_shared<ParamLayout>();
  layout->total = 0;
  NetworkSpec spec;
  spec.architecture = Architecture::mlp;  // nominal; impl is QuadraticPotential
  spec.layer_sizes = {};
  spec.output_scale = 1.0;
  return {ParamVector(Eigen::VectorXd(), layout),
          Potential(QuadraticPotential{mu, M},
                    ManifoldKernel::euclidean(static_cast<int>(mu.size())),
                    spec)};
}

}  // namespace rpf
