#include "umrl/policy/mlp_policy.hpp"

#include <cmath>

#include "umrl/numerics/distributions.hpp"
#include "umrl/numerics/error.hpp"

namespace umrl::policy {

namespace {

Index output_dim_for(const envs::ActionSpace& a) {
  if (const auto* d = std::get_if<envs::DiscreteActions>(&a)) return d->count;
  return std::get<envs::ContinuousActions>(a).dim;
}

auto net_params(const PolicySpec& spec, const ParamVector& theta) { return theta.values().head(spec.net.parameter_count()); }

Vector log_std_of(const PolicySpec& spec, const ParamVector& theta) {
  return theta.values().tail(spec.net.output_dim);
}

}  // namespace

PolicySpec PolicySpec::for_cmp(const envs::CmpSpec& cmp, std::vector<Index> hidden, Activation activation,
                               Index extra_inputs) {
  PolicySpec p;
  p.actions = cmp.actions;
  p.net.input_dim = cmp.state_dim + extra_inputs;
  p.net.hidden_dims = std::move(hidden);
  p.net.output_dim = output_dim_for(cmp.actions);
  p.net.activation = activation;
  p.net.validate();
  return p;
}

LayoutPtr PolicySpec::layout() const {
  auto segs = net.segments("net.");
  if (continuous()) segs.push_back({"log_std", {net.output_dim}});
  return make_layout(std::move(segs));
}

ParamVector PolicySpec::init(Rng& rng) const {
  const ParamVector w = mlp_init(net, rng);
  ParamVector theta(layout());
  theta.values().head(net.parameter_count()) = w.values();
  if (continuous()) theta.segment("log_std").setConstant(init_log_std);
  return theta;
}

void PolicySpec::check(const ParamVector& theta) const {
  if (theta.size() != parameter_count())
    throw DimensionError("policy parameters: length " + std::to_string(theta.size()) + ", expected " +
                         std::to_string(parameter_count()));
}

envs::PolicySample act(const PolicySpec& spec, const ParamVector& theta, const Vector& input, Rng& rng) {
  spec.check(theta);
  const Vector out = mlp_forward_batch<double>(spec.net, net_params(spec, theta), input).col(0);
  envs::PolicySample s;
  if (spec.continuous()) {
    const DiagGaussian<double> d(out, log_std_of(spec, theta));
    s.action = d.sample(rng);
    s.log_prob = d.log_prob(s.action);
    s.entropy = d.entropy();
  } else {
    const Categorical<double> d(out);
    const Index a = d.sample(rng);
    s.action = Vector::Constant(1, static_cast<double>(a));
    s.log_prob = d.log_prob(a);
    s.entropy = d.entropy();
  }
  return s;
}

envs::PolicyFn bind(const PolicySpec& spec, ParamVector theta, std::optional<Vector> latent) {
  spec.check(theta);
  if (latent && spec.input_dim() <= latent->size())
    throw DimensionError("policy input too small for latent of length " + std::to_string(latent->size()));
  return [spec, theta = std::move(theta), latent = std::move(latent)](const Vector& s, Rng& rng) {
    if (!latent) return act(spec, theta, s, rng);
    Vector x(s.size() + latent->size());
    x << s, *latent;
    return act(spec, theta, x, rng);
  };
}

Vector log_probs(const PolicySpec& spec, const ParamVector& theta, const Matrix& inputs, const Matrix& actions) {
  spec.check(theta);
  const Matrix out = mlp_forward_batch<double>(spec.net, net_params(spec, theta), inputs);
  Vector lp(inputs.cols());
  if (spec.continuous()) {
    const Vector ls = log_std_of(spec, theta);
    for (Index n = 0; n < inputs.cols(); ++n) lp[n] = DiagGaussian<double>(out.col(n), ls).log_prob(actions.col(n));
  } else {
    for (Index n = 0; n < inputs.cols(); ++n)
      lp[n] = Categorical<double>(out.col(n)).log_prob(static_cast<Index>(actions(0, n)));
  }
  return lp;
}

Vector entropies(const PolicySpec& spec, const ParamVector& theta, const Matrix& inputs) {
  spec.check(theta);
  const Matrix out = mlp_forward_batch<double>(spec.net, net_params(spec, theta), inputs);
  Vector h(inputs.cols());
  if (spec.continuous()) {
    h.setConstant(DiagGaussian<double>(out.col(0), log_std_of(spec, theta)).entropy());
  } else {
    for (Index n = 0; n < inputs.cols(); ++n) h[n] = Categorical<double>(out.col(n)).entropy();
  }
  return h;
}

ParamVector weighted_score(const PolicySpec& spec, const ParamVector& theta, const Matrix& inputs,
                           const Matrix& actions, const Vector& weights, double entropy_weight) {
  spec.check(theta);
  const Index n = inputs.cols();
  if (actions.cols() != n || weights.size() != n)
    throw DimensionError("weighted_score: batch sizes differ (inputs " + std::to_string(n) + ", actions " +
                         std::to_string(actions.cols()) + ", weights " + std::to_string(weights.size()) + ")");
  const auto params = net_params(spec, theta);
  const auto tape = mlp_forward_tape<double>(spec.net, params, inputs);
  const Matrix& out = tape.output();
  Matrix out_grad(out.rows(), n);
  ParamVector g(theta.layout_ptr());

  if (spec.continuous()) {
    const Vector ls = log_std_of(spec, theta);
    const Eigen::ArrayXd inv_var = (-2.0 * ls.array()).exp();
    const Eigen::ArrayXd inv_std = (-ls.array()).exp();
    Eigen::ArrayXd ls_grad = Eigen::ArrayXd::Zero(ls.size());
    for (Index k = 0; k < n; ++k) {
      const Eigen::ArrayXd diff = (actions.col(k) - out.col(k)).array();
      out_grad.col(k) = (weights[k] * diff * inv_var).matrix();
      ls_grad += weights[k] * ((diff * inv_std).square() - 1.0);
    }
    // Gaussian entropy depends on log_std only, with unit slope.
    ls_grad += entropy_weight * static_cast<double>(n);
    g.segment("log_std") = ls_grad.matrix();
  } else {
    for (Index k = 0; k < n; ++k) {
      const Categorical<double> d(out.col(k));
      Vector col = weights[k] * d.log_prob_grad(static_cast<Index>(actions(0, k)));
      if (entropy_weight != 0.0) col += entropy_weight * d.entropy_grad();
      out_grad.col(k) = col;
    }
  }
  const auto back = mlp_backward_tape<double>(spec.net, params, tape, out_grad);
  g.values().head(spec.net.parameter_count()) = back.params;
  return g;
}

}  // namespace umrl::policy
