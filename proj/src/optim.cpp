#include "ltcm/optim.hpp"

#include <cmath>

#include "ltcm/error.hpp"

namespace ltcm {

void Adam::ensure_moments(const ParameterStore& params) {
  if (moments_.size() == params.size()) return;
  moments_.clear();
  for (const auto& name : params.names()) {
    const auto n = params.get(name).size();
    moments_.push_back({std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)});
  }
}

double Adam::schedule(std::uint64_t t) const {
  if (config_.decay_every == 0) return 1.0;
  return std::pow(config_.decay_factor, static_cast<double>(t / config_.decay_every));
}

void Adam::step(ParameterStore& params) {
  ensure_moments(params);
  for (const auto& name : params.names()) {
    for (double g : params.get(name).grad()) {
      if (!std::isfinite(g)) throw TrainingError(name, "non-finite gradient");
    }
  }
  const double lr = effective_rate();
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params.get(params.names()[k]);
    auto& mo = moments_[k];
    auto val = p.value();
    auto grad = p.grad();
    for (std::size_t i = 0; i < val.size(); ++i) {
      const double g = grad[i];
      mo.m[i] = b1 * mo.m[i] + (1.0 - b1) * g;
      mo.v[i] = b2 * mo.v[i] + (1.0 - b2) * g * g;
      const double mhat = mo.m[i] / c1;
      const double vhat = mo.v[i] / c2;
      val[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
  }
}

double clip_grad_norm(ParameterStore& params, double max_norm) {
  double sq = 0.0;
  for (const auto& name : params.names()) {
    for (double g : params.get(name).grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& name : params.names()) {
      for (double& g : params.get(name).grad()) g *= s;
    }
  }
  return norm;
}

}  // namespace ltcm
