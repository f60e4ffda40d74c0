#include "ltcm/latent.hpp"

#include <algorithm>

#include "ltcm/error.hpp"
#include "ltcm/ops.hpp"

namespace ltcm {

namespace {
// log-variance heads start near zero
constexpr double kLogVarOutScale = 1e-3;
}  // namespace

DiagonalGaussian DiagonalGaussian::standard(std::size_t batch, std::size_t dim) {
  return {ad::Tensor::zeros(batch, dim), ad::Tensor::zeros(batch, dim)};
}

ad::Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  auto t = ad::Tensor::zeros(rows, cols);
  for (double& v : t.value()) v = ltcm::standard_normal(rng);
  return t;
}

ad::Tensor reparam_sample(const DiagonalGaussian& g, const ad::Tensor& eps) {
  return ad::add(g.mean, ad::mul(ad::exp(ad::scale(g.log_var, 0.5)), eps));
}

ad::Tensor kl_diag_rows(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  if (q.mean.rows() != p.mean.rows() || q.mean.cols() != p.mean.cols()) {
    throw DimensionError("kl_diag: q " + q.mean.shape_string() + " vs p " + p.mean.shape_string());
  }
  // 1/2 sum( var_q/var_p + (mu_p - mu_q)^2 / var_p - 1 + log var_p - log var_q )
  const ad::Tensor ratio = ad::exp(ad::sub(q.log_var, p.log_var));
  const ad::Tensor inv_var_p = ad::exp(ad::scale(p.log_var, -1.0));
  const ad::Tensor mahal = ad::mul(ad::square(ad::sub(p.mean, q.mean)), inv_var_p);
  const ad::Tensor terms = ad::add_scalar(
      ad::add(ad::add(ratio, mahal), ad::sub(p.log_var, q.log_var)), -1.0);
  return ad::scale(ad::sum_rows(terms), 0.5);
}

ad::Tensor kl_diag(const DiagonalGaussian& q, const DiagonalGaussian& p) {
  return ad::sum(kl_diag_rows(q, p));
}

AnnealSchedule::AnnealSchedule(std::uint64_t steps_per_epoch) : steps_(steps_per_epoch) {
  if (steps_ == 0) throw ConfigError("anneal schedule needs steps_per_epoch > 0");
}

double AnnealSchedule::weight(std::uint64_t step) const {
  return std::min(1.0, static_cast<double>(step) / static_cast<double>(steps_));
}

double anneal_weight(std::uint64_t step, std::uint64_t steps_per_epoch) {
  return AnnealSchedule(steps_per_epoch).weight(step);
}

PriorNet::PriorNet(ParameterStore& store, std::size_t input, std::size_t hidden, std::size_t latent,
                   Rng& init)
    : mean_(nn::make_mlp(store, "prior_net/mean", input, hidden, latent, nn::kInitScale, init)),
      log_var_(nn::make_mlp(store, "prior_net/log_var", input, hidden, latent, kLogVarOutScale, init)) {}

DiagonalGaussian PriorNet::operator()(const ad::Tensor& summary) const {
  return {nn::apply(mean_, summary), nn::apply(log_var_, summary)};
}

InferenceNet::InferenceNet(ParameterStore& store, std::size_t input, std::size_t hidden,
                           std::size_t latent, Rng& init)
    : mean_(nn::make_mlp(store, "infer_net/mean", input, hidden, latent, nn::kInitScale, init)),
      log_var_(nn::make_mlp(store, "infer_net/log_var", input, hidden, latent, kLogVarOutScale, init)) {}

DiagonalGaussian InferenceNet::operator()(const ad::Tensor& bow) const {
  return {nn::apply(mean_, bow), nn::apply(log_var_, bow)};
}

}  // namespace ltcm
