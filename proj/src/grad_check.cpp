#include "ltcm/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace ltcm {

GradCheckResult grad_check(const std::function<ad::Tensor()>& f,
                           const std::vector<std::pair<std::string, ad::Tensor>>& params,
                           const GradCheckOptions& options) {
  std::vector<ad::Tensor> tensors;
  for (auto [name, t] : params) {
    t.zero_grad();
    tensors.push_back(t);
  }
  {
    ad::Tape tape;
    ad::TapeScope scope(tape);
    const ad::Tensor loss = f();
    tape.backward(loss);
  }
  GradCheckResult result;
  ad::NoGradScope no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto t = tensors[k];
    auto values = t.value();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_per_tensor > 0 && n > options.max_per_tensor) {
      stride = (n + options.max_per_tensor - 1) / options.max_per_tensor;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = values[i];
      values[i] = orig + options.step;
      const double fp = f().item();
      values[i] = orig - options.step;
      const double fm = f().item();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double analytic = t.grad()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), options.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = rel;
        result.worst_parameter = params[k].first;
        result.worst_index = i;
        result.analytic = analytic;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<ad::Tensor()>& f, ParameterStore& params,
                           const GradCheckOptions& options) {
  std::vector<std::pair<std::string, ad::Tensor>> list;
  for (const auto& name : params.names()) list.emplace_back(name, params.get(name));
  return grad_check(f, list, options);
}

}  // namespace ltcm
