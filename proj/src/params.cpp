#include "ltcm/params.hpp"

#include <algorithm>

#include "ltcm/error.hpp"

namespace ltcm {

ad::Tensor& ParameterStore::add(const std::string& name, std::size_t rows, std::size_t cols) {
  return add_filled(name, rows, cols, 0.0);
}

ad::Tensor& ParameterStore::add_filled(const std::string& name, std::size_t rows,
                                       std::size_t cols, double v) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  tensors_.push_back(ad::Tensor::filled(rows, cols, v, true));
  return tensors_.back();
}

ad::Tensor& ParameterStore::add_uniform(const std::string& name, std::size_t rows,
                                        std::size_t cols, double scale, Rng& rng) {
  auto& t = add(name, rows, cols);
  for (double& v : t.value()) v = uniform(rng, -scale, scale);
  return t;
}

ad::Tensor& ParameterStore::get(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

const ad::Tensor& ParameterStore::get(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return tensors_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

ParameterStore ParameterStore::clone() const {
  ParameterStore out;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto& t = tensors_[i];
    auto& c = out.add(names_[i], t.rows(), t.cols());
    std::copy(t.value().begin(), t.value().end(), c.value().begin());
  }
  return out;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    const auto& src = other.get(names_[i]);
    auto& dst = tensors_[i];
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw DimensionError("parameter '" + names_[i] + "' shape " + dst.shape_string() +
                           " vs " + src.shape_string());
    }
    std::copy(src.value().begin(), src.value().end(), dst.value().begin());
  }
}

std::string ParameterStore::group_of(const std::string& name) {
  return name.substr(0, name.find('/'));
}

}  // namespace ltcm
