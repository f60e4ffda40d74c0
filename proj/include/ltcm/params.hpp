#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "ltcm/random.hpp"
#include "ltcm/tensor.hpp"

namespace ltcm {

/// Named learnable tensors in insertion order. The group of a parameter is
/// the name prefix before the first '/', e.g. "prior_net" for
/// "prior_net/mu/w1".
class ParameterStore {
 public:
  ad::Tensor& add(const std::string& name, std::size_t rows, std::size_t cols);
  /// Uniform in [-scale, scale].
  ad::Tensor& add_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                          double scale, Rng& rng);
  ad::Tensor& add_filled(const std::string& name, std::size_t rows, std::size_t cols, double v);

  bool contains(const std::string& name) const { return index_.contains(name); }
  ad::Tensor& get(const std::string& name);
  const ad::Tensor& get(const std::string& name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Deep copy of values only.
  ParameterStore clone() const;
  void copy_values_from(const ParameterStore& other);

  static std::string group_of(const std::string& name);

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace ltcm
