#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices of
// doubles. Every tensor is two-dimensional; vectors are 1 x n rows.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ltcm::ad {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  // Keeps inputs alive for as long as this node can be replayed.
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor filled(std::size_t rows, std::size_t cols, double v, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor row(std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }
  std::string shape_string() const;

  std::span<double> value() { return node_->value; }
  std::span<const double> value() const { return node_->value; }
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }

  double& at(std::size_t r, std::size_t c) { return node_->value[r * node_->cols + c]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Ordered record of executed primitives. Ops append to the tape that is
// active on the calling thread; with no active tape nothing is recorded and
// results carry no gradient.
class Tape {
 public:
  void record(std::shared_ptr<Node> node) { nodes_.push_back(std::move(node)); }

  // Resets non-leaf gradients, seeds d(loss)/d(loss) = 1 and replays in
  // reverse. Leaf gradients accumulate across calls.
  void backward(const Tensor& loss);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node>> nodes_;
};

Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording, e.g. for finite-difference probes inside a scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

namespace detail {

// Allocates an output node; it requires grad iff a tape is active and any
// input does.
Tensor make_output(std::size_t rows, std::size_t cols, std::initializer_list<Tensor> inputs);
Tensor make_output(std::size_t rows, std::size_t cols, const std::vector<Tensor>& inputs);
void attach(Tensor& out, std::function<void(Node&)> fn);

}  // namespace detail

}  // namespace ltcm::ad
