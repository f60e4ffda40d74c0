#include "ltcm/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "ltcm/error.hpp"
#include "ltcm/random.hpp"

namespace ltcm {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void deserialize_rng(Rng& rng, const std::string& text) {
  std::istringstream is(text);
  is >> rng;
  if (!is) throw DataError("malformed RNG state");
}

}  // namespace ltcm

namespace ltcm::ad {

namespace {
thread_local Tape* current_tape = nullptr;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return filled(rows, cols, 0.0, requires_grad);
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double v, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, v);
  n->grad.assign(rows * cols, 0.0);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
  if (values.size() != rows * cols) {
    throw DimensionError("tensor of shape [" + std::to_string(rows) + " x " +
                         std::to_string(cols) + "] given " + std::to_string(values.size()) +
                         " values");
  }
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(values);
  n->grad.assign(rows * cols, 0.0);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const auto n = values.size();
  return from(1, n, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return filled(1, 1, v, requires_grad); }

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows()) + " x " + std::to_string(cols()) + "]";
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string());
  return node_->value[0];
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw DimensionError("backward() needs a scalar, got " + loss.shape_string());
  if (!loss.requires_grad()) return;
  const auto it = std::find(nodes_.rbegin(), nodes_.rend(), loss.ptr());
  if (it == nodes_.rend()) throw Error("loss tensor was not recorded on this tape");
  for (auto& n : nodes_) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (auto cur = it; cur != nodes_.rend(); ++cur) {
    Node& n = **cur;
    if (n.backward) n.backward(n);
  }
}

Tape* active_tape() { return current_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

namespace detail {

Tensor make_output(std::size_t rows, std::size_t cols, const std::vector<Tensor>& inputs) {
  auto n = std::make_shared<Node>();
  n->rows = rows;
  n->cols = cols;
  n->value.assign(rows * cols, 0.0);
  n->grad.assign(rows * cols, 0.0);
  if (current_tape != nullptr) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->leaf = false;
    n->inputs.reserve(inputs.size());
    for (const auto& in : inputs) n->inputs.push_back(in.ptr());
  }
  return Tensor(std::move(n));
}

Tensor make_output(std::size_t rows, std::size_t cols, std::initializer_list<Tensor> inputs) {
  return make_output(rows, cols, std::vector<Tensor>(inputs));
}

void attach(Tensor& out, std::function<void(Node&)> fn) {
  if (!out.requires_grad()) return;
  out.node()->backward = std::move(fn);
  current_tape->record(out.ptr());
}

}  // namespace detail

}  // namespace ltcm::ad
