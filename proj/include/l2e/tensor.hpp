#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "l2e/errors.hpp"

namespace l2e {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

// Dense row-major f64 array. Copies share the buffer; writes through
// mutable_data() detach first, so values saved by a tape never change.
class Tensor {
 public:
  Tensor();  // scalar 0
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor from(std::initializer_list<double> values);  // rank-1
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t extent(int axis) const;  // negative axes count from the back

  std::span<const double> data() const { return {data_->data(), data_->size()}; }
  std::span<double> mutable_data();
  const std::vector<double>& values() const { return *data_; }

  double item() const;
  double operator[](std::size_t flat) const { return (*data_)[flat]; }
  double at(std::initializer_list<std::size_t> index) const;

  // Tape bookkeeping.
  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Same values, no tape history.
  Tensor detached() const;
  Tensor reshaped(Shape shape) const;  // untracked reshape of the values

  bool all_finite() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

// Gradient slot of each operand: empty when the operand is not tracked.
using GradSlots = std::span<const std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSlots grad_in)>;

class Gradients;

// Append-only record of differentiable operations (define-by-run).
// A tape is confined to the thread that created it.
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers `t` as a leaf and returns a tracked copy sharing its values.
  Tensor watch(const Tensor& t, std::string name = {});

  // Records an operation producing `value` from `operands`. Untracked
  // operands are constants. Returns `value` unchanged when no operand is
  // tracked on this tape.
  Tensor record(std::string_view op, std::span<const Tensor* const> operands, Tensor value,
                BackwardFn backward);

  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  std::string_view op_name(int node) const { return nodes_[static_cast<std::size_t>(node)].op; }

 private:
  struct Node {
    std::string_view op;
    std::string name;
    std::vector<int> inputs;  // -1 for constant operands
    std::size_t size = 0;
    BackwardFn backward;
  };
  void check_thread() const;

  std::vector<Node> nodes_;
  std::thread::id owner_;
};

class Gradients {
 public:
  Gradients() = default;
  // Gradient for a tracked tensor; zeros if it did not reach the loss.
  Tensor of(const Tensor& t) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<std::vector<double>> grads_;
};

// Helper for op implementations: records on the tape of the first tracked
// operand (all tracked operands must share one tape).
Tensor record_op(std::string_view op, std::initializer_list<const Tensor*> operands, Tensor value,
                 BackwardFn backward);

}  // namespace l2e
