#include "l2e/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace l2e {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{}, data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(numel(shape_), fill)) {
  for (auto e : shape_)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
  for (auto e : shape_)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape_));
  if (numel(shape_) != data_->size())
    throw DimensionError("shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                         " values, buffer has " + std::to_string(data_->size()));
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::from(std::initializer_list<double> values) {
  return Tensor(Shape{values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data));
}

std::size_t Tensor::extent(int axis) const {
  const int r = static_cast<int>(shape_.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  return shape_[static_cast<std::size_t>(a)];
}

std::span<double> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  return {data_->data(), data_->size()};
}

double Tensor::item() const {
  if (data_->size() != 1)
    throw ContractError("item() needs a single-element tensor, got shape " + to_string(shape_));
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw DimensionError("index rank mismatch for " + to_string(shape_));
  std::size_t flat = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v >= shape_[i]) throw DimensionError("index out of range for " + to_string(shape_));
    flat = flat * shape_[i] + v;
    ++i;
  }
  return (*data_)[flat];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (numel(shape) != size())
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  Tensor t = detached();
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  return std::all_of(data_->begin(), data_->end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------

Tape::Tape() : owner_(std::this_thread::get_id()) {}

void Tape::check_thread() const {
  if (std::this_thread::get_id() != owner_) throw ContractError("tape used from a foreign thread");
}

Tensor Tape::watch(const Tensor& t, std::string name) {
  check_thread();
  Tensor out = t.detached();
  Node n;
  n.op = "leaf";
  n.name = std::move(name);
  n.size = t.size();
  nodes_.push_back(std::move(n));
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size() - 1);
  return out;
}

Tensor Tape::record(std::string_view op, std::span<const Tensor* const> operands, Tensor value,
                    BackwardFn backward) {
  check_thread();
  Node n;
  n.op = op;
  n.size = value.size();
  bool any = false;
  for (const Tensor* t : operands) {
    if (t->tape_ == this) {
      n.inputs.push_back(t->node_);
      any = true;
    } else {
      if (t->tape_ != nullptr) throw ContractError(std::string(op) + ": operands live on different tapes");
      n.inputs.push_back(-1);
    }
  }
  value.tape_ = nullptr;
  value.node_ = -1;
  if (!any) return value;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  value.tape_ = this;
  value.node_ = static_cast<int>(nodes_.size() - 1);
  return value;
}

Gradients Tape::backward(const Tensor& loss) {
  check_thread();
  if (loss.size() != 1)
    throw ContractError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  Gradients g;
  g.tape_ = this;
  g.grads_.resize(nodes_.size());
  if (loss.tape_ != this) return g;

  const auto root = static_cast<std::size_t>(loss.node_);
  g.grads_[root].assign(1, 1.0);
  std::vector<std::span<double>> slots;
  for (std::size_t id = root + 1; id-- > 0;) {
    Node& n = nodes_[id];
    auto& gout = g.grads_[id];
    if (gout.empty()) continue;
    for (double v : gout) {
      if (!std::isfinite(v)) {
        std::ostringstream os;
        os << "non-finite gradient at node " << id << " (" << n.op << ")";
        throw NumericError(os.str());
      }
    }
    if (!n.backward) continue;
    slots.clear();
    for (int in : n.inputs) {
      if (in < 0) {
        slots.emplace_back();
        continue;
      }
      auto& gin = g.grads_[static_cast<std::size_t>(in)];
      if (gin.empty()) gin.assign(nodes_[static_cast<std::size_t>(in)].size, 0.0);
      slots.emplace_back(gin.data(), gin.size());
    }
    n.backward(std::span<const double>(gout.data(), gout.size()), GradSlots(slots.data(), slots.size()));
  }
  return g;
}

Tensor Gradients::of(const Tensor& t) const {
  if (t.tape() != tape_ || t.node() < 0) return Tensor(t.shape(), 0.0);
  const auto& g = grads_[static_cast<std::size_t>(t.node())];
  if (g.empty()) return Tensor(t.shape(), 0.0);
  return Tensor(t.shape(), g);
}

Tensor record_op(std::string_view op, std::initializer_list<const Tensor*> operands, Tensor value,
                 BackwardFn backward) {
  Tape* tape = nullptr;
  for (const Tensor* t : operands) {
    if (t->tracked()) {
      tape = t->tape();
      break;
    }
  }
  if (!tape) return value;
  return tape->record(op, std::span<const Tensor* const>(operands.begin(), operands.size()), std::move(value),
                      std::move(backward));
}

}  // namespace l2e
