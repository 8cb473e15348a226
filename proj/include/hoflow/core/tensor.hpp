#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoflow {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major f32 tensor. Copies are shallow handles sharing the same
// storage; deep copies go through clone(). A tensor is "tracked" once it owns
// a gradient buffer, which happens for parameters and for any op output
// recorded on an active tape.
class Tensor {
  struct Storage {
    std::shared_ptr<std::vector<float>> data;
    std::shared_ptr<std::vector<float>> grad;  // null until tracked
  };

 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    st_ = std::make_shared<Storage>();
    st_->data = std::make_shared<std::vector<float>>(numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)) {
    if (static_cast<int64_t>(values.size()) != numel(shape_))
      throw std::invalid_argument("Tensor: " + std::to_string(values.size()) +
                                  " values for shape " + shape_str(shape_));
    st_ = std::make_shared<Storage>();
    st_->data = std::make_shared<std::vector<float>>(std::move(values));
  }

  static Tensor scalar(float v) { return Tensor(Shape{}, std::vector<float>{v}); }

  bool defined() const { return st_ != nullptr; }
  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return st_ ? static_cast<int64_t>(st_->data->size()) : 0; }

  float* data() { return st_->data->data(); }
  const float* data() const { return st_->data->data(); }
  std::vector<float>& vec() { return *st_->data; }
  const std::vector<float>& vec() const { return *st_->data; }

  float item() const {
    if (size() != 1)
      throw std::invalid_argument("Tensor::item on non-scalar " + shape_str(shape_));
    return (*st_->data)[0];
  }

  float at(int64_t i) const { return (*st_->data)[static_cast<size_t>(i)]; }
  float& at(int64_t i) { return (*st_->data)[static_cast<size_t>(i)]; }

  bool tracked() const { return st_ && st_->grad != nullptr; }

  // Visible through every handle sharing this storage.
  void track() {
    if (!st_->grad)
      st_->grad = std::make_shared<std::vector<float>>(st_->data->size(), 0.0f);
  }

  float* grad() { return st_->grad ? st_->grad->data() : nullptr; }
  const float* grad() const { return st_->grad ? st_->grad->data() : nullptr; }
  std::vector<float>* grad_vec() { return st_ && st_->grad ? st_->grad.get() : nullptr; }

  void zero_grad() {
    if (st_ && st_->grad) std::fill(st_->grad->begin(), st_->grad->end(), 0.0f);
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<Storage>();
    t.st_->data = std::make_shared<std::vector<float>>(*st_->data);
    return t;
  }

  // Same values, no gradient buffer. Forward identity, backward zero.
  Tensor detached_view() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<Storage>();
    t.st_->data = st_->data;
    return t;
  }

  // Same storage and gradient buffer under a different shape.
  Tensor aliased_reshape(Shape shape) const {
    if (numel(shape) != size())
      throw std::invalid_argument("reshape: " + shape_str(shape_) + " to " +
                                  shape_str(shape) + " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.st_ = st_;
    return t;
  }

  bool same_storage(const Tensor& o) const { return st_ && o.st_ && st_->data == o.st_->data; }

 private:
  Shape shape_;
  std::shared_ptr<Storage> st_;
};

// Reverse-mode tape. Construction activates it for the current thread; ops
// record backward closures while one is active. Forward-only evaluation with
// no tape in scope performs no recording, which is what makes concurrent
// inference on a frozen model safe.
class GradTape {
 public:
  GradTape() : prev_(current_) { current_ = this; }
  ~GradTape() { current_ = prev_; }

  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* current() { return current_; }

  void record(std::function<void()> fn) { fns_.push_back(std::move(fn)); }

  size_t node_count() const { return fns_.size(); }

  void backward(Tensor loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(loss.shape()));
    if (!loss.tracked())
      throw std::invalid_argument("backward: loss is not connected to any parameter");
    loss.grad()[0] += 1.0f;
    for (auto it = fns_.rbegin(); it != fns_.rend(); ++it) (*it)();
    fns_.clear();
  }

 private:
  std::vector<std::function<void()>> fns_;
  GradTape* prev_;
  static inline thread_local GradTape* current_ = nullptr;
};

}  // namespace hoflow
