#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace tra {

using Shape = std::vector<int>;

inline int64_t shape_size(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

// Dense double tensor with optional gradient buffer. Feature maps use HWC
// layout: element (y, x, ch) lives at index (y*w + x)*c + ch. Value-semantic
// handle over shared storage; values are treated as immutable once an op has
// consumed them, grads accumulate in place.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  int dim(int i) const { return s_->shape.at(i); }
  int ndim() const { return static_cast<int>(s_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(s_->v.size()); }

  double* data() { return s_->v.data(); }
  const double* data() const { return s_->v.data(); }
  std::vector<double>& values() { return s_->v; }
  const std::vector<double>& values() const { return s_->v; }

  bool requires_grad() const { return s_->rg; }
  double* grad();
  const double* grad() const;
  void zero_grad();

  double value() const;  // scalar accessor
  double& operator[](int64_t i) { return s_->v[i]; }
  double operator[](int64_t i) const { return s_->v[i]; }

  bool same_storage(const Tensor& o) const { return s_ == o.s_; }
  bool all_finite() const;
  Tensor clone(bool requires_grad) const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g;
    bool rg = false;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of executed ops. Each node is a closure that propagates the
// output grad of one op into its input grads; backward() replays them in
// reverse execution order exactly once.
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }
  // Seeds loss.grad = 1 and replays the tape. Loss must be a scalar produced
  // through ops recorded on this tape.
  void backward(const Tensor& loss);
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

// Central-difference gradient check: runs f once with a tape to get the
// analytic gradient of the scalar output w.r.t. x, then perturbs every
// coordinate of x by +/-step and compares. Returns the max relative
// discrepancy over all coordinates. x must require grad; its values are
// restored on exit.
double finite_diff_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                         Tensor x, double step);

}  // namespace tra
