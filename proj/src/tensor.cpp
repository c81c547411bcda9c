#include "tra/tensor.hpp"

#include <cmath>
#include <cstdlib>

namespace tra {

Tensor::Tensor(Shape shape, bool requires_grad) {
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension");
  }
  s_ = std::make_shared<Storage>();
  s_->shape = std::move(shape);
  s_->v.assign(shape_size(s_->shape), 0.0);
  s_->rg = requires_grad;
  if (requires_grad) s_->g.assign(s_->v.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (auto& x : t.s_->v) x = v;
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return full({1}, v, requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  if (static_cast<int64_t>(values.size()) != t.size())
    throw std::invalid_argument("Tensor::from: value count != shape product");
  t.s_->v = std::move(values);
  return t;
}

double* Tensor::grad() {
  if (!s_->rg) throw std::logic_error("Tensor: grad on requires_grad=false");
  return s_->g.data();
}

const double* Tensor::grad() const {
  if (!s_->rg) throw std::logic_error("Tensor: grad on requires_grad=false");
  return s_->g.data();
}

void Tensor::zero_grad() {
  if (s_->rg) std::fill(s_->g.begin(), s_->g.end(), 0.0);
}

double Tensor::value() const {
  if (size() != 1) throw std::logic_error("Tensor::value: not a scalar");
  return s_->v[0];
}

bool Tensor::all_finite() const {
  for (double x : s_->v)
    if (!std::isfinite(x)) return false;
  return true;
}

Tensor Tensor::clone(bool requires_grad) const {
  Tensor t(s_->shape, requires_grad);
  t.s_->v = s_->v;
  return t;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw std::invalid_argument("Tape::backward: loss must be scalar");
  if (!loss.requires_grad())
    throw std::invalid_argument("Tape::backward: loss does not require grad");
  Tensor seed = loss;  // shared storage
  seed.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

double finite_diff_check(const std::function<Tensor(const Tensor&, Tape*)>& f,
                         Tensor x, double step) {
  if (!x.requires_grad())
    throw std::invalid_argument("finite_diff_check: x must require grad");
  x.zero_grad();
  Tape tape;
  Tensor out = f(x, &tape);
  if (out.size() != 1)
    throw std::invalid_argument("finite_diff_check: f must return a scalar");
  tape.backward(out);
  std::vector<double> analytic(x.grad(), x.grad() + x.size());

  double worst = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double fp = f(x, nullptr).value();
    x[i] = saved - step;
    const double fm = f(x, nullptr).value();
    x[i] = saved;
    const double fd = (fp - fm) / (2.0 * step);
    const double denom =
        std::max({std::fabs(analytic[i]), std::fabs(fd), 1e-6});
    worst = std::max(worst, std::fabs(analytic[i] - fd) / denom);
  }
  return worst;
}

}  // namespace tra
