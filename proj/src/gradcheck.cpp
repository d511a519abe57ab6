#include "chexrel/gradcheck.hpp"

#include <cmath>

namespace chexrel::nd {

double grad_check(const std::function<Tensor()>& f, ParamStore& params, double h) {
  reset_stochastic_trace();
  params.clear_grads();
  Tensor loss = f();
  if (stochastic_trace_hit())
    fail(ErrorKind::contract, "grad_check: function is stochastic (dropout active); disable dropout");
  if (!std::isfinite(loss.value())) fail(ErrorKind::numeric, "grad_check: loss is non-finite");
  backward(loss);

  // snapshot analytic gradients; a parameter the loss never touches counts as zero
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, e] : params) {
    if (e.t.has_grad())
      analytic[name] = std::vector<double>(e.t.grad().begin(), e.t.grad().end());
    else
      analytic[name] = std::vector<double>(static_cast<size_t>(e.t.numel()), 0.0);
  }
  params.clear_grads();

  double worst = 0.0;
  for (auto& [name, e] : params) {
    auto data = e.t.mutable_data();
    const auto& a = analytic[name];
    for (size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = f().value();
      data[i] = orig - h;
      const double fm = f().value();
      data[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        fail(ErrorKind::numeric, "grad_check: perturbed loss is non-finite");
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), 1.0});
      worst = std::max(worst, std::abs(a[i] - numeric) / denom);
    }
  }
  params.clear_grads();
  return worst;
}

}  // namespace chexrel::nd
