// Builds a small two-layer network in double precision and compares its
// analytic gradients with central finite differences.

#include <cstdio>

#include "pma2e/pma2e.hpp"

int main() {
  using namespace pma2e;
  Rng rng(3);
  ParameterSet<double> params;
  const Mlp<double> mlp(params, "mlp", {3, 8, 2}, Activation::Gelu, rng);
  const auto x = Tensor<double>::from({4, 3}, {0.1, -0.4, 0.3, 0.9, 0.2, -0.7, -0.5, 0.6, 0.05, 0.3, 0.3, -0.2});

  std::vector<Tensor<double>> inputs;
  for (const auto& p : params.items()) inputs.push_back(p.tensor);
  const double err = finite_difference_check([&] { return mean(mlp(x)); }, inputs);
  std::printf("max relative error over %zu parameters: %.3g\n", params.scalar_count(), err);
  return err < 1e-6 ? 0 : 1;
}
