#include "claver/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace claver {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Matrix>& params) {
  ad::Graph graph(false);
  std::vector<ad::Var> vars;
  vars.reserve(params.size());
  for (const Matrix& p : params) vars.push_back(graph.constant(p));
  const ad::Var out = f(graph, vars);
  const Matrix& v = out.value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("grad_check: function must return a 1x1");
  if (!std::isfinite(v(0, 0))) throw NumericalError("grad_check: non-finite function value");
  return v(0, 0);
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const std::vector<Matrix>& params, double eps) {
  std::vector<Matrix> analytic;
  {
    ad::Graph graph;
    std::vector<ad::Var> vars;
    for (const Matrix& p : params) vars.push_back(graph.parameter(p));
    const ad::Var out = f(graph, vars);
    if (!std::isfinite(out.value()(0, 0))) throw NumericalError("grad_check: non-finite function value");
    graph.backward(out);
    for (const ad::Var& v : vars) {
      if (!v.grad().all_finite()) throw NumericalError("grad_check: non-finite gradient");
      analytic.push_back(v.grad());
    }
  }

  GradCheckResult result;
  std::vector<Matrix> probe = params;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      double& slot = probe[p].values()[i];
      const double original = slot;
      slot = original + eps;
      const double plus = evaluate(f, probe);
      slot = original - eps;
      const double minus = evaluate(f, probe);
      slot = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[p].values()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_rel_error || (p == 0 && i == 0)) {
        result = {rel, p, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace claver
