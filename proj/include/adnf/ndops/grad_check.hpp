#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "adnf/ndops/tape.hpp"

namespace adnf {

struct GradCheckEntry {
  std::string name;
  double relative_error = 0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double max_abs_error = 0;
  double analytic_norm = 0;
  double numeric_norm = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0;
  double mean_relative_error = 0;

  bool passed(double tolerance) const { return std::isfinite(max_relative_error) && max_relative_error < tolerance; }
  const GradCheckEntry& worst() const {
    return *std::max_element(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.relative_error < b.relative_error; });
  }
};

template <typename T>
using NamedArrays = std::vector<std::pair<std::string, DenseArray<T>>>;

// Compares reverse-mode gradients against central differences.
//
// `build(tape, leaves)` records a scalar function of the given leaves (one per
// entry of `point`, same order) and returns its output Var. The graph is built
// once; finite differences perturb leaves in place and replay it.
//
// Analytic gradients are taken at precision T; the difference quotients are
// evaluated at precision Oracle (T by default). With T = float and
// Oracle = double the check isolates the 32-bit backward pass from the
// rounding and ReLU-kink noise of 32-bit difference quotients; `build` must
// then accept both tape types (a generic lambda).
//
// Relative error is measured per named parameter over the whole gradient
// array. Parameters whose analytic and numeric gradients both have norm below
// `zero_floor` count as exact.
template <typename T, typename Oracle = T, typename Build>
GradCheckReport grad_check(Build&& build, const NamedArrays<T>& point, double fd_step, double zero_floor = 1e-12) {
  require(fd_step > 0.0, "grad_check: fd_step must be positive");
  for (const auto& [name, value] : point)
    if (!value.all_finite()) throw numeric_error("grad_check: parameter '" + name + "' holds a non-finite value");

  std::vector<DenseArray<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var> leaves;
    for (const auto& [name, value] : point) leaves.push_back(tape.leaf(value, name));
    const Var out = build(tape, std::span<const Var>(leaves));
    if (!std::isfinite(static_cast<double>(tape.value(out).item())))
      throw numeric_error("grad_check: forward value is non-finite at the test point");
    analytic = tape.backward(out);
  }

  Tape<Oracle> tape;
  std::vector<Var> leaves;
  for (const auto& [name, value] : point) leaves.push_back(tape.leaf(value.template cast<Oracle>(), name));
  const Var out = build(tape, std::span<const Var>(leaves));

  auto evaluate = [&](std::size_t p, std::size_t k, Oracle x) {
    DenseArray<Oracle> moved = tape.value(leaves[p]);
    moved[k] = x;
    tape.set_leaf(leaves[p], std::move(moved));
    tape.replay();
    const Oracle f = tape.value(out).item();
    if (!std::isfinite(static_cast<double>(f)))
      throw numeric_error("grad_check: non-finite forward value when perturbing '" + point[p].first + "'[" +
                          std::to_string(k) + "]");
    return f;
  };

  GradCheckReport report;
  for (std::size_t p = 0; p < point.size(); ++p) {
    const DenseArray<Oracle> x0 = point[p].second.template cast<Oracle>();
    const auto step = static_cast<Oracle>(fd_step);
    GradCheckEntry entry{point[p].first};
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t k = 0; k < x0.size(); ++k) {
      const Oracle plus = evaluate(p, k, x0[k] + step);
      const Oracle minus = evaluate(p, k, x0[k] - step);
      DenseArray<Oracle> restored = tape.value(leaves[p]);
      restored[k] = x0[k];
      tape.set_leaf(leaves[p], std::move(restored));
      const double numeric =
          (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * static_cast<double>(step));
      const double a = analytic[p][k];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
    }
    tape.set_leaf(leaves[p], x0);
    entry.analytic_norm = std::sqrt(a2);
    entry.numeric_norm = std::sqrt(n2);
    const double scale = std::max(entry.analytic_norm, entry.numeric_norm);
    entry.relative_error = scale < zero_floor ? 0.0 : std::sqrt(diff2) / scale;
    report.entries.push_back(entry);
  }
  tape.replay();

  double total = 0;
  for (const auto& e : report.entries) {
    report.max_relative_error = std::isfinite(e.relative_error)
                                    ? std::max(report.max_relative_error, e.relative_error)
                                    : std::numeric_limits<double>::infinity();
    total += e.relative_error;
  }
  report.mean_relative_error = report.entries.empty() ? 0.0 : total / static_cast<double>(report.entries.size());
  return report;
}

}  // namespace adnf
