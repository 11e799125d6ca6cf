#include "langsg/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "langsg/errors.hpp"

namespace langsg {

GradCheckResult grad_check(const std::function<double()>& loss, std::span<GradCheckEntry> entries,
                           double tolerance, double h, double kink_tolerance) {
  auto eval = [&] {
    const double v = loss();
    if (!std::isfinite(v)) throw TrainingError("grad_check: non-finite loss");
    return v;
  };
  GradCheckResult result;
  const double f0 = eval();
  const double fscale = std::max(1.0, std::fabs(f0));
  const double kink_limit = kink_tolerance * fscale;
  for (auto& entry : entries) {
    if (entry.values.size() != entry.analytic.size()) {
      throw ShapeError("grad_check: value/gradient size mismatch for " + entry.name);
    }
    double diff2 = 0, a2 = 0, n2 = 0;
    std::size_t used = 0;
    for (std::size_t i = 0; i < entry.values.size(); ++i) {
      const double saved = entry.values[i];
      auto at = [&](double dx) {
        entry.values[i] = saved + dx;
        const double v = eval();
        entry.values[i] = saved;
        return v;
      };
      const double fp = at(h), fm = at(-h), fp2 = at(h / 2), fm2 = at(-h / 2);

      // On a smooth function the one-sided gap shrinks linearly with the
      // step and the central estimate barely moves; a kink inside [-h, h]
      // breaks at least one of the two.
      const double central = (fp - fm) / (2 * h);
      const double central2 = (fp2 - fm2) / h;
      const double gap = (fp - 2 * f0 + fm) / h;
      const double gap2 = (fp2 - 2 * f0 + fm2) / (h / 2);
      if (std::fabs(central - central2) > kink_limit || std::fabs(gap - 2 * gap2) > kink_limit) {
        ++result.kinks;
        continue;
      }
      const double analytic = entry.analytic[i];
      if (!std::isfinite(analytic)) throw TrainingError("grad_check: non-finite analytic gradient in " + entry.name);
      diff2 += (analytic - central) * (analytic - central);
      a2 += analytic * analytic;
      n2 += central * central;
      ++used;
    }
    result.checked += used;
    // Both gradients at the finite-difference noise level: nothing to compare.
    const double noise = kNegligibleGradient * fscale * std::sqrt(static_cast<double>(std::max<std::size_t>(used, 1)));
    const double rel = std::max(std::sqrt(a2), std::sqrt(n2)) < noise
                           ? 0.0
                           : std::sqrt(diff2) / (std::sqrt(a2) + std::sqrt(n2));
    if (result.worst_tensor.empty() || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_tensor = entry.name;
    }
  }
  result.passed = result.max_rel_error < tolerance;
  return result;
}

}  // namespace langsg
