#include "skillrec/neuralkit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "skillrec/rng.hpp"

namespace skillrec::nk {

GradCheckReport grad_check(const LossFunction& loss, Parameters& params, double tolerance,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  report.tolerance = tolerance;
  Gradients analytic(params);
  loss(params, &analytic);
  Rng rng(options.seed);

  for (TensorId id = 0; id < params.size(); ++id) {
    Mat& w = params.value(id);
    std::vector<std::pair<Eigen::Index, Eigen::Index>> entries;
    if (analytic.row_sparse(id)) {
      auto rows = analytic.touched_rows(id);
      std::sort(rows.begin(), rows.end());
      for (auto r : rows)
        for (Eigen::Index c = 0; c < w.cols(); ++c) entries.emplace_back(r, c);
    } else {
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) entries.emplace_back(r, c);
    }
    if (entries.size() > options.max_entries_per_tensor) {
      rng.shuffle(entries);
      entries.resize(options.max_entries_per_tensor);
    }
    for (auto [r, c] : entries) {
      const double saved = w(r, c);
      w(r, c) = saved + options.step;
      const double plus = loss(params, nullptr);
      w(r, c) = saved - options.step;
      const double minus = loss(params, nullptr);
      w(r, c) = saved;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[id](r, c);
      const double abs_err = std::abs(a - numeric);
      const double rel_err =
          abs_err / std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      ++report.entries_checked;
      report.max_absolute_error = std::max(report.max_absolute_error, abs_err);
      if (rel_err > report.max_relative_error) {
        report.max_relative_error = rel_err;
        report.worst_tensor = params[id].name;
        report.worst_row = r;
        report.worst_col = c;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace skillrec::nk
