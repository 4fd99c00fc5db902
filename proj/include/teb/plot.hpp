#pragma once

// Static SVG figures drawn from metrics-log records.

#include <string>
#include <vector>

#include "teb/harness.hpp"

namespace teb {

struct Series {
  std::string name;
  std::vector<double> x, y, err;  // err may be empty
};

/// One line chart; `hline` is drawn dashed when finite.
std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::vector<Series>& series,
                           double hline = EvalMetrics::kNaN, const std::string& hline_label = "");

/// TE metric and reconstruction log-likelihood against beta, mean with std bars.
std::string sweep_svg(const std::vector<BetaAggregate>& agg, double true_te = EvalMetrics::kNaN);
/// Training loss, KL and log-likelihood terms per epoch.
std::string loss_svg(const std::vector<EpochRecord>& epochs);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace teb
