#ifndef COEVO_PLOTS_HPP_
#define COEVO_PLOTS_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace coevo {

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

/// Standalone line chart. A baseline, when given, is drawn as one dashed
/// horizontal <line class="baseline">.
std::string line_chart_svg(const std::string& title, const std::vector<Series>& series,
                           std::optional<double> baseline = std::nullopt);

struct PlotInput {
  std::string label;  // e.g. the training mode
  std::filesystem::path metrics;
};

/// Per-metric CSV (step,value) and SVG for every input, named
/// <label>.<kind>.<metric>.{csv,svg}; plus shift.svg overlaying kl_nats of
/// all inputs with the real-data baseline. Returns the files written.
std::vector<std::filesystem::path> emit_plots(const std::vector<PlotInput>& inputs,
                                              const std::filesystem::path& out_dir);

}  // namespace coevo

#endif  // COEVO_PLOTS_HPP_
