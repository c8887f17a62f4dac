#pragma once

#include <string>
#include <vector>

#include "hdexpit/evals.hpp"

namespace hdexpit {

// Report emission. JSON and CSV always; SVG plots are best-effort mirrors
// and PNG grids serve qualitative plan inspection. CSV files carry a
// "# hdexpit-report-1" comment line ahead of the header row.

void write_text_file(const std::string& path, const std::string& content);

std::string mtlc_report_json(const MtlcReport& rep);
std::string mtlc_report_csv(const MtlcReport& rep);
std::string chain_report_json(const ChainReport& rep);
std::string chain_report_csv(const ChainReport& rep);
std::string cross_eval_csv(const CrossEvalMatrix& m);
std::string diversity_json(const DiversityReport& rep);
std::string diversity_csv(const DiversityReport& rep);
std::string timing_csv(const std::vector<TimingRow>& rows);

/// Simple bar chart; one bar per (label, value).
std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars,
                          double y_max = 1.0);
/// Scatter of 2D points with per-class colors.
std::string svg_scatter(const std::string& title,
                        const std::vector<std::array<double, 2>>& pts,
                        const std::vector<int>& cls,
                        const std::vector<std::string>& class_names);

/// Plan frames side by side as one RGB image, upscaled for inspection.
void write_plan_png(const std::string& path, const Plan& plan, int upscale = 4);

/// Minimal RGB8 PNG writer (stored-block deflate; no external deps).
void write_png_rgb8(const std::string& path, int width, int height,
                    const std::vector<std::uint8_t>& rgb);

/// Persist frozen evaluation inputs.
void save_settings_json(const std::vector<Context>& settings, const TaskRegistry& reg,
                        const std::string& path);
std::vector<Context> load_settings_json(const TaskRegistry& reg, const std::string& path);
void save_chains_json(const std::vector<Chain>& chains, const std::string& path);
std::vector<Chain> load_chains_json(const std::string& path);

}  // namespace hdexpit
