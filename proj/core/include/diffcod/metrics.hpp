#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace diffcod {

/// Single-channel image, row-major doubles.
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Plane() = default;
  Plane(int h, int w, double fill = 0.0)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}
  Plane(int h, int w, std::vector<double> v);

  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return values.size(); }
};

inline constexpr int kMetricThresholds = 256;
inline constexpr double kMeanFBeta2 = 0.3;

struct MetricOptions {
  double alpha = 0.5;
  /// Min-max normalize non-constant predictions before the thresholded
  /// metrics (mean F, mean E).
  bool normalize = true;
};

// `gt` is treated as binary: foreground where value >= 0.5.
double mae(const Plane& pred, const Plane& gt);
double s_measure(const Plane& pred, const Plane& gt, double alpha = 0.5);
double weighted_f(const Plane& pred, const Plane& gt);
double mean_f(const Plane& pred, const Plane& gt, bool normalize = true);
double e_measure(const Plane& pred, const Plane& gt, bool normalize = true);

/// Thresholds k / 256 for k = 1..256.
std::vector<double> metric_thresholds();
/// (p - min) / (max - min) unless p is constant.
Plane min_max_normalized(const Plane& pred);

/// For each background pixel, the squared distance to the nearest
/// foreground pixel (0 on foreground) and, among all nearest foreground
/// pixels, the largest `value`. Exact; O(H * W * W).
struct NearestForeground {
  Plane dist2;
  Plane value;
};
NearestForeground nearest_foreground(const std::vector<bool>& fg, int height, int width,
                                     const Plane& value);

struct MetricScores {
  double s_alpha = 0;
  double f_w = 0;
  double f_m = 0;
  double e_m = 0;
  double mae = 0;
};

MetricScores evaluate_pair(const Plane& pred, const Plane& gt, const MetricOptions& options = {});

struct MetricReport {
  MetricScores mean;
  std::vector<std::string> names;
  std::vector<MetricScores> per_image;
  /// Files present on only one side.
  std::vector<std::string> unmatched;
};

/// Pairs files by stem (sorted), evaluates each pair and averages. `stems`
/// restricts the evaluation when nonempty. Throws IoError if no pair matches.
MetricReport evaluate_dataset(const std::filesystem::path& pred_dir,
                              const std::filesystem::path& gt_dir,
                              const MetricOptions& options = {},
                              const std::vector<std::string>& stems = {});

/// Columns image,s_alpha,f_w,f_m,e_m,mae plus a final MEAN row.
void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);
std::string format_mean_row(const MetricReport& report);

}  // namespace diffcod
