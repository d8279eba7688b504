#include "diffcod/metrics.hpp"

#include <algorithm>
#include <array>
#include <cfloat>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <json.hpp>

#include "diffcod/errors.hpp"
#include "diffcod/image_io.hpp"

namespace diffcod {

namespace fs = std::filesystem;

namespace {

constexpr double kEps = DBL_EPSILON;

void require_match(const Plane& a, const Plane& b, const char* what) {
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(std::string(what) + ": prediction " + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs ground truth " + std::to_string(b.height) +
                     "x" + std::to_string(b.width));
  }
}

std::vector<bool> foreground(const Plane& gt) {
  std::vector<bool> fg(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) fg[i] = gt.values[i] >= 0.5;
  return fg;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Mean and sample standard deviation (ddof = 1; 0 for fewer than 2 values).
std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  if (v.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

double s_object(const std::vector<double>& values) {
  const auto [x, sigma] = mean_std(values);
  return 2.0 * x / (x * x + 1.0 + sigma + kEps);
}

double quadrant_ssim(const Plane& pred, const std::vector<bool>& fg, int y0, int y1, int x0,
                     int x1) {
  const double n = static_cast<double>(y1 - y0) * (x1 - x0);
  if (n <= 0) return 0.0;
  double mx = 0, my = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      mx += pred.at(y, x);
      my += fg[static_cast<std::size_t>(y) * pred.width + x] ? 1.0 : 0.0;
    }
  mx /= n;
  my /= n;
  double sx = 0, sy = 0, sxy = 0;
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) {
      const double dx = pred.at(y, x) - mx;
      const double dy = (fg[static_cast<std::size_t>(y) * pred.width + x] ? 1.0 : 0.0) - my;
      sx += dx * dx;
      sy += dy * dy;
      sxy += dx * dy;
    }
  const double denom = n > 1 ? n - 1 : 1.0;
  sx /= denom;
  sy /= denom;
  sxy /= denom;
  const double a = 4.0 * mx * my * sxy;
  const double b = (mx * mx + my * my) * (sx + sy);
  if (a != 0) return a / (b + kEps);
  return b == 0 ? 1.0 : 0.0;
}

// 7x7 Gaussian, sigma 5, normalized to unit sum.
std::array<double, 49> gaussian_kernel() {
  std::array<double, 49> k{};
  double sum = 0;
  for (int y = -3; y <= 3; ++y)
    for (int x = -3; x <= 3; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * 25.0));
      k[(y + 3) * 7 + x + 3] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

Plane::Plane(int h, int w, std::vector<double> v) : height(h), width(w), values(std::move(v)) {
  if (values.size() != static_cast<std::size_t>(h) * w) throw ShapeError("plane size mismatch");
}

double mae(const Plane& pred, const Plane& gt) {
  require_match(pred, gt, "mae");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred.values[i] - gt.values[i]);
  return s / static_cast<double>(pred.size());
}

double s_measure(const Plane& pred, const Plane& gt, double alpha) {
  require_match(pred, gt, "s_measure");
  const auto fg = foreground(gt);
  const std::size_t n = pred.size();
  std::vector<double> fg_vals, bg_vals;
  double col_sum = 0, row_sum = 0;
  for (int y = 0; y < gt.height; ++y)
    for (int x = 0; x < gt.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * gt.width + x;
      if (fg[i]) {
        fg_vals.push_back(pred.values[i]);
        row_sum += y;
        col_sum += x;
      } else {
        bg_vals.push_back(1.0 - pred.values[i]);
      }
    }
  const double u = static_cast<double>(fg_vals.size()) / static_cast<double>(n);
  double pred_mean = 0;
  for (double v : pred.values) pred_mean += v;
  pred_mean /= static_cast<double>(n);
  if (fg_vals.empty()) return 1.0 - pred_mean;
  if (bg_vals.empty()) return pred_mean;

  const double object = u * s_object(fg_vals) + (1.0 - u) * s_object(bg_vals);

  const double count = static_cast<double>(fg_vals.size());
  const int cx = static_cast<int>(std::nearbyint(col_sum / count)) + 1;
  const int cy = static_cast<int>(std::nearbyint(row_sum / count)) + 1;
  const int h = gt.height, w = gt.width;
  const double area = static_cast<double>(h) * w;
  const double w1 = static_cast<double>(cx) * cy / area;
  const double w2 = static_cast<double>(cy) * (w - cx) / area;
  const double w3 = static_cast<double>(h - cy) * cx / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  const double region = w1 * quadrant_ssim(pred, fg, 0, cy, 0, cx) +
                        w2 * quadrant_ssim(pred, fg, 0, cy, cx, w) +
                        w3 * quadrant_ssim(pred, fg, cy, h, 0, cx) +
                        w4 * quadrant_ssim(pred, fg, cy, h, cx, w);
  return std::clamp(alpha * object + (1.0 - alpha) * region, 0.0, 1.0);
}

NearestForeground nearest_foreground(const std::vector<bool>& fg, int height, int width,
                                     const Plane& value) {
  constexpr int kNone = std::numeric_limits<int>::max() / 4;
  // Vertical distance from (y, x) to the nearest foreground pixel in column x.
  std::vector<int> vdist(static_cast<std::size_t>(height) * width, kNone);
  for (int x = 0; x < width; ++x) {
    int last = -kNone;
    for (int y = 0; y < height; ++y) {
      if (fg[static_cast<std::size_t>(y) * width + x]) last = y;
      vdist[static_cast<std::size_t>(y) * width + x] = last < 0 ? kNone : y - last;
    }
    last = kNone;
    for (int y = height - 1; y >= 0; --y) {
      if (fg[static_cast<std::size_t>(y) * width + x]) last = y;
      auto& d = vdist[static_cast<std::size_t>(y) * width + x];
      if (last != kNone) d = std::min(d, last - y);
    }
  }
  NearestForeground out{Plane(height, width, std::numeric_limits<double>::infinity()),
                        Plane(height, width, 0.0)};
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      if (fg[i]) {
        out.dist2.values[i] = 0;
        out.value.values[i] = value.values[i];
        continue;
      }
      long best = std::numeric_limits<long>::max();
      double best_value = 0;
      for (int c = 0; c < width; ++c) {
        const int g = vdist[static_cast<std::size_t>(y) * width + c];
        if (g == kNone) continue;
        const long d2 = static_cast<long>(c - x) * (c - x) + static_cast<long>(g) * g;
        if (d2 > best) continue;
        double v = -std::numeric_limits<double>::infinity();
        for (int r : {y - g, y + g}) {
          if (r >= 0 && r < height && fg[static_cast<std::size_t>(r) * width + c]) {
            v = std::max(v, value.at(r, c));
          }
        }
        if (d2 < best) {
          best = d2;
          best_value = v;
        } else {
          best_value = std::max(best_value, v);
        }
      }
      if (best != std::numeric_limits<long>::max()) {
        out.dist2.values[i] = static_cast<double>(best);
        out.value.values[i] = best_value;
      }
    }
  }
  return out;
}

double weighted_f(const Plane& pred, const Plane& gt) {
  require_match(pred, gt, "weighted_f");
  const auto fg = foreground(gt);
  const int h = gt.height, w = gt.width;
  if (std::none_of(fg.begin(), fg.end(), [](bool b) { return b; })) {
    const double peak = *std::max_element(pred.values.begin(), pred.values.end());
    return peak < 0.5 ? 1.0 : 0.0;
  }
  Plane err(h, w);
  for (std::size_t i = 0; i < err.size(); ++i) {
    err.values[i] = std::abs(pred.values[i] - (fg[i] ? 1.0 : 0.0));
  }
  const auto nearest = nearest_foreground(fg, h, w, err);
  const Plane& et = nearest.value;

  static const auto kernel = gaussian_kernel();
  double tp_loss = 0, fp = 0, fg_count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      double ew = err.values[i];
      if (fg[i]) {
        double ea = 0;
        for (int ky = -3; ky <= 3; ++ky)
          for (int kx = -3; kx <= 3; ++kx) {
            const int yy = y + ky, xx = x + kx;
            if (yy >= 0 && yy < h && xx >= 0 && xx < w) {
              ea += kernel[(ky + 3) * 7 + kx + 3] * et.at(yy, xx);
            }
          }
        ew = std::min(ew, ea);
        tp_loss += ew;
        fg_count += 1;
      } else {
        const double dist = std::sqrt(nearest.dist2.values[i]);
        fp += ew * (2.0 - std::exp(std::log(0.5) / 5.0 * dist));
      }
    }
  }
  const double tp = fg_count - tp_loss;
  const double recall = 1.0 - tp_loss / fg_count;
  const double precision = tp / (tp + fp + kEps);
  return 2.0 * recall * precision / (recall + precision + kEps);
}

std::vector<double> metric_thresholds() {
  std::vector<double> t(kMetricThresholds);
  for (int k = 1; k <= kMetricThresholds; ++k) t[k - 1] = static_cast<double>(k) / kMetricThresholds;
  return t;
}

Plane min_max_normalized(const Plane& pred) {
  const auto [lo, hi] = std::minmax_element(pred.values.begin(), pred.values.end());
  Plane out = pred;
  if (*hi == *lo) return out;
  const double l = *lo, range = *hi - *lo;
  for (auto& v : out.values) v = (v - l) / range;
  return out;
}

double mean_f(const Plane& pred_in, const Plane& gt, bool normalize) {
  require_match(pred_in, gt, "mean_f");
  const Plane pred = normalize ? min_max_normalized(pred_in) : pred_in;
  const auto fg = foreground(gt);
  const double gt_count = static_cast<double>(std::count(fg.begin(), fg.end(), true));
  double total = 0;
  for (double tau : metric_thresholds()) {
    double tp = 0, positives = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred.values[i] >= tau) {
        positives += 1;
        if (fg[i]) tp += 1;
      }
    }
    if (gt_count == 0) {
      total += positives == 0 ? 1.0 : 0.0;
      continue;
    }
    const double precision = positives > 0 ? tp / positives : 0.0;
    const double recall = tp / gt_count;
    const double num = (1.0 + kMeanFBeta2) * precision * recall;
    total += num == 0 ? 0.0 : num / (kMeanFBeta2 * precision + recall);
  }
  return total / kMetricThresholds;
}

double e_measure(const Plane& pred_in, const Plane& gt, bool normalize) {
  require_match(pred_in, gt, "e_measure");
  const Plane pred = normalize ? min_max_normalized(pred_in) : pred_in;
  const auto fg = foreground(gt);
  const double n = static_cast<double>(pred.size());
  const double gt_fg = static_cast<double>(std::count(fg.begin(), fg.end(), true));
  auto enhanced = [](double a, double b) {
    const double align = 2.0 * a * b / (a * a + b * b + kEps);
    return (align + 1.0) * (align + 1.0) / 4.0;
  };
  double total = 0;
  for (double tau : metric_thresholds()) {
    double ff = 0, fb = 0;  // predicted fg on gt fg / gt bg
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred.values[i] >= tau) (fg[i] ? ff : fb) += 1;
    }
    const double pred_fg = ff + fb;
    const double pred_bg = n - pred_fg;
    double sum = 0;
    if (gt_fg == 0) {
      sum = pred_bg;
    } else if (gt_fg == n) {
      sum = pred_fg;
    } else {
      const double bf = gt_fg - ff;
      const double bb = pred_bg - bf;
      const double mp = pred_fg / n, mg = gt_fg / n;
      sum = ff * enhanced(1 - mp, 1 - mg) + fb * enhanced(1 - mp, -mg) +
            bf * enhanced(-mp, 1 - mg) + bb * enhanced(-mp, -mg);
    }
    total += sum / n;
  }
  return total / kMetricThresholds;
}

MetricScores evaluate_pair(const Plane& pred, const Plane& gt, const MetricOptions& options) {
  return {s_measure(pred, gt, options.alpha), weighted_f(pred, gt),
          mean_f(pred, gt, options.normalize), e_measure(pred, gt, options.normalize),
          mae(pred, gt)};
}

namespace {

std::map<std::string, fs::path> list_masks(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.emplace(e.path().stem().string(), e.path());
  }
  return out;
}

Plane to_plane(const Tensor<float>& t) {
  Plane p(t.dim(1), t.dim(2));
  for (std::size_t i = 0; i < p.size(); ++i) p.values[i] = t[i];
  return p;
}

}  // namespace

MetricReport evaluate_dataset(const fs::path& pred_dir, const fs::path& gt_dir,
                              const MetricOptions& options, const std::vector<std::string>& stems) {
  auto preds = list_masks(pred_dir);
  auto gts = list_masks(gt_dir);
  if (!stems.empty()) {
    const std::set<std::string> keep(stems.begin(), stems.end());
    std::erase_if(preds, [&](const auto& kv) { return !keep.contains(kv.first); });
    std::erase_if(gts, [&](const auto& kv) { return !keep.contains(kv.first); });
  }
  MetricReport report;
  for (const auto& [stem, path] : preds) {
    if (!gts.contains(stem)) report.unmatched.push_back(path.string());
  }
  for (const auto& [stem, path] : gts) {
    if (!preds.contains(stem)) {
      report.unmatched.push_back(path.string());
      continue;
    }
    const Plane pred = to_plane(read_gray(preds.at(stem)));
    const Plane gt = to_plane(read_mask(path));
    if (pred.height != gt.height || pred.width != gt.width) {
      throw ShapeError("prediction and ground truth sizes differ for '" + stem + "'");
    }
    report.names.push_back(stem);
    report.per_image.push_back(evaluate_pair(pred, gt, options));
  }
  if (report.per_image.empty()) {
    throw IoError("no prediction in " + pred_dir.string() + " matches a mask in " + gt_dir.string());
  }
  const double k = static_cast<double>(report.per_image.size());
  for (const auto& s : report.per_image) {
    report.mean.s_alpha += s.s_alpha / k;
    report.mean.f_w += s.f_w / k;
    report.mean.f_m += s.f_m / k;
    report.mean.e_m += s.e_m / k;
    report.mean.mae += s.mae / k;
  }
  return report;
}

namespace {

std::string csv_row(const std::string& name, const MetricScores& s) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%.4f,%.4f", name.c_str(), s.s_alpha, s.f_w,
                s.f_m, s.e_m, s.mae);
  return buf;
}

}  // namespace

std::string format_mean_row(const MetricReport& report) { return csv_row("MEAN", report.mean); }

void write_report_csv(const fs::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << "image,s_alpha,f_w,f_m,e_m,mae\n";
  for (std::size_t i = 0; i < report.names.size(); ++i) {
    out << csv_row(report.names[i], report.per_image[i]) << '\n';
  }
  out << format_mean_row(report) << '\n';
}

void write_report_json(const fs::path& path, const MetricReport& report) {
  auto scores = [](const MetricScores& s) {
    return nlohmann::json{{"s_alpha", s.s_alpha}, {"f_w", s.f_w}, {"f_m", s.f_m},
                          {"e_m", s.e_m},         {"mae", s.mae}};
  };
  nlohmann::json j;
  j["mean"] = scores(report.mean);
  j["per_image"] = nlohmann::json::object();
  for (std::size_t i = 0; i < report.names.size(); ++i) {
    j["per_image"][report.names[i]] = scores(report.per_image[i]);
  }
  j["unmatched"] = report.unmatched;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace diffcod
