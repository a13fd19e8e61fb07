#include "genaf/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <sstream>

#include "genaf/error.hpp"
#include "genaf/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace genaf {
namespace {

constexpr const char* kMetrics[] = {"ta", "ra", "asr"};

std::string metric_title(const std::string& m) {
  if (m == "ta") return "TA (%)";
  if (m == "ra") return "RA (%)";
  return "ASR (%)";
}

void render(const ChartSeries& s, bool line, const fs::path& path) {
  const int w = 640, h = 420, left = 70, right = 20, top = 40, bottom = 70;
  cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
  const cv::Scalar axis(40, 40, 40), grid(220, 220, 220), ink(180, 90, 30);
  const int pw = w - left - right, ph = h - top - bottom;
  const auto y_of = [&](double v) { return top + static_cast<int>(std::lround(ph * (1.0 - std::clamp(v, 0.0, 100.0) / 100.0))); };

  for (int t = 0; t <= 100; t += 20) {
    const int y = y_of(t);
    cv::line(img, {left, y}, {left + pw, y}, grid, 1);
    cv::putText(img, std::to_string(t), {left - 40, y + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, axis, 1, cv::LINE_AA);
  }
  cv::line(img, {left, top}, {left, top + ph}, axis, 1);
  cv::line(img, {left, top + ph}, {left + pw, top + ph}, axis, 1);
  cv::putText(img, metric_title(s.metric) + " vs " + s.x_label, {left, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.6, axis, 1,
              cv::LINE_AA);

  const int n = static_cast<int>(s.values.size());
  const double slot = static_cast<double>(pw) / n;
  std::vector<cv::Point> pts;
  for (int i = 0; i < n; ++i) {
    const int cx = left + static_cast<int>(slot * (i + 0.5));
    const int cy = y_of(s.values[i]);
    if (line) {
      pts.emplace_back(cx, cy);
    } else {
      const int half = std::max(4, static_cast<int>(slot * 0.3));
      cv::rectangle(img, {cx - half, cy}, {cx + half, top + ph}, ink, cv::FILLED);
    }
    std::ostringstream v;
    v.precision(3);
    v << s.values[i];
    cv::putText(img, v.str(), {cx - 15, cy - 8}, cv::FONT_HERSHEY_SIMPLEX, 0.4, axis, 1, cv::LINE_AA);
    auto label = s.labels[i].size() > 14 ? s.labels[i].substr(0, 14) : s.labels[i];
    cv::putText(img, label, {cx - 4 * static_cast<int>(label.size()), top + ph + 20}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                axis, 1, cv::LINE_AA);
  }
  if (line) {
    cv::polylines(img, pts, false, ink, 2, cv::LINE_AA);
    for (const auto& p : pts) cv::circle(img, p, 4, ink, cv::FILLED, cv::LINE_AA);
  }
  cv::putText(img, s.x_label, {left + pw / 2 - 30, h - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5, axis, 1, cv::LINE_AA);

  if (!cv::imwrite(path.string(), img)) throw IoError("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("corrupt " + path.string() + ": " + e.what());
  }
}

}  // namespace

std::vector<ChartSeries> collect_chart_data(const fs::path& dir) {
  std::vector<ChartSeries> out;
  if (fs::exists(dir / "table.json")) {
    const auto table = read_json(dir / "table.json");
    const auto& rows = table.at("rows");
    if (rows.empty()) throw InputError("sweep table in " + dir.string() + " has no rows");
    for (const char* m : kMetrics) {
      ChartSeries s{m, table.value("axis", "value"), {}, {}};
      for (const auto& r : rows) {
        s.labels.push_back(r.at("value").get<std::string>());
        s.values.push_back(r.at(m).get<double>());
      }
      out.push_back(std::move(s));
    }
    return out;
  }
  std::vector<std::pair<std::string, MetricsReport>> reports;
  for (const char* model : {"baseline", "stage1", "stage2"}) {
    const auto p = dir / "metrics" / (std::string(model) + "_pgd.json");
    if (fs::exists(p)) reports.emplace_back(model, MetricsReport::load(p));
  }
  if (reports.empty()) throw InputError("no metrics reports or sweep table in " + dir.string());
  for (const char* m : kMetrics) {
    ChartSeries s{m, "model", {}, {}};
    for (const auto& [name, r] : reports) {
      s.labels.push_back(name);
      s.values.push_back(std::string(m) == "ta" ? r.ta : std::string(m) == "ra" ? r.ra : r.asr);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<fs::path> emit_plots(const fs::path& dir) {
  const auto series = collect_chart_data(dir);
  const bool line = fs::exists(dir / "table.json");
  const auto plot_dir = dir / "plots";
  std::error_code ec;
  fs::create_directories(plot_dir, ec);
  if (ec) throw IoError("cannot create " + plot_dir.string());

  std::vector<fs::path> images;
  json data = json::object();
  for (const auto& s : series) {
    const auto path = plot_dir / (s.metric + ".png");
    render(s, line, path);
    images.push_back(path);
    data[s.metric] = {{"x_label", s.x_label}, {"labels", s.labels}, {"values", s.values}};
  }
  std::ofstream out(plot_dir / "plot_data.json");
  if (!out) throw IoError("cannot write " + (plot_dir / "plot_data.json").string());
  out << data.dump(2) << "\n";
  return images;
}

}  // namespace genaf
