// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "droprate/error.hpp"
#include "droprate/trainer.hpp"

namespace droprate {

/// One schedule's line in the comparison table.
struct ComparisonRow {
  std::string schedule;
  double ftl = 0.0;          // final train loss
  double bvl = 0.0;          // best val loss
  double ttt_minutes = 0.0;  // total train time
  double ais = 0.0;          // average inference speed, tokens/sec
  bool diverged = false;
  std::string note;
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;
  bool partial = false;  // a run diverged and later runs were skipped
};

/// FTL is the last recorded train loss, BVL the minimum recorded val loss.
inline ComparisonRow comparison_row(std::string schedule, const std::vector<MetricsRecord>& metrics,
                                    double train_seconds, double ais) {
  if (metrics.empty()) throw InputError("run " + schedule + " recorded no metrics");
  ComparisonRow r;
  r.schedule = std::move(schedule);
  r.ftl = metrics.back().train_loss;
  r.bvl = std::min_element(metrics.begin(), metrics.end(), [](const auto& a, const auto& b) {
            return a.val_loss < b.val_loss;
          })->val_loss;
  r.ttt_minutes = train_seconds / 60.0;
  r.ais = ais;
  return r;
}

inline std::string render_markdown(const ComparisonReport& rep) {
  std::string out = "| Schedule | FTL | BVL | TTT | AIS |\n|---|---|---|---|---|\n";
  for (const auto& r : rep.rows) {
    if (r.diverged) {
      out += "| " + r.schedule + " | - | - | - | - |\n";
      continue;
    }
    out += "| " + r.schedule + " | " + format_fixed(r.ftl, 4) + " | " + format_fixed(r.bvl, 4) + " | " +
           format_fixed(r.ttt_minutes, 2) + " | " + format_fixed(r.ais, 2) + " |\n";
  }
  if (rep.partial) {
    out += "\nPARTIAL RESULTS:";
    for (const auto& r : rep.rows)
      if (!r.note.empty()) out += " " + r.schedule + ": " + r.note + ".";
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV parsing

namespace csv_detail {

inline std::vector<std::string> split_fields(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double number(const std::string& s, std::size_t line, const char* column) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw InputError("line " + std::to_string(line) + ": " + column + " is not a number: '" + s + "'");
  return v;
}

inline std::int64_t integer(const std::string& s, std::size_t line, const char* column) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
    throw InputError("line " + std::to_string(line) + ": " + column + " is not an integer: '" + s + "'");
  return v;
}

/// Splits text into lines (CRLF tolerated), checks the header, and calls
/// `row(fields, line_number)` for each non-empty data line.
template <class F>
void parse(std::string_view text, std::string_view header, std::size_t n_fields, F&& row) {
  std::size_t line_no = 0, rows = 0;
  bool saw_header = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) {
      if (pos > text.size()) break;
      continue;
    }
    if (!saw_header) {
      if (line != header)
        throw InputError("line " + std::to_string(line_no) + ": expected header '" + std::string(header) + "'");
      saw_header = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() != n_fields)
      throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(n_fields) + " fields, got " +
                       std::to_string(fields.size()));
    row(fields, line_no);
    ++rows;
  }
  if (!saw_header) throw InputError("line 1: missing header '" + std::string(header) + "'");
  if (rows == 0) throw InputError("line " + std::to_string(line_no) + ": no data rows");
}

}  // namespace csv_detail

inline std::vector<MetricsRecord> parse_metrics_csv(std::string_view text) {
  std::vector<MetricsRecord> out;
  csv_detail::parse(text, kMetricsCsvHeader, 5, [&](const auto& f, std::size_t n) {
    out.push_back({csv_detail::integer(f[0], n, "iter"), csv_detail::number(f[1], n, "train_loss"),
                   csv_detail::number(f[2], n, "val_loss"), csv_detail::number(f[3], n, "dropout_p"),
                   csv_detail::number(f[4], n, "elapsed_s")});
  });
  return out;
}

inline constexpr const char* kCombinedCsvHeader = "schedule,iter,train_loss,val_loss,dropout_p";

struct CombinedRow {
  std::string schedule;
  std::int64_t iter = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double dropout_p = 0.0;
};

inline std::string combined_csv_rows(const std::string& schedule, const std::vector<MetricsRecord>& metrics) {
  std::string out;
  for (const auto& m : metrics)
    out += schedule + "," + std::to_string(m.iter) + "," + format_fixed(m.train_loss, 4) + "," +
           format_fixed(m.val_loss, 4) + "," + format_exact(m.dropout_p) + "\n";
  return out;
}

inline std::vector<CombinedRow> parse_combined_csv(std::string_view text) {
  std::vector<CombinedRow> out;
  csv_detail::parse(text, kCombinedCsvHeader, 5, [&](const auto& f, std::size_t n) {
    if (f[0].empty()) throw InputError("line " + std::to_string(n) + ": empty schedule label");
    out.push_back({f[0], csv_detail::integer(f[1], n, "iter"), csv_detail::number(f[2], n, "train_loss"),
                   csv_detail::number(f[3], n, "val_loss"), csv_detail::number(f[4], n, "dropout_p")});
  });
  return out;
}

// ---------------------------------------------------------------------------
// SVG: train and val panels side by side, one polyline per schedule.

namespace svg_detail {

inline constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                        "#9467bd", "#8c564b", "#e377c2", "#17becf"};

inline std::string escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string num(double v) { return format_fixed(v, 2); }

}  // namespace svg_detail

inline std::string render_svg(const std::vector<CombinedRow>& rows) {
  using namespace svg_detail;
  if (rows.empty()) throw InputError("no data to plot");

  std::vector<std::string> order;
  std::map<std::string, std::vector<const CombinedRow*>> series;
  for (const auto& r : rows) {
    if (!series.contains(r.schedule)) order.push_back(r.schedule);
    series[r.schedule].push_back(&r);
  }
  for (auto& [name, pts] : series)
    std::stable_sort(pts.begin(), pts.end(), [](const auto* a, const auto* b) { return a->iter < b->iter; });

  double x_lo = std::numeric_limits<double>::infinity(), x_hi = -x_lo, y_lo = x_lo, y_hi = -x_lo;
  for (const auto& r : rows) {
    x_lo = std::min(x_lo, static_cast<double>(r.iter));
    x_hi = std::max(x_hi, static_cast<double>(r.iter));
    y_lo = std::min({y_lo, r.train_loss, r.val_loss});
    y_hi = std::max({y_hi, r.train_loss, r.val_loss});
  }
  if (x_hi == x_lo) x_hi = x_lo + 1.0;
  if (y_hi == y_lo) y_hi = y_lo + 1.0;
  const double pad = 0.05 * (y_hi - y_lo);
  y_lo -= pad;
  y_hi += pad;

  constexpr double kW = 1000, kH = 440, kPw = 400, kPh = 300, kTop = 60;
  constexpr double kLeft[2] = {80, 580};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" viewBox=\"0 0 " << kW
    << " " << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
    << "Training and validation loss per dropout schedule</text>\n";

  for (int panel = 0; panel < 2; ++panel) {
    const double left = kLeft[panel];
    auto px = [&](double x) { return left + (x - x_lo) / (x_hi - x_lo) * kPw; };
    auto py = [&](double y) { return kTop + kPh - (y - y_lo) / (y_hi - y_lo) * kPh; };
    const char* title = panel == 0 ? "train" : "val";
    o << "<g class=\"panel\" id=\"" << title << "\">\n";
    o << "<text x=\"" << num(left + kPw / 2) << "\" y=\"" << num(kTop - 10) << "\" text-anchor=\"middle\">" << title
      << " loss</text>\n";
    o << "<rect x=\"" << num(left) << "\" y=\"" << num(kTop) << "\" width=\"" << num(kPw) << "\" height=\"" << num(kPh)
      << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
      const double xv = x_lo + (x_hi - x_lo) * k / 4.0;
      const double yv = y_lo + (y_hi - y_lo) * k / 4.0;
      o << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(kTop + kPh + 16) << "\" text-anchor=\"middle\">"
        << format_fixed(xv, 0) << "</text>\n";
      o << "<text x=\"" << num(left - 6) << "\" y=\"" << num(py(yv) + 4) << "\" text-anchor=\"end\">"
        << format_fixed(yv, 2) << "</text>\n";
      o << "<line x1=\"" << num(left) << "\" y1=\"" << num(py(yv)) << "\" x2=\"" << num(left + kPw) << "\" y2=\""
        << num(py(yv)) << "\" stroke=\"#dddddd\"/>\n";
    }
    o << "<text x=\"" << num(left + kPw / 2) << "\" y=\"" << num(kTop + kPh + 36)
      << "\" text-anchor=\"middle\">iteration</text>\n";
    o << "<text x=\"" << num(left - 50) << "\" y=\"" << num(kTop + kPh / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
      << num(left - 50) << " " << num(kTop + kPh / 2) << ")\">loss</text>\n";

    for (std::size_t s = 0; s < order.size(); ++s) {
      const char* color = kPalette[s % kPalette.size()];
      o << "<polyline class=\"series\" data-schedule=\"" << escape(order[s]) << "\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"";
      bool first = true;
      for (const auto* r : series[order[s]]) {
        o << (first ? "" : " ") << num(px(static_cast<double>(r->iter))) << ","
          << num(py(panel == 0 ? r->train_loss : r->val_loss));
        first = false;
      }
      o << "\"/>\n";
      const double ly = kTop + 14 + 16 * static_cast<double>(s);
      o << "<g class=\"legend\"><rect x=\"" << num(left + kPw - 110) << "\" y=\"" << num(ly - 9) << "\" width=\"12\" height=\""
        << "10\" fill=\"" << color << "\"/><text x=\"" << num(left + kPw - 92) << "\" y=\"" << num(ly) << "\">"
        << escape(order[s]) << "</text></g>\n";
    }
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

}  // namespace droprate
