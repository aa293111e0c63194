#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "kdlab/binio.hpp"
#include "kdlab/core.hpp"
#include "kdlab/harness/record.hpp"
#include "kdlab/metrics/export.hpp"

namespace kdl::harness {

using metrics::format_real;

enum class ReportKind { scatter_csv, bars_csv, reliability_csv, svg };

inline ReportKind report_kind_from_string(const std::string& s) {
  if (s == "scatter_csv") return ReportKind::scatter_csv;
  if (s == "bars_csv") return ReportKind::bars_csv;
  if (s == "reliability_csv") return ReportKind::reliability_csv;
  if (s == "svg") return ReportKind::svg;
  fail(ErrorKind::argument, "unknown report kind '", s, "' (scatter_csv, bars_csv, reliability_csv, svg)");
}

/// Summary numbers of one record as they appear in reports. Teacher IoU is the mean over epochs;
/// fidelity, KL and MI are final-epoch values.
struct ReportRow {
  std::string trial;
  std::string mode;
  double affinity = 0.0;
  double val_acc = 0.0;
  double train_acc = 0.0;
  double acc_gap = 0.0;
  double augmented_val_acc = 0.0;
  double top1_agreement = 0.0;
  double kl_fidelity = 0.0;
  double mutual_information = 0.0;
  double mean_teacher_iou = 0.0;
  double mean_entropy = 0.0;
  double ece = 0.0;

  bool operator==(const ReportRow&) const = default;
};

inline constexpr std::array<const char*, 11> report_numeric_columns = {
    "affinity",       "val_acc",     "train_acc",          "acc_gap",          "augmented_val_acc", "top1_agreement",
    "kl_fidelity",    "mutual_information", "mean_teacher_iou", "mean_entropy", "ece"};

inline std::string record_mode(const RunRecord& r) {
  if (r.kind == "teacher") return "teacher";
  const auto& c = r.config;
  if (c.contains("trial") && c["trial"].contains("hkd") && c["trial"]["hkd"].is_boolean())
    return c["trial"]["hkd"].get<bool>() ? "hkd" : "vkd";
  return "vkd";
}

inline ReportRow report_row(const RunRecord& r) {
  ReportRow row;
  row.trial = r.trial;
  row.mode = record_mode(r);
  row.affinity = r.affinity;
  row.val_acc = r.final_val_acc;
  row.train_acc = r.final_train_acc;
  row.acc_gap = r.acc_gap;
  row.augmented_val_acc = r.augmented_val_acc;
  if (!r.epochs.empty()) {
    row.top1_agreement = r.last().top1_agreement;
    row.kl_fidelity = r.last().kl_fidelity;
    row.mutual_information = r.last().mutual_information;
    row.mean_entropy = r.last().mean_entropy;
  }
  row.mean_teacher_iou = r.mean_iou();
  row.ece = r.ece;
  return row;
}

inline double ReportRow::*column_member(const std::string& name) {
  if (name == "affinity") return &ReportRow::affinity;
  if (name == "val_acc") return &ReportRow::val_acc;
  if (name == "train_acc") return &ReportRow::train_acc;
  if (name == "acc_gap") return &ReportRow::acc_gap;
  if (name == "augmented_val_acc") return &ReportRow::augmented_val_acc;
  if (name == "top1_agreement") return &ReportRow::top1_agreement;
  if (name == "kl_fidelity") return &ReportRow::kl_fidelity;
  if (name == "mutual_information") return &ReportRow::mutual_information;
  if (name == "mean_teacher_iou") return &ReportRow::mean_teacher_iou;
  if (name == "mean_entropy") return &ReportRow::mean_entropy;
  if (name == "ece") return &ReportRow::ece;
  fail(ErrorKind::argument, "unknown report column '", name, "'");
}

inline double column(const ReportRow& r, const std::string& name) { return r.*column_member(name); }

/// One row per record: trial, mode, then every numeric column.
inline std::string scatter_csv(const std::vector<RunRecord>& records) {
  std::string out = "trial,mode";
  for (const char* c : report_numeric_columns) out += std::string(",") + c;
  out += '\n';
  for (const auto& rec : records) {
    const auto row = report_row(rec);
    out += row.trial + ',' + row.mode;
    for (const char* c : report_numeric_columns) out += ',' + format_real(column(row, c));
    out += '\n';
  }
  return out;
}

/// Acc gap and fidelity per trial, for grouped bar charts.
inline std::string bars_csv(const std::vector<RunRecord>& records) {
  std::string out = "trial,mode,acc_gap,top1_agreement,kl_fidelity,mean_teacher_iou\n";
  for (const auto& rec : records) {
    const auto row = report_row(rec);
    out += row.trial + ',' + row.mode + ',' + format_real(row.acc_gap) + ',' + format_real(row.top1_agreement) + ',' +
           format_real(row.kl_fidelity) + ',' + format_real(row.mean_teacher_iou) + '\n';
  }
  return out;
}

inline std::string reliability_table_csv(const std::vector<RunRecord>& records) {
  std::string out = "trial,mode,bin_low,bin_high,count,accuracy,confidence\n";
  for (const auto& rec : records) {
    const std::string mode = record_mode(rec);
    for (const auto& b : rec.reliability)
      out += rec.trial + ',' + mode + ',' + format_real(b.low) + ',' + format_real(b.high) + ',' +
             std::to_string(b.count) + ',' + format_real(b.accuracy) + ',' + format_real(b.confidence) + '\n';
  }
  return out;
}

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string fmt(double v, int digits = 3) {
  std::ostringstream oss;
  oss.precision(digits);
  oss << v;
  return oss.str();
}

}  // namespace detail

/// Self-contained scatter plot, one labelled point per record.
inline std::string scatter_svg(const std::vector<RunRecord>& records, const std::string& x_col = "mean_teacher_iou",
                               const std::string& y_col = "val_acc") {
  const double W = 640, H = 480, L = 70, R = 20, Tm = 30, B = 60;
  std::vector<ReportRow> rows;
  for (const auto& r : records) rows.push_back(report_row(r));
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!rows.empty()) {
    x0 = y0 = 1e300;
    x1 = y1 = -1e300;
    for (const auto& r : rows) {
      x0 = std::min(x0, column(r, x_col));
      x1 = std::max(x1, column(r, x_col));
      y0 = std::min(y0, column(r, y_col));
      y1 = std::max(y1, column(r, y_col));
    }
    const double px = std::max(1e-6, (x1 - x0) * 0.1), py = std::max(1e-6, (y1 - y0) * 0.1);
    x0 -= px, x1 += px, y0 -= py, y1 += py;
  }
  auto sx = [&](double v) { return L + (v - x0) / (x1 - x0) * (W - L - R); };
  auto sy = [&](double v) { return H - B - (v - y0) / (y1 - y0) * (H - Tm - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << Tm << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y0 + (y1 - y0) * i / 4.0;
    s << "<text x=\"" << sx(xv) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << detail::fmt(xv) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << detail::fmt(yv) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << detail::xml_escape(x_col) << "</text>\n";
  s << "<text x=\"16\" y=\"" << (Tm + H - B) / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (Tm + H - B) / 2
    << ")\">" << detail::xml_escape(y_col) << "</text>\n";
  for (const auto& r : rows) {
    const double cx = sx(column(r, x_col)), cy = sy(column(r, y_col));
    const char* colour = r.mode == "hkd" ? "#d95f02" : "#1b9e77";
    s << "<circle cx=\"" << cx << "\" cy=\"" << cy << "\" r=\"4\" fill=\"" << colour << "\"/>\n";
    s << "<text x=\"" << cx + 6 << "\" y=\"" << cy - 6 << "\">" << detail::xml_escape(r.trial) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

inline std::string render_report(const std::vector<RunRecord>& records, ReportKind kind,
                                 const std::string& x_col = "mean_teacher_iou", const std::string& y_col = "val_acc") {
  switch (kind) {
    case ReportKind::scatter_csv: return scatter_csv(records);
    case ReportKind::bars_csv: return bars_csv(records);
    case ReportKind::reliability_csv: return reliability_table_csv(records);
    case ReportKind::svg: return scatter_svg(records, x_col, y_col);
  }
  return {};
}

inline void emit_report(const std::vector<RunRecord>& records, ReportKind kind, const std::string& out_path,
                        const std::string& x_col = "mean_teacher_iou", const std::string& y_col = "val_acc") {
  binio::write_file(out_path, render_report(records, kind, x_col, y_col));
}

/// Reads a scatter_csv table back.
inline std::vector<ReportRow> read_scatter_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::schema, "scatter csv: missing header");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string cell;
    while (std::getline(h, cell, ',')) header.push_back(cell);
  }
  if (header.size() != 2 + report_numeric_columns.size() || header[0] != "trial" || header[1] != "mode")
    fail(ErrorKind::schema, "scatter csv: unexpected header '", line, "'");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> cells;
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != header.size()) fail(ErrorKind::schema, "scatter csv: row has ", cells.size(), " cells");
    ReportRow r;
    r.trial = cells[0];
    r.mode = cells[1];
    for (std::size_t i = 2; i < cells.size(); ++i) {
      auto v = metrics::parse_real(cells[i]);
      if (!v) fail(ErrorKind::schema, "scatter csv: '", cells[i], "' is not a number");
      r.*column_member(header[i]) = *v;
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace kdl::harness
