// SPDX-License-Identifier: Apache-2.0

#include "tschain/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tschain/text.hpp"

namespace tschain {

namespace {

std::string opt_field(const std::optional<double>& x) { return x ? format_double(*x) : ""; }

void stats_fields(std::ostream& out, const std::optional<Stats>& s) {
  if (s)
    out << format_double(s->mean) << ',' << format_double(s->std) << ',' << format_double(s->min)
        << ',' << format_double(s->max);
  else
    out << ",,,";
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

template <typename RowFn>
void read_csv(const std::filesystem::path& path, const char* header, std::size_t fields,
              RowFn fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || trim(line) != header)
    throw ParseError(path.string() + ":1: unexpected header", 1);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != fields)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(fields) + " fields",
                       line_no);
    try {
      fn(f);
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
}

double need_double(const std::string& s) {
  const auto v = parse_double(s);
  if (!v) throw std::invalid_argument("invalid number '" + s + "'");
  return *v;
}

std::size_t need_size(const std::string& s) {
  const auto v = parse_u64(s);
  if (!v) throw std::invalid_argument("invalid integer '" + s + "'");
  return static_cast<std::size_t>(*v);
}

}  // namespace

void write_summary_csv(std::ostream& out, const RunSummary& summary) {
  out << kSummaryHeader << '\n';
  for (const auto& c : summary.cells) {
    out << format_double(c.fraction) << ',' << c.mode << ',' << c.n << ',' << c.total << ',';
    stats_fields(out, c.val);
    out << ',';
    stats_fields(out, c.test);
    out << ',' << c.note << '\n';
  }
}

void write_runs_csv(std::ostream& out, const std::vector<RunRow>& rows) {
  out << kRunsHeader << '\n';
  for (const auto& r : rows) {
    out << format_double(r.fraction) << ',' << r.mode << ',' << r.run << ',' << to_string(r.status)
        << ',' << (r.iteration ? std::to_string(*r.iteration) : "") << ',';
    if (r.status == RunStatus::skipped)
      out << ',';
    else
      out << format_double(r.val_accuracy) << ',' << format_double(r.test_accuracy);
    out << ',' << r.reason << '\n';
  }
}

void write_traces_csv(std::ostream& out, const std::vector<TraceRow>& traces) {
  std::vector<TraceRow> sorted = traces;
  std::stable_sort(sorted.begin(), sorted.end(), [](const TraceRow& a, const TraceRow& b) {
    if (a.fraction != b.fraction) return a.fraction < b.fraction;
    if (a.run != b.run) return a.run < b.run;
    return a.iteration < b.iteration;
  });
  out << kTracesHeader << '\n';
  for (const auto& t : sorted)
    out << t.run << ',' << format_double(t.fraction) << ',' << t.iteration << ','
        << format_double(t.val_accuracy) << ',' << format_double(t.test_accuracy) << ','
        << t.pseudo_count << ',' << opt_field(t.pseudo_agreement) << '\n';
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm,
                         const std::vector<std::string>& class_names) {
  out << "true\\predicted";
  for (std::size_t c = 0; c < cm.classes(); ++c)
    out << ',' << (c < class_names.size() ? class_names[c] : std::to_string(c));
  out << '\n';
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    out << (i < class_names.size() ? class_names[i] : std::to_string(i));
    for (std::size_t j = 0; j < cm.classes(); ++j) out << ',' << cm.at(i, j);
    out << '\n';
  }
}

std::vector<RunRow> read_runs_csv(const std::filesystem::path& path) {
  std::vector<RunRow> rows;
  read_csv(path, kRunsHeader, 8, [&](const std::vector<std::string>& f) {
    RunRow r;
    r.fraction = need_double(f[0]);
    r.mode = f[1];
    r.run = need_size(f[2]);
    const auto status = run_status_from_string(f[3]);
    if (!status) throw std::invalid_argument("unknown status '" + f[3] + "'");
    r.status = *status;
    if (!f[4].empty()) r.iteration = need_size(f[4]);
    if (!f[5].empty()) r.val_accuracy = need_double(f[5]);
    if (!f[6].empty()) r.test_accuracy = need_double(f[6]);
    r.reason = f[7];
    rows.push_back(std::move(r));
  });
  return rows;
}

std::vector<TraceRow> read_traces_csv(const std::filesystem::path& path) {
  std::vector<TraceRow> rows;
  read_csv(path, kTracesHeader, 7, [&](const std::vector<std::string>& f) {
    TraceRow t;
    t.run = need_size(f[0]);
    t.fraction = need_double(f[1]);
    t.iteration = need_size(f[2]);
    t.val_accuracy = need_double(f[3]);
    t.test_accuracy = need_double(f[4]);
    t.pseudo_count = need_size(f[5]);
    if (!f[6].empty()) t.pseudo_agreement = need_double(f[6]);
    rows.push_back(t);
  });
  return rows;
}

std::optional<double> best_baseline_mean(const RunSummary& summary) {
  std::optional<double> best;
  for (const auto& c : summary.cells)
    if (c.mode == mode::baseline && c.test && (!best || c.test->mean > *best)) best = c.test->mean;
  return best;
}

std::string render_chain_svg(const std::vector<TraceRow>& traces, std::optional<double> reference) {
  // fraction -> run -> points ordered by iteration
  std::map<double, std::map<std::size_t, std::map<std::size_t, double>>> panels;
  std::size_t max_iter = 1;
  double lo = 1.0, hi = 0.0;
  for (const auto& t : traces) {
    panels[t.fraction][t.run][t.iteration] = t.test_accuracy;
    max_iter = std::max(max_iter, t.iteration);
    lo = std::min(lo, t.test_accuracy);
    hi = std::max(hi, t.test_accuracy);
  }
  if (reference) {
    lo = std::min(lo, *reference);
    hi = std::max(hi, *reference);
  }
  if (lo > hi) {
    lo = 0.0;
    hi = 1.0;
  }
  lo = std::max(0.0, std::floor(lo * 20.0) / 20.0);
  hi = std::min(1.0, std::ceil(hi * 20.0) / 20.0);
  if (hi - lo < 0.05) hi = std::min(1.0, lo + 0.05), lo = hi - 0.05;

  constexpr double kW = 320, kH = 240, kLeft = 50, kRight = 15, kTop = 30, kBottom = 40;
  const std::size_t n_panels = std::max<std::size_t>(1, panels.size());
  static const char* kColors[] = {"#1f77b4", "#ff7f0e", "#d62728", "#9467bd", "#8c564b",
                                  "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#2ca02c"};

  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_fixed(kW * n_panels, 0)
    << "\" height=\"" << format_fixed(kH, 0) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::size_t p = 0;
  for (const auto& [fraction, runs] : panels) {
    const double x0 = kW * static_cast<double>(p) + kLeft;
    const double x1 = kW * static_cast<double>(p + 1) - kRight;
    const double y0 = kH - kBottom;
    const double y1 = kTop;
    const auto px = [&](double it) { return x0 + (x1 - x0) * it / static_cast<double>(max_iter); };
    const auto py = [&](double acc) { return y0 - (y0 - y1) * (acc - lo) / (hi - lo); };

    o << "<g class=\"panel\" data-fraction=\"" << format_double(fraction) << "\">\n";
    o << "<text x=\"" << format_fixed((x0 + x1) / 2, 2) << "\" y=\"18\" text-anchor=\"middle\">"
      << "labelled fraction " << format_double(fraction) << "</text>\n";
    o << "<line x1=\"" << format_fixed(x0, 2) << "\" y1=\"" << format_fixed(y0, 2) << "\" x2=\""
      << format_fixed(x1, 2) << "\" y2=\"" << format_fixed(y0, 2) << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << format_fixed(x0, 2) << "\" y1=\"" << format_fixed(y0, 2) << "\" x2=\""
      << format_fixed(x0, 2) << "\" y2=\"" << format_fixed(y1, 2) << "\" stroke=\"black\"/>\n";
    for (std::size_t it = 0; it <= max_iter; ++it)
      o << "<text x=\"" << format_fixed(px(static_cast<double>(it)), 2) << "\" y=\""
        << format_fixed(y0 + 14, 2) << "\" text-anchor=\"middle\">" << it << "</text>\n";
    for (int k = 0; k <= 4; ++k) {
      const double acc = lo + (hi - lo) * k / 4.0;
      o << "<text x=\"" << format_fixed(x0 - 4, 2) << "\" y=\"" << format_fixed(py(acc) + 4, 2)
        << "\" text-anchor=\"end\">" << format_fixed(acc, 3) << "</text>\n";
    }
    o << "<text x=\"" << format_fixed((x0 + x1) / 2, 2) << "\" y=\"" << format_fixed(kH - 6, 2)
      << "\" text-anchor=\"middle\">iteration</text>\n";
    if (reference)
      o << "<line class=\"reference\" x1=\"" << format_fixed(x0, 2) << "\" y1=\""
        << format_fixed(py(*reference), 2) << "\" x2=\"" << format_fixed(x1, 2) << "\" y2=\""
        << format_fixed(py(*reference), 2)
        << "\" stroke=\"#2ca02c\" stroke-dasharray=\"6,3\"/>\n";
    std::size_t color = 0;
    for (const auto& [run, points] : runs) {
      o << "<polyline class=\"run\" data-run=\"" << run << "\" fill=\"none\" stroke=\""
        << kColors[color++ % std::size(kColors)] << "\" points=\"";
      bool first = true;
      for (const auto& [it, acc] : points) {
        o << (first ? "" : " ") << format_fixed(px(static_cast<double>(it)), 2) << ','
          << format_fixed(py(acc), 2);
        first = false;
      }
      o << "\"/>\n";
    }
    o << "</g>\n";
    ++p;
  }
  o << "</svg>\n";
  return o.str();
}

void emit_outputs(const ExperimentResult& result, const std::filesystem::path& out_dir,
                  const std::string& primary_mode, const std::string& config_text) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create " + out_dir.string() + ": " + ec.message());

  std::ostringstream s;
  write_summary_csv(s, result.summary);
  write_file(out_dir / "summary.csv", s.str());

  std::ostringstream r;
  write_runs_csv(r, result.summary.rows);
  write_file(out_dir / "runs.csv", r.str());

  std::ostringstream t;
  write_traces_csv(t, result.traces);
  write_file(out_dir / "traces.csv", t.str());

  for (const auto& c : result.confusions) {
    std::ostringstream cm;
    write_confusion_csv(cm, c.confusion, result.class_names);
    const std::string prefix = c.mode == primary_mode ? "" : c.mode + "_";
    write_file(out_dir / (prefix + "confusion_" + format_double(c.fraction) + "_" +
                          std::to_string(c.run) + ".csv"),
               cm.str());
  }

  write_file(out_dir / "chain_curves.svg",
             render_chain_svg(result.traces, best_baseline_mean(result.summary)));
  if (!config_text.empty()) write_file(out_dir / "config.txt", config_text);
}

}  // namespace tschain
