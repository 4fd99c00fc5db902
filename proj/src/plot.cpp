#include "teb/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace teb {

namespace {

constexpr double kW = 480, kH = 320, kLeft = 64, kRight = 16, kTop = 32, kBottom = 48;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// Chart body placed at (ox, oy).
std::string chart(double ox, double oy, const std::string& title, const std::string& xlabel,
                  const std::vector<Series>& series, double hline, const std::string& hline_label) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const double e = i < s.err.size() && std::isfinite(s.err[i]) ? s.err[i] : 0.0;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i] - e);
      y1 = std::max(y1, s.y[i] + e);
    }
  }
  if (std::isfinite(hline)) {
    y0 = std::min(y0, hline);
    y1 = std::max(y1, hline);
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return ox + kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return oy + kTop + (1 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  o << "<text x='" << ox + kW / 2 << "' y='" << oy + 20 << "' text-anchor='middle' font-size='14'>" << esc(title)
    << "</text>\n";
  o << "<rect x='" << ox + kLeft << "' y='" << oy + kTop << "' width='" << pw << "' height='" << ph
    << "' fill='none' stroke='#444'/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4, yv = y0 + (y1 - y0) * t / 4;
    o << "<text x='" << px(xv) << "' y='" << oy + kTop + ph + 16 << "' text-anchor='middle' font-size='10'>"
      << num(xv) << "</text>\n";
    o << "<text x='" << ox + kLeft - 4 << "' y='" << py(yv) + 3 << "' text-anchor='end' font-size='10'>" << num(yv)
      << "</text>\n";
  }
  o << "<text x='" << ox + kLeft + pw / 2 << "' y='" << oy + kH - 8 << "' text-anchor='middle' font-size='12'>"
    << esc(xlabel) << "</text>\n";
  if (std::isfinite(hline)) {
    o << "<line x1='" << px(x0) << "' x2='" << px(x1) << "' y1='" << py(hline) << "' y2='" << py(hline)
      << "' stroke='#2ca02c' stroke-dasharray='6,4'/>\n";
    if (!hline_label.empty()) {
      o << "<text x='" << px(x1) - 4 << "' y='" << py(hline) - 4 << "' text-anchor='end' font-size='10' fill='#2ca02c'>"
        << esc(hline_label) << "</text>\n";
    }
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* col = kColors[k % 5];
    std::ostringstream pts;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) pts << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    o << "<polyline fill='none' stroke='" << col << "' stroke-width='1.5' points='" << pts.str() << "'/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      o << "<circle cx='" << px(s.x[i]) << "' cy='" << py(s.y[i]) << "' r='2.5' fill='" << col << "'/>\n";
      if (i < s.err.size() && std::isfinite(s.err[i]) && s.err[i] > 0) {
        o << "<line x1='" << px(s.x[i]) << "' x2='" << px(s.x[i]) << "' y1='" << py(s.y[i] - s.err[i]) << "' y2='"
          << py(s.y[i] + s.err[i]) << "' stroke='" << col << "'/>\n";
      }
    }
    o << "<text x='" << ox + kLeft + 8 << "' y='" << oy + kTop + 14 + 14 * static_cast<double>(k)
      << "' font-size='11' fill='" << col << "'>" << esc(s.name) << "</text>\n";
  }
  return o.str();
}

std::string wrap(double w, double h, const std::string& body) {
  std::ostringstream o;
  o << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "' viewBox='0 0 " << w << " "
    << h << "'>\n<rect width='100%' height='100%' fill='white'/>\n"
    << body << "</svg>\n";
  return o.str();
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& xlabel, const std::vector<Series>& series,
                           double hline, const std::string& hline_label) {
  return wrap(kW, kH, chart(0, 0, title, xlabel, series, hline, hline_label));
}

std::string sweep_svg(const std::vector<BetaAggregate>& agg, double true_te) {
  Series te{"te_metric (nats)", {}, {}, {}}, ll{"recon loglik", {}, {}, {}};
  for (const auto& a : agg) {
    te.x.push_back(a.beta);
    te.y.push_back(a.te_mean);
    te.err.push_back(a.te_std);
    ll.x.push_back(a.beta);
    ll.y.push_back(a.loglik_mean);
    ll.err.push_back(a.loglik_std);
  }
  return wrap(2 * kW, kH,
              chart(0, 0, "information metric vs beta", "beta", {te}, true_te, "true TE") +
                  chart(kW, 0, "reconstruction log-likelihood vs beta", "beta", {ll}, EvalMetrics::kNaN, ""));
}

std::string loss_svg(const std::vector<EpochRecord>& epochs) {
  Series loss{"loss", {}, {}, {}}, kl{"kl", {}, {}, {}}, ll{"loglik", {}, {}, {}}, vll{"val loglik", {}, {}, {}};
  for (const auto& e : epochs) {
    for (auto* s : {&loss, &kl, &ll, &vll}) s->x.push_back(e.epoch);
    loss.y.push_back(e.loss);
    kl.y.push_back(e.kl);
    ll.y.push_back(e.loglik);
    vll.y.push_back(e.val_loglik);
  }
  return wrap(2 * kW, kH,
              chart(0, 0, "training loss and KL", "epoch", {loss, kl}, EvalMetrics::kNaN, "") +
                  chart(kW, 0, "log-likelihood", "epoch", {ll, vll}, EvalMetrics::kNaN, ""));
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << text;
  if (!out) throw FormatError("write failed for " + path);
}

}  // namespace teb
