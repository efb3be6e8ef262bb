#include "ssmkit/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ssmkit::io {

namespace {

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

}  // namespace

void write_hsv_csv(const std::string& path, const HsvReport& report) {
  auto out = open_out(path);
  out << "layer,index,sigma,cumulative_energy_fraction\n";
  for (std::size_t l = 0; l < report.layer_sigmas.size(); ++l) {
    const Eigen::VectorXd& s = report.layer_sigmas[l];
    const double total = s.sum();
    double run = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      run += s[i];
      const double frac = total > 0.0 ? run / total : 0.0;
      out << l << ',' << (i + 1) << ',' << g17(s[i]) << ',' << g17(frac) << '\n';
    }
  }
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
  auto out = open_out(path);
  out << "epoch,train_loss,ce,reg,eval_acc,wall_time_s\n";
  for (const auto& r : rows) {
    out << r.epoch << ',' << g17(r.train_loss) << ',' << g17(r.ce) << ',' << g17(r.reg) << ','
        << g17(r.eval_acc) << ',' << g17(r.wall_time_s) << '\n';
  }
}

void write_certificate_csv(const std::string& path, const std::vector<CertRow>& rows) {
  auto out = open_out(path);
  out << "layer,r,tail_sum,bound_constant\n";
  for (const auto& r : rows) {
    out << r.layer << ',' << r.r << ',' << g17(r.tail_sum) << ',' << g17(r.bound_constant)
        << '\n';
  }
}

void write_hsv_svg(const std::string& path, const HsvReport& report) {
  const double width = 640, height = 420;
  const double ml = 70, mr = 20, mt = 20, mb = 45;  // margins
  const double px = width - ml - mr, py = height - mt - mb;

  Eigen::Index max_n = 1;
  double lo = 0.0, hi = 1.0;
  bool any = false;
  for (const auto& s : report.layer_sigmas) {
    max_n = std::max(max_n, s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s[i] <= 0.0) continue;
      const double lg = std::log10(s[i]);
      if (!any) {
        lo = hi = lg;
        any = true;
      } else {
        lo = std::min(lo, lg);
        hi = std::max(hi, lg);
      }
    }
  }
  if (!any) {
    lo = -1.0;
    hi = 0.0;
  }
  lo = std::floor(lo);
  hi = std::ceil(hi);
  if (hi - lo < 1.0) hi = lo + 1.0;

  const auto xpos = [&](double idx) { return ml + px * (idx - 1.0) / std::max<double>(1.0, max_n - 1); };
  const auto ypos = [&](double lg) { return mt + py * (hi - lg) / (hi - lo); };

  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                 "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

  auto out = open_out(path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
      << height << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // frame + horizontal grid per decade
  out << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << px << "\" height=\"" << py
      << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (double lg = lo; lg <= hi + 1e-9; lg += 1.0) {
    const double y = ypos(lg);
    out << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << ml + px << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n";
    out << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
        << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\">1e"
        << static_cast<int>(lg) << "</text>\n";
  }
  out << "<text x=\"" << ml + px / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">index</text>\n";
  out << "<text x=\"16\" y=\"" << mt + py / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 16 "
      << mt + py / 2 << ")\">singular value</text>\n";

  for (std::size_t l = 0; l < report.layer_sigmas.size(); ++l) {
    const Eigen::VectorXd& s = report.layer_sigmas[l];
    const char* color = colors[l % (sizeof(colors) / sizeof(colors[0]))];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      const double lg = s[i] > 0.0 ? std::log10(s[i]) : lo;  // zeros pinned to the floor
      out << xpos(static_cast<double>(i + 1)) << ',' << std::max(ypos(lg), mt) << ' ';
    }
    out << "\"/>\n";
    out << "<text x=\"" << ml + px - 6 << "\" y=\"" << mt + 16 + 16 * static_cast<double>(l)
        << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" << color
        << "\">layer " << l << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace ssmkit::io
