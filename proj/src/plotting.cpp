#include "hapfuse/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace hapfuse {

namespace {

constexpr int kW = 640, kH = 400;
constexpr int kMarginL = 60, kMarginR = 20, kMarginT = 40, kMarginB = 60;

std::string esc(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void open_svg(std::ofstream& f, const std::string& title) {
  f << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\""
    << kH << "\" viewBox=\"0 0 " << kW << " " << kH << "\">\n";
  f << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  f << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" "
       "font-family=\"sans-serif\" font-size=\"16\">"
    << esc(title) << "</text>\n";
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

}  // namespace

void svg_bar_chart(const std::filesystem::path& path, const std::string& title,
                   const std::vector<std::string>& labels,
                   const std::vector<double>& values) {
  std::ofstream f(path);
  open_svg(f, title);
  if (!values.empty()) {
    const double vmax = std::max(1e-12, *std::max_element(values.begin(), values.end()));
    const int plot_w = kW - kMarginL - kMarginR;
    const int plot_h = kH - kMarginT - kMarginB;
    const double slot = double(plot_w) / double(values.size());
    const double bar_w = slot * 0.6;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double h = plot_h * values[i] / vmax;
      const double x = kMarginL + slot * i + (slot - bar_w) / 2;
      const double y = kMarginT + plot_h - h;
      f << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << bar_w
        << "\" height=\"" << h << "\" fill=\"#4878a8\"/>\n";
      f << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << y - 4
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << fmt(values[i]) << "</text>\n";
      f << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << kMarginT + plot_h + 16
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
        << esc(i < labels.size() ? labels[i] : "") << "</text>\n";
    }
    f << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT + plot_h << "\" x2=\""
      << kW - kMarginR << "\" y2=\"" << kMarginT + plot_h
      << "\" stroke=\"black\"/>\n";
  }
  f << "</svg>\n";
}

void svg_line_chart(const std::filesystem::path& path, const std::string& title,
                    const std::vector<double>& xs, const std::vector<double>& ys) {
  std::ofstream f(path);
  open_svg(f, title);
  if (xs.size() >= 2 && xs.size() == ys.size()) {
    const double xmin = xs.front(), xmax = std::max(xs.back(), xmin + 1e-12);
    double ymin = *std::min_element(ys.begin(), ys.end());
    double ymax = *std::max_element(ys.begin(), ys.end());
    if (ymax - ymin < 1e-12) ymax = ymin + 1e-12;
    const int plot_w = kW - kMarginL - kMarginR;
    const int plot_h = kH - kMarginT - kMarginB;
    f << "<polyline fill=\"none\" stroke=\"#a84848\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double px = kMarginL + plot_w * (xs[i] - xmin) / (xmax - xmin);
      const double py = kMarginT + plot_h * (1.0 - (ys[i] - ymin) / (ymax - ymin));
      f << px << "," << py << " ";
    }
    f << "\"/>\n";
    f << "<line x1=\"" << kMarginL << "\" y1=\"" << kMarginT + plot_h << "\" x2=\""
      << kW - kMarginR << "\" y2=\"" << kMarginT + plot_h << "\" stroke=\"black\"/>\n";
    f << "<text x=\"" << kMarginL << "\" y=\"" << kMarginT + plot_h + 16
      << "\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(xmin) << "</text>\n";
    f << "<text x=\"" << kW - kMarginR << "\" y=\"" << kMarginT + plot_h + 16
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt(xmax) << "</text>\n";
    f << "<text x=\"" << kMarginL - 6 << "\" y=\"" << kMarginT + 10
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt(ymax) << "</text>\n";
    f << "<text x=\"" << kMarginL - 6 << "\" y=\"" << kMarginT + plot_h
      << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
      << fmt(ymin) << "</text>\n";
  }
  f << "</svg>\n";
}

}  // namespace hapfuse
