#include "s2d/cli/plot.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "s2d/core/error.hpp"

namespace s2d::cli {
namespace {

constexpr int kWidth = 640, kHeight = 400;
constexpr int kLeft = 60, kRight = 20, kTop = 40, kBottom = 50;

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, '\t')) out.push_back(cell);
    return out;
}

std::string num(double v, int prec = 6) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct Axes {
    double x0, x1, y0, y1;
    double px(double x) const { return kLeft + (x - x0) / (x1 - x0) * (kWidth - kLeft - kRight); }
    double py(double y) const { return kHeight - kBottom - (y - y0) / (y1 - y0) * (kHeight - kTop - kBottom); }
};

std::string svg_open(const std::string& title) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(kWidth) + "\" height=\"" +
           std::to_string(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n" +
           "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n" + "<text x=\"" + std::to_string(kWidth / 2) +
           "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + escape(title) + "</text>\n";
}

std::string frame(const Axes& a, const std::string& xlabel, const std::string& ylabel) {
    std::ostringstream s;
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << kWidth - kRight << "\" y2=\""
      << kHeight - kBottom << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kHeight - kBottom
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double y = a.y0 + (a.y1 - a.y0) * i / 4.0;
        s << "<text x=\"" << kLeft - 6 << "\" y=\"" << num(a.py(y) + 4) << "\" text-anchor=\"end\">" << num(y, 3)
          << "</text>\n";
    }
    s << "<text x=\"" << kLeft << "\" y=\"" << kHeight - kBottom + 16 << "\">" << num(a.x0) << "</text>\n";
    s << "<text x=\"" << kWidth - kRight << "\" y=\"" << kHeight - kBottom + 16 << "\" text-anchor=\"end\">"
      << num(a.x1) << "</text>\n";
    s << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 12 << "\" text-anchor=\"middle\">"
      << escape(xlabel) << "</text>\n";
    s << "<text x=\"16\" y=\"" << (kTop + kHeight - kBottom) / 2 << "\" transform=\"rotate(-90 16 "
      << (kTop + kHeight - kBottom) / 2 << ")\" text-anchor=\"middle\">" << escape(ylabel) << "</text>\n";
    return s.str();
}

}  // namespace

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::io, "cannot read " + path.string());
    std::vector<MetricsRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (lineno == 1 || line.empty()) continue;  // header
        const auto cells = split_tabs(line);
        if (cells.size() != 5) {
            throw Error(ErrorKind::data, path.string() + ":" + std::to_string(lineno) + ": expected 5 columns");
        }
        try {
            rows.push_back({std::stol(cells[0]), cells[1], cells[2], std::stod(cells[3]), std::stod(cells[4])});
        } catch (const std::exception&) {
            throw Error(ErrorKind::data, path.string() + ":" + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

std::vector<std::string> plotted_stages(const std::vector<MetricsRow>& rows) {
    std::vector<std::string> out;
    for (const auto& r : rows) {
        if (r.stage == "warmup" || r.stage == "eval") continue;
        if (std::find(out.begin(), out.end(), r.stage) == out.end()) out.push_back(r.stage);
    }
    return out;
}

std::string loss_table(const std::vector<MetricsRow>& rows, const std::string& stage) {
    std::map<long, std::pair<std::string, std::string>> by_step;
    for (const auto& r : rows) {
        if (r.stage != stage) continue;
        if (r.split == "train") by_step[r.step].first = num(r.loss);
        if (r.split == "val") by_step[r.step].second = num(r.loss);
    }
    std::string out = "step\ttrain\tval\n";
    for (const auto& [step, v] : by_step) out += std::to_string(step) + "\t" + v.first + "\t" + v.second + "\n";
    return out;
}

std::string loss_svg(const std::vector<MetricsRow>& rows, const std::string& stage) {
    std::vector<std::pair<double, double>> train, val;
    for (const auto& r : rows) {
        if (r.stage != stage) continue;
        if (r.split == "train") train.emplace_back(static_cast<double>(r.step), r.loss);
        if (r.split == "val") val.emplace_back(static_cast<double>(r.step), r.loss);
    }
    Axes a{std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(), 0, 0};
    double ymax = 0;
    for (const auto* series : {&train, &val}) {
        for (const auto& [x, y] : *series) {
            a.x0 = std::min(a.x0, x);
            a.x1 = std::max(a.x1, x);
            ymax = std::max(ymax, y);
        }
    }
    if (train.empty() && val.empty()) a.x0 = 0, a.x1 = 1;
    if (a.x1 <= a.x0) a.x1 = a.x0 + 1;
    a.y1 = ymax > 0 ? ymax * 1.05 : 1;
    std::string s = svg_open("stage " + stage + " loss") + frame(a, "global step", "loss (nats/token)");
    auto polyline = [&](const std::vector<std::pair<double, double>>& pts, const char* colour) {
        std::string p = "<polyline fill=\"none\" stroke=\"" + std::string(colour) + "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) p += num(a.px(x)) + "," + num(a.py(y)) + " ";
        return p + "\"/>\n";
    };
    s += polyline(train, "#1f77b4");
    s += polyline(val, "#d62728");
    for (const auto& [x, y] : val) {
        s += "<circle cx=\"" + num(a.px(x)) + "\" cy=\"" + num(a.py(y)) + "\" r=\"3\" fill=\"#d62728\"/>\n";
    }
    s += "<text x=\"" + std::to_string(kWidth - kRight - 90) + "\" y=\"" + std::to_string(kTop + 14) +
         "\" fill=\"#1f77b4\">train</text>\n";
    s += "<text x=\"" + std::to_string(kWidth - kRight - 40) + "\" y=\"" + std::to_string(kTop + 14) +
         "\" fill=\"#d62728\">val</text>\n";
    return s + "</svg>\n";
}

std::string bar_svg(const std::vector<Bar>& bars, const std::string& title) {
    double ymax = 0;
    for (const auto& b : bars) ymax = std::max(ymax, b.value + b.error);
    Axes a{0, static_cast<double>(std::max<std::size_t>(1, bars.size())), 0, ymax > 0 ? ymax * 1.1 : 1};
    std::string s = svg_open(title) + frame(a, "", "CE-F1");
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        const double x0 = a.px(static_cast<double>(i) + 0.15), x1 = a.px(static_cast<double>(i) + 0.85);
        s += "<rect x=\"" + num(x0) + "\" y=\"" + num(a.py(b.value)) + "\" width=\"" + num(x1 - x0) + "\" height=\"" +
             num(a.py(0) - a.py(b.value)) + "\" fill=\"#4c72b0\"/>\n";
        const double xm = (x0 + x1) / 2;
        s += "<line x1=\"" + num(xm) + "\" y1=\"" + num(a.py(b.value - b.error)) + "\" x2=\"" + num(xm) + "\" y2=\"" +
             num(a.py(b.value + b.error)) + "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + num(xm) + "\" y=\"" + std::to_string(kHeight - kBottom + 30) +
             "\" text-anchor=\"middle\" font-size=\"10\">" + escape(b.label) + "</text>\n";
    }
    return s + "</svg>\n";
}

std::vector<Bar> read_table_bars(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::io, "cannot read " + path.string());
    std::string line;
    std::getline(f, line);
    const auto header = split_tabs(line);
    const auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error(ErrorKind::data, path.string() + ": no column " + name);
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t variant = col("variant"), f1 = col("ce_f1"), sd = col("ce_f1_sd");
    std::vector<Bar> bars;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (cells.size() < header.size() - 1) throw Error(ErrorKind::data, path.string() + ": short row");
        bars.push_back({cells[variant], std::stod(cells[f1]), std::stod(cells[sd])});
    }
    return bars;
}

}  // namespace s2d::cli
