#include "vitforge/artifacts.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vitforge {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

template <typename N>
N parse_number(const std::string& s, const char* what) {
  N v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error(fmt::format("malformed {} '{}'", what, s));
  }
  return v;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

// Linear blend from white to a deep blue.
std::string heat_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  const auto mix = [t](int lo, int hi) { return static_cast<int>(std::lround(lo + (hi - lo) * t)); };
  return fmt::format("#{:02x}{:02x}{:02x}", mix(247, 8), mix(251, 48), mix(255, 107));
}

struct Series {
  std::vector<double> values;
  const char* label;
  const char* color;
};

std::string panel(double x0, double y0, double w, double h, const std::string& title, std::span<const Series> series,
                  std::size_t epochs) {
  double lo = 0.0;
  double hi = 0.0;
  bool first = true;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      lo = first ? v : std::min(lo, v);
      hi = first ? v : std::max(hi, v);
      first = false;
    }
  }
  lo = std::min(lo, 0.0);
  if (hi <= lo) hi = lo + 1.0;
  const auto px = [&](std::size_t i) {
    return epochs <= 1 ? x0 + w / 2 : x0 + w * static_cast<double>(i) / static_cast<double>(epochs - 1);
  };
  const auto py = [&](double v) { return y0 + h - h * (v - lo) / (hi - lo); };

  std::string out = fmt::format(
      "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n"
      "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"none\" stroke=\"#444\"/>\n",
      x0 + w / 2, y0 - 10, xml_escape(title), x0, y0, w, h);
  for (int tick = 0; tick <= 4; ++tick) {
    const double v = lo + (hi - lo) * tick / 4.0;
    out += fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"#ddd\"/>\n"
        "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"end\">{:.3g}</text>\n",
        x0, py(v), x0 + w, py(v), x0 - 4, py(v) + 3, v);
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"middle\">epoch</text>\n",
                     x0 + w / 2, y0 + h + 28);
  if (epochs > 0) {
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"middle\">1</text>\n", px(0),
                       y0 + h + 14);
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
                       px(epochs - 1), y0 + h + 14, epochs);
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    std::string points;
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (!std::isfinite(s.values[i])) continue;
      points += fmt::format("{}{:.1f},{:.1f}", points.empty() ? "" : " ", px(i), py(s.values[i]));
    }
    out += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n", s.color, points);
    out += fmt::format(
        "<line x1=\"{:.1f}\" y1=\"{:.1f}\" x2=\"{:.1f}\" y2=\"{:.1f}\" stroke=\"{}\" stroke-width=\"2\"/>"
        "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"10\">{}</text>\n",
        x0 + 8, y0 + 12 + 14.0 * k, x0 + 24, y0 + 12 + 14.0 * k, s.color, x0 + 28, y0 + 15 + 14.0 * k, s.label);
  }
  return out;
}

}  // namespace

std::string curves_csv(std::span<const EpochRecord> history) {
  std::string out = std::string(kCurvesHeader) + "\n";
  for (const auto& r : history) {
    out += fmt::format("{},{},{},{},{},{},{}\n", r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc,
                       r.val_precision_macro, r.val_recall_macro);
  }
  return out;
}

std::vector<EpochRecord> parse_curves_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != kCurvesHeader) throw std::runtime_error("curves table lacks the expected header");
  std::vector<EpochRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto c = split_csv(lines[i]);
    if (c.size() != 7) throw std::runtime_error(fmt::format("curves row {} has {} fields", i, c.size()));
    out.push_back(EpochRecord{parse_number<std::size_t>(c[0], "epoch"), parse_number<double>(c[1], "value"),
                              parse_number<double>(c[2], "value"), parse_number<double>(c[3], "value"),
                              parse_number<double>(c[4], "value"), parse_number<double>(c[5], "value"),
                              parse_number<double>(c[6], "value")});
  }
  return out;
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::string out = "true\\predicted";
  for (const auto& n : cm.class_names()) out += "," + n;
  out += '\n';
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    out += cm.class_names()[i];
    for (std::size_t j = 0; j < cm.num_classes(); ++j) out += fmt::format(",{}", cm.at(i, j));
    out += '\n';
  }
  return out;
}

ConfusionMatrix parse_confusion_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw std::runtime_error("empty confusion table");
  auto header = split_csv(lines[0]);
  const std::size_t k = header.size() - 1;
  if (k == 0 || lines.size() != k + 1) throw std::runtime_error("confusion table is not square");
  std::vector<std::string> names(header.begin() + 1, header.end());
  ConfusionMatrix cm(k, names);
  for (std::size_t i = 0; i < k; ++i) {
    const auto c = split_csv(lines[i + 1]);
    if (c.size() != k + 1 || c[0] != names[i]) {
      throw std::runtime_error(fmt::format("confusion row {} does not match the header", i + 1));
    }
    for (std::size_t j = 0; j < k; ++j) {
      cm.add(static_cast<int>(i), static_cast<int>(j), parse_number<std::uint64_t>(c[j + 1], "count"));
    }
  }
  return cm;
}

std::string confusion_svg(const ConfusionMatrix& cm, const std::string& title) {
  const std::size_t k = cm.num_classes();
  constexpr double cell = 64.0;
  constexpr double left = 150.0;
  constexpr double top = 60.0;
  const double size = cell * static_cast<double>(k);
  const double width = left + size + 30;
  const double height = top + size + 70;
  std::uint64_t peak = 1;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) peak = std::max(peak, cm.at(i, j));

  std::string out = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{:.0f}\" height=\"{:.0f}\" font-family=\"sans-serif\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      "<text x=\"{:.1f}\" y=\"24\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
      width, height, width / 2, xml_escape(title));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const double t = static_cast<double>(cm.at(i, j)) / static_cast<double>(peak);
      const double x = left + cell * static_cast<double>(j);
      const double y = top + cell * static_cast<double>(i);
      out += fmt::format(
          "<rect x=\"{:.1f}\" y=\"{:.1f}\" width=\"{:.1f}\" height=\"{:.1f}\" fill=\"{}\" stroke=\"#999\"/>"
          "<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"13\" text-anchor=\"middle\" fill=\"{}\">{}</text>\n",
          x, y, cell, cell, heat_color(t), x + cell / 2, y + cell / 2 + 4, t > 0.55 ? "white" : "black", cm.at(i, j));
    }
    out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n", left - 6,
                       top + cell * (static_cast<double>(i) + 0.5) + 4, xml_escape(cm.class_names()[i]));
    out += fmt::format(
        "<text x=\"{0:.1f}\" y=\"{1:.1f}\" font-size=\"12\" text-anchor=\"end\" "
        "transform=\"rotate(-35 {0:.1f} {1:.1f})\">{2}</text>\n",
        left + cell * (static_cast<double>(i) + 0.5), top + size + 14, xml_escape(cm.class_names()[i]));
  }
  out += fmt::format("<text x=\"{:.1f}\" y=\"{:.1f}\" font-size=\"12\" text-anchor=\"middle\">predicted</text>\n",
                     left + size / 2, height - 6);
  out += fmt::format("<text x=\"14\" y=\"{:.1f}\" font-size=\"12\" transform=\"rotate(-90 14 {:.1f})\" "
                     "text-anchor=\"middle\">true</text>\n",
                     top + size / 2, top + size / 2);
  out += "</svg>\n";
  return out;
}

std::string curves_svg(std::span<const EpochRecord> history) {
  Series train_loss{{}, "train", "#1f77b4"};
  Series val_loss{{}, "validation", "#d62728"};
  Series train_acc{{}, "train", "#1f77b4"};
  Series val_acc{{}, "validation", "#d62728"};
  for (const auto& r : history) {
    train_loss.values.push_back(r.train_loss);
    val_loss.values.push_back(r.val_loss);
    train_acc.values.push_back(r.train_acc);
    val_acc.values.push_back(r.val_acc);
  }
  const Series losses[] = {train_loss, val_loss};
  const Series accs[] = {train_acc, val_acc};
  std::string out =
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"820\" height=\"340\" font-family=\"sans-serif\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out += panel(60, 40, 320, 240, "Loss", losses, history.size());
  out += panel(480, 40, 320, 240, "Accuracy", accs, history.size());
  out += "</svg>\n";
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
    out << text;
    if (!out) throw std::runtime_error(fmt::format("failed writing {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace vitforge
