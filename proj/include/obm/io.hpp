#pragma once

// Output plumbing: versioned CSV files, a git-style content hash of the
// resolved configuration, and a dependency-free SVG line chart.
//
// Every CSV starts with comment lines
//   # schema=<name> version=<n>
//   # config_sha1=<hex>
// followed by one header row and data rows. Readers skip '#' lines.

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <filesystem>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace obm::io {

inline constexpr int kCsvSchemaVersion = 1;

/// SHA-1 of "blob <size>\0<content>", i.e. what `git hash-object` prints.
inline std::string content_hash(std::string_view content) {
  std::string blob = "blob " + std::to_string(content.size());
  blob.push_back('\0');
  blob.append(content);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1)
    throw std::runtime_error("content_hash: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

/// Shortest round-trip representation of a double.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string fmt(std::int64_t v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }
inline std::string fmt(const std::string& s) { return s; }
inline std::string fmt(const char* s) { return s; }

using Row = std::vector<std::string>;

template <class... Ts>
Row row(const Ts&... vs) {
  return Row{fmt(vs)...};
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::string_view schema, std::string_view config_hash,
            const Row& header)
      : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
    out_ << "# schema=" << schema << " version=" << kCsvSchemaVersion << "\n";
    out_ << "# config_sha1=" << config_hash << "\n";
    write(header);
  }

  void write(const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) out_ << (i ? "," : "") << r[i];
    out_ << "\n";
  }

 private:
  std::ofstream out_;
};

/// Same layout as CsvWriter, into a string (for stdout).
inline std::string csv_string(std::string_view schema, std::string_view config_hash, const Row& header,
                              const std::vector<Row>& rows) {
  std::ostringstream os;
  os << "# schema=" << schema << " version=" << kCsvSchemaVersion << "\n";
  os << "# config_sha1=" << config_hash << "\n";
  auto put = [&](const Row& r) {
    for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
    os << "\n";
  };
  put(header);
  for (const auto& r : rows) put(r);
  return os.str();
}

struct CsvTable {
  std::vector<std::string> comments;
  Row header;
  std::vector<Row> rows;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::out_of_range("no column '" + std::string(name) + "'");
  }
};

inline Row split_csv_line(const std::string& line) {
  Row r;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      r.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  r.push_back(cur);
  return r;
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  CsvTable t;
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    if (!have_header) {
      t.header = split_csv_line(line);
      have_header = true;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  if (!have_header) throw std::runtime_error(path.string() + ": no header row");
  return t;
}

// ---- SVG ---------------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool dashed = false;
};

inline std::string xml_escape(std::string_view s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      case '\'': o += "&apos;"; break;
      default: o.push_back(c);
    }
  }
  return o;
}

inline std::string line_chart_svg(const std::vector<Series>& series, std::string_view title,
                                  std::string_view xlabel, std::string_view ylabel) {
  constexpr double W = 800, H = 500, left = 70, right = 190, top = 40, bottom = 55;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (double v : s.x) {
      if (!std::isfinite(v)) continue;
      x0 = std::min(x0, v);
      x1 = std::max(x1, v);
    }
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (!(x1 >= x0)) x0 = 0, x1 = 1;
  if (!(y1 >= y0)) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto sx = [&](double v) { return left + (v - x0) / (x1 - x0) * pw; };
  auto sy = [&](double v) { return top + ph - (v - y0) / (y1 - y0) * ph; };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(title)
     << "</text>\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    os << "<text x=\"" << sx(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << fmt(std::round(xv * 1e4) / 1e4)
       << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\">" << fmt(std::round(yv * 1e4) / 1e4)
       << "</text>\n";
    os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << sy(yv) << "\" y2=\"" << sy(yv)
       << "\" stroke=\"#eee\"/>\n";
  }
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xml_escape(xlabel)
     << "</text>\n";
  os << "<text transform=\"translate(16," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << xml_escape(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = palette[k % 10];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\""
       << (s.dashed ? " stroke-dasharray=\"5,3\"" : "") << " points=\"";
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      os << sx(s.x[i]) << "," << sy(s.y[i]) << " ";
    }
    os << "\"/>\n";
    const double ly = top + 10 + 16.0 * static_cast<double>(k);
    os << "<line x1=\"" << W - right + 12 << "\" x2=\"" << W - right + 36 << "\" y1=\"" << ly << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"5,3\"" : "")
       << "/>\n";
    os << "<text x=\"" << W - right + 42 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace obm::io
