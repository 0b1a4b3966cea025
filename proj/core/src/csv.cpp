#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string_view>
#include <vector>

#include "ndthash/dataset.hpp"

namespace ndthash {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

bool parse_number(std::string_view cell, double& out) {
  cell = trim(cell);
  if (cell.empty()) return false;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last;
}

std::vector<std::string_view> split_cells(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset load_csv(const std::string& path, const LabelSpec& spec) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open file: " + path, 0, 0);

  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!trim(line).empty()) lines.push_back(std::move(line));
  }
  if (lines.empty()) throw CsvError("empty file: " + path, 0, 0);

  // Header detection: a first row with any non-numeric cell is a header.
  std::size_t first_data = 0;
  {
    double tmp;
    for (std::string_view cell : split_cells(lines[0])) {
      if (!parse_number(cell, tmp)) {
        first_data = 1;
        break;
      }
    }
  }
  if (first_data >= lines.size())
    throw CsvError("file has a header but no data rows: " + path, 1, 0);

  const std::size_t n_cols = split_cells(lines[first_data]).size();
  const std::size_t n_rows = lines.size() - first_data;
  Matrix table(n_rows, n_cols);
  for (std::size_t r = 0; r < n_rows; ++r) {
    const auto cells = split_cells(lines[first_data + r]);
    const std::size_t file_row = first_data + r + 1;  // 1-based for messages
    if (cells.size() != n_cols) {
      std::ostringstream msg;
      msg << "row " << file_row << " has " << cells.size() << " cells, expected "
          << n_cols;
      throw CsvError(msg.str(), file_row, 0);
    }
    for (std::size_t c = 0; c < n_cols; ++c) {
      if (!parse_number(cells[c], table(r, c))) {
        std::ostringstream msg;
        msg << "non-numeric cell at row " << file_row << ", column " << c + 1;
        throw CsvError(msg.str(), file_row, c + 1);
      }
    }
  }

  Dataset ds;
  switch (spec.kind) {
    case LabelSpec::Kind::None:
      ds.features = std::move(table);
      ds.label_kind = LabelKind::None;
      break;
    case LabelSpec::Kind::LastColumnClass: {
      if (n_cols < 2) throw CsvError("need a feature column and a class column", 0, 0);
      std::vector<std::size_t> codes(n_rows);
      std::size_t max_code = 0;
      for (std::size_t r = 0; r < n_rows; ++r) {
        const double v = table(r, n_cols - 1);
        const double rounded = std::round(v);
        if (v < 0.0 || std::abs(v - rounded) > 1e-9 || rounded > 1e6) {
          std::ostringstream msg;
          msg << "class code at row " << first_data + r + 1
              << " is not a small nonnegative integer";
          throw CsvError(msg.str(), first_data + r + 1, n_cols);
        }
        codes[r] = static_cast<std::size_t>(rounded);
        max_code = std::max(max_code, codes[r]);
      }
      const std::size_t n_classes = max_code + 1;
      ds.features = Matrix(n_rows, n_cols - 1);
      ds.labels = Matrix(n_rows, n_classes, 0.0);
      for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c + 1 < n_cols; ++c) ds.features(r, c) = table(r, c);
        ds.labels(r, codes[r]) = 1.0;
      }
      ds.label_kind = LabelKind::OneHotClass;
      break;
    }
    case LabelSpec::Kind::LastColumnsContinuous: {
      const std::size_t m = spec.continuous_cols;
      if (m == 0 || m >= n_cols)
        throw CsvError("continuous label width must be in [1, n_cols)", 0, 0);
      ds.features = Matrix(n_rows, n_cols - m);
      ds.labels = Matrix(n_rows, m);
      for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < n_cols - m; ++c) ds.features(r, c) = table(r, c);
        for (std::size_t c = 0; c < m; ++c) ds.labels(r, c) = table(r, n_cols - m + c);
      }
      ds.label_kind = LabelKind::Continuous;
      break;
    }
  }
  ds.validate();
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CsvError("cannot open file for writing: " + path, 0, 0);

  for (std::size_t c = 0; c < ds.dims(); ++c) {
    if (c) out << ',';
    out << 'x' << c;
  }
  if (ds.label_kind == LabelKind::OneHotClass) {
    out << ",label";
  } else if (ds.label_kind == LabelKind::Continuous) {
    for (std::size_t c = 0; c < ds.labels.cols; ++c) out << ",y" << c;
  }
  out << '\n';

  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (std::size_t c = 0; c < ds.dims(); ++c) {
      if (c) out << ',';
      out << format_double(ds.features(r, c));
    }
    if (ds.label_kind == LabelKind::OneHotClass) {
      out << ',' << ds.class_of(r);
    } else if (ds.label_kind == LabelKind::Continuous) {
      for (std::size_t c = 0; c < ds.labels.cols; ++c)
        out << ',' << format_double(ds.labels(r, c));
    }
    out << '\n';
  }
}

}  // namespace ndthash
