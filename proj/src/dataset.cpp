#include "mrd/dataset.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mrd/errors.hpp"

namespace mrd {

std::string normalize_column_name(const std::string& name) {
  std::string out;
  for (char c : name) {
    if (c == '_') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string format_number(double v) {
  char buf[64];
  if (v == static_cast<std::int64_t>(v) && std::abs(v) < 1e15) {
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), static_cast<std::int64_t>(v));
    return std::string(buf, p);
  }
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::size_t Dataset::index_of(const std::string& name) const {
  const std::string want = normalize_column_name(name);
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (normalize_column_name(names_[i]) == want) return i;
  }
  return static_cast<std::size_t>(-1);
}

bool Dataset::has_column(const std::string& name) const {
  return index_of(name) != static_cast<std::size_t>(-1);
}

const std::vector<double>& Dataset::column(const std::string& name) const {
  const std::size_t i = index_of(name);
  if (i == static_cast<std::size_t>(-1))
    throw DataError("missing column '" + name + "'");
  return cols_[i];
}

void Dataset::add_column(const std::string& name, std::vector<double> values) {
  if (!cols_.empty() && values.size() != rows_)
    throw DataError("column '" + name + "' has " + std::to_string(values.size()) +
                    " rows, dataset has " + std::to_string(rows_));
  if (has_column(name)) throw DataError("duplicate column '" + name + "'");
  rows_ = values.size();
  names_.push_back(name);
  cols_.push_back(std::move(values));
}

const std::vector<UnitCategory>& Dataset::categories() const {
  if (!has_categories_) throw DataError("dataset has no category column");
  return category_;
}

void Dataset::set_categories(std::vector<UnitCategory> cats) {
  if (!cols_.empty() && cats.size() != rows_)
    throw DataError("category column length mismatch");
  if (cols_.empty()) rows_ = cats.size();
  category_ = std::move(cats);
  has_categories_ = true;
}

Dataset Dataset::subset(const std::vector<std::uint8_t>& keep) const {
  if (keep.size() != rows_) throw DataError("subset mask length mismatch");
  Dataset out;
  for (std::size_t c = 0; c < cols_.size(); ++c) {
    std::vector<double> col;
    for (std::size_t i = 0; i < rows_; ++i)
      if (keep[i]) col.push_back(cols_[c][i]);
    out.add_column(names_[c], std::move(col));
  }
  if (has_categories_) {
    std::vector<UnitCategory> cats;
    for (std::size_t i = 0; i < rows_; ++i)
      if (keep[i]) cats.push_back(category_[i]);
    out.set_categories(std::move(cats));
  }
  return out;
}

double Dataset::value_at(const std::string& name, std::size_t row) const {
  return column(name)[row];
}

std::string Dataset::to_csv_string() const {
  std::ostringstream out;
  for (std::size_t c = 0; c < names_.size(); ++c) {
    if (c) out << ',';
    out << names_[c];
  }
  if (has_categories_) {
    if (!names_.empty()) out << ',';
    out << "category";
  }
  out << '\n';
  for (std::size_t i = 0; i < rows_; ++i) {
    for (std::size_t c = 0; c < cols_.size(); ++c) {
      if (c) out << ',';
      out << format_number(cols_[c][i]);
    }
    if (has_categories_) {
      if (!cols_.empty()) out << ',';
      out << category_code(category_[i]);
    }
    out << '\n';
  }
  return out.str();
}

void Dataset::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << to_csv_string();
  if (!f) throw DataError("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

Dataset Dataset::read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw DataError("'" + path + "': empty file");
  const std::vector<std::string> header = split_csv_line(line);

  std::ptrdiff_t cat_idx = -1;
  std::vector<std::string> names;
  for (std::size_t i = 0; i < header.size(); ++i) {
    const std::string name = trim(header[i]);
    if (name.empty()) throw DataError("'" + path + "': empty header field");
    if (normalize_column_name(name) == "category") {
      cat_idx = static_cast<std::ptrdiff_t>(i);
    } else {
      names.push_back(name);
    }
  }

  std::vector<std::vector<double>> cols(names.size());
  std::vector<UnitCategory> cats;
  std::size_t row_no = 1;
  while (std::getline(f, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DataError("'" + path + "' row " + std::to_string(row_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    std::size_t c = 0;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (static_cast<std::ptrdiff_t>(i) == cat_idx) {
        cats.push_back(category_from_code(trim(fields[i])));
        continue;
      }
      const std::string field = trim(fields[i]);
      double v = std::numeric_limits<double>::quiet_NaN();
      const char* b = field.data();
      const char* e = b + field.size();
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e)
        throw DataError("'" + path + "' row " + std::to_string(row_no) + ", column '" +
                        names[c] + "': cannot parse '" + field + "'");
      if (!std::isfinite(v))
        throw DataError("'" + path + "' row " + std::to_string(row_no) + ", column '" +
                        names[c] + "': non-finite value");
      cols[c].push_back(v);
      ++c;
    }
  }

  Dataset out;
  for (std::size_t i = 0; i < names.size(); ++i)
    out.add_column(names[i], std::move(cols[i]));
  if (cat_idx >= 0) out.set_categories(std::move(cats));
  return out;
}

}  // namespace mrd
