#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mrd/classify.hpp"

namespace mrd {

// Column-oriented table used for panel interchange. All columns are numeric
// except the optional `category` column, which holds the C/NT/AT/DF/IND codes.
class Dataset {
 public:
  std::size_t n_rows() const { return rows_; }

  bool has_column(const std::string& name) const;
  const std::vector<double>& column(const std::string& name) const;
  void add_column(const std::string& name, std::vector<double> values);

  bool has_categories() const { return has_categories_; }
  const std::vector<UnitCategory>& categories() const;
  void set_categories(std::vector<UnitCategory> cats);

  const std::vector<std::string>& column_names() const { return names_; }

  Dataset subset(const std::vector<std::uint8_t>& keep_mask) const;

  // value lookup with normalized names ("xy" == "x_y"); row access for
  // omega predicates
  double value_at(const std::string& name, std::size_t row) const;

  void write_csv(const std::string& path) const;
  static Dataset read_csv(const std::string& path);

  std::string to_csv_string() const;

 private:
  std::size_t index_of(const std::string& name) const;  // npos if absent

  std::vector<std::string> names_;
  std::vector<std::vector<double>> cols_;
  std::vector<UnitCategory> category_;
  bool has_categories_ = false;
  std::size_t rows_ = 0;
};

std::string normalize_column_name(const std::string& name);

// deterministic shortest round-trip formatting used by every writer
std::string format_number(double v);

}  // namespace mrd
