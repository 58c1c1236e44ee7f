#pragma once

#include <cstddef>
#include <filesystem>
#include <initializer_list>
#include <iosfwd>
#include <span>
#include <vector>

namespace fk {

/// Dense row-major matrix of doubles with at least one row and one column.
///
/// Constructors reject non-finite entries. Mutable element access does not
/// re-check, so kernels that write through operator() call require_finite()
/// on their results.
class Matrix {
 public:
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  /// Stacks row vectors; all must share a width.
  static Matrix from_rows(std::span<const std::vector<double>> rows);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Matrix transpose() const;
  /// Rows [begin, begin + count).
  Matrix row_slice(std::size_t begin, std::size_t count) const;
  /// Columns [begin, begin + count).
  Matrix col_slice(std::size_t begin, std::size_t count) const;
  /// Rows picked by index, in the given order.
  Matrix gather_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> data_;
};

/// Throws ValidationError naming `what` if any entry is NaN or infinite.
void require_finite(const Matrix& m, const char* what);

/// Vertical concatenation; widths must agree.
Matrix vstack(std::span<const Matrix> parts);
/// Horizontal concatenation; heights must agree.
Matrix hstack(std::span<const Matrix> parts);

// FKMX container: "FKMX", u32 rows, u32 cols, rows*cols little-endian f64.
void write_fkmx(std::ostream& out, const Matrix& m);
Matrix read_fkmx(std::istream& in);
void save_fkmx(const std::filesystem::path& path, const Matrix& m);
Matrix load_fkmx(const std::filesystem::path& path);

/// One row per line, comma separated, shortest round-trip decimal form.
void write_csv(std::ostream& out, const Matrix& m);
Matrix read_csv(std::istream& in);

}  // namespace fk
