#include "fk/matrix.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

#include "fk/errors.hpp"

namespace fk {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'K', 'M', 'X'};

void check_dims(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("matrix must have at least one row and one column, got " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) throw IoError("FKMX: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {
  check_dims(rows, cols);
  data_.assign(rows * cols, 0.0);
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  check_dims(rows, cols);
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  require_finite(*this, "matrix");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : rows_(rows.size()), cols_(rows.size() ? rows.begin()->size() : 0) {
  check_dims(rows_, cols_);
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
  require_finite(*this, "matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) throw ShapeError("from_rows: no rows");
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Matrix(rows.size(), cols, std::move(data));
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::row_slice(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_) throw ShapeError("row_slice out of range");
  Matrix out(count, cols_);
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
            data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * cols_), out.data_.begin());
  return out;
}

Matrix Matrix::col_slice(std::size_t begin, std::size_t count) const {
  if (begin + count > cols_) throw ShapeError("col_slice out of range");
  Matrix out(rows_, count);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = (*this)(r, begin + c);
  return out;
}

Matrix Matrix::gather_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw ShapeError("gather_rows: index out of range");
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void require_finite(const Matrix& m, const char* what) {
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw ValidationError(std::string(what) + ": non-finite entry");
  }
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) throw ShapeError("vstack: nothing to stack");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack: width mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  auto dst = out.data().begin();
  for (const auto& p : parts) dst = std::copy(p.data().begin(), p.data().end(), dst);
  return out;
}

Matrix hstack(std::span<const Matrix> parts) {
  if (parts.empty()) throw ShapeError("hstack: nothing to stack");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hstack: height mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, offset + c) = p(r, c);
    offset += p.cols();
  }
  return out;
}

void write_fkmx(std::ostream& out, const Matrix& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ShapeError("FKMX: dimensions exceed u32");
  }
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(m.rows()));
  put_u32(out, static_cast<std::uint32_t>(m.cols()));
  std::array<char, 8> b{};
  for (double v : m.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(b.data(), 8);
  }
  if (!out) throw IoError("FKMX: write failed");
}

Matrix read_fkmx(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kMagic) throw IoError("FKMX: bad magic bytes");
  const std::uint32_t rows = get_u32(in);
  const std::uint32_t cols = get_u32(in);
  if (rows == 0 || cols == 0) throw IoError("FKMX: empty matrix");
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  std::array<unsigned char, 8> b{};
  for (double& v : data) {
    in.read(reinterpret_cast<char*>(b.data()), 8);
    if (!in) throw IoError("FKMX: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
    if (!std::isfinite(v)) throw IoError("FKMX: non-finite entry");
  }
  return Matrix(rows, cols, std::move(data));
}

void save_fkmx(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_fkmx(out, m);
}

Matrix load_fkmx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_fkmx(in);
}

void write_csv(std::ostream& out, const Matrix& m) {
  std::array<char, 32> buf{};
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c) out << ',';
      auto res = std::to_chars(buf.data(), buf.data() + buf.size(), m(r, c));
      out.write(buf.data(), res.ptr - buf.data());
    }
    out << '\n';
  }
}

Matrix read_csv(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t end = std::min(line.find(',', pos), line.size());
      double v = 0;
      auto res = std::from_chars(line.data() + pos, line.data() + end, v);
      if (res.ec != std::errc{} || res.ptr != line.data() + end) {
        throw ParseError("CSV: bad number", pos);
      }
      row.push_back(v);
      pos = end + 1;
    }
    rows.push_back(std::move(row));
  }
  return Matrix::from_rows(rows);
}

}  // namespace fk
