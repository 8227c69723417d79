#include "asal/serialize.hpp"

#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace asal::serialize {

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  write_u32(os, static_cast<std::uint32_t>(m.rows()));
  write_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) write_f64(os, m(i, j));
  }
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  check_stream(is, "u32");
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  check_stream(is, "u64");
  return v;
}

double read_f64(std::istream& is) {
  double v = 0.0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  check_stream(is, "f64");
  return v;
}

std::string read_string(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  if (n > (1u << 20)) {
    throw std::runtime_error("serialize: implausible string length");
  }
  std::string s(n, '\0');
  is.read(s.data(), n);
  check_stream(is, "string");
  return s;
}

Eigen::MatrixXd read_matrix(std::istream& is) {
  const std::uint32_t rows = read_u32(is);
  const std::uint32_t cols = read_u32(is);
  if (static_cast<std::uint64_t>(rows) * cols > (1ull << 28)) {
    throw std::runtime_error("serialize: implausible matrix size");
  }
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i) {
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = read_f64(is);
  }
  return m;
}

void check_stream(const std::istream& is, const char* what) {
  if (!is) {
    throw std::runtime_error(std::string("serialize: truncated read at ") +
                             what);
  }
}

}  // namespace asal::serialize
