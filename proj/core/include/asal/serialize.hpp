#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <string>

namespace asal::serialize {

// Little binary primitives shared by checkpoint and resume files. All
// multi-byte values are written in the host's native byte order; files are
// exchanged between runs on the same machine, not across architectures.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
void write_matrix(std::ostream& os, const Eigen::MatrixXd& m);

std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is);
Eigen::MatrixXd read_matrix(std::istream& is);

// Throws std::runtime_error mentioning `what` if the stream is in a failed
// state, used after reads to reject truncated or corrupted files.
void check_stream(const std::istream& is, const char* what);

}  // namespace asal::serialize
