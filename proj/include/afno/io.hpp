#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "afno/tensor.hpp"

namespace afno::io {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// AFNT tensor record, all integers and floats little-endian:
//   "AFNT" | u8 version=1 | u8 dtype (0 real64, 1 complex128) | u16 rank |
//   rank x u64 dims | payload (complex as interleaved re, im f64)
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Container of named AFNT records:
//   "AFNC" | u8 version=1 | u32 count | count x (u16 name length | name | AFNT record)
void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_container(const std::filesystem::path& path);

}  // namespace afno::io
