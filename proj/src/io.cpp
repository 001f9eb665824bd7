#include "afno/io.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace afno::io {

namespace {

constexpr std::array<char, 4> kTensorMagic{'A', 'F', 'N', 'T'};
constexpr std::array<char, 4> kContainerMagic{'A', 'F', 'N', 'C'};
constexpr std::uint8_t kVersion = 1;

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw FormatError("unexpected end of stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

void expect_magic(std::istream& is, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  is.read(got.data(), got.size());
  if (!is || got != magic) {
    throw FormatError("bad magic, expected " + std::string(magic.begin(), magic.end()));
  }
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  put_le<std::uint8_t>(os, kVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype()));
  put_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.rank()));
  for (std::size_t extent : t.shape()) put_le<std::uint64_t>(os, extent);
  for (double v : t.raw()) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw FormatError("write failed");
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic);
  const auto version = get_le<std::uint8_t>(is);
  if (version != kVersion) throw FormatError("unsupported AFNT version " + std::to_string(version));
  const auto dtype_code = get_le<std::uint8_t>(is);
  if (dtype_code > 1) throw FormatError("unknown AFNT dtype code " + std::to_string(dtype_code));
  const auto dtype = static_cast<DType>(dtype_code);
  const auto rank = get_le<std::uint16_t>(is);
  Shape shape(rank);
  for (auto& extent : shape) {
    extent = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    if (extent == 0) throw FormatError("zero-sized dimension in AFNT record");
  }
  std::vector<double> raw(shape_numel(shape) * (dtype == DType::complex128 ? 2 : 1));
  for (double& v : raw) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
  return Tensor::from_raw(std::move(shape), dtype, std::move(raw));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_tensor(is);
}

void save_container(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kContainerMagic.data(), kContainerMagic.size());
  put_le<std::uint8_t>(os, kVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw FormatError("entry name too long: " + e.name.substr(0, 32));
    put_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_tensor(os, e.tensor);
  }
  if (!os) throw FormatError("write failed for " + path.string());
}

std::vector<NamedTensor> load_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  expect_magic(is, kContainerMagic);
  const auto version = get_le<std::uint8_t>(is);
  if (version != kVersion) throw FormatError("unsupported AFNC version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(is);
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw FormatError("truncated entry name");
    entries.push_back({std::move(name), read_tensor(is)});
  }
  return entries;
}

}  // namespace afno::io
