#include "tjstg/tensor.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace tjstg {

namespace {

bool is_little_endian() {
  const std::uint16_t probe = 0x0102;
  unsigned char bytes[2];
  std::memcpy(bytes, &probe, 2);
  return bytes[0] == 0x02;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if (!is_little_endian()) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is_little_endian()) {
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
      std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  }
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

constexpr std::size_t kMaxRank = 8;

}  // namespace

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
  for (std::size_t e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t e : shape_)
    if (e == 0) throw ShapeError("tensor extents must be positive");
  if (data_.size() != shape_product(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str());
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = v;
  return t;
}

Tensor Tensor::matrix(std::vector<std::vector<double>> rows) {
  if (rows.empty() || rows[0].empty())
    throw ShapeError("matrix literal must be non-empty");
  const std::size_t r = rows.size(), c = rows[0].size();
  Tensor t({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    if (rows[i].size() != c) throw ShapeError("ragged matrix literal");
    for (std::size_t j = 0; j < c; ++j) t.at(i, j) = rows[i][j];
  }
  return t;
}

Tensor Tensor::row(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows(): tensor " + shape_str() + " is not a matrix");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols(): tensor " + shape_str() + " is not a matrix");
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data_[r * cols() + c];
}

double Tensor::item() const {
  if (size() != 1)
    throw ShapeError("item(): tensor " + shape_str() + " has more than one element");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + "]";
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
  if (shape_product(new_shape) != size())
    throw ShapeError("reshape to incompatible element count");
  return Tensor(std::move(new_shape), data_);
}

void write_tensor(const std::string& path, const Tensor& t) {
  if (t.rank() == 0) throw IoError("refusing to write empty tensor: " + path);
  if (!t.all_finite())
    throw ContractError("non-finite values in tensor written to " + path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write("TJT1", 4);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_le<std::uint64_t>(out, e);
  for (std::size_t i = 0; i < t.size(); ++i) write_le<double>(out, t[i]);
  if (!out) throw IoError("short write: " + path);
}

Tensor read_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "TJT1", 4) != 0)
    throw IoError("bad magic, not a TJT1 file: " + path);
  const auto rank = read_le<std::uint32_t>(in);
  if (!in || rank == 0 || rank > kMaxRank)
    throw IoError("unreasonable rank in " + path);
  std::vector<std::size_t> shape(rank);
  for (auto& e : shape) {
    const auto ext = read_le<std::uint64_t>(in);
    if (!in || ext == 0 || ext > (1ull << 32))
      throw IoError("unreasonable extent in " + path);
    e = static_cast<std::size_t>(ext);
  }
  std::vector<double> data(shape_product(shape));
  for (auto& v : data) v = read_le<double>(in);
  if (!in) throw IoError("truncated payload: " + path);
  in.peek();
  if (!in.eof()) throw IoError("trailing bytes after payload: " + path);
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) throw ContractError("non-finite values in " + path);
  return t;
}

}  // namespace tjstg
