#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "gaitlab/error.hpp"

namespace gaitlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

/**
 * Dense row-major N-dimensional array.
 *
 * Extents are positive and `size() == product(shape())` always holds. Indexed
 * access through `at()` / `operator()` is bounds-checked; kernels that need raw
 * speed go through `data()` and are responsible for their own index math.
 */
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds float or double");

 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    require(data_.size() == shape_size(shape_), ErrorKind::dimension,
            "data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  template <typename U>
  static Tensor cast(const Tensor<U>& other) {
    std::vector<T> data(other.data().begin(), other.data().end());
    return Tensor(other.shape(), std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t extent(std::size_t axis) const {
    require(axis < shape_.size(), ErrorKind::dimension,
            "axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank()));
    return shape_[axis];
  }

  // Views into a temporary would dangle, so rvalue access is rejected.
  std::span<T> data() & noexcept { return data_; }
  std::span<const T> data() const& noexcept { return data_; }
  std::span<const T> data() && = delete;
  std::vector<T>& storage() & noexcept { return data_; }
  const std::vector<T>& storage() const& noexcept { return data_; }
  std::vector<T> storage() && noexcept { return std::move(data_); }

  T& at(std::size_t flat) {
    check_flat(flat);
    return data_[flat];
  }
  const T& at(std::size_t flat) const {
    check_flat(flat);
    return data_[flat];
  }

  template <typename... Idx>
  T& operator()(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    require(idx.size() == shape_.size(), ErrorKind::dimension,
            "index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                std::to_string(rank()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) {
      require(i < shape_[axis], ErrorKind::dimension,
              "index " + std::to_string(i) + " out of range on axis " + std::to_string(axis) +
                  " of " + shape_str(shape_));
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Tensor reshaped(Shape shape) const {
    require(shape_size(shape) == size(), ErrorKind::dimension,
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  /// Slice `i` along the leading axis as an owned tensor.
  Tensor slice(std::size_t i) const {
    require(rank() >= 1 && i < shape_[0], ErrorKind::dimension,
            "slice " + std::to_string(i) + " out of range for " + shape_str(shape_));
    Shape sub(shape_.begin() + 1, shape_.end());
    if (sub.empty()) sub = {1};
    const std::size_t n = shape_size(sub);
    return Tensor(sub, std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(i * n),
                                      data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * n)));
  }

  void set_slice(std::size_t i, const Tensor& part) {
    require(rank() >= 1 && i < shape_[0], ErrorKind::dimension, "set_slice index out of range");
    const std::size_t n = size() / shape_[0];
    require(part.size() == n, ErrorKind::dimension,
            "set_slice size " + std::to_string(part.size()) + " vs " + std::to_string(n));
    std::copy(part.data_.begin(), part.data_.end(),
              data_.begin() + static_cast<std::ptrdiff_t>(i * n));
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_extents() const {
    for (std::size_t e : shape_)
      require(e > 0, ErrorKind::dimension, "zero extent in shape " + shape_str(shape_));
  }
  void check_flat(std::size_t flat) const {
    require(flat < data_.size(), ErrorKind::dimension,
            "flat index " + std::to_string(flat) + " out of range " + std::to_string(size()));
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Stack equally shaped tensors along a new leading axis.
template <typename T>
Tensor<T> stack(std::span<const Tensor<T>> parts) {
  require(!parts.empty(), ErrorKind::dimension, "stack of zero tensors");
  Shape shape = parts.front().shape();
  shape.insert(shape.begin(), parts.size());
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    require(parts[i].shape() == parts.front().shape(), ErrorKind::dimension,
            "stack shape mismatch");
    out.set_slice(i, parts[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// GLTB binary format: "GLTB", version u8, precision u8 (bytes per element),
// rank u8, rank x u32 extents, then the payload; everything little-endian.

inline constexpr std::uint8_t kTensorFormatVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  require(static_cast<std::size_t>(is.gcount()) == sizeof(U), ErrorKind::format,
          "truncated tensor stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  require(t.rank() <= 255, ErrorKind::format, "rank too large to serialize");
  os.write("GLTB", 4);
  detail::put_le<std::uint8_t>(os, kTensorFormatVersion);
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(sizeof(T)));
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) {
    require(e <= 0xFFFFFFFFu, ErrorKind::format, "extent exceeds u32");
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  }
  for (T v : t.data()) {
    if constexpr (sizeof(T) == 4)
      detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
    else
      detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
}

/// Reads a GLTB stream of either precision, converting to T.
template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  require(is.gcount() == 4 && std::string(magic, 4) == "GLTB", ErrorKind::format,
          "bad tensor magic");
  const auto version = detail::get_le<std::uint8_t>(is);
  require(version == kTensorFormatVersion, ErrorKind::format,
          "unsupported tensor version " + std::to_string(version));
  const auto precision = detail::get_le<std::uint8_t>(is);
  require(precision == 4 || precision == 8, ErrorKind::format,
          "unsupported precision " + std::to_string(precision));
  const auto rank = detail::get_le<std::uint8_t>(is);
  Shape shape(rank);
  for (auto& e : shape) e = detail::get_le<std::uint32_t>(is);
  require(rank > 0, ErrorKind::format, "rank-0 tensor");
  for (std::size_t e : shape) require(e > 0, ErrorKind::format, "zero extent in stream");
  std::vector<T> data(shape_size(shape));
  for (auto& v : data) {
    if (precision == 4)
      v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(is)));
    else
      v = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(is)));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

}  // namespace gaitlab
