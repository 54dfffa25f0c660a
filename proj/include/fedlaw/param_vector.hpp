#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fedlaw/errors.hpp"

namespace fedlaw::nn {

/// Shape of one dense layer inside a flat parameter vector:
/// a rows x cols weight block (row-major) followed by `bias` scalars.
struct LayerShape {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t bias = 0;

  std::int64_t total() const { return rows * cols + bias; }
  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

using Layout = std::vector<LayerShape>;

inline std::int64_t layout_total(const Layout& layout) {
  std::int64_t n = 0;
  for (const auto& l : layout) n += l.total();
  return n;
}

/// All model parameters as one flat vector plus the per-layer layout that
/// maps segments back to weight matrices and biases. The unit of
/// aggregation, dot products and norms.
template <typename Scalar>
struct ParamVector {
  Eigen::VectorX<Scalar> data;
  Layout layout;

  std::int64_t size() const { return data.size(); }

  bool same_layout(const ParamVector& other) const { return layout == other.layout; }

  static ParamVector zeros_like(const ParamVector& other) {
    return {Eigen::VectorX<Scalar>::Zero(other.data.size()), other.layout};
  }

  template <typename NewScalar>
  ParamVector<NewScalar> cast() const {
    return {data.template cast<NewScalar>(), layout};
  }
};

template <typename Scalar>
inline void check_same_layout(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b) {
  if (!a.same_layout(b) || a.data.size() != b.data.size())
    throw shape_error("param vectors have mismatched layouts");
}

/// Dot product accumulated in double precision.
template <typename Scalar>
inline double dot(const ParamVector<Scalar>& a, const ParamVector<Scalar>& b) {
  check_same_layout(a, b);
  return a.data.template cast<double>().dot(b.data.template cast<double>());
}

template <typename Scalar>
inline double norm(const ParamVector<Scalar>& a) {
  return std::sqrt(a.data.template cast<double>().squaredNorm());
}

template <typename Scalar>
inline ParamVector<Scalar> scale(const ParamVector<Scalar>& a, double c) {
  return {(a.data.template cast<double>() * c).template cast<Scalar>(), a.layout};
}

/// a + c * b.
template <typename Scalar>
inline ParamVector<Scalar> add_scaled(const ParamVector<Scalar>& a,
                                      const ParamVector<Scalar>& b, double c) {
  check_same_layout(a, b);
  return {(a.data.template cast<double>() + c * b.data.template cast<double>())
              .template cast<Scalar>(),
          a.layout};
}

// ---------------------------------------------------------------------------
// Snapshot format: magic "FLPV", u16 version, u16 layer count,
// per layer (u32 rows, u32 cols, u32 bias), then f32 scalars, all
// little-endian, in layout order.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  static_assert(sizeof(bits) == sizeof(f));
  __builtin_memcpy(&bits, &f, sizeof(bits));
  put_u32(out, bits);
}

struct ByteReader {
  const unsigned char* p;
  const unsigned char* end;

  void need(std::size_t n) const {
    if (static_cast<std::size_t>(end - p) < n) throw io_error("snapshot truncated");
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    p += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    return v;
  }
  float f32() {
    std::uint32_t bits = u32();
    float f;
    __builtin_memcpy(&f, &bits, sizeof(f));
    return f;
  }
};

}  // namespace detail

constexpr std::uint16_t kSnapshotVersion = 1;

void save_snapshot(const ParamVector<float>& pv, const std::filesystem::path& path);
ParamVector<float> load_snapshot(const std::filesystem::path& path);

}  // namespace fedlaw::nn
