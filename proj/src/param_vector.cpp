#include "fedlaw/param_vector.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace fedlaw::nn {

void save_snapshot(const ParamVector<float>& pv, const std::filesystem::path& path) {
  if (layout_total(pv.layout) != pv.data.size())
    throw shape_error("param vector length does not match layout");
  std::string buf;
  buf.reserve(8 + pv.layout.size() * 12 + static_cast<std::size_t>(pv.data.size()) * 4);
  buf += "FLPV";
  detail::put_u16(buf, kSnapshotVersion);
  detail::put_u16(buf, static_cast<std::uint16_t>(pv.layout.size()));
  for (const auto& l : pv.layout) {
    detail::put_u32(buf, static_cast<std::uint32_t>(l.rows));
    detail::put_u32(buf, static_cast<std::uint32_t>(l.cols));
    detail::put_u32(buf, static_cast<std::uint32_t>(l.bias));
  }
  for (Eigen::Index i = 0; i < pv.data.size(); ++i) detail::put_f32(buf, pv.data[i]);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error("cannot open snapshot for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error("snapshot write failed: " + path.string());
}

ParamVector<float> load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open snapshot: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  detail::ByteReader r{reinterpret_cast<const unsigned char*>(buf.data()),
                       reinterpret_cast<const unsigned char*>(buf.data()) + buf.size()};
  r.need(4);
  if (std::string(reinterpret_cast<const char*>(r.p), 4) != "FLPV")
    throw io_error("bad snapshot magic: " + path.string());
  r.p += 4;
  if (r.u16() != kSnapshotVersion) throw io_error("unsupported snapshot version");
  const std::uint16_t n_layers = r.u16();
  Layout layout(n_layers);
  for (auto& l : layout) {
    l.rows = r.u32();
    l.cols = r.u32();
    l.bias = r.u32();
  }
  const std::int64_t total = layout_total(layout);
  Eigen::VectorXf data(total);
  for (std::int64_t i = 0; i < total; ++i) {
    const float v = r.f32();
    if (!std::isfinite(v)) throw io_error("non-finite value in snapshot");
    data[i] = v;
  }
  if (r.p != r.end) throw io_error("trailing bytes in snapshot: " + path.string());
  return {std::move(data), std::move(layout)};
}

}  // namespace fedlaw::nn
