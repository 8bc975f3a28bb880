#include "fuseg/nifti.hpp"

#include <zlib.h>

#include <array>
#include <cstring>
#include <filesystem>
#include <vector>

namespace fuseg {
namespace {

constexpr int kDtUint8 = 2;
constexpr int kDtInt16 = 4;
constexpr int kDtInt32 = 8;
constexpr int kDtFloat32 = 16;
constexpr int kDtFloat64 = 64;
constexpr int kDtInt8 = 256;
constexpr int kDtUint16 = 512;
constexpr int kDtUint32 = 768;

template <typename T>
T bswap(T v) {
  auto* p = reinterpret_cast<unsigned char*>(&v);
  for (std::size_t i = 0, j = sizeof(T) - 1; i < j; ++i, --j) std::swap(p[i], p[j]);
  return v;
}

template <typename T>
T read_field(const std::vector<char>& buf, std::size_t offset, bool swap) {
  T v;
  std::memcpy(&v, buf.data() + offset, sizeof(T));
  return swap ? bswap(v) : v;
}

struct GzFile {
  gzFile f = nullptr;
  explicit GzFile(const std::string& path, const char* mode) : f(gzopen(path.c_str(), mode)) {}
  ~GzFile() {
    if (f) gzclose(f);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;
};

struct ParsedHeader {
  Index3 shape;
  Spacing3 spacing;
  int datatype = 0;
  long long vox_offset = 0;
  double scl_slope = 1.0, scl_inter = 0.0;
};

ParsedHeader parse_header(const std::vector<char>& hdr, const std::string& path) {
  ParsedHeader out;
  if (hdr.size() < 348) fail(ErrorCode::kMalformedFile, path + ": truncated NIfTI header");

  std::int32_t sizeof_hdr = read_field<std::int32_t>(hdr, 0, false);
  bool swap = false;
  if (sizeof_hdr != 348 && sizeof_hdr != 540) {
    if (bswap(sizeof_hdr) == 348 || bswap(sizeof_hdr) == 540) {
      swap = true;
      sizeof_hdr = bswap(sizeof_hdr);
    } else {
      fail(ErrorCode::kMalformedFile, path + ": not a NIfTI file (bad sizeof_hdr)");
    }
  }

  std::array<long long, 8> dim{};
  std::array<double, 8> pixdim{};
  if (sizeof_hdr == 348) {
    if (std::memcmp(hdr.data() + 344, "n+1", 3) != 0 && std::memcmp(hdr.data() + 344, "ni1", 3) != 0)
      fail(ErrorCode::kMalformedFile, path + ": bad NIfTI-1 magic");
    for (int i = 0; i < 8; ++i) dim[i] = read_field<std::int16_t>(hdr, 40 + 2 * i, swap);
    out.datatype = read_field<std::int16_t>(hdr, 70, swap);
    for (int i = 0; i < 8; ++i) pixdim[i] = read_field<float>(hdr, 76 + 4 * i, swap);
    out.vox_offset = static_cast<long long>(read_field<float>(hdr, 108, swap));
    out.scl_slope = read_field<float>(hdr, 112, swap);
    out.scl_inter = read_field<float>(hdr, 116, swap);
  } else {
    if (hdr.size() < 540) fail(ErrorCode::kMalformedFile, path + ": truncated NIfTI-2 header");
    if (std::memcmp(hdr.data() + 4, "n+2", 3) != 0)
      fail(ErrorCode::kMalformedFile, path + ": bad NIfTI-2 magic");
    out.datatype = read_field<std::int16_t>(hdr, 12, swap);
    for (int i = 0; i < 8; ++i) dim[i] = read_field<std::int64_t>(hdr, 16 + 8 * i, swap);
    for (int i = 0; i < 8; ++i) pixdim[i] = read_field<double>(hdr, 104 + 8 * i, swap);
    out.vox_offset = read_field<std::int64_t>(hdr, 168, swap);
    out.scl_slope = read_field<double>(hdr, 176, swap);
    out.scl_inter = read_field<double>(hdr, 184, swap);
  }

  const long long ndim = dim[0];
  if (ndim < 3 || ndim > 7) fail(ErrorCode::kNonVolumetric, path + ": expected a 3D image, dim[0]=" + std::to_string(ndim));
  for (int i = 4; i <= ndim; ++i)
    if (dim[i] > 1)
      fail(ErrorCode::kNonVolumetric,
           path + ": not a single-channel 3D image (dim[" + std::to_string(i) + "]=" + std::to_string(dim[i]) + ")");
  for (int i = 1; i <= 3; ++i)
    if (dim[i] < 1 || dim[i] > (1 << 20))
      fail(ErrorCode::kMalformedFile, path + ": implausible dimension " + std::to_string(dim[i]));

  out.shape = Index3(static_cast<int>(dim[1]), static_cast<int>(dim[2]), static_cast<int>(dim[3]));
  out.spacing = Spacing3(pixdim[1], pixdim[2], pixdim[3]);
  if (!(out.spacing.allFinite() && out.spacing.minCoeff() > 0))
    fail(ErrorCode::kBadSpacing, path + ": non-positive voxel spacing in header");
  if (out.vox_offset < (sizeof_hdr == 348 ? 348 : 540))
    fail(ErrorCode::kMalformedFile, path + ": bad vox_offset");

  out.datatype = swap ? -out.datatype : out.datatype;  // negative marks byte-swapped payload
  return out;
}

template <typename Raw>
void decode(const std::vector<char>& raw, bool swap, double slope, double inter, Volume& v) {
  const Eigen::Index n = v.voxels();
  const bool rescale = slope != 0.0 && !(slope == 1.0 && inter == 0.0);
  for (Eigen::Index i = 0; i < n; ++i) {
    Raw r;
    std::memcpy(&r, raw.data() + static_cast<std::size_t>(i) * sizeof(Raw), sizeof(Raw));
    if (swap) r = bswap(r);
    double val = static_cast<double>(r);
    if (rescale) val = slope * val + inter;
    v.data[i] = static_cast<float>(val);
  }
}

Volume read_volume_impl(const std::string& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kIo, path + ": file not found");
  GzFile gz(path, "rb");
  if (!gz.f) fail(ErrorCode::kIo, path + ": cannot open for reading");

  std::vector<char> hdr(348);
  if (gzread(gz.f, hdr.data(), 348) != 348)
    fail(ErrorCode::kMalformedFile, path + ": truncated NIfTI header");
  std::int32_t sz = read_field<std::int32_t>(hdr, 0, false);
  if (sz == 540 || bswap(sz) == 540) {
    hdr.resize(540);
    if (gzread(gz.f, hdr.data() + 348, 192) != 192)
      fail(ErrorCode::kMalformedFile, path + ": truncated NIfTI-2 header");
  }

  ParsedHeader h = parse_header(hdr, path);
  const bool swap = h.datatype < 0;
  const int dt = std::abs(h.datatype);

  std::size_t elem = 0;
  switch (dt) {
    case kDtUint8:
    case kDtInt8: elem = 1; break;
    case kDtInt16:
    case kDtUint16: elem = 2; break;
    case kDtInt32:
    case kDtUint32:
    case kDtFloat32: elem = 4; break;
    case kDtFloat64: elem = 8; break;
    default: fail(ErrorCode::kMalformedFile, path + ": unsupported NIfTI datatype " + std::to_string(dt));
  }

  Volume v(h.shape, h.spacing);
  // skip to payload
  const long long skip = h.vox_offset - static_cast<long long>(hdr.size());
  if (skip < 0) fail(ErrorCode::kMalformedFile, path + ": bad vox_offset");
  if (skip > 0) {
    std::vector<char> junk(static_cast<std::size_t>(skip));
    if (gzread(gz.f, junk.data(), static_cast<unsigned>(junk.size())) != static_cast<int>(junk.size()))
      fail(ErrorCode::kMalformedFile, path + ": truncated before voxel data");
  }

  const std::size_t nbytes = static_cast<std::size_t>(v.voxels()) * elem;
  std::vector<char> raw(nbytes);
  std::size_t off = 0;
  while (off < nbytes) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(nbytes - off, 1u << 28));
    const int r = gzread(gz.f, raw.data() + off, chunk);
    if (r <= 0) fail(ErrorCode::kMalformedFile, path + ": truncated voxel data");
    off += static_cast<std::size_t>(r);
  }

  switch (dt) {
    case kDtUint8: decode<std::uint8_t>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtInt8: decode<std::int8_t>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtInt16: decode<std::int16_t>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtUint16: decode<std::uint16_t>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtInt32: decode<std::int32_t>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtUint32: decode<std::uint32_t>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtFloat32: decode<float>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    case kDtFloat64: decode<double>(raw, swap, h.scl_slope, h.scl_inter, v); break;
    default: break;
  }
  require(v.data.allFinite(), ErrorCode::kDataIntegrity, path + ": voxel data contains NaN/Inf");
  return v;
}

// Minimal NIfTI-1 header, little-endian host assumed.
std::vector<char> make_nifti1_header(const Index3& shape, const Spacing3& spacing, int datatype,
                                     int bitpix) {
  std::vector<char> hdr(352, 0);  // 348 header + 4 zero extension bytes
  auto put = [&](std::size_t off, const auto& v) { std::memcpy(hdr.data() + off, &v, sizeof(v)); };

  put(0, std::int32_t{348});
  std::int16_t dim[8] = {3, static_cast<std::int16_t>(shape.x()), static_cast<std::int16_t>(shape.y()),
                         static_cast<std::int16_t>(shape.z()), 1, 1, 1, 1};
  std::memcpy(hdr.data() + 40, dim, sizeof(dim));
  put(70, static_cast<std::int16_t>(datatype));
  put(72, static_cast<std::int16_t>(bitpix));
  float pixdim[8] = {1.f, static_cast<float>(spacing.x()), static_cast<float>(spacing.y()),
                     static_cast<float>(spacing.z()), 0.f, 0.f, 0.f, 0.f};
  std::memcpy(hdr.data() + 76, pixdim, sizeof(pixdim));
  put(108, float{352.f});              // vox_offset
  put(112, float{1.f});                // scl_slope
  put(116, float{0.f});                // scl_inter
  hdr[123] = 2;                        // xyzt_units: mm
  put(254, std::int16_t{1});           // sform_code
  float srow_x[4] = {static_cast<float>(spacing.x()), 0, 0, 0};
  float srow_y[4] = {0, static_cast<float>(spacing.y()), 0, 0};
  float srow_z[4] = {0, 0, static_cast<float>(spacing.z()), 0};
  std::memcpy(hdr.data() + 280, srow_x, sizeof(srow_x));
  std::memcpy(hdr.data() + 296, srow_y, sizeof(srow_y));
  std::memcpy(hdr.data() + 312, srow_z, sizeof(srow_z));
  std::memcpy(hdr.data() + 344, "n+1", 4);
  return hdr;
}

void write_bytes(const std::string& path, const std::vector<char>& hdr, const char* payload,
                 std::size_t nbytes) {
  const bool gzipped = path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
  if (gzipped) {
    GzFile gz(path, "wb6");
    if (!gz.f) fail(ErrorCode::kIo, path + ": cannot open for writing");
    if (gzwrite(gz.f, hdr.data(), static_cast<unsigned>(hdr.size())) != static_cast<int>(hdr.size()))
      fail(ErrorCode::kIo, path + ": write failed");
    std::size_t off = 0;
    while (off < nbytes) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(nbytes - off, 1u << 28));
      if (gzwrite(gz.f, payload + off, chunk) != static_cast<int>(chunk))
        fail(ErrorCode::kIo, path + ": write failed");
      off += chunk;
    }
  } else {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) fail(ErrorCode::kIo, path + ": cannot open for writing");
    bool ok = std::fwrite(hdr.data(), 1, hdr.size(), f) == hdr.size() &&
              std::fwrite(payload, 1, nbytes, f) == nbytes;
    ok = std::fclose(f) == 0 && ok;
    if (!ok) fail(ErrorCode::kIo, path + ": write failed");
  }
}

}  // namespace

Volume read_volume(const std::string& path) { return read_volume_impl(path); }

BinaryMask read_mask(const std::string& path) {
  Volume v = read_volume_impl(path);
  BinaryMask m(v.shape, v.spacing);
  for (Eigen::Index i = 0; i < v.data.size(); ++i) {
    const float x = v.data[i];
    if (x != 0.f && x != 1.f)
      fail(ErrorCode::kDataIntegrity, path + ": mask is not binary-valued (found " + std::to_string(x) + ")");
    m.data[i] = x == 1.f ? 1 : 0;
  }
  return m;
}

void write_volume(const Volume& v, const std::string& path) {
  v.check_finite("write_volume(" + path + ")");
  const auto hdr = make_nifti1_header(v.shape, v.spacing, kDtFloat32, 32);
  write_bytes(path, hdr, reinterpret_cast<const char*>(v.data.data()),
              static_cast<std::size_t>(v.voxels()) * 4);
}

void write_mask(const BinaryMask& m, const std::string& path) {
  m.check_binary("write_mask(" + path + ")");
  const auto hdr = make_nifti1_header(m.shape, m.spacing, kDtUint8, 8);
  write_bytes(path, hdr, reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::size_t>(m.voxels()));
}

}  // namespace fuseg
