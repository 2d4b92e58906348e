#include "brainseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "brainseg/error.hpp"

namespace brainseg::volio {

namespace {

// Field offsets in the 348-byte NIfTI-1 header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffDescrip = 148;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffQuatern = 256;
constexpr std::size_t kOffSrowX = 280;
constexpr std::size_t kOffSrowY = 296;
constexpr std::size_t kOffSrowZ = 312;
constexpr std::size_t kOffMagic = 344;

class ByteReader {
public:
  ByteReader(std::span<const std::uint8_t> bytes, bool swap) : bytes_(bytes), swap_(swap) {}

  template <typename T> T get(std::size_t offset) const {
    std::array<std::uint8_t, sizeof(T)> raw{};
    std::memcpy(raw.data(), bytes_.data() + offset, sizeof(T));
    if (swap_) std::reverse(raw.begin(), raw.end());
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

private:
  std::span<const std::uint8_t> bytes_;
  bool swap_;
};

template <typename T> void put_le(std::span<std::uint8_t> out, std::size_t offset, T value) {
  std::array<std::uint8_t, sizeof(T)> raw{};
  std::memcpy(raw.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
  std::memcpy(out.data() + offset, raw.data(), sizeof(T));
}

constexpr bool kHostLittle = std::endian::native == std::endian::little;

bool ends_with(const std::string &s, const std::string &suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// gzread also passes uncompressed files through unchanged.
GzHandle open_for_read(const std::filesystem::path &path) {
  GzHandle f(gzopen(path.string().c_str(), "rb"));
  if (!f) raise(Errc::IoError, "cannot open " + path.string());
  return f;
}

// Reads exactly `n` bytes or fewer at end of stream; returns the count read.
std::size_t read_bytes(gzFile f, std::uint8_t *dst, std::size_t n) {
  std::size_t total = 0;
  while (total < n) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - total, 1u << 30));
    const int got = gzread(f, dst + total, chunk);
    if (got < 0) raise(Errc::IoError, "decompression failure");
    if (got == 0) break;
    total += static_cast<std::size_t>(got);
  }
  return total;
}

std::array<std::uint8_t, kHeaderSize> read_header_bytes(gzFile f, const std::filesystem::path &path) {
  std::array<std::uint8_t, kHeaderSize> bytes{};
  if (read_bytes(f, bytes.data(), bytes.size()) != bytes.size())
    raise(Errc::TruncatedFile, path.string() + " is shorter than a NIfTI-1 header");
  return bytes;
}

template <typename Raw>
void convert(const std::vector<std::uint8_t> &raw, bool swap, double slope, double inter,
             std::vector<double> &out) {
  const std::size_t n = out.size();
  for (std::size_t v = 0; v < n; ++v) {
    std::array<std::uint8_t, sizeof(Raw)> b{};
    std::memcpy(b.data(), raw.data() + v * sizeof(Raw), sizeof(Raw));
    if (swap) std::reverse(b.begin(), b.end());
    Raw value;
    std::memcpy(&value, b.data(), sizeof(Raw));
    if (slope != 0.0 && !(slope == 1.0 && inter == 0.0))
      out[v] = static_cast<double>(value) * slope + inter;
    else
      out[v] = static_cast<double>(value);
  }
}

// File order is x fastest; Volume order is d2 fastest.
std::vector<double> to_row_major(const std::vector<double> &file_order, const Index3 &dims) {
  std::vector<double> out(file_order.size());
  const std::size_t nx = dims[0], ny = dims[1], nz = dims[2];
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) out[(x * ny + y) * nz + z] = file_order[(z * ny + y) * nx + x];
  return out;
}

} // namespace

bool is_supported(std::int16_t datatype) {
  switch (static_cast<NiftiDatatype>(datatype)) {
  case NiftiDatatype::UInt8:
  case NiftiDatatype::Int16:
  case NiftiDatatype::Int32:
  case NiftiDatatype::Float32:
  case NiftiDatatype::Float64:
    return true;
  }
  return false;
}

int bytes_per_voxel(NiftiDatatype datatype) {
  switch (datatype) {
  case NiftiDatatype::UInt8: return 1;
  case NiftiDatatype::Int16: return 2;
  case NiftiDatatype::Int32: return 4;
  case NiftiDatatype::Float32: return 4;
  case NiftiDatatype::Float64: return 8;
  }
  return 0;
}

Index3 NiftiHeader::spatial_dims() const {
  Index3 d{1, 1, 1};
  for (int a = 0; a < 3 && a < dim[0]; ++a) d[a] = static_cast<std::size_t>(dim[a + 1]);
  return d;
}

std::size_t NiftiHeader::voxel_count() const {
  const auto d = spatial_dims();
  return d[0] * d[1] * d[2];
}

Mat4 NiftiHeader::affine() const {
  if (sform_code > 0) {
    Mat4 m{};
    for (int c = 0; c < 4; ++c) {
      m[0][c] = srow_x[c];
      m[1][c] = srow_y[c];
      m[2][c] = srow_z[c];
    }
    m[3][3] = 1.0;
    return m;
  }
  const Vec3 spacing{std::abs(pixdim[1]), std::abs(pixdim[2]), std::abs(pixdim[3])};
  if (qform_code > 0) {
    double b = quatern_b, c = quatern_c, d = quatern_d;
    double a = 1.0 - (b * b + c * c + d * d);
    if (a < 1e-7) {
      // Degenerate quaternion: renormalize with a 180-degree rotation.
      const double s = 1.0 / std::sqrt(b * b + c * c + d * d);
      b *= s;
      c *= s;
      d *= s;
      a = 0.0;
    } else {
      a = std::sqrt(a);
    }
    const double qfac = pixdim[0] < 0 ? -1.0 : 1.0;
    const double r[3][3] = {
        {a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
        {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
        {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b},
    };
    const double scale[3] = {spacing[0] > 0 ? spacing[0] : 1.0, spacing[1] > 0 ? spacing[1] : 1.0,
                             (spacing[2] > 0 ? spacing[2] : 1.0) * qfac};
    Mat4 m{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) m[i][j] = r[i][j] * scale[j];
    m[0][3] = qoffset_x;
    m[1][3] = qoffset_y;
    m[2][3] = qoffset_z;
    m[3][3] = 1.0;
    return m;
  }
  Vec3 diag{};
  for (int a = 0; a < 3; ++a) diag[a] = spacing[a] > 0 ? spacing[a] : 1.0;
  return diagonal4(diag);
}

NiftiHeader decode_header(std::span<const std::uint8_t, kHeaderSize> bytes) {
  bool swap = false;
  {
    const ByteReader probe(bytes, false);
    if (probe.get<std::int32_t>(kOffSizeofHdr) != 348) {
      const ByteReader swapped(bytes, true);
      if (swapped.get<std::int32_t>(kOffSizeofHdr) != 348)
        raise(Errc::BadMagic, "sizeof_hdr is not 348 in either byte order");
      swap = true;
    }
  }
  const ByteReader r(bytes, swap);
  NiftiHeader h;
  h.big_endian = swap == kHostLittle;
  std::memcpy(h.magic.data(), bytes.data() + kOffMagic, 4);
  const bool single = std::memcmp(h.magic.data(), "n+1\0", 4) == 0;
  const bool pair = std::memcmp(h.magic.data(), "ni1\0", 4) == 0;
  if (!single && !pair) raise(Errc::BadMagic, "magic is neither \"n+1\" nor \"ni1\"");

  for (int i = 0; i < 8; ++i) {
    h.dim[i] = r.get<std::int16_t>(kOffDim + 2 * i);
    h.pixdim[i] = r.get<float>(kOffPixdim + 4 * i);
  }
  h.datatype = r.get<std::int16_t>(kOffDatatype);
  h.bitpix = r.get<std::int16_t>(kOffBitpix);
  h.vox_offset = r.get<float>(kOffVoxOffset);
  h.scl_slope = r.get<float>(kOffSclSlope);
  h.scl_inter = r.get<float>(kOffSclInter);
  h.xyzt_units = bytes[kOffXyztUnits];
  std::memcpy(h.descrip.data(), bytes.data() + kOffDescrip, h.descrip.size());
  h.qform_code = r.get<std::int16_t>(kOffQformCode);
  h.sform_code = r.get<std::int16_t>(kOffSformCode);
  h.quatern_b = r.get<float>(kOffQuatern);
  h.quatern_c = r.get<float>(kOffQuatern + 4);
  h.quatern_d = r.get<float>(kOffQuatern + 8);
  h.qoffset_x = r.get<float>(kOffQuatern + 12);
  h.qoffset_y = r.get<float>(kOffQuatern + 16);
  h.qoffset_z = r.get<float>(kOffQuatern + 20);
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = r.get<float>(kOffSrowX + 4 * c);
    h.srow_y[c] = r.get<float>(kOffSrowY + 4 * c);
    h.srow_z[c] = r.get<float>(kOffSrowZ + 4 * c);
  }

  if (h.dim[0] < 1 || h.dim[0] > 7) raise(Errc::DimMismatch, "dim[0] out of range 1..7");
  for (int i = 1; i <= h.dim[0]; ++i)
    if (h.dim[i] < 1) raise(Errc::DimMismatch, "non-positive dim[" + std::to_string(i) + "]");
  for (int i = 4; i <= h.dim[0]; ++i)
    if (h.dim[i] != 1) raise(Errc::DimMismatch, "only 3D volumes are supported (dim[" + std::to_string(i) + "] != 1)");
  if (!is_supported(h.datatype))
    raise(Errc::UnsupportedDatatype, "datatype code " + std::to_string(h.datatype));
  return h;
}

std::array<std::uint8_t, kHeaderSize> encode_header(const NiftiHeader &h) {
  std::array<std::uint8_t, kHeaderSize> out{};
  std::span<std::uint8_t> s(out);
  put_le<std::int32_t>(s, kOffSizeofHdr, 348);
  out[38] = 'r'; // regular
  for (int i = 0; i < 8; ++i) {
    put_le<std::int16_t>(s, kOffDim + 2 * i, h.dim[i]);
    put_le<float>(s, kOffPixdim + 4 * i, h.pixdim[i]);
  }
  put_le<std::int16_t>(s, kOffDatatype, h.datatype);
  put_le<std::int16_t>(s, kOffBitpix, h.bitpix);
  put_le<float>(s, kOffVoxOffset, h.vox_offset);
  put_le<float>(s, kOffSclSlope, h.scl_slope);
  put_le<float>(s, kOffSclInter, h.scl_inter);
  out[kOffXyztUnits] = h.xyzt_units;
  std::memcpy(out.data() + kOffDescrip, h.descrip.data(), h.descrip.size());
  put_le<std::int16_t>(s, kOffQformCode, h.qform_code);
  put_le<std::int16_t>(s, kOffSformCode, h.sform_code);
  const float quat[6] = {h.quatern_b, h.quatern_c, h.quatern_d, h.qoffset_x, h.qoffset_y, h.qoffset_z};
  for (int i = 0; i < 6; ++i) put_le<float>(s, kOffQuatern + 4 * i, quat[i]);
  for (int c = 0; c < 4; ++c) {
    put_le<float>(s, kOffSrowX + 4 * c, h.srow_x[c]);
    put_le<float>(s, kOffSrowY + 4 * c, h.srow_y[c]);
    put_le<float>(s, kOffSrowZ + 4 * c, h.srow_z[c]);
  }
  std::memcpy(out.data() + kOffMagic, h.magic.data(), 4);
  return out;
}

NiftiHeader read_header(const std::filesystem::path &path) {
  auto f = open_for_read(path);
  const auto bytes = read_header_bytes(f.get(), path);
  return decode_header(bytes);
}

Volume read_volume(const std::filesystem::path &path, std::optional<VolumeKind> kind) {
  auto f = open_for_read(path);
  const auto bytes = read_header_bytes(f.get(), path);
  const NiftiHeader h = decode_header(bytes);
  const bool single = h.magic[1] == '+';
  const bool swap = h.big_endian == kHostLittle;

  const Index3 dims = h.spatial_dims();
  const std::size_t n = h.voxel_count();
  const auto dt = static_cast<NiftiDatatype>(h.datatype);
  const std::size_t nbytes = n * static_cast<std::size_t>(bytes_per_voxel(dt));

  std::vector<std::uint8_t> raw(nbytes);
  if (single) {
    if (h.vox_offset < static_cast<float>(kHeaderSize))
      raise(Errc::TruncatedFile, "vox_offset lies inside the header");
    // Skip extension bytes between header and data.
    std::size_t skip = static_cast<std::size_t>(h.vox_offset) - kHeaderSize;
    std::array<std::uint8_t, 4096> sink{};
    while (skip > 0) {
      const std::size_t step = std::min(skip, sink.size());
      if (read_bytes(f.get(), sink.data(), step) != step)
        raise(Errc::TruncatedFile, path.string() + " ends before vox_offset");
      skip -= step;
    }
    if (read_bytes(f.get(), raw.data(), nbytes) != nbytes)
      raise(Errc::TruncatedFile, path.string() + " holds fewer voxels than declared");
  } else {
    std::string img = path.string();
    if (ends_with(img, ".hdr.gz"))
      img = img.substr(0, img.size() - 7) + ".img.gz";
    else if (ends_with(img, ".hdr"))
      img = img.substr(0, img.size() - 4) + ".img";
    else
      raise(Errc::IoError, "pair-format header must end in .hdr: " + img);
    auto imgf = open_for_read(img);
    std::size_t skip = static_cast<std::size_t>(std::max(0.0f, h.vox_offset));
    std::array<std::uint8_t, 4096> sink{};
    while (skip > 0) {
      const std::size_t step = std::min(skip, sink.size());
      if (read_bytes(imgf.get(), sink.data(), step) != step) raise(Errc::TruncatedFile, img + " ends before vox_offset");
      skip -= step;
    }
    if (read_bytes(imgf.get(), raw.data(), nbytes) != nbytes)
      raise(Errc::TruncatedFile, img + " holds fewer voxels than declared");
  }

  const double slope = h.scl_slope;
  const double inter = slope != 0.0 ? static_cast<double>(h.scl_inter) : 0.0;
  std::vector<double> values(n);
  switch (dt) {
  case NiftiDatatype::UInt8: convert<std::uint8_t>(raw, false, slope, inter, values); break;
  case NiftiDatatype::Int16: convert<std::int16_t>(raw, swap, slope, inter, values); break;
  case NiftiDatatype::Int32: convert<std::int32_t>(raw, swap, slope, inter, values); break;
  case NiftiDatatype::Float32: convert<float>(raw, swap, slope, inter, values); break;
  case NiftiDatatype::Float64: convert<double>(raw, swap, slope, inter, values); break;
  }
  raw.clear();
  raw.shrink_to_fit();

  Grid grid;
  grid.dims = dims;
  for (int a = 0; a < 3; ++a) {
    const double p = std::abs(static_cast<double>(h.pixdim[a + 1]));
    grid.spacing[a] = p > 0.0 ? p : 1.0;
  }
  grid.affine = h.affine();
  return Volume(grid, to_row_major(values, dims), kind.value_or(VolumeKind::Intensity));
}

void write_volume(const Volume &volume, const std::filesystem::path &path) {
  NiftiHeader h;
  NiftiDatatype dt = NiftiDatatype::Float32;
  if (volume.is_label()) {
    double max_label = 0.0;
    for (double v : volume.data()) {
      if (!(v >= 0.0) || std::floor(v) != v)
        raise(Errc::LabelOutOfRange, "label value " + std::to_string(v) + " is not a non-negative integer");
      max_label = std::max(max_label, v);
    }
    if (max_label < 256.0)
      dt = NiftiDatatype::UInt8;
    else if (max_label <= 32767.0)
      dt = NiftiDatatype::Int16;
    else
      raise(Errc::LabelOutOfRange, "label value exceeds int16 range");
  }
  h.datatype = static_cast<std::int16_t>(dt);
  h.bitpix = static_cast<std::int16_t>(8 * bytes_per_voxel(dt));
  const Index3 &dims = volume.dims();
  for (int a = 0; a < 3; ++a) {
    if (dims[a] > 32767) raise(Errc::DimMismatch, "dimension exceeds NIfTI-1 int16 range");
    h.dim[a + 1] = static_cast<std::int16_t>(dims[a]);
    h.pixdim[a + 1] = static_cast<float>(volume.spacing()[a]);
  }
  h.pixdim[0] = 1.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.sform_code = 1;
  h.qform_code = 0;
  const Mat4 &m = volume.affine();
  for (int c = 0; c < 4; ++c) {
    h.srow_x[c] = static_cast<float>(m[0][c]);
    h.srow_y[c] = static_cast<float>(m[1][c]);
    h.srow_z[c] = static_cast<float>(m[2][c]);
  }
  const char desc[] = "brainseg";
  std::memcpy(h.descrip.data(), desc, sizeof(desc));

  std::vector<std::uint8_t> buffer(kSingleFileOffset + volume.size() * bytes_per_voxel(dt), 0);
  const auto header = encode_header(h);
  std::copy(header.begin(), header.end(), buffer.begin());
  // bytes 348..351: empty extension flag
  const std::size_t nx = dims[0], ny = dims[1], nz = dims[2];
  std::uint8_t *dst = buffer.data() + kSingleFileOffset;
  std::span<std::uint8_t> payload(dst, buffer.size() - kSingleFileOffset);
  std::size_t v = 0;
  for (std::size_t z = 0; z < nz; ++z)
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x, ++v) {
        const double value = volume.at(x, y, z);
        switch (dt) {
        case NiftiDatatype::UInt8: payload[v] = static_cast<std::uint8_t>(value); break;
        case NiftiDatatype::Int16: put_le<std::int16_t>(payload, 2 * v, static_cast<std::int16_t>(value)); break;
        default: put_le<float>(payload, 4 * v, static_cast<float>(value)); break;
        }
      }

  const std::string p = path.string();
  if (ends_with(p, ".gz")) {
    GzHandle f(gzopen(p.c_str(), "wb6"));
    if (!f) raise(Errc::IoError, "cannot open " + p + " for writing");
    std::size_t off = 0;
    while (off < buffer.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(buffer.size() - off, 1u << 30));
      if (gzwrite(f.get(), buffer.data() + off, chunk) != static_cast<int>(chunk))
        raise(Errc::IoError, "write failure on " + p);
      off += chunk;
    }
    if (gzclose(f.release()) != Z_OK) raise(Errc::IoError, "close failure on " + p);
  } else {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::IoError, "cannot open " + p + " for writing");
    out.write(reinterpret_cast<const char *>(buffer.data()), static_cast<std::streamsize>(buffer.size()));
    if (!out) raise(Errc::IoError, "write failure on " + p);
  }
}

} // namespace brainseg::volio
