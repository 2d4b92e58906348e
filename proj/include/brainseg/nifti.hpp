#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include "brainseg/volume.hpp"

namespace brainseg::volio {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kSingleFileOffset = 352;

enum class NiftiDatatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

bool is_supported(std::int16_t datatype);
int bytes_per_voxel(NiftiDatatype datatype);

/// The subset of the NIfTI-1 header this toolkit reads and writes. Fields not
/// listed here are written as zero.
struct NiftiHeader {
  std::int16_t datatype = static_cast<std::int16_t>(NiftiDatatype::Float32);
  std::int16_t bitpix = 32;
  std::array<std::int16_t, 8> dim{3, 1, 1, 1, 1, 1, 1, 1};
  std::array<float, 8> pixdim{1, 1, 1, 1, 1, 1, 1, 1};
  float vox_offset = static_cast<float>(kSingleFileOffset);
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::uint8_t xyzt_units = 2; // mm
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0, quatern_c = 0, quatern_d = 0;
  float qoffset_x = 0, qoffset_y = 0, qoffset_z = 0;
  std::array<float, 4> srow_x{}, srow_y{}, srow_z{};
  std::array<char, 80> descrip{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false; // byte order the header was read in

  Index3 spatial_dims() const;
  std::size_t voxel_count() const;
  // sform when sform_code > 0, else qform when qform_code > 0, else diag(pixdim).
  Mat4 affine() const;
};

// Decodes 348 raw header bytes; detects byte order from sizeof_hdr.
// Throws BadMagic, UnsupportedDatatype, DimMismatch.
NiftiHeader decode_header(std::span<const std::uint8_t, kHeaderSize> bytes);
// Always little-endian.
std::array<std::uint8_t, kHeaderSize> encode_header(const NiftiHeader &header);

NiftiHeader read_header(const std::filesystem::path &path);

/// Reads a NIfTI-1 volume (.nii, .nii.gz, or .hdr/.img pair). Voxel values are
/// scaled by scl_slope/scl_inter when the slope is non-zero. The result is an
/// Intensity volume unless `kind` says otherwise.
Volume read_volume(const std::filesystem::path &path, std::optional<VolumeKind> kind = std::nullopt);

/// Writes single-file NIfTI-1; gzip-compressed when the path ends in ".gz".
/// Intensity volumes are stored as float32, label volumes as uint8 (max < 256)
/// or int16.
void write_volume(const Volume &volume, const std::filesystem::path &path);

} // namespace brainseg::volio
