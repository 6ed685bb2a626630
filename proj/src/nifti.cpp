/*
 * styleseg: MRI glioma segmentation with style-transfer augmentation
 *
 * Copyright 2026 styleseg contributors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "styleseg/nifti.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace styleseg {

namespace {

constexpr int32_t kHeaderSize = 348;
constexpr int64_t kVoxOffset = 352;
constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtFloat32 = 16;

// Header field offsets per the NIfTI-1 standard.
constexpr size_t kOffDim = 40;        // short dim[8]
constexpr size_t kOffDatatype = 70;   // short
constexpr size_t kOffBitpix = 72;     // short
constexpr size_t kOffPixdim = 76;     // float pixdim[8]
constexpr size_t kOffVoxOffset = 108; // float
constexpr size_t kOffXyztUnits = 123; // char
constexpr size_t kOffQformCode = 252; // short
constexpr size_t kOffSformCode = 254; // short
constexpr size_t kOffQuatern = 256;   // float b,c,d
constexpr size_t kOffQoffset = 268;   // float x,y,z
constexpr size_t kOffSrow = 280;      // float srow_x/y/z[4]
constexpr size_t kOffMagic = 344;     // char[4]

template <class T>
void put(std::vector<unsigned char>& buf, size_t off, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::memcpy(buf.data() + off, &v, sizeof(T));
}

template <class T>
T get(const std::vector<unsigned char>& buf, size_t off) {
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

struct ParsedHeader {
  std::array<int64_t, 3> dims;      // D, H, W
  std::array<double, 3> spacing;    // same order
  int16_t datatype;
  int64_t vox_offset;
  NiftiXform xform;
};

ParsedHeader parse_header(const std::vector<unsigned char>& h, const std::string& path) {
  const int32_t sizeof_hdr = get<int32_t>(h, 0);
  if (sizeof_hdr != kHeaderSize) {
    if (__builtin_bswap32(static_cast<uint32_t>(sizeof_hdr)) == kHeaderSize)
      throw DataError(path + ": big-endian NIfTI not supported");
    throw DataError(path + ": not a NIfTI-1 file (bad sizeof_hdr)");
  }
  char magic[4];
  std::memcpy(magic, h.data() + kOffMagic, 4);
  if (!(magic[0] == 'n' && magic[1] == '+' && magic[2] == '1' && magic[3] == '\0'))
    throw DataError(path + ": bad magic (only single-file n+1 supported)");

  const int16_t ndim = get<int16_t>(h, kOffDim);
  if (ndim != 3) throw DataError(path + ": expected 3-dimensional volume");
  const int16_t nx = get<int16_t>(h, kOffDim + 2);
  const int16_t ny = get<int16_t>(h, kOffDim + 4);
  const int16_t nz = get<int16_t>(h, kOffDim + 6);
  if (nx <= 0 || ny <= 0 || nz <= 0)
    throw DataError(path + ": non-positive dimension in header");

  const float px = get<float>(h, kOffPixdim + 4);
  const float py = get<float>(h, kOffPixdim + 8);
  const float pz = get<float>(h, kOffPixdim + 12);
  if (!(px > 0.0f) || !(py > 0.0f) || !(pz > 0.0f))
    throw DataError(path + ": non-positive pixdim in header");

  ParsedHeader out;
  out.dims = {nz, ny, nx};
  out.spacing = {pz, py, px};
  out.datatype = get<int16_t>(h, kOffDatatype);
  const float vox = get<float>(h, kOffVoxOffset);
  out.vox_offset = static_cast<int64_t>(vox);
  if (out.vox_offset < kHeaderSize)
    throw DataError(path + ": vox_offset before end of header");

  out.xform.qfac = get<float>(h, kOffPixdim);
  out.xform.qform_code = get<int16_t>(h, kOffQformCode);
  out.xform.sform_code = get<int16_t>(h, kOffSformCode);
  for (int i = 0; i < 3; ++i) {
    out.xform.quatern[i] = get<float>(h, kOffQuatern + 4 * i);
    out.xform.qoffset[i] = get<float>(h, kOffQoffset + 4 * i);
  }
  for (int i = 0; i < 12; ++i) out.xform.srow[i] = get<float>(h, kOffSrow + 4 * i);
  return out;
}

std::vector<unsigned char> build_header(const std::array<int64_t, 3>& dims,
                                        const std::array<double, 3>& spacing,
                                        int16_t datatype, int16_t bitpix,
                                        const NiftiXform& xform) {
  std::vector<unsigned char> h(kHeaderSize, 0);
  put<int32_t>(h, 0, kHeaderSize);
  put<int16_t>(h, kOffDim, 3);
  put<int16_t>(h, kOffDim + 2, static_cast<int16_t>(dims[2]));  // x = W
  put<int16_t>(h, kOffDim + 4, static_cast<int16_t>(dims[1]));  // y = H
  put<int16_t>(h, kOffDim + 6, static_cast<int16_t>(dims[0]));  // z = D
  for (int i = 4; i < 8; ++i) put<int16_t>(h, kOffDim + 2 * i, 1);
  put<int16_t>(h, kOffDatatype, datatype);
  put<int16_t>(h, kOffBitpix, bitpix);
  put<float>(h, kOffPixdim, xform.qfac);
  put<float>(h, kOffPixdim + 4, static_cast<float>(spacing[2]));
  put<float>(h, kOffPixdim + 8, static_cast<float>(spacing[1]));
  put<float>(h, kOffPixdim + 12, static_cast<float>(spacing[0]));
  put<float>(h, kOffVoxOffset, static_cast<float>(kVoxOffset));
  h[kOffXyztUnits] = 2;  // millimetres
  put<int16_t>(h, kOffQformCode, xform.qform_code);
  put<int16_t>(h, kOffSformCode, xform.sform_code);
  for (int i = 0; i < 3; ++i) {
    put<float>(h, kOffQuatern + 4 * i, xform.quatern[i]);
    put<float>(h, kOffQoffset + 4 * i, xform.qoffset[i]);
  }
  for (int i = 0; i < 12; ++i) put<float>(h, kOffSrow + 4 * i, xform.srow[i]);
  h[kOffMagic] = 'n';
  h[kOffMagic + 1] = '+';
  h[kOffMagic + 2] = '1';
  h[kOffMagic + 3] = '\0';
  return h;
}

std::vector<unsigned char> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> bytes(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw DataError(path + ": short read");
  return bytes;
}

void write_all(const std::string& path, const std::vector<unsigned char>& header,
               const void* payload, size_t payload_bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(header.data()), header.size());
  const char ext[4] = {0, 0, 0, 0};  // no extensions
  out.write(ext, 4);
  out.write(reinterpret_cast<const char*>(payload), payload_bytes);
  if (!out) throw DataError(path + ": write failed");
}

}  // namespace

std::variant<VoxelGrid, LabelVolume> read_nifti(const std::string& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < kHeaderSize) throw DataError(path + ": truncated header");
  std::vector<unsigned char> header(bytes.begin(), bytes.begin() + kHeaderSize);
  const ParsedHeader ph = parse_header(header, path);
  const int64_t n = ph.dims[0] * ph.dims[1] * ph.dims[2];

  auto need = [&](int64_t elem_size) {
    const int64_t total = ph.vox_offset + n * elem_size;
    if (static_cast<int64_t>(bytes.size()) < total)
      throw DataError(path + ": payload truncated (expected " +
                      std::to_string(total) + " bytes, have " +
                      std::to_string(bytes.size()) + ")");
  };

  switch (ph.datatype) {
    case kDtUint8: {
      need(1);
      LabelVolume lv;
      lv.dims = ph.dims;
      lv.spacing = ph.spacing;
      lv.xform = ph.xform;
      lv.data.assign(bytes.begin() + ph.vox_offset,
                     bytes.begin() + ph.vox_offset + n);
      lv.validate(path);
      return lv;
    }
    case kDtInt16:
    case kDtFloat32: {
      const int64_t esz = ph.datatype == kDtInt16 ? 2 : 4;
      need(esz);
      VoxelGrid vg;
      vg.dims = ph.dims;
      vg.spacing = ph.spacing;
      vg.xform = ph.xform;
      vg.data.resize(static_cast<size_t>(n));
      const unsigned char* p = bytes.data() + ph.vox_offset;
      if (ph.datatype == kDtInt16) {
        for (int64_t i = 0; i < n; ++i) {
          int16_t v;
          std::memcpy(&v, p + 2 * i, 2);
          vg.data[static_cast<size_t>(i)] = static_cast<float>(v);
        }
      } else {
        std::memcpy(vg.data.data(), p, static_cast<size_t>(n) * 4);
      }
      vg.validate(path);
      return vg;
    }
    default:
      throw DataError(path + ": unsupported datatype code " +
                      std::to_string(ph.datatype));
  }
}

VoxelGrid read_nifti_image(const std::string& path) {
  auto v = read_nifti(path);
  if (auto* g = std::get_if<VoxelGrid>(&v)) return std::move(*g);
  throw DataError(path + ": expected an intensity volume, found uint8 labels");
}

LabelVolume read_nifti_labels(const std::string& path) {
  auto v = read_nifti(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  throw DataError(path + ": expected uint8 labels, found an intensity volume");
}

void write_nifti(const VoxelGrid& grid, const std::string& path) {
  grid.validate(path);
  const auto header = build_header(grid.dims, grid.spacing, kDtFloat32, 32, grid.xform);
  write_all(path, header, grid.data.data(), grid.data.size() * 4);
}

void write_nifti(const LabelVolume& labels, const std::string& path) {
  labels.validate(path);
  const auto header = build_header(labels.dims, labels.spacing, kDtUint8, 8, labels.xform);
  write_all(path, header, labels.data.data(), labels.data.size());
}

}  // namespace styleseg
