#pragma once

// Versioned binary tensor container used for checkpoints and preprocessed
// block files. Serialization is fully deterministic (fixed entry order, raw
// little-endian payloads), so identical state produces identical bytes.

#include <cstdint>
#include <string>
#include <vector>

#include "u3ds3/pointcloud.hpp"

namespace u3ds3 {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u64 = 2, i32 = 3, u8 = 4 };

std::size_t dtype_size(DType t);

struct BlobEntry {
  std::string name;
  DType dtype = DType::u8;
  std::vector<std::uint64_t> shape;
  std::vector<std::uint8_t> data;

  std::uint64_t elem_count() const;
};

struct Blob {
  std::vector<BlobEntry> entries;

  bool has(const std::string& name) const;
  const BlobEntry& require(const std::string& name, DType dtype) const;

  void add_f32(const std::string& name, std::vector<std::uint64_t> shape, const float* data);
  void add_f64(const std::string& name, std::vector<std::uint64_t> shape, const double* data);
  void add_u64(const std::string& name, std::vector<std::uint64_t> shape, const std::uint64_t* data);
  void add_i32(const std::string& name, std::vector<std::uint64_t> shape, const std::int32_t* data);
  void add_text(const std::string& name, const std::string& text);

  std::vector<float> get_f32(const std::string& name) const;
  std::vector<double> get_f64(const std::string& name) const;
  std::vector<std::uint64_t> get_u64(const std::string& name) const;
  std::vector<std::int32_t> get_i32(const std::string& name) const;
  std::string get_text(const std::string& name) const;
  std::uint64_t get_scalar_u64(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointMagic = 0x53443355;  // "U3DS" little-endian
inline constexpr std::uint32_t kBlocksMagic = 0x4b4c4255;      // "UBLK" little-endian

void save_blob(const std::string& path, const Blob& blob, std::uint32_t magic);
Blob load_blob(const std::string& path, std::uint32_t expected_magic);

// Preprocessed block storage: per block the point indices into the
// preprocessed cloud and the n x 12 feature matrix. Superpoint ids and
// ground-truth labels are re-attached from the sidecar files at load time.
void save_blocks_file(const std::string& path, const std::vector<Block>& blocks);
std::vector<Block> load_blocks_file(const std::string& path);

}  // namespace u3ds3
