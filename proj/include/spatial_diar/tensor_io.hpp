#pragma once

// SDTENSR1 tensor files: 8-byte magic, little-endian u32 header length,
// JSON header {"dtype","order","shape"}, then the raw little-endian payload.
// Complex values are stored as interleaved (re, im) float32 pairs.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "spatial_diar/types.hpp"

namespace spatial_diar {

enum class DType { f32, c64 };

struct TensorFile {
  DType dtype = DType::f32;
  std::vector<std::size_t> shape;
  // f32: one float per element. c64: two floats per element (re, im).
  std::vector<float> values;

  std::size_t element_count() const;
};

std::vector<char> encode_tensor(const TensorFile& tensor);
TensorFile decode_tensor(const std::vector<char>& bytes);

void write_tensor(const std::filesystem::path& path, const TensorFile& tensor);
TensorFile read_tensor(const std::filesystem::path& path);

TensorFile to_tensor(const RealMatrix& matrix);
RealMatrix to_real_matrix(const TensorFile& tensor);

TensorFile to_tensor(const PosteriorTensor& posterior);
PosteriorTensor to_posterior(const TensorFile& tensor);

}  // namespace spatial_diar
