#include "spatial_diar/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "spatial_diar/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor I/O assumes a little-endian host");

namespace spatial_diar {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'D', 'T', 'E', 'N', 'S', 'R', '1'};

const char* dtype_name(DType dtype) {
  return dtype == DType::f32 ? "f32" : "c64";
}

}  // namespace

std::size_t TensorFile::element_count() const {
  std::size_t n = 1;
  for (std::size_t dim : shape) n *= dim;
  return n;
}

std::vector<char> encode_tensor(const TensorFile& tensor) {
  const std::size_t floats_per_element = tensor.dtype == DType::c64 ? 2 : 1;
  if (tensor.values.size() != tensor.element_count() * floats_per_element) {
    throw InputError("tensor payload size does not match its shape");
  }
  nlohmann::json header;
  header["dtype"] = dtype_name(tensor.dtype);
  header["shape"] = tensor.shape;
  header["order"] = "row-major";
  const std::string text = header.dump();

  std::vector<char> bytes(kMagic.begin(), kMagic.end());
  const auto header_length = static_cast<std::uint32_t>(text.size());
  const auto* length_bytes = reinterpret_cast<const char*>(&header_length);
  bytes.insert(bytes.end(), length_bytes, length_bytes + sizeof(header_length));
  bytes.insert(bytes.end(), text.begin(), text.end());
  const auto* payload = reinterpret_cast<const char*>(tensor.values.data());
  bytes.insert(bytes.end(), payload, payload + tensor.values.size() * sizeof(float));
  return bytes;
}

TensorFile decode_tensor(const std::vector<char>& bytes) {
  if (bytes.size() < kMagic.size() + 4 ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin())) {
    throw InputError("not an SDTENSR1 tensor file");
  }
  std::uint32_t header_length = 0;
  std::memcpy(&header_length, bytes.data() + kMagic.size(), sizeof(header_length));
  const std::size_t payload_offset = kMagic.size() + 4 + header_length;
  if (payload_offset > bytes.size()) throw InputError("truncated tensor header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kMagic.size() + 4,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(payload_offset));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed tensor header: ") + e.what());
  }

  TensorFile tensor;
  try {
    const auto dtype = header.at("dtype").get<std::string>();
    if (dtype == "f32") {
      tensor.dtype = DType::f32;
    } else if (dtype == "c64") {
      tensor.dtype = DType::c64;
    } else {
      throw InputError("unsupported tensor dtype '" + dtype + "'");
    }
    if (header.value("order", std::string("row-major")) != "row-major") {
      throw InputError("only row-major tensors are supported");
    }
    tensor.shape = header.at("shape").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed tensor header: ") + e.what());
  }

  const std::size_t floats =
      tensor.element_count() * (tensor.dtype == DType::c64 ? 2 : 1);
  if (bytes.size() - payload_offset != floats * sizeof(float)) {
    throw InputError("tensor payload size does not match its shape");
  }
  tensor.values.resize(floats);
  std::memcpy(tensor.values.data(), bytes.data() + payload_offset, floats * sizeof(float));
  return tensor;
}

void write_tensor(const std::filesystem::path& path, const TensorFile& tensor) {
  const auto bytes = encode_tensor(tensor);
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("cannot write tensor file " + path.string());
}

TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open tensor file " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

TensorFile to_tensor(const RealMatrix& matrix) {
  TensorFile t;
  t.dtype = DType::f32;
  t.shape = {static_cast<std::size_t>(matrix.rows()),
             static_cast<std::size_t>(matrix.cols())};
  t.values.resize(static_cast<std::size_t>(matrix.size()));
  for (Eigen::Index i = 0; i < matrix.size(); ++i) {
    t.values[static_cast<std::size_t>(i)] = static_cast<float>(matrix.data()[i]);
  }
  return t;
}

RealMatrix to_real_matrix(const TensorFile& tensor) {
  if (tensor.dtype != DType::f32 || tensor.shape.size() != 2) {
    throw InputError("expected a 2-D f32 tensor");
  }
  RealMatrix m(static_cast<Eigen::Index>(tensor.shape[0]),
               static_cast<Eigen::Index>(tensor.shape[1]));
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = tensor.values[static_cast<std::size_t>(i)];
  }
  return m;
}

TensorFile to_tensor(const PosteriorTensor& posterior) {
  TensorFile t;
  t.dtype = DType::f32;
  t.shape = {static_cast<std::size_t>(posterior.frames),
             static_cast<std::size_t>(posterior.bins),
             static_cast<std::size_t>(posterior.classes)};
  t.values.assign(posterior.values.begin(), posterior.values.end());
  return t;
}

PosteriorTensor to_posterior(const TensorFile& tensor) {
  if (tensor.dtype != DType::f32 || tensor.shape.size() != 3) {
    throw InputError("expected a 3-D f32 posterior tensor");
  }
  PosteriorTensor p(static_cast<int>(tensor.shape[0]), static_cast<int>(tensor.shape[1]),
                    static_cast<int>(tensor.shape[2]));
  std::copy(tensor.values.begin(), tensor.values.end(), p.values.begin());
  return p;
}

}  // namespace spatial_diar
