#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "skillrec/neuralkit/tensor.hpp"

namespace skillrec::nk {

/// Binary tensor container:
///   "SKM1" | u32 tensor_count | per tensor:
///   u32 name_len | name bytes | u32 rows | u32 cols | rows*cols float32
/// All integers and floats little-endian, values row-major.
inline constexpr char kModelMagic[4] = {'S', 'K', 'M', '1'};

std::string encode_tensors(const Parameters& params);
void decode_tensors_into(const std::string& bytes, Parameters& params, const std::string& origin);

/// Writes `path` (tensors) and `path + ".json"` (architecture sidecar).
void save_model(const std::filesystem::path& path, const Parameters& params,
                const nlohmann::json& sidecar);
nlohmann::json load_sidecar(const std::filesystem::path& path);
/// Fills tensors by name; every tensor in `params` must be present with the
/// same shape.
void load_tensors(const std::filesystem::path& path, Parameters& params);

std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Little-endian helpers shared by the binary formats.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
void put_f64(std::string& out, double v);
void put_str(std::string& out, const std::string& s);

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string origin)
      : bytes_(bytes), origin_(std::move(origin)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void expect(const char* magic, std::size_t n);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n);
  const std::string& bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace skillrec::nk
