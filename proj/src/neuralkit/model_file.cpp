#include "skillrec/neuralkit/model_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "skillrec/error.hpp"

namespace skillrec::nk {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }
void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void ByteReader::need(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw Error(origin_ + ": truncated binary file");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const auto n = u32();
  need(n);
  std::string s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

void ByteReader::expect(const char* magic, std::size_t n) {
  need(n);
  if (std::memcmp(bytes_.data() + pos_, magic, n) != 0)
    throw Error(origin_ + ": bad magic bytes");
  pos_ += n;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

std::string encode_tensors(const Parameters& params) {
  std::string out(kModelMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params.tensors()) {
    put_str(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.value.rows()));
    put_u32(out, static_cast<std::uint32_t>(t.value.cols()));
    out.reserve(out.size() + 4 * static_cast<std::size_t>(t.value.size()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i)
      put_f32(out, static_cast<float>(t.value.data()[i]));
  }
  return out;
}

void decode_tensors_into(const std::string& bytes, Parameters& params, const std::string& origin) {
  ByteReader in(bytes, origin);
  in.expect(kModelMagic, 4);
  const auto count = in.u32();
  std::vector<bool> filled(params.size(), false);
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = in.str();
    const auto rows = in.u32();
    const auto cols = in.u32();
    const Tensor* t = params.find(name);
    if (!t) throw Error(origin + ": unexpected tensor '" + name + "'");
    const TensorId id = params.id_of(name);
    Mat& w = params.value(id);
    if (w.rows() != rows || w.cols() != cols)
      throw Error(origin + ": shape mismatch for tensor '" + name + "'");
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = in.f32();
    filled[id] = true;
  }
  for (TensorId i = 0; i < params.size(); ++i)
    if (!filled[i]) throw Error(origin + ": missing tensor '" + params[i].name + "'");
  if (!in.done()) throw Error(origin + ": trailing bytes after tensors");
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

void save_model(const std::filesystem::path& path, const Parameters& params,
                const nlohmann::json& sidecar) {
  write_file(path, encode_tensors(params));
  write_file(sidecar_path(path), sidecar.dump(2) + "\n");
}

nlohmann::json load_sidecar(const std::filesystem::path& path) {
  const auto text = read_file(sidecar_path(path));
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(sidecar_path(path).string() + ": " + e.what());
  }
}

void load_tensors(const std::filesystem::path& path, Parameters& params) {
  decode_tensors_into(read_file(path), params, path.string());
}

}  // namespace skillrec::nk
