#include "loopstack/model/weight_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>

#include "loopstack/error.hpp"

namespace loopstack {

namespace {

static_assert(sizeof(float) == 4);

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& in, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_floats(std::string& out, std::span<const float> xs) {
  for (float f : xs) put_le(out, std::bit_cast<std::uint32_t>(f));
}

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_model(const Model& model) {
  nlohmann::json dir = nlohmann::json::array();
  std::string payload;
  visit_tensors(model, ConstTensorVisitor{
                       [&](const std::string& name, const Matrix<float>& t) {
                         dir.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}, {"offset", payload.size()}});
                         put_floats(payload, t.flat());
                       },
                       [&](const std::string& name, const std::vector<float>& v) {
                         dir.push_back({{"name", name}, {"shape", {v.size()}}, {"offset", payload.size()}});
                         put_floats(payload, v);
                       }});
  const std::string header = nlohmann::json{{"config", to_json(model.config)}, {"tensors", dir}}.dump();

  std::string out(kWeightMagic, 4);
  put_le<std::uint32_t>(out, kWeightVersion);
  put_le<std::uint64_t>(out, header.size());
  out += header;
  out += payload;
  put_le<std::uint32_t>(out, crc32_of(payload.data(), payload.size()));
  return out;
}

Model deserialize_model(const std::string& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kWeightMagic, 4) != 0)
    throw FormatError("weight file: bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kWeightVersion)
    throw FormatError("weight file: version " + std::to_string(version) + " unsupported (expected " +
                      std::to_string(kWeightVersion) + ")");
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) throw FormatError("weight file: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("weight file: malformed header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("config") || !header.contains("tensors"))
    throw FormatError("weight file: header lacks config/tensors");

  ModelConfig cfg;
  try {
    cfg = model_config_from_json(header.at("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weight file: ") + e.what());
  }

  const std::size_t payload_begin = 16 + header_len;
  if (bytes.size() < payload_begin + 4) throw FormatError("weight file: truncated payload");
  const std::size_t payload_len = bytes.size() - payload_begin - 4;
  const auto& dir = header.at("tensors");
  if (!dir.is_array()) throw FormatError("weight file: tensor directory is not an array");

  Model model = make_zero_model(cfg);
  std::size_t idx = 0;
  auto fill = [&](const std::string& name, std::span<float> dst, std::vector<std::size_t> shape) {
    if (idx >= dir.size()) throw FormatError("weight file: missing tensor '" + name + "'");
    const auto& e = dir[idx++];
    std::vector<std::size_t> got_shape;
    std::size_t offset = 0;
    try {
      if (e.at("name").get<std::string>() != name)
        throw FormatError("weight file: expected tensor '" + name + "', found '" + e.at("name").get<std::string>() +
                          "'");
      got_shape = e.at("shape").get<std::vector<std::size_t>>();
      offset = e.at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception&) {
      throw FormatError("weight file: malformed directory entry for tensor '" + name + "'");
    }
    if (got_shape != shape) {
      std::string s;
      for (auto v : got_shape) s += std::to_string(v) + " ";
      throw FormatError("weight file: tensor '" + name + "' has shape [ " + s + "] inconsistent with config");
    }
    const std::size_t nbytes = dst.size() * 4;
    if (offset > payload_len || nbytes > payload_len - offset)
      throw FormatError("weight file: tensor '" + name + "' truncated");
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload_begin + offset + 4 * i));
  };
  visit_tensors(model, TensorVisitor{
                           [&](const std::string& name, Matrix<float>& t) {
                             fill(name, t.flat(), {t.rows(), t.cols()});
                           },
                           [&](const std::string& name, std::vector<float>& v) { fill(name, v, {v.size()}); }});
  if (idx != dir.size()) throw FormatError("weight file: unexpected extra tensors in directory");

  const auto stored = get_le<std::uint32_t>(bytes, bytes.size() - 4);
  if (stored != crc32_of(bytes.data() + payload_begin, payload_len))
    throw FormatError("weight file: checksum mismatch");
  return model;
}

void save_weights(const Model& model, const std::filesystem::path& path) {
  const std::string bytes = serialize_model(model);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

Model load_weights(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_model(ss.str());
}

}  // namespace loopstack
