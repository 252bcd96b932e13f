#include "tslider/container.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "tslider/errors.hpp"

namespace tslider {

namespace {

std::size_t align_up(std::size_t n) {
  return (n + kContainerAlignment - 1) / kContainerAlignment * kContainerAlignment;
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

void put_f32(char* dst, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
}

float get_f32(const char* src) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

const Tensor& Container::get(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw FormatError("container has no tensor '" + std::string(name) + "'");
}

bool Container::contains(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

std::string serialize_container(const Container& c) {
  nlohmann::ordered_json header;
  header["metadata"] = c.metadata;
  header["tensors"] = nlohmann::ordered_json::array();
  std::set<std::string> names;
  std::size_t offset = 0;
  for (const auto& nt : c.tensors) {
    if (!names.insert(nt.name).second) throw ContractError("duplicate tensor name '" + nt.name + "'");
    const std::size_t nbytes = nt.tensor.numel() * sizeof(float);
    header["tensors"].push_back(
        {{"name", nt.name}, {"dtype", "F32"}, {"shape", nt.tensor.shape()}, {"offset", offset}, {"nbytes", nbytes}});
    offset = align_up(offset + nbytes);
  }
  std::string json = header.dump();
  json.append(align_up(16 + json.size()) - (16 + json.size()), ' ');

  std::string out;
  out.reserve(16 + json.size() + offset);
  out.append(kContainerMagic);
  put_u64(out, json.size());
  out.append(json);
  const std::size_t payload = out.size();
  out.resize(payload + offset, '\0');
  std::size_t cursor = 0;
  for (const auto& nt : c.tensors) {
    auto data = nt.tensor.data();
    for (std::size_t i = 0; i < data.size(); ++i) put_f32(out.data() + payload + cursor + 4 * i, data[i]);
    cursor = align_up(cursor + data.size() * sizeof(float));
  }
  return out;
}

Container parse_container(std::string_view bytes) {
  const std::size_t head = std::min<std::size_t>(bytes.size(), 8);
  if (bytes.substr(0, head) != kContainerMagic.substr(0, head)) {
    throw FormatError("bad container magic (expected \"TSLW0001\")");
  }
  if (bytes.size() < 16) throw FormatError("container truncated: " + std::to_string(bytes.size()) + " bytes");
  const std::uint64_t header_len = get_u64(bytes.substr(8, 8));
  if (header_len > bytes.size() - 16) {
    throw FormatError("container truncated: header declares " + std::to_string(header_len) + " bytes, only " +
                      std::to_string(bytes.size() - 16) + " present");
  }
  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array()) {
    throw FormatError("container header lacks a tensor list");
  }
  const std::size_t payload_start = 16 + header_len;
  const std::string_view payload = bytes.substr(payload_start);

  Container c;
  if (header.contains("metadata")) c.metadata = header["metadata"];
  std::set<std::string> names;
  std::uint64_t payload_end = 0;
  for (const auto& rec : header["tensors"]) {
    try {
      const auto name = rec.at("name").get<std::string>();
      if (rec.at("dtype").get<std::string>() != "F32") throw FormatError("tensor '" + name + "' has unsupported dtype");
      const auto shape = rec.at("shape").get<Shape>();
      const auto offset = rec.at("offset").get<std::uint64_t>();
      const auto nbytes = rec.at("nbytes").get<std::uint64_t>();
      if (!names.insert(name).second) throw FormatError("duplicate tensor '" + name + "'");
      if (shape.empty()) throw FormatError("tensor '" + name + "' has an empty shape");
      std::uint64_t count = 1;
      for (auto e : shape) {
        if (e == 0 || count > std::numeric_limits<std::uint64_t>::max() / e) {
          throw FormatError("tensor '" + name + "' has an invalid shape");
        }
        count *= e;
      }
      if (nbytes != count * sizeof(float)) throw FormatError("tensor '" + name + "' byte count does not match shape");
      if (offset % kContainerAlignment != 0) throw FormatError("tensor '" + name + "' is not 64-byte aligned");
      if (offset > payload.size() || nbytes > payload.size() - offset) {
        throw FormatError("container truncated: tensor '" + name + "' extends past end of file");
      }
      payload_end = std::max<std::uint64_t>(payload_end, align_up(offset + nbytes));
      std::vector<float> data(count);
      for (std::size_t i = 0; i < count; ++i) data[i] = get_f32(payload.data() + offset + 4 * i);
      c.tensors.push_back({name, Tensor(shape, std::move(data))});
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("malformed tensor record: ") + e.what());
    }
  }
  if (payload.size() < payload_end) {
    throw FormatError("container truncated: payload has " + std::to_string(payload.size()) + " of " +
                      std::to_string(payload_end) + " bytes");
  }
  if (payload.size() > payload_end) throw FormatError("container has trailing bytes after the last tensor");
  return c;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("failed writing " + path.string());
}

void write_container(const std::filesystem::path& path, const Container& container) {
  write_file_bytes(path, serialize_container(container));
}

Container read_container(const std::filesystem::path& path) {
  return parse_container(read_file_bytes(path));
}

}  // namespace tslider
