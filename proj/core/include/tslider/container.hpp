#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tslider/tensor.hpp"

namespace tslider {

/// Weight container layout:
///
///   bytes [0, 8)     magic "TSLW0001"
///   bytes [8, 16)    little-endian u64 header length N
///   bytes [16, 16+N) UTF-8 JSON header, space-padded so the payload starts
///                    on a 64-byte boundary
///   payload          little-endian f32 data; each tensor begins at a 64-byte
///                    aligned offset, gaps are zero
///
/// The header is {"metadata": {...}, "tensors": [{"name", "dtype", "shape",
/// "offset", "nbytes"}, ...]} with offsets relative to the payload start.
inline constexpr std::string_view kContainerMagic = "TSLW0001";
inline constexpr std::size_t kContainerAlignment = 64;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Container {
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<NamedTensor> tensors;

  /// Tensor by name; throws FormatError when absent.
  const Tensor& get(std::string_view name) const;
  bool contains(std::string_view name) const;
};

std::string serialize_container(const Container& container);
/// Throws FormatError with a diagnostic on bad magic, truncation, malformed
/// header or out-of-range tensor records.
Container parse_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

}  // namespace tslider
