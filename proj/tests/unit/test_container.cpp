#include <gtest/gtest.h>

#include <cstring>

#include "fixtures.hpp"
#include "tslider/container.hpp"
#include "tslider/errors.hpp"

namespace tslider {
namespace {

using testing::random_tensor;

Container sample() {
  Container c;
  c.metadata["kind"] = "test";
  c.metadata["n"] = 3;
  c.tensors.push_back({"alpha", random_tensor({3, 5}, 1)});
  c.tensors.push_back({"beta", random_tensor({7}, 2)});
  c.tensors.push_back({"gamma", Tensor({1}, {-0.0f})});
  return c;
}

std::uint64_t read_u64(const std::string& bytes, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[at + i]);
  return v;
}

TEST(Container, LayoutAndAlignment) {
  const auto bytes = serialize_container(sample());
  ASSERT_GE(bytes.size(), 16u);
  EXPECT_EQ(bytes.substr(0, 8), "TSLW0001");
  const auto header_len = read_u64(bytes, 8);
  EXPECT_EQ((16 + header_len) % kContainerAlignment, 0u);
  const auto header = nlohmann::json::parse(bytes.substr(16, header_len));
  ASSERT_EQ(header["tensors"].size(), 3u);
  for (const auto& rec : header["tensors"]) {
    EXPECT_EQ(rec["dtype"], "F32");
    EXPECT_EQ(rec["offset"].get<std::size_t>() % kContainerAlignment, 0u);
  }
  // Payload holds little-endian floats.
  const auto& first = header["tensors"][0];
  float v;
  std::memcpy(&v, bytes.data() + 16 + header_len + first["offset"].get<std::size_t>(), 4);
  EXPECT_EQ(v, sample().tensors[0].tensor.at(0));
}

TEST(Container, RoundTripIsExact) {
  const auto c = sample();
  const auto bytes = serialize_container(c);
  const auto back = parse_container(bytes);
  EXPECT_EQ(back.metadata, c.metadata);
  ASSERT_EQ(back.tensors.size(), c.tensors.size());
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, c.tensors[i].name);
    EXPECT_TRUE(bit_equal(back.tensors[i].tensor, c.tensors[i].tensor));
  }
  EXPECT_EQ(serialize_container(back), bytes);
  EXPECT_TRUE(back.contains("beta"));
  EXPECT_THROW(back.get("delta"), FormatError);
}

TEST(Container, RejectsBadMagic) {
  auto bytes = serialize_container(sample());
  bytes[0] = 'X';
  try {
    parse_container(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Container, RejectsTruncation) {
  const auto bytes = serialize_container(sample());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, std::size_t{40}, bytes.size() - 1}) {
    EXPECT_THROW(parse_container(bytes.substr(0, cut)), FormatError) << cut;
  }
}

TEST(Container, RejectsMalformedHeader) {
  auto bytes = serialize_container(sample());
  bytes[16] = '[';
  EXPECT_THROW(parse_container(bytes), FormatError);
  auto huge = serialize_container(sample());
  huge[15] = '\x7f';
  EXPECT_THROW(parse_container(huge), FormatError);
}

TEST(Container, RejectsOutOfRangeRecords) {
  const auto bytes = serialize_container(sample());
  const auto header_len = read_u64(bytes, 8);
  auto header = nlohmann::ordered_json::parse(bytes.substr(16, header_len));
  auto rebuild = [&](const nlohmann::ordered_json& h) {
    std::string text = h.dump();
    text.resize(header_len, ' ');
    return bytes.substr(0, 16) + text + bytes.substr(16 + header_len);
  };
  auto h = header;
  h["tensors"][1]["offset"] = 1u << 20;
  EXPECT_THROW(parse_container(rebuild(h)), FormatError);
  h = header;
  h["tensors"][1]["dtype"] = "F16";
  EXPECT_THROW(parse_container(rebuild(h)), FormatError);
  h = header;
  h["tensors"][1]["nbytes"] = 8;
  EXPECT_THROW(parse_container(rebuild(h)), FormatError);
  h = header;
  h["tensors"][1]["offset"] = h["tensors"][1]["offset"].get<std::size_t>() + 4;
  EXPECT_THROW(parse_container(rebuild(h)), FormatError);
  EXPECT_NO_THROW(parse_container(rebuild(header)));
}

TEST(Container, FileRoundTrip) {
  testing::TempDir dir;
  const auto c = sample();
  write_container(dir.file("x.tsw"), c);
  EXPECT_EQ(read_file_bytes(dir.file("x.tsw")), serialize_container(c));
  EXPECT_THROW(read_container(dir.file("missing.tsw")), Error);
}

}  // namespace
}  // namespace tslider
