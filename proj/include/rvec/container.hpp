#pragma once

// Common binary container shared by traces (RVTR), model weights (RVWT),
// SAE weights (RVSA), subspaces (RVSB), vectors (RVVE) and contrast datasets
// (RVCD):
//
//   magic        4 bytes
//   version      u32 LE (= 1)
//   header_len   u32 LE
//   header       header_len bytes of UTF-8 JSON
//   body         format-specific little-endian payload
//
// Matrices in the body are float32 row-major; integer lists are u32.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "rvec/linalg.hpp"

namespace rvec {

inline constexpr std::uint32_t kContainerVersion = 1;

class BodyWriter {
 public:
  void f32(std::span<const double> values);
  void u32(std::span<const std::uint32_t> values);
  void matrix(const Matrix& m) { f32(m.data()); }
  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class BodyReader {
 public:
  explicit BodyReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  /// Throws FormatError when fewer than `count` values remain.
  std::vector<double> f32(std::size_t count);
  std::vector<std::uint32_t> u32(std::size_t count);
  Matrix matrix(std::size_t rows, std::size_t cols);
  /// Throws FormatError when unread trailing bytes remain.
  void expect_end() const;

 private:
  std::span<const unsigned char> take(std::size_t n);
  std::span<const unsigned char> bytes_;
  std::size_t offset_ = 0;
};

struct Container {
  nlohmann::json header;
  std::vector<unsigned char> body;
};

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, const std::vector<unsigned char>& body);
/// Throws FormatError on bad magic, version mismatch, or a truncated header.
Container read_container(const std::filesystem::path& path, std::string_view magic);

/// Writes text atomically enough for our purposes (truncate + write); throws IoError.
void write_text_file(const std::filesystem::path& path, std::string_view text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace rvec
