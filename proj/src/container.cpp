#include "rvec/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "rvec/error.hpp"

namespace rvec {
namespace {

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  unsigned char buf[4];
  std::memcpy(buf, &v, 4);
  out.insert(out.end(), buf, buf + 4);
}

std::uint32_t load_u32(const unsigned char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace

void BodyWriter::f32(std::span<const double> values) {
  for (double v : values) {
    const float f = static_cast<float>(v);
    unsigned char buf[4];
    std::memcpy(buf, &f, 4);
    bytes_.insert(bytes_.end(), buf, buf + 4);
  }
}

void BodyWriter::u32(std::span<const std::uint32_t> values) {
  for (std::uint32_t v : values) append_u32(bytes_, v);
}

std::span<const unsigned char> BodyReader::take(std::size_t n) {
  if (bytes_.size() - offset_ < n)
    fail(ErrorKind::FormatError, "truncated body: need " + std::to_string(n) + " bytes, have " +
                                     std::to_string(bytes_.size() - offset_));
  auto out = bytes_.subspan(offset_, n);
  offset_ += n;
  return out;
}

std::vector<double> BodyReader::f32(std::size_t count) {
  auto raw = take(count * 4);
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, raw.data() + 4 * i, 4);
    out[i] = f;
  }
  return out;
}

std::vector<std::uint32_t> BodyReader::u32(std::size_t count) {
  auto raw = take(count * 4);
  std::vector<std::uint32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = load_u32(raw.data() + 4 * i);
  return out;
}

Matrix BodyReader::matrix(std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  m.data() = f32(rows * cols);
  return m;
}

void BodyReader::expect_end() const {
  if (offset_ != bytes_.size())
    fail(ErrorKind::FormatError,
         std::to_string(bytes_.size() - offset_) + " trailing bytes after payload");
}

void write_container(const std::filesystem::path& path, std::string_view magic,
                     const nlohmann::json& header, const std::vector<unsigned char>& body) {
  require(magic.size() == 4, ErrorKind::FormatError, "magic must be 4 bytes");
  const std::string header_text = header.dump();
  std::vector<unsigned char> out;
  out.reserve(12 + header_text.size() + body.size());
  out.insert(out.end(), magic.begin(), magic.end());
  append_u32(out, kContainerVersion);
  append_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  out.insert(out.end(), body.begin(), body.end());

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::IoError, "cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::IoError, "write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open: " + path.string());
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 12) fail(ErrorKind::FormatError, "file too short: " + path.string());
  if (std::memcmp(raw.data(), magic.data(), 4) != 0)
    fail(ErrorKind::FormatError, "bad magic in " + path.string() + " (expected " +
                                     std::string(magic) + ")");
  const std::uint32_t version = load_u32(raw.data() + 4);
  if (version != kContainerVersion)
    fail(ErrorKind::FormatError, "unsupported format version " + std::to_string(version));
  const std::uint32_t header_len = load_u32(raw.data() + 8);
  if (raw.size() - 12 < header_len) fail(ErrorKind::FormatError, "truncated header");

  Container c;
  try {
    c.header = nlohmann::json::parse(raw.begin() + 12, raw.begin() + 12 + header_len);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatError, std::string("bad header JSON: ") + e.what());
  }
  c.body.assign(raw.begin() + 12 + header_len, raw.end());
  return c;
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::IoError, "cannot open for writing: " + path.string());
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) fail(ErrorKind::IoError, "write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::IoError, "cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace rvec
