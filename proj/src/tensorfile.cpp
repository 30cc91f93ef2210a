#include "promptforge/tensorfile.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include "promptforge/core.hpp"

namespace promptforge {

namespace {

constexpr char kMagic[4] = {'A', 'C', 'V', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::TruncatedPayload, std::string("unexpected end of file reading ") + what);
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::string str(std::size_t n) {
    need(n, "entry name");
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  void floats(std::vector<float>& dst, std::size_t count) {
    if (count > (bytes_.size() - pos_) / 4) fail(ErrorCode::TruncatedPayload, "payload shorter than product(dims) x 4 bytes");
    dst.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= std::uint32_t(bytes_[pos_ + 4 * i + b]) << (8 * b);
      dst[i] = std::bit_cast<float>(bits);
    }
    pos_ += 4 * count;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t TensorEntry::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> tensorfile_encode(const std::vector<TensorEntry>& entries) {
  std::unordered_set<std::string> names;
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kTensorFileVersion);
  put_u32(out, std::uint32_t(entries.size()));
  for (const auto& e : entries) {
    if (!names.insert(e.name).second) fail(ErrorCode::DuplicateName, "duplicate entry '" + e.name + "'");
    if (e.element_count() != e.values.size())
      fail(ErrorCode::ShapeMismatch, "entry '" + e.name + "' dims disagree with payload length");
    put_u32(out, std::uint32_t(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put_u32(out, std::uint32_t(e.dims.size()));
    for (auto d : e.dims) put_u32(out, d);
    for (float v : e.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

std::vector<TensorEntry> tensorfile_decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::BadMagic, "missing ACVP magic");
  Reader r(bytes);
  r.str(4);
  const std::uint32_t version = r.u32("version");
  if (version != kTensorFileVersion)
    fail(ErrorCode::VersionMismatch, "file version " + std::to_string(version) + ", expected " +
                                         std::to_string(kTensorFileVersion));
  const std::uint32_t count = r.u32("entry count");
  std::vector<TensorEntry> entries;
  std::unordered_set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    e.name = r.str(r.u32("name length"));
    if (!names.insert(e.name).second) fail(ErrorCode::DuplicateName, "duplicate entry '" + e.name + "'");
    const std::uint32_t rank = r.u32("rank");
    r.need(std::size_t(rank) * 4, "dims");
    for (std::uint32_t d = 0; d < rank; ++d) e.dims.push_back(r.u32("dim"));
    r.floats(e.values, e.element_count());
    entries.push_back(std::move(e));
  }
  return entries;
}

void tensorfile_write(const std::filesystem::path& path, const std::vector<TensorEntry>& entries) {
  const auto bytes = tensorfile_encode(entries);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::IoError, "cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) fail(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

std::vector<TensorEntry> tensorfile_read(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return tensorfile_decode(bytes);
}

const TensorEntry* find_entry_or_null(const std::vector<TensorEntry>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

const TensorEntry& find_entry(const std::vector<TensorEntry>& entries, const std::string& name) {
  const auto* e = find_entry_or_null(entries, name);
  if (!e) fail(ErrorCode::InvalidArgument, "missing tensor entry '" + name + "'");
  return *e;
}

}  // namespace promptforge
