#include "eediff/tensor_archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace eediff {

namespace {

constexpr char kMagic[8] = {'E', 'E', 'D', 'A', 'R', 'C', 'H', '1'};
constexpr char kTrailer[8] = {'E', 'E', 'D', 'E', 'N', 'D', '\0', '\0'};
constexpr std::uint8_t kFloat64 = 1;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    T swapped{};
    auto* src = reinterpret_cast<const unsigned char*>(&value);
    auto* dst = reinterpret_cast<unsigned char*>(&swapped);
    for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    value = swapped;
  }
  out.append(reinterpret_cast<const char*>(&value), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& data, std::string path) : data_(data), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value{};
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      T swapped{};
      auto* src = reinterpret_cast<const unsigned char*>(&value);
      auto* dst = reinterpret_cast<unsigned char*>(&swapped);
      for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
      value = swapped;
    }
    pos_ += sizeof(T);
    return value;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t pos() const { return pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    std::ostringstream os;
    os << "corrupt archive " << path_ << " at byte " << pos_ << ": " << what;
    throw IoError(os.str());
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) fail("unexpected end of file (truncated)");
  }

  const std::string& data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

NamedTensor NamedTensor::from_matrix(std::string name, const Matrix& m) {
  NamedTensor t;
  t.name = std::move(name);
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

Matrix NamedTensor::to_matrix() const {
  Index rows = 1, cols = 1;
  if (shape.size() == 1) {
    cols = static_cast<Index>(shape[0]);
  } else if (shape.size() == 2) {
    rows = static_cast<Index>(shape[0]);
    cols = static_cast<Index>(shape[1]);
  } else if (!shape.empty()) {
    throw ShapeError("tensor " + name + " has rank > 2");
  }
  if (static_cast<std::size_t>(rows * cols) != values.size()) {
    throw ShapeError("tensor " + name + " value count does not match its shape");
  }
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

const NamedTensor* TensorArchive::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const NamedTensor& TensorArchive::at(const std::string& name) const {
  const NamedTensor* t = find(name);
  if (t == nullptr) {
    throw IoError("archive has no tensor named '" + name + "'");
  }
  return *t;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  std::string buf(kMagic, sizeof(kMagic));
  nlohmann::json header = archive.header;
  header["format_version"] = kArchiveFormatVersion;
  const std::string text = header.dump();
  put<std::uint64_t>(buf, text.size());
  buf += text;
  put<std::uint64_t>(buf, archive.tensors.size());
  for (const auto& t : archive.tensors) {
    std::uint64_t expected = 1;
    for (auto d : t.shape) expected *= d;
    if (expected != t.values.size()) {
      throw ShapeError("tensor " + t.name + " value count does not match its shape");
    }
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.name.size()));
    buf += t.name;
    put<std::uint8_t>(buf, kFloat64);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(buf, d);
    for (double v : t.values) put<double>(buf, v);
  }
  buf.append(kTrailer, sizeof(kTrailer));
  put<std::uint64_t>(buf, fnv1a(buf));

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open archive " + path.string());
  }
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(data, path.string());
  if (r.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    r.fail("bad magic");
  }
  // Verify the trailer before decoding anything else so that a damaged file
  // never yields a partially restored object.
  constexpr std::size_t tail = sizeof(kTrailer) + sizeof(std::uint64_t);
  if (data.size() < sizeof(kMagic) + tail) r.fail("unexpected end of file (truncated)");
  const std::size_t body = data.size() - sizeof(std::uint64_t);
  if (data.compare(body - sizeof(kTrailer), sizeof(kTrailer), kTrailer, sizeof(kTrailer)) != 0) {
    r.fail("missing end marker (truncated)");
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, data.data() + body, sizeof(stored));
  if constexpr (std::endian::native == std::endian::big) {
    stored = __builtin_bswap64(stored);
  }
  if (stored != fnv1a(data.substr(0, body))) r.fail("checksum mismatch");

  TensorArchive archive;
  const auto header_len = r.get<std::uint64_t>();
  try {
    archive.header = nlohmann::json::parse(r.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("header is not valid JSON: ") + e.what());
  }
  if (archive.header.value("format_version", 0) != kArchiveFormatVersion) {
    r.fail("unsupported format version");
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.get<std::uint32_t>());
    if (r.get<std::uint8_t>() != kFloat64) r.fail("unknown element type in " + t.name);
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      t.shape.push_back(r.get<std::uint64_t>());
      n *= t.shape.back();
    }
    if (n > data.size()) r.fail("tensor " + t.name + " larger than the file");
    t.values.resize(n);
    for (auto& v : t.values) v = r.get<double>();
    archive.tensors.push_back(std::move(t));
  }
  if (r.pos() != body - sizeof(kTrailer)) r.fail("trailing bytes before end marker");
  return archive;
}

}  // namespace eediff
