#include "teb/archive.hpp"

#include <boost/crc.hpp>
#include <boost/endian/conversion.hpp>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace teb {

namespace {

constexpr char kMagic[4] = {'T', 'E', 'B', 'T'};

template <typename T>
void put(std::string& out, T v) {
  boost::endian::native_to_little_inplace(v);
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_str(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& b) : bytes_(b) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return boost::endian::little_to_native(v);
  }

  std::string get_str() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError("archive: truncated payload");
    }
  }

  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  const char* here() const { return bytes_.data() + pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor<float>& Archive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) {
    throw FormatError("archive: missing tensor '" + name + "'");
  }
  return it->second;
}

const std::string& Archive::attr(const std::string& key) const {
  auto it = attrs.find(key);
  if (it == attrs.end()) {
    throw FormatError("archive: missing attribute '" + key + "'");
  }
  return it->second;
}

std::string Archive::to_bytes() const {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(attrs.size()));
  for (const auto& [k, v] : attrs) {
    put_str(out, k);
    put_str(out, v);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_str(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) {
      put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    }
    for (Index i = 0; i < t.size(); ++i) {
      std::uint32_t bits;
      const float f = t[i];
      std::memcpy(&bits, &f, sizeof bits);
      put<std::uint32_t>(out, bits);
    }
  }
  return out;
}

Archive Archive::from_bytes(const std::string& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("archive: bad magic");
  }
  Reader r(bytes);
  r.skip(4);
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("archive: unsupported version " + std::to_string(version));
  }
  Archive a;
  const auto n_attrs = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_attrs; ++i) {
    std::string k = r.get_str();
    a.attrs[k] = r.get_str();
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_str();
    const auto rank = r.get<std::uint32_t>();
    if (rank > 16) {
      throw FormatError("archive: implausible rank for '" + name + "'");
    }
    Shape shape(rank);
    for (auto& d : shape) {
      d = static_cast<Index>(r.get<std::uint64_t>());
    }
    const Index count = shape_size(shape);
    r.need(static_cast<std::size_t>(count) * 4);
    Tensor<float> t(shape);
    for (Index k = 0; k < count; ++k) {
      const auto bits = r.get<std::uint32_t>();
      std::memcpy(&t[k], &bits, sizeof bits);
    }
    a.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) {
    throw FormatError("archive: trailing bytes");
  }
  return a;
}

void Archive::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("archive: cannot write '" + path + "'");
  }
  const std::string b = to_bytes();
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) {
    throw FormatError("archive: write failed for '" + path + "'");
  }
}

Archive Archive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("archive: cannot open '" + path + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_bytes(ss.str());
}

std::string file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open '" + path + "'");
  }
  boost::crc_32_type crc;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    crc.process_bytes(buf, static_cast<std::size_t>(in.gcount()));
  }
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << crc.checksum();
  return os.str();
}

}  // namespace teb
