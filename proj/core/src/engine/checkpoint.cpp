#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "blnet/engine.hpp"
#include "blnet/error.hpp"

namespace blnet {

namespace {

constexpr char kMagic[8] = {'B', 'L', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr uint32_t kVersion = 1;

template <typename V>
void put(std::ostream& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(V));
  out.write(buf, sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::string& what) {
  char buf[sizeof(V)];
  if (!in.read(buf, sizeof(V))) throw Error(ErrorKind::ParseError, "checkpoint truncated while reading " + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(V));
  V v;
  std::memcpy(&v, buf, sizeof(V));
  return v;
}

std::ifstream open_checked(const std::filesystem::path& path, Precision& precision) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open '" + path.string() + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw Error(ErrorKind::ParseError, "'" + path.string() + "' is not a blnet checkpoint");
  const auto version = get<uint32_t>(in, "version");
  if (version != kVersion) throw Error(ErrorKind::ParseError, "unsupported checkpoint version " + std::to_string(version));
  const auto p = get<uint32_t>(in, "precision");
  if (p > 1) throw Error(ErrorKind::ParseError, "unknown checkpoint precision tag " + std::to_string(p));
  precision = p == 0 ? Precision::F32 : Precision::F64;
  return in;
}

template <typename Stored, typename T>
ParamStore<T> read_entries(std::istream& in) {
  ParamStore<T> store;
  const auto count = get<uint64_t>(in, "entry count");
  for (uint64_t e = 0; e < count; ++e) {
    const auto len = get<uint32_t>(in, "key length");
    if (len > 4096) throw Error(ErrorKind::ParseError, "implausible key length in checkpoint");
    std::string key(len, '\0');
    if (!in.read(key.data(), len)) throw Error(ErrorKind::ParseError, "checkpoint truncated in key");
    const auto slash = key.rfind('/');
    if (slash == std::string::npos) throw Error(ErrorKind::ParseError, "malformed checkpoint key '" + key + "'");
    TensorShape s;
    s.batch = get<int64_t>(in, "shape");
    s.channels = get<int64_t>(in, "shape");
    s.height = get<int64_t>(in, "shape");
    s.width = get<int64_t>(in, "shape");
    if (!s.positive() || s.numel() > (int64_t{1} << 32))
      throw Error(ErrorKind::ParseError, "invalid shape for '" + key + "'");
    Tensor<T> t(s);
    for (auto& v : t.data) v = static_cast<T>(get<Stored>(in, key));
    store.set(key.substr(0, slash), key.substr(slash + 1), std::move(t));
  }
  return store;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamStore<T>& params) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + tmp.string() + "'");
    out.write(kMagic, 8);
    put<uint32_t>(out, kVersion);
    put<uint32_t>(out, precision_of<T>() == Precision::F32 ? 0 : 1);
    uint64_t count = 0;
    for (const auto& [node, entry] : params.entries()) count += entry.size();
    put<uint64_t>(out, count);
    for (const auto& [node, entry] : params.entries())
      for (const auto& [name, t] : entry) {
        const std::string key = node + "/" + name;
        put<uint32_t>(out, static_cast<uint32_t>(key.size()));
        out.write(key.data(), static_cast<std::streamsize>(key.size()));
        for (int64_t e : {t.shape.batch, t.shape.channels, t.shape.height, t.shape.width}) put<int64_t>(out, e);
        for (T v : t.data) put<T>(out, v);
      }
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot move checkpoint into place: " + ec.message());
}

template <typename T>
ParamStore<T> load_checkpoint(const std::filesystem::path& path) {
  Precision p;
  std::ifstream in = open_checked(path, p);
  return p == Precision::F32 ? read_entries<float, T>(in) : read_entries<double, T>(in);
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  Precision p;
  open_checked(path, p);
  return p;
}

template void save_checkpoint(const std::filesystem::path&, const ParamStore<float>&);
template void save_checkpoint(const std::filesystem::path&, const ParamStore<double>&);
template ParamStore<float> load_checkpoint(const std::filesystem::path&);
template ParamStore<double> load_checkpoint(const std::filesystem::path&);

}  // namespace blnet
