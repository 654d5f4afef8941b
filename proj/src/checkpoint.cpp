// Binary checkpoint: "CLNETCKP", u32 version, u64-prefixed network config
// JSON, u64-prefixed metadata, u64 parameter count, then per parameter a
// u64-prefixed name, u64 rank, u64 dims and f64 values. Little-endian.

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "clnet/config.hpp"
#include "clnet/errors.hpp"
#include "clnet/network.hpp"

namespace clnet::net {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint codec assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'L', 'N', 'E', 'T', 'C', 'K', 'P'};

class Writer {
 public:
  template <class T>
  void put(T v)
  {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_string(const std::string& s)
  {
    put<std::uint64_t>(s.size());
    out_ += s;
  }
  void put_raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  template <class T>
  T get(const char* what)
  {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(const char* what)
  {
    const auto n = get<std::uint64_t>(what);
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void get_raw(char* p, std::size_t n, const char* what)
  {
    need(n, what);
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::uint64_t n, const char* what) const
  {
    if (n > in_.size() - pos_) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint)
{
  Writer w;
  w.put_raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put_string(config::to_json(checkpoint.config).dump());
  w.put_string(checkpoint.metadata);
  w.put<std::uint64_t>(checkpoint.params.size());
  for (const auto& [name, t] : checkpoint.params.entries()) {
    w.put_string(name);
    w.put<std::uint64_t>(t.rank());
    for (std::size_t d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.data()) w.put<double>(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes)
{
  Reader r(bytes);
  char magic[sizeof(kMagic)];
  r.get_raw(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  Checkpoint out;
  const std::string cfg = r.get_string("config");
  try {
    out.config = config::net_config_from_json(config::Json::parse(cfg));
  } catch (const config::Json::exception& e) {
    throw FormatError(std::string("checkpoint: config: ") + e.what());
  }
  out.metadata = r.get_string("metadata");
  const auto count = r.get<std::uint64_t>("parameter count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_string("parameter name");
    const auto rank = r.get<std::uint64_t>("rank");
    if (rank > 8) throw FormatError("checkpoint: implausible rank for " + name);
    ad::Shape shape(rank);
    std::uint64_t size = 1;
    for (auto& d : shape) {
      d = r.get<std::uint64_t>("dims");
      if (d != 0 && size > (bytes.size() / 8) / d) throw FormatError("checkpoint: implausible shape for " + name);
      size *= d;
    }
    if (size * 8 > bytes.size()) throw FormatError("checkpoint: truncated data for " + name);
    std::vector<double> data(size);
    r.get_raw(reinterpret_cast<char*>(data.data()), size * sizeof(double), "parameter data");
    out.params.add(std::move(name), Tensor(std::move(shape), std::move(data), true));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  check_params(out.config, out.params);
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint)
{
  const std::string bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("checkpoint: cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

}  // namespace clnet::net
