#include "sma/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "sma/data.hpp"

namespace sma {

namespace {

constexpr char kMagic[8] = {'S', 'M', 'A', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw DataError(std::string("checkpoint: truncated ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.digest);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    if (numel(r.shape) != r.values.size()) throw DimensionError("checkpoint: record " + r.name + " shape mismatch");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put<std::uint8_t>(out, r.trainable ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(r.shape.size()));
    for (auto d : r.shape) put<std::uint64_t>(out, d);
    for (double v : r.values) put<double>(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw DataError("checkpoint: bad magic");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.digest = in.get<std::uint64_t>("digest");
  const auto count = in.get<std::uint32_t>("record count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    r.name = in.take(in.get<std::uint32_t>("name length"), "name");
    r.trainable = in.get<std::uint8_t>("flag") != 0;
    const auto rank = in.get<std::uint32_t>("rank");
    if (rank > 8) throw DataError("checkpoint: implausible rank for " + r.name);
    for (std::uint32_t d = 0; d < rank; ++d) r.shape.push_back(in.get<std::uint64_t>("dims"));
    const std::size_t n = numel(r.shape);
    if (n > bytes.size() / sizeof(double)) throw DataError("checkpoint: truncated values of " + r.name);
    r.values.resize(n);
    for (auto& v : r.values) v = in.get<double>("values");
    ckpt.records.push_back(std::move(r));
  }
  if (!in.done()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

Checkpoint snapshot(const ParamStore& store, std::uint64_t digest) {
  Checkpoint ckpt;
  ckpt.digest = digest;
  for (const auto& e : store.entries()) {
    auto v = e.tensor.data();
    ckpt.records.push_back({e.name, e.trainable, e.tensor.shape(), std::vector<double>(v.begin(), v.end())});
  }
  return ckpt;
}

void restore(ParamStore& store, const Checkpoint& ckpt, std::uint64_t expected_digest) {
  if (ckpt.digest != expected_digest) {
    throw ConfigError("checkpoint: config digest mismatch (checkpoint " + std::to_string(ckpt.digest) +
                      ", config " + std::to_string(expected_digest) + ")");
  }
  std::map<std::string, const CheckpointRecord*> by_name;
  for (const auto& r : ckpt.records) by_name[r.name] = &r;
  if (by_name.size() != store.entries().size()) throw DataError("checkpoint: parameter set does not match model");
  for (auto& e : store.entries()) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw DataError("checkpoint: missing parameter " + e.name);
    if (it->second->shape != e.tensor.shape()) {
      throw DataError("checkpoint: " + e.name + " has shape " + shape_str(it->second->shape) + ", model expects " +
                      shape_str(e.tensor.shape()));
    }
    auto dst = e.tensor.mutable_data();
    std::copy(it->second->values.begin(), it->second->values.end(), dst.begin());
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, std::uint64_t digest) {
  write_file(path, encode_checkpoint(snapshot(store, digest)));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace sma
