#include "dcfl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>

#include "dcfl/error.hpp"

namespace dcfl {

namespace {

template <typename U>
void put(std::string& out, U v) {
  for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(fmt::format("checkpoint truncated while reading {} at byte offset {}", what, pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParameterVector& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.manifest().size()));
  for (const auto& layer : params.manifest()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.name.size()));
    out += layer.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.shape.size()));
    for (std::size_t d : layer.shape) put<std::uint64_t>(out, d);
  }
  put<std::uint64_t>(out, params.size());
  for (double v : params.values()) put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

ParameterVector decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kCheckpointMagic), "magic") != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw FormatError("not a dcfl checkpoint (bad magic)");
  }
  const auto version = in.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw IncompatibleCheckpointError(
        fmt::format("checkpoint version {} is not supported (expected {})", version, kCheckpointVersion));
  }
  Manifest manifest(in.get<std::uint32_t>("layer count"));
  for (auto& layer : manifest) {
    layer.name = in.take(in.get<std::uint32_t>("name length"), "layer name");
    layer.shape.resize(in.get<std::uint32_t>("rank"));
    for (auto& d : layer.shape) d = static_cast<std::size_t>(in.get<std::uint64_t>("dimension"));
  }
  const auto count = in.get<std::uint64_t>("value count");
  if (count != manifest_size(manifest)) {
    throw FormatError(fmt::format("checkpoint holds {} values but its manifest needs {}", count,
                                  manifest_size(manifest)));
  }
  std::vector<double> values(count);
  for (auto& v : values) v = std::bit_cast<double>(in.get<std::uint64_t>("values"));
  if (!in.done()) throw FormatError(fmt::format("trailing bytes after offset {}", in.pos()));
  return ParameterVector(std::move(manifest), std::move(values));
}

void save_checkpoint(const ParameterVector& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError(fmt::format("cannot write checkpoint '{}'", path.string()));
  const std::string bytes = encode_checkpoint(params);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

ParameterVector load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(fmt::format("cannot open checkpoint '{}'", path.string()));
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ParameterVector load_checkpoint(const std::filesystem::path& path, const Manifest& expected) {
  auto params = load_checkpoint(path);
  if (params.manifest() != expected) {
    std::string have, want;
    for (const auto& l : params.manifest()) have += fmt::format(" {}{}", l.name, shape_to_string(l.shape));
    for (const auto& l : expected) want += fmt::format(" {}{}", l.name, shape_to_string(l.shape));
    throw IncompatibleCheckpointError(
        fmt::format("checkpoint '{}' layout [{} ] does not match the model [{} ]", path.string(), have, want));
  }
  return params;
}

}  // namespace dcfl
