#include "kmaml/cli/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "kmaml/numerics/errors.hpp"

namespace kmaml {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

void put_string(std::string& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

void put_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
  put_string(out, name);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
  for (std::size_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  for (float v : t.values()) put<float>(out, v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out = "KMCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  put_string(out, ckpt.strategy);
  put_string(out, ckpt.config_text);
  put<std::uint64_t>(out, ckpt.epoch);
  put<std::uint64_t>(out, ckpt.adam_step);
  const auto flat = ckpt.params.flatten();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(flat.size() + ckpt.adam_m.size() + ckpt.adam_v.size()));
  for (const auto& [name, t] : flat) put_tensor(out, name, t);
  for (const auto& [name, t] : ckpt.adam_m) put_tensor(out, "adam_m/" + name, t);
  for (const auto& [name, t] : ckpt.adam_v) put_tensor(out, "adam_v/" + name, t);
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "KMCK") != 0) throw FormatError("not a KMCK checkpoint (bad magic)");
  Reader r(bytes);
  r.get<std::uint32_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.strategy = r.get_string("strategy tag");
  ckpt.config_text = r.get_string("config snapshot");
  ckpt.epoch = r.get<std::uint64_t>("epoch");
  ckpt.adam_step = r.get<std::uint64_t>("adam step");
  const auto count = r.get<std::uint32_t>("tensor count");
  TensorMap<float> flat;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string("tensor name");
    const auto rank = r.get<std::uint32_t>("tensor rank");
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.get<std::uint32_t>("tensor dims"));
      numel *= shape.back();
    }
    std::vector<float> data(numel);
    for (auto& v : data) v = r.get<float>("tensor data");
    Tensor<float> t(shape, std::move(data));
    TensorMap<float>* target = &flat;
    std::string key = name;
    if (name.starts_with("adam_m/")) {
      target = &ckpt.adam_m;
      key = name.substr(7);
    } else if (name.starts_with("adam_v/")) {
      target = &ckpt.adam_v;
      key = name.substr(7);
    }
    if (!target->emplace(key, std::move(t)).second) throw FormatError("checkpoint repeats tensor " + name);
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes");
  ckpt.params = ParameterSet<float>::unflatten(flat);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace kmaml
