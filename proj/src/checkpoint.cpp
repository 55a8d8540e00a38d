#include <bit>
#include <cstring>
#include <map>

#include "mstream/fusion.hpp"
#include "mstream/manifest.hpp"

namespace mstream {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr const char* kMagic = "MSTREAM-CKPT 1";

template <class T>
void put(std::string& out, T value) {
  char raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  out.append(raw, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string::npos) throw CheckpointError("checkpoint header is truncated");
    std::string out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    return out;
  }

  std::string take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint is truncated");
    std::string out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <class T>
  T get() {
    const std::string raw = take(sizeof(T));
    T value;
    std::memcpy(&value, raw.data(), sizeof(T));
    return value;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

std::string field(const std::string& line, const std::string& key) {
  if (line.rfind(key + " ", 0) != 0) throw CheckpointError("checkpoint header: expected '" + key + "'");
  return line.substr(key.size() + 1);
}

std::size_t parse_count(const std::string& text) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint header: bad count '" + text + "'");
  }
  if (pos != text.size()) throw CheckpointError("checkpoint header: bad count '" + text + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::string save_checkpoint(const MultiStreamModel& model) {
  const std::string config = model.config.canonical();
  std::string out = std::string(kMagic) + "\n";
  out += "fingerprint " + fnv1a_hex(config) + "\n";
  out += "config-bytes " + std::to_string(config.size()) + "\n" + config;
  const ParamList params = model.parameters();
  out += "tensors " + std::to_string(params.size()) + "\n";
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.role));
    put<std::uint8_t>(out, p.tensor.dtype() == DType::f64 ? 0 : 1);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.dim()));
    for (auto d : p.tensor.shape()) put<std::uint64_t>(out, d);
    visit_dtype(p.tensor.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const auto data = p.tensor.data<T>();
      out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(T));
    });
  }
  return out;
}

MultiStreamModel load_checkpoint(const std::string& bytes, const std::string& expected_fingerprint) {
  Reader in(bytes);
  if (in.line() != kMagic) throw CheckpointError("not a checkpoint (bad magic or unsupported version)");
  const std::string fingerprint = field(in.line(), "fingerprint");
  const std::size_t config_bytes = parse_count(field(in.line(), "config-bytes"));
  const std::string config_text = in.take(config_bytes);
  if (fnv1a_hex(config_text) != fingerprint) {
    throw CheckpointError("checkpoint fingerprint " + fingerprint + " does not match its embedded config");
  }
  if (!expected_fingerprint.empty() && expected_fingerprint != fingerprint) {
    throw CheckpointError("checkpoint fingerprint " + fingerprint + " differs from the configured model " +
                          expected_fingerprint);
  }
  ModelConfig config;
  try {
    config = ModelConfig::from_config(Config::parse(config_text));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
  }
  if (config.canonical() != config_text) throw CheckpointError("checkpoint config is not in canonical form");

  MultiStreamModel model = MultiStreamModel::init(config, 0);
  std::map<std::string, NamedTensor> slots;
  for (auto& p : model.parameters()) slots.emplace(p.name, p);

  const std::size_t count = parse_count(field(in.line(), "tensors"));
  if (count != slots.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const std::string name = in.take(in.get<std::uint32_t>());
    const auto role = in.get<std::uint8_t>();
    const auto dtype_code = in.get<std::uint8_t>();
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError("tensor '" + name + "': implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get<std::uint64_t>());
    auto it = slots.find(name);
    if (it == slots.end()) throw CheckpointError("unexpected tensor '" + name + "' in checkpoint");
    NamedTensor& slot = it->second;
    if (role != static_cast<std::uint8_t>(slot.role)) throw CheckpointError("tensor '" + name + "': role mismatch");
    const DType dtype = dtype_code == 0 ? DType::f64 : DType::f32;
    if (dtype_code > 1 || dtype != slot.tensor.dtype()) throw CheckpointError("tensor '" + name + "': dtype mismatch");
    if (shape != slot.tensor.shape()) {
      throw CheckpointError("tensor '" + name + "': shape " + shape_to_string(shape) + " expected " +
                            shape_to_string(slot.tensor.shape()));
    }
    visit_dtype(dtype, [&](auto tag) {
      using T = decltype(tag);
      auto dst = slot.tensor.mutable_data<T>();
      const std::string raw = in.take(dst.size() * sizeof(T));
      std::memcpy(dst.data(), raw.data(), raw.size());
    });
    slots.erase(it);
  }
  if (!in.done()) throw CheckpointError("trailing bytes after the last tensor");
  return model;
}

void save_checkpoint_file(const MultiStreamModel& model, const std::filesystem::path& path) {
  write_text_file(path, save_checkpoint(model));
}

MultiStreamModel load_checkpoint_file(const std::filesystem::path& path, const std::string& expected_fingerprint) {
  std::string bytes;
  try {
    bytes = read_text_file(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  return load_checkpoint(bytes, expected_fingerprint);
}

}  // namespace mstream
