#pragma once

// Run configuration (plain key=value text) and binary checkpoints.
//
// Config keys, one per line, '#' starts a comment:
//
//   model.layers=4
//   model.layer1.extent=28x28      model.layer1.states=2
//   model.kernel1.size=4x4         model.kernel1.stride=2x2
//   train.learning_rate  train.momentum  train.epochs  train.batch_size
//   train.seed  train.init_scale  train.checkpoint_every
//   data.train  data.test  data.train_limit  data.test_limit
//   corrupt.enabled  corrupt.patch  corrupt.seed
//   output.dir
//
// Checkpoint layout (little-endian):
//   "DLTC"  u32 version
//   u32 layers  u32 dims
//   per layer:  dims x u32 extent, u32 states
//   per kernel: dims x u32 size, dims x u32 stride
//   u64 score count, then f64 scores (kernel 1..L-1 in [k][f][g] order, root)
//   u32 CRC-32 of every preceding byte

#include <zlib.h>

#include <bit>
#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dlt/error.hpp"
#include "dlt/learning.hpp"
#include "dlt/parameters.hpp"
#include "dlt/topology.hpp"

namespace dlt {

struct ModelSpec {
  std::vector<LayerShape> layers;
  std::vector<KernelSpec> kernels;

  ModelTopology build() const { return build_topology(layers, kernels); }

  static ModelSpec from(const ModelTopology& topo) { return {topo.layers(), topo.kernels()}; }
  bool operator==(const ModelSpec&) const = default;
};

struct CorruptionSettings {
  bool enabled = true;
  std::size_t patch = 12;
  std::uint64_t seed = 2;

  bool operator==(const CorruptionSettings&) const = default;
};

struct RunConfig {
  ModelSpec model = ModelSpec::from(reference_topology());
  TrainConfig train;
  double init_scale = 0.5;
  std::size_t checkpoint_every = 10;
  std::string train_data;
  std::string test_data;
  std::size_t train_limit = 0;  // 0 = all images
  std::size_t test_limit = 0;
  CorruptionSettings corruption;
  std::string output_dir = "out";
};

namespace detail {

[[noreturn]] inline void config_error(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::BadConfig, (line ? "line " + std::to_string(line) + ": " : std::string()) + what);
}

template <typename T>
T parse_number(std::string_view text, const std::string& key) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) config_error(0, key + ": bad number '" + std::string(text) + "'");
  return v;
}

inline Extent parse_extent(std::string_view text, const std::string& key) {
  Extent e;
  std::size_t start = 0;
  while (true) {
    const std::size_t x = text.find('x', start);
    e.push_back(parse_number<std::size_t>(text.substr(start, x - start), key));
    if (x == std::string_view::npos) break;
    start = x + 1;
  }
  return e;
}

inline bool parse_bool(std::string_view text, const std::string& key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  config_error(0, key + ": expected true or false");
}

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

inline RunConfig parse_config(std::string_view text) {
  std::map<std::string, std::string> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) detail::config_error(lineno, "expected key=value");
    const std::string key = detail::trim(body.substr(0, eq));
    if (kv.count(key)) detail::config_error(lineno, "duplicate key " + key);
    kv[key] = detail::trim(body.substr(eq + 1));
  }

  RunConfig cfg;
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    const auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto require = [&](const std::string& key) {
    auto v = take(key);
    if (!v) detail::config_error(0, "missing " + key);
    return *v;
  };

  if (auto n = take("model.layers")) {
    const auto layers = detail::parse_number<std::size_t>(*n, "model.layers");
    if (layers == 0) detail::config_error(0, "model.layers must be positive");
    cfg.model = {};
    for (std::size_t l = 1; l <= layers; ++l) {
      const std::string p = "model.layer" + std::to_string(l) + ".";
      LayerShape shape;
      shape.extent = detail::parse_extent(require(p + "extent"), p + "extent");
      shape.states = detail::parse_number<std::size_t>(require(p + "states"), p + "states");
      cfg.model.layers.push_back(shape);
      if (l < layers) {
        const std::string k = "model.kernel" + std::to_string(l) + ".";
        KernelSpec kernel;
        kernel.size = detail::parse_extent(require(k + "size"), k + "size");
        kernel.stride = detail::parse_extent(require(k + "stride"), k + "stride");
        cfg.model.kernels.push_back(kernel);
      }
    }
  }
  if (auto v = take("train.learning_rate")) cfg.train.learning_rate = detail::parse_number<double>(*v, "train.learning_rate");
  if (auto v = take("train.momentum")) cfg.train.momentum = detail::parse_number<double>(*v, "train.momentum");
  if (auto v = take("train.epochs")) cfg.train.epochs = detail::parse_number<std::size_t>(*v, "train.epochs");
  if (auto v = take("train.batch_size")) cfg.train.batch_size = detail::parse_number<std::size_t>(*v, "train.batch_size");
  if (auto v = take("train.seed")) cfg.train.seed = detail::parse_number<std::uint64_t>(*v, "train.seed");
  if (auto v = take("train.init_scale")) cfg.init_scale = detail::parse_number<double>(*v, "train.init_scale");
  if (auto v = take("train.checkpoint_every")) cfg.checkpoint_every = detail::parse_number<std::size_t>(*v, "train.checkpoint_every");
  if (auto v = take("data.train")) cfg.train_data = *v;
  if (auto v = take("data.test")) cfg.test_data = *v;
  if (auto v = take("data.train_limit")) cfg.train_limit = detail::parse_number<std::size_t>(*v, "data.train_limit");
  if (auto v = take("data.test_limit")) cfg.test_limit = detail::parse_number<std::size_t>(*v, "data.test_limit");
  if (auto v = take("corrupt.enabled")) cfg.corruption.enabled = detail::parse_bool(*v, "corrupt.enabled");
  if (auto v = take("corrupt.patch")) cfg.corruption.patch = detail::parse_number<std::size_t>(*v, "corrupt.patch");
  if (auto v = take("corrupt.seed")) cfg.corruption.seed = detail::parse_number<std::uint64_t>(*v, "corrupt.seed");
  if (auto v = take("output.dir")) cfg.output_dir = *v;
  if (!kv.empty()) detail::config_error(0, "unknown key " + kv.begin()->first);
  if (!(cfg.train.learning_rate >= 0.0)) detail::config_error(0, "train.learning_rate must be >= 0");
  if (cfg.train.batch_size == 0) detail::config_error(0, "train.batch_size must be positive");
  return cfg;
}

/// Canonical text form; parse_config(format_config(c)) reproduces c.
inline std::string format_config(const RunConfig& cfg) {
  std::string out;
  auto put = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  put("model.layers", std::to_string(cfg.model.layers.size()));
  for (std::size_t l = 0; l < cfg.model.layers.size(); ++l) {
    const std::string p = "model.layer" + std::to_string(l + 1) + ".";
    put(p + "extent", format_extent(cfg.model.layers[l].extent));
    put(p + "states", std::to_string(cfg.model.layers[l].states));
    if (l < cfg.model.kernels.size()) {
      const std::string k = "model.kernel" + std::to_string(l + 1) + ".";
      put(k + "size", format_extent(cfg.model.kernels[l].size));
      put(k + "stride", format_extent(cfg.model.kernels[l].stride));
    }
  }
  put("train.learning_rate", detail::format_double(cfg.train.learning_rate));
  put("train.momentum", detail::format_double(cfg.train.momentum));
  put("train.epochs", std::to_string(cfg.train.epochs));
  put("train.batch_size", std::to_string(cfg.train.batch_size));
  put("train.seed", std::to_string(cfg.train.seed));
  put("train.init_scale", detail::format_double(cfg.init_scale));
  put("train.checkpoint_every", std::to_string(cfg.checkpoint_every));
  if (!cfg.train_data.empty()) put("data.train", cfg.train_data);
  if (!cfg.test_data.empty()) put("data.test", cfg.test_data);
  put("data.train_limit", std::to_string(cfg.train_limit));
  put("data.test_limit", std::to_string(cfg.test_limit));
  put("corrupt.enabled", cfg.corruption.enabled ? "true" : "false");
  put("corrupt.patch", std::to_string(cfg.corruption.patch));
  put("corrupt.seed", std::to_string(cfg.corruption.seed));
  put("output.dir", cfg.output_dir);
  return out;
}

inline constexpr char kCheckpointMagic[4] = {'D', 'L', 'T', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec model;
  Parameters params;
};

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class LeReader {
 public:
  explicit LeReader(std::string_view bytes) : bytes_(bytes) {}

  std::uint64_t get(int n) {
    if (pos_ + static_cast<std::size_t>(n) > bytes_.size()) {
      throw Error(ErrorCode::TruncatedFile, "checkpoint ends at byte " + std::to_string(bytes_.size()) +
                                                " while reading byte " + std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(bytes_[pos_ + i])} << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  detail::put_le(out, kCheckpointVersion, 4);
  const auto& m = ckpt.model;
  const std::size_t dims = m.layers.empty() ? 0 : m.layers[0].extent.size();
  detail::put_le(out, m.layers.size(), 4);
  detail::put_le(out, dims, 4);
  for (const auto& layer : m.layers) {
    for (auto e : layer.extent) detail::put_le(out, e, 4);
    detail::put_le(out, layer.states, 4);
  }
  for (const auto& k : m.kernels) {
    for (auto e : k.size) detail::put_le(out, e, 4);
    for (auto e : k.stride) detail::put_le(out, e, 4);
  }
  detail::put_le(out, ckpt.params.size(), 8);
  for (const auto& table : ckpt.params.kernel_scores)
    for (double s : table) detail::put_le(out, std::bit_cast<std::uint64_t>(s), 8);
  for (double s : ckpt.params.root_scores) detail::put_le(out, std::bit_cast<std::uint64_t>(s), 8);
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(out.data()), static_cast<uInt>(out.size()));
  detail::put_le(out, crc, 4);
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != std::string_view(kCheckpointMagic, 4)) {
    throw Error(ErrorCode::BadMagic, "not a checkpoint file");
  }
  if (bytes.size() < 12) throw Error(ErrorCode::TruncatedFile, "checkpoint too short");
  const auto body = bytes.substr(0, bytes.size() - 4);
  detail::LeReader tail(bytes.substr(bytes.size() - 4));
  const auto stored = static_cast<uLong>(tail.get(4));
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()));
  detail::LeReader r(body);
  r.get(4);
  const auto version = r.get(4);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::BadCheckpoint, "checkpoint version " + std::to_string(version) + " is not supported");
  }
  if (stored != crc) throw Error(ErrorCode::BadCheckpoint, "checksum mismatch");
  Checkpoint ckpt;
  const auto layers = r.get(4);
  const auto dims = r.get(4);
  if (layers == 0 || layers > 64 || dims == 0 || dims > 8) throw Error(ErrorCode::BadCheckpoint, "implausible topology header");
  for (std::uint64_t l = 0; l < layers; ++l) {
    LayerShape shape;
    for (std::uint64_t d = 0; d < dims; ++d) shape.extent.push_back(r.get(4));
    shape.states = r.get(4);
    ckpt.model.layers.push_back(shape);
  }
  for (std::uint64_t l = 0; l + 1 < layers; ++l) {
    KernelSpec k;
    for (std::uint64_t d = 0; d < dims; ++d) k.size.push_back(r.get(4));
    for (std::uint64_t d = 0; d < dims; ++d) k.stride.push_back(r.get(4));
    ckpt.model.kernels.push_back(k);
  }
  const ModelTopology topo = ckpt.model.build();
  ckpt.params = Parameters::zeros(topo);
  if (r.get(8) != ckpt.params.size()) throw Error(ErrorCode::BadCheckpoint, "score count does not match the topology");
  for (auto& table : ckpt.params.kernel_scores)
    for (double& s : table) s = std::bit_cast<double>(r.get(8));
  for (double& s : ckpt.params.root_scores) s = std::bit_cast<double>(r.get(8));
  if (r.pos() != body.size()) throw Error(ErrorCode::BadCheckpoint, "trailing bytes after scores");
  return ckpt;
}

}  // namespace dlt
