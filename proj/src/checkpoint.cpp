// SPDX-License-Identifier: Apache-2.0
#include "snn/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "snn/error.hpp"

namespace snn {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'N', 'N', 'C'};

std::uint32_t crc32_of(std::span<const std::uint8_t> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large blobs in pieces
  std::size_t pos = 0;
  while (pos < b.size()) {
    const std::size_t n = std::min<std::size_t>(b.size() - pos, 1u << 30);
    crc = crc32(crc, b.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
  }
  void bytes(std::span<const std::uint8_t> b) { out.insert(out.end(), b.begin(), b.end()); }
  void text(const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CorruptionError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                            std::to_string(pos_));
    }
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::size_t type_size(Blob::Type t) {
  switch (t) {
    case Blob::Type::kF32:
      return 4;
    case Blob::Type::kF64:
      return 8;
    case Blob::Type::kBytes:
      return 1;
  }
  throw CorruptionError("checkpoint: unknown blob type");
}

template <typename T>
std::vector<std::uint8_t> to_le_bytes(std::span<const T> v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
  std::vector<std::uint8_t> out(v.size() * sizeof(T));
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

}  // namespace

std::size_t Blob::elements() const {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void Checkpoint::add(Blob b) {
  if (b.name.empty() || b.name.size() > 0xFFFF) throw ConfigError("checkpoint: bad blob name");
  if (has(b.name)) throw ConfigError("checkpoint: duplicate blob " + b.name);
  if (b.shape.size() > 255) throw ConfigError("checkpoint: rank too large");
  if (b.elements() * type_size(b.type) != b.data.size()) throw ShapeError("checkpoint: blob " + b.name + " size mismatch");
  blobs_.push_back(std::move(b));
}

void Checkpoint::add_f32(const std::string& name, std::vector<std::uint32_t> shape, std::span<const float> v) {
  add({name, Blob::Type::kF32, std::move(shape), to_le_bytes(v)});
}

void Checkpoint::add_f64(const std::string& name, std::vector<std::uint32_t> shape, std::span<const double> v) {
  add({name, Blob::Type::kF64, std::move(shape), to_le_bytes(v)});
}

void Checkpoint::add_bytes(const std::string& name, std::span<const std::uint8_t> v) {
  add({name, Blob::Type::kBytes, {static_cast<std::uint32_t>(v.size())}, {v.begin(), v.end()}});
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& b : blobs_)
    if (b.name == name) return true;
  return false;
}

const Blob& Checkpoint::blob(const std::string& name) const {
  for (const auto& b : blobs_)
    if (b.name == name) return b;
  throw CorruptionError("checkpoint: missing blob " + name);
}

void Checkpoint::read_f32(const std::string& name, std::span<float> out) const {
  const Blob& b = blob(name);
  if (b.type != Blob::Type::kF32 || b.elements() != out.size()) {
    throw CorruptionError("checkpoint: blob " + name + " has the wrong type or size");
  }
  if (!out.empty()) std::memcpy(out.data(), b.data.data(), b.data.size());
}

void Checkpoint::read_f64(const std::string& name, std::span<double> out) const {
  const Blob& b = blob(name);
  if (b.type != Blob::Type::kF64 || b.elements() != out.size()) {
    throw CorruptionError("checkpoint: blob " + name + " has the wrong type or size");
  }
  if (!out.empty()) std::memcpy(out.data(), b.data.data(), b.data.size());
}

bool Checkpoint::has_role(const std::string& role) const {
  return meta.contains("roles") && meta["roles"].contains(role);
}

json& Checkpoint::role(const std::string& role) { return meta["roles"][role]; }

const json& Checkpoint::role(const std::string& r) const {
  if (!has_role(r)) throw CorruptionError("checkpoint: no role " + r);
  return meta.at("roles").at(r);
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.text(std::string(kMagic, 4));
  w.put<std::uint16_t>(kCheckpointVersion);
  const std::string m = meta.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
  w.text(m);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(blobs_.size()));
  for (const auto& b : blobs_) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(b.name.size()));
    w.text(b.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(b.type));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(b.shape.size()));
    for (auto d : b.shape) w.put<std::uint32_t>(d);
    w.put<std::uint64_t>(b.data.size());
    w.bytes(b.data);
    w.put<std::uint32_t>(crc32_of(b.data));
  }
  return std::move(w.out);
}

Checkpoint Checkpoint::parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw CorruptionError("checkpoint: bad magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw CorruptionError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto meta_bytes = r.take(meta_len, "metadata");
  Checkpoint c;
  try {
    c.meta = json::parse(meta_bytes.begin(), meta_bytes.end());
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("blob count");
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    const auto name_len = r.get<std::uint16_t>("blob name length");
    const auto name = r.take(name_len, "blob name");
    b.name.assign(name.begin(), name.end());
    const auto type = r.get<std::uint8_t>("blob type");
    if (type > 2) throw CorruptionError("checkpoint: blob " + b.name + " has unknown type");
    b.type = static_cast<Blob::Type>(type);
    const auto rank = r.get<std::uint8_t>("blob rank");
    for (int k = 0; k < rank; ++k) b.shape.push_back(r.get<std::uint32_t>("blob shape"));
    const auto len = r.get<std::uint64_t>("blob length");
    if (len > r.remaining()) throw CorruptionError("checkpoint: blob " + b.name + " truncated");
    const auto data = r.take(static_cast<std::size_t>(len), "blob data");
    b.data.assign(data.begin(), data.end());
    const auto crc = r.get<std::uint32_t>("blob checksum");
    if (crc != crc32_of(b.data)) throw CorruptionError("checkpoint: checksum mismatch in blob " + b.name);
    if (b.elements() * type_size(b.type) != b.data.size()) {
      throw CorruptionError("checkpoint: blob " + b.name + " shape does not match its length");
    }
    if (c.has(b.name)) throw CorruptionError("checkpoint: duplicate blob " + b.name);
    c.blobs_.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw CorruptionError("checkpoint: trailing bytes at " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const auto bytes = c.serialize();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw RuntimeFailure("cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw RuntimeFailure("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RuntimeFailure("cannot open checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return Checkpoint::parse(bytes);
}

json spec_to_json(const ModelSpec& s) {
  return {{"stages", s.stages},
          {"blocks_per_stage", s.blocks_per_stage},
          {"cardinality", s.cardinality},
          {"bottleneck_width", s.bottleneck_width},
          {"kernel", s.kernel},
          {"partitions", s.partitions},
          {"num_classes", s.num_classes},
          {"alpha", s.alpha},
          {"in_channels", s.in_channels},
          {"in_height", s.in_height},
          {"in_width", s.in_width},
          {"stem_channels", s.stem_channels},
          {"base_width", s.base_width}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  try {
    s.stages = j.at("stages");
    s.blocks_per_stage = j.at("blocks_per_stage");
    s.cardinality = j.at("cardinality");
    s.bottleneck_width = j.at("bottleneck_width");
    s.kernel = j.at("kernel");
    s.partitions = j.at("partitions");
    s.num_classes = j.at("num_classes");
    s.alpha = j.at("alpha");
    s.in_channels = j.at("in_channels");
    s.in_height = j.at("in_height");
    s.in_width = j.at("in_width");
    s.stem_channels = j.at("stem_channels");
    s.base_width = j.at("base_width");
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad model spec: ") + e.what());
  }
  s.validate();
  return s;
}

json controller_config_to_json(const ControllerConfig& c) {
  return {{"nodes", c.nodes},         {"levels", c.levels},   {"p_min", c.p_min},
          {"alpha", c.alpha},         {"hidden", c.hidden},   {"init_range", c.init_range},
          {"zero_init", c.zero_init}, {"entropy_weight", c.entropy_weight}};
}

ControllerConfig controller_config_from_json(const json& j) {
  ControllerConfig c;
  try {
    c.nodes = j.at("nodes");
    c.levels = j.at("levels");
    c.p_min = j.at("p_min");
    c.alpha = j.at("alpha");
    c.hidden = j.at("hidden");
    c.init_range = j.at("init_range");
    c.zero_init = j.at("zero_init");
    c.entropy_weight = j.at("entropy_weight");
  } catch (const json::exception& e) {
    throw CorruptionError(std::string("checkpoint: bad controller config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

std::vector<std::uint32_t> dims(const Shape4& s) {
  return {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
          static_cast<std::uint32_t>(s.w)};
}

}  // namespace

void store_graph(Checkpoint& c, SepGraph& g, const PolicySequence* policy, const std::string& role) {
  json& r = c.role(role);
  r["spec"] = spec_to_json(g.spec());
  const int parts = g.partitions();
  // Block convs and batchnorms are grouped so partition i owns channel
  // slice i of every block tensor; the stem is replicated, node 0 owns the head.
  r["partition_map"] = {{"partitions", parts},
                        {"blocks", "channel slice i of every block tensor belongs to node i"},
                        {"stem", "replicated on every node"},
                        {"head", 0}};
  bool ready = true;
  g.visit_batchnorms([&](const std::string&, BatchNorm2d& bn) { ready = ready && bn.has_statistics(); });
  r["statistics_ready"] = ready;
  if (policy) r["policy"] = format_policy(*policy);
  g.visit([&](const std::string& name, Param& p) { c.add_f32(role + "/" + name, dims(p.value.shape()), p.value.data()); });
  g.visit_buffers([&](const std::string& name, Tensor4& t) { c.add_f32(role + "/" + name, dims(t.shape()), t.data()); });
}

void restore_graph(const Checkpoint& c, SepGraph& g, const std::string& role) {
  const json& r = c.role(role);
  if (spec_from_json(r.at("spec")) != g.spec()) throw ConfigError("checkpoint: graph spec differs from the target");
  g.visit([&](const std::string& name, Param& p) { c.read_f32(role + "/" + name, p.value.data()); });
  g.visit_buffers([&](const std::string& name, Tensor4& t) { c.read_f32(role + "/" + name, t.data()); });
  if (r.value("statistics_ready", false)) {
    g.visit_batchnorms([](const std::string&, BatchNorm2d& bn) { bn.mark_statistics_ready(); });
  }
}

SepGraph load_graph(const Checkpoint& c, const std::string& role) {
  SepGraph g(spec_from_json(c.role(role).at("spec")));
  restore_graph(c, g, role);
  return g;
}

std::optional<PolicySequence> load_attached_policy(const Checkpoint& c, const std::string& role) {
  const json& r = c.role(role);
  if (!r.contains("policy")) return std::nullopt;
  return parse_policy(r.at("policy").get<std::string>());
}

void store_controller(Checkpoint& c, const Controller& ctl) {
  c.role("controller")["config"] = controller_config_to_json(ctl.config());
  ctl.params().visit([&](const std::string& name, const Matrix& m) {
    c.add_f64("controller/" + name, {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, m.v);
  });
}

Controller load_controller(const Checkpoint& c) {
  const ControllerConfig cfg = controller_config_from_json(c.role("controller").at("config"));
  Rng unused(0);
  Controller ctl(cfg, unused);  // every weight is overwritten below
  ctl.params().visit([&](const std::string& name, Matrix& m) { c.read_f64("controller/" + name, m.v); });
  return ctl;
}

}  // namespace snn
