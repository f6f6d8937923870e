// SPDX-License-Identifier: Apache-2.0
//
// "SNNC" container: a JSON metadata document followed by named, shaped,
// CRC32-checked blobs. All integers little-endian.
//
//   "SNNC" u16 version, u32 meta_len, meta (UTF-8 JSON), u32 blob_count,
//   then per blob: u16 name_len, name, u8 type, u8 rank, u32 dims[rank],
//   u64 byte_len, bytes, u32 crc32(bytes)
//
// Several roles ("graph", "controller", "search") may share one container;
// a role's blobs are named "<role>/<name>" and its metadata lives under
// meta["roles"][role].
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "snn/controller.hpp"
#include "snn/model.hpp"
#include "snn/policy.hpp"

namespace snn {

constexpr std::uint16_t kCheckpointVersion = 1;

struct Blob {
  enum class Type : std::uint8_t { kF32 = 0, kF64 = 1, kBytes = 2 };
  std::string name;
  Type type = Type::kBytes;
  std::vector<std::uint32_t> shape;
  std::vector<std::uint8_t> data;

  std::size_t elements() const;
  friend bool operator==(const Blob&, const Blob&) = default;
};

class Checkpoint {
 public:
  nlohmann::json meta = nlohmann::json::object();

  void add_f32(const std::string& name, std::vector<std::uint32_t> shape, std::span<const float> v);
  void add_f64(const std::string& name, std::vector<std::uint32_t> shape, std::span<const double> v);
  void add_bytes(const std::string& name, std::span<const std::uint8_t> v);

  bool has(const std::string& name) const;
  const Blob& blob(const std::string& name) const;
  /// Throws CorruptionError on a missing blob, wrong type, or wrong size.
  void read_f32(const std::string& name, std::span<float> out) const;
  void read_f64(const std::string& name, std::span<double> out) const;
  const std::vector<Blob>& blobs() const noexcept { return blobs_; }

  bool has_role(const std::string& role) const;
  nlohmann::json& role(const std::string& role);
  const nlohmann::json& role(const std::string& role) const;

  std::vector<std::uint8_t> serialize() const;
  /// Validates magic, version, lengths and every blob checksum.
  static Checkpoint parse(std::span<const std::uint8_t> bytes);

 private:
  void add(Blob b);
  std::vector<Blob> blobs_;
};

/// Writes through a temporary file and renames, so readers never see a
/// partial container.
void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json spec_to_json(const ModelSpec& s);
ModelSpec spec_from_json(const nlohmann::json& j);
nlohmann::json controller_config_to_json(const ControllerConfig& c);
ControllerConfig controller_config_from_json(const nlohmann::json& j);

/// Spec, partition map, optional attached policy, every parameter and
/// batchnorm buffer. Distinct roles let one container hold several graphs.
void store_graph(Checkpoint& c, SepGraph& g, const PolicySequence* policy = nullptr, const std::string& role = "graph");
SepGraph load_graph(const Checkpoint& c, const std::string& role = "graph");
std::optional<PolicySequence> load_attached_policy(const Checkpoint& c, const std::string& role = "graph");
/// Copies weights into an existing graph of the same spec.
void restore_graph(const Checkpoint& c, SepGraph& g, const std::string& role = "graph");

/// Role "controller": config and f64 weights.
void store_controller(Checkpoint& c, const Controller& ctl);
Controller load_controller(const Checkpoint& c);

}  // namespace snn
