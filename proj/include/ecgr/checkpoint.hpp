#pragma once

#include "ecgr/models.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace ecgr {

/// Container layout: the 8 bytes "ECGRCKPT", a little-endian u32 version, a
/// u64 header length, the JSON header, then every tensor as raw float32 in
/// header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::string config_hash;  // sha256 of the training config JSON
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();
};

struct CheckpointInfo {
  nlohmann::json header;
  [[nodiscard]] std::string kind() const { return header.at("kind").get<std::string>(); }
  [[nodiscard]] long long parameter_count() const { return header.at("parameter_count").get<long long>(); }
};

[[nodiscard]] std::string config_hash(const nlohmann::json& config);

void save_checkpoint(const std::filesystem::path& path, const ClassifierModel& model, const CheckpointMeta& meta);
void save_checkpoint(const std::filesystem::path& path, const GeneratorModel& model, const CheckpointMeta& meta);

[[nodiscard]] CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);
[[nodiscard]] ClassifierModel load_classifier(const std::filesystem::path& path);
[[nodiscard]] GeneratorModel load_generator(const std::filesystem::path& path);

}  // namespace ecgr
