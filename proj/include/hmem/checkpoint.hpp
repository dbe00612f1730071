#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <json.hpp>

#include "hmem/model.hpp"

namespace hmem::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// TrainConfig <-> JSON. Field names match the struct; `binding` is "tpr" or
// "cconv", `lambda` a number or "inf", `whiten` true/false/null. Unknown keys
// and wrongly typed values are a ConfigError; missing keys keep defaults.
nlohmann::ordered_json config_to_json(const TrainConfig& cfg);
TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);

struct Checkpoint {
  TrainConfig config;
  ModelParams params;
  std::optional<binding::WhiteningStats> whitening;
  std::uint64_t entity_vocab_digest = 0;
  std::uint64_t relation_vocab_digest = 0;

  Model model() const;
};

// Layout: 8-byte magic "HMEMCKPT", u32 version, u64 manifest length, JSON
// manifest, then every parameter block (and whitening statistics when
// present) as little-endian f64 in manifest order.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// The manifest that save_checkpoint would write.
nlohmann::ordered_json checkpoint_manifest(const Checkpoint& ckpt);

}  // namespace hmem::model
