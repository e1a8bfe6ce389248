#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "cwm/ball_world.hpp"
#include "cwm/world_model.hpp"

namespace cwm::store {

inline constexpr int kDatasetFormatVersion = 1;

enum class Split { Train, Test };
std::string_view to_string(Split split);

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  world::EnvConfig env_config;
  std::size_t episode_count = 0;
  Split split = Split::Train;
  std::uint64_t base_seed = 0;
  std::vector<std::uint64_t> seeds;      // per episode, in file order
  std::vector<std::uint64_t> checksums;  // FNV-1a 64 of each episode file

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.format_version == b.format_version && a.episode_count == b.episode_count &&
           a.split == b.split && a.base_seed == b.base_seed && a.seeds == b.seeds &&
           a.checksums == b.checksums;
  }
};

std::filesystem::path episode_path(const std::filesystem::path& dir, std::size_t index);

/// `.cwmb` bytes of one pair. The seed is not part of the record.
std::vector<std::uint8_t> encode_episode(const world::EpisodePair& ep);
/// Inverse of encode_episode; `index` only labels errors.
world::EpisodePair decode_episode(std::span<const std::uint8_t> bytes, std::size_t index);

/// Writes manifest.json plus ep_{i}.cwmb. Heterogeneous dimensions raise
/// SchemaError, IO failures StorageError.
DatasetManifest write_dataset(std::span<const world::EpisodePair> pairs, const std::filesystem::path& dir,
                              const world::EnvConfig& env, Split split, std::uint64_t base_seed);

DatasetManifest read_manifest(const std::filesystem::path& dir);
/// Loads and checksum-verifies one episode.
world::EpisodePair read_episode(const std::filesystem::path& dir, const DatasetManifest& manifest,
                                std::size_t index);
std::vector<world::EpisodePair> read_dataset(const std::filesystem::path& dir,
                                             DatasetManifest* manifest_out = nullptr);

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Model file: magic "CWMM", u32 version, u64 header length, JSON header
/// (configs, epochs, parameter names and shapes), then f64 parameter data.
std::vector<std::uint8_t> encode_model(const model::TrainedModel& trained);
model::TrainedModel decode_model(std::span<const std::uint8_t> bytes);
void save_model(const model::TrainedModel& trained, const std::filesystem::path& path);
model::TrainedModel load_model(const std::filesystem::path& path);

/// SchemaError unless the model's input matches the dataset's observations.
void check_model_matches(const model::ModelConfig& config, const world::EnvConfig& env);

}  // namespace cwm::store
