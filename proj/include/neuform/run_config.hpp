#pragma once

#include "neuform/mapper.hpp"
#include "neuform/params.hpp"
#include "neuform/vocoder.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace neuform {

enum class Split { Train, Val, Test };

std::string_view name(Split s);
std::optional<Split> parse_split(std::string_view text);

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest's directory
  Split split = Split::Train;
  std::optional<std::string> preset;  // "low" or "high"
};

/// Utterance list: CSV with header "id,path,split,preset" (preset may be empty).
struct Manifest {
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split s) const;
};

Manifest read_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& is, const std::filesystem::path& base_dir);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Resolves a preset name to its settings; throws a usage error otherwise.
VoicePreset voice_preset_by_name(std::string_view name);

/// Every tunable setting of a run, serialized as one JSON document.
struct RunConfig {
  AnalysisConfig analysis;
  MapperConfig mapper;
  TrainConfig train;
  GriffinLimConfig griffin_lim;
  bool match_energy = true;
  std::filesystem::path output_dir = "neuform-out";
  std::uint64_t seed = 0;  // propagated to mapper init and training

  /// Checks internal consistency (shared rate, hop and mel size).
  void validate() const;
  FeatureSettings features() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Applies `patch` over `base`. Unknown keys are usage errors.
RunConfig apply_config_patch(const RunConfig& base, const nlohmann::json& patch);
RunConfig load_run_config(const std::filesystem::path& path, const RunConfig& base = {});
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace neuform
