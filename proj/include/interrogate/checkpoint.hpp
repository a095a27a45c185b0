#pragma once

#include <string>

#include "json.hpp"
#include "interrogate/prune.hpp"

namespace interrogate {

// Checkpoint containers. Both formats are single self-describing JSON
// documents; tensor payloads use shortest-round-trip doubles, so a save /
// load cycle reproduces every value bit for bit.
inline constexpr const char* kCheckpointVersion = "interrogate-ckpt-v1";
inline constexpr const char* kPrunedVersion = "interrogate-pruned-v1";

nlohmann::json arch_to_json(const ModelConfig& cfg);
ModelConfig arch_from_json(const nlohmann::json& j);
nlohmann::json tasks_to_json(const std::vector<TaskSpec>& specs);
std::vector<TaskSpec> tasks_from_json(const nlohmann::json& j);

struct CheckpointMeta {
  std::string mode;  // "stl", "mtl-uniform", "interrogate"
  uint64_t seed = 0;
  int task_index = -1;  // stl only
};

nlohmann::json encoder_checkpoint(GatedEncoder& enc,
                                  const CheckpointMeta& meta);
GatedEncoder load_encoder(const nlohmann::json& j, CheckpointMeta* meta);

nlohmann::json single_task_checkpoint(SingleTaskNet& net,
                                      const CheckpointMeta& meta);
SingleTaskNet load_single_task(const nlohmann::json& j, CheckpointMeta* meta);

nlohmann::json pruned_checkpoint(const PrunedModel& pm);
PrunedModel load_pruned(const nlohmann::json& j);

// Gate pattern export (the selection masks and frozen fusion weights).
nlohmann::json pattern_to_json(const GatePattern& pattern);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace interrogate
