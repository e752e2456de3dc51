#ifndef COEVO_IO_HPP_
#define COEVO_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>

#include "json.hpp"

#include "coevo/driver.hpp"

namespace coevo {

using Json = nlohmann::ordered_json;

// ---- run config --------------------------------------------------------

/// Every key with its current value, grouped into the ten config sections.
Json config_to_json(const TrainConfig& config);
/// Overlays `doc` on the defaults. Unknown keys, wrong types, and invalid
/// values raise std::invalid_argument naming the key path.
TrainConfig config_from_json(const Json& doc);

TrainConfig load_config(const std::filesystem::path& path);
/// Writes the fully expanded effective config.
void write_config(const TrainConfig& config, const std::filesystem::path& path);

/// FNV-1a over the canonical effective-config dump, as 16 hex digits.
std::string config_hash(const TrainConfig& config);

/// Applies COEVO_SEED when set. Throws on a malformed value.
void apply_env_overrides(TrainConfig& config);

// ---- checkpoints -------------------------------------------------------

enum class Dtype { kFloat32, kFloat64 };

Dtype parse_dtype(const std::string& name);
std::string to_string(Dtype dtype);

struct Checkpoint {
  std::map<std::string, ParamBundle> bundles;
  long step = 0;
  std::string config_hash;
};

/// Layout: "COEVOCK1", u64 manifest length, u64 FNV-1a of the manifest,
/// manifest JSON, concatenated little-endian payloads.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path,
                     Dtype dtype = Dtype::kFloat64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// The manifest alone, for inspection.
Json read_manifest(const std::filesystem::path& path);

Checkpoint checkpoint_of(const TrainState& state, const std::string& hash);
/// Restores parameters and step; optimizer state is rebuilt from `config`.
void restore_state(TrainState& state, const Checkpoint& ckpt, const TrainConfig& config);

Checkpoint tokenizer_checkpoint(const Tokenizer& tok, const std::string& hash);
Tokenizer tokenizer_from(const Checkpoint& ckpt);

// ---- metrics -----------------------------------------------------------

/// Append-only JSONL writer. Rows must arrive with non-decreasing steps.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, bool record_wall_time);

  void write(const MetricsRow& row);
  void write(long step, const std::string& kind, const Scalars& values);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
  bool record_wall_time_;
  long last_step_ = 0;
  double start_;
};

struct MetricsRecord {
  long step = 0;
  double wall_time = 0.0;
  std::string kind;
  Scalars values;
};

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

// ---- pipeline ----------------------------------------------------------

struct RunArtifacts {
  std::filesystem::path out_dir;
  std::filesystem::path metrics;
  std::filesystem::path final_checkpoint;
};

struct PipelineInputs {
  std::optional<std::filesystem::path> tokenizer_checkpoint;
  std::optional<std::filesystem::path> sft_checkpoint;
};

/// tokenizer-pretrain -> SFT -> post-training, writing the effective config,
/// stage checkpoints, metrics, and the final checkpoint under paths.out_dir.
RunArtifacts train(const TrainConfig& config, const PipelineInputs& inputs = {});

}  // namespace coevo

#endif  // COEVO_IO_HPP_
