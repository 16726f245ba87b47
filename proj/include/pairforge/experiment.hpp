#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairforge/checkpoint.hpp"
#include "pairforge/declip.hpp"
#include "pairforge/evaluation.hpp"
#include "pairforge/schedule.hpp"
#include "pairforge/synthdata.hpp"

namespace pf {

enum class InitMode { Random, PretrainedImage, PretrainedBoth };
std::string init_mode_name(InitMode m);
InitMode parse_init_mode(const std::string& name);

std::string version_string();

/// A referenced dataset or checkpoint file does not exist.
class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::filesystem::path data_dir;
  InitMode init = InitMode::Random;
  std::filesystem::path image_ckpt, text_ckpt;
  LossKind loss = LossKind::Combined;
  bool declip = false;
  DeclipWeights weights;
  double fraction = 1.0;
  AdamConfig adam;
  LossConfig loss_cfg;
  Schedule schedule;
  EncoderConfig encoder;
  std::uint64_t seed = 0;

  /// Throws ContractError on values outside their allowed sets.
  void validate() const;
  /// Effective DeCLIP weights: all zero when DeCLIP is off.
  DeclipWeights effective_weights() const;
  nlohmann::json to_json() const;
  /// Missing keys keep the defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// FNV-1a of the canonical JSON form as 16 hex digits. DeCLIP switched on
  /// with all weights zero serialises as DeCLIP off, so both share one hash.
  std::string hash() const;
};

struct TrainResult {
  DualEncoder model;
  Checkpoint checkpoint;
  RunSummary summary;
};

/// Checks data and checkpoint availability without training.
void check_inputs(const ExperimentConfig& cfg);

/// Early-stopped training of both encoders on the configured fraction of the
/// training split, validating the plain pair loss on the validation split.
/// When `log_path` is set every validation is appended to it as JSON.
TrainResult train(const ExperimentConfig& cfg, const synth::Dataset& data, const std::filesystem::path& log_path = {});

/// Loads a "vlm" checkpoint into a model built from its stored config.
DualEncoder load_model(const std::filesystem::path& ckpt_path);

struct MetricRow {
  std::string task;     // retrieval, zeroshot, probe
  std::string matcher;  // global, local or "-"
  double fraction = 0.0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
  std::string config_hash;
  std::string version;
  std::string status = "ok";
  nlohmann::json extra;  // cell labels, skips, error text

  nlohmann::json to_json() const;
  static MetricRow from_json(const nlohmann::json& j);
};

enum class EvalTask { RetrievalGlobal, RetrievalLocal, ZeroShot, Probe };

/// Metrics of a trained model on `split`.
std::vector<MetricRow> evaluate(const DualEncoder& model, const synth::Dataset& data, const std::string& split,
                                const std::vector<EvalTask>& tasks, double fraction, std::uint64_t seed,
                                const std::string& config_hash, const LossConfig& loss_cfg = {});

void append_jsonl(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_jsonl(const std::filesystem::path& path);

/// One training variant of a sweep.
struct Variant {
  std::string name;
  LossKind loss = LossKind::Combined;
  bool declip = false;
  DeclipWeights weights;
  InitMode init = InitMode::PretrainedBoth;
};

struct SweepAxes {
  std::vector<double> fractions;
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<EvalTask> tasks{EvalTask::RetrievalGlobal};
};

struct SweepOutcome {
  std::vector<MetricRow> rows;
  std::size_t trained = 0, cached = 0, failed = 0;
};

/// Trains and evaluates the cross product of the axes. Each cell stores its
/// rows in `work_dir/cells/<hash>.jsonl`; existing cells are read back rather
/// than retrained, and tasks they lack are evaluated from the stored
/// checkpoint. A failing cell yields one row with status "error".
SweepOutcome sweep(const ExperimentConfig& base, const SweepAxes& axes, const std::filesystem::path& work_dir);

/// Baseline plus the three single-component variants at weight 0.5.
std::vector<Variant> ablation_variants(LossKind loss = LossKind::Combined, InitMode init = InitMode::PretrainedBoth);

}  // namespace pf
