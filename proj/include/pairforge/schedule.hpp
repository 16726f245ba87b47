#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairforge/encoders.hpp"
#include "pairforge/optim.hpp"

namespace pf {

/// Validation cadence and early stopping. Defaults are the reduced desk
/// schedule; paper() restores the full one.
struct Schedule {
  std::size_t batch = 20;
  std::size_t validate_every = 100;
  std::size_t eval_iters = 20;
  std::size_t patience = 5;
  std::size_t max_iters = 0;  // 0: no cap

  static Schedule paper();
  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep the values of `base`.
  static Schedule from_json(const nlohmann::json& j, Schedule base);
};

/// One training step: the loss to minimise plus named scalar terms to log.
struct StepOutput {
  Tensor loss;
  std::map<std::string, double> terms;
};

struct LogEntry {
  std::size_t iteration = 0;
  double train_loss = 0.0;  // mean over the interval
  double val_loss = 0.0;
  std::map<std::string, double> terms;  // interval means
  nlohmann::json to_json() const;
};

struct RunSummary {
  std::size_t iterations = 0;
  std::size_t best_iteration = 0;
  double best_val = 0.0;
  double initial_val = 0.0;  // before the first update
  bool early_stopped = false;
  std::vector<LogEntry> log;
};

/// Fixed-size batches drawn from epoch-wise shuffles of `ids`. When there are
/// fewer ids than the batch size every batch holds all of them.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::uint32_t> ids, std::size_t batch, std::uint64_t seed);
  std::vector<std::uint32_t> next();

 private:
  void reshuffle();
  std::vector<std::uint32_t> ids_;
  std::size_t batch_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0, pos_ = 0;
};

/// Deterministic validation batches: `eval_iters` consecutive windows over
/// `ids`, wrapping around.
std::vector<std::vector<std::uint32_t>> validation_batches(const std::vector<std::uint32_t>& ids,
                                                           const Schedule& s);

/// Runs Adam on `params` until patience or the iteration cap is exhausted and
/// restores the parameters with the lowest validation loss. `step` receives
/// the iteration index (from 0) and the batch ids; `validate` returns the
/// validation loss and runs without gradient recording.
RunSummary run_schedule(ParamList& params, const AdamConfig& adam, const Schedule& s,
                        const std::vector<std::uint32_t>& train_ids, std::uint64_t seed,
                        const std::function<StepOutput(std::size_t, const std::vector<std::uint32_t>&)>& step,
                        const std::function<double()>& validate);

}  // namespace pf
