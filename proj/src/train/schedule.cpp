#include "pairforge/schedule.hpp"

#include <algorithm>
#include <limits>

#include "pairforge/rng.hpp"

namespace pf {

Schedule Schedule::paper() {
  Schedule s;
  s.validate_every = 500;
  s.eval_iters = 100;
  s.patience = 10;
  return s;
}

void Schedule::validate() const {
  if (batch == 0 || validate_every == 0 || eval_iters == 0)
    throw ContractError("schedule: batch, validate_every and eval_iters must be positive");
}

nlohmann::json Schedule::to_json() const {
  return {{"batch", batch},
          {"validate_every", validate_every},
          {"eval_iters", eval_iters},
          {"patience", patience},
          {"max_iters", max_iters}};
}

Schedule Schedule::from_json(const nlohmann::json& j, Schedule base) {
  base.batch = j.value("batch", base.batch);
  base.validate_every = j.value("validate_every", base.validate_every);
  base.eval_iters = j.value("eval_iters", base.eval_iters);
  base.patience = j.value("patience", base.patience);
  base.max_iters = j.value("max_iters", base.max_iters);
  base.validate();
  return base;
}

nlohmann::json LogEntry::to_json() const {
  nlohmann::json j{{"iteration", iteration}, {"train_loss", train_loss}, {"val_loss", val_loss}};
  if (!terms.empty()) j["terms"] = terms;
  return j;
}

BatchSampler::BatchSampler(std::vector<std::uint32_t> ids, std::size_t batch, std::uint64_t seed)
    : ids_(std::move(ids)), batch_(batch), seed_(seed) {
  if (ids_.empty()) throw ContractError("batch sampler: no training samples");
  if (batch_ == 0) throw ContractError("batch sampler: batch size must be positive");
  reshuffle();
}

void BatchSampler::reshuffle() {
  Rng rng(derive_seed(seed_, 0xB0, epoch_));
  rng.shuffle(ids_);
  pos_ = 0;
}

std::vector<std::uint32_t> BatchSampler::next() {
  const std::size_t b = std::min(batch_, ids_.size());
  if (pos_ + b > ids_.size()) {
    ++epoch_;
    reshuffle();
  }
  std::vector<std::uint32_t> out(ids_.begin() + pos_, ids_.begin() + pos_ + b);
  pos_ += b;
  return out;
}

std::vector<std::vector<std::uint32_t>> validation_batches(const std::vector<std::uint32_t>& ids,
                                                           const Schedule& s) {
  if (ids.empty()) throw ContractError("validation: no samples");
  const std::size_t b = std::min(s.batch, ids.size());
  std::vector<std::vector<std::uint32_t>> out;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < s.eval_iters; ++k) {
    std::vector<std::uint32_t> batch;
    for (std::size_t i = 0; i < b; ++i) batch.push_back(ids[(pos + i) % ids.size()]);
    pos = (pos + b) % ids.size();
    out.push_back(std::move(batch));
    // Once every sample has been seen, further windows would only repeat.
    if ((k + 1) * b >= ids.size() && pos == 0) break;
  }
  return out;
}

RunSummary run_schedule(ParamList& params, const AdamConfig& adam, const Schedule& s,
                        const std::vector<std::uint32_t>& train_ids, std::uint64_t seed,
                        const std::function<StepOutput(std::size_t, const std::vector<std::uint32_t>&)>& step,
                        const std::function<double()>& validate) {
  s.validate();
  auto tensors = tensors_of(params);
  Adam opt(tensors, adam);
  BatchSampler sampler(train_ids, s.batch, derive_seed(seed, 0xB5));

  RunSummary out;
  out.best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best;
  auto snapshot = [&] {
    best.clear();
    for (const auto& t : tensors) best.emplace_back(t.data().begin(), t.data().end());
  };
  snapshot();
  out.initial_val = validate();

  std::size_t since_best = 0;
  double interval_loss = 0.0;
  std::size_t interval_n = 0;
  std::map<std::string, double> interval_terms;

  for (std::size_t it = 0;; ++it) {
    opt.zero_grad();
    StepOutput r = step(it, sampler.next());
    r.loss.backward();
    opt.step();
    interval_loss += r.loss.item();
    for (const auto& [k, v] : r.terms) interval_terms[k] += v;
    ++interval_n;
    out.iterations = it + 1;

    const bool capped = s.max_iters > 0 && out.iterations >= s.max_iters;
    if (out.iterations % s.validate_every != 0 && !capped) continue;

    LogEntry e;
    e.iteration = out.iterations;
    e.train_loss = interval_loss / static_cast<double>(interval_n);
    for (const auto& [k, v] : interval_terms) e.terms[k] = v / static_cast<double>(interval_n);
    e.val_loss = validate();
    out.log.push_back(e);
    interval_loss = 0.0;
    interval_n = 0;
    interval_terms.clear();

    if (e.val_loss < out.best_val) {
      out.best_val = e.val_loss;
      out.best_iteration = e.iteration;
      since_best = 0;
      snapshot();
    } else {
      ++since_best;
    }
    if (since_best >= s.patience) {
      out.early_stopped = true;
      break;
    }
    if (capped) break;
  }

  for (std::size_t i = 0; i < tensors.size(); ++i) std::ranges::copy(best[i], tensors[i].mutable_data().begin());
  return out;
}

}  // namespace pf
