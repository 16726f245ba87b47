#include "pairforge/experiment.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <fstream>

#include "pairforge/ops.hpp"
#include "pairforge/pretrain.hpp"
#include "pairforge/rng.hpp"

namespace pf {

namespace fs = std::filesystem;
using nlohmann::json;

std::string init_mode_name(InitMode m) {
  switch (m) {
    case InitMode::Random: return "random";
    case InitMode::PretrainedImage: return "pretrained-image";
    case InitMode::PretrainedBoth: break;
  }
  return "pretrained-both";
}

InitMode parse_init_mode(const std::string& name) {
  if (name == "random") return InitMode::Random;
  if (name == "pretrained-image") return InitMode::PretrainedImage;
  if (name == "pretrained-both") return InitMode::PretrainedBoth;
  throw ContractError("unknown init mode '" + name + "' (expected random, pretrained-image or pretrained-both)");
}

std::string version_string() { return PAIRFORGE_VERSION; }

namespace {

bool needs_image_ckpt(InitMode m) { return m != InitMode::Random; }
bool needs_text_ckpt(InitMode m) { return m == InitMode::PretrainedBoth; }

bool standard_fraction(double f) {
  for (double s : synth::kStandardFractions)
    if (std::abs(f - s) < 1e-12) return true;
  return false;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!standard_fraction(fraction))
    throw ContractError("fraction " + std::to_string(fraction) + " is not one of 0.01, 0.05, 0.1, 0.2, 0.5, 1");
  weights.validate();
  schedule.validate();
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
    throw ContractError("optimizer: lr must be positive and betas in [0, 1)");
  if (!(loss_cfg.tau > 0 && loss_cfg.tau2 > 0 && loss_cfg.tau3 > 0))
    throw ContractError("temperatures must be positive");
  if (needs_image_ckpt(init) && image_ckpt.empty())
    throw ContractError("init mode " + init_mode_name(init) + " needs an image checkpoint");
  if (needs_text_ckpt(init) && text_ckpt.empty())
    throw ContractError("init mode " + init_mode_name(init) + " needs a text checkpoint");
}

DeclipWeights ExperimentConfig::effective_weights() const { return declip ? weights : DeclipWeights{0, 0, 0}; }

json ExperimentConfig::to_json() const {
  const auto w = effective_weights();
  json j{{"data", data_dir.generic_string()},
         {"init", init_mode_name(init)},
         {"loss", loss_kind_name(loss)},
         {"declip", w.any()},
         {"weights", {{"alpha", w.alpha}, {"beta", w.beta}, {"gamma", w.gamma}}},
         {"fraction", fraction},
         {"adam", {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}}},
         {"loss_cfg",
          {{"tau", loss_cfg.tau}, {"tau2", loss_cfg.tau2}, {"tau3", loss_cfg.tau3}, {"literal_sign", loss_cfg.literal_sign}}},
         {"schedule", schedule.to_json()},
         {"encoder", json::parse(encoder.to_json())},
         {"seed", seed}};
  if (needs_image_ckpt(init)) j["image_ckpt"] = image_ckpt.generic_string();
  if (needs_text_ckpt(init)) j["text_ckpt"] = text_ckpt.generic_string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::vector<std::string> known{"data",   "init",     "image_ckpt", "text_ckpt", "loss",
                                              "declip", "weights",  "fraction",   "adam",      "loss_cfg",
                                              "schedule", "encoder", "seed"};
  if (!j.is_object()) throw ContractError("experiment config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::ranges::find(known, key) == known.end()) throw ContractError("unknown config key '" + key + "'");

  ExperimentConfig c;
  try {
    c.data_dir = j.value("data", std::string{});
    c.init = parse_init_mode(j.value("init", init_mode_name(c.init)));
    c.image_ckpt = j.value("image_ckpt", std::string{});
    c.text_ckpt = j.value("text_ckpt", std::string{});
    c.loss = parse_loss_kind(j.value("loss", loss_kind_name(c.loss)));
    c.declip = j.value("declip", c.declip);
    if (j.contains("weights")) {
      const auto& w = j["weights"];
      c.weights = {w.value("alpha", c.weights.alpha), w.value("beta", c.weights.beta), w.value("gamma", c.weights.gamma)};
    }
    c.fraction = j.value("fraction", c.fraction);
    if (j.contains("adam")) {
      const auto& a = j["adam"];
      c.adam = {a.value("lr", c.adam.lr), a.value("beta1", c.adam.beta1), a.value("beta2", c.adam.beta2),
                a.value("eps", c.adam.eps)};
    }
    if (j.contains("loss_cfg")) {
      const auto& l = j["loss_cfg"];
      c.loss_cfg = {l.value("tau", c.loss_cfg.tau), l.value("tau2", c.loss_cfg.tau2), l.value("tau3", c.loss_cfg.tau3),
                    l.value("literal_sign", c.loss_cfg.literal_sign)};
    }
    if (j.contains("schedule")) c.schedule = Schedule::from_json(j["schedule"], c.schedule);
    if (j.contains("encoder")) c.encoder = EncoderConfig::from_json(j["encoder"].dump());
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ContractError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const { return fnv1a_hex(to_json().dump()); }

void check_inputs(const ExperimentConfig& cfg) {
  cfg.validate();
  if (!cfg.data_dir.empty() && !fs::exists(cfg.data_dir / "manifest.json"))
    throw MissingInput("dataset not found: " + (cfg.data_dir / "manifest.json").string());
  if (needs_image_ckpt(cfg.init) && !fs::exists(cfg.image_ckpt))
    throw MissingInput("image checkpoint not found: " + cfg.image_ckpt.string());
  if (needs_text_ckpt(cfg.init) && !fs::exists(cfg.text_ckpt))
    throw MissingInput("text checkpoint not found: " + cfg.text_ckpt.string());
}

namespace {

void load_slot(const fs::path& path, const std::string& modality, const EncoderConfig& enc, ParamList& params) {
  const auto ck = load_checkpoint(path);
  if (ck.modality != modality)
    throw CheckpointMismatch("checkpoint " + path.string() + " holds a " + ck.modality + " encoder, expected " +
                             modality);
  restore_params(ck, enc, params);
}

ParamList all_named(DualEncoder& m) {
  ParamList p = m.image.params();
  p.insert(p.end(), m.text.params().begin(), m.text.params().end());
  return p;
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg, const synth::Dataset& data, const fs::path& log_path) {
  check_inputs(cfg);
  const auto& train_ids = data.fraction(cfg.fraction);
  const auto& val_ids = data.split("val");
  if (val_ids.empty()) throw ContractError("train: the validation split is empty");

  TrainResult r{DualEncoder(cfg.encoder, cfg.seed), {}, {}};
  DualEncoder& model = r.model;
  if (needs_image_ckpt(cfg.init)) load_slot(cfg.image_ckpt, "image", cfg.encoder, model.image.params());
  if (needs_text_ckpt(cfg.init)) load_slot(cfg.text_ckpt, "text", cfg.encoder, model.text.params());

  DeclipConfig dc;
  dc.weights = cfg.effective_weights();
  dc.loss = cfg.loss;
  dc.loss_cfg = cfg.loss_cfg;
  EmbeddingQueue queue;

  auto make_batch = [&](const std::vector<std::uint32_t>& ids, std::uint64_t seed) {
    PairBatch b;
    b.images = batch_images(data, ids);
    for (auto id : ids) b.texts.push_back(data.sample(id).report.impression);
    b.ids = ids;
    b.seed = seed;
    return b;
  };
  auto step = [&](std::size_t it, const std::vector<std::uint32_t>& ids) {
    auto res = declip_step(make_batch(ids, derive_seed(cfg.seed, 0xD1, it)), model, dc, queue);
    StepOutput s{res.total, {}};
    if (dc.weights.any())
      for (const auto& [name, term] : res.terms) s.terms[name] = term.item();
    return s;
  };
  const auto val_batches = validation_batches(val_ids, cfg.schedule);
  auto validate = [&] {
    NoGradGuard ng;
    double total = 0.0;
    for (const auto& ids : val_batches) {
      std::vector<synth::TokenSequence> texts;
      for (auto id : ids) texts.push_back(data.sample(id).report.impression);
      const auto v = model.image.encode(batch_images(data, ids));
      const auto t = model.text.encode(trim_batch(texts));
      total += pair_loss(cfg.loss, {v.global, t.global, v.local, t.local_concat, t.lengths}, cfg.loss_cfg).item();
    }
    return total / static_cast<double>(val_batches.size());
  };

  ParamList params = all_named(model);
  r.summary = run_schedule(params, cfg.adam, cfg.schedule, train_ids, cfg.seed, step, validate);
  r.checkpoint = make_checkpoint("vlm", "dual", cfg.seed, cfg.encoder, params);

  if (!log_path.empty()) {
    std::ofstream out(log_path, std::ios::app);
    if (!out) throw std::runtime_error("cannot write training log " + log_path.string());
    out << json{{"config_hash", cfg.hash()}, {"version", version_string()}, {"config", cfg.to_json()}}.dump() << '\n';
    for (const auto& e : r.summary.log) out << e.to_json().dump() << '\n';
    out << json{{"best_iteration", r.summary.best_iteration},
                {"best_val", r.summary.best_val},
                {"initial_val", r.summary.initial_val},
                {"iterations", r.summary.iterations},
                {"early_stopped", r.summary.early_stopped}}
               .dump()
        << '\n';
  }
  return r;
}

DualEncoder load_model(const fs::path& ckpt_path) {
  if (!fs::exists(ckpt_path)) throw MissingInput("checkpoint not found: " + ckpt_path.string());
  const auto ck = load_checkpoint(ckpt_path);
  if (ck.modality != "dual")
    throw CheckpointMismatch("checkpoint " + ckpt_path.string() + " holds a " + ck.modality +
                             " encoder, expected a trained vision-language model");
  const auto enc = EncoderConfig::from_json(ck.config_json);
  DualEncoder m(enc, ck.seed);
  ParamList params = all_named(m);
  restore_params(ck, enc, params);
  return m;
}

json MetricRow::to_json() const {
  json j{{"task", task},         {"matcher", matcher}, {"fraction", fraction},
         {"seed", seed},         {"metric", metric},   {"value", value},
         {"config_hash", config_hash}, {"version", version}, {"status", status}};
  if (!extra.is_null()) j["extra"] = extra;
  return j;
}

MetricRow MetricRow::from_json(const json& j) {
  MetricRow r;
  r.task = j.at("task");
  r.matcher = j.at("matcher");
  r.fraction = j.at("fraction");
  r.seed = j.at("seed");
  r.metric = j.at("metric");
  r.value = j.at("value");
  r.config_hash = j.at("config_hash");
  r.version = j.at("version");
  r.status = j.at("status");
  if (j.contains("extra")) r.extra = j["extra"];
  return r;
}

std::vector<MetricRow> evaluate(const DualEncoder& model, const synth::Dataset& data, const std::string& split,
                                const std::vector<EvalTask>& tasks, double fraction, std::uint64_t seed,
                                const std::string& config_hash, const LossConfig& loss_cfg) {
  const auto e = encode_pairs(model, data, data.split(split));
  std::vector<MetricRow> rows;
  auto row = [&](std::string task, std::string matcher, std::string metric, double value) {
    MetricRow r;
    r.task = std::move(task);
    r.matcher = std::move(matcher);
    r.fraction = fraction;
    r.seed = seed;
    r.metric = std::move(metric);
    r.value = value;
    r.config_hash = config_hash;
    r.version = version_string();
    return r;
  };
  for (auto t : tasks) {
    switch (t) {
      case EvalTask::RetrievalGlobal:
      case EvalTask::RetrievalLocal: {
        const Matcher m = t == EvalTask::RetrievalGlobal ? Matcher::Global : Matcher::Local;
        rows.push_back(row("retrieval", matcher_name(m), "auroc", retrieval_auroc(e, m, loss_cfg).auroc));
        break;
      }
      case EvalTask::ZeroShot: {
        const auto z = zero_shot_eval(model, e, data);
        auto r = row("zeroshot", "-", "balanced_accuracy", z.mean);
        json per = json::object();
        for (std::size_t c = 0; c < z.per_class.size(); ++c)
          if (z.per_class[c].defined) per[synth::class_name(c)] = z.per_class[c].value;
        r.extra = {{"per_class", per}, {"skipped", z.skipped}};
        rows.push_back(r);
        break;
      }
      case EvalTask::Probe: {
        ProbeConfig pc;
        pc.seed = seed;
        const auto p = linear_probe(e.v_global, label_rows(data, e.ids), pc);
        auto r = row("probe", "-", "balanced_accuracy", p.mean);
        r.extra = {{"fold_means", p.fold_means}, {"skipped", p.skipped}};
        rows.push_back(r);
        break;
      }
    }
  }
  return rows;
}

void append_jsonl(const fs::path& path, const std::vector<MetricRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot write metrics file " + path.string());
  for (const auto& r : rows) out << r.to_json().dump() << '\n';
}

std::vector<MetricRow> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInput("metrics file not found: " + path.string());
  std::vector<MetricRow> rows;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) rows.push_back(MetricRow::from_json(json::parse(line)));
  return rows;
}

std::vector<Variant> ablation_variants(LossKind loss, InitMode init) {
  return {{"baseline", loss, false, {0, 0, 0}, init},
          {"alpha", loss, true, {0.5, 0, 0}, init},
          {"beta", loss, true, {0, 0.5, 0}, init},
          {"gamma", loss, true, {0, 0, 0.5}, init}};
}

namespace {

bool row_is(const MetricRow& r, EvalTask t) {
  switch (t) {
    case EvalTask::RetrievalGlobal: return r.task == "retrieval" && r.matcher == "global";
    case EvalTask::RetrievalLocal: return r.task == "retrieval" && r.matcher == "local";
    case EvalTask::ZeroShot: return r.task == "zeroshot";
    case EvalTask::Probe: return r.task == "probe";
  }
  return false;
}

}  // namespace

SweepOutcome sweep(const ExperimentConfig& base, const SweepAxes& axes, const fs::path& work_dir) {
  std::vector<ExperimentConfig> cells;
  std::vector<std::string> names;
  for (double f : axes.fractions)
    for (const auto& v : axes.variants)
      for (auto seed : axes.seeds) {
        ExperimentConfig c = base;
        c.fraction = f;
        c.loss = v.loss;
        c.declip = v.declip;
        c.weights = v.weights;
        c.init = v.init;
        c.seed = seed;
        c.validate();
        cells.push_back(c);
        names.push_back(v.name);
      }
  check_inputs(base);
  for (const auto& c : cells) check_inputs(c);

  const fs::path cell_dir = work_dir / "cells";
  fs::create_directories(cell_dir);
  std::optional<synth::Dataset> data;

  SweepOutcome out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    const std::string h = c.hash();
    const fs::path rows_path = cell_dir / (h + ".jsonl");
    std::vector<MetricRow> rows;
    if (fs::exists(rows_path)) {
      const auto stored = read_jsonl(rows_path);
      std::vector<EvalTask> missing;
      for (auto t : axes.tasks)
        if (std::none_of(stored.begin(), stored.end(), [&](const MetricRow& r) { return row_is(r, t); }))
          missing.push_back(t);
      std::vector<MetricRow> extra;
      if (!missing.empty()) {
        if (!data) data = synth::Dataset::load(base.data_dir);
        const auto model = load_model(cell_dir / (h + ".ckpt"));
        extra = evaluate(model, *data, "test", missing, c.fraction, c.seed, h, c.loss_cfg);
        const auto iters = stored.empty() ? json() : stored.front().extra.value("iterations", json());
        for (auto& row : extra)
          if (!iters.is_null()) row.extra["iterations"] = iters;
        append_jsonl(rows_path, extra);
      }
      for (auto t : axes.tasks) {
        for (const auto& pool : {std::cref(stored), std::cref(extra)})
          for (const auto& r : pool.get())
            if (row_is(r, t)) rows.push_back(r);
      }
      ++out.cached;
    } else {
      try {
        if (!data) data = synth::Dataset::load(base.data_dir);
        const fs::path log = cell_dir / (h + ".log.jsonl");
        fs::remove(log);
        auto r = train(c, *data, log);
        save_checkpoint(cell_dir / (h + ".ckpt"), r.checkpoint);
        rows = evaluate(r.model, *data, "test", axes.tasks, c.fraction, c.seed, h, c.loss_cfg);
        for (auto& row : rows) row.extra["iterations"] = r.summary.iterations;
        const fs::path tmp = cell_dir / (h + ".jsonl.tmp");
        fs::remove(tmp);
        append_jsonl(tmp, rows);
        fs::rename(tmp, rows_path);
        ++out.trained;
      } catch (const std::exception& e) {
        MetricRow err;
        err.task = "train";
        err.matcher = "-";
        err.fraction = c.fraction;
        err.seed = c.seed;
        err.metric = "error";
        err.value = std::nan("");
        err.config_hash = h;
        err.version = version_string();
        err.status = "error";
        err.extra["message"] = e.what();
        rows = {err};
        ++out.failed;
      }
    }
    for (auto& row : rows) {
      row.extra["variant"] = names[i];
      row.extra["init"] = init_mode_name(c.init);
      row.extra["loss"] = loss_kind_name(c.loss);
      const auto w = c.effective_weights();
      row.extra["weights"] = {w.alpha, w.beta, w.gamma};
    }
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  }
  return out;
}

}  // namespace pf
