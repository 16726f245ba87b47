#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "pairforge/experiment.hpp"
#include "pairforge/pretrain.hpp"
#include "pairforge/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pf;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kFailed = 1;     // training or evaluation failed, or a sweep cell errored
constexpr int kBadConfig = 2;  // malformed arguments or configuration
constexpr int kMissing = 3;    // dataset or checkpoint not found

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingInput("config file not found: " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ContractError("config " + p.string() + " is not valid JSON: " + e.what());
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("PAIRFORGE_SEED");
  if (!s || !*s) return std::nullopt;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ContractError(std::string("PAIRFORGE_SEED is not an unsigned integer: ") + s);
  }
}

void require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw MissingInput("dataset not found: " + (dir / "manifest.json").string());
}

/// Flags shared by the commands that build an ExperimentConfig.
struct ConfigFlags {
  std::string config, data, init, image_ckpt, text_ckpt, loss;
  std::optional<std::uint64_t> seed;
  std::optional<double> fraction, alpha, beta, gamma, lr, tau;
  std::optional<std::size_t> max_iters, batch, patience, validate_every, eval_iters;
  std::optional<bool> declip;
  bool paper_schedule = false;

  void attach(CLI::App* app, bool vlm) {
    app->add_option("--config", config, "JSON experiment config; flags override its fields");
    app->add_option("--data", data, "Dataset directory");
    app->add_option("--seed", seed, "Seed (falls back to the config, then PAIRFORGE_SEED, then 0)");
    app->add_option("--max-iters", max_iters, "Iteration cap, 0 for none");
    app->add_option("--batch", batch, "Batch size");
    app->add_option("--patience", patience, "Validations without improvement before stopping");
    app->add_option("--validate-every", validate_every, "Iterations between validations");
    app->add_option("--eval-iters", eval_iters, "Validation batches per validation");
    app->add_flag("--paper-schedule", paper_schedule, "Validate every 500 iterations for 100, patience 10");
    app->add_option("--lr", lr, "Adam learning rate");
    if (!vlm) return;
    app->add_option("--init", init, "random, pretrained-image or pretrained-both");
    app->add_option("--image-ckpt", image_ckpt, "Pretrained image encoder checkpoint");
    app->add_option("--text-ckpt", text_ckpt, "Pretrained text encoder checkpoint");
    app->add_option("--loss", loss, "infonce, gloria or combined");
    app->add_option("--fraction", fraction, "Training data fraction: 0.01, 0.05, 0.1, 0.2, 0.5 or 1");
    app->add_option("--declip", declip, "Enable the DeCLIP terms (true/false)");
    app->add_option("--alpha", alpha, "Self-supervision weight");
    app->add_option("--beta", beta, "Multi-view weight");
    app->add_option("--gamma", gamma, "Nearest-neighbour weight");
    app->add_option("--tau", tau, "Softmax temperature");
  }

  ExperimentConfig build() const {
    json j = config.empty() ? json::object() : read_json_file(config);
    const bool config_seed = j.contains("seed");
    auto c = ExperimentConfig::from_json(j);
    if (!data.empty()) c.data_dir = data;
    if (!init.empty()) c.init = parse_init_mode(init);
    if (!image_ckpt.empty()) c.image_ckpt = image_ckpt;
    if (!text_ckpt.empty()) c.text_ckpt = text_ckpt;
    if (!loss.empty()) c.loss = parse_loss_kind(loss);
    if (fraction) c.fraction = *fraction;
    if (declip) c.declip = *declip;
    if (alpha) c.weights.alpha = *alpha;
    if (beta) c.weights.beta = *beta;
    if (gamma) c.weights.gamma = *gamma;
    if (lr) c.adam.lr = *lr;
    if (tau) c.loss_cfg.tau = *tau;
    if (paper_schedule) {
      const auto keep_batch = c.schedule.batch, keep_cap = c.schedule.max_iters;
      c.schedule = Schedule::paper();
      c.schedule.batch = keep_batch;
      c.schedule.max_iters = keep_cap;
    }
    if (max_iters) c.schedule.max_iters = *max_iters;
    if (batch) c.schedule.batch = *batch;
    if (patience) c.schedule.patience = *patience;
    if (validate_every) c.schedule.validate_every = *validate_every;
    if (eval_iters) c.schedule.eval_iters = *eval_iters;
    if (seed) c.seed = *seed;
    else if (!config_seed) c.seed = env_seed().value_or(0);
    c.validate();
    return c;
  }
};

std::vector<EvalTask> parse_tasks(const std::string& list) {
  std::vector<EvalTask> out;
  for (const auto& t : split_list(list)) {
    if (t == "retrieval-global") out.push_back(EvalTask::RetrievalGlobal);
    else if (t == "retrieval-local") out.push_back(EvalTask::RetrievalLocal);
    else if (t == "zeroshot") out.push_back(EvalTask::ZeroShot);
    else if (t == "probe") out.push_back(EvalTask::Probe);
    else throw ContractError("unknown task '" + t + "' (expected retrieval-global, retrieval-local, zeroshot, probe)");
  }
  if (out.empty()) throw ContractError("no evaluation tasks given");
  return out;
}

/// "<loss>[+declip][@<init>]", e.g. "combined+declip@random".
Variant parse_variant(const std::string& spec, const ExperimentConfig& base) {
  Variant v;
  v.name = spec;
  std::string body = spec;
  v.init = base.init;
  if (auto at = body.find('@'); at != std::string::npos) {
    v.init = parse_init_mode(body.substr(at + 1));
    body = body.substr(0, at);
  }
  if (auto plus = body.find('+'); plus != std::string::npos) {
    if (body.substr(plus + 1) != "declip") throw ContractError("unknown variant modifier in '" + spec + "'");
    v.declip = true;
    v.weights = base.weights;
    body = body.substr(0, plus);
  }
  v.loss = parse_loss_kind(body);
  return v;
}

std::vector<double> parse_fractions(const std::string& list) {
  std::vector<double> out;
  for (const auto& f : split_list(list)) {
    try {
      out.push_back(std::stod(f));
    } catch (const std::exception&) {
      throw ContractError("fraction '" + f + "' is not a number");
    }
  }
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& list) {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_list(list)) {
    try {
      out.push_back(std::stoull(s));
    } catch (const std::exception&) {
      throw ContractError("seed '" + s + "' is not an unsigned integer");
    }
  }
  return out;
}

void print_rows(const std::vector<MetricRow>& rows) {
  for (const auto& r : rows) {
    std::cout << r.task << '\t' << r.matcher << "\tfraction=" << r.fraction << "\tseed=" << r.seed << '\t' << r.metric
              << '=' << r.value;
    if (r.extra.contains("variant")) std::cout << "\tvariant=" << r.extra["variant"].get<std::string>();
    if (r.status != "ok") std::cout << "\t[" << r.status << "] " << r.extra.value("message", "");
    std::cout << '\n';
  }
}

int run_sweep(const ExperimentConfig& base, const SweepAxes& axes, const fs::path& work, const std::string& out) {
  const auto res = sweep(base, axes, work);
  print_rows(res.rows);
  if (!out.empty()) append_jsonl(out, res.rows);
  std::cerr << "cells: " << res.trained << " trained, " << res.cached << " cached, " << res.failed << " failed\n";
  return res.failed == 0 ? kOk : kFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pairforge: data-efficient vision-language training on synthetic image-report pairs"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic paired dataset");
  std::string synth_out;
  std::size_t synth_n = 2000;
  std::optional<std::uint64_t> synth_seed;
  int max_attrs = 3;
  std::vector<double> split{0.8, 0.1, 0.1};
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("-n,--n", synth_n, "Number of pairs")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed, "Seed (falls back to PAIRFORGE_SEED, then 0)");
  synth_cmd->add_option("--max-attrs", max_attrs, "Maximum findings per image (0-3)")->check(CLI::Range(0, 3));
  synth_cmd->add_option("--split", split, "Train, validation and test fractions")->expected(3);

  // pretrain-image / pretrain-text
  ConfigFlags img_flags, txt_flags;
  std::string img_out, txt_out, img_log, txt_log;
  std::optional<double> mlm_weight;
  auto* pimg = app.add_subcommand("pretrain-image", "Self-supervised image encoder pretraining");
  img_flags.attach(pimg, false);
  pimg->add_option("--out", img_out, "Checkpoint to write")->required();
  pimg->add_option("--log", img_log, "JSONL training log");
  auto* ptxt = app.add_subcommand("pretrain-text", "Text encoder specialization on findings and impressions");
  txt_flags.attach(ptxt, false);
  ptxt->add_option("--out", txt_out, "Checkpoint to write")->required();
  ptxt->add_option("--log", txt_log, "JSONL training log");
  ptxt->add_option("--mlm-weight", mlm_weight, "Weight of the masked-token term");

  // train
  ConfigFlags train_flags;
  std::string train_out, train_log, train_metrics, train_tasks = "retrieval-global";
  auto* train_cmd = app.add_subcommand("train", "Train the vision-language model");
  train_flags.attach(train_cmd, true);
  train_cmd->add_option("--out", train_out, "Checkpoint to write")->required();
  train_cmd->add_option("--log", train_log, "JSONL training log");
  train_cmd->add_option("--metrics", train_metrics, "Also evaluate on the test split and append rows here");
  train_cmd->add_option("--tasks", train_tasks, "Comma-separated evaluation tasks for --metrics");

  // eval
  std::string eval_ckpt, eval_data, eval_task = "retrieval", eval_matcher = "global", eval_out, eval_split = "test";
  double eval_fraction = 1.0;
  std::optional<std::uint64_t> eval_seed;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained checkpoint");
  eval_cmd->add_option("--ckpt", eval_ckpt, "Trained checkpoint")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--task", eval_task, "retrieval, zeroshot or probe")
      ->check(CLI::IsMember({"retrieval", "zeroshot", "probe"}));
  eval_cmd->add_option("--matcher", eval_matcher, "global or local (retrieval only)")
      ->check(CLI::IsMember({"global", "local"}));
  eval_cmd->add_option("--split", eval_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--fraction", eval_fraction, "Fraction label written to the metrics rows");
  eval_cmd->add_option("--seed", eval_seed, "Seed label and probe fold seed");
  eval_cmd->add_option("--out", eval_out, "Metrics JSONL file to append to");

  // sweep
  ConfigFlags sweep_flags;
  std::string sweep_fracs = "0.01,0.05,0.1,0.2,0.5,1", sweep_variants = "infonce,combined", sweep_seeds = "0",
              sweep_work, sweep_out, sweep_tasks = "retrieval-global";
  auto* sweep_cmd = app.add_subcommand("sweep", "Train and evaluate fractions x variants x seeds");
  sweep_flags.attach(sweep_cmd, true);
  sweep_cmd->add_option("--fractions", sweep_fracs, "Comma-separated data fractions");
  sweep_cmd->add_option("--variants", sweep_variants, "Comma-separated <loss>[+declip][@<init>] variants");
  sweep_cmd->add_option("--seeds", sweep_seeds, "Comma-separated seeds");
  sweep_cmd->add_option("--tasks", sweep_tasks, "Comma-separated evaluation tasks");
  sweep_cmd->add_option("--work", sweep_work, "Cell cache directory")->required();
  sweep_cmd->add_option("--out", sweep_out, "Metrics JSONL file to append to");

  // ablate
  ConfigFlags abl_flags;
  std::string abl_fracs = "0.05", abl_seeds = "0", abl_work, abl_out, abl_tasks = "retrieval-global";
  auto* abl_cmd = app.add_subcommand("ablate", "Baseline and single-component DeCLIP variants");
  abl_flags.attach(abl_cmd, true);
  abl_cmd->add_option("--fractions", abl_fracs, "Comma-separated data fractions");
  abl_cmd->add_option("--seeds", abl_seeds, "Comma-separated seeds");
  abl_cmd->add_option("--tasks", abl_tasks, "Comma-separated evaluation tasks");
  abl_cmd->add_option("--work", abl_work, "Cell cache directory")->required();
  abl_cmd->add_option("--out", abl_out, "Metrics JSONL file to append to");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kBadConfig;
  }

  try {
    if (synth_cmd->parsed()) {
      const std::uint64_t seed = synth_seed ? *synth_seed : env_seed().value_or(0);
      const auto m = synth::build_dataset(synth_n, seed, synth_out, {split[0], split[1], split[2]}, max_attrs);
      std::cout << "wrote " << m.n << " pairs to " << synth_out << " (train " << m.train.size() << ", val "
                << m.val.size() << ", test " << m.test.size() << ")\n";
      return kOk;
    }

    auto pretrain = [&](const ConfigFlags& flags, bool image, const std::string& out, const std::string& log) {
      const auto c = flags.build();
      if (c.data_dir.empty()) throw ContractError("--data is required");
      require_dataset(c.data_dir);
      const auto data = synth::Dataset::load(c.data_dir);
      PretrainConfig pc;
      pc.schedule = c.schedule;
      pc.adam = c.adam;
      pc.seed = c.seed;
      if (mlm_weight) pc.mlm_weight = *mlm_weight;
      PretrainResult r;
      if (image) {
        ImageEncoder enc(c.encoder, c.seed);
        r = simclr_pretrain(data, data.split("train"), data.split("val"), enc, pc);
      } else {
        TextEncoder enc(c.encoder, c.seed);
        r = text_specialize(data, data.split("train"), data.split("val"), enc, pc);
      }
      save_checkpoint(out, r.checkpoint);
      if (!log.empty()) {
        std::ofstream lf(log, std::ios::app);
        for (const auto& e : r.summary.log) lf << e.to_json().dump() << '\n';
      }
      std::cout << (image ? "image" : "text") << " pretraining: " << r.summary.iterations << " iterations, validation "
                << r.summary.initial_val << " -> " << r.summary.best_val << " (best at " << r.summary.best_iteration
                << "), wrote " << out << '\n';
      return kOk;
    };
    if (pimg->parsed()) return pretrain(img_flags, true, img_out, img_log);
    if (ptxt->parsed()) return pretrain(txt_flags, false, txt_out, txt_log);

    if (train_cmd->parsed()) {
      const auto c = train_flags.build();
      if (c.data_dir.empty()) throw ContractError("--data is required");
      const auto tasks = train_metrics.empty() ? std::vector<EvalTask>{} : parse_tasks(train_tasks);
      check_inputs(c);
      const auto data = synth::Dataset::load(c.data_dir);
      auto r = train(c, data, train_log);
      save_checkpoint(train_out, r.checkpoint);
      std::cout << "trained " << r.summary.iterations << " iterations (best at " << r.summary.best_iteration
                << ", validation " << r.summary.best_val << "), config " << c.hash() << ", wrote " << train_out << '\n';
      if (!train_metrics.empty()) {
        const auto rows = evaluate(r.model, data, "test", tasks, c.fraction, c.seed, c.hash(), c.loss_cfg);
        print_rows(rows);
        append_jsonl(train_metrics, rows);
      }
      return kOk;
    }

    if (eval_cmd->parsed()) {
      require_dataset(eval_data);
      if (!fs::exists(eval_ckpt)) throw MissingInput("checkpoint not found: " + eval_ckpt);
      const auto ck = load_checkpoint(eval_ckpt);
      const auto model = load_model(eval_ckpt);
      const auto data = synth::Dataset::load(eval_data);
      EvalTask task = EvalTask::Probe;
      if (eval_task == "retrieval")
        task = eval_matcher == "global" ? EvalTask::RetrievalGlobal : EvalTask::RetrievalLocal;
      else if (eval_task == "zeroshot")
        task = EvalTask::ZeroShot;
      const std::uint64_t seed = eval_seed ? *eval_seed : ck.seed;
      const auto rows = evaluate(model, data, eval_split, {task}, eval_fraction, seed, fnv1a_hex(ck.config_json));
      print_rows(rows);
      if (!eval_out.empty()) append_jsonl(eval_out, rows);
      return kOk;
    }

    if (sweep_cmd->parsed()) {
      const auto base = sweep_flags.build();
      SweepAxes axes;
      axes.fractions = parse_fractions(sweep_fracs);
      for (const auto& v : split_list(sweep_variants)) axes.variants.push_back(parse_variant(v, base));
      axes.seeds = sweep_flags.seed ? std::vector<std::uint64_t>{base.seed} : parse_seeds(sweep_seeds);
      axes.tasks = parse_tasks(sweep_tasks);
      return run_sweep(base, axes, sweep_work, sweep_out);
    }

    if (abl_cmd->parsed()) {
      const auto base = abl_flags.build();
      SweepAxes axes;
      axes.fractions = parse_fractions(abl_fracs);
      axes.variants = ablation_variants(base.loss, base.init);
      axes.seeds = abl_flags.seed ? std::vector<std::uint64_t>{base.seed} : parse_seeds(abl_seeds);
      axes.tasks = parse_tasks(abl_tasks);
      return run_sweep(base, axes, abl_work, abl_out);
    }
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const CheckpointMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
  return kOk;
}
