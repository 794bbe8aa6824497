// seqrec: experiment driver wiring preprocessing, batch construction,
// two-stage training and ranking evaluation into subcommands.
//
// Exit codes: 0 success, 1 usage/runtime error, 2 invariant or audit failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqrec/config.hpp"
#include "seqrec/synthgen.hpp"

namespace fs = std::filesystem;
using namespace seqrec;
using nlohmann::json;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_file,
                  "key=value config file (see README for keys)");
  cmd->add_option("--set", args.overrides,
                  "config override, e.g. --set loss.mip_weight=0.5");
  cmd->add_option("--out", args.out_dir, "output directory");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  ExperimentConfig cfg;
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got: " + kv);
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

fs::path run_dir(const CommonArgs& args, const std::string& cmd) {
  if (!args.out_dir.empty()) return args.out_dir;
  const char* root = std::getenv("SEQREC_OUT_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
  return base / (cmd + "_" + stamp);
}

Dataset open_dataset(const ExperimentConfig& cfg, const std::string& flag) {
  const std::string dir = flag.empty() ? cfg.dataset_dir : flag;
  if (dir.empty()) throw ConfigError("no dataset directory given");
  return load_dataset(dir);
}

ModelConfig model_for(const ExperimentConfig& cfg, const Dataset& data) {
  ModelConfig m = cfg.model;
  m.item_vocab = data.vocab.item_count();
  m.attr_vocab = data.vocab.attr_count();
  m.validate();
  return m;
}

void write_resolved(const ExperimentConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  cfg.save_file(dir / "config.resolved");
}

EvalResult eval_result_from_json(const json& j) {
  EvalResult r;
  r.protocol.n_negatives = j.at("protocol").at("n_negatives").get<int>();
  r.protocol.k_values =
      j.at("protocol").at("k_values").get<std::vector<int>>();
  r.protocol.seed = j.at("protocol").at("seed").get<std::uint64_t>();
  r.protocol.scope = j.at("protocol").at("scope").get<std::string>() == "full"
                         ? CandidateScope::full
                         : CandidateScope::sampled;
  for (const auto& [k, v] : j.at("metrics").at("hr").items())
    r.hr[std::stoi(k)] = v.get<double>();
  for (const auto& [k, v] : j.at("metrics").at("ndcg").items())
    r.ndcg[std::stoi(k)] = v.get<double>();
  r.mrr = j.at("metrics").at("mrr").get<double>();
  r.n_users = j.at("n_users").get<long>();
  return r;
}

EvalResult run_evaluate(const Params<float>& params, const ModelConfig& model,
                        const Dataset& data, const ExperimentConfig& cfg,
                        const std::string& label, const fs::path& dir) {
  EvalResult result = evaluate(params, model, data.split, cfg.eval);
  fs::create_directories(dir);
  std::ofstream out(dir / "result.json");
  out << eval_result_to_json(label, result) << "\n";
  return result;
}

// ---------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------

int cmd_preprocess(const CommonArgs& common, const std::string& interactions,
                   const std::string& attributes, const std::string& format,
                   int k_core) {
  const InteractionFormat fmt = format == "jsonl"
                                    ? InteractionFormat::json_lines
                                    : InteractionFormat::tsv;
  Dataset ds = preprocess(interactions, fmt, attributes, k_core);
  const fs::path dir = run_dir(common, "preprocess");
  save_dataset(ds, dir);
  const CorpusStats stats = compute_stats(ds);
  const std::string text = format_stats(stats);
  std::cout << text;
  std::ofstream(dir / "stats.txt") << text;
  std::cout << "dataset written to " << dir.string() << "\n";
  return 0;
}

int cmd_synth(const CommonArgs& common, const SynthSpec& spec) {
  SynthData data = generate(spec);
  const fs::path dir = run_dir(common, "synth");
  write_synth_files(data, dir);
  std::cout << "synthetic corpus written to " << dir.string() << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& common, const std::string& data_dir) {
  ExperimentConfig cfg = resolve_config(common);
  Dataset data = open_dataset(cfg, data_dir);
  const ModelConfig model = model_for(cfg, data);
  const fs::path dir = run_dir(common, "pretrain");
  write_resolved(cfg, dir);
  Checkpoint ckpt = pretrain(data, model, cfg.train, cfg.sampler, cfg.weights,
                             cfg.raw_bilinear, &dir);
  save_checkpoint(ckpt, dir / "final");
  std::ofstream hist(dir / "history.jsonl");
  for (const auto& line : ckpt.history) hist << line << "\n";
  std::cout << "pretrained checkpoint at " << (dir / "final").string() << "\n";
  return 0;
}

int cmd_finetune(const CommonArgs& common, const std::string& data_dir,
                 const std::string& init_ckpt, bool from_scratch) {
  if (init_ckpt.empty() == !from_scratch)
    throw ConfigError("pass exactly one of --init <ckpt> or --from-scratch");
  ExperimentConfig cfg = resolve_config(common);
  Dataset data = open_dataset(cfg, data_dir);
  const ModelConfig model = model_for(cfg, data);
  const fs::path dir = run_dir(common, "finetune");
  write_resolved(cfg, dir);

  Params<float> init =
      from_scratch
          ? fresh_init(model, cfg.train.seed)
          : transfer_parameters(load_checkpoint(init_ckpt), model);
  const fs::path ckpt_dir = dir / "best";
  Checkpoint best = finetune(std::move(init), data, model, cfg.train,
                             cfg.eval, &ckpt_dir);
  std::ofstream hist(dir / "history.jsonl");
  for (const auto& line : best.history) hist << line << "\n";
  std::cout << "best checkpoint (epoch " << best.epoch << ") at "
            << ckpt_dir.string() << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& common, const std::string& data_dir,
                 const std::string& ckpt_dir, const std::string& label) {
  ExperimentConfig cfg = resolve_config(common);
  Dataset data = open_dataset(cfg, data_dir);
  Checkpoint ckpt = load_checkpoint(ckpt_dir);
  if (ckpt.config.item_vocab != data.vocab.item_count())
    throw ConfigMismatch("checkpoint vocabulary differs from dataset");
  const fs::path dir = run_dir(common, "evaluate");
  write_resolved(cfg, dir);
  const EvalResult r =
      run_evaluate(ckpt.params, ckpt.config, data, cfg, label, dir);
  emit_report({{label, r}}, dir);
  std::cout << std::ifstream(dir / "report.txt").rdbuf();
  return 0;
}

int cmd_ablate(const CommonArgs& common, const std::string& data_dir) {
  ExperimentConfig cfg = resolve_config(common);
  Dataset data = open_dataset(cfg, data_dir);
  const ModelConfig model = model_for(cfg, data);
  const fs::path dir = run_dir(common, "ablate");
  write_resolved(cfg, dir);

  struct Variant {
    std::string label;
    LossWeights weights;
  };
  std::vector<Variant> variants{{"full", cfg.weights}};
  {
    LossWeights w = cfg.weights;
    w.aap = 0;
    variants.push_back({"no_aap", w});
    w = cfg.weights;
    w.mip = 0;
    variants.push_back({"no_mip", w});
    w = cfg.weights;
    w.map = 0;
    variants.push_back({"no_map", w});
    w = cfg.weights;
    w.sp = 0;
    variants.push_back({"no_sp", w});
  }

  std::vector<std::pair<std::string, EvalResult>> results;
  for (const auto& v : variants) {
    const fs::path vdir = dir / v.label;
    fs::create_directories(vdir);
    Checkpoint pre = pretrain(data, model, cfg.train, cfg.sampler, v.weights,
                              cfg.raw_bilinear, nullptr);
    std::ofstream hist(vdir / "pretrain_history.jsonl");
    for (const auto& line : pre.history) hist << line << "\n";
    Checkpoint best = finetune(transfer_parameters(pre, model), data, model,
                               cfg.train, cfg.eval, nullptr);
    const EvalResult r =
        run_evaluate(best.params, model, data, cfg, v.label, vdir);
    results.emplace_back(v.label, r);
    std::cout << v.label << " ndcg@10="
              << (r.ndcg.count(10) ? r.ndcg.at(10) : 0.0) << "\n";
  }
  emit_report(results, dir);
  return 0;
}

int cmd_sweep(const CommonArgs& common, const std::string& data_dir,
              const std::string& fractions_csv, const std::string& epochs_csv,
              const std::string& init_ckpt) {
  ExperimentConfig cfg = resolve_config(common);
  Dataset data = open_dataset(cfg, data_dir);
  const ModelConfig model = model_for(cfg, data);
  const fs::path dir = run_dir(common, "sweep");
  write_resolved(cfg, dir);

  auto parse_list = [](const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string part;
    while (std::getline(ss, part, ','))
      if (!part.empty()) out.push_back(std::stod(part));
    return out;
  };

  std::vector<std::pair<std::string, EvalResult>> results;
  if (!fractions_csv.empty()) {
    Params<float> base_init =
        init_ckpt.empty()
            ? fresh_init(model, cfg.train.seed)
            : transfer_parameters(load_checkpoint(init_ckpt), model);
    for (double f : parse_list(fractions_csv)) {
      TrainConfig tc = cfg.train;
      tc.train_fraction = f;
      Checkpoint best = finetune(base_init, data, model, tc, cfg.eval);
      char label[16];
      std::snprintf(label, sizeof(label), "%g", f);
      const EvalResult r = run_evaluate(best.params, model, data, cfg, label,
                                        dir / (std::string("fraction_") + label));
      results.emplace_back(label, r);
      std::cout << "fraction " << f << " ndcg@10="
                << (r.ndcg.count(10) ? r.ndcg.at(10) : 0.0) << "\n";
    }
  } else if (!epochs_csv.empty()) {
    std::vector<int> epochs;
    for (double e : parse_list(epochs_csv)) epochs.push_back(int(e));
    std::sort(epochs.begin(), epochs.end());
    int interval = 0;
    for (int e : epochs)
      if (e > 0) interval = interval == 0 ? e : std::gcd(interval, e);
    TrainConfig tc = cfg.train;
    tc.pretrain_epochs = epochs.empty() ? 0 : epochs.back();
    tc.checkpoint_interval = interval;
    const fs::path pre_dir = dir / "pretrain";
    if (tc.pretrain_epochs > 0)
      pretrain(data, model, tc, cfg.sampler, cfg.weights, cfg.raw_bilinear,
               &pre_dir);
    for (int e : epochs) {
      Params<float> init;
      if (e == 0) {
        init = fresh_init(model, cfg.train.seed);
      } else {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%04d", e);
        init = transfer_parameters(load_checkpoint(pre_dir / name), model);
      }
      Checkpoint best =
          finetune(std::move(init), data, model, cfg.train, cfg.eval);
      const std::string label = std::to_string(e);
      const EvalResult r = run_evaluate(best.params, model, data, cfg, label,
                                        dir / ("epochs_" + label));
      results.emplace_back(label, r);
      std::cout << "pretrain epochs " << e << " ndcg@10="
                << (r.ndcg.count(10) ? r.ndcg.at(10) : 0.0) << "\n";
    }
  } else {
    throw ConfigError("sweep needs --fractions or --pretrain-epochs");
  }
  emit_report(results, dir);
  return 0;
}

int cmd_audit(bool quick) {
  int failures = 0;
  auto check = [&](const std::string& name, bool ok, const std::string& info) {
    std::printf("%-34s %s  %s\n", name.c_str(), ok ? "ok  " : "FAIL",
                info.c_str());
    if (!ok) ++failures;
  };

  ModelConfig toy;
  toy.dim = 8;
  toy.heads = 2;
  toy.blocks = 2;
  toy.max_len = 6;
  toy.item_vocab = 12;
  toy.attr_vocab = 8;
  toy.dropout = 0.0;

  const std::vector<std::uint64_t> seeds =
      quick ? std::vector<std::uint64_t>{1} : std::vector<std::uint64_t>{1, 11};
  for (LossKind kind : {LossKind::aap, LossKind::mip, LossKind::map,
                        LossKind::sp, LossKind::finetune_rank}) {
    for (std::uint64_t seed : seeds) {
      const double err = finite_difference_audit(kind, toy, seed);
      char buf[96];
      std::snprintf(buf, sizeof(buf), "max_rel_err=%.3e seed=%llu", err,
                    static_cast<unsigned long long>(seed));
      check(std::string("gradient ") + loss_kind_name(kind), err < 1e-4, buf);
    }
  }

  // Uniform-logit law: zero parameters make every InfoNCE term ln(1+n_neg).
  {
    ModelConfig cfg = toy;
    AttributeTable table;
    table.attrs.assign(static_cast<std::size_t>(cfg.item_vocab) + 1, {1, 2});
    std::vector<std::vector<int>> seqs = {{1, 2, 3, 4, 5}, {2, 3, 4, 5, 6}};
    std::vector<const std::vector<int>*> ptrs{&seqs[0], &seqs[1]};
    SamplerHypers hy;
    hy.n_neg_item = 3;
    hy.n_neg_attr = 3;
    Rng brng(7);
    PretrainBatch batch = build_pretrain_batch(
        ptrs, table, hy, cfg.max_len, cfg.item_vocab, cfg.attr_vocab, brng);
    auto params = make_zero_params<double>(cfg);
    PretrainTermLog log;
    pretrain_loss<double>(batch, params, cfg, LossWeights{}, false, nullptr,
                          {}, &log);
    double worst = 0;
    auto scan = [&](const std::vector<double>& terms, int n_neg) {
      for (double t : terms)
        worst = std::max(worst, std::abs(t - std::log1p(double(n_neg))));
    };
    scan(log.aap, hy.n_neg_attr);
    scan(log.mip, hy.n_neg_item);
    scan(log.map, hy.n_neg_attr);
    scan(log.sp, hy.n_neg_seg);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "max_dev=%.3e", worst);
    check("uniform-logit law", worst < 1e-9, buf);
  }

  // Causality: suffix perturbations never touch prefix states; the
  // bidirectional encoder must react to at least one of them.
  {
    ModelConfig cfg = toy;
    cfg.max_len = 8;
    Rng rng(11);
    auto params = init_params<float>(cfg, rng);
    bool causal_ok = true;
    bool bidir_sensitive = false;
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> items(8);
      std::vector<std::uint8_t> valid(8, 1);
      for (auto& v : items) v = rng.uniform_int(1, cfg.item_vocab);
      std::vector<int> perturbed = items;
      const int t = rng.uniform_int(0, 6);
      perturbed[static_cast<std::size_t>(t) + 1] =
          1 + (perturbed[static_cast<std::size_t>(t) + 1] % cfg.item_vocab);
      EncodeTape<float> tape_a, tape_b;
      const MatF fa = encode<float>(items, valid, Direction::causal, params,
                                    cfg, tape_a);
      const MatF fb = encode<float>(perturbed, valid, Direction::causal,
                                    params, cfg, tape_b);
      for (int q = 0; q <= t && causal_ok; ++q)
        causal_ok = fa.row(q) == fb.row(q);
      const MatF ga = encode<float>(items, valid, Direction::bidirectional,
                                    params, cfg, tape_a);
      const MatF gb = encode<float>(perturbed, valid,
                                    Direction::bidirectional, params, cfg,
                                    tape_b);
      for (int q = 0; q <= t && !bidir_sensitive; ++q)
        bidir_sensitive = ga.row(q) != gb.row(q);
    }
    check("causal prefix invariance", causal_ok, "50 trials");
    check("bidirectional sensitivity", bidir_sensitive, "50 trials");
  }

  // Metric identities.
  {
    bool ok = true;
    ok = ok &&
         rank_ground_truth(std::vector<double>{0.9, 0.5, 0.7, 0.1}, 1) == 3;
    ok = ok && ndcg_at_k(3, 5) == 0.5;
    ok = ok && hr_at_k(11, 10) == 0.0 && mrr_of_rank(4) == 0.25;
    std::vector<double> tied(100, 1.0);
    ok = ok && rank_ground_truth(tied, 42) == 100;
    check("metric identities", ok, "");
  }

  // Sampler determinism: same seed, same batch.
  {
    std::vector<std::vector<int>> seqs = {{1, 2, 3, 4, 5, 6}, {4, 5, 6, 7}};
    std::vector<const std::vector<int>*> ptrs{&seqs[0], &seqs[1]};
    AttributeTable table;
    table.attrs.assign(13, {1, 3});
    SamplerHypers hy;
    Rng r1(99), r2(99);
    PretrainBatch a = build_pretrain_batch(ptrs, table, hy, 6, 12, 8, r1);
    PretrainBatch b = build_pretrain_batch(ptrs, table, hy, 6, 12, 8, r2);
    bool same = a.seqs.size() == b.seqs.size();
    for (std::size_t i = 0; same && i < a.seqs.size(); ++i)
      same = a.seqs[i].input_ids == b.seqs[i].input_ids &&
             a.seqs[i].mask.positions == b.seqs[i].mask.positions &&
             a.seqs[i].mip_negatives == b.seqs[i].mip_negatives;
    check("sampler determinism", same, "");
  }

  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 2;
}

int cmd_report(const CommonArgs& common,
               const std::vector<std::string>& files) {
  std::vector<std::pair<std::string, EvalResult>> results;
  for (const auto& file : files) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot open " + file);
    json j = json::parse(in);
    results.emplace_back(j.at("label").get<std::string>(),
                         eval_result_from_json(j));
  }
  const fs::path dir = run_dir(common, "report");
  emit_report(results, dir);
  std::cout << std::ifstream(dir / "report.txt").rdbuf();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-attentive sequential recommender with "
               "mutual-information pretraining"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* pp = app.add_subcommand("preprocess", "build a dataset directory");
  std::string interactions, attributes, format = "tsv";
  int k_core = 5;
  pp->add_option("--interactions", interactions)->required();
  pp->add_option("--attributes", attributes)->required();
  pp->add_option("--format", format)->check(CLI::IsMember({"tsv", "jsonl"}));
  pp->add_option("--k-core", k_core);
  add_common(pp, common);

  auto* sy = app.add_subcommand("synth", "generate a synthetic corpus");
  SynthSpec spec;
  sy->add_option("--users", spec.n_users);
  sy->add_option("--items", spec.n_items);
  sy->add_option("--attrs", spec.n_attrs);
  sy->add_option("--attrs-per-item", spec.attrs_per_item);
  sy->add_option("--clusters", spec.clusters);
  sy->add_option("--concentration", spec.transition_concentration);
  sy->add_option("--noise", spec.attr_noise);
  sy->add_option("--min-len", spec.min_len);
  sy->add_option("--max-len", spec.max_len);
  sy->add_option("--seed", spec.seed);
  add_common(sy, common);

  std::string data_dir, init_ckpt, ckpt_dir, label = "eval";
  bool from_scratch = false;

  auto* pt = app.add_subcommand("pretrain", "self-supervised pretraining");
  pt->add_option("--data", data_dir)->required();
  add_common(pt, common);

  auto* ft = app.add_subcommand("finetune", "next-item fine-tuning");
  ft->add_option("--data", data_dir)->required();
  ft->add_option("--init", init_ckpt);
  ft->add_flag("--from-scratch", from_scratch);
  add_common(ft, common);

  auto* ev = app.add_subcommand("evaluate", "ranking evaluation");
  ev->add_option("--data", data_dir)->required();
  ev->add_option("--ckpt", ckpt_dir)->required();
  ev->add_option("--label", label);
  add_common(ev, common);

  auto* ab = app.add_subcommand(
      "ablate", "full model plus one run per removed objective");
  ab->add_option("--data", data_dir)->required();
  add_common(ab, common);

  auto* sw =
      app.add_subcommand("sweep", "train-fraction or pretrain-epoch sweeps");
  std::string fractions_csv, epochs_csv;
  sw->add_option("--data", data_dir)->required();
  sw->add_option("--fractions", fractions_csv);
  sw->add_option("--pretrain-epochs", epochs_csv);
  sw->add_option("--init", init_ckpt);
  add_common(sw, common);

  auto* au =
      app.add_subcommand("audit", "gradient audit and invariant checks");
  bool quick = false;
  au->add_flag("--quick", quick);

  auto* rp = app.add_subcommand("report", "combine result.json files");
  std::vector<std::string> report_files;
  rp->add_option("files", report_files)->required();
  add_common(rp, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (pp->parsed())
      return cmd_preprocess(common, interactions, attributes, format, k_core);
    if (sy->parsed()) return cmd_synth(common, spec);
    if (pt->parsed()) return cmd_pretrain(common, data_dir);
    if (ft->parsed())
      return cmd_finetune(common, data_dir, init_ckpt, from_scratch);
    if (ev->parsed()) return cmd_evaluate(common, data_dir, ckpt_dir, label);
    if (ab->parsed()) return cmd_ablate(common, data_dir);
    if (sw->parsed())
      return cmd_sweep(common, data_dir, fractions_csv, epochs_csv, init_ckpt);
    if (au->parsed()) return cmd_audit(quick);
    if (rp->parsed()) return cmd_report(common, report_files);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
