#include "seqrec/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "json.hpp"

namespace seqrec {

using nlohmann::json;

namespace {

// Fixed stream tags for seed derivation; the layout keeps every consumer of
// randomness on an independent, reproducible stream.
constexpr std::uint64_t kStreamInit = 0x1000'0000'0000'0001ULL;
constexpr std::uint64_t kStreamFraction = 0x1000'0000'0000'0002ULL;
constexpr std::uint64_t kStreamShuffle = 0x2000'0000'0000'0000ULL;
constexpr std::uint64_t kStreamBatch = 0x3000'0000'0000'0000ULL;
constexpr std::uint64_t kStreamDropout = 0x4000'0000'0000'0000ULL;

std::uint64_t stream_of(std::uint64_t tag, int epoch, int batch = 0) {
  return tag | (static_cast<std::uint64_t>(epoch) << 24) |
         static_cast<std::uint64_t>(batch);
}

template <class S>
void zero_params(Params<S>& p) {
  for_each_tensor(p, [](const std::string&, Mat<S>& t) { t.setZero(); });
}

void clip_gradients(Params<float>& grads, double max_norm) {
  double sq = 0.0;
  for_each_tensor(grads, [&](const std::string&, const MatF& t) {
    sq += static_cast<double>(t.squaredNorm());
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const float scale = static_cast<float>(max_norm / norm);
  for_each_tensor(grads, [&](const std::string&, MatF& t) { t *= scale; });
}

json report_to_json(int epoch, const LossReport& r) {
  json j;
  j["epoch"] = epoch;
  j["aap"] = r.aap;
  j["mip"] = r.mip;
  j["map"] = r.map;
  j["sp"] = r.sp;
  j["aap_terms"] = r.aap_terms;
  j["mip_terms"] = r.mip_terms;
  j["map_terms"] = r.map_terms;
  j["sp_terms"] = r.sp_terms;
  j["total"] = r.total;
  return j;
}

}  // namespace

void TrainConfig::validate() const {
  if (pretrain_epochs < 0 || finetune_epochs < 0)
    throw ConfigError("epoch counts must be non-negative");
  if (pretrain_batch < 1 || finetune_batch < 1)
    throw ConfigError("batch sizes must be positive");
  if (lr <= 0) throw ConfigError("learning rate must be positive");
  if (train_fraction <= 0.0 || train_fraction > 1.0)
    throw ConfigError("train_fraction must lie in (0,1]");
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

AdamState make_adam_state(const ModelConfig& cfg) {
  AdamState s;
  s.m = make_zero_params<float>(cfg);
  s.v = make_zero_params<float>(cfg);
  return s;
}

void adam_step(Params<float>& params, Params<float>& grads, AdamState& state,
               const TrainConfig& tc) {
  if (!params_all_finite(grads)) throw NonFiniteGradient();
  if (tc.grad_clip > 0) clip_gradients(grads, tc.grad_clip);
  ++state.step;
  const float b1 = static_cast<float>(tc.beta1);
  const float b2 = static_cast<float>(tc.beta2);
  const float bias1 =
      1.0f - std::pow(b1, static_cast<float>(state.step));
  const float bias2 =
      1.0f - std::pow(b2, static_cast<float>(state.step));
  const float lr = static_cast<float>(tc.lr);
  const float eps = static_cast<float>(tc.eps);

  std::vector<MatF*> ps, gs, ms, vs;
  for_each_tensor(params, [&](const std::string&, MatF& t) { ps.push_back(&t); });
  for_each_tensor(grads, [&](const std::string&, MatF& t) { gs.push_back(&t); });
  for_each_tensor(state.m, [&](const std::string&, MatF& t) { ms.push_back(&t); });
  for_each_tensor(state.v, [&](const std::string&, MatF& t) { vs.push_back(&t); });
  for (std::size_t i = 0; i < ps.size(); ++i) {
    MatF& m = *ms[i];
    MatF& v = *vs[i];
    const MatF& g = *gs[i];
    m = b1 * m + (1.0f - b1) * g;
    v = (b2 * v.array() + (1.0f - b2) * g.array().square()).matrix();
    const auto m_hat = m.array() / bias1;
    const auto v_hat = v.array() / bias2;
    ps[i]->array() -= lr * m_hat / (v_hat.sqrt() + eps);
  }
}

Checkpoint pretrain(const Dataset& data, const ModelConfig& model,
                    const TrainConfig& tc, const SamplerHypers& hypers,
                    const LossWeights& weights, bool raw_bilinear,
                    const std::filesystem::path* snapshot_dir) {
  model.validate();
  tc.validate();
  Rng root(tc.seed);
  Rng init_rng = root.derive(kStreamInit);
  Checkpoint ckpt;
  ckpt.config = model;
  ckpt.stage = Stage::pretrained;
  ckpt.params = init_params<float>(model, init_rng);
  ckpt.rng_state = root.state_string();

  const auto& train = data.split.train;
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<int>(i);

  AdamState adam = make_adam_state(model);
  Params<float> grads = make_zero_params<float>(model);

  for (int epoch = 1; epoch <= tc.pretrain_epochs; ++epoch) {
    Rng shuffle_rng = root.derive(stream_of(kStreamShuffle, epoch));
    shuffle_rng.shuffle(order);

    double sums[4] = {0, 0, 0, 0};
    long counts[4] = {0, 0, 0, 0};
    int batch_index = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(tc.pretrain_batch), ++batch_index) {
      const std::size_t end = std::min(
          order.size(), at + static_cast<std::size_t>(tc.pretrain_batch));
      std::vector<const std::vector<int>*> seqs;
      seqs.reserve(end - at);
      for (std::size_t i = at; i < end; ++i)
        seqs.push_back(&train[static_cast<std::size_t>(order[i])]);

      Rng batch_rng = root.derive(stream_of(kStreamBatch, epoch, batch_index));
      PretrainBatch batch = build_pretrain_batch(
          seqs, data.attrs, hypers, model.max_len, model.item_vocab,
          model.attr_vocab, batch_rng);

      Rng drop_rng =
          root.derive(stream_of(kStreamDropout, epoch, batch_index));
      DropoutSpec dropout{model.dropout, &drop_rng};
      zero_params(grads);
      const LossReport r = pretrain_loss<float>(
          batch, ckpt.params, model, weights, raw_bilinear, &grads, dropout);
      if (!std::isfinite(r.total)) throw DivergenceDetected(epoch);
      adam_step(ckpt.params, grads, adam, tc);

      sums[0] += r.aap * r.aap_terms;
      sums[1] += r.mip * r.mip_terms;
      sums[2] += r.map * r.map_terms;
      sums[3] += r.sp * r.sp_terms;
      counts[0] += r.aap_terms;
      counts[1] += r.mip_terms;
      counts[2] += r.map_terms;
      counts[3] += r.sp_terms;
    }

    LossReport epoch_report;
    epoch_report.aap = counts[0] ? sums[0] / counts[0] : 0.0;
    epoch_report.mip = counts[1] ? sums[1] / counts[1] : 0.0;
    epoch_report.map = counts[2] ? sums[2] / counts[2] : 0.0;
    epoch_report.sp = counts[3] ? sums[3] / counts[3] : 0.0;
    epoch_report.aap_terms = counts[0];
    epoch_report.mip_terms = counts[1];
    epoch_report.map_terms = counts[2];
    epoch_report.sp_terms = counts[3];
    epoch_report.total = weights.aap * epoch_report.aap +
                         weights.mip * epoch_report.mip +
                         weights.map * epoch_report.map +
                         weights.sp * epoch_report.sp;
    ckpt.history.push_back(report_to_json(epoch, epoch_report).dump());
    ckpt.epoch = epoch;

    if (snapshot_dir && tc.checkpoint_interval > 0 &&
        epoch % tc.checkpoint_interval == 0) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04d", epoch);
      save_checkpoint(ckpt, *snapshot_dir / name);
    }
  }
  return ckpt;
}

Params<float> fresh_init(const ModelConfig& model, std::uint64_t seed) {
  Rng root(seed);
  Rng init_rng = root.derive(kStreamInit);
  return init_params<float>(model, init_rng);
}

Params<float> transfer_parameters(const Checkpoint& pretrained,
                                  const ModelConfig& target) {
  const ModelConfig& src = pretrained.config;
  if (!src.same_shape(target))
    throw ConfigMismatch("pretrained checkpoint shape differs from target");
  return pretrained.params;
}

Checkpoint finetune(Params<float> init, const Dataset& data,
                    const ModelConfig& model, const TrainConfig& tc,
                    EvalProtocol valid_protocol,
                    const std::filesystem::path* out_dir) {
  model.validate();
  tc.validate();
  valid_protocol.target = EvalTarget::valid;

  Rng root(tc.seed);
  const auto& train = data.split.train;
  std::vector<int> selected(train.size());
  for (std::size_t i = 0; i < selected.size(); ++i)
    selected[i] = static_cast<int>(i);
  if (tc.train_fraction < 1.0) {
    Rng frac_rng = root.derive(kStreamFraction);
    frac_rng.shuffle(selected);
    const auto keep = static_cast<std::size_t>(std::max<long>(
        1, std::lround(tc.train_fraction * static_cast<double>(train.size()))));
    selected.resize(std::min(keep, selected.size()));
  }

  Checkpoint best;
  best.config = model;
  best.stage = Stage::finetuned;
  best.params = std::move(init);
  best.rng_state = root.state_string();
  best.epoch = 0;

  Params<float> params = best.params;
  AdamState adam = make_adam_state(model);
  Params<float> grads = make_zero_params<float>(model);

  double best_ndcg = -1.0;
  int since_best = 0;
  std::vector<std::string> history;
  std::vector<int> order = selected;

  for (int epoch = 1; epoch <= tc.finetune_epochs; ++epoch) {
    Rng shuffle_rng = root.derive(stream_of(kStreamShuffle, epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    long loss_terms = 0;
    int batch_index = 0;
    for (std::size_t at = 0; at < order.size();
         at += static_cast<std::size_t>(tc.finetune_batch), ++batch_index) {
      const std::size_t end = std::min(
          order.size(), at + static_cast<std::size_t>(tc.finetune_batch));
      std::vector<const std::vector<int>*> seqs;
      seqs.reserve(end - at);
      for (std::size_t i = at; i < end; ++i)
        seqs.push_back(&train[static_cast<std::size_t>(order[i])]);

      Rng batch_rng = root.derive(stream_of(kStreamBatch, epoch, batch_index));
      FinetuneBatch batch = build_finetune_batch(seqs, model.max_len,
                                                 model.item_vocab, batch_rng);
      Rng drop_rng =
          root.derive(stream_of(kStreamDropout, epoch, batch_index));
      DropoutSpec dropout{model.dropout, &drop_rng};
      zero_params(grads);
      const FinetuneLossValue v =
          finetune_loss<float>(batch, params, model, &grads, dropout);
      if (!std::isfinite(v.total)) throw DivergenceDetected(epoch);
      adam_step(params, grads, adam, tc);
      loss_sum += v.term_sum;
      loss_terms += v.term_count;
    }

    const EvalResult val = evaluate(params, model, data.split, valid_protocol);
    const int k_sel = valid_protocol.k_values.empty()
                          ? 10
                          : valid_protocol.k_values.back();
    const double ndcg = val.ndcg.count(10) ? val.ndcg.at(10)
                                           : val.ndcg.at(k_sel);
    json j;
    j["epoch"] = epoch;
    j["loss_mean"] = loss_terms ? loss_sum / loss_terms : 0.0;
    j["val_ndcg10"] = ndcg;
    history.push_back(j.dump());

    if (ndcg > best_ndcg) {
      best_ndcg = ndcg;
      best.params = params;
      best.epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (since_best >= tc.patience) break;
    }
  }

  best.history = std::move(history);
  if (out_dir) save_checkpoint(best, *out_dir);
  return best;
}

const char* loss_kind_name(LossKind kind) {
  switch (kind) {
    case LossKind::aap: return "aap";
    case LossKind::mip: return "mip";
    case LossKind::map: return "map";
    case LossKind::sp: return "sp";
    case LossKind::finetune_rank: return "finetune";
    case LossKind::pretrain_all: return "pretrain_all";
  }
  return "?";
}

namespace {

// Toy fixture for the gradient audit: a handful of short sequences with
// random attributes, batches built through the production samplers.
struct AuditFixture {
  PretrainBatch pretrain;
  FinetuneBatch finetune;
};

AuditFixture build_audit_fixture(const ModelConfig& cfg, Rng& rng) {
  AttributeTable table;
  table.attrs.assign(static_cast<std::size_t>(cfg.item_vocab) + 1, {});
  for (int i = 1; i <= cfg.item_vocab; ++i) {
    const int n_attrs = rng.uniform_int(0, 3);
    std::set<int> uniq;
    for (int a = 0; a < n_attrs; ++a)
      uniq.insert(rng.uniform_int(1, cfg.attr_vocab));
    table.attrs[static_cast<std::size_t>(i)].assign(uniq.begin(), uniq.end());
  }
  std::vector<std::vector<int>> seqs(4);
  for (auto& s : seqs) {
    const int len = rng.uniform_int(4, cfg.max_len);
    for (int t = 0; t < len; ++t)
      s.push_back(rng.uniform_int(1, cfg.item_vocab));
  }
  std::vector<const std::vector<int>*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);

  SamplerHypers hypers;
  hypers.mask_ratio = 0.3;
  hypers.n_neg_item = 2;
  hypers.n_neg_attr = 2;
  hypers.n_neg_seg = 2;
  hypers.seg_max = 3;

  AuditFixture fx;
  Rng batch_rng = rng.derive(1);
  fx.pretrain = build_pretrain_batch(ptrs, table, hypers, cfg.max_len,
                                     cfg.item_vocab, cfg.attr_vocab, batch_rng);
  Rng ft_rng = rng.derive(2);
  fx.finetune =
      build_finetune_batch(ptrs, cfg.max_len, cfg.item_vocab, ft_rng);
  return fx;
}

Params<double> random_audit_params(const ModelConfig& cfg, Rng& rng) {
  Params<double> p = make_zero_params<double>(cfg);
  for_each_tensor(p, [&](const std::string& name, MatD& t) {
    const bool gain = name.find("_gain") != std::string::npos;
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        t(r, c) = gain ? 1.0 + 0.1 * rng.normal() : 0.3 * rng.normal();
  });
  return p;
}

}  // namespace

double finite_difference_audit(LossKind kind, const ModelConfig& toy_cfg,
                               std::uint64_t seed) {
  ModelConfig cfg = toy_cfg;
  if (cfg.item_vocab == 0) cfg.item_vocab = 12;
  if (cfg.attr_vocab == 0) cfg.attr_vocab = 8;
  cfg.dropout = 0.0;
  cfg.validate();

  Rng rng(seed);
  AuditFixture fx = build_audit_fixture(cfg, rng);
  Rng param_rng = rng.derive(3);
  Params<double> params = random_audit_params(cfg, param_rng);

  LossWeights w{0, 0, 0, 0};
  switch (kind) {
    case LossKind::aap: w.aap = 1.0; break;
    case LossKind::mip: w.mip = 1.0; break;
    case LossKind::map: w.map = 1.0; break;
    case LossKind::sp: w.sp = 1.0; break;
    case LossKind::pretrain_all: w = LossWeights{}; break;
    case LossKind::finetune_rank: break;
  }

  auto loss_value = [&](const Params<double>& p) -> double {
    if (kind == LossKind::finetune_rank)
      return finetune_loss<double>(fx.finetune, p, cfg, nullptr).total;
    return pretrain_loss<double>(fx.pretrain, p, cfg, w, false, nullptr).total;
  };

  Params<double> analytic = make_zero_params<double>(cfg);
  if (kind == LossKind::finetune_rank)
    finetune_loss<double>(fx.finetune, params, cfg, &analytic);
  else
    pretrain_loss<double>(fx.pretrain, params, cfg, w, false, &analytic);

  constexpr double kStep = 1e-5;
  double max_rel = 0.0;
  std::vector<MatD*> tensors, grads;
  for_each_tensor(params, [&](const std::string&, MatD& t) {
    tensors.push_back(&t);
  });
  for_each_tensor(analytic, [&](const std::string&, MatD& t) {
    grads.push_back(&t);
  });
  for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
    MatD& t = *tensors[ti];
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double saved = t(r, c);
        t(r, c) = saved + kStep;
        const double up = loss_value(params);
        t(r, c) = saved - kStep;
        const double down = loss_value(params);
        t(r, c) = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        const double rel = std::abs((*grads[ti])(r, c) - numeric) /
                           std::max(std::abs(numeric), 1e-8);
        max_rel = std::max(max_rel, rel);
      }
    }
  }
  return max_rel;
}

}  // namespace seqrec
