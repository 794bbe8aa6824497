// Two-stage training: pretraining with the bidirectional encoder on the four
// self-supervised objectives, parameter transfer, and fine-tuning with the
// causal encoder on the pairwise rank loss. Includes the Adam optimizer and
// the finite-difference gradient audit.

#pragma once

#include <filesystem>
#include <optional>

#include "seqrec/checkpoint.hpp"
#include "seqrec/corpus.hpp"
#include "seqrec/eval.hpp"
#include "seqrec/objectives.hpp"
#include "seqrec/sampler.hpp"

namespace seqrec {

struct NonFiniteGradient : std::runtime_error {
  NonFiniteGradient() : std::runtime_error("non-finite gradient") {}
};

struct DivergenceDetected : std::runtime_error {
  explicit DivergenceDetected(int epoch)
      : std::runtime_error("non-finite loss at epoch " +
                           std::to_string(epoch)) {}
};

struct ConfigMismatch : std::runtime_error {
  explicit ConfigMismatch(const std::string& m)
      : std::runtime_error("config mismatch: " + m) {}
};

struct TrainConfig {
  int pretrain_epochs = 100;
  int pretrain_batch = 200;
  int finetune_epochs = 200;
  int finetune_batch = 256;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 0.0;  // 0 disables clipping
  std::uint64_t seed = 42;
  int patience = 10;            // early stop on validation NDCG@10
  double train_fraction = 1.0;  // sparsity-experiment subsampling
  int checkpoint_interval = 0;  // write epoch snapshots every N epochs

  void validate() const;
};

struct AdamState {
  Params<float> m, v;
  long step = 0;
};

AdamState make_adam_state(const ModelConfig& cfg);

/// Standard Adam update with bias correction; throws NonFiniteGradient on
/// NaN/inf gradients. Optional global-norm clipping runs first.
void adam_step(Params<float>& params, Params<float>& grads, AdamState& state,
               const TrainConfig& tc);

Checkpoint pretrain(const Dataset& data, const ModelConfig& model,
                    const TrainConfig& tc, const SamplerHypers& hypers,
                    const LossWeights& weights, bool raw_bilinear,
                    const std::filesystem::path* snapshot_dir = nullptr);

/// The initialization pretrain() would produce for this seed; the
/// from-scratch fine-tuning baseline starts here so that "zero pretraining
/// epochs" and "no pretraining" coincide.
Params<float> fresh_init(const ModelConfig& model, std::uint64_t seed);

/// Copies the pretrained tensors for fine-tuning initialization after a
/// shape-compatibility check. Critic matrices ride along but receive no
/// gradient in the fine-tuning stage.
Params<float> transfer_parameters(const Checkpoint& pretrained,
                                  const ModelConfig& target);

Checkpoint finetune(Params<float> init, const Dataset& data,
                    const ModelConfig& model, const TrainConfig& tc,
                    EvalProtocol valid_protocol,
                    const std::filesystem::path* out_dir = nullptr);

enum class LossKind { aap, mip, map, sp, finetune_rank, pretrain_all };

/// Max over parameters of |analytic - numeric| / max(|numeric|, 1e-8), with
/// fp64 central differences (step 1e-5) on a fixed seeded toy batch.
double finite_difference_audit(LossKind kind, const ModelConfig& toy_cfg,
                               std::uint64_t seed);

const char* loss_kind_name(LossKind kind);

}  // namespace seqrec
