// Checkpoint directory format: manifest.json describing every tensor
// (name, shape, dtype, byte offset, content hash), a tensors.bin payload of
// little-endian 32-bit floats in manifest order, and history.jsonl with
// per-epoch losses/metrics. Save/load round-trips bit-exactly.

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrec/model.hpp"

namespace seqrec {

struct CorruptCheckpoint : std::runtime_error {
  explicit CorruptCheckpoint(const std::string& m)
      : std::runtime_error("corrupt checkpoint: " + m) {}
};

enum class Stage { pretrained, finetuned };

struct Checkpoint {
  Params<float> params;
  ModelConfig config;
  Stage stage = Stage::pretrained;
  int epoch = 0;
  std::string rng_state;
  std::vector<std::string> history;  // jsonl lines, one per epoch
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::uint64_t fnv1a64(const void* data, std::size_t bytes);

}  // namespace seqrec
