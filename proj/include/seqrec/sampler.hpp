// Batch construction for the two training stages: Cloze item masking,
// segment selection, and negative sampling for items, attributes and
// segments. Batch building is a pure function of (data, seed), so a fixed
// seed reproduces byte-identical batches.

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "seqrec/corpus.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

struct NoRealPositions : std::runtime_error {
  NoRealPositions() : std::runtime_error("sequence is all padding") {}
};

struct SequenceTooShortForSegment : std::runtime_error {
  SequenceTooShortForSegment()
      : std::runtime_error("segment selection needs >= 4 real items") {}
};

struct VocabExhausted : std::runtime_error {
  VocabExhausted() : std::runtime_error("not enough eligible ids to sample") {}
};

struct NoEligibleDonor : std::runtime_error {
  NoEligibleDonor()
      : std::runtime_error("no pool sequence long enough for segment") {}
};

struct SamplerHypers {
  double mask_ratio = 0.2;
  int n_neg_item = 1;
  int n_neg_attr = 1;
  int n_neg_seg = 1;
  int seg_max = 8;
};

struct MaskPlan {
  std::vector<int> positions;  // ascending padded-position indices
  std::vector<int> targets;    // original item at each masked position
};

struct SegmentPlan {
  int start = 0;   // padded-position index of the first segment item
  int length = 0;  // inclusive span length
  std::vector<int> items;
  std::vector<std::vector<int>> negatives;  // equal-length item lists
};

struct PretrainSeq {
  std::vector<int> input_ids;     // masked view for item/attribute recovery
  std::vector<int> sp_input_ids;  // independent segment-masked view
  std::vector<std::uint8_t> validity;
  std::vector<int> original;  // unmasked padded ids
  MaskPlan mask;
  std::optional<SegmentPlan> segment;
  std::vector<std::vector<int>> mip_negatives;       // per masked position
  std::vector<std::vector<int>> map_pos_attrs;       // per masked position
  std::vector<std::vector<std::vector<int>>> map_neg_attrs;
  std::vector<int> aap_positions;                    // non-masked real positions
  std::vector<std::vector<int>> aap_pos_attrs;       // per aap position
  std::vector<std::vector<std::vector<int>>> aap_neg_attrs;
};

struct PretrainBatch {
  std::vector<PretrainSeq> seqs;
};

struct FinetuneSeq {
  std::vector<int> input_ids;
  std::vector<std::uint8_t> validity;
  std::vector<int> pos_target;  // per position; 0 at padding
  std::vector<int> neg_target;
};

struct FinetuneBatch {
  std::vector<FinetuneSeq> seqs;
};

/// Replaces ceil(mask_ratio * real_length) distinct real positions (at least
/// one) with the mask token and records the original items.
std::pair<std::vector<int>, MaskPlan> mask_items(
    const std::vector<int>& padded, const std::vector<std::uint8_t>& validity,
    double mask_ratio, int mask_token, Rng& rng);

/// Picks a contiguous segment of length uniform in [2, min(real/2, seg_max)]
/// at a uniform valid start. Negatives are filled in by the batch builder.
SegmentPlan select_segment(const std::vector<int>& padded,
                           const std::vector<std::uint8_t>& validity,
                           int seg_max, Rng& rng);

/// Uniform without replacement from [1, item_vocab] minus `exclude`.
std::vector<int> sample_negative_items(const std::vector<int>& exclude,
                                       int count, int item_vocab, Rng& rng);

/// Uniform without replacement from [1, attr_vocab] minus the item's set.
std::vector<int> sample_negative_attributes(const std::vector<int>& item_attrs,
                                            int count, int attr_vocab,
                                            Rng& rng);

/// A contiguous run of `length` items from a uniformly chosen pool sequence
/// (among those long enough) at a uniform start.
std::vector<int> sample_negative_segment(
    const std::vector<const std::vector<int>*>& pool, int length, Rng& rng);

PretrainBatch build_pretrain_batch(
    const std::vector<const std::vector<int>*>& seqs,
    const AttributeTable& attr_table, const SamplerHypers& hypers, int max_len,
    int item_vocab, int attr_vocab, Rng& rng);

FinetuneBatch build_finetune_batch(
    const std::vector<const std::vector<int>*>& train_seqs, int max_len,
    int item_vocab, Rng& rng);

}  // namespace seqrec
