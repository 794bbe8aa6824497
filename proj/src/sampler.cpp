#include "seqrec/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace seqrec {

namespace {

int real_length(const std::vector<std::uint8_t>& validity) {
  int n = 0;
  for (auto v : validity) n += v ? 1 : 0;
  return n;
}

std::vector<int> real_positions(const std::vector<std::uint8_t>& validity) {
  std::vector<int> out;
  for (std::size_t i = 0; i < validity.size(); ++i)
    if (validity[i]) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> sample_from_complement(
    const std::unordered_set<int>& exclude, int count, int vocab, Rng& rng) {
  if (count < 0) throw std::invalid_argument("negative sample count");
  int excluded_in_range = 0;
  for (int e : exclude)
    if (e >= 1 && e <= vocab) ++excluded_in_range;
  if (vocab - excluded_in_range < count) throw VocabExhausted();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(count));
  std::unordered_set<int> drawn;
  while (static_cast<int>(out.size()) < count) {
    const int x = rng.uniform_int(1, vocab);
    if (exclude.count(x) || drawn.count(x)) continue;
    drawn.insert(x);
    out.push_back(x);
  }
  return out;
}

}  // namespace

std::pair<std::vector<int>, MaskPlan> mask_items(
    const std::vector<int>& padded, const std::vector<std::uint8_t>& validity,
    double mask_ratio, int mask_token, Rng& rng) {
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0)
    throw std::invalid_argument("mask_ratio must lie in (0,1)");
  std::vector<int> positions = real_positions(validity);
  if (positions.empty()) throw NoRealPositions();
  const int real = static_cast<int>(positions.size());
  int count = static_cast<int>(std::ceil(mask_ratio * real));
  count = std::max(1, std::min(count, real));

  // Partial Fisher-Yates: the first `count` entries are a uniform sample
  // without replacement.
  for (int i = 0; i < count; ++i) {
    const int j = rng.uniform_int(i, real - 1);
    std::swap(positions[i], positions[j]);
  }
  positions.resize(static_cast<std::size_t>(count));
  std::sort(positions.begin(), positions.end());

  MaskPlan plan;
  plan.positions = positions;
  std::vector<int> masked = padded;
  for (int pos : positions) {
    plan.targets.push_back(padded[static_cast<std::size_t>(pos)]);
    masked[static_cast<std::size_t>(pos)] = mask_token;
  }
  return {std::move(masked), std::move(plan)};
}

SegmentPlan select_segment(const std::vector<int>& padded,
                           const std::vector<std::uint8_t>& validity,
                           int seg_max, Rng& rng) {
  const int real = real_length(validity);
  if (real < 4) throw SequenceTooShortForSegment();
  const int n = static_cast<int>(padded.size());
  const int first_real = n - real;
  const int longest = std::min(real / 2, seg_max);
  SegmentPlan plan;
  plan.length = rng.uniform_int(2, longest);
  plan.start = rng.uniform_int(first_real, n - plan.length);
  plan.items.assign(padded.begin() + plan.start,
                    padded.begin() + plan.start + plan.length);
  return plan;
}

std::vector<int> sample_negative_items(const std::vector<int>& exclude,
                                       int count, int item_vocab, Rng& rng) {
  std::unordered_set<int> ex(exclude.begin(), exclude.end());
  return sample_from_complement(ex, count, item_vocab, rng);
}

std::vector<int> sample_negative_attributes(const std::vector<int>& item_attrs,
                                            int count, int attr_vocab,
                                            Rng& rng) {
  std::unordered_set<int> ex(item_attrs.begin(), item_attrs.end());
  return sample_from_complement(ex, count, attr_vocab, rng);
}

std::vector<int> sample_negative_segment(
    const std::vector<const std::vector<int>*>& pool, int length, Rng& rng) {
  std::vector<const std::vector<int>*> eligible;
  for (const auto* seq : pool)
    if (static_cast<int>(seq->size()) >= length) eligible.push_back(seq);
  if (eligible.empty()) throw NoEligibleDonor();
  const auto* donor = eligible[rng.uniform_index(eligible.size())];
  const int start =
      rng.uniform_int(0, static_cast<int>(donor->size()) - length);
  return {donor->begin() + start, donor->begin() + start + length};
}

PretrainBatch build_pretrain_batch(
    const std::vector<const std::vector<int>*>& seqs,
    const AttributeTable& attr_table, const SamplerHypers& hypers, int max_len,
    int item_vocab, int attr_vocab, Rng& rng) {
  const int mask_token = item_vocab + 1;
  PretrainBatch batch;
  batch.seqs.resize(seqs.size());

  // Visible item windows (post-truncation) double as the donor pool for
  // negative segments.
  std::vector<std::vector<int>> windows(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    auto [padded, validity] = truncate_pad(*seqs[i], max_len);
    const int real = real_length(validity);
    windows[i].assign(padded.end() - real, padded.end());
    batch.seqs[i].original = std::move(padded);
    batch.seqs[i].validity = std::move(validity);
  }

  for (std::size_t i = 0; i < seqs.size(); ++i) {
    PretrainSeq& seq = batch.seqs[i];
    auto [masked, plan] = mask_items(seq.original, seq.validity,
                                     hypers.mask_ratio, mask_token, rng);
    seq.input_ids = std::move(masked);
    seq.mask = std::move(plan);

    for (int target : seq.mask.targets) {
      seq.mip_negatives.push_back(
          sample_negative_items({target}, hypers.n_neg_item, item_vocab, rng));
      const auto& attrs = attr_table.of(target);
      seq.map_pos_attrs.push_back(attrs);
      std::vector<std::vector<int>> negs;
      for (std::size_t a = 0; a < attrs.size(); ++a)
        negs.push_back(sample_negative_attributes(attrs, hypers.n_neg_attr,
                                                  attr_vocab, rng));
      seq.map_neg_attrs.push_back(std::move(negs));
    }

    // Attribute prediction slots at every real position left unmasked.
    std::unordered_set<int> masked_pos(seq.mask.positions.begin(),
                                       seq.mask.positions.end());
    for (int pos : real_positions(seq.validity)) {
      if (masked_pos.count(pos)) continue;
      const int item = seq.original[static_cast<std::size_t>(pos)];
      const auto& attrs = attr_table.of(item);
      if (attrs.empty()) continue;
      seq.aap_positions.push_back(pos);
      seq.aap_pos_attrs.push_back(attrs);
      std::vector<std::vector<int>> negs;
      for (std::size_t a = 0; a < attrs.size(); ++a)
        negs.push_back(sample_negative_attributes(attrs, hypers.n_neg_attr,
                                                  attr_vocab, rng));
      seq.aap_neg_attrs.push_back(std::move(negs));
    }

    seq.sp_input_ids = seq.original;
    const int real = real_length(seq.validity);
    if (real >= 4) {
      SegmentPlan seg =
          select_segment(seq.original, seq.validity, hypers.seg_max, rng);
      for (int p = seg.start; p < seg.start + seg.length; ++p)
        seq.sp_input_ids[static_cast<std::size_t>(p)] = mask_token;

      std::vector<const std::vector<int>*> pool;
      for (std::size_t j = 0; j < windows.size(); ++j) {
        if (j == i) continue;
        if (static_cast<int>(windows[j].size()) >= seg.length)
          pool.push_back(&windows[j]);
      }
      if (pool.empty()) pool.push_back(&windows[i]);  // single-sequence batch

      bool filled = true;
      for (int neg = 0; neg < hypers.n_neg_seg && filled; ++neg) {
        std::vector<int> candidate;
        bool distinct = false;
        for (int attempt = 0; attempt < 16 && !distinct; ++attempt) {
          candidate = sample_negative_segment(pool, seg.length, rng);
          distinct = candidate != seg.items;
        }
        if (!distinct) {
          filled = false;
          break;
        }
        seg.negatives.push_back(std::move(candidate));
      }
      if (filled) {
        seq.segment = std::move(seg);
      } else {
        seq.sp_input_ids = seq.original;  // no usable negatives; skip SP here
      }
    }
  }
  return batch;
}

FinetuneBatch build_finetune_batch(
    const std::vector<const std::vector<int>*>& train_seqs, int max_len,
    int item_vocab, Rng& rng) {
  FinetuneBatch batch;
  for (const auto* seq_ptr : train_seqs) {
    const auto& items = *seq_ptr;
    if (items.size() < 2) continue;  // no supervised pair to form
    const std::size_t pairs =
        std::min(items.size() - 1, static_cast<std::size_t>(max_len));
    FinetuneSeq seq;
    seq.input_ids.assign(static_cast<std::size_t>(max_len), 0);
    seq.validity.assign(static_cast<std::size_t>(max_len), 0);
    seq.pos_target.assign(static_cast<std::size_t>(max_len), 0);
    seq.neg_target.assign(static_cast<std::size_t>(max_len), 0);
    const std::size_t pad = static_cast<std::size_t>(max_len) - pairs;
    const std::size_t base = items.size() - 1 - pairs;
    for (std::size_t i = 0; i < pairs; ++i) {
      seq.input_ids[pad + i] = items[base + i];
      seq.validity[pad + i] = 1;
      const int positive = items[base + i + 1];
      seq.pos_target[pad + i] = positive;
      seq.neg_target[pad + i] =
          sample_negative_items({positive}, 1, item_vocab, rng)[0];
    }
    batch.seqs.push_back(std::move(seq));
  }
  return batch;
}

}  // namespace seqrec
