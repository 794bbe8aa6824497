// Raw data ingestion and preprocessing: interaction/attribute file loading,
// iterated k-core filtering, per-user chronological sequences, leave-one-out
// splits, and the processed dataset directory format.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace seqrec {

struct MalformedLine : std::runtime_error {
  MalformedLine(const std::string& path, std::size_t line_no)
      : std::runtime_error("malformed line " + std::to_string(line_no) +
                           " in " + path),
        line_no(line_no) {}
  std::size_t line_no;
};

struct EmptyFile : std::runtime_error {
  explicit EmptyFile(const std::string& path)
      : std::runtime_error("no records in " + path) {}
};

struct EmptyAfterFilter : std::runtime_error {
  EmptyAfterFilter() : std::runtime_error("k-core filter removed everything") {}
};

struct UnknownItem : std::runtime_error {
  explicit UnknownItem(const std::string& item)
      : std::runtime_error("item not in vocabulary: " + item) {}
};

struct SequenceTooShort : std::runtime_error {
  explicit SequenceTooShort(const std::string& user)
      : std::runtime_error("sequence too short for user " + user), user(user) {}
  std::string user;
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& m) : std::runtime_error(m) {}
};

struct RawRecord {
  std::string user;
  std::string item;
  std::int64_t ts = 0;
};

struct RawInteractions {
  std::vector<RawRecord> records;
};

enum class InteractionFormat { tsv, json_lines };

/// Bijective raw-id <-> index maps. Index 0 is the shared padding sentinel
/// and is never assigned; real ids occupy [1, count].
struct Vocab {
  std::vector<std::string> items;  // items[i-1] is the raw id of index i
  std::vector<std::string> attrs;
  std::unordered_map<std::string, int> item_index;
  std::unordered_map<std::string, int> attr_index;

  int item_count() const { return static_cast<int>(items.size()); }
  int attr_count() const { return static_cast<int>(attrs.size()); }
  int item_of(const std::string& raw) const;  // throws UnknownItem
  int add_attr(const std::string& raw);
};

struct InteractionSequence {
  std::string user;
  std::vector<int> items;  // timestamp-ascending item indices
};

/// item index -> sorted unique attribute indices; entry 0 unused.
struct AttributeTable {
  std::vector<std::vector<int>> attrs;

  const std::vector<int>& of(int item) const { return attrs.at(item); }
};

struct DatasetSplit {
  std::vector<InteractionSequence> full;
  std::vector<std::vector<int>> train;  // full minus the last two items
  std::vector<int> valid_target;        // second-to-last item
  std::vector<int> test_target;         // last item
};

RawInteractions load_interactions(const std::filesystem::path& path,
                                  InteractionFormat format);

/// Iterates to a fixpoint: every surviving user and item keeps >= k records.
RawInteractions k_core_filter(const RawInteractions& raw, int k);

/// Item vocabulary in first-appearance order over the (filtered) records.
Vocab build_item_vocab(const RawInteractions& raw);

/// One sequence per user, timestamp-ascending, ties kept in input order.
/// Users appear in first-appearance order.
std::vector<InteractionSequence> build_sequences(const RawInteractions& raw,
                                                 const Vocab& vocab);

/// Reads JSON-lines {"item":..., "attrs":[...]}. Items outside the vocab are
/// dropped; attribute ids are registered into the vocab in first-appearance
/// order; items absent from the file get empty lists.
AttributeTable load_attributes(const std::filesystem::path& path, Vocab& vocab);

DatasetSplit leave_one_out_split(std::vector<InteractionSequence> seqs);

/// Keeps the most recent max_len items, left-padding with index 0. The
/// second member marks real positions.
std::pair<std::vector<int>, std::vector<std::uint8_t>> truncate_pad(
    const std::vector<int>& items, int max_len);

struct Dataset {
  Vocab vocab;
  AttributeTable attrs;
  DatasetSplit split;
};

struct CorpusStats {
  long users = 0;
  long items = 0;
  long actions = 0;
  double avg_actions_per_user = 0;
  double avg_actions_per_item = 0;
  double sparsity = 0;
  long attributes = 0;
  double avg_attrs_per_item = 0;
};

CorpusStats compute_stats(const Dataset& ds);
std::string format_stats(const CorpusStats& s);

/// Writes vocab.json, sequences.jsonl, attributes.jsonl, split.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Full pipeline: load, k-core filter, vocab, sequences, attributes, split.
Dataset preprocess(const std::filesystem::path& interactions,
                   InteractionFormat format,
                   const std::filesystem::path& attributes, int k_core);

}  // namespace seqrec
