// Synthetic corpus generator with planted structure: items partitioned into
// latent clusters, a sharp first-order Markov chain over clusters driving
// the sequences, and per-cluster attribute blocks corrupted at a configured
// noise rate. Gives the experiment suite a dataset whose learnable signal
// is known in closed form.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seqrec/corpus.hpp"

namespace seqrec {

struct SynthSpec {
  int n_users = 2000;
  int n_items = 500;
  int n_attrs = 50;
  int attrs_per_item = 4;  // size of each cluster's attribute block
  int clusters = 10;
  int markov_order = 1;
  double transition_concentration = 4.0;  // sharpness of the cluster chain
  double attr_noise = 0.1;
  int min_len = 6;
  int max_len = 14;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SynthData {
  RawInteractions interactions;
  // Raw attribute rows in file order: (raw item id, raw attribute ids).
  std::vector<std::pair<std::string, std::vector<std::string>>> attributes;
  // Planted structure, exposed for oracle computations.
  std::vector<int> item_cluster;                       // size n_items
  std::vector<std::vector<double>> cluster_transition; // clusters x clusters
};

SynthData generate(const SynthSpec& spec);

/// Writes interactions.tsv and attributes.jsonl in the corpus input formats.
void write_synth_files(const SynthData& data, const std::filesystem::path& dir);

}  // namespace seqrec
