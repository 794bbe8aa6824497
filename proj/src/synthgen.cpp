#include "seqrec/synthgen.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "seqrec/model.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

void SynthSpec::validate() const {
  if (n_users < 2 || n_items < 2 || n_attrs < 2 || clusters < 2)
    throw ConfigError("synth sizes must be >= 2");
  if (min_len < 5 || max_len < min_len)
    throw ConfigError("sequence lengths must satisfy 5 <= min <= max");
  if (attr_noise < 0.0 || attr_noise > 1.0)
    throw ConfigError("attr_noise must lie in [0,1]");
  if (transition_concentration <= 0.0)
    throw ConfigError("transition_concentration must be positive");
  if (markov_order != 1)
    throw ConfigError("only first-order chains are supported");
  if (clusters > n_items) throw ConfigError("more clusters than items");
  if (attrs_per_item * clusters > n_attrs)
    throw ConfigError("attribute blocks exceed the attribute vocabulary");
}

namespace {

std::string item_id(int i) { return "i" + std::to_string(i); }
std::string user_id(int u) { return "u" + std::to_string(u); }
std::string attr_id(int a) { return "a" + std::to_string(a); }

int sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double x = rng.uniform_real();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    x -= probs[i];
    if (x < 0) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  SynthData data;

  // Contiguous item blocks per cluster.
  data.item_cluster.resize(spec.n_items);
  std::vector<std::vector<int>> cluster_items(spec.clusters);
  for (int i = 0; i < spec.n_items; ++i) {
    const int c = i * spec.clusters / spec.n_items;
    data.item_cluster[i] = c;
    cluster_items[c].push_back(i);
  }

  // Sticky drift chain: dwelling in the current cluster carries weight
  // exp(kappa), moving to the cyclic successor exp(kappa/2), anything else 1.
  // Dwell runs make the surrounding context informative about any one
  // position, which is what the masked-recovery objectives feed on.
  const double kappa = spec.transition_concentration;
  data.cluster_transition.assign(spec.clusters,
                                 std::vector<double>(spec.clusters, 0.0));
  for (int c = 0; c < spec.clusters; ++c) {
    double z = 0.0;
    for (int c2 = 0; c2 < spec.clusters; ++c2) {
      double w = 1.0;
      if (c2 == c)
        w = std::exp(kappa);
      else if (c2 == (c + 1) % spec.clusters)
        w = std::exp(kappa / 2.0);
      data.cluster_transition[c][c2] = w;
      z += w;
    }
    for (int c2 = 0; c2 < spec.clusters; ++c2)
      data.cluster_transition[c][c2] /= z;
  }

  // Pass 1: per-user cluster paths. Slots are collected per cluster so the
  // item fill can impose a long-tail popularity law globally.
  Rng root(spec.seed);
  struct Slot {
    int user;
    int t;
  };
  std::vector<std::vector<Slot>> cluster_slots(spec.clusters);
  std::vector<std::vector<int>> user_items(spec.n_users);
  for (int u = 0; u < spec.n_users; ++u) {
    Rng rng = root.derive(static_cast<std::uint64_t>(u));
    const int len = rng.uniform_int(spec.min_len, spec.max_len);
    user_items[u].assign(static_cast<std::size_t>(len), -1);
    int cluster = rng.uniform_int(0, spec.clusters - 1);
    for (int t = 0; t < len; ++t) {
      if (t > 0)
        cluster = sample_categorical(data.cluster_transition[cluster], rng);
      cluster_slots[cluster].push_back({u, t});
    }
  }

  // Pass 2: fill each cluster's slots with its items under a Zipf popularity
  // law, floored so every item keeps at least kMinItemCount interactions and
  // 5-core preprocessing drops nothing.
  constexpr double kPopularitySkew = 1.1;
  constexpr int kMinItemCount = 6;
  Rng fill_rng = root.derive(0x46494C4CULL);
  for (int c = 0; c < spec.clusters; ++c) {
    const auto& pool = cluster_items[c];
    auto& slots = cluster_slots[c];
    const int n_slots = static_cast<int>(slots.size());
    const int n_pool = static_cast<int>(pool.size());

    std::vector<double> weight(n_pool);
    double z = 0.0;
    for (int r = 0; r < n_pool; ++r) {
      weight[r] = 1.0 / std::pow(static_cast<double>(r + 1), kPopularitySkew);
      z += weight[r];
    }
    std::vector<int> count(n_pool, 0);
    int assigned = 0;
    for (int r = 0; r < n_pool; ++r) {
      count[r] = static_cast<int>(weight[r] / z * n_slots);
      assigned += count[r];
    }
    for (int r = 0; assigned < n_slots; r = (r + 1) % n_pool) {
      ++count[r];
      ++assigned;
    }
    // Raise every item to the floor, paying from the most popular ones.
    for (int r = 0; r < n_pool; ++r) {
      while (count[r] < kMinItemCount) {
        int donor = 0;
        for (int d = 1; d < n_pool; ++d)
          if (count[d] > count[donor]) donor = d;
        if (count[donor] <= kMinItemCount) break;  // nothing left to give
        --count[donor];
        ++count[r];
      }
    }
    std::vector<int> fill;
    fill.reserve(static_cast<std::size_t>(n_slots));
    for (int r = 0; r < n_pool; ++r)
      fill.insert(fill.end(), static_cast<std::size_t>(count[r]), pool[r]);
    fill_rng.shuffle(fill);
    for (int s = 0; s < n_slots; ++s)
      user_items[slots[s].user][static_cast<std::size_t>(slots[s].t)] = fill[s];
  }

  for (int u = 0; u < spec.n_users; ++u)
    for (std::size_t t = 0; t < user_items[u].size(); ++t)
      data.interactions.records.push_back(
          {user_id(u), item_id(user_items[u][t]),
           static_cast<std::int64_t>(t)});

  // Attribute blocks: cluster c owns attrs [c*k, (c+1)*k); noise replaces a
  // slot with a uniform attribute.
  Rng attr_rng = root.derive(0x41545452ULL);
  for (int i = 0; i < spec.n_items; ++i) {
    const int c = data.item_cluster[i];
    std::set<int> attrs;
    for (int k = 0; k < spec.attrs_per_item; ++k) {
      int a = c * spec.attrs_per_item + k;
      if (spec.attr_noise > 0 && attr_rng.bernoulli(spec.attr_noise))
        a = attr_rng.uniform_int(0, spec.n_attrs - 1);
      attrs.insert(a);
    }
    std::vector<std::string> raw;
    for (int a : attrs) raw.push_back(attr_id(a));
    data.attributes.emplace_back(item_id(i), std::move(raw));
  }
  return data;
}

void write_synth_files(const SynthData& data,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "interactions.tsv");
    if (!out) throw IoError("cannot write interactions.tsv");
    for (const auto& r : data.interactions.records)
      out << r.user << '\t' << r.item << '\t' << r.ts << "\n";
  }
  {
    std::ofstream out(dir / "attributes.jsonl");
    if (!out) throw IoError("cannot write attributes.jsonl");
    for (const auto& [item, attrs] : data.attributes) {
      nlohmann::json j;
      j["item"] = item;
      j["attrs"] = attrs;
      out << j.dump() << "\n";
    }
  }
}

}  // namespace seqrec
