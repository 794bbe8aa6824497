// Ranking evaluation: sampled-negative candidate construction, HR@k /
// NDCG@k / MRR with pessimistic tie handling, aggregation over test users,
// and report emission (JSON, plain-text table, SVG curves).

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "seqrec/corpus.hpp"
#include "seqrec/model.hpp"
#include "seqrec/rng.hpp"
#include "seqrec/sampler.hpp"

namespace seqrec {

enum class EvalTarget { valid, test };
enum class CandidateScope { sampled, full };

struct EvalProtocol {
  int n_negatives = 99;
  std::vector<int> k_values = {1, 5, 10};
  std::uint64_t seed = 2020;
  EvalTarget target = EvalTarget::test;
  CandidateScope scope = CandidateScope::sampled;
};

struct EvalResult {
  std::map<int, double> hr;
  std::map<int, double> ndcg;
  double mrr = 0.0;
  long n_users = 0;
  EvalProtocol protocol;
};

/// Ground truth plus n_negatives uniform items outside the user's full
/// interaction history, in randomized order. Candidates are fixed per
/// (user-derived rng, seed) so runs are comparable.
std::vector<int> sample_candidates(const std::vector<int>& user_history,
                                   int ground_truth, const EvalProtocol& proto,
                                   int item_vocab, Rng& rng);

/// 1-based rank under pessimistic ties: every other candidate scoring
/// >= the ground truth counts against it.
int rank_ground_truth(const std::vector<float>& scores, int gt_position);
int rank_ground_truth(const std::vector<double>& scores, int gt_position);

double hr_at_k(int rank, int k);
double ndcg_at_k(int rank, int k);
double mrr_of_rank(int rank);

EvalResult evaluate(const Params<float>& params, const ModelConfig& cfg,
                    const DatasetSplit& split, const EvalProtocol& proto);

std::string eval_result_to_json(const std::string& label, const EvalResult& r);

/// Writes report.json, report.txt, and (when at least two labels parse as
/// numbers) one SVG curve per metric.
void emit_report(const std::vector<std::pair<std::string, EvalResult>>& results,
                 const std::filesystem::path& out_dir);

}  // namespace seqrec
