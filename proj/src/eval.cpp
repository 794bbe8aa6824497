#include "seqrec/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "seqrec/encoder.hpp"

namespace seqrec {

using nlohmann::json;

std::vector<int> sample_candidates(const std::vector<int>& user_history,
                                   int ground_truth, const EvalProtocol& proto,
                                   int item_vocab, Rng& rng) {
  std::unordered_set<int> excluded(user_history.begin(), user_history.end());
  excluded.insert(ground_truth);
  std::vector<int> candidates;
  if (proto.scope == CandidateScope::full) {
    candidates.push_back(ground_truth);
    for (int i = 1; i <= item_vocab; ++i)
      if (!excluded.count(i)) candidates.push_back(i);
    return candidates;
  }
  int eligible = 0;
  for (int i = 1; i <= item_vocab; ++i)
    if (!excluded.count(i)) ++eligible;
  if (eligible < proto.n_negatives) throw VocabExhausted();
  candidates.push_back(ground_truth);
  std::unordered_set<int> drawn;
  while (static_cast<int>(candidates.size()) < proto.n_negatives + 1) {
    const int x = rng.uniform_int(1, item_vocab);
    if (excluded.count(x) || drawn.count(x)) continue;
    drawn.insert(x);
    candidates.push_back(x);
  }
  rng.shuffle(candidates);
  return candidates;
}

namespace {

template <class S>
int rank_impl(const std::vector<S>& scores, int gt_position) {
  const S gt = scores.at(static_cast<std::size_t>(gt_position));
  int rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (static_cast<int>(i) == gt_position) continue;
    if (scores[i] >= gt) ++rank;
  }
  return rank;
}

}  // namespace

int rank_ground_truth(const std::vector<float>& scores, int gt_position) {
  return rank_impl(scores, gt_position);
}
int rank_ground_truth(const std::vector<double>& scores, int gt_position) {
  return rank_impl(scores, gt_position);
}

double hr_at_k(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

double ndcg_at_k(int rank, int k) {
  if (rank > k) return 0.0;
  return 1.0 / std::log2(static_cast<double>(rank) + 1.0);
}

double mrr_of_rank(int rank) { return 1.0 / static_cast<double>(rank); }

EvalResult evaluate(const Params<float>& params, const ModelConfig& cfg,
                    const DatasetSplit& split, const EvalProtocol& proto) {
  EvalResult result;
  result.protocol = proto;
  for (int k : proto.k_values) {
    result.hr[k] = 0.0;
    result.ndcg[k] = 0.0;
  }
  Rng root(proto.seed);
  EncodeTape<float> tape;
  for (std::size_t u = 0; u < split.full.size(); ++u) {
    const auto& full = split.full[u].items;
    std::vector<int> context;
    int ground_truth;
    if (proto.target == EvalTarget::test) {
      context.assign(full.begin(), full.end() - 1);
      ground_truth = full.back();
    } else {
      context.assign(full.begin(), full.end() - 2);
      ground_truth = full[full.size() - 2];
    }
    Rng user_rng = root.derive(static_cast<std::uint64_t>(u));
    const std::vector<int> candidates = sample_candidates(
        full, ground_truth, proto, cfg.item_vocab, user_rng);

    auto [ids, validity] = truncate_pad(context, cfg.max_len);
    const MatF& f = encode<float>(ids, validity, Direction::causal, params,
                                  cfg, tape);
    const std::vector<float> scores = score_next_item<float>(
        f.row(f.rows() - 1), candidates, params);
    int gt_position = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (candidates[i] == ground_truth) {
        gt_position = static_cast<int>(i);
        break;
      }
    const int rank = rank_ground_truth(scores, gt_position);
    for (int k : proto.k_values) {
      result.hr[k] += hr_at_k(rank, k);
      result.ndcg[k] += ndcg_at_k(rank, k);
    }
    result.mrr += mrr_of_rank(rank);
    ++result.n_users;
  }
  if (result.n_users > 0) {
    for (int k : proto.k_values) {
      result.hr[k] /= static_cast<double>(result.n_users);
      result.ndcg[k] /= static_cast<double>(result.n_users);
    }
    result.mrr /= static_cast<double>(result.n_users);
  }
  return result;
}

namespace {

json result_json(const std::string& label, const EvalResult& r) {
  json j;
  j["label"] = label;
  j["protocol"]["n_negatives"] = r.protocol.n_negatives;
  j["protocol"]["k_values"] = r.protocol.k_values;
  j["protocol"]["seed"] = r.protocol.seed;
  j["protocol"]["scope"] =
      r.protocol.scope == CandidateScope::sampled ? "sampled" : "full";
  json hr, ndcg;
  for (const auto& [k, v] : r.hr) hr[std::to_string(k)] = v;
  for (const auto& [k, v] : r.ndcg) ndcg[std::to_string(k)] = v;
  j["metrics"]["hr"] = std::move(hr);
  j["metrics"]["ndcg"] = std::move(ndcg);
  j["metrics"]["mrr"] = r.mrr;
  j["n_users"] = r.n_users;
  return j;
}

void write_svg_curve(const std::filesystem::path& path,
                     const std::string& title,
                     const std::vector<std::pair<double, double>>& points) {
  const int w = 480, h = 320, margin = 48;
  double xmin = points.front().first, xmax = points.front().first;
  double ymin = 0.0, ymax = 0.0;
  for (const auto& [x, y] : points) {
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymax = std::max(ymax, y);
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) {
    return margin + (x - xmin) / (xmax - xmin) * (w - 2 * margin);
  };
  auto py = [&](double y) {
    return h - margin - (y - ymin) / (ymax - ymin) * (h - 2 * margin);
  };
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w
      << "' height='" << h << "'>\n"
      << "<rect width='100%' height='100%' fill='white'/>\n"
      << "<text x='" << w / 2 << "' y='20' text-anchor='middle'>" << title
      << "</text>\n"
      << "<line x1='" << margin << "' y1='" << h - margin << "' x2='"
      << w - margin << "' y2='" << h - margin << "' stroke='black'/>\n"
      << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin
      << "' y2='" << h - margin << "' stroke='black'/>\n<polyline fill='none' "
      << "stroke='steelblue' stroke-width='2' points='";
  for (const auto& [x, y] : points) out << px(x) << "," << py(y) << " ";
  out << "'/>\n";
  for (const auto& [x, y] : points)
    out << "<circle cx='" << px(x) << "' cy='" << py(y)
        << "' r='3' fill='steelblue'/>\n";
  out << "</svg>\n";
}

}  // namespace

std::string eval_result_to_json(const std::string& label,
                                const EvalResult& r) {
  return result_json(label, r).dump(2);
}

void emit_report(
    const std::vector<std::pair<std::string, EvalResult>>& results,
    const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  json all = json::array();
  for (const auto& [label, r] : results) all.push_back(result_json(label, r));
  {
    std::ofstream out(out_dir / "report.json");
    if (!out) throw IoError("cannot write report.json");
    out << all.dump(2) << "\n";
  }
  {
    std::ofstream out(out_dir / "report.txt");
    if (!out) throw IoError("cannot write report.txt");
    out << "label";
    std::vector<int> ks;
    if (!results.empty())
      ks = results.front().second.protocol.k_values;
    for (int k : ks) out << "\tHR@" << k;
    for (int k : ks) out << "\tNDCG@" << k;
    out << "\tMRR\tusers\n";
    for (const auto& [label, r] : results) {
      out << label;
      char buf[32];
      for (int k : ks) {
        std::snprintf(buf, sizeof(buf), "%.4f", r.hr.count(k) ? r.hr.at(k) : 0.0);
        out << '\t' << buf;
      }
      for (int k : ks) {
        std::snprintf(buf, sizeof(buf), "%.4f",
                      r.ndcg.count(k) ? r.ndcg.at(k) : 0.0);
        out << '\t' << buf;
      }
      std::snprintf(buf, sizeof(buf), "%.4f", r.mrr);
      out << '\t' << buf << '\t' << r.n_users << "\n";
    }
  }
  // Curves when the labels form a numeric axis (epoch or fraction sweeps).
  std::vector<std::pair<double, const EvalResult*>> axis;
  for (const auto& [label, r] : results) {
    try {
      std::size_t used = 0;
      const double x = std::stod(label, &used);
      if (used == label.size()) axis.emplace_back(x, &r);
    } catch (const std::exception&) {
      axis.clear();
      break;
    }
  }
  if (axis.size() >= 2) {
    std::sort(axis.begin(), axis.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    auto curve = [&](const std::string& name, auto&& get) {
      std::vector<std::pair<double, double>> pts;
      for (const auto& [x, r] : axis) pts.emplace_back(x, get(*r));
      write_svg_curve(out_dir / (name + ".svg"), name, pts);
    };
    const auto& ks = results.front().second.protocol.k_values;
    if (!ks.empty()) {
      const int k = ks.back();
      curve("hr" + std::to_string(k),
            [&](const EvalResult& r) { return r.hr.count(k) ? r.hr.at(k) : 0.0; });
      curve("ndcg" + std::to_string(k), [&](const EvalResult& r) {
        return r.ndcg.count(k) ? r.ndcg.at(k) : 0.0;
      });
    }
    curve("mrr", [](const EvalResult& r) { return r.mrr; });
  }
}

}  // namespace seqrec
