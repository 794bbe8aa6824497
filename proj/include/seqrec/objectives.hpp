// Pretraining objectives and the fine-tuning rank loss.
//
// All four pretraining losses share one sampled-InfoNCE kernel: softmax
// cross-entropy of a positive candidate against sampled negatives, where
// candidate scores come from a bilinear critic sigma(x' W y). Gradients are
// accumulated analytically into a Params structure alongside the values, so
// the same code path serves training, reporting and the finite-difference
// audit.

#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "seqrec/encoder.hpp"
#include "seqrec/sampler.hpp"

namespace seqrec {

struct LossWeights {
  double aap = 0.2;
  double mip = 1.0;
  double map = 1.0;
  double sp = 0.5;
};

struct LossReport {
  double aap = 0, mip = 0, map = 0, sp = 0;  // per-objective mean loss
  long aap_terms = 0, mip_terms = 0, map_terms = 0, sp_terms = 0;
  double total = 0;
};

/// Per-term loss values, for tests and invariant checks.
struct PretrainTermLog {
  std::vector<double> aap, mip, map, sp;
};

template <class S>
S sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

/// sigma(x' W y), or the raw bilinear form when `raw` is set.
template <class S, class DX, class DY>
S bilinear_logit(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                 const Mat<S>& w, bool raw = false) {
  const S z = x.row(0).dot((w * y.row(0).transpose()).col(0));
  return raw ? z : sigmoid(z);
}

/// Softmax cross-entropy with the positive inside its own candidate set:
/// -(pos - log sum_{y in {pos} u negs} exp y). Stable via max subtraction.
template <class S>
S sampled_info_nce(S pos, std::span<const S> negs) {
  S m = pos;
  for (S v : negs) m = std::max(m, v);
  S acc = std::exp(pos - m);
  for (S v : negs) acc += std::exp(v - m);
  return m + std::log(acc) - pos;
}

template <class S>
struct NceGrad {
  S loss;
  S d_pos;
  std::vector<S> d_negs;
};

template <class S>
NceGrad<S> sampled_info_nce_grad(S pos, std::span<const S> negs) {
  S m = pos;
  for (S v : negs) m = std::max(m, v);
  const S e_pos = std::exp(pos - m);
  S acc = e_pos;
  std::vector<S> e_negs(negs.size());
  for (std::size_t i = 0; i < negs.size(); ++i) {
    e_negs[i] = std::exp(negs[i] - m);
    acc += e_negs[i];
  }
  NceGrad<S> out;
  out.loss = m + std::log(acc) - pos;
  out.d_pos = e_pos / acc - S(1);
  out.d_negs.resize(negs.size());
  for (std::size_t i = 0; i < negs.size(); ++i) out.d_negs[i] = e_negs[i] / acc;
  return out;
}

namespace obj_detail {

/// One InfoNCE term whose candidates are bilinear critic scores f(x, y_c)
/// sharing the left vector x. Accumulates d/dx into `dx` and the y-side and
/// critic gradients through callbacks keyed by candidate index (0 = positive,
/// 1.. = negatives).
template <class S, class YRow, class DyFn>
S critic_nce_term(const Eigen::MatrixBase<YRow>& x, std::span<const int> ys,
                  const Mat<S>& attr_or_item_emb, const Mat<S>& w, bool raw,
                  S scale, Mat<S>* dx, Mat<S>* dw, DyFn&& dy_row,
                  std::vector<double>* terms) {
  const std::size_t count = ys.size();
  std::vector<S> scores(count);
  std::vector<S> zs(count);
  for (std::size_t c = 0; c < count; ++c) {
    const S z =
        x.row(0).dot((w * attr_or_item_emb.row(ys[c]).transpose()).col(0));
    zs[c] = z;
    scores[c] = raw ? z : sigmoid(z);
  }
  auto g = sampled_info_nce_grad<S>(
      scores[0], std::span<const S>(scores.data() + 1, count - 1));
  if (terms) terms->push_back(static_cast<double>(g.loss));
  if (dx != nullptr) {
    for (std::size_t c = 0; c < count; ++c) {
      const S d_score = (c == 0 ? g.d_pos : g.d_negs[c - 1]);
      const S dz = scale * d_score *
                   (raw ? S(1) : scores[c] * (S(1) - scores[c]));
      if (dz == S(0)) continue;
      const auto y = attr_or_item_emb.row(ys[c]);
      dx->row(0).noalias() += dz * (y * w.transpose());
      dw->noalias() += dz * (x.row(0).transpose() * y);
      dy_row(ys[c], dz);
    }
  }
  return g.loss;
}

}  // namespace obj_detail

/// Associated attribute prediction over one sequence: ties each unmasked
/// item's raw embedding to its ground-truth attributes against sampled
/// attribute negatives.
template <class S>
void aap_loss(const PretrainSeq& seq, const Params<S>& params, bool raw,
              S scale, Params<S>* grads, double& sum, long& count,
              std::vector<double>* terms = nullptr) {
  for (std::size_t slot = 0; slot < seq.aap_positions.size(); ++slot) {
    const int pos = seq.aap_positions[slot];
    const int item = seq.original[static_cast<std::size_t>(pos)];
    const auto& attrs = seq.aap_pos_attrs[slot];
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      std::vector<int> ys;
      ys.push_back(attrs[a]);
      ys.insert(ys.end(), seq.aap_neg_attrs[slot][a].begin(),
                seq.aap_neg_attrs[slot][a].end());
      Mat<S> dx = Mat<S>::Zero(1, params.item_emb.cols());
      const S loss = obj_detail::critic_nce_term<S>(
          params.item_emb.row(item), std::span<const int>(ys),
          params.attr_emb, params.w_aap, raw, scale,
          grads ? &dx : nullptr, grads ? &grads->w_aap : nullptr,
          [&](int attr_idx, S dz) {
            grads->attr_emb.row(attr_idx).noalias() +=
                dz * (params.item_emb.row(item) * params.w_aap);
          },
          terms);
      if (grads) grads->item_emb.row(item) += dx.row(0);
      sum += static_cast<double>(loss);
      ++count;
    }
  }
}

/// Masked item prediction over one sequence, given the final hidden states
/// of the masked view. d/dF accumulates into d_f.
template <class S>
void mip_loss(const PretrainSeq& seq, const Mat<S>& f, const Params<S>& params,
              bool raw, S scale, Params<S>* grads, Mat<S>* d_f, double& sum,
              long& count, std::vector<double>* terms = nullptr) {
  for (std::size_t k = 0; k < seq.mask.positions.size(); ++k) {
    const int pos = seq.mask.positions[k];
    std::vector<int> ys;
    ys.push_back(seq.mask.targets[k]);
    ys.insert(ys.end(), seq.mip_negatives[k].begin(),
              seq.mip_negatives[k].end());
    Mat<S> dx = Mat<S>::Zero(1, f.cols());
    const S loss = obj_detail::critic_nce_term<S>(
        f.row(pos), std::span<const int>(ys), params.item_emb, params.w_mip,
        raw, scale, grads ? &dx : nullptr, grads ? &grads->w_mip : nullptr,
        [&](int item_idx, S dz) {
          grads->item_emb.row(item_idx).noalias() +=
              dz * (f.row(pos) * params.w_mip);
        },
        terms);
    if (grads) d_f->row(pos) += dx.row(0);
    sum += static_cast<double>(loss);
    ++count;
  }
}

/// Masked attribute prediction over one sequence, same hidden states as MIP.
template <class S>
void map_loss(const PretrainSeq& seq, const Mat<S>& f, const Params<S>& params,
              bool raw, S scale, Params<S>* grads, Mat<S>* d_f, double& sum,
              long& count, std::vector<double>* terms = nullptr) {
  for (std::size_t k = 0; k < seq.mask.positions.size(); ++k) {
    const int pos = seq.mask.positions[k];
    const auto& attrs = seq.map_pos_attrs[k];
    for (std::size_t a = 0; a < attrs.size(); ++a) {
      std::vector<int> ys;
      ys.push_back(attrs[a]);
      ys.insert(ys.end(), seq.map_neg_attrs[k][a].begin(),
                seq.map_neg_attrs[k][a].end());
      Mat<S> dx = Mat<S>::Zero(1, f.cols());
      const S loss = obj_detail::critic_nce_term<S>(
          f.row(pos), std::span<const int>(ys), params.attr_emb, params.w_map,
          raw, scale, grads ? &dx : nullptr, grads ? &grads->w_map : nullptr,
          [&](int attr_idx, S dz) {
            grads->attr_emb.row(attr_idx).noalias() +=
                dz * (f.row(pos) * params.w_map);
          },
          terms);
      if (grads) d_f->row(pos) += dx.row(0);
      sum += static_cast<double>(loss);
      ++count;
    }
  }
}

/// Segment prediction: one InfoNCE term relating the masked-context state to
/// the standalone segment state against negative segment states.
template <class S>
S sp_loss(const Mat<S>& s_ctx, const Mat<S>& s_pos,
          const std::vector<Mat<S>>& s_negs, const Params<S>& params, bool raw,
          S scale, Params<S>* grads, Mat<S>* d_ctx, Mat<S>* d_pos,
          std::vector<Mat<S>>* d_negs, std::vector<double>* terms = nullptr) {
  const Mat<S>& w = params.w_sp;
  const std::size_t n_cand = 1 + s_negs.size();
  std::vector<S> scores(n_cand), zs(n_cand);
  auto z_of = [&](const Mat<S>& y) {
    return s_ctx.row(0).dot((w * y.row(0).transpose()).col(0));
  };
  zs[0] = z_of(s_pos);
  scores[0] = raw ? zs[0] : sigmoid(zs[0]);
  for (std::size_t i = 0; i < s_negs.size(); ++i) {
    zs[i + 1] = z_of(s_negs[i]);
    scores[i + 1] = raw ? zs[i + 1] : sigmoid(zs[i + 1]);
  }
  auto g = sampled_info_nce_grad<S>(
      scores[0], std::span<const S>(scores.data() + 1, n_cand - 1));
  if (terms) terms->push_back(static_cast<double>(g.loss));
  if (grads != nullptr) {
    for (std::size_t c = 0; c < n_cand; ++c) {
      const S d_score = (c == 0 ? g.d_pos : g.d_negs[c - 1]);
      const S dz =
          scale * d_score * (raw ? S(1) : scores[c] * (S(1) - scores[c]));
      const Mat<S>& y = (c == 0) ? s_pos : s_negs[c - 1];
      Mat<S>& dy = (c == 0) ? *d_pos : (*d_negs)[c - 1];
      d_ctx->row(0).noalias() += dz * (y.row(0) * w.transpose());
      dy.row(0).noalias() += dz * (s_ctx.row(0) * w);
      grads->w_sp.noalias() += dz * (s_ctx.row(0).transpose() * y.row(0));
    }
  }
  return g.loss;
}

/// Weighted sum of the four pretraining objectives over a batch. Objectives
/// with zero weight are never computed; per-objective aggregation is the
/// mean over terms so weights stay batch-size invariant.
template <class S>
LossReport pretrain_loss(const PretrainBatch& batch, const Params<S>& params,
                         const ModelConfig& cfg, const LossWeights& weights,
                         bool raw_bilinear, Params<S>* grads,
                         const DropoutSpec& dropout = {},
                         PretrainTermLog* term_log = nullptr) {
  LossReport report;
  long aap_count = 0, mip_count = 0, map_count = 0, sp_count = 0;
  for (const auto& seq : batch.seqs) {
    for (const auto& attrs : seq.aap_pos_attrs)
      aap_count += static_cast<long>(attrs.size());
    mip_count += static_cast<long>(seq.mask.positions.size());
    for (const auto& attrs : seq.map_pos_attrs)
      map_count += static_cast<long>(attrs.size());
    if (seq.segment) ++sp_count;
  }
  const bool do_aap = weights.aap > 0 && aap_count > 0;
  const bool do_mip = weights.mip > 0 && mip_count > 0;
  const bool do_map = weights.map > 0 && map_count > 0;
  const bool do_sp = weights.sp > 0 && sp_count > 0;
  const S aap_scale = static_cast<S>(weights.aap / std::max(aap_count, 1L));
  const S mip_scale = static_cast<S>(weights.mip / std::max(mip_count, 1L));
  const S map_scale = static_cast<S>(weights.map / std::max(map_count, 1L));
  const S sp_scale = static_cast<S>(weights.sp / std::max(sp_count, 1L));

  double aap_sum = 0, mip_sum = 0, map_sum = 0, sp_sum = 0;
  long aap_n = 0, mip_n = 0, map_n = 0, sp_n = 0;

  EncodeTape<S> tape, sp_tape;
  const std::vector<std::uint8_t> all_valid_buf(
      static_cast<std::size_t>(cfg.max_len), 1);

  for (const auto& seq : batch.seqs) {
    if (do_aap)
      aap_loss<S>(seq, params, raw_bilinear, aap_scale, grads, aap_sum, aap_n,
                  term_log ? &term_log->aap : nullptr);

    const bool need_states =
        (do_mip && !seq.mask.positions.empty()) ||
        (do_map && !seq.map_pos_attrs.empty());
    if (need_states) {
      const Mat<S>& f = encode<S>(seq.input_ids, seq.validity,
                                  Direction::bidirectional, params, cfg, tape,
                                  dropout);
      Mat<S> d_f;
      if (grads) d_f = Mat<S>::Zero(f.rows(), f.cols());
      if (do_mip)
        mip_loss<S>(seq, f, params, raw_bilinear, mip_scale, grads,
                    grads ? &d_f : nullptr, mip_sum, mip_n,
                    term_log ? &term_log->mip : nullptr);
      if (do_map)
        map_loss<S>(seq, f, params, raw_bilinear, map_scale, grads,
                    grads ? &d_f : nullptr, map_sum, map_n,
                    term_log ? &term_log->map : nullptr);
      if (grads) encode_backward<S>(tape, d_f, params, cfg, *grads);
    }

    if (do_sp && seq.segment) {
      const auto& seg = *seq.segment;
      const Mat<S>& ctx_out =
          encode<S>(seq.sp_input_ids, seq.validity, Direction::bidirectional,
                    params, cfg, sp_tape, dropout);
      Mat<S> s_ctx = ctx_out.row(ctx_out.rows() - 1);

      const std::span<const std::uint8_t> seg_valid(
          all_valid_buf.data(), static_cast<std::size_t>(seg.length));
      EncodeTape<S> pos_tape;
      const Mat<S>& pos_out =
          encode<S>(seg.items, seg_valid, Direction::bidirectional, params,
                    cfg, pos_tape, dropout);
      Mat<S> s_pos = pos_out.row(pos_out.rows() - 1);

      std::vector<Mat<S>> s_negs;
      std::vector<EncodeTape<S>> neg_tapes(seg.negatives.size());
      for (std::size_t i = 0; i < seg.negatives.size(); ++i) {
        const Mat<S>& neg_out =
            encode<S>(seg.negatives[i], seg_valid, Direction::bidirectional,
                      params, cfg, neg_tapes[i], dropout);
        s_negs.push_back(neg_out.row(neg_out.rows() - 1));
      }

      Mat<S> d_ctx = Mat<S>::Zero(1, cfg.dim);
      Mat<S> d_pos = Mat<S>::Zero(1, cfg.dim);
      std::vector<Mat<S>> d_negs(s_negs.size(), Mat<S>::Zero(1, cfg.dim));
      const S loss = sp_loss<S>(s_ctx, s_pos, s_negs, params, raw_bilinear,
                                sp_scale, grads, &d_ctx, &d_pos, &d_negs,
                                term_log ? &term_log->sp : nullptr);
      sp_sum += static_cast<double>(loss);
      ++sp_n;
      if (grads) {
        Mat<S> d_out = Mat<S>::Zero(sp_tape.n, cfg.dim);
        d_out.row(sp_tape.n - 1) = d_ctx.row(0);
        encode_backward<S>(sp_tape, d_out, params, cfg, *grads);

        Mat<S> d_seg = Mat<S>::Zero(seg.length, cfg.dim);
        d_seg.row(seg.length - 1) = d_pos.row(0);
        encode_backward<S>(pos_tape, d_seg, params, cfg, *grads);
        for (std::size_t i = 0; i < neg_tapes.size(); ++i) {
          d_seg.setZero();
          d_seg.row(seg.length - 1) = d_negs[i].row(0);
          encode_backward<S>(neg_tapes[i], d_seg, params, cfg, *grads);
        }
      }
    }
  }

  report.aap = aap_n ? aap_sum / aap_n : 0.0;
  report.mip = mip_n ? mip_sum / mip_n : 0.0;
  report.map = map_n ? map_sum / map_n : 0.0;
  report.sp = sp_n ? sp_sum / sp_n : 0.0;
  report.aap_terms = aap_n;
  report.mip_terms = mip_n;
  report.map_terms = map_n;
  report.sp_terms = sp_n;
  report.total = weights.aap * report.aap + weights.mip * report.mip +
                 weights.map * report.map + weights.sp * report.sp;
  return report;
}

struct FinetuneLossValue {
  double total = 0;     // term sum normalized by batch size
  double term_sum = 0;
  long term_count = 0;
};

/// Pairwise rank loss: -log sigmoid(score_pos - score_neg) summed over the
/// supervised positions of causally encoded train sequences, normalized by
/// the number of sequences in the batch.
template <class S>
FinetuneLossValue finetune_loss(const FinetuneBatch& batch,
                                const Params<S>& params,
                                const ModelConfig& cfg, Params<S>* grads,
                                const DropoutSpec& dropout = {},
                                std::vector<double>* terms = nullptr) {
  FinetuneLossValue out;
  if (batch.seqs.empty()) return out;
  const S inv_batch = static_cast<S>(1.0 / batch.seqs.size());
  EncodeTape<S> tape;
  for (const auto& seq : batch.seqs) {
    const Mat<S>& f = encode<S>(seq.input_ids, seq.validity, Direction::causal,
                                params, cfg, tape, dropout);
    Mat<S> d_f;
    if (grads) d_f = Mat<S>::Zero(f.rows(), f.cols());
    for (int t = 0; t < static_cast<int>(seq.validity.size()); ++t) {
      if (!seq.validity[static_cast<std::size_t>(t)]) continue;
      const int pos_item = seq.pos_target[static_cast<std::size_t>(t)];
      const int neg_item = seq.neg_target[static_cast<std::size_t>(t)];
      const S delta = (params.item_emb.row(pos_item) -
                       params.item_emb.row(neg_item))
                          .dot(f.row(t));
      // softplus(-delta) = -log sigmoid(delta), computed stably
      const S term = std::max(-delta, S(0)) +
                     std::log1p(std::exp(-std::abs(delta)));
      out.term_sum += static_cast<double>(term);
      ++out.term_count;
      if (terms) terms->push_back(static_cast<double>(term));
      if (grads) {
        const S d_delta = -sigmoid(-delta) * inv_batch;
        d_f.row(t).noalias() += d_delta * (params.item_emb.row(pos_item) -
                                           params.item_emb.row(neg_item));
        grads->item_emb.row(pos_item).noalias() += d_delta * f.row(t);
        grads->item_emb.row(neg_item).noalias() -= d_delta * f.row(t);
      }
    }
    if (grads) encode_backward<S>(tape, d_f, params, cfg, *grads);
  }
  out.total = out.term_sum / static_cast<double>(batch.seqs.size());
  return out;
}

}  // namespace seqrec
