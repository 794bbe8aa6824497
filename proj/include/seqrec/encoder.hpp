// Self-attentive sequence encoder: embedding layer, stacked multi-head
// attention blocks with causal or bidirectional masking, and next-item
// scoring. Forward passes record a tape of activations so the analytic
// backward pass can accumulate gradients for every parameter tensor.
//
// Padding convention: sequences are left-padded, so real items occupy a
// suffix of the position axis. The block stack runs only on that suffix
// (an exact optimization: masked attention never lets a valid query see a
// padding key), while padding rows of the output carry their embedding
// rows untouched.

#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "seqrec/model.hpp"
#include "seqrec/rng.hpp"

namespace seqrec {

enum class Direction { bidirectional, causal };

using BoolMat =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct MaskAllFalseRow : std::runtime_error {
  explicit MaskAllFalseRow(int row)
      : std::runtime_error("attention mask row " + std::to_string(row) +
                           " has no attendable key"),
        row(row) {}
  int row;
};

/// Dropout configuration for a training-mode forward pass. Inactive when
/// rate is zero or no generator is supplied (evaluation mode).
struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;
  bool active() const { return rate > 0.0 && rng != nullptr; }
};

namespace enc_detail {
constexpr double kMaskedLogit = -1e9;
constexpr double kLayerNormEps = 1e-12;
}  // namespace enc_detail

/// mask[q][k] says whether query position q may attend to key position k.
/// Causal mode restricts keys to k <= q; both modes restrict keys to valid
/// positions, and a valid position may always attend to itself.
inline BoolMat build_attention_mask(const std::vector<std::uint8_t>& validity,
                                    Direction direction) {
  const int n = static_cast<int>(validity.size());
  BoolMat mask(n, n);
  for (int q = 0; q < n; ++q) {
    for (int k = 0; k < n; ++k) {
      bool allowed = validity[k] != 0;
      if (direction == Direction::causal) allowed = allowed && k <= q;
      mask(q, k) = allowed ? 1 : 0;
    }
    if (validity[q]) mask(q, q) = 1;
  }
  return mask;
}

template <class S>
struct BlockTape {
  Mat<S> input;              // X, m x d
  Mat<S> q, k, v;            // m x d (heads packed along columns)
  std::vector<Mat<S>> attn;  // per head, m x m softmax probabilities
  Mat<S> heads_concat;       // m x d
  Mat<S> attn_proj;          // H * Wo, before dropout
  Mat<S> drop1;              // dropout multipliers (empty when inactive)
  Mat<S> ln1_xhat, ln1_inv_std;
  Mat<S> ln1_out;            // Y1
  Mat<S> ffn_pre;            // Y1*W1 + b1, m x 4d
  Mat<S> ffn_out;            // ReLU(ffn_pre)*W2 + b2, before dropout
  Mat<S> drop2;
  Mat<S> ln2_xhat, ln2_inv_std;
};

template <class S>
struct EncodeTape {
  int n = 0;       // padded length
  int offset = 0;  // index of the first real position
  int m = 0;       // number of rows the block stack ran on
  std::vector<int> items;
  Mat<S> f0;             // n x d embedding output
  Mat<S> additive_mask;  // m x m, 0 or kMaskedLogit
  std::vector<BlockTape<S>> blocks;
  Mat<S> output;  // n x d
};

/// F0[t] = item_emb[items[t]] + pos_emb[t], padding positions included.
template <class S>
Mat<S> embed_sequence(std::span<const int> items, const Params<S>& params,
                      const ModelConfig& cfg) {
  const int n = static_cast<int>(items.size());
  if (n > cfg.max_len)
    throw IndexOutOfRange("sequence longer than position table");
  Mat<S> f0(n, cfg.dim);
  for (int t = 0; t < n; ++t) {
    if (items[t] < 0 || items[t] >= cfg.item_rows())
      throw IndexOutOfRange("item index " + std::to_string(items[t]));
    f0.row(t) = params.item_emb.row(items[t]) + params.pos_emb.row(t);
  }
  return f0;
}

namespace enc_detail {

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias,
                  Mat<S>& xhat, Mat<S>& inv_std) {
  Mat<S> centered = x;
  centered.colwise() -= x.rowwise().mean();
  Mat<S> var = centered.array().square().rowwise().mean().matrix();
  inv_std =
      (var.array() + static_cast<S>(kLayerNormEps)).sqrt().inverse().matrix();
  xhat = (centered.array().colwise() * inv_std.col(0).array()).matrix();
  Mat<S> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
  y.array().rowwise() += bias.row(0).array();
  return y;
}

template <class S>
void layer_norm_backward(const Mat<S>& dy, const Mat<S>& xhat,
                         const Mat<S>& inv_std, const Mat<S>& gain,
                         Mat<S>& dx, Mat<S>& d_gain, Mat<S>& d_bias) {
  Mat<S> g = dy.array().rowwise() * gain.row(0).array();
  Mat<S> mean_g = g.rowwise().mean();
  Mat<S> mean_gx = (g.array() * xhat.array()).rowwise().mean().matrix();
  dx = g;
  dx.colwise() -= mean_g.col(0);
  dx.array() -= xhat.array().colwise() * mean_gx.col(0).array();
  dx.array().colwise() *= inv_std.col(0).array();
  d_gain += (dy.array() * xhat.array()).colwise().sum().matrix();
  d_bias += dy.colwise().sum();
}

template <class S>
Mat<S> make_dropout_mask(Eigen::Index rows, Eigen::Index cols,
                         const DropoutSpec& spec) {
  const S keep_scale = static_cast<S>(1.0 / (1.0 - spec.rate));
  Mat<S> mask(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      mask(r, c) = spec.rng->bernoulli(spec.rate) ? S(0) : keep_scale;
  return mask;
}

/// One attention block on an m x d input with an m x m additive mask.
template <class S>
Mat<S> block_forward(const Mat<S>& x, const Mat<S>& additive_mask,
                     const BlockParams<S>& bp, int heads,
                     const DropoutSpec& dropout, BlockTape<S>& tape) {
  const int m = static_cast<int>(x.rows());
  const int d = static_cast<int>(x.cols());
  const int dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  tape.input = x;
  tape.q.noalias() = x * bp.wq;
  tape.k.noalias() = x * bp.wk;
  tape.v.noalias() = x * bp.wv;

  tape.attn.assign(heads, Mat<S>());
  tape.heads_concat.resize(m, d);
  for (int h = 0; h < heads; ++h) {
    Mat<S> logits = tape.q.block(0, h * dh, m, dh) *
                    tape.k.block(0, h * dh, m, dh).transpose();
    logits *= scale;
    logits += additive_mask;
    Mat<S> rowmax = logits.rowwise().maxCoeff();
    Mat<S> p = (logits.colwise() - rowmax.col(0)).array().exp().matrix();
    Mat<S> rowsum = p.rowwise().sum();
    p.array().colwise() /= rowsum.col(0).array();
    tape.attn[h] = p;
    tape.heads_concat.block(0, h * dh, m, dh).noalias() =
        p * tape.v.block(0, h * dh, m, dh);
  }
  tape.attn_proj.noalias() = tape.heads_concat * bp.wo;

  Mat<S> after_drop1 = tape.attn_proj;
  if (dropout.active()) {
    tape.drop1 = make_dropout_mask<S>(m, d, dropout);
    after_drop1.array() *= tape.drop1.array();
  } else {
    tape.drop1.resize(0, 0);
  }
  tape.ln1_out = layer_norm<S>(Mat<S>(x + after_drop1), bp.ln1_gain,
                               bp.ln1_bias, tape.ln1_xhat, tape.ln1_inv_std);

  tape.ffn_pre.noalias() = tape.ln1_out * bp.w1;
  tape.ffn_pre.array().rowwise() += bp.b1.row(0).array();
  Mat<S> hidden = tape.ffn_pre.cwiseMax(S(0));
  tape.ffn_out.noalias() = hidden * bp.w2;
  tape.ffn_out.array().rowwise() += bp.b2.row(0).array();

  Mat<S> after_drop2 = tape.ffn_out;
  if (dropout.active()) {
    tape.drop2 = make_dropout_mask<S>(m, static_cast<Eigen::Index>(d), dropout);
    after_drop2.array() *= tape.drop2.array();
  } else {
    tape.drop2.resize(0, 0);
  }
  Mat<S> ln2_xhat, ln2_inv_std;
  Mat<S> out = layer_norm<S>(Mat<S>(tape.ln1_out + after_drop2), bp.ln2_gain,
                             bp.ln2_bias, ln2_xhat, ln2_inv_std);
  tape.ln2_xhat = std::move(ln2_xhat);
  tape.ln2_inv_std = std::move(ln2_inv_std);
  return out;
}

template <class S>
void block_backward(const Mat<S>& d_out, const BlockTape<S>& tape,
                    const BlockParams<S>& bp, int heads, Mat<S>& d_input,
                    BlockParams<S>& grads) {
  const int m = static_cast<int>(tape.input.rows());
  const int d = static_cast<int>(tape.input.cols());
  const int dh = d / heads;
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

  // LN2
  Mat<S> d_r2;
  layer_norm_backward<S>(d_out, tape.ln2_xhat, tape.ln2_inv_std, bp.ln2_gain,
                         d_r2, grads.ln2_gain, grads.ln2_bias);
  Mat<S> d_y1 = d_r2;
  Mat<S> d_z = d_r2;
  if (tape.drop2.size() > 0) d_z.array() *= tape.drop2.array();

  // FFN
  Mat<S> hidden = tape.ffn_pre.cwiseMax(S(0));
  grads.w2.noalias() += hidden.transpose() * d_z;
  grads.b2 += d_z.colwise().sum();
  Mat<S> d_hidden = d_z * bp.w2.transpose();
  Mat<S> d_pre = ((tape.ffn_pre.array() > S(0)).template cast<S>() *
                  d_hidden.array())
                     .matrix();
  grads.w1.noalias() += tape.ln1_out.transpose() * d_pre;
  grads.b1 += d_pre.colwise().sum();
  d_y1.noalias() += d_pre * bp.w1.transpose();

  // LN1
  Mat<S> d_r1;
  layer_norm_backward<S>(d_y1, tape.ln1_xhat, tape.ln1_inv_std, bp.ln1_gain,
                         d_r1, grads.ln1_gain, grads.ln1_bias);
  d_input = d_r1;
  Mat<S> d_proj = d_r1;
  if (tape.drop1.size() > 0) d_proj.array() *= tape.drop1.array();

  // output projection
  grads.wo.noalias() += tape.heads_concat.transpose() * d_proj;
  Mat<S> d_heads = d_proj * bp.wo.transpose();

  // attention heads
  Mat<S> d_q = Mat<S>::Zero(m, d);
  Mat<S> d_k = Mat<S>::Zero(m, d);
  Mat<S> d_v = Mat<S>::Zero(m, d);
  for (int h = 0; h < heads; ++h) {
    const auto& p = tape.attn[h];
    Mat<S> d_ctx = d_heads.block(0, h * dh, m, dh);
    Mat<S> d_p = d_ctx * tape.v.block(0, h * dh, m, dh).transpose();
    d_v.block(0, h * dh, m, dh).noalias() += p.transpose() * d_ctx;
    // softmax backward, rowwise
    Mat<S> rowdot = (d_p.array() * p.array()).rowwise().sum().matrix();
    Mat<S> d_logits = d_p;
    d_logits.colwise() -= rowdot.col(0);
    d_logits.array() *= p.array();
    d_logits *= scale;
    d_q.block(0, h * dh, m, dh).noalias() +=
        d_logits * tape.k.block(0, h * dh, m, dh);
    d_k.block(0, h * dh, m, dh).noalias() +=
        d_logits.transpose() * tape.q.block(0, h * dh, m, dh);
  }
  grads.wq.noalias() += tape.input.transpose() * d_q;
  grads.wk.noalias() += tape.input.transpose() * d_k;
  grads.wv.noalias() += tape.input.transpose() * d_v;
  d_input.noalias() += d_q * bp.wq.transpose();
  d_input.noalias() += d_k * bp.wk.transpose();
  d_input.noalias() += d_v * bp.wv.transpose();
}

/// Additive mask for the trimmed block [offset, n) of a left-padded
/// sequence: causal keeps the lower triangle, bidirectional opens all keys.
template <class S>
Mat<S> trimmed_additive_mask(int m, Direction direction) {
  Mat<S> mask = Mat<S>::Zero(m, m);
  if (direction == Direction::causal) {
    for (int q = 0; q < m; ++q)
      for (int k = q + 1; k < m; ++k)
        mask(q, k) = static_cast<S>(kMaskedLogit);
  }
  return mask;
}

}  // namespace enc_detail

/// Single attention block on explicit hidden states with an explicit boolean
/// mask; throws MaskAllFalseRow for query rows with no attendable key.
template <class S>
Mat<S> attention_block(const Mat<S>& f, const BoolMat& mask,
                       const BlockParams<S>& bp, int heads,
                       const DropoutSpec& dropout = {},
                       BlockTape<S>* tape = nullptr) {
  const int n = static_cast<int>(f.rows());
  if (mask.rows() != n || mask.cols() != n)
    throw ConfigError("attention mask shape mismatch");
  Mat<S> additive(n, n);
  for (int q = 0; q < n; ++q) {
    bool any = false;
    for (int k = 0; k < n; ++k) {
      const bool ok = mask(q, k) != 0;
      any = any || ok;
      additive(q, k) = ok ? S(0) : static_cast<S>(enc_detail::kMaskedLogit);
    }
    if (!any) throw MaskAllFalseRow(q);
  }
  BlockTape<S> local;
  BlockTape<S>& t = tape ? *tape : local;
  return enc_detail::block_forward<S>(f, additive, bp, heads, dropout, t);
}

/// Full encoder: embedding followed by the block stack. The returned
/// reference aliases tape.output. Padding rows of the output carry their
/// embedding rows.
template <class S>
const Mat<S>& encode(std::span<const int> items,
                     std::span<const std::uint8_t> validity,
                     Direction direction, const Params<S>& params,
                     const ModelConfig& cfg, EncodeTape<S>& tape,
                     const DropoutSpec& dropout = {}) {
  const int n = static_cast<int>(items.size());
  if (static_cast<int>(validity.size()) != n)
    throw ConfigError("validity length mismatch");

  tape.n = n;
  tape.items.assign(items.begin(), items.end());
  tape.f0 = embed_sequence<S>(items, params, cfg);

  // Left padding means valid positions form a suffix; find its start.
  int offset = n;
  for (int t = 0; t < n; ++t) {
    if (validity[t]) {
      offset = t;
      break;
    }
  }
  for (int t = offset; t < n; ++t) {
    if (!validity[t])
      throw ConfigError("validity mask is not a left-padded suffix");
  }
  tape.offset = offset;
  tape.m = n - offset;
  tape.output = tape.f0;
  tape.blocks.assign(static_cast<std::size_t>(cfg.blocks), BlockTape<S>());
  if (tape.m == 0 || cfg.blocks == 0) return tape.output;

  tape.additive_mask =
      enc_detail::trimmed_additive_mask<S>(tape.m, direction);
  Mat<S> x = tape.f0.block(offset, 0, tape.m, cfg.dim);
  for (int l = 0; l < cfg.blocks; ++l)
    x = enc_detail::block_forward<S>(x, tape.additive_mask, params.blocks[l],
                                     cfg.heads, dropout, tape.blocks[l]);
  tape.output.block(offset, 0, tape.m, cfg.dim) = x;
  return tape.output;
}

/// Accumulates d(loss)/d(params) for an encode call into `grads`.
template <class S>
void encode_backward(const EncodeTape<S>& tape, const Mat<S>& d_output,
                     const Params<S>& params, const ModelConfig& cfg,
                     Params<S>& grads) {
  Mat<S> d_f0 = d_output;
  if (tape.m > 0 && cfg.blocks > 0) {
    Mat<S> d_x = d_output.block(tape.offset, 0, tape.m, cfg.dim);
    d_f0.block(tape.offset, 0, tape.m, cfg.dim).setZero();
    for (int l = cfg.blocks - 1; l >= 0; --l) {
      Mat<S> d_in;
      enc_detail::block_backward<S>(d_x, tape.blocks[l], params.blocks[l],
                                    cfg.heads, d_in, grads.blocks[l]);
      d_x = std::move(d_in);
    }
    d_f0.block(tape.offset, 0, tape.m, cfg.dim) += d_x;
  }
  for (int t = 0; t < tape.n; ++t) {
    grads.item_emb.row(tape.items[t]) += d_f0.row(t);
    grads.pos_emb.row(t) += d_f0.row(t);
  }
}

/// Preference score of each candidate item given the final hidden state at
/// the prediction position: dot(item embedding, state).
template <class S>
std::vector<S> score_next_item(const Eigen::Ref<const Mat<S>>& f_last,
                               std::span<const int> candidates,
                               const Params<S>& params) {
  std::vector<S> scores;
  scores.reserve(candidates.size());
  for (int c : candidates) {
    if (c < 0 || c >= params.item_emb.rows())
      throw IndexOutOfRange("candidate item " + std::to_string(c));
    scores.push_back(params.item_emb.row(c).dot(f_last.row(0)));
  }
  return scores;
}

}  // namespace seqrec
