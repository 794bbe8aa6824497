// Model configuration and learnable parameters.
//
// Parameters are templated on the scalar type: training and inference run
// in float (matching the checkpoint payload format), while the gradient
// audit instantiates the same code in double for fp64 finite differences.

#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "seqrec/rng.hpp"

namespace seqrec {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatF = Mat<float>;
using MatD = Mat<double>;

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct IndexOutOfRange : std::runtime_error {
  explicit IndexOutOfRange(const std::string& m) : std::runtime_error(m) {}
};

/// Architecture hyperparameters of the self-attentive encoder.
struct ModelConfig {
  int dim = 64;        // embedding dimension d
  int heads = 2;       // attention heads
  int blocks = 2;      // stacked self-attention blocks
  int max_len = 50;    // maximum sequence length
  int item_vocab = 0;  // number of real items |I|
  int attr_vocab = 0;  // number of real attributes |A|
  double dropout = 0.2;

  int head_dim() const { return dim / heads; }
  int ffn_dim() const { return 4 * dim; }

  // Row 0 of both embedding tables is the padding sentinel; the mask token
  // owns the dedicated trailing row of the item table.
  int pad_index() const { return 0; }
  int mask_index() const { return item_vocab + 1; }
  int item_rows() const { return item_vocab + 2; }
  int attr_rows() const { return attr_vocab + 1; }

  void validate() const {
    if (dim < 1 || heads < 1 || blocks < 0 || max_len < 1)
      throw ConfigError("model sizes must be positive");
    if (dim % heads != 0) throw ConfigError("dim must be divisible by heads");
    if (item_vocab < 1) throw ConfigError("item vocabulary is empty");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("dropout must lie in [0,1)");
  }

  bool same_shape(const ModelConfig& o) const {
    return dim == o.dim && heads == o.heads && blocks == o.blocks &&
           max_len == o.max_len && item_vocab == o.item_vocab &&
           attr_vocab == o.attr_vocab;
  }
};

template <class S>
struct BlockParams {
  Mat<S> wq, wk, wv, wo;                          // d x d
  Mat<S> w1, b1, w2, b2;                          // d x 4d, 1 x 4d, 4d x d, 1 x d
  Mat<S> ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x d
};

/// All learnable tensors: embeddings, attention blocks, bilinear critics.
template <class S>
struct Params {
  Mat<S> item_emb;  // (|I|+2) x d, rows for padding and mask token included
  Mat<S> attr_emb;  // (|A|+1) x d
  Mat<S> pos_emb;   // max_len x d
  std::vector<BlockParams<S>> blocks;
  Mat<S> w_aap, w_mip, w_map, w_sp;  // d x d critic matrices
};

namespace detail {

template <class P, class F>
void visit_params(P& p, F&& f) {
  f("item_emb", p.item_emb);
  f("attr_emb", p.attr_emb);
  f("pos_emb", p.pos_emb);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    f(pre + "wq", b.wq);
    f(pre + "wk", b.wk);
    f(pre + "wv", b.wv);
    f(pre + "wo", b.wo);
    f(pre + "w1", b.w1);
    f(pre + "b1", b.b1);
    f(pre + "w2", b.w2);
    f(pre + "b2", b.b2);
    f(pre + "ln1_gain", b.ln1_gain);
    f(pre + "ln1_bias", b.ln1_bias);
    f(pre + "ln2_gain", b.ln2_gain);
    f(pre + "ln2_bias", b.ln2_bias);
  }
  f("w_aap", p.w_aap);
  f("w_mip", p.w_mip);
  f("w_map", p.w_map);
  f("w_sp", p.w_sp);
}

}  // namespace detail

/// Visits every tensor in a fixed order; the order defines checkpoint
/// manifest order, Adam state order and audit order.
template <class S, class F>
void for_each_tensor(Params<S>& p, F&& f) {
  detail::visit_params(p, std::forward<F>(f));
}

template <class S, class F>
void for_each_tensor(const Params<S>& p, F&& f) {
  detail::visit_params(p, std::forward<F>(f));
}

template <class S>
Params<S> make_zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const int d = cfg.dim;
  const int ff = cfg.ffn_dim();
  Params<S> p;
  p.item_emb = Mat<S>::Zero(cfg.item_rows(), d);
  p.attr_emb = Mat<S>::Zero(cfg.attr_rows(), d);
  p.pos_emb = Mat<S>::Zero(cfg.max_len, d);
  p.blocks.resize(cfg.blocks);
  for (auto& b : p.blocks) {
    b.wq = Mat<S>::Zero(d, d);
    b.wk = Mat<S>::Zero(d, d);
    b.wv = Mat<S>::Zero(d, d);
    b.wo = Mat<S>::Zero(d, d);
    b.w1 = Mat<S>::Zero(d, ff);
    b.b1 = Mat<S>::Zero(1, ff);
    b.w2 = Mat<S>::Zero(ff, d);
    b.b2 = Mat<S>::Zero(1, d);
    b.ln1_gain = Mat<S>::Zero(1, d);
    b.ln1_bias = Mat<S>::Zero(1, d);
    b.ln2_gain = Mat<S>::Zero(1, d);
    b.ln2_bias = Mat<S>::Zero(1, d);
  }
  p.w_aap = Mat<S>::Zero(d, d);
  p.w_mip = Mat<S>::Zero(d, d);
  p.w_map = Mat<S>::Zero(d, d);
  p.w_sp = Mat<S>::Zero(d, d);
  return p;
}

/// Truncated-normal init (std 0.02) for embeddings and projections, zeros
/// for biases, identity layer norms.
template <class S>
Params<S> init_params(const ModelConfig& cfg, Rng& rng) {
  Params<S> p = make_zero_params<S>(cfg);
  constexpr double kStd = 0.02;
  for_each_tensor(p, [&](const std::string& name, Mat<S>& t) {
    const bool is_bias = name.find(".b") != std::string::npos ||
                         name.find("ln") != std::string::npos;
    if (name.find("ln1_gain") != std::string::npos ||
        name.find("ln2_gain") != std::string::npos) {
      t.setOnes();
      return;
    }
    if (is_bias) return;  // stays zero
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c)
        t(r, c) = static_cast<S>(rng.truncated_normal() * kStd);
  });
  return p;
}

template <class S>
bool params_shapes_match(const Params<S>& a, const Params<S>& b) {
  if (a.blocks.size() != b.blocks.size()) return false;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> sa, sb;
  for_each_tensor(a, [&](const std::string&, const Mat<S>& t) {
    sa.emplace_back(t.rows(), t.cols());
  });
  for_each_tensor(b, [&](const std::string&, const Mat<S>& t) {
    sb.emplace_back(t.rows(), t.cols());
  });
  return sa == sb;
}

template <class S>
bool params_all_finite(const Params<S>& p) {
  bool ok = true;
  for_each_tensor(p, [&](const std::string&, const Mat<S>& t) {
    if (!t.allFinite()) ok = false;
  });
  return ok;
}

}  // namespace seqrec
