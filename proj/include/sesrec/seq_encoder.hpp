#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "sesrec/autodiff.hpp"
#include "sesrec/config.hpp"
#include "sesrec/embeddings.hpp"

namespace sesrec {

// One behavior type's transformer stack (multi-head self-attention followed
// by a position-wise feed-forward network, post-norm residual wiring).
template <typename S>
struct EncoderParams {
  int n_layers = 1;
  int n_heads = 2;
  int d = 0;
  int ffn = 0;

  struct Layer {
    std::vector<ad::Param<S>*> Wq, Wk, Wv;  // per head, d x d_head
    ad::Param<S>* Wo = nullptr;             // d x d
    ad::Param<S>* ln1_gamma = nullptr;
    ad::Param<S>* ln1_beta = nullptr;
    ad::Param<S>* ffn_W1 = nullptr;  // d x ffn
    ad::Param<S>* ffn_b1 = nullptr;  // 1 x ffn
    ad::Param<S>* ffn_W2 = nullptr;  // ffn x d
    ad::Param<S>* ffn_b2 = nullptr;  // 1 x d
    ad::Param<S>* ln2_gamma = nullptr;
    ad::Param<S>* ln2_beta = nullptr;
  };
  std::vector<Layer> layers;
};

namespace seq_encoder {

template <typename S>
EncoderParams<S> build_encoder(ad::ParamStore<S>& store, const std::string& prefix,
                               const Config& cfg, Rng& rng) {
  EncoderParams<S> p;
  p.n_layers = cfg.n_layers;
  p.n_heads = cfg.n_heads;
  p.d = cfg.d;
  p.ffn = cfg.ffn_width();
  int dh = p.d / p.n_heads;
  for (int l = 0; l < p.n_layers; ++l) {
    typename EncoderParams<S>::Layer layer;
    std::string lp = prefix + ".l" + std::to_string(l);
    for (int h = 0; h < p.n_heads; ++h) {
      std::string hp = lp + ".h" + std::to_string(h);
      layer.Wq.push_back(&store.add(hp + ".Wq", embeddings::normal_init<S>(p.d, dh, cfg.init_std, rng)));
      layer.Wk.push_back(&store.add(hp + ".Wk", embeddings::normal_init<S>(p.d, dh, cfg.init_std, rng)));
      layer.Wv.push_back(&store.add(hp + ".Wv", embeddings::normal_init<S>(p.d, dh, cfg.init_std, rng)));
    }
    layer.Wo = &store.add(lp + ".Wo", embeddings::normal_init<S>(p.d, p.d, cfg.init_std, rng));
    layer.ln1_gamma = &store.add(lp + ".ln1.gamma", ad::Mat<S>::Ones(1, p.d));
    layer.ln1_beta = &store.add(lp + ".ln1.beta", ad::Mat<S>::Zero(1, p.d));
    layer.ffn_W1 = &store.add(lp + ".ffn.W1", embeddings::normal_init<S>(p.d, p.ffn, cfg.init_std, rng));
    layer.ffn_b1 = &store.add(lp + ".ffn.b1", ad::Mat<S>::Zero(1, p.ffn));
    layer.ffn_W2 = &store.add(lp + ".ffn.W2", embeddings::normal_init<S>(p.ffn, p.d, cfg.init_std, rng));
    layer.ffn_b2 = &store.add(lp + ".ffn.b2", ad::Mat<S>::Zero(1, p.d));
    layer.ln2_gamma = &store.add(lp + ".ln2.gamma", ad::Mat<S>::Ones(1, p.d));
    layer.ln2_beta = &store.add(lp + ".ln2.beta", ad::Mat<S>::Zero(1, p.d));
  }
  return p;
}

template <typename S>
ad::Var dropout_if(ad::Tape<S>& tape, ad::Var X, double rate, Rng* rng) {
  if (rate <= 0.0 || rng == nullptr) return X;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ad::Mat<S> m(tape.val(X).rows(), tape.val(X).cols());
  S keep_inv = static_cast<S>(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = unit(*rng) < rate ? S(0) : keep_inv;
  return tape.hadamard(X, tape.value(std::move(m)));
}

// Contextual encoding H of a (possibly padded) input sequence E. Padded key
// positions receive exactly zero attention weight; padded output rows are
// zeroed after each sub-layer. Throws on an all-pad input.
//
// first_layer_attn, when given, receives the per-head attention matrices of
// layer 0 (diagnostic hook).
template <typename S>
ad::Var encode(ad::Tape<S>& tape, EncoderParams<S>& p, ad::Var E,
               const std::vector<uint8_t>& mask, double dropout_rate = 0.0, Rng* dropout_rng = nullptr,
               std::vector<ad::Var>* first_layer_attn = nullptr) {
  const Eigen::Index T = tape.val(E).rows();
  if (tape.val(E).cols() != p.d) throw ShapeError("encode: input width != d");
  if (static_cast<Eigen::Index>(mask.size()) != T) throw ShapeError("encode: mask length mismatch");
  if (std::none_of(mask.begin(), mask.end(), [](uint8_t m) { return m != 0; }))
    throw DataError("encode: sequence has no real positions");

  int dh = p.d / p.n_heads;
  S scale = S(1) / std::sqrt(static_cast<S>(dh));
  ad::Var X = E;
  for (int l = 0; l < p.n_layers; ++l) {
    auto& layer = p.layers[l];
    std::vector<ad::Var> heads;
    heads.reserve(p.n_heads);
    for (int h = 0; h < p.n_heads; ++h) {
      ad::Var Q = tape.matmul(X, tape.param(*layer.Wq[h]));
      ad::Var K = tape.matmul(X, tape.param(*layer.Wk[h]));
      ad::Var V = tape.matmul(X, tape.param(*layer.Wv[h]));
      ad::Var scores = tape.affine(tape.matmul(Q, tape.transpose(K)), scale, S(0));
      ad::Var A = tape.row_softmax_masked(scores, mask);
      if (first_layer_attn && l == 0) first_layer_attn->push_back(A);
      heads.push_back(tape.matmul(A, V));
    }
    ad::Var MH = tape.matmul(tape.concat_cols(heads), tape.param(*layer.Wo));
    MH = dropout_if(tape, MH, dropout_rate, dropout_rng);
    X = tape.row_layer_norm(tape.add(X, MH), tape.param(*layer.ln1_gamma),
                            tape.param(*layer.ln1_beta));
    X = embeddings::apply_row_mask(tape, X, mask);
    ad::Var F1 = tape.relu(tape.add_row_broadcast(tape.matmul(X, tape.param(*layer.ffn_W1)),
                                                  tape.param(*layer.ffn_b1)));
    ad::Var F = tape.add_row_broadcast(tape.matmul(F1, tape.param(*layer.ffn_W2)),
                                       tape.param(*layer.ffn_b2));
    F = dropout_if(tape, F, dropout_rate, dropout_rng);
    X = tape.row_layer_norm(tape.add(X, F), tape.param(*layer.ln2_gamma),
                            tape.param(*layer.ln2_beta));
    X = embeddings::apply_row_mask(tape, X, mask);
  }
  return X;
}

// Layer-0 attention matrices for a given input, one T x T matrix per head.
template <typename S>
std::vector<ad::Mat<S>> attention_weights(EncoderParams<S>& p, const ad::Mat<S>& E,
                                          const std::vector<uint8_t>& mask) {
  ad::Tape<S> tape(/*grad_enabled=*/false);
  std::vector<ad::Var> attn;
  encode(tape, p, tape.value(E), mask, 0.0, nullptr, &attn);
  std::vector<ad::Mat<S>> out;
  out.reserve(attn.size());
  for (ad::Var a : attn) out.push_back(tape.val(a));
  return out;
}

}  // namespace seq_encoder
}  // namespace sesrec
