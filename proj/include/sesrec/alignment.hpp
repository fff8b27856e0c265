#pragma once

#include <string>
#include <vector>

#include "sesrec/autodiff.hpp"
#include "sesrec/config.hpp"
#include "sesrec/embeddings.hpp"

namespace sesrec {

template <typename S>
struct AlignmentParams {
  ad::Param<S>* W_A = nullptr;  // d x d bilinear form
  ad::Param<S>* tau = nullptr;  // 1 x 1 learnable temperature, clamped > 0
  static constexpr double kTauFloor = 1e-3;
};

namespace alignment {

template <typename S>
AlignmentParams<S> build_alignment(ad::ParamStore<S>& store, const Config& cfg, Rng& rng) {
  AlignmentParams<S> p;
  p.W_A = &store.add("ali.W_A", embeddings::normal_init<S>(cfg.d, cfg.d, cfg.init_std, rng));
  ad::Mat<S> tau(1, 1);
  tau(0, 0) = static_cast<S>(cfg.temperature_init);
  p.tau = &store.add("ali.tau", std::move(tau));
  return p;
}

// s(p, q) = tanh(p W_A q^T) for two d-dimensional row vectors; range (-1, 1).
template <typename S>
ad::Var pair_similarity(ad::Tape<S>& tape, AlignmentParams<S>& params, ad::Var p, ad::Var q) {
  if (tape.val(p).rows() != 1 || tape.val(q).rows() != 1)
    throw ShapeError("pair_similarity: expected row vectors");
  return tape.tanh_(
      tape.matmul(tape.matmul(p, tape.param(*params.W_A)), tape.transpose(q)));
}

namespace detail {

// Shared InfoNCE body. pos_scores: n_pairs x 1 similarities of the true
// pairs; neg_scores: n_pairs x n_neg similarities against the sampled set.
// The positive joins its own denominator, which keeps the loss nonnegative.
template <typename S>
ad::Var infonce_from_scores(ad::Tape<S>& tape, ad::Var pos_scores, ad::Var neg_scores, ad::Var tau) {
  ad::Var pos_t = tape.div_by_scalar_node(pos_scores, tau);
  ad::Var neg_t = tape.div_by_scalar_node(neg_scores, tau);
  ad::Var logits = tape.concat_cols({pos_t, neg_t});
  ad::Var lse = tape.row_logsumexp(logits);
  return tape.mean_all(tape.sub(lse, pos_t));
}

}  // namespace detail

// Query-to-item alignment. query_vecs/pos_item_vecs hold one row per
// (query, clicked item) pair; neg_item_vecs is the sampled item set.
template <typename S>
ad::Var infonce_q2i(ad::Tape<S>& tape, AlignmentParams<S>& params, ad::Var query_vecs,
                    ad::Var pos_item_vecs, ad::Var neg_item_vecs) {
  Eigen::Index n_pairs = tape.val(query_vecs).rows();
  if (n_pairs != tape.val(pos_item_vecs).rows())
    throw ShapeError("infonce_q2i: one positive item per query required");
  if (n_pairs == 0) return tape.scalar(S(0));
  if (tape.val(neg_item_vecs).rows() == 0) throw DataError("infonce_q2i: empty negative set");
  ad::Var W = tape.param(*params.W_A);
  ad::Var tau = tape.param(*params.tau);
  ad::Var QW = tape.matmul(query_vecs, W);
  ad::Var pos = tape.tanh_(tape.row_sum(tape.hadamard(QW, pos_item_vecs)));
  ad::Var neg = tape.tanh_(tape.matmul(QW, tape.transpose(neg_item_vecs)));
  return detail::infonce_from_scores(tape, pos, neg, tau);
}

// Item-to-query alignment: same positive pairs, negatives drawn from queries.
template <typename S>
ad::Var infonce_i2q(ad::Tape<S>& tape, AlignmentParams<S>& params, ad::Var query_vecs,
                    ad::Var pos_item_vecs, ad::Var neg_query_vecs) {
  Eigen::Index n_pairs = tape.val(query_vecs).rows();
  if (n_pairs != tape.val(pos_item_vecs).rows())
    throw ShapeError("infonce_i2q: one positive item per query required");
  if (n_pairs == 0) return tape.scalar(S(0));
  if (tape.val(neg_query_vecs).rows() == 0) throw DataError("infonce_i2q: empty negative set");
  ad::Var W = tape.param(*params.W_A);
  ad::Var tau = tape.param(*params.tau);
  ad::Var QW = tape.matmul(query_vecs, W);
  ad::Var pos = tape.tanh_(tape.row_sum(tape.hadamard(QW, pos_item_vecs)));
  // s(q_f, i_k) for every sampled query f against each pair's item k
  ad::Var neg = tape.tanh_(tape.transpose(
      tape.matmul(tape.matmul(neg_query_vecs, W), tape.transpose(pos_item_vecs))));
  return detail::infonce_from_scores(tape, pos, neg, tau);
}

// L_ali = (L_q2i + L_i2q) / 2.
template <typename S>
ad::Var align_loss(ad::Tape<S>& tape, ad::Var l_q2i, ad::Var l_i2q) {
  return tape.affine(tape.add(l_q2i, l_i2q), S(0.5), S(0));
}

}  // namespace alignment
}  // namespace sesrec
