#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "sesrec/autodiff.hpp"
#include "sesrec/config.hpp"
#include "sesrec/embeddings.hpp"

namespace sesrec {

template <typename S>
struct DisentangleParams {
  ad::Param<S>* W_l = nullptr;  // d x d
  ad::Param<S>* W_r = nullptr;  // 1 x d, scores the search side
  ad::Param<S>* W_s = nullptr;  // 1 x d, scores the rec side
};

// Index partition of one sequence's real positions into similar-interest (P)
// and dissimilar-interest (N) sets. degenerate_n means N could not be made
// non-empty (length-1 sequence) and the triplet term must be skipped.
struct Selection {
  std::vector<int> P;
  std::vector<int> N;
  bool degenerate_n = false;
};

namespace disentangle {

template <typename S>
DisentangleParams<S> build_disentangle(ad::ParamStore<S>& store, const Config& cfg, Rng& rng) {
  DisentangleParams<S> p;
  p.W_l = &store.add("dis.W_l", embeddings::normal_init<S>(cfg.d, cfg.d, cfg.init_std, rng));
  p.W_r = &store.add("dis.W_r", embeddings::normal_init<S>(1, cfg.d, cfg.init_std, rng));
  p.W_s = &store.add("dis.W_s", embeddings::normal_init<S>(1, cfg.d, cfg.init_std, rng));
  return p;
}

// A = tanh(H_s W_l H_r^T), T_s x T_r; rows/columns of padded positions are
// zeroed so they contribute nothing downstream.
template <typename S>
ad::Var affinity(ad::Tape<S>& tape, DisentangleParams<S>& p, ad::Var H_s, ad::Var H_r,
                 const std::vector<uint8_t>& search_mask, const std::vector<uint8_t>& rec_mask) {
  if (tape.val(H_s).cols() != tape.val(H_r).cols()) throw ShapeError("affinity: width mismatch");
  ad::Var A = tape.tanh_(
      tape.matmul(tape.matmul(H_s, tape.param(*p.W_l)), tape.transpose(H_r)));
  bool all_real = std::all_of(search_mask.begin(), search_mask.end(), [](uint8_t m) { return m != 0; }) &&
                  std::all_of(rec_mask.begin(), rec_mask.end(), [](uint8_t m) { return m != 0; });
  if (all_real) return A;
  ad::Mat<S> m = ad::Mat<S>::Zero(tape.val(A).rows(), tape.val(A).cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      if (search_mask[i] && rec_mask[j]) m(i, j) = S(1);
  return tape.hadamard(A, tape.value(std::move(m)));
}

// Normalized similarity scores: a_s = softmax(W_r H_r^T A^T) over real search
// positions, a_r = softmax(W_s H_s^T A) over real rec positions. Both are
// 1 x T row vectors with exact zeros at padding.
template <typename S>
std::pair<ad::Var, ad::Var> similarity_scores(ad::Tape<S>& tape, DisentangleParams<S>& p, ad::Var A,
                                              ad::Var H_s, ad::Var H_r,
                                              const std::vector<uint8_t>& search_mask,
                                              const std::vector<uint8_t>& rec_mask) {
  if (std::none_of(search_mask.begin(), search_mask.end(), [](uint8_t m) { return m != 0; }) ||
      std::none_of(rec_mask.begin(), rec_mask.end(), [](uint8_t m) { return m != 0; }))
    throw DataError("similarity_scores: a sequence has no real positions");
  ad::Var logits_s =
      tape.matmul(tape.matmul(tape.param(*p.W_r), tape.transpose(H_r)), tape.transpose(A));
  ad::Var logits_r = tape.matmul(tape.matmul(tape.param(*p.W_s), tape.transpose(H_s)), A);
  ad::Var a_s = tape.row_softmax_masked(logits_s, search_mask);
  ad::Var a_r = tape.row_softmax_masked(logits_r, rec_mask);
  return {a_s, a_r};
}

// Selection threshold for the configured strategy, computed over the scores
// of real positions.
template <typename S>
S selection_threshold(const std::vector<S>& scores, const std::vector<uint8_t>& mask,
                      ThresholdStrategy strategy, double const_value) {
  std::vector<S> real;
  for (size_t j = 0; j < scores.size(); ++j)
    if (mask[j]) real.push_back(scores[j]);
  if (real.empty()) throw DataError("selection_threshold: no real positions");
  switch (strategy) {
    case ThresholdStrategy::kMean:
      return S(1) / static_cast<S>(real.size());
    case ThresholdStrategy::kMedian: {
      std::sort(real.begin(), real.end());
      size_t n = real.size();
      return n % 2 == 1 ? real[n / 2] : (real[n / 2 - 1] + real[n / 2]) / S(2);
    }
    case ThresholdStrategy::kConst:
      return static_cast<S>(const_value);
  }
  throw ConfigError("unknown threshold strategy");
}

// Hard selection P = {j : a_j > gamma}, N = {j : a_j <= gamma} over real
// positions. Fallbacks keep both sides non-empty whenever the sequence has at
// least two real positions: an empty P receives argmax(a), an empty N
// receives argmin(a) (ties broken toward the lowest index). A single-position
// sequence ends with P = {j}, N empty, flagged degenerate.
template <typename S>
Selection hard_select(const std::vector<S>& scores, const std::vector<uint8_t>& mask, S gamma) {
  if (scores.size() != mask.size()) throw ShapeError("hard_select: mask length mismatch");
  Selection sel;
  int argmax = -1, argmin = -1;
  for (size_t j = 0; j < scores.size(); ++j) {
    if (!mask[j]) continue;
    if (argmax < 0 || scores[j] > scores[argmax]) argmax = static_cast<int>(j);
    if (argmin < 0 || scores[j] < scores[argmin]) argmin = static_cast<int>(j);
    if (scores[j] > gamma)
      sel.P.push_back(static_cast<int>(j));
    else
      sel.N.push_back(static_cast<int>(j));
  }
  if (argmax < 0) throw DataError("hard_select: no real positions");
  if (sel.P.empty()) {
    sel.P.push_back(argmax);
    sel.N.erase(std::find(sel.N.begin(), sel.N.end(), argmax));
  }
  if (sel.N.empty()) {
    if (sel.P.size() >= 2) {
      sel.N.push_back(argmin);
      sel.P.erase(std::find(sel.P.begin(), sel.P.end(), argmin));
    } else {
      sel.degenerate_n = true;
    }
  }
  return sel;
}

template <typename S>
std::vector<S> row_to_vector(const ad::Mat<S>& row) {
  std::vector<S> out(static_cast<size_t>(row.cols()));
  for (Eigen::Index j = 0; j < row.cols(); ++j) out[static_cast<size_t>(j)] = row(0, j);
  return out;
}

// Mean of the rows of H indexed by `set`, as a constant-selector matmul.
template <typename S>
ad::Var mean_of_rows(ad::Tape<S>& tape, ad::Var H, const std::vector<int>& set) {
  if (set.empty()) throw ShapeError("mean_of_rows: empty index set");
  ad::Mat<S> sel = ad::Mat<S>::Zero(1, tape.val(H).rows());
  for (int j : set) sel(0, j) = S(1) / static_cast<S>(set.size());
  return tape.matmul(tape.value(std::move(sel)), H);
}

template <typename S>
struct ContrastVectors {
  ad::Var anchor;    // score-weighted aggregate of all real positions
  ad::Var positive;  // mean over P
  std::optional<ad::Var> negative;  // mean over N, absent when degenerate
};

template <typename S>
ContrastVectors<S> build_contrast_vectors(ad::Tape<S>& tape, ad::Var H, ad::Var a,
                                          const Selection& sel) {
  ContrastVectors<S> out{tape.matmul(a, H), mean_of_rows(tape, H, sel.P), std::nullopt};
  if (!sel.degenerate_n) out.negative = mean_of_rows(tape, H, sel.N);
  return out;
}

// max{ ||a-p|| - ||a-n|| + m, 0 } with Euclidean distances.
template <typename S>
ad::Var triplet_loss(ad::Tape<S>& tape, ad::Var anchor, ad::Var positive, ad::Var negative, S margin) {
  auto dist = [&](ad::Var x, ad::Var y) {
    ad::Var diff = tape.sub(x, y);
    return tape.sqrt_(tape.row_sum(tape.hadamard(diff, diff)));
  };
  ad::Var gap = tape.affine(tape.sub(dist(anchor, positive), dist(anchor, negative)), S(1), margin);
  return tape.relu(gap);
}

// L_con = triplet(rec) + triplet(search); degenerate sides contribute 0.
template <typename S>
ad::Var contrast_loss(ad::Tape<S>& tape, const ContrastVectors<S>& rec,
                      const ContrastVectors<S>& search, S margin) {
  ad::Var total = tape.scalar(S(0));
  if (rec.negative) total = tape.add(total, triplet_loss(tape, rec.anchor, rec.positive, *rec.negative, margin));
  if (search.negative)
    total = tape.add(total, triplet_loss(tape, search.anchor, search.positive, *search.negative, margin));
  return total;
}

}  // namespace disentangle
}  // namespace sesrec
