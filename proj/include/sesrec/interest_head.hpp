#pragma once

#include <vector>

#include "sesrec/autodiff.hpp"
#include "sesrec/config.hpp"
#include "sesrec/disentangle.hpp"
#include "sesrec/embeddings.hpp"

namespace sesrec {

template <typename S>
struct InterestParams {
  ad::Param<S>* W_d_rec = nullptr;     // d x d_i, rec-side target attention
  ad::Param<S>* W_d_search = nullptr;  // d x d_i, search-side target attention
  ad::Param<S>* mlp_W1 = nullptr;      // in x hidden
  ad::Param<S>* mlp_b1 = nullptr;      // 1 x hidden
  ad::Param<S>* mlp_W2 = nullptr;      // hidden x 1
  ad::Param<S>* mlp_b2 = nullptr;      // 1 x 1
  bool use_mie = true;
  int d = 0, d_i = 0, d_u = 0;

  int interest_width() const { return use_mie ? 3 * d : d; }
  int mlp_input_width() const { return 2 * interest_width() + d_i + d_u; }
};

namespace interest_head {

constexpr double kProbEps = 1e-7;

template <typename S>
InterestParams<S> build_interest_head(ad::ParamStore<S>& store, const Config& cfg, Rng& rng) {
  InterestParams<S> p;
  p.use_mie = cfg.use_mie;
  p.d = cfg.d;
  p.d_i = cfg.d_i;
  p.d_u = cfg.d_u();
  p.W_d_rec = &store.add("mie.W_d_rec", embeddings::normal_init<S>(cfg.d, cfg.d_i, cfg.init_std, rng));
  p.W_d_search =
      &store.add("mie.W_d_search", embeddings::normal_init<S>(cfg.d, cfg.d_i, cfg.init_std, rng));
  int in = p.mlp_input_width();
  p.mlp_W1 = &store.add("mlp.W1", embeddings::normal_init<S>(in, cfg.mlp_hidden, cfg.init_std, rng));
  p.mlp_b1 = &store.add("mlp.b1", ad::Mat<S>::Zero(1, cfg.mlp_hidden));
  p.mlp_W2 = &store.add("mlp.W2", embeddings::normal_init<S>(cfg.mlp_hidden, 1, cfg.init_std, rng));
  p.mlp_b2 = &store.add("mlp.b2", ad::Mat<S>::Zero(1, 1));
  return p;
}

// Candidate-conditioned pooling over the rows of H indexed by `set`:
// u = sum_j softmax_j(h_j W_d e_v^T) h_j.
template <typename S>
ad::Var target_attention(ad::Tape<S>& tape, ad::Var H, const std::vector<int>& set, ad::Var e_v,
                         ad::Var W_d) {
  if (set.empty()) throw ShapeError("target_attention: empty index set");
  ad::Var rows = tape.select_rows(H, set);
  ad::Var logits = tape.transpose(tape.matmul(tape.matmul(rows, W_d), tape.transpose(e_v)));
  std::vector<uint8_t> all_real(set.size(), 1);
  ad::Var attn = tape.row_softmax_masked(logits, all_real);
  return tape.matmul(attn, rows);
}

// u = u_all || u_sim || u_diff. A degenerate (empty) N set yields a zero
// u_diff so short histories stay usable.
template <typename S>
ad::Var extract_interests(ad::Tape<S>& tape, ad::Var H, const std::vector<int>& full_set,
                          const Selection& sel, ad::Var e_v, ad::Var W_d) {
  ad::Var u_all = target_attention(tape, H, full_set, e_v, W_d);
  ad::Var u_sim = target_attention(tape, H, sel.P, e_v, W_d);
  ad::Var u_diff = sel.degenerate_n
                       ? tape.value(ad::Mat<S>::Zero(1, tape.val(H).cols()))
                       : target_attention(tape, H, sel.N, e_v, W_d);
  return tape.concat_cols({u_all, u_sim, u_diff});
}

// Two-layer MLP with a sigmoid output in (0, 1).
template <typename S>
ad::Var predict(ad::Tape<S>& tape, InterestParams<S>& p, ad::Var u_r, ad::Var u_s, ad::Var e_v,
                ad::Var e_u) {
  ad::Var z = tape.concat_cols({u_r, u_s, e_v, e_u});
  if (tape.val(z).cols() != p.mlp_input_width())
    throw ShapeError("predict: MLP input width " + std::to_string(tape.val(z).cols()) +
                     " != expected " + std::to_string(p.mlp_input_width()));
  ad::Var h = tape.relu(
      tape.add_row_broadcast(tape.matmul(z, tape.param(*p.mlp_W1)), tape.param(*p.mlp_b1)));
  return tape.sigmoid(
      tape.add_row_broadcast(tape.matmul(h, tape.param(*p.mlp_W2)), tape.param(*p.mlp_b2)));
}

// Negative log-likelihood over the candidate set (one positive, N-1
// negatives); probabilities are clamped away from {0, 1}.
template <typename S>
ad::Var rec_loss(ad::Tape<S>& tape, const std::vector<ad::Var>& probs,
                 const std::vector<int>& labels) {
  if (probs.empty() || probs.size() != labels.size())
    throw ShapeError("rec_loss: scores and labels must be non-empty and equal-length");
  ad::Var sum = tape.scalar(S(0));
  for (size_t i = 0; i < probs.size(); ++i) {
    ad::Var p = tape.clamp(probs[i], S(kProbEps), S(1) - S(kProbEps));
    ad::Var ll = labels[i] ? tape.log_(p) : tape.log_(tape.affine(p, S(-1), S(1)));
    sum = tape.add(sum, ll);
  }
  return tape.affine(sum, S(-1) / static_cast<S>(probs.size()), S(0));
}

// L = L_rec + alpha * L_ali + beta * L_con. The L2 penalty is evaluated and
// differentiated outside the tape (see trainer), so it enters as a constant.
template <typename S>
ad::Var total_loss(ad::Tape<S>& tape, ad::Var l_rec, ad::Var l_ali, ad::Var l_con, S alpha, S beta,
                   S penalty_value = S(0)) {
  ad::Var weighted = tape.add(l_rec, tape.add(tape.affine(l_ali, alpha, S(0)),
                                              tape.affine(l_con, beta, S(0))));
  if (penalty_value != S(0)) weighted = tape.affine(weighted, S(1), penalty_value);
  return weighted;
}

}  // namespace interest_head
}  // namespace sesrec
