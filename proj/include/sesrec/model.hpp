#pragma once

#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "sesrec/alignment.hpp"
#include "sesrec/autodiff.hpp"
#include "sesrec/config.hpp"
#include "sesrec/data_model.hpp"
#include "sesrec/disentangle.hpp"
#include "sesrec/embeddings.hpp"
#include "sesrec/interest_head.hpp"
#include "sesrec/seq_encoder.hpp"

namespace sesrec {

// Everything the trainer and evaluator need from one ingested dataset.
struct DatasetBundle {
  Histories histories;
  DatasetSplit split;
  Catalog catalog;
  IngestReport ingest;
};

// Full preparation pipeline: history building, unpopular-item and user
// filtering, leave-one-out splitting, and prefix truncation.
inline DatasetBundle prepare_dataset(const std::vector<RawRecord>& records, const Config& cfg) {
  DatasetBundle b;
  b.histories = build_histories(records, &b.ingest);
  b.histories = filter_items(b.histories, cfg.min_item_count);
  b.histories = filter_users(b.histories, cfg.min_interactions);
  if (b.histories.empty()) throw DataError("no users remain after filtering");
  b.catalog = build_catalog(b.histories);
  b.split = leave_one_out_split(b.histories);
  auto truncate_examples = [&](std::vector<Example>& xs) {
    for (auto& ex : xs) {
      if (ex.rec_prefix.size() > static_cast<size_t>(cfg.max_rec_len))
        ex.rec_prefix.erase(ex.rec_prefix.begin(),
                            ex.rec_prefix.end() - cfg.max_rec_len);
      if (ex.search_prefix.size() > static_cast<size_t>(cfg.max_search_len))
        ex.search_prefix.erase(ex.search_prefix.begin(),
                               ex.search_prefix.end() - cfg.max_search_len);
    }
  };
  truncate_examples(b.split.train);
  truncate_examples(b.split.validation);
  truncate_examples(b.split.test);
  return b;
}

// Per-example interest-separation snapshot used by the analysis commands.
template <typename S>
struct DisentangleSnapshot {
  std::vector<S> a_s, a_r;
  Selection sel_s, sel_r;
};

// Negative samples feeding the alignment InfoNCE pair.
struct AlignNegatives {
  std::vector<std::pair<ItemId, int64_t>> items;  // (item, category)
  std::vector<Query> queries;
};

template <typename S>
class Model {
 public:
  Model(const Config& cfg, const DatasetBundle& data, uint64_t init_seed)
      : cfg_(cfg), item_category_(data.catalog.item_category) {
    std::vector<int64_t> user_ids;
    for (const auto& [uid, h] : data.histories) user_ids.push_back(uid);
    std::vector<int64_t> cat_ids;
    {
      std::set<int64_t> cats;
      bool any_missing = false;
      for (ItemId it : data.catalog.items) {
        auto found = item_category_.find(it);
        if (found == item_category_.end())
          any_missing = true;
        else
          cats.insert(found->second);
      }
      if (any_missing || cats.empty()) cats.insert(kNoCategory);
      cat_ids.assign(cats.begin(), cats.end());
    }
    std::vector<int64_t> term_ids;
    {
      std::set<int64_t> terms;
      for (const auto& [qid, q] : data.catalog.query_defs)
        for (int64_t t : q.term_ids) terms.insert(t);
      term_ids.assign(terms.begin(), terms.end());
    }
    Rng rng = make_rng(init_seed, /*salt=*/0xE5EC);
    tables_ = embeddings::build_tables(store_, cfg_, VocabMap(user_ids),
                                       VocabMap(data.catalog.items), VocabMap(cat_ids),
                                       VocabMap(data.catalog.queries), VocabMap(term_ids), rng);
    enc_rec_ = seq_encoder::build_encoder(store_, "enc.rec", cfg_, rng);
    enc_search_ = seq_encoder::build_encoder(store_, "enc.search", cfg_, rng);
    align_ = alignment::build_alignment(store_, cfg_, rng);
    dis_ = disentangle::build_disentangle(store_, cfg_, rng);
    head_ = interest_head::build_interest_head(store_, cfg_, rng);
  }

  const Config& config() const { return cfg_; }
  ad::ParamStore<S>& store() { return store_; }
  const ad::ParamStore<S>& store() const { return store_; }
  EmbeddingTables<S>& tables() { return tables_; }
  AlignmentParams<S>& align_params() { return align_; }

  int64_t category_of(ItemId item) const {
    auto it = item_category_.find(item);
    return it == item_category_.end() ? kNoCategory : it->second;
  }

  struct Context {
    ad::Var H_r, H_s;
    ad::Var a_s, a_r;
    Selection sel_s, sel_r;
    ad::Var e_u;
    std::vector<int> rec_full, search_full;
    // alignment inputs: projected query rows, projected clicked-item rows,
    // and (query row, click row) index pairs
    ad::Var E_hat_q, E_hat_c;
    std::vector<int> pair_query_rows, pair_click_rows;
  };

  // Runs embedding, bias encoding, both encoders, and interest separation for
  // one example prefix. The candidate-independent part of the forward pass.
  Context build_context(ad::Tape<S>& tape, const Example& ex, double dropout_rate = 0.0,
                        Rng* dropout_rng = nullptr) {
    if (ex.rec_prefix.empty()) throw DataError("example has an empty rec prefix");
    if (ex.search_prefix.empty()) throw DataError("example has an empty search prefix");
    const int T_r = static_cast<int>(ex.rec_prefix.size());
    const int T_s = static_cast<int>(ex.search_prefix.size());
    Context ctx;

    // Recommendation stream.
    std::vector<int> item_rows, cat_rows;
    for (const auto& e : ex.rec_prefix) {
      item_rows.push_back(tables_.items.index_of(e.item_id));
      cat_rows.push_back(tables_.categories.index_of(category_of(e.item_id)));
    }
    std::vector<uint8_t> rec_mask(T_r, 1);
    ad::Var E_i = embeddings::embed_items(tape, tables_, item_rows, cat_rows);
    ad::Var E_hat_i = embeddings::project_items(tape, tables_, E_i);
    ad::Var E_r = embeddings::rec_bias_encode(tape, tables_, E_hat_i, rec_mask);
    ctx.H_r = seq_encoder::encode(tape, enc_rec_, E_r, rec_mask, dropout_rate, dropout_rng);

    // Search stream: queries plus grouped clicked items.
    std::vector<Query> queries;
    std::vector<int> click_item_rows, click_cat_rows, click_counts, source_types;
    for (const auto& s : ex.search_prefix) {
      queries.push_back(s.query);
      source_types.push_back(s.query.source_type);
      click_counts.push_back(static_cast<int>(s.clicked_item_ids.size()));
      for (ItemId c : s.clicked_item_ids) {
        ctx.pair_query_rows.push_back(static_cast<int>(queries.size()) - 1);
        ctx.pair_click_rows.push_back(static_cast<int>(click_item_rows.size()));
        click_item_rows.push_back(tables_.items.index_of(c));
        click_cat_rows.push_back(tables_.categories.index_of(category_of(c)));
      }
    }
    std::vector<uint8_t> search_mask(T_s, 1);
    ad::Var E_q = embeddings::embed_queries(tape, tables_, queries);
    ctx.E_hat_q = embeddings::project_queries(tape, tables_, E_q);
    ad::Var E_c = embeddings::embed_items(tape, tables_, click_item_rows, click_cat_rows);
    ctx.E_hat_c = embeddings::project_items(tape, tables_, E_c);
    ad::Var E_tilde_c = embeddings::group_pool_clicked(tape, ctx.E_hat_c, click_counts);
    ad::Var E_s =
        embeddings::search_bias_encode(tape, tables_, ctx.E_hat_q, E_tilde_c, source_types, search_mask);
    ctx.H_s = seq_encoder::encode(tape, enc_search_, E_s, search_mask, dropout_rate, dropout_rng);

    // Interest separation.
    ad::Var A = disentangle::affinity(tape, dis_, ctx.H_s, ctx.H_r, search_mask, rec_mask);
    auto [a_s, a_r] = disentangle::similarity_scores(tape, dis_, A, ctx.H_s, ctx.H_r, search_mask, rec_mask);
    ctx.a_s = a_s;
    ctx.a_r = a_r;
    auto a_s_vals = disentangle::row_to_vector(tape.val(a_s));
    auto a_r_vals = disentangle::row_to_vector(tape.val(a_r));
    S gamma_s = disentangle::selection_threshold(a_s_vals, search_mask, cfg_.threshold_strategy,
                                                 cfg_.threshold_const);
    S gamma_r = disentangle::selection_threshold(a_r_vals, rec_mask, cfg_.threshold_strategy,
                                                 cfg_.threshold_const);
    ctx.sel_s = disentangle::hard_select(a_s_vals, search_mask, gamma_s);
    ctx.sel_r = disentangle::hard_select(a_r_vals, rec_mask, gamma_r);

    ctx.e_u = tape.gather(*tables_.user_table, {tables_.users.index_of(ex.user_id)});
    ctx.rec_full.resize(T_r);
    for (int i = 0; i < T_r; ++i) ctx.rec_full[i] = i;
    ctx.search_full.resize(T_s);
    for (int i = 0; i < T_s; ++i) ctx.search_full[i] = i;
    return ctx;
  }

  // Interaction probability for one candidate item given a built context.
  ad::Var score_candidate(ad::Tape<S>& tape, const Context& ctx, ItemId item) {
    ad::Var e_v = embeddings::embed_item(tape, tables_, item, category_of(item));
    ad::Var u_r, u_s;
    if (cfg_.use_mie) {
      u_r = interest_head::extract_interests(tape, ctx.H_r, ctx.rec_full, ctx.sel_r, e_v,
                                             tape.param(*head_.W_d_rec));
      u_s = interest_head::extract_interests(tape, ctx.H_s, ctx.search_full, ctx.sel_s, e_v,
                                             tape.param(*head_.W_d_search));
    } else {
      u_r = interest_head::target_attention(tape, ctx.H_r, ctx.rec_full, e_v,
                                            tape.param(*head_.W_d_rec));
      u_s = interest_head::target_attention(tape, ctx.H_s, ctx.search_full, e_v,
                                            tape.param(*head_.W_d_search));
    }
    return interest_head::predict(tape, head_, u_r, u_s, e_v, ctx.e_u);
  }

  struct LossVars {
    ad::Var total, rec, ali, con;
    bool align_pairs_empty = false;
  };

  // Multi-task loss for one training example. Candidates are the target item
  // followed by sampled negatives. The L2 penalty is handled by the trainer.
  LossVars example_loss(ad::Tape<S>& tape, const Example& ex, const std::vector<ItemId>& negatives,
                        const AlignNegatives& align_negs, double dropout_rate = 0.0,
                        Rng* dropout_rng = nullptr) {
    Context ctx = build_context(tape, ex, dropout_rate, dropout_rng);
    LossVars out;

    // Recommendation loss over 1 positive + N-1 negatives.
    std::vector<ad::Var> probs;
    std::vector<int> labels;
    probs.push_back(score_candidate(tape, ctx, ex.target_item));
    labels.push_back(1);
    for (ItemId neg : negatives) {
      probs.push_back(score_candidate(tape, ctx, neg));
      labels.push_back(0);
    }
    out.rec = interest_head::rec_loss(tape, probs, labels);

    // Query-item alignment.
    if (ctx.pair_query_rows.empty()) {
      out.ali = tape.scalar(S(0));
      out.align_pairs_empty = true;
    } else {
      if (align_negs.items.empty() || align_negs.queries.empty())
        throw DataError("alignment negatives must be non-empty when click pairs exist");
      ad::Var q_pairs = tape.select_rows(ctx.E_hat_q, ctx.pair_query_rows);
      ad::Var i_pairs = tape.select_rows(ctx.E_hat_c, ctx.pair_click_rows);
      std::vector<int> ni_rows, nc_rows;
      for (const auto& [item, cat] : align_negs.items) {
        ni_rows.push_back(tables_.items.index_of(item));
        nc_rows.push_back(tables_.categories.index_of(cat));
      }
      ad::Var neg_items = embeddings::project_items(
          tape, tables_, embeddings::embed_items(tape, tables_, ni_rows, nc_rows));
      ad::Var neg_queries = embeddings::project_queries(
          tape, tables_, embeddings::embed_queries(tape, tables_, align_negs.queries));
      ad::Var l_q2i = alignment::infonce_q2i(tape, align_, q_pairs, i_pairs, neg_items);
      ad::Var l_i2q = alignment::infonce_i2q(tape, align_, q_pairs, i_pairs, neg_queries);
      out.ali = alignment::align_loss(tape, l_q2i, l_i2q);
    }

    // Interest-contrast loss.
    auto rec_vecs = disentangle::build_contrast_vectors(tape, ctx.H_r, ctx.a_r, ctx.sel_r);
    auto search_vecs = disentangle::build_contrast_vectors(tape, ctx.H_s, ctx.a_s, ctx.sel_s);
    out.con = disentangle::contrast_loss(tape, rec_vecs, search_vecs, static_cast<S>(cfg_.margin));

    out.total = interest_head::total_loss(tape, out.rec, out.ali, out.con,
                                          static_cast<S>(cfg_.alpha), static_cast<S>(cfg_.beta));
    return out;
  }

  // No-grad scoring of a candidate list; used by the evaluator.
  std::vector<S> score_candidates(const Example& ex, const std::vector<ItemId>& candidates) {
    ad::Tape<S> tape(/*grad_enabled=*/false);
    Context ctx = build_context(tape, ex);
    std::vector<S> out;
    out.reserve(candidates.size());
    for (ItemId c : candidates) out.push_back(tape.val(score_candidate(tape, ctx, c))(0, 0));
    return out;
  }

  DisentangleSnapshot<S> disentangle_snapshot(const Example& ex) {
    ad::Tape<S> tape(/*grad_enabled=*/false);
    Context ctx = build_context(tape, ex);
    DisentangleSnapshot<S> snap;
    snap.a_s = disentangle::row_to_vector(tape.val(ctx.a_s));
    snap.a_r = disentangle::row_to_vector(tape.val(ctx.a_r));
    snap.sel_s = ctx.sel_s;
    snap.sel_r = ctx.sel_r;
    return snap;
  }

  // Projected query/clicked-item cosine per (query, clicked item) pair over a
  // set of histories; feeds the alignment-effect analysis.
  std::vector<S> query_click_cosines(const Histories& histories) {
    std::vector<S> out;
    for (const auto& [uid, h] : histories) {
      for (const auto& s : h.search_events) {
        if (s.clicked_item_ids.empty()) continue;
        ad::Tape<S> tape(/*grad_enabled=*/false);
        ad::Var eq = embeddings::project_queries(tape, tables_,
                                                 embeddings::embed_query(tape, tables_, s.query));
        Eigen::Matrix<S, 1, Eigen::Dynamic> qv = tape.val(eq).row(0);
        for (ItemId c : s.clicked_item_ids) {
          ad::Var ec = embeddings::project_items(
              tape, tables_, embeddings::embed_item(tape, tables_, c, category_of(c)));
          Eigen::Matrix<S, 1, Eigen::Dynamic> iv = tape.val(ec).row(0);
          S denom = qv.norm() * iv.norm();
          out.push_back(denom > S(0) ? qv.dot(iv) / denom : S(0));
        }
      }
    }
    return out;
  }

 private:
  Config cfg_;
  std::unordered_map<ItemId, int64_t> item_category_;
  ad::ParamStore<S> store_;
  EmbeddingTables<S> tables_;
  EncoderParams<S> enc_rec_;
  EncoderParams<S> enc_search_;
  AlignmentParams<S> align_;
  DisentangleParams<S> dis_;
  InterestParams<S> head_;
};

}  // namespace sesrec
