#pragma once

#include <algorithm>
#include <unordered_map>
#include <vector>

#include "sesrec/autodiff.hpp"
#include "sesrec/config.hpp"
#include "sesrec/data_model.hpp"

namespace sesrec {

// Maps external opaque ids to contiguous table rows. Row 0 is the reserved
// padding row; real ids start at 1.
class VocabMap {
 public:
  VocabMap() = default;
  explicit VocabMap(std::vector<int64_t> sorted_ids) : ids_(std::move(sorted_ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
    for (size_t i = 0; i < ids_.size(); ++i) to_index_[ids_[i]] = static_cast<int>(i) + 1;
  }

  int index_of(int64_t id) const {
    auto it = to_index_.find(id);
    if (it == to_index_.end()) throw DataError("unknown id " + std::to_string(id) + " in vocabulary");
    return it->second;
  }
  bool contains(int64_t id) const { return to_index_.count(id) > 0; }
  int64_t id_at(int index) const { return ids_.at(static_cast<size_t>(index) - 1); }
  int size() const { return static_cast<int>(ids_.size()); }
  int rows_with_pad() const { return size() + 1; }
  const std::vector<int64_t>& ids() const { return ids_; }

 private:
  std::vector<int64_t> ids_;
  std::unordered_map<int64_t, int> to_index_;
};

// The embedding side of the model: id lookup tables, position and search-type
// tables, and the two projections into the shared d-dimensional space.
template <typename S>
struct EmbeddingTables {
  int d_i = 0, d_q = 0, d = 0, d_u = 0, k = 0;
  int max_rec_len = 0, max_search_len = 0;

  VocabMap users, items, categories, queries, terms;

  ad::Param<S>* user_table = nullptr;   // rows_with_pad x d_u
  ad::Param<S>* item_id_table = nullptr;   // rows_with_pad x d_i/2
  ad::Param<S>* item_cat_table = nullptr;  // rows_with_pad x d_i/2
  ad::Param<S>* query_id_table = nullptr;  // rows_with_pad x d_q/2
  ad::Param<S>* term_table = nullptr;      // rows_with_pad x d_q/2
  ad::Param<S>* pos_rec = nullptr;         // max_rec_len x d
  ad::Param<S>* pos_search = nullptr;      // max_search_len x d
  ad::Param<S>* search_type = nullptr;     // k x d
  ad::Param<S>* W_i = nullptr;             // d_i x d
  ad::Param<S>* W_q = nullptr;             // d_q x d
};

namespace embeddings {

template <typename S>
ad::Mat<S> normal_init(int rows, int cols, double std, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std);
  ad::Mat<S> m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = static_cast<S>(dist(rng));
  return m;
}

template <typename S>
EmbeddingTables<S> build_tables(ad::ParamStore<S>& store, const Config& cfg, VocabMap users,
                                VocabMap items, VocabMap categories, VocabMap queries,
                                VocabMap terms, Rng& rng) {
  EmbeddingTables<S> t;
  t.d_i = cfg.d_i;
  t.d_q = cfg.d_q;
  t.d = cfg.d;
  t.d_u = cfg.d_u();
  t.k = cfg.k_search_sources;
  t.max_rec_len = cfg.max_rec_len;
  t.max_search_len = cfg.max_search_len;
  t.users = std::move(users);
  t.items = std::move(items);
  t.categories = std::move(categories);
  t.queries = std::move(queries);
  t.terms = std::move(terms);

  auto table = [&](const std::string& name, int rows, int cols, bool pad_row) -> ad::Param<S>* {
    auto m = normal_init<S>(rows, cols, cfg.init_std, rng);
    if (pad_row && rows > 0) m.row(0).setZero();
    return &store.add(name, std::move(m), /*is_table=*/true);
  };
  t.user_table = table("emb.user", t.users.rows_with_pad(), t.d_u, true);
  t.item_id_table = table("emb.item_id", t.items.rows_with_pad(), t.d_i / 2, true);
  t.item_cat_table = table("emb.item_cat", t.categories.rows_with_pad(), t.d_i - t.d_i / 2, true);
  t.query_id_table = table("emb.query_id", t.queries.rows_with_pad(), t.d_q / 2, true);
  t.term_table = table("emb.term", t.terms.rows_with_pad(), t.d_q - t.d_q / 2, true);
  t.pos_rec = table("emb.pos_rec", t.max_rec_len, t.d, false);
  t.pos_search = table("emb.pos_search", t.max_search_len, t.d, false);
  t.search_type = table("emb.search_type", t.k, t.d, false);
  t.W_i = &store.add("emb.W_i", normal_init<S>(t.d_i, t.d, cfg.init_std, rng));
  t.W_q = &store.add("emb.W_q", normal_init<S>(t.d_q, t.d, cfg.init_std, rng));
  return t;
}

// Item representation: [id embedding || category embedding], width d_i.
// Row i of(ids, cats) describes one item; pad rows use index 0 in both tables.
template <typename S>
ad::Var embed_items(ad::Tape<S>& tape, EmbeddingTables<S>& t, const std::vector<int>& id_rows,
                    const std::vector<int>& cat_rows) {
  if (id_rows.size() != cat_rows.size()) throw ShapeError("embed_items: id/category count mismatch");
  ad::Var ids = tape.gather(*t.item_id_table, id_rows);
  ad::Var cats = tape.gather(*t.item_cat_table, cat_rows);
  return tape.concat_cols({ids, cats});
}

template <typename S>
ad::Var embed_item(ad::Tape<S>& tape, EmbeddingTables<S>& t, ItemId item_id, int64_t category_id) {
  return embed_items(tape, t, {t.items.index_of(item_id)}, {t.categories.index_of(category_id)});
}

// Query representation: [query-id embedding || mean of term embeddings].
template <typename S>
ad::Var embed_query(ad::Tape<S>& tape, EmbeddingTables<S>& t, const Query& q) {
  if (q.term_ids.empty()) throw DataError("query " + std::to_string(q.query_id) + " has no terms");
  ad::Var qid = tape.gather(*t.query_id_table, {t.queries.index_of(q.query_id)});
  std::vector<int> term_rows;
  term_rows.reserve(q.term_ids.size());
  for (int64_t w : q.term_ids) term_rows.push_back(t.terms.index_of(w));
  ad::Var term_rows_var = tape.gather(*t.term_table, term_rows);
  ad::Mat<S> avg = ad::Mat<S>::Constant(1, static_cast<Eigen::Index>(term_rows.size()),
                                        S(1) / static_cast<S>(term_rows.size()));
  ad::Var mean = tape.matmul(tape.value(std::move(avg)), term_rows_var);
  return tape.concat_cols({qid, mean});
}

template <typename S>
ad::Var embed_queries(ad::Tape<S>& tape, EmbeddingTables<S>& t, const std::vector<Query>& qs) {
  std::vector<ad::Var> rows;
  rows.reserve(qs.size());
  for (const auto& q : qs) rows.push_back(embed_query(tape, t, q));
  return tape.concat_rows(rows);
}

// E_hat = E * W; interacted and clicked items share W_i.
template <typename S>
ad::Var project_items(ad::Tape<S>& tape, EmbeddingTables<S>& t, ad::Var E_i) {
  if (tape.val(E_i).cols() != t.d_i) throw ShapeError("project_items: expected width d_i");
  return tape.matmul(E_i, tape.param(*t.W_i));
}

template <typename S>
ad::Var project_queries(ad::Tape<S>& tape, EmbeddingTables<S>& t, ad::Var E_q) {
  if (tape.val(E_q).cols() != t.d_q) throw ShapeError("project_queries: expected width d_q");
  return tape.matmul(E_q, tape.param(*t.W_q));
}

// Mean-pools clicked-item rows per issued query. click_counts[j] rows of E_c
// belong to query j; zero-click queries produce an exactly-zero row.
template <typename S>
ad::Var group_pool_clicked(ad::Tape<S>& tape, ad::Var E_c, const std::vector<int>& click_counts) {
  Eigen::Index total = 0;
  for (int c : click_counts) {
    if (c < 0) throw ShapeError("group_pool_clicked: negative count");
    total += c;
  }
  if (total != tape.val(E_c).rows())
    throw ShapeError("group_pool_clicked: counts sum to " + std::to_string(total) + " but E_c has " +
                     std::to_string(tape.val(E_c).rows()) + " rows");
  ad::Mat<S> pool = ad::Mat<S>::Zero(static_cast<Eigen::Index>(click_counts.size()), total);
  Eigen::Index off = 0;
  for (size_t j = 0; j < click_counts.size(); ++j) {
    for (int c = 0; c < click_counts[j]; ++c) pool(static_cast<Eigen::Index>(j), off + c) = S(1) / static_cast<S>(click_counts[j]);
    off += click_counts[j];
  }
  return tape.matmul(tape.value(std::move(pool)), E_c);
}

// Zeroes padded rows; no-op when every position is real.
template <typename S>
ad::Var apply_row_mask(ad::Tape<S>& tape, ad::Var X, const std::vector<uint8_t>& row_mask) {
  if (static_cast<Eigen::Index>(row_mask.size()) != tape.val(X).rows())
    throw ShapeError("apply_row_mask: mask length mismatch");
  if (std::all_of(row_mask.begin(), row_mask.end(), [](uint8_t m) { return m != 0; })) return X;
  ad::Mat<S> m = ad::Mat<S>::Zero(tape.val(X).rows(), tape.val(X).cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (row_mask[i]) m.row(i).setOnes();
  return tape.hadamard(X, tape.value(std::move(m)));
}

// E_r = (E_hat_i + P_r[0..T_r)) with padded rows forced to zero.
template <typename S>
ad::Var rec_bias_encode(ad::Tape<S>& tape, EmbeddingTables<S>& t, ad::Var E_hat_i,
                        const std::vector<uint8_t>& mask) {
  Eigen::Index T = tape.val(E_hat_i).rows();
  if (T > t.pos_rec->value.rows())
    throw ShapeError("rec sequence length " + std::to_string(T) + " exceeds position table (" +
                     std::to_string(t.pos_rec->value.rows()) + ")");
  std::vector<int> rows(static_cast<size_t>(T));
  for (Eigen::Index i = 0; i < T; ++i) rows[static_cast<size_t>(i)] = static_cast<int>(i);
  ad::Var pos = tape.gather(*t.pos_rec, rows);
  return apply_row_mask(tape, tape.add(E_hat_i, pos), mask);
}

// E_s = (E_hat_q + E_tilde_c + P_s[0..T_s) + M_s[source_types]) masked.
template <typename S>
ad::Var search_bias_encode(ad::Tape<S>& tape, EmbeddingTables<S>& t, ad::Var E_hat_q,
                           ad::Var E_tilde_c, const std::vector<int>& source_types,
                           const std::vector<uint8_t>& mask) {
  Eigen::Index T = tape.val(E_hat_q).rows();
  if (T > t.pos_search->value.rows())
    throw ShapeError("search sequence length " + std::to_string(T) + " exceeds position table (" +
                     std::to_string(t.pos_search->value.rows()) + ")");
  if (static_cast<Eigen::Index>(source_types.size()) != T)
    throw ShapeError("search_bias_encode: one source type per query required");
  for (int s : source_types)
    if (s < 0 || s >= t.k)
      throw DataError("search source type " + std::to_string(s) + " out of range [0," +
                      std::to_string(t.k) + ")");
  std::vector<int> pos_rows(static_cast<size_t>(T));
  for (Eigen::Index i = 0; i < T; ++i) pos_rows[static_cast<size_t>(i)] = static_cast<int>(i);
  ad::Var pos = tape.gather(*t.pos_search, pos_rows);
  ad::Var types = tape.gather(*t.search_type, source_types);
  ad::Var sum = tape.add(tape.add(E_hat_q, E_tilde_c), tape.add(pos, types));
  return apply_row_mask(tape, sum, mask);
}

}  // namespace embeddings
}  // namespace sesrec
