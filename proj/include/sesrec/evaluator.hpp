#pragma once

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sesrec/data_model.hpp"
#include "sesrec/model.hpp"

namespace sesrec {

// One user's sampled-candidate ranking outcome.
struct EvalRanking {
  UserId user = 0;
  ItemId ground_truth = 0;
  std::vector<ItemId> candidates;  // ground truth first, then negatives
  std::vector<double> scores;      // same order
  int rank = 0;                    // 1-based rank of the ground truth
};

struct MetricRow {
  UserId user;
  int rank;
  double hit1, hit5, hit10, ndcg5, ndcg10, mrr;
};

struct MetricTable {
  std::map<std::string, double> means;
  std::vector<MetricRow> per_user;
};

namespace evaluator {

// Pessimistic tie handling: the ground truth ranks below every candidate with
// an equal score.
inline int rank_of_ground_truth(const std::vector<double>& scores) {
  int rank = 1;
  for (size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] >= scores[0]) ++rank;
  }
  return rank;
}

inline double hit_at_k(int rank, int k) { return rank <= k ? 1.0 : 0.0; }

// Binary relevance with a single relevant item, so IDCG = 1 and NDCG = DCG.
inline double ndcg_at_k(int rank, int k) {
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline double mrr(int rank) { return 1.0 / static_cast<double>(rank); }

template <typename S>
EvalRanking rank(Model<S>& model, const Example& ex, const std::vector<ItemId>& negatives) {
  EvalRanking r;
  r.user = ex.user_id;
  r.ground_truth = ex.target_item;
  r.candidates.push_back(ex.target_item);
  r.candidates.insert(r.candidates.end(), negatives.begin(), negatives.end());
  std::set<ItemId> uniq(r.candidates.begin(), r.candidates.end());
  if (uniq.size() != r.candidates.size()) throw DataError("rank: duplicate candidates");
  auto scores = model.score_candidates(ex, r.candidates);
  r.scores.assign(scores.begin(), scores.end());
  r.rank = rank_of_ground_truth(r.scores);
  return r;
}

inline MetricRow metrics_for_rank(UserId user, int rank) {
  return MetricRow{user,          rank,
                   hit_at_k(rank, 1), hit_at_k(rank, 5),
                   hit_at_k(rank, 10), ndcg_at_k(rank, 5),
                   ndcg_at_k(rank, 10), mrr(rank)};
}

inline MetricTable aggregate(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw DataError("evaluate: empty split");
  MetricTable t;
  t.per_user = rows;
  double n = static_cast<double>(rows.size());
  auto mean = [&](auto get) {
    double s = 0;
    for (const auto& r : rows) s += get(r);
    return s / n;
  };
  t.means["HIT@1"] = mean([](const MetricRow& r) { return r.hit1; });
  t.means["HIT@5"] = mean([](const MetricRow& r) { return r.hit5; });
  t.means["HIT@10"] = mean([](const MetricRow& r) { return r.hit10; });
  t.means["NDCG@5"] = mean([](const MetricRow& r) { return r.ndcg5; });
  t.means["NDCG@10"] = mean([](const MetricRow& r) { return r.ndcg10; });
  t.means["MRR"] = mean([](const MetricRow& r) { return r.mrr; });
  return t;
}

// Ranks every example in the split against seed-deterministic sampled
// negatives and reports per-user rows plus metric means.
template <typename S>
MetricTable evaluate(Model<S>& model, const std::vector<Example>& split, const Histories& histories,
                     const std::vector<ItemId>& item_vocab, int n_negatives, uint64_t seed) {
  if (split.empty()) throw DataError("evaluate: empty split");
  std::vector<MetricRow> rows;
  rows.reserve(split.size());
  for (const auto& ex : split) {
    auto negatives = sample_eval_negatives(histories.at(ex.user_id), item_vocab, n_negatives, seed);
    EvalRanking r = rank(model, ex, negatives);
    rows.push_back(metrics_for_rank(r.user, r.rank));
  }
  return aggregate(rows);
}

}  // namespace evaluator
}  // namespace sesrec
