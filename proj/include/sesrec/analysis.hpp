#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sesrec/evaluator.hpp"
#include "sesrec/model.hpp"
#include "sesrec/trainer.hpp"

namespace sesrec {

// Normalized category histogram.
struct CategoryDistribution {
  std::map<int64_t, double> probs;

  static CategoryDistribution from_counts(const std::map<int64_t, int64_t>& counts) {
    CategoryDistribution d;
    double total = 0;
    for (const auto& [cat, c] : counts) total += static_cast<double>(c);
    if (total <= 0) throw DataError("category distribution has empty support");
    for (const auto& [cat, c] : counts)
      if (c > 0) d.probs[cat] = static_cast<double>(c) / total;
    return d;
  }
  bool empty() const { return probs.empty(); }
};

// One user's interest-separation diagnostic: index partitions plus the
// normalized similarity scores of both behavior sequences.
struct DisentangleDumpRow {
  UserId user = 0;
  std::vector<int> P_s, N_s, P_r, N_r;
  std::vector<double> a_s, a_r;
};

struct DivergenceRow {
  UserId user;
  double d_similar;     // D_JS between the similar-interest sets
  double d_dissimilar;  // D_JS between the dissimilar-interest sets
};

struct DisentanglementReport {
  std::vector<DivergenceRow> rows;
  int64_t skipped_users = 0;
};

struct CosineSummary {
  double mean = 0, q1 = 0, median = 0, q3 = 0;
  size_t n = 0;
};

struct SweepRow {
  std::string value;
  double ndcg10 = 0;
  double mrr = 0;
};

struct AblationRow {
  std::string label;
  std::map<std::string, double> metrics;
};

namespace analysis {

// Jensen-Shannon divergence in bits; symmetric, bounded to [0, 1]. Categories
// absent from one side are treated as probability zero.
inline double js_divergence(const CategoryDistribution& p, const CategoryDistribution& q) {
  auto prob = [](const CategoryDistribution& d, int64_t cat) {
    auto it = d.probs.find(cat);
    return it == d.probs.end() ? 0.0 : it->second;
  };
  std::map<int64_t, bool> support;
  for (const auto& [c, v] : p.probs) support[c] = true;
  for (const auto& [c, v] : q.probs) support[c] = true;
  if (support.empty()) throw DataError("js_divergence: empty supports");
  double kl_pm = 0, kl_qm = 0;
  for (const auto& [c, unused] : support) {
    double pp = prob(p, c), qq = prob(q, c);
    double m = 0.5 * (pp + qq);
    if (pp > 0) kl_pm += pp * std::log2(pp / m);
    if (qq > 0) kl_qm += qq * std::log2(qq / m);
  }
  return 0.5 * kl_pm + 0.5 * kl_qm;
}

inline int64_t category_of(const Catalog& catalog, ItemId item) {
  auto it = catalog.item_category.find(item);
  return it == catalog.item_category.end() ? kNoCategory : it->second;
}

// Snapshots interest separation for every test-split user.
template <typename S>
std::vector<DisentangleDumpRow> collect_disentangle_dump(Model<S>& model,
                                                         const DatasetBundle& data) {
  std::vector<DisentangleDumpRow> rows;
  rows.reserve(data.split.test.size());
  for (const auto& ex : data.split.test) {
    auto snap = model.disentangle_snapshot(ex);
    DisentangleDumpRow row;
    row.user = ex.user_id;
    row.P_s = snap.sel_s.P;
    row.N_s = snap.sel_s.degenerate_n ? std::vector<int>{} : snap.sel_s.N;
    row.P_r = snap.sel_r.P;
    row.N_r = snap.sel_r.degenerate_n ? std::vector<int>{} : snap.sel_r.N;
    row.a_s.assign(snap.a_s.begin(), snap.a_s.end());
    row.a_r.assign(snap.a_r.begin(), snap.a_r.end());
    rows.push_back(std::move(row));
  }
  return rows;
}

// JSONL, one {user, P_s, N_s, P_r, N_r, a_s, a_r} object per user.
inline void write_disentangle_dump(const std::vector<DisentangleDumpRow>& rows, std::ostream& out) {
  for (const auto& r : rows) {
    nlohmann::json j;
    j["user"] = r.user;
    j["P_s"] = r.P_s;
    j["N_s"] = r.N_s;
    j["P_r"] = r.P_r;
    j["N_r"] = r.N_r;
    j["a_s"] = r.a_s;
    j["a_r"] = r.a_r;
    out << j.dump() << "\n";
  }
}

inline std::vector<DisentangleDumpRow> read_disentangle_dump(std::istream& in) {
  std::vector<DisentangleDumpRow> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      DisentangleDumpRow r;
      r.user = j.at("user").get<UserId>();
      r.P_s = j.at("P_s").get<std::vector<int>>();
      r.N_s = j.at("N_s").get<std::vector<int>>();
      r.P_r = j.at("P_r").get<std::vector<int>>();
      r.N_r = j.at("N_r").get<std::vector<int>>();
      r.a_s = j.at("a_s").get<std::vector<double>>();
      r.a_r = j.at("a_r").get<std::vector<double>>();
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("disentangle dump line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

namespace detail {

inline CategoryDistribution rec_side_distribution(const Catalog& catalog, const Example& ex,
                                                  const std::vector<int>& positions) {
  std::map<int64_t, int64_t> counts;
  for (int j : positions) {
    int64_t cat = category_of(catalog, ex.rec_prefix.at(static_cast<size_t>(j)).item_id);
    if (cat != kNoCategory) ++counts[cat];
  }
  CategoryDistribution d;
  if (!counts.empty()) d = CategoryDistribution::from_counts(counts);
  return d;
}

inline CategoryDistribution search_side_distribution(const Catalog& catalog, const Example& ex,
                                                     const std::vector<int>& positions) {
  std::map<int64_t, int64_t> counts;
  for (int j : positions) {
    for (ItemId c : ex.search_prefix.at(static_cast<size_t>(j)).clicked_item_ids) {
      int64_t cat = category_of(catalog, c);
      if (cat != kNoCategory) ++counts[cat];
    }
  }
  CategoryDistribution d;
  if (!counts.empty()) d = CategoryDistribution::from_counts(counts);
  return d;
}

}  // namespace detail

// Per-user JS divergences between the category distributions of the selected
// similar sub-sequences (P_s vs P_r) and the dissimilar ones (N_s vs N_r).
// Users whose selected sets yield no category evidence are skipped.
inline DisentanglementReport divergences_from_dump(const std::vector<DisentangleDumpRow>& dump,
                                                   const DatasetBundle& data) {
  std::map<UserId, const Example*> test_by_user;
  for (const auto& ex : data.split.test) test_by_user[ex.user_id] = &ex;
  DisentanglementReport report;
  for (const auto& row : dump) {
    auto found = test_by_user.find(row.user);
    if (found == test_by_user.end())
      throw DataError("dump user " + std::to_string(row.user) + " not in the test split");
    const Example& ex = *found->second;
    CategoryDistribution p_r = detail::rec_side_distribution(data.catalog, ex, row.P_r);
    CategoryDistribution n_r = detail::rec_side_distribution(data.catalog, ex, row.N_r);
    CategoryDistribution p_s = detail::search_side_distribution(data.catalog, ex, row.P_s);
    CategoryDistribution n_s = detail::search_side_distribution(data.catalog, ex, row.N_s);
    if (p_r.empty() || n_r.empty() || p_s.empty() || n_s.empty()) {
      ++report.skipped_users;
      continue;
    }
    report.rows.push_back(
        DivergenceRow{row.user, js_divergence(p_s, p_r), js_divergence(n_s, n_r)});
  }
  return report;
}

template <typename S>
DisentanglementReport disentanglement_report(Model<S>& model, const DatasetBundle& data) {
  return divergences_from_dump(collect_disentangle_dump(model, data), data);
}

inline CosineSummary summarize(std::vector<double> values) {
  CosineSummary s;
  s.n = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  auto quantile = [&](double p) {
    double pos = p * static_cast<double>(values.size() - 1);
    size_t lo = static_cast<size_t>(pos);
    size_t hi = std::min(lo + 1, values.size() - 1);
    double frac = pos - static_cast<double>(lo);
    return values[lo] * (1 - frac) + values[hi] * frac;
  };
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  return s;
}

// Box-plot style summary of query/clicked-item cosine similarity under two
// models (typically trained with and without the alignment loss).
template <typename S>
std::pair<CosineSummary, CosineSummary> cosine_report(Model<S>& model_with_ali,
                                                      Model<S>& model_without_ali,
                                                      const Histories& histories) {
  auto with_vals = model_with_ali.query_click_cosines(histories);
  auto without_vals = model_without_ali.query_click_cosines(histories);
  std::vector<double> w(with_vals.begin(), with_vals.end());
  std::vector<double> wo(without_vals.begin(), without_vals.end());
  return {summarize(std::move(w)), summarize(std::move(wo))};
}

// Trains one model under cfg and evaluates it on the test split.
inline std::pair<MetricTable, TrainResult> run_training(const Config& cfg,
                                                        const std::vector<RawRecord>& records) {
  DatasetBundle bundle = prepare_dataset(records, cfg);
  Model<float> model(cfg, bundle, cfg.seed);
  TrainResult result = trainer::train(model, bundle);
  MetricTable metrics = evaluator::evaluate(model, bundle.split.test, bundle.histories,
                                            bundle.catalog.items, cfg.eval_negatives, cfg.seed);
  return {std::move(metrics), std::move(result)};
}

inline Config apply_sweep_value(const Config& base, const std::string& param,
                                const std::string& value) {
  Config cfg = base;
  if (param == "alpha") {
    cfg.alpha = std::stod(value);
  } else if (param == "beta") {
    cfg.beta = std::stod(value);
  } else if (param == "threshold_strategy") {
    if (value == "mean") {
      cfg.threshold_strategy = ThresholdStrategy::kMean;
    } else if (value == "median") {
      cfg.threshold_strategy = ThresholdStrategy::kMedian;
    } else if (value == "1/8") {
      cfg.threshold_strategy = ThresholdStrategy::kConst;
      cfg.threshold_const = 1.0 / 8.0;
    } else if (value == "1/16") {
      cfg.threshold_strategy = ThresholdStrategy::kConst;
      cfg.threshold_const = 1.0 / 16.0;
    } else {
      throw ConfigError("unknown threshold_strategy sweep value: " + value);
    }
  } else {
    throw ConfigError("sweep parameter must be alpha, beta, or threshold_strategy, got: " + param);
  }
  cfg.validate();
  return cfg;
}

inline std::vector<std::string> default_sweep_values(const std::string& param) {
  if (param == "threshold_strategy") return {"1/16", "1/8", "median", "mean"};
  if (param == "alpha") return {"0", "0.01", "0.1", "0.5", "1"};
  if (param == "beta") return {"0", "0.0001", "0.001", "0.01", "0.1"};
  throw ConfigError("sweep parameter must be alpha, beta, or threshold_strategy, got: " + param);
}

// Trains one model per value with a shared seed; reports test NDCG@10 / MRR.
inline std::vector<SweepRow> sweep(const std::string& param, const std::vector<std::string>& values,
                                   const Config& base, const std::vector<RawRecord>& records) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    Config cfg = apply_sweep_value(base, param, v);
    auto [metrics, train_result] = run_training(cfg, records);
    rows.push_back(SweepRow{v, metrics.means.at("NDCG@10"), metrics.means.at("MRR")});
  }
  return rows;
}

struct AblationVariant {
  std::string label;
  Config cfg;
};

inline std::vector<AblationVariant> ablation_variants(const Config& base) {
  std::vector<AblationVariant> v;
  Config c0 = base;
  c0.alpha = 0;
  c0.beta = 0;
  c0.use_mie = false;
  v.push_back({"Base", c0});
  Config c1 = c0;
  c1.alpha = base.alpha;
  v.push_back({"+L_ali", c1});
  Config c2 = c1;
  c2.beta = base.beta;
  v.push_back({"+L_con", c2});
  Config c3 = c2;
  c3.use_mie = true;
  v.push_back({"+MIE", c3});
  return v;
}

// Cumulative component study: Base, +L_ali, +L_con, +MIE.
inline std::vector<AblationRow> ablation(const Config& base, const std::vector<RawRecord>& records) {
  std::vector<AblationRow> rows;
  for (const auto& variant : ablation_variants(base)) {
    auto [metrics, train_result] = run_training(variant.cfg, records);
    rows.push_back(AblationRow{variant.label, metrics.means});
  }
  return rows;
}

}  // namespace analysis
}  // namespace sesrec
