#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "sesrec/common.hpp"
#include "sesrec/data_model.hpp"

namespace sesrec {

// Configuration for the synthetic S&R log generator. Items and queries are
// partitioned round-robin into categories; each category owns a contiguous
// block of the term vocabulary so queries from the same category share a term
// distribution.
struct SynthConfig {
  int64_t n_users = 1000;
  int64_t n_items = 200;
  int64_t n_categories = 10;
  int64_t n_queries = 60;
  int64_t n_terms = 50;
  double overlap_rho = 0.5;  // fraction of search events drawn from the user's rec-interest categories
  int min_rec_events = 8;
  int max_rec_events = 18;
  int min_search_events = 4;
  int max_search_events = 10;
  int max_terms_per_query = 4;
  int max_clicks_per_search = 3;
  double zero_click_prob = 0.1;
  int k_search_sources = 3;

  static SynthConfig from_file(const std::string& path) {
    KvReader kv(parse_kv_file(path));
    SynthConfig c;
    c.n_users = kv.get_int("n_users", c.n_users);
    c.n_items = kv.get_int("n_items", c.n_items);
    c.n_categories = kv.get_int("n_categories", c.n_categories);
    c.n_queries = kv.get_int("n_queries", c.n_queries);
    c.n_terms = kv.get_int("n_terms", c.n_terms);
    c.overlap_rho = kv.get_double("overlap_rho", c.overlap_rho);
    c.min_rec_events = static_cast<int>(kv.get_int("min_rec_events", c.min_rec_events));
    c.max_rec_events = static_cast<int>(kv.get_int("max_rec_events", c.max_rec_events));
    c.min_search_events = static_cast<int>(kv.get_int("min_search_events", c.min_search_events));
    c.max_search_events = static_cast<int>(kv.get_int("max_search_events", c.max_search_events));
    c.max_terms_per_query = static_cast<int>(kv.get_int("max_terms_per_query", c.max_terms_per_query));
    c.max_clicks_per_search = static_cast<int>(kv.get_int("max_clicks_per_search", c.max_clicks_per_search));
    c.zero_click_prob = kv.get_double("zero_click_prob", c.zero_click_prob);
    c.k_search_sources = static_cast<int>(kv.get_int("k_search_sources", c.k_search_sources));
    kv.check_unused();
    c.validate();
    return c;
  }

  void validate() const {
    if (overlap_rho < 0.0 || overlap_rho > 1.0)
      throw ConfigError("overlap_rho must be in [0,1], got " + std::to_string(overlap_rho));
    if (n_users < 1 || n_items < 1 || n_queries < 1 || n_terms < 1)
      throw ConfigError("n_users, n_items, n_queries, n_terms must be >= 1");
    if (n_categories < 5)
      throw ConfigError("n_categories must be >= 5 so search-only categories exist");
    if (n_items < n_categories) throw ConfigError("need at least one item per category");
    if (n_queries < n_categories) throw ConfigError("need at least one query per category");
    if (n_terms < n_categories) throw ConfigError("need at least one term per category");
    if (min_rec_events < 3) throw ConfigError("min_rec_events must be >= 3 for splitting");
    if (max_rec_events < min_rec_events || max_search_events < min_search_events)
      throw ConfigError("sequence length ranges are inverted");
    if (min_search_events < 1) throw ConfigError("min_search_events must be >= 1");
    if (k_search_sources < 1) throw ConfigError("k_search_sources must be >= 1");
  }
};

namespace detail {

// Round-robin category assignment; ids are 1-based (0 reserved for padding).
inline int64_t synth_category_of(int64_t id, int64_t n_categories) {
  return (id - 1) % n_categories;
}

inline std::vector<std::vector<int64_t>> ids_by_category(int64_t n_ids, int64_t n_categories) {
  std::vector<std::vector<int64_t>> by_cat(n_categories);
  for (int64_t id = 1; id <= n_ids; ++id) by_cat[synth_category_of(id, n_categories)].push_back(id);
  return by_cat;
}

}  // namespace detail

// Generates a deterministic synthetic event stream. Each user holds 2-4
// rec-interest categories; rec events sample items from them. A fraction
// overlap_rho of search events target categories the user's rec events
// actually exercised, the rest target categories outside the rec-interest
// set, so the achieved click-category overlap matches overlap_rho.
inline std::vector<RawRecord> generate_synthetic(const SynthConfig& cfg, uint64_t rng_seed) {
  cfg.validate();
  const int64_t C = cfg.n_categories;
  auto items_by_cat = detail::ids_by_category(cfg.n_items, C);
  auto queries_by_cat = detail::ids_by_category(cfg.n_queries, C);

  // Per-category contiguous term block; each query keeps a fixed term list
  // drawn from its category's block.
  const int64_t terms_per_cat = cfg.n_terms / C;
  auto term_block_start = [&](int64_t cat) { return cat * terms_per_cat + 1; };
  std::vector<std::vector<int64_t>> query_terms(static_cast<size_t>(cfg.n_queries) + 1);
  for (int64_t q = 1; q <= cfg.n_queries; ++q) {
    Rng qrng = make_rng(rng_seed, 0x9E55u + static_cast<uint64_t>(q));
    int64_t cat = detail::synth_category_of(q, C);
    int n = std::uniform_int_distribution<int>(1, cfg.max_terms_per_query)(qrng);
    std::uniform_int_distribution<int64_t> term_pick(term_block_start(cat),
                                                     term_block_start(cat) + terms_per_cat - 1);
    for (int t = 0; t < n; ++t) query_terms[static_cast<size_t>(q)].push_back(term_pick(qrng));
  }

  std::vector<RawRecord> out;
  for (int64_t u = 1; u <= cfg.n_users; ++u) {
    Rng rng = make_rng(rng_seed, static_cast<uint64_t>(u));
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Rec-interest categories: 2-4 distinct ones.
    int n_interests = std::uniform_int_distribution<int>(2, 4)(rng);
    std::vector<int64_t> all_cats(C);
    std::iota(all_cats.begin(), all_cats.end(), 0);
    std::shuffle(all_cats.begin(), all_cats.end(), rng);
    std::vector<int64_t> rec_cats(all_cats.begin(), all_cats.begin() + n_interests);
    std::vector<int64_t> other_cats(all_cats.begin() + n_interests, all_cats.end());

    int n_rec = std::uniform_int_distribution<int>(cfg.min_rec_events, cfg.max_rec_events)(rng);
    int n_search =
        std::uniform_int_distribution<int>(cfg.min_search_events, cfg.max_search_events)(rng);

    // Interleave the two streams on one timeline.
    std::vector<char> slots(n_rec, 'r');
    slots.insert(slots.end(), n_search, 's');
    std::shuffle(slots.begin(), slots.end(), rng);

    // Rec events first, so search overlap can target categories the rec
    // stream actually touched.
    std::vector<RawRecord> user_records(slots.size());
    std::set<int64_t> touched_rec_cats;
    for (size_t pos = 0; pos < slots.size(); ++pos) {
      if (slots[pos] != 'r') continue;
      int64_t cat = rec_cats[std::uniform_int_distribution<size_t>(0, rec_cats.size() - 1)(rng)];
      const auto& pool = items_by_cat[cat];
      RawRecord r;
      r.user = u;
      r.type = "rec";
      r.ts = static_cast<int64_t>(pos) + 1;
      r.item = pool[std::uniform_int_distribution<size_t>(0, pool.size() - 1)(rng)];
      r.category = cat;
      touched_rec_cats.insert(cat);
      user_records[pos] = std::move(r);
    }
    std::vector<int64_t> overlap_pool(touched_rec_cats.begin(), touched_rec_cats.end());

    for (size_t pos = 0; pos < slots.size(); ++pos) {
      if (slots[pos] != 's') continue;
      bool overlap = unit(rng) < cfg.overlap_rho;
      const auto& cat_pool = overlap ? overlap_pool : other_cats;
      int64_t cat = cat_pool[std::uniform_int_distribution<size_t>(0, cat_pool.size() - 1)(rng)];
      const auto& qpool = queries_by_cat[cat];
      RawRecord r;
      r.user = u;
      r.type = "search";
      r.ts = static_cast<int64_t>(pos) + 1;
      r.query = qpool[std::uniform_int_distribution<size_t>(0, qpool.size() - 1)(rng)];
      r.terms = query_terms[static_cast<size_t>(r.query)];
      r.source = std::uniform_int_distribution<int>(0, cfg.k_search_sources - 1)(rng);
      if (unit(rng) >= cfg.zero_click_prob) {
        int n_clicks = std::uniform_int_distribution<int>(1, cfg.max_clicks_per_search)(rng);
        const auto& ipool = items_by_cat[cat];
        for (int c = 0; c < n_clicks; ++c)
          r.clicks.push_back(ipool[std::uniform_int_distribution<size_t>(0, ipool.size() - 1)(rng)]);
      }
      user_records[pos] = std::move(r);
    }
    for (auto& r : user_records) out.push_back(std::move(r));
  }
  return out;
}

}  // namespace sesrec
