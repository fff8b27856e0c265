#pragma once

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "sesrec/common.hpp"

namespace sesrec {

using ItemId = int64_t;
using UserId = int64_t;
using QueryId = int64_t;

constexpr int64_t kNoCategory = -1;

struct Query {
  QueryId query_id = 0;
  std::vector<int64_t> term_ids;  // non-empty
  int source_type = 0;            // in [0, k)
};

struct SearchEvent {
  Query query;
  std::vector<ItemId> clicked_item_ids;  // may be empty
  int64_t timestamp = 0;
};

struct RecEvent {
  ItemId item_id = 0;
  int64_t timestamp = 0;
  int64_t category_id = kNoCategory;
};

struct UserHistory {
  UserId user_id = 0;
  std::vector<RecEvent> rec_events;        // chronological
  std::vector<SearchEvent> search_events;  // chronological
};

using Histories = std::map<UserId, UserHistory>;

// One raw interaction record, as read from an event stream.
struct RawRecord {
  UserId user = 0;
  std::string type;  // "rec" | "search"
  int64_t ts = 0;
  // rec payload
  ItemId item = 0;
  int64_t category = kNoCategory;
  // search payload
  QueryId query = 0;
  std::vector<int64_t> terms;
  std::vector<ItemId> clicks;
  int source = 0;
};

struct IngestReport {
  int64_t accepted = 0;
  int64_t rejected_unknown_type = 0;
  int64_t duplicates_dropped = 0;
  std::vector<std::string> diagnostics;
};

// A training/eval example: everything the user did strictly before the
// target's timestamp, plus the target item itself.
struct Example {
  UserId user_id = 0;
  std::vector<RecEvent> rec_prefix;
  std::vector<SearchEvent> search_prefix;
  ItemId target_item = 0;
  int64_t target_category = kNoCategory;
  int64_t target_ts = 0;
};

struct DatasetSplit {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
  int64_t users_excluded_too_short = 0;   // fewer than 3 rec events
  int64_t targets_dropped_no_history = 0;  // prefix missing rec or search events
};

// Side catalogs shared by sampling, model vocab sizing, and analysis.
struct Catalog {
  std::vector<ItemId> items;                          // sorted, unique
  std::vector<QueryId> queries;                       // sorted, unique
  std::unordered_map<ItemId, int64_t> item_category;  // from rec records
  std::unordered_map<QueryId, Query> query_defs;
  int64_t max_term_id = 0;
  int max_source_type = 0;
};

inline void sort_history(UserHistory& h) {
  std::stable_sort(h.rec_events.begin(), h.rec_events.end(),
                   [](const RecEvent& a, const RecEvent& b) { return a.timestamp < b.timestamp; });
  std::stable_sort(h.search_events.begin(), h.search_events.end(),
                   [](const SearchEvent& a, const SearchEvent& b) { return a.timestamp < b.timestamp; });
}

// Groups raw records per user and sorts each stream by timestamp.
// Unknown record types are rejected with a diagnostic; duplicate
// (user, timestamp, type) keys keep the first record seen.
inline Histories build_histories(const std::vector<RawRecord>& records, IngestReport* report = nullptr) {
  Histories out;
  IngestReport local;
  IngestReport& rep = report ? *report : local;
  std::set<std::tuple<UserId, int64_t, char>> seen;
  for (const auto& r : records) {
    char kind;
    if (r.type == "rec") {
      kind = 'r';
    } else if (r.type == "search") {
      kind = 's';
    } else {
      ++rep.rejected_unknown_type;
      rep.diagnostics.push_back("rejected record with unknown type '" + r.type + "' (user " +
                                std::to_string(r.user) + ", ts " + std::to_string(r.ts) + ")");
      continue;
    }
    if (!seen.insert({r.user, r.ts, kind}).second) {
      ++rep.duplicates_dropped;
      rep.diagnostics.push_back("duplicate (user " + std::to_string(r.user) + ", ts " +
                                std::to_string(r.ts) + ", " + r.type + "); kept first");
      continue;
    }
    auto& h = out[r.user];
    h.user_id = r.user;
    if (kind == 'r') {
      h.rec_events.push_back(RecEvent{r.item, r.ts, r.category});
    } else {
      SearchEvent ev;
      ev.query.query_id = r.query;
      ev.query.term_ids = r.terms;
      ev.query.source_type = r.source;
      ev.clicked_item_ids = r.clicks;
      ev.timestamp = r.ts;
      h.search_events.push_back(ev);
    }
    ++rep.accepted;
  }
  for (auto& [uid, h] : out) sort_history(h);
  return out;
}

// Keeps users with >= min_interactions rec events and at least one event of
// each behavior type. Idempotent.
inline Histories filter_users(const Histories& histories, int min_interactions = 5) {
  Histories out;
  for (const auto& [uid, h] : histories) {
    if (static_cast<int>(h.rec_events.size()) >= min_interactions && !h.rec_events.empty() &&
        !h.search_events.empty()) {
      out.emplace(uid, h);
    }
  }
  return out;
}

// Drops events referencing items seen fewer than min_item_count times across
// the whole corpus (rec interactions and search clicks both count).
inline Histories filter_items(const Histories& histories, int min_item_count) {
  if (min_item_count <= 1) return histories;
  std::unordered_map<ItemId, int64_t> counts;
  for (const auto& [uid, h] : histories) {
    for (const auto& e : h.rec_events) ++counts[e.item_id];
    for (const auto& s : h.search_events)
      for (ItemId c : s.clicked_item_ids) ++counts[c];
  }
  auto popular = [&](ItemId i) { return counts[i] >= min_item_count; };
  Histories out;
  for (const auto& [uid, h] : histories) {
    UserHistory nh;
    nh.user_id = h.user_id;
    for (const auto& e : h.rec_events)
      if (popular(e.item_id)) nh.rec_events.push_back(e);
    for (const auto& s : h.search_events) {
      SearchEvent ns = s;
      ns.clicked_item_ids.clear();
      for (ItemId c : s.clicked_item_ids)
        if (popular(c)) ns.clicked_item_ids.push_back(c);
      nh.search_events.push_back(ns);
    }
    out.emplace(uid, nh);
  }
  return out;
}

// Keeps the most recent max_rec_len rec events and max_search_len search events.
inline UserHistory truncate(const UserHistory& h, int max_rec_len, int max_search_len) {
  if (max_rec_len < 1 || max_search_len < 1) throw ConfigError("sequence limits must be >= 1");
  UserHistory out;
  out.user_id = h.user_id;
  size_t rskip = h.rec_events.size() > static_cast<size_t>(max_rec_len)
                     ? h.rec_events.size() - max_rec_len
                     : 0;
  size_t sskip = h.search_events.size() > static_cast<size_t>(max_search_len)
                     ? h.search_events.size() - max_search_len
                     : 0;
  out.rec_events.assign(h.rec_events.begin() + rskip, h.rec_events.end());
  out.search_events.assign(h.search_events.begin() + sskip, h.search_events.end());
  return out;
}

namespace detail {

inline Example make_example(const UserHistory& h, const RecEvent& target) {
  Example ex;
  ex.user_id = h.user_id;
  ex.target_item = target.item_id;
  ex.target_category = target.category_id;
  ex.target_ts = target.timestamp;
  for (const auto& e : h.rec_events)
    if (e.timestamp < target.timestamp) ex.rec_prefix.push_back(e);
  for (const auto& s : h.search_events)
    if (s.timestamp < target.timestamp) ex.search_prefix.push_back(s);
  return ex;
}

}  // namespace detail

// Last rec event -> test, second-to-last -> validation, earlier ones -> train
// targets. Each target is paired with the user's history strictly before it.
// Targets whose prefix lacks either behavior type are dropped (the user has no
// simultaneous S&R history at that point) and counted in the report.
inline DatasetSplit leave_one_out_split(const Histories& histories) {
  DatasetSplit split;
  auto push = [&split](std::vector<Example>& dst, Example ex) {
    if (ex.rec_prefix.empty() || ex.search_prefix.empty()) {
      ++split.targets_dropped_no_history;
      return;
    }
    dst.push_back(std::move(ex));
  };
  for (const auto& [uid, h] : histories) {
    size_t n = h.rec_events.size();
    if (n < 3) {
      ++split.users_excluded_too_short;
      continue;
    }
    push(split.test, detail::make_example(h, h.rec_events[n - 1]));
    push(split.validation, detail::make_example(h, h.rec_events[n - 2]));
    for (size_t t = 1; t + 2 < n; ++t)
      push(split.train, detail::make_example(h, h.rec_events[t]));
  }
  return split;
}

inline std::unordered_set<ItemId> interacted_items(const UserHistory& h) {
  std::unordered_set<ItemId> s;
  for (const auto& e : h.rec_events) s.insert(e.item_id);
  for (const auto& ev : h.search_events)
    for (ItemId c : ev.clicked_item_ids) s.insert(c);
  return s;
}

namespace detail {

inline std::vector<ItemId> sample_excluding(const std::vector<ItemId>& vocab,
                                            const std::unordered_set<ItemId>& excluded, int n,
                                            uint64_t seed) {
  int64_t usable = 0;
  for (ItemId i : vocab)
    if (!excluded.count(i)) ++usable;
  if (usable < n) throw DataError("insufficient negatives: need " + std::to_string(n) +
                                  ", only " + std::to_string(usable) + " eligible items");
  Rng rng = make_rng(seed);
  std::unordered_set<ItemId> chosen;
  std::vector<ItemId> out;
  out.reserve(n);
  std::uniform_int_distribution<size_t> pick(0, vocab.size() - 1);
  while (static_cast<int>(out.size()) < n) {
    ItemId cand = vocab[pick(rng)];
    if (excluded.count(cand) || chosen.count(cand)) continue;
    chosen.insert(cand);
    out.push_back(cand);
  }
  return out;
}

}  // namespace detail

// n distinct items the user never interacted with (rec or search click).
inline std::vector<ItemId> sample_eval_negatives(const UserHistory& user,
                                                 const std::vector<ItemId>& item_vocab, int n,
                                                 uint64_t rng_seed) {
  auto excluded = interacted_items(user);
  return detail::sample_excluding(item_vocab, excluded,n, splitmix64(rng_seed) ^ splitmix64(static_cast<uint64_t>(user.user_id)));
}

// N-1 negatives for one training example; never the target, never anything
// the user interacted with.
inline std::vector<ItemId> sample_train_negatives(ItemId target,
                                                  const std::unordered_set<ItemId>& user_interacted,
                                                  const std::vector<ItemId>& item_vocab,
                                                  int n_minus_1, uint64_t rng_seed) {
  if (n_minus_1 == 0) return {};
  auto excluded = user_interacted;
  excluded.insert(target);
  return detail::sample_excluding(item_vocab, excluded, n_minus_1, rng_seed);
}

inline Catalog build_catalog(const Histories& histories) {
  Catalog cat;
  std::set<ItemId> items;
  std::set<QueryId> queries;
  for (const auto& [uid, h] : histories) {
    for (const auto& e : h.rec_events) {
      items.insert(e.item_id);
      if (e.category_id != kNoCategory) cat.item_category[e.item_id] = e.category_id;
    }
    for (const auto& s : h.search_events) {
      queries.insert(s.query.query_id);
      cat.query_defs[s.query.query_id] = s.query;
      for (int64_t t : s.query.term_ids) cat.max_term_id = std::max(cat.max_term_id, t);
      cat.max_source_type = std::max(cat.max_source_type, s.query.source_type);
      for (ItemId c : s.clicked_item_ids) items.insert(c);
    }
  }
  cat.items.assign(items.begin(), items.end());
  cat.queries.assign(queries.begin(), queries.end());
  return cat;
}

// ---------------------------------------------------------------------------
// JSON-lines event file I/O.
// One record per line:
//   {"user":int, "type":"rec"|"search", "item":int?, "category":int?,
//    "query":int?, "terms":[int]?, "clicks":[int]?, "source":int?, "ts":int}
// Unknown keys are ignored.
// ---------------------------------------------------------------------------

inline std::vector<RawRecord> read_event_stream(std::istream& in, IngestReport* report = nullptr) {
  std::vector<RawRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("event file line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!j.contains("user") || !j.contains("type") || !j.contains("ts"))
      throw DataError("event file line " + std::to_string(lineno) +
                      ": record needs 'user', 'type', 'ts'");
    RawRecord r;
    r.user = j["user"].get<int64_t>();
    r.type = j["type"].get<std::string>();
    r.ts = j["ts"].get<int64_t>();
    if (j.contains("item")) r.item = j["item"].get<int64_t>();
    if (j.contains("category")) r.category = j["category"].get<int64_t>();
    if (j.contains("query")) r.query = j["query"].get<int64_t>();
    if (j.contains("terms")) r.terms = j["terms"].get<std::vector<int64_t>>();
    if (j.contains("clicks")) r.clicks = j["clicks"].get<std::vector<int64_t>>();
    if (j.contains("source")) r.source = j["source"].get<int>();
    records.push_back(std::move(r));
    (void)report;
  }
  return records;
}

inline std::vector<RawRecord> read_event_file(const std::string& path, IngestReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open event file: " + path);
  return read_event_stream(in, report);
}

inline void write_event_stream(std::ostream& out, const std::vector<RawRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["user"] = r.user;
    j["type"] = r.type;
    j["ts"] = r.ts;
    if (r.type == "rec") {
      j["item"] = r.item;
      if (r.category != kNoCategory) j["category"] = r.category;
    } else {
      j["query"] = r.query;
      j["terms"] = r.terms;
      j["clicks"] = r.clicks;
      j["source"] = r.source;
    }
    out << j.dump() << "\n";
  }
}

}  // namespace sesrec
