#include "sesrec/data_model.hpp"

#include <gtest/gtest.h>

#include <sstream>

#include "sesrec/synthetic.hpp"

namespace sesrec {
namespace {

RawRecord rec_record(UserId u, ItemId item, int64_t ts, int64_t cat = 0) {
  RawRecord r;
  r.user = u;
  r.type = "rec";
  r.item = item;
  r.category = cat;
  r.ts = ts;
  return r;
}

RawRecord search_record(UserId u, QueryId q, int64_t ts, std::vector<ItemId> clicks = {},
                        std::vector<int64_t> terms = {1}, int source = 0) {
  RawRecord r;
  r.user = u;
  r.type = "search";
  r.query = q;
  r.terms = std::move(terms);
  r.clicks = std::move(clicks);
  r.source = source;
  r.ts = ts;
  return r;
}

// ---------------------------------------------------------------------------
// build_histories
// ---------------------------------------------------------------------------

TEST(BuildHistories, SortsOutOfOrderRecEvents) {
  auto h = build_histories({rec_record(1, 10, 5), rec_record(1, 11, 2)});
  ASSERT_EQ(h.size(), 1u);
  const auto& events = h.at(1).rec_events;
  ASSERT_EQ(events.size(), 2u);
  EXPECT_EQ(events[0].item_id, 11);
  EXPECT_EQ(events[1].item_id, 10);
  EXPECT_LT(events[0].timestamp, events[1].timestamp);
}

TEST(BuildHistories, SearchWithZeroClicksKept) {
  auto h = build_histories({search_record(1, 7, 3, {})});
  ASSERT_EQ(h.at(1).search_events.size(), 1u);
  EXPECT_TRUE(h.at(1).search_events[0].clicked_item_ids.empty());
}

TEST(BuildHistories, EventCountPreserved) {
  // 3 users x 6 events; independent tally of the inputs must equal the sum of
  // per-history event counts.
  std::vector<RawRecord> records;
  for (UserId u = 1; u <= 3; ++u) {
    for (int64_t t = 1; t <= 4; ++t) records.push_back(rec_record(u, 100 + t, t));
    records.push_back(search_record(u, 5, 5));
    records.push_back(search_record(u, 6, 6, {100}));
  }
  size_t input_tally = records.size();
  ASSERT_EQ(input_tally, 18u);
  auto h = build_histories(records);
  ASSERT_EQ(h.size(), 3u);
  size_t total = 0;
  for (const auto& [uid, hist] : h) total += hist.rec_events.size() + hist.search_events.size();
  EXPECT_EQ(total, input_tally);
}

TEST(BuildHistories, UnknownTypeRejectedWithDiagnostic) {
  RawRecord bad = rec_record(1, 10, 1);
  bad.type = "purchase";
  IngestReport report;
  auto h = build_histories({bad, rec_record(1, 11, 2)}, &report);
  EXPECT_EQ(report.rejected_unknown_type, 1);
  EXPECT_EQ(h.at(1).rec_events.size(), 1u);
  ASSERT_FALSE(report.diagnostics.empty());
  EXPECT_NE(report.diagnostics[0].find("purchase"), std::string::npos);
}

TEST(BuildHistories, DuplicateKeepsFirst) {
  IngestReport report;
  auto h = build_histories({rec_record(1, 10, 1), rec_record(1, 99, 1)}, &report);
  EXPECT_EQ(report.duplicates_dropped, 1);
  ASSERT_EQ(h.at(1).rec_events.size(), 1u);
  EXPECT_EQ(h.at(1).rec_events[0].item_id, 10);
}

TEST(BuildHistories, ClicksAttachedToTheirQuery) {
  auto h = build_histories({search_record(1, 7, 1, {4, 8})});
  const auto& ev = h.at(1).search_events[0];
  EXPECT_EQ(ev.query.query_id, 7);
  EXPECT_EQ(ev.clicked_item_ids, (std::vector<ItemId>{4, 8}));
}

// ---------------------------------------------------------------------------
// filter_users
// ---------------------------------------------------------------------------

Histories make_user(UserId u, int n_rec, int n_search) {
  std::vector<RawRecord> records;
  for (int i = 0; i < n_rec; ++i) records.push_back(rec_record(u, 100 + i, i + 1));
  for (int i = 0; i < n_search; ++i) records.push_back(search_record(u, i + 1, 1000 + i, {100}));
  return build_histories(records);
}

TEST(FilterUsers, RemovesUserWithFourRecEvents) {
  auto h = make_user(1, 4, 2);
  EXPECT_TRUE(filter_users(h, 5).empty());
}

TEST(FilterUsers, RemovesUserWithoutSearchHistory) {
  auto h = make_user(1, 10, 0);
  EXPECT_TRUE(filter_users(h, 5).empty());
}

TEST(FilterUsers, EmptyInputGivesEmptyOutput) {
  EXPECT_TRUE(filter_users(Histories{}, 5).empty());
}

TEST(FilterUsers, Idempotent) {
  Histories h;
  for (UserId u = 1; u <= 6; ++u) {
    auto one = make_user(u, static_cast<int>(u) + 2, u % 3 == 0 ? 0 : 1);
    h.insert(one.begin(), one.end());
  }
  auto once = filter_users(h, 5);
  auto twice = filter_users(once, 5);
  ASSERT_EQ(once.size(), twice.size());
  for (const auto& [uid, hist] : once) {
    EXPECT_EQ(twice.at(uid).rec_events.size(), hist.rec_events.size());
    EXPECT_EQ(twice.at(uid).search_events.size(), hist.search_events.size());
  }
}

// ---------------------------------------------------------------------------
// leave_one_out_split
// ---------------------------------------------------------------------------

TEST(LeaveOneOut, FiveItemsSplitAsExpected) {
  std::vector<RawRecord> records;
  for (int i = 1; i <= 5; ++i) records.push_back(rec_record(1, i, i));
  records.push_back(search_record(1, 9, 0));  // before everything
  auto split = leave_one_out_split(build_histories(records));
  ASSERT_EQ(split.test.size(), 1u);
  ASSERT_EQ(split.validation.size(), 1u);
  EXPECT_EQ(split.test[0].target_item, 5);
  EXPECT_EQ(split.validation[0].target_item, 4);
  std::vector<ItemId> train_targets;
  for (const auto& ex : split.train) train_targets.push_back(ex.target_item);
  EXPECT_EQ(train_targets, (std::vector<ItemId>{2, 3}));
  // Prefixes contain exactly the rec events strictly before each target.
  EXPECT_EQ(split.test[0].rec_prefix.size(), 4u);
  EXPECT_EQ(split.validation[0].rec_prefix.size(), 3u);
}

TEST(LeaveOneOut, ExactlyThreeItemsLeavesNoTrainTargets) {
  std::vector<RawRecord> records;
  for (int i = 1; i <= 3; ++i) records.push_back(rec_record(1, i, i));
  records.push_back(search_record(1, 9, 0));
  auto split = leave_one_out_split(build_histories(records));
  EXPECT_TRUE(split.train.empty());
  ASSERT_EQ(split.validation.size(), 1u);
  ASSERT_EQ(split.test.size(), 1u);
  EXPECT_EQ(split.validation[0].target_item, 2);
  EXPECT_EQ(split.test[0].target_item, 3);
}

TEST(LeaveOneOut, SearchEventAfterValTargetExcludedFromValPrefix) {
  std::vector<RawRecord> records;
  for (int i = 1; i <= 5; ++i) records.push_back(rec_record(1, i, i * 10));
  records.push_back(search_record(1, 1, 5));   // before everything
  records.push_back(search_record(1, 2, 45));  // between val target (ts=40) and test (ts=50)
  auto split = leave_one_out_split(build_histories(records));
  ASSERT_EQ(split.validation.size(), 1u);
  ASSERT_EQ(split.test.size(), 1u);
  // Independent timestamp filter: count search events with ts < target ts.
  EXPECT_EQ(split.validation[0].search_prefix.size(), 1u);
  EXPECT_EQ(split.test[0].search_prefix.size(), 2u);
}

TEST(LeaveOneOut, ShortUsersExcludedAndCounted) {
  std::vector<RawRecord> records = {rec_record(1, 1, 1), rec_record(1, 2, 2),
                                    search_record(1, 9, 0)};
  auto split = leave_one_out_split(build_histories(records));
  EXPECT_EQ(split.users_excluded_too_short, 1);
  EXPECT_TRUE(split.test.empty());
}

TEST(LeaveOneOut, TargetsDisjointAndPrefixesPrecedeTargets) {
  std::vector<RawRecord> records;
  for (int i = 1; i <= 8; ++i) records.push_back(rec_record(1, i, i));
  records.push_back(search_record(1, 9, 0));
  records.push_back(search_record(1, 10, 6));
  auto split = leave_one_out_split(build_histories(records));
  std::set<ItemId> train_targets;
  for (const auto& ex : split.train) train_targets.insert(ex.target_item);
  EXPECT_FALSE(train_targets.count(split.validation[0].target_item));
  EXPECT_FALSE(train_targets.count(split.test[0].target_item));
  auto check_prefix = [](const Example& ex) {
    for (const auto& e : ex.rec_prefix) EXPECT_LT(e.timestamp, ex.target_ts);
    for (const auto& s : ex.search_prefix) EXPECT_LT(s.timestamp, ex.target_ts);
  };
  for (const auto& ex : split.train) check_prefix(ex);
  check_prefix(split.validation[0]);
  check_prefix(split.test[0]);
}

// ---------------------------------------------------------------------------
// truncate
// ---------------------------------------------------------------------------

TEST(Truncate, KeepsNewestEvents) {
  UserHistory h;
  h.user_id = 1;
  for (int i = 0; i < 200; ++i) h.rec_events.push_back(RecEvent{i, i, 0});
  for (int i = 0; i < 30; ++i) {
    SearchEvent s;
    s.timestamp = i;
    h.search_events.push_back(s);
  }
  auto t = truncate(h, 150, 25);
  ASSERT_EQ(t.rec_events.size(), 150u);
  EXPECT_EQ(t.rec_events.front().item_id, 50);
  EXPECT_EQ(t.rec_events.back().item_id, 199);
  EXPECT_EQ(t.search_events.size(), 25u);
}

TEST(Truncate, ShorterThanLimitUnchanged) {
  auto h = make_user(1, 5, 2).at(1);
  auto t = truncate(h, 150, 25);
  EXPECT_EQ(t.rec_events.size(), 5u);
  EXPECT_EQ(t.search_events.size(), 2u);
}

TEST(Truncate, LimitOneKeepsSingleNewest) {
  auto h = make_user(1, 5, 3).at(1);
  auto t = truncate(h, 1, 1);
  ASSERT_EQ(t.rec_events.size(), 1u);
  EXPECT_EQ(t.rec_events[0].item_id, h.rec_events.back().item_id);
  EXPECT_EQ(t.search_events.size(), 1u);
}

// ---------------------------------------------------------------------------
// negative sampling
// ---------------------------------------------------------------------------

std::vector<ItemId> vocab_of(int n) {
  std::vector<ItemId> v(n);
  for (int i = 0; i < n; ++i) v[i] = i + 1;
  return v;
}

TEST(EvalNegatives, DisjointFromInteractions) {
  auto h = make_user(1, 10, 2).at(1);  // items 100..109 plus click 100
  auto negs = sample_eval_negatives(h, vocab_of(1000), 99, 7);
  EXPECT_EQ(negs.size(), 99u);
  auto interacted = interacted_items(h);
  std::set<ItemId> uniq(negs.begin(), negs.end());
  EXPECT_EQ(uniq.size(), negs.size());
  for (ItemId i : negs) EXPECT_FALSE(interacted.count(i));
}

TEST(EvalNegatives, DeterministicGivenSeed) {
  auto h = make_user(1, 10, 2).at(1);
  EXPECT_EQ(sample_eval_negatives(h, vocab_of(1000), 99, 7),
            sample_eval_negatives(h, vocab_of(1000), 99, 7));
}

TEST(EvalNegatives, VocabularyTooSmallErrors) {
  auto h = make_user(1, 10, 2).at(1);
  EXPECT_THROW(sample_eval_negatives(h, vocab_of(50), 99, 7), DataError);
}

TEST(TrainNegatives, FourNegativesNeverTarget) {
  std::unordered_set<ItemId> interacted{1, 2, 3};
  auto negs = sample_train_negatives(5, interacted, vocab_of(100), 4, 11);
  EXPECT_EQ(negs.size(), 4u);
  for (ItemId n : negs) {
    EXPECT_NE(n, 5);
    EXPECT_FALSE(interacted.count(n));
  }
}

TEST(TrainNegatives, NEqualsOneGivesEmptyList) {
  std::unordered_set<ItemId> interacted;
  EXPECT_TRUE(sample_train_negatives(5, interacted, vocab_of(100), 0, 11).empty());
}

TEST(TrainNegatives, NeverEqualsTargetOverManyDraws) {
  std::unordered_set<ItemId> interacted;
  for (uint64_t seed = 0; seed < 10000; ++seed) {
    auto negs = sample_train_negatives(5, interacted, vocab_of(20), 1, seed);
    ASSERT_EQ(negs.size(), 1u);
    ASSERT_NE(negs[0], 5);
  }
}

// ---------------------------------------------------------------------------
// filter_items (unpopular-item filtering)
// ---------------------------------------------------------------------------

TEST(FilterItems, DropsRareItemsEverywhere) {
  std::vector<RawRecord> records;
  for (int i = 0; i < 5; ++i) records.push_back(rec_record(1, 100, i));
  records.push_back(rec_record(1, 999, 50));  // appears once
  records.push_back(search_record(1, 1, 60, {999, 100}));
  auto h = filter_items(build_histories(records), 3);
  EXPECT_EQ(h.at(1).rec_events.size(), 5u);
  EXPECT_EQ(h.at(1).search_events[0].clicked_item_ids, (std::vector<ItemId>{100}));
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

SynthConfig small_synth(double rho) {
  SynthConfig cfg;
  cfg.n_users = 200;
  cfg.n_items = 100;
  cfg.n_categories = 10;
  cfg.n_queries = 40;
  cfg.n_terms = 50;
  cfg.overlap_rho = rho;
  return cfg;
}

// Independent tally: per user, the set of categories seen in rec records;
// per clicked search event, whether the clicked category is in that set.
std::pair<int, int> measure_overlap(const std::vector<RawRecord>& records) {
  std::map<ItemId, int64_t> item_cat;
  std::map<UserId, std::set<int64_t>> rec_cats;
  for (const auto& r : records)
    if (r.type == "rec") {
      item_cat[r.item] = r.category;
      rec_cats[r.user].insert(r.category);
    }
  int overlapping = 0, total = 0;
  for (const auto& r : records) {
    if (r.type != "search" || r.clicks.empty()) continue;
    auto cat = item_cat.find(r.clicks[0]);
    if (cat == item_cat.end()) continue;  // category unobservable from rec logs
    ++total;
    if (rec_cats[r.user].count(cat->second)) ++overlapping;
  }
  return {overlapping, total};
}

TEST(Synthetic, RhoOneMeansFullOverlap) {
  auto records = generate_synthetic(small_synth(1.0), 3);
  auto [overlapping, total] = measure_overlap(records);
  ASSERT_GT(total, 0);
  EXPECT_EQ(overlapping, total);
}

TEST(Synthetic, RhoZeroMeansNoOverlap) {
  auto records = generate_synthetic(small_synth(0.0), 3);
  // With rho=0 clicked categories never intersect the user's own rec
  // categories, even though other users may rec-interact with those items.
  std::map<ItemId, int64_t> item_cat;
  std::map<UserId, std::set<int64_t>> rec_cats;
  for (const auto& r : records)
    if (r.type == "rec") {
      item_cat[r.item] = r.category;
      rec_cats[r.user].insert(r.category);
    }
  int total = 0;
  for (const auto& r : records) {
    if (r.type != "search" || r.clicks.empty()) continue;
    auto cat = item_cat.find(r.clicks[0]);
    if (cat == item_cat.end()) continue;
    ++total;
    EXPECT_FALSE(rec_cats[r.user].count(cat->second));
  }
  ASSERT_GT(total, 0);
}

TEST(Synthetic, RhoHalfCalibratedAtThousandUsers) {
  SynthConfig cfg = small_synth(0.5);
  cfg.n_users = 1000;
  cfg.n_items = 200;
  auto records = generate_synthetic(cfg, 5);
  auto [overlapping, total] = measure_overlap(records);
  ASSERT_GT(total, 1000);
  double fraction = static_cast<double>(overlapping) / total;
  EXPECT_NEAR(fraction, 0.5, 0.05);
}

TEST(Synthetic, RhoOutsideUnitIntervalIsConfigError) {
  SynthConfig cfg = small_synth(1.5);
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Synthetic, TimestampsStrictlyIncreasePerStream) {
  auto records = generate_synthetic(small_synth(0.5), 9);
  auto h = build_histories(records);
  for (const auto& [uid, hist] : h) {
    for (size_t i = 1; i < hist.rec_events.size(); ++i)
      ASSERT_LT(hist.rec_events[i - 1].timestamp, hist.rec_events[i].timestamp);
    for (size_t i = 1; i < hist.search_events.size(); ++i)
      ASSERT_LT(hist.search_events[i - 1].timestamp, hist.search_events[i].timestamp);
  }
}

TEST(Synthetic, QueriesKeepStableTermLists) {
  auto records = generate_synthetic(small_synth(0.5), 4);
  std::map<QueryId, std::vector<int64_t>> terms;
  for (const auto& r : records) {
    if (r.type != "search") continue;
    auto [it, inserted] = terms.insert({r.query, r.terms});
    if (!inserted) EXPECT_EQ(it->second, r.terms) << "query " << r.query;
  }
}

// ---------------------------------------------------------------------------
// JSONL event file round trip
// ---------------------------------------------------------------------------

TEST(EventFile, RoundTripPreservesRecords) {
  auto records = generate_synthetic(small_synth(0.5), 11);
  std::stringstream ss;
  write_event_stream(ss, records);
  auto back = read_event_stream(ss);
  ASSERT_EQ(back.size(), records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    EXPECT_EQ(back[i].user, records[i].user);
    EXPECT_EQ(back[i].type, records[i].type);
    EXPECT_EQ(back[i].ts, records[i].ts);
    if (records[i].type == "rec") {
      EXPECT_EQ(back[i].item, records[i].item);
      EXPECT_EQ(back[i].category, records[i].category);
    } else {
      EXPECT_EQ(back[i].query, records[i].query);
      EXPECT_EQ(back[i].terms, records[i].terms);
      EXPECT_EQ(back[i].clicks, records[i].clicks);
      EXPECT_EQ(back[i].source, records[i].source);
    }
  }
}

TEST(EventFile, UnknownKeysIgnored) {
  std::stringstream ss(R"({"user":1,"type":"rec","item":5,"category":2,"ts":1,"extra":"x"})");
  auto records = read_event_stream(ss);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].item, 5);
}

TEST(EventFile, MalformedLineIsDataError) {
  std::stringstream ss("{not json}");
  EXPECT_THROW(read_event_stream(ss), DataError);
}

TEST(EventFile, MissingRequiredKeyIsDataError) {
  std::stringstream ss(R"({"user":1,"item":5})");
  EXPECT_THROW(read_event_stream(ss), DataError);
}

}  // namespace
}  // namespace sesrec
