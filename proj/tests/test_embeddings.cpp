#include "sesrec/embeddings.hpp"

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace sesrec {
namespace {

using M = ad::Mat<double>;

Config small_config() {
  Config cfg;
  cfg.d_i = 4;
  cfg.d_q = 4;
  cfg.d = 4;
  cfg.n_heads = 2;
  cfg.max_rec_len = 6;
  cfg.max_search_len = 5;
  cfg.k_search_sources = 3;
  cfg.init_std = 0.05;
  return cfg;
}

struct Fixture {
  Config cfg = small_config();
  ad::ParamStore<double> store;
  EmbeddingTables<double> tables;

  Fixture() {
    Rng rng = make_rng(99);
    tables = embeddings::build_tables(store, cfg, VocabMap({1}), VocabMap({10, 20, 30}),
                                      VocabMap({0, 1}), VocabMap({5, 6}), VocabMap({1, 2, 3}), rng);
  }
};

TEST(BuildTables, ShapesAndPaddingRows) {
  Fixture f;
  EXPECT_EQ(f.tables.item_id_table->value.rows(), 4);  // 3 items + pad
  EXPECT_EQ(f.tables.item_id_table->value.cols(), 2);
  EXPECT_EQ(f.tables.item_cat_table->value.cols(), 2);
  EXPECT_EQ(f.tables.query_id_table->value.rows(), 3);
  EXPECT_EQ(f.tables.pos_rec->value.rows(), 6);
  EXPECT_EQ(f.tables.search_type->value.rows(), 3);
  EXPECT_EQ(f.tables.W_i->value.rows(), 4);
  EXPECT_EQ(f.tables.W_i->value.cols(), 4);
  // Reserved padding rows are zero-initialized and readable.
  EXPECT_DOUBLE_EQ(f.tables.item_id_table->value.row(0).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(f.tables.user_table->value.row(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(EmbedItem, ZeroTablesGiveZeroVector) {
  Fixture f;
  f.tables.item_id_table->value.setZero();
  f.tables.item_cat_table->value.setZero();
  ad::Tape<double> tape;
  ad::Var v = embeddings::embed_item(tape, f.tables, 20, 1);
  EXPECT_DOUBLE_EQ(tape.val(v).cwiseAbs().maxCoeff(), 0.0);
}

TEST(EmbedItem, ConcatenationMatchesManualLookup) {
  Fixture f;
  ad::Tape<double> tape;
  ad::Var v = embeddings::embed_item(tape, f.tables, 20, 1);
  int id_row = f.tables.items.index_of(20);
  int cat_row = f.tables.categories.index_of(1);
  ASSERT_EQ(tape.val(v).cols(), 4);
  EXPECT_DOUBLE_EQ(tape.val(v)(0, 0), f.tables.item_id_table->value(id_row, 0));
  EXPECT_DOUBLE_EQ(tape.val(v)(0, 1), f.tables.item_id_table->value(id_row, 1));
  EXPECT_DOUBLE_EQ(tape.val(v)(0, 2), f.tables.item_cat_table->value(cat_row, 0));
  EXPECT_DOUBLE_EQ(tape.val(v)(0, 3), f.tables.item_cat_table->value(cat_row, 1));
}

TEST(EmbedItem, UnknownIdErrors) {
  Fixture f;
  ad::Tape<double> tape;
  EXPECT_THROW(embeddings::embed_item(tape, f.tables, 999, 0), DataError);
  EXPECT_THROW(embeddings::embed_item(tape, f.tables, 10, 42), DataError);
}

TEST(EmbedQuery, IdenticalTermsMeanIsThatRow) {
  Fixture f;
  Query q{5, {2, 2, 2}, 0};
  ad::Tape<double> tape;
  ad::Var v = embeddings::embed_query(tape, f.tables, q);
  int term_row = f.tables.terms.index_of(2);
  EXPECT_NEAR(tape.val(v)(0, 2), f.tables.term_table->value(term_row, 0), 1e-12);
  EXPECT_NEAR(tape.val(v)(0, 3), f.tables.term_table->value(term_row, 1), 1e-12);
}

TEST(EmbedQuery, TwoTermMeanIsAverage) {
  Fixture f;
  Query q{5, {1, 3}, 0};
  ad::Tape<double> tape;
  ad::Var v = embeddings::embed_query(tape, f.tables, q);
  int r1 = f.tables.terms.index_of(1), r3 = f.tables.terms.index_of(3);
  for (int c = 0; c < 2; ++c) {
    double expect = 0.5 * (f.tables.term_table->value(r1, c) + f.tables.term_table->value(r3, c));
    EXPECT_NEAR(tape.val(v)(0, 2 + c), expect, 1e-12);
  }
}

TEST(EmbedQuery, SingleTermMeanIsThatRow) {
  Fixture f;
  Query q{6, {3}, 0};
  ad::Tape<double> tape;
  ad::Var v = embeddings::embed_query(tape, f.tables, q);
  int row = f.tables.terms.index_of(3);
  EXPECT_DOUBLE_EQ(tape.val(v)(0, 2), f.tables.term_table->value(row, 0));
}

TEST(EmbedQuery, EmptyTermListErrors) {
  Fixture f;
  Query q{5, {}, 0};
  ad::Tape<double> tape;
  EXPECT_THROW(embeddings::embed_query(tape, f.tables, q), DataError);
}

TEST(Project, IdentityProjectionKeepsInput) {
  Fixture f;
  f.tables.W_i->value = M::Identity(4, 4);
  ad::Tape<double> tape;
  M e = M::Random(3, 4);
  ad::Var out = embeddings::project_items(tape, f.tables, tape.value(e));
  EXPECT_LT((tape.val(out) - e).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Project, ZeroProjectionGivesZero) {
  Fixture f;
  f.tables.W_q->value.setZero();
  ad::Tape<double> tape;
  ad::Var out = embeddings::project_queries(tape, f.tables, tape.value(M::Random(2, 4)));
  EXPECT_DOUBLE_EQ(tape.val(out).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Project, MatchesHandRolledMatmulOracle) {
  Fixture f;
  Rng rng = make_rng(7);
  std::normal_distribution<double> dist(0, 1);
  M e(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) e(i, j) = dist(rng);
  ad::Tape<double> tape;
  ad::Var out = embeddings::project_items(tape, f.tables, tape.value(e));
  oracles::Matrix eo(3, oracles::Vec(4)), wo(4, oracles::Vec(4));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) eo[i][j] = e(i, j);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) wo[i][j] = f.tables.W_i->value(i, j);
  auto expect = oracles::matmul(eo, wo);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(tape.val(out)(i, j), expect[i][j], 1e-6);
}

TEST(Project, WidthMismatchThrows) {
  Fixture f;
  ad::Tape<double> tape;
  EXPECT_THROW(embeddings::project_items(tape, f.tables, tape.value(M::Zero(2, 3))), ShapeError);
}

TEST(Project, Linearity) {
  Fixture f;
  ad::Tape<double> tape;
  M e = M::Random(2, 4);
  ad::Var a = embeddings::project_items(tape, f.tables, tape.value(e));
  ad::Var b = embeddings::project_items(tape, f.tables, tape.value((2.5 * e).eval()));
  EXPECT_LT((tape.val(b) - 2.5 * tape.val(a)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GroupPool, CountsPartitionRows) {
  ad::Tape<double> tape;
  M e(3, 4);
  e << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  ad::Var out = embeddings::group_pool_clicked(tape, tape.value(e), {2, 0, 1});
  ASSERT_EQ(tape.val(out).rows(), 3);
  // row0 = mean of rows 0..1, row1 = zero (no clicks), row2 = row 2
  EXPECT_DOUBLE_EQ(tape.val(out)(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(tape.val(out)(0, 3), 6.0);
  EXPECT_DOUBLE_EQ(tape.val(out)(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(tape.val(out)(2, 0), 9.0);
}

TEST(GroupPool, AllSingleClicksIsIdentity) {
  ad::Tape<double> tape;
  M e = M::Random(3, 4);
  ad::Var out = embeddings::group_pool_clicked(tape, tape.value(e), {1, 1, 1});
  EXPECT_LT((tape.val(out) - e).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GroupPool, SingleQueryOwningAllClicksIsGlobalMean) {
  ad::Tape<double> tape;
  M e = M::Random(5, 4);
  ad::Var out = embeddings::group_pool_clicked(tape, tape.value(e), {5});
  for (int j = 0; j < 4; ++j) EXPECT_NEAR(tape.val(out)(0, j), e.col(j).mean(), 1e-12);
}

TEST(GroupPool, CountMismatchThrows) {
  ad::Tape<double> tape;
  EXPECT_THROW(embeddings::group_pool_clicked(tape, tape.value(M::Zero(3, 4)), {1, 1}), ShapeError);
}

TEST(RecBiasEncode, ZeroPositionsKeepInput) {
  Fixture f;
  f.tables.pos_rec->value.setZero();
  ad::Tape<double> tape;
  M e = M::Random(3, 4);
  ad::Var out = embeddings::rec_bias_encode(tape, f.tables, tape.value(e), {1, 1, 1});
  EXPECT_LT((tape.val(out) - e).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RecBiasEncode, ZeroInputGivesPositionRows) {
  Fixture f;
  ad::Tape<double> tape;
  ad::Var out = embeddings::rec_bias_encode(tape, f.tables, tape.value(M::Zero(2, 4).eval()), {1, 1});
  EXPECT_LT((tape.val(out) - f.tables.pos_rec->value.topRows(2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RecBiasEncode, RandomCaseMatchesElementwiseAdd) {
  Fixture f;
  ad::Tape<double> tape;
  M e = M::Random(4, 4);
  ad::Var out = embeddings::rec_bias_encode(tape, f.tables, tape.value(e), {1, 1, 1, 1});
  M expect = e + f.tables.pos_rec->value.topRows(4);
  EXPECT_LT((tape.val(out) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RecBiasEncode, SequenceBeyondPositionTableThrows) {
  Fixture f;
  ad::Tape<double> tape;
  EXPECT_THROW(
      embeddings::rec_bias_encode(tape, f.tables, tape.value(M::Zero(7, 4).eval()),
                                  std::vector<uint8_t>(7, 1)),
      ShapeError);
}

TEST(RecBiasEncode, PaddedRowsExactlyZero) {
  Fixture f;
  ad::Tape<double> tape;
  M e = M::Random(4, 4);
  ad::Var out = embeddings::rec_bias_encode(tape, f.tables, tape.value(e), {1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(tape.val(out).row(2).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_DOUBLE_EQ(tape.val(out).row(3).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(tape.val(out).row(0).cwiseAbs().maxCoeff(), 0.0);
}

TEST(SearchBiasEncode, OnlyQueryTermNonzero) {
  Fixture f;
  f.tables.pos_search->value.setZero();
  f.tables.search_type->value.setZero();
  ad::Tape<double> tape;
  M eq = M::Random(2, 4);
  ad::Var out = embeddings::search_bias_encode(tape, f.tables, tape.value(eq),
                                               tape.value(M::Zero(2, 4).eval()), {0, 1}, {1, 1});
  EXPECT_LT((tape.val(out) - eq).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SearchBiasEncode, DistinctSourcesDifferByTypeRows) {
  Fixture f;
  ad::Tape<double> tape;
  M eq = M::Zero(2, 4);
  M ec = M::Zero(2, 4);
  f.tables.pos_search->value.setZero();
  ad::Var out =
      embeddings::search_bias_encode(tape, f.tables, tape.value(eq), tape.value(ec), {0, 2}, {1, 1});
  M diff = tape.val(out).row(0) - tape.val(out).row(1);
  M expect = f.tables.search_type->value.row(0) - f.tables.search_type->value.row(2);
  EXPECT_LT((diff - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SearchBiasEncode, ZeroClickQueryAddsZeroPooledRow) {
  Fixture f;
  ad::Tape<double> tape;
  M eq = M::Random(1, 4);
  ad::Var pooled = embeddings::group_pool_clicked(tape, tape.value(M::Zero(0, 4).eval()), {0});
  ad::Var out =
      embeddings::search_bias_encode(tape, f.tables, tape.value(eq), pooled, {1}, {1});
  M expect = eq + f.tables.pos_search->value.topRows(1) + f.tables.search_type->value.row(1).matrix();
  EXPECT_LT((tape.val(out) - expect).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SearchBiasEncode, SourceTypeOutOfRangeThrows) {
  Fixture f;
  ad::Tape<double> tape;
  EXPECT_THROW(embeddings::search_bias_encode(tape, f.tables, tape.value(M::Zero(1, 4).eval()),
                                              tape.value(M::Zero(1, 4).eval()), {3}, {1}),
               DataError);
}

TEST(VocabMapTest, PaddingReservedAndLookupsWork) {
  VocabMap v({30, 10, 20, 10});
  EXPECT_EQ(v.size(), 3);
  EXPECT_EQ(v.index_of(10), 1);
  EXPECT_EQ(v.index_of(20), 2);
  EXPECT_EQ(v.index_of(30), 3);
  EXPECT_EQ(v.id_at(2), 20);
  EXPECT_THROW(v.index_of(99), DataError);
}

}  // namespace
}  // namespace sesrec
