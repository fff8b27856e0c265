#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "sesrec/evaluator.hpp"
#include "sesrec/model.hpp"

namespace sesrec {

struct EpochLog {
  int epoch = 0;
  double l_rec = 0, l_ali = 0, l_con = 0, l_total = 0;
  double val_ndcg10 = 0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_ndcg10 = 0;
  int64_t align_pairs_empty = 0;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int64_t t = 0;
};

namespace trainer {

// Standard Adam update with bias correction, applied in registration order.
template <typename S>
void adam_step(ad::ParamStore<S>& store, AdamState& state, double lr) {
  ++state.t;
  const S b1 = static_cast<S>(state.beta1), b2 = static_cast<S>(state.beta2);
  const S corr1 = static_cast<S>(1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
  const S corr2 = static_cast<S>(1.0 - std::pow(state.beta2, static_cast<double>(state.t)));
  const S eps = static_cast<S>(state.eps);
  for (ad::Param<S>* p : store.all()) {
    p->adam_m = b1 * p->adam_m + (1 - b1) * p->grad;
    p->adam_v = (b2 * p->adam_v.array() + (1 - b2) * p->grad.array().square()).matrix();
    auto m_hat = p->adam_m.array() / corr1;
    auto v_hat = p->adam_v.array() / corr2;
    p->value.array() -= static_cast<S>(lr) * m_hat / (v_hat.sqrt() + eps);
  }
}

template <typename S>
double global_grad_norm(ad::ParamStore<S>& store) {
  double sq = 0;
  for (ad::Param<S>* p : store.all()) sq += static_cast<double>(p->grad.template cast<double>().squaredNorm());
  return std::sqrt(sq);
}

template <typename S>
void clip_grads(ad::ParamStore<S>& store, double max_norm) {
  if (max_norm <= 0) return;
  double norm = global_grad_norm(store);
  if (norm > max_norm) {
    S scale = static_cast<S>(max_norm / norm);
    for (ad::Param<S>* p : store.all()) p->grad *= scale;
  }
}

// L2 scope: all non-table parameters in full, plus the table rows touched in
// the current batch.
template <typename S>
struct TouchedRows {
  std::map<ad::Param<S>*, std::unordered_set<int>> rows;

  void absorb(const ad::Tape<S>& tape) {
    for (const auto& [param, idx] : tape.touched_rows())
      rows[param].insert(idx.begin(), idx.end());
  }
};

template <typename S>
double l2_penalty_value(ad::ParamStore<S>& store, const TouchedRows<S>& touched, double lambda) {
  if (lambda <= 0) return 0;
  double sq = 0;
  for (ad::Param<S>* p : store.all())
    if (!p->is_embedding_table) sq += static_cast<double>(p->value.template cast<double>().squaredNorm());
  for (const auto& [param, rows] : touched.rows)
    for (int r : rows) sq += static_cast<double>(param->value.row(r).template cast<double>().squaredNorm());
  return lambda * sq;
}

template <typename S>
void add_l2_penalty_grads(ad::ParamStore<S>& store, const TouchedRows<S>& touched, double lambda) {
  if (lambda <= 0) return;
  const S two_lambda = static_cast<S>(2.0 * lambda);
  for (ad::Param<S>* p : store.all())
    if (!p->is_embedding_table) p->grad += two_lambda * p->value;
  for (const auto& [param, rows] : touched.rows)
    for (int r : rows) param->grad.row(r) += two_lambda * param->value.row(r);
}

template <typename S>
void clamp_temperature(Model<S>& model) {
  auto& tau = model.align_params().tau->value;
  if (tau(0, 0) < static_cast<S>(AlignmentParams<S>::kTauFloor))
    tau(0, 0) = static_cast<S>(AlignmentParams<S>::kTauFloor);
}

// Uniformly samples `n` alignment negatives, excluding the example's own
// positives so every denominator term is a genuine negative.
template <typename S>
AlignNegatives sample_align_negatives(const Model<S>& model, const Catalog& catalog,
                                      const Example& ex, int n, Rng& rng) {
  AlignNegatives out;
  std::unordered_set<ItemId> pos_items;
  std::unordered_set<QueryId> pos_queries;
  for (const auto& s : ex.search_prefix) {
    pos_queries.insert(s.query.query_id);
    for (ItemId c : s.clicked_item_ids) pos_items.insert(c);
  }
  if (catalog.items.empty() || catalog.queries.empty()) throw DataError("catalog is empty");
  std::uniform_int_distribution<size_t> ipick(0, catalog.items.size() - 1);
  std::uniform_int_distribution<size_t> qpick(0, catalog.queries.size() - 1);
  int guard = 0;
  while (static_cast<int>(out.items.size()) < n && guard < 100000) {
    ItemId cand = catalog.items[ipick(rng)];
    ++guard;
    if (pos_items.count(cand)) continue;
    out.items.push_back({cand, model.category_of(cand)});
  }
  guard = 0;
  while (static_cast<int>(out.queries.size()) < n && guard < 100000) {
    QueryId cand = catalog.queries[qpick(rng)];
    ++guard;
    if (pos_queries.count(cand)) continue;
    out.queries.push_back(catalog.query_defs.at(cand));
  }
  if (static_cast<int>(out.items.size()) < n || static_cast<int>(out.queries.size()) < n)
    throw DataError("could not sample alignment negatives (vocabulary too small)");
  return out;
}

struct BatchStats {
  double rec = 0, ali = 0, con = 0, total = 0;
  int examples = 0;
};

// One optimization step over a batch of examples. Loss = mean of per-example
// losses + one L2 term. Throws on non-finite loss with full diagnostics.
template <typename S>
BatchStats train_batch(Model<S>& model, const Catalog& catalog, const Histories& histories,
                       const std::vector<const Example*>& batch, AdamState& adam, Rng& rng,
                       int epoch, int batch_index) {
  const Config& cfg = model.config();
  auto& store = model.store();
  store.zero_grads();
  TouchedRows<S> touched;
  BatchStats stats;
  const S inv_b = S(1) / static_cast<S>(batch.size());
  const std::vector<ItemId>& vocab = catalog.items;
  for (const Example* ex : batch) {
    auto interacted = interacted_items(histories.at(ex->user_id));
    auto negatives = sample_train_negatives(ex->target_item, interacted, vocab,
                                            cfg.n_train_candidates - 1, rng());
    AlignNegatives align_negs;
    bool has_pairs = false;
    for (const auto& s : ex->search_prefix)
      if (!s.clicked_item_ids.empty()) has_pairs = true;
    if (has_pairs) align_negs = sample_align_negatives(model, catalog, *ex, cfg.align_negatives, rng);

    ad::Tape<S> tape;
    Rng dropout_rng = make_rng(rng());
    auto loss = model.example_loss(tape, *ex, negatives, align_negs, cfg.dropout,
                                   cfg.dropout > 0 ? &dropout_rng : nullptr);
    double total = static_cast<double>(tape.val(loss.total)(0, 0));
    double rec = static_cast<double>(tape.val(loss.rec)(0, 0));
    double ali = static_cast<double>(tape.val(loss.ali)(0, 0));
    double con = static_cast<double>(tape.val(loss.con)(0, 0));
    if (!std::isfinite(total)) {
      std::ostringstream os;
      os << "non-finite loss at epoch " << epoch << ", batch " << batch_index << ", user "
         << ex->user_id << ": L_rec=" << rec << " L_ali=" << ali << " L_con=" << con;
      throw std::runtime_error(os.str());
    }
    tape.backward(loss.total, inv_b);
    touched.absorb(tape);
    stats.rec += rec;
    stats.ali += ali;
    stats.con += con;
    ++stats.examples;
  }
  double penalty = l2_penalty_value(store, touched, cfg.lambda);
  add_l2_penalty_grads(store, touched, cfg.lambda);
  clip_grads(store, cfg.grad_clip);
  adam_step(store, adam, cfg.learning_rate);
  clamp_temperature(model);

  double n = static_cast<double>(stats.examples);
  stats.rec /= n;
  stats.ali /= n;
  stats.con /= n;
  stats.total = stats.rec + cfg.alpha * stats.ali + cfg.beta * stats.con + penalty;
  return stats;
}

// Early-stopped training on the dataset's train split; keeps the checkpoint
// of the best validation NDCG@10 epoch.
template <typename S>
TrainResult train(Model<S>& model, const DatasetBundle& data) {
  const Config& cfg = model.config();
  if (data.split.train.empty()) throw DataError("train split is empty");
  if (data.split.validation.empty()) throw DataError("validation split is empty");

  // Optionally cap train targets per user to the most recent ones.
  std::vector<const Example*> train_examples;
  if (cfg.max_train_targets_per_user > 0) {
    std::map<UserId, std::vector<const Example*>> per_user;
    for (const auto& ex : data.split.train) per_user[ex.user_id].push_back(&ex);
    for (auto& [uid, xs] : per_user) {
      std::sort(xs.begin(), xs.end(), [](const Example* a, const Example* b) {
        return a->target_ts < b->target_ts;
      });
      size_t keep = std::min(xs.size(), static_cast<size_t>(cfg.max_train_targets_per_user));
      for (size_t i = xs.size() - keep; i < xs.size(); ++i) train_examples.push_back(xs[i]);
    }
  } else {
    for (const auto& ex : data.split.train) train_examples.push_back(&ex);
  }

  AdamState adam;
  TrainResult result;
  std::vector<ad::Mat<S>> best_values;
  double best_metric = -1;
  int best_epoch = -1;
  int bad_epochs = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, static_cast<uint64_t>(epoch));
    std::vector<const Example*> order = train_examples;
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog log;
    log.epoch = epoch;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Example*> batch(order.begin() + start, order.begin() + end);
      auto stats = train_batch(model, data.catalog, data.histories, batch, adam, rng, epoch, batches);
      log.l_rec += stats.rec;
      log.l_ali += stats.ali;
      log.l_con += stats.con;
      log.l_total += stats.total;
      ++batches;
    }
    log.l_rec /= batches;
    log.l_ali /= batches;
    log.l_con /= batches;
    log.l_total /= batches;

    auto val = evaluator::evaluate(model, data.split.validation, data.histories,
                                   data.catalog.items, cfg.eval_negatives, cfg.seed);
    log.val_ndcg10 = val.means.at("NDCG@10");
    result.epochs.push_back(log);

    if (log.val_ndcg10 > best_metric) {
      best_metric = log.val_ndcg10;
      best_epoch = epoch;
      best_values.clear();
      for (ad::Param<S>* p : model.store().all()) best_values.push_back(p->value);
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= cfg.patience) break;
    }
  }

  // Restore the best-validation parameters.
  if (!best_values.empty()) {
    size_t i = 0;
    for (ad::Param<S>* p : model.store().all()) p->value = best_values[i++];
  }
  result.best_epoch = best_epoch;
  result.best_val_ndcg10 = best_metric;
  return result;
}

inline void write_train_log_csv(const std::string& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log: " + path);
  out << "epoch,L_rec,L_ali,L_con,L,val_NDCG@10\n";
  out << std::setprecision(10);
  for (const auto& e : result.epochs)
    out << e.epoch << "," << e.l_rec << "," << e.l_ali << "," << e.l_con << "," << e.l_total << ","
        << e.val_ndcg10 << "\n";
}

// ---------------------------------------------------------------------------
// Checkpointing: binary parameter blob + JSON metadata sidecar.
// ---------------------------------------------------------------------------

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[8] = {'S', 'E', 'S', 'R', 'E', 'C', 'K', '1'};

template <typename S>
void save_checkpoint(const std::string& path, const ad::ParamStore<S>& store, const Config& cfg,
                     int epoch, double metric) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  auto write_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto write_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  out.write(kCheckpointMagic, 8);
  write_u32(kCheckpointVersion);
  write_u32(static_cast<uint32_t>(sizeof(S)));
  write_u64(cfg.hash());
  auto params = store.all();
  write_u32(static_cast<uint32_t>(params.size()));
  for (const ad::Param<S>* p : params) {
    write_u32(static_cast<uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u64(static_cast<uint64_t>(p->value.rows()));
    write_u64(static_cast<uint64_t>(p->value.cols()));
    out.write(reinterpret_cast<const char*>(p->value.data()),
              static_cast<std::streamsize>(sizeof(S) * p->value.size()));
    out.write(reinterpret_cast<const char*>(p->adam_m.data()),
              static_cast<std::streamsize>(sizeof(S) * p->adam_m.size()));
    out.write(reinterpret_cast<const char*>(p->adam_v.data()),
              static_cast<std::streamsize>(sizeof(S) * p->adam_v.size()));
  }
  if (!out) throw DataError("failed writing checkpoint: " + path);

  nlohmann::json meta;
  meta["version"] = kCheckpointVersion;
  std::ostringstream hex;
  hex << std::hex << cfg.hash();
  meta["config_hash"] = hex.str();
  meta["epoch"] = epoch;
  meta["metric"] = metric;
  meta["n_params"] = params.size();
  meta["config"] = cfg.to_map();
  std::ofstream mout(path + ".meta.json");
  if (!mout) throw DataError("cannot write checkpoint metadata: " + path + ".meta.json");
  mout << meta.dump(2) << "\n";
}

struct LoadInfo {
  int epoch = 0;
  double metric = 0;
  bool config_hash_mismatch = false;
};

// Rebuilds the training-time Config from a checkpoint's metadata sidecar.
inline Config config_from_checkpoint_meta(const std::string& ckpt_path) {
  const std::string meta_path = ckpt_path + ".meta.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("cannot open checkpoint metadata: " + meta_path);
  try {
    nlohmann::json meta = nlohmann::json::parse(in);
    auto m = meta.at("config").get<std::map<std::string, std::string>>();
    return Config::from_map(m);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad checkpoint metadata " + meta_path + ": " + e.what());
  }
}

// Loads a checkpoint into an existing store. The whole file is validated
// before any parameter is overwritten, so a corrupt file never half-loads.
template <typename S>
LoadInfo load_checkpoint(const std::string& path, ad::ParamStore<S>& store, const Config& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  auto fail = [&](const std::string& why) -> DataError {
    return DataError("corrupt checkpoint " + path + ": " + why);
  };
  auto read_u32 = [&]() {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw fail("truncated");
    return v;
  };
  auto read_u64 = [&]() {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw fail("truncated");
    return v;
  };
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw fail("bad magic");
  uint32_t version = read_u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint " + path + " has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  uint32_t scalar_size = read_u32();
  if (scalar_size != sizeof(S)) throw fail("scalar width mismatch");
  uint64_t hash = read_u64();
  uint32_t n_params = read_u32();

  struct Loaded {
    std::string name;
    ad::Mat<S> value, m, v;
  };
  std::vector<Loaded> loaded(n_params);
  for (auto& l : loaded) {
    uint32_t name_len = read_u32();
    if (name_len > 4096) throw fail("implausible name length");
    l.name.resize(name_len);
    in.read(l.name.data(), name_len);
    uint64_t rows = read_u64(), cols = read_u64();
    if (rows > (1u << 26) || cols > (1u << 26)) throw fail("implausible tensor shape");
    auto read_mat = [&](ad::Mat<S>& m) {
      m.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
      in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(sizeof(S) * m.size()));
      if (!in) throw fail("truncated tensor data");
    };
    read_mat(l.value);
    read_mat(l.m);
    read_mat(l.v);
  }
  // Validate against the live store before applying anything.
  for (const auto& l : loaded) {
    if (!store.has(l.name)) throw fail("unknown parameter '" + l.name + "'");
    const auto& p = store.get(l.name);
    if (p.value.rows() != l.value.rows() || p.value.cols() != l.value.cols())
      throw DataError("checkpoint " + path + ": parameter '" + l.name + "' has shape " +
                      std::to_string(l.value.rows()) + "x" + std::to_string(l.value.cols()) +
                      ", model expects " + std::to_string(p.value.rows()) + "x" +
                      std::to_string(p.value.cols()));
  }
  if (loaded.size() != store.all().size()) throw fail("parameter count mismatch");
  for (auto& l : loaded) {
    auto& p = store.get(l.name);
    p.value = std::move(l.value);
    p.adam_m = std::move(l.m);
    p.adam_v = std::move(l.v);
  }

  LoadInfo info;
  info.config_hash_mismatch = (hash != cfg.hash());
  std::ifstream min(path + ".meta.json");
  if (min) {
    try {
      nlohmann::json meta = nlohmann::json::parse(min);
      info.epoch = meta.value("epoch", 0);
      info.metric = meta.value("metric", 0.0);
    } catch (const nlohmann::json::exception&) {
      // metadata sidecar is advisory; the binary blob already validated
    }
  }
  return info;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check over every parameter group.
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  std::vector<std::pair<std::string, double>> per_param;
};

// Central differences against the analytic gradients of the full loss
// (including the L2 term) for one example. Uses the model's scalar type, so
// instantiate with double for tight tolerances.
template <typename S>
GradCheckReport finite_difference_check(Model<S>& model, const Example& ex,
                                        const std::vector<ItemId>& negatives,
                                        const AlignNegatives& align_negs, double h = 1e-5) {
  auto& store = model.store();
  const double lambda = model.config().lambda;

  // Analytic pass; also fixes the touched-row set, which is id-driven and
  // identical across the perturbed evaluations below.
  store.zero_grads();
  TouchedRows<S> touched;
  {
    ad::Tape<S> tape;
    auto loss = model.example_loss(tape, ex, negatives, align_negs);
    tape.backward(loss.total);
    touched.absorb(tape);
    add_l2_penalty_grads(store, touched, lambda);
  }

  auto loss_value = [&]() -> double {
    ad::Tape<S> tape(/*grad_enabled=*/false);
    auto loss = model.example_loss(tape, ex, negatives, align_negs);
    return static_cast<double>(tape.val(loss.total)(0, 0)) +
           l2_penalty_value(store, touched, lambda);
  };

  GradCheckReport report;
  for (ad::Param<S>* p : store.all()) {
    double worst = 0;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      S saved = p->value.data()[i];
      p->value.data()[i] = saved + static_cast<S>(h);
      double up = loss_value();
      p->value.data()[i] = saved - static_cast<S>(h);
      double down = loss_value();
      p->value.data()[i] = saved;
      double fd = (up - down) / (2 * h);
      double an = static_cast<double>(p->grad.data()[i]);
      if (std::abs(fd) < 1e-10 && std::abs(an) < 1e-10) continue;
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, rel);
    }
    report.per_param.push_back({p->name, worst});
    if (worst > report.max_rel_err) {
      report.max_rel_err = worst;
      report.worst_param = p->name;
    }
  }
  return report;
}

}  // namespace trainer
}  // namespace sesrec
