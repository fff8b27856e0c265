#pragma once

#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "sesrec/common.hpp"

namespace sesrec {

enum class ThresholdStrategy { kMean, kMedian, kConst };

inline std::string to_string(ThresholdStrategy s) {
  switch (s) {
    case ThresholdStrategy::kMean: return "mean";
    case ThresholdStrategy::kMedian: return "median";
    case ThresholdStrategy::kConst: return "const";
  }
  return "?";
}

inline ThresholdStrategy threshold_strategy_from_string(const std::string& s) {
  if (s == "mean") return ThresholdStrategy::kMean;
  if (s == "median") return ThresholdStrategy::kMedian;
  if (s == "const") return ThresholdStrategy::kConst;
  throw ConfigError("unknown threshold_strategy: " + s + " (expected mean|median|const)");
}

// Model dimensions and training hyperparameters, read from one flat
// key=value file. Vocabulary sizes are derived from the dataset, not here.
struct Config {
  // embedding / encoder dims
  int d_i = 48;
  int d_q = 64;
  int d = 48;
  int n_layers = 1;
  int n_heads = 2;
  int ffn_hidden = 0;  // 0 -> 2*d
  int mlp_hidden = 64;
  int k_search_sources = 3;
  double init_std = 0.02;
  double temperature_init = 0.07;
  double dropout = 0.0;
  bool use_mie = true;

  // interest separation threshold
  ThresholdStrategy threshold_strategy = ThresholdStrategy::kMean;
  double threshold_const = 0.125;

  // sequence limits
  int max_rec_len = 150;
  int max_search_len = 25;

  // data prep
  int min_interactions = 5;
  int min_item_count = 5;
  int max_train_targets_per_user = 0;  // 0 -> all train targets

  // optimization
  int batch_size = 256;
  double learning_rate = 0.001;
  double alpha = 0.1;
  double beta = 0.001;
  double lambda = 1e-6;
  double margin = 0.1;
  int max_epochs = 100;
  int patience = 5;
  uint64_t seed = 42;
  int n_train_candidates = 5;  // 1 positive + N-1 negatives
  int align_negatives = 64;
  double grad_clip = 5.0;  // 0 disables
  int eval_negatives = 99;

  static Config from_file(const std::string& path) {
    KvReader kv(parse_kv_file(path));
    return from_reader(kv);
  }

  static Config from_map(const std::map<std::string, std::string>& map) {
    KvReader kv(map);
    return from_reader(kv);
  }

  static Config from_reader(KvReader& kv) {
    Config c;
    c.d_i = static_cast<int>(kv.get_int("d_i", c.d_i));
    c.d_q = static_cast<int>(kv.get_int("d_q", c.d_q));
    c.d = static_cast<int>(kv.get_int("d", c.d));
    c.n_layers = static_cast<int>(kv.get_int("n_layers", c.n_layers));
    c.n_heads = static_cast<int>(kv.get_int("n_heads", c.n_heads));
    c.ffn_hidden = static_cast<int>(kv.get_int("ffn_hidden", c.ffn_hidden));
    c.mlp_hidden = static_cast<int>(kv.get_int("mlp_hidden", c.mlp_hidden));
    c.k_search_sources = static_cast<int>(kv.get_int("k_search_sources", c.k_search_sources));
    c.init_std = kv.get_double("init_std", c.init_std);
    c.temperature_init = kv.get_double("temperature_init", c.temperature_init);
    c.dropout = kv.get_double("dropout", c.dropout);
    c.use_mie = kv.get_bool("use_mie", c.use_mie);
    c.threshold_strategy =
        threshold_strategy_from_string(kv.get_str("threshold_strategy", to_string(c.threshold_strategy)));
    c.threshold_const = kv.get_double("threshold_const", c.threshold_const);
    c.max_rec_len = static_cast<int>(kv.get_int("max_rec_len", c.max_rec_len));
    c.max_search_len = static_cast<int>(kv.get_int("max_search_len", c.max_search_len));
    c.min_interactions = static_cast<int>(kv.get_int("min_interactions", c.min_interactions));
    c.min_item_count = static_cast<int>(kv.get_int("min_item_count", c.min_item_count));
    c.max_train_targets_per_user =
        static_cast<int>(kv.get_int("max_train_targets_per_user", c.max_train_targets_per_user));
    c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
    c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
    c.alpha = kv.get_double("alpha", c.alpha);
    c.beta = kv.get_double("beta", c.beta);
    c.lambda = kv.get_double("lambda", c.lambda);
    c.margin = kv.get_double("margin", c.margin);
    c.max_epochs = static_cast<int>(kv.get_int("max_epochs", c.max_epochs));
    c.patience = static_cast<int>(kv.get_int("patience", c.patience));
    c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(c.seed)));
    c.n_train_candidates = static_cast<int>(kv.get_int("n_train_candidates", c.n_train_candidates));
    c.align_negatives = static_cast<int>(kv.get_int("align_negatives", c.align_negatives));
    c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
    c.eval_negatives = static_cast<int>(kv.get_int("eval_negatives", c.eval_negatives));
    kv.check_unused();
    c.validate();
    return c;
  }

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    auto put_num = [&](const std::string& k, double v) {
      std::ostringstream os;
      os << std::setprecision(17) << v;
      m[k] = os.str();
    };
    m["d_i"] = std::to_string(d_i);
    m["d_q"] = std::to_string(d_q);
    m["d"] = std::to_string(d);
    m["n_layers"] = std::to_string(n_layers);
    m["n_heads"] = std::to_string(n_heads);
    m["ffn_hidden"] = std::to_string(ffn_hidden);
    m["mlp_hidden"] = std::to_string(mlp_hidden);
    m["k_search_sources"] = std::to_string(k_search_sources);
    put_num("init_std", init_std);
    put_num("temperature_init", temperature_init);
    put_num("dropout", dropout);
    m["use_mie"] = use_mie ? "true" : "false";
    m["threshold_strategy"] = to_string(threshold_strategy);
    put_num("threshold_const", threshold_const);
    m["max_rec_len"] = std::to_string(max_rec_len);
    m["max_search_len"] = std::to_string(max_search_len);
    m["min_interactions"] = std::to_string(min_interactions);
    m["min_item_count"] = std::to_string(min_item_count);
    m["max_train_targets_per_user"] = std::to_string(max_train_targets_per_user);
    m["batch_size"] = std::to_string(batch_size);
    put_num("learning_rate", learning_rate);
    put_num("alpha", alpha);
    put_num("beta", beta);
    put_num("lambda", lambda);
    put_num("margin", margin);
    m["max_epochs"] = std::to_string(max_epochs);
    m["patience"] = std::to_string(patience);
    m["seed"] = std::to_string(seed);
    m["n_train_candidates"] = std::to_string(n_train_candidates);
    m["align_negatives"] = std::to_string(align_negatives);
    put_num("grad_clip", grad_clip);
    m["eval_negatives"] = std::to_string(eval_negatives);
    return m;
  }

  void validate() const {
    if (d <= 0 || d_i <= 0 || d_q <= 0) throw ConfigError("dims must be positive");
    if (d % n_heads != 0) throw ConfigError("d must be divisible by n_heads");
    if (d_i % 2 != 0 || d_q % 2 != 0)
      throw ConfigError("d_i and d_q must be even (split between id and attribute/term halves)");
    if (n_layers < 1 || n_heads < 1) throw ConfigError("n_layers and n_heads must be >= 1");
    if (max_rec_len < 1 || max_search_len < 1) throw ConfigError("sequence limits must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate < 0) throw ConfigError("learning_rate must be >= 0");
    if (alpha < 0 || beta < 0 || lambda < 0) throw ConfigError("loss weights must be >= 0");
    if (margin < 0) throw ConfigError("margin must be >= 0");
    if (n_train_candidates < 1) throw ConfigError("n_train_candidates must be >= 1");
    if (align_negatives < 1) throw ConfigError("align_negatives must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (temperature_init <= 0) throw ConfigError("temperature_init must be > 0");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0,1)");
    if (threshold_strategy == ThresholdStrategy::kConst && threshold_const <= 0)
      throw ConfigError("threshold_const must be > 0");
    if (eval_negatives < 1) throw ConfigError("eval_negatives must be >= 1");
  }

  int ffn_width() const { return ffn_hidden > 0 ? ffn_hidden : 2 * d; }
  int d_u() const { return d; }

  // Canonical rendering, hashed into checkpoints to detect evaluating a
  // checkpoint under a different architecture.
  std::string canonical_string() const {
    std::ostringstream os;
    os << "d_i=" << d_i << ";d_q=" << d_q << ";d=" << d << ";n_layers=" << n_layers
       << ";n_heads=" << n_heads << ";ffn_hidden=" << ffn_width() << ";mlp_hidden=" << mlp_hidden
       << ";k=" << k_search_sources << ";use_mie=" << use_mie
       << ";threshold=" << to_string(threshold_strategy) << ";threshold_const=" << threshold_const
       << ";max_rec_len=" << max_rec_len << ";max_search_len=" << max_search_len
       << ";alpha=" << alpha << ";beta=" << beta << ";lambda=" << lambda << ";margin=" << margin
       << ";lr=" << learning_rate << ";batch=" << batch_size << ";seed=" << seed
       << ";candidates=" << n_train_candidates << ";align_neg=" << align_negatives
       << ";dropout=" << dropout;
    return os.str();
  }
  uint64_t hash() const { return fnv1a64(canonical_string()); }
};

}  // namespace sesrec
