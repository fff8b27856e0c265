// sesrec command-line front end: synthetic data generation, training,
// evaluation, and the analysis commands.

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sesrec/analysis.hpp"
#include "sesrec/config.hpp"
#include "sesrec/data_model.hpp"
#include "sesrec/evaluator.hpp"
#include "sesrec/model.hpp"
#include "sesrec/synthetic.hpp"
#include "sesrec/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::vector<sesrec::RawRecord> load_events(const std::string& data_path) {
  fs::path p(data_path);
  if (fs::is_directory(p)) p /= "events.jsonl";
  return sesrec::read_event_file(p.string());
}

sesrec::Config load_config(const std::string& config_path, std::optional<uint64_t> seed_override) {
  sesrec::Config cfg =
      config_path.empty() ? sesrec::Config() : sesrec::Config::from_file(config_path);
  if (seed_override) cfg.seed = *seed_override;
  return cfg;
}

void write_text(const std::string& path, const std::string& content) {
  if (path.empty() || path == "-") {
    std::cout << content;
    return;
  }
  std::ofstream out(path);
  if (!out) throw sesrec::DataError("cannot write output file: " + path);
  out << content;
}

std::string metrics_csv(const sesrec::MetricTable& table) {
  std::ostringstream os;
  os << "metric,value\n" << std::setprecision(10);
  for (const auto& [k, v] : table.means) os << k << "," << v << "\n";
  return os.str();
}

std::string metrics_json(const sesrec::MetricTable& table) {
  json j;
  for (const auto& [k, v] : table.means) j[k] = v;
  return j.dump(2) + "\n";
}

std::string per_user_csv(const sesrec::MetricTable& table) {
  std::ostringstream os;
  os << "user,rank,HIT@1,HIT@5,HIT@10,NDCG@5,NDCG@10,MRR\n" << std::setprecision(10);
  for (const auto& r : table.per_user)
    os << r.user << "," << r.rank << "," << r.hit1 << "," << r.hit5 << "," << r.hit10 << ","
       << r.ndcg5 << "," << r.ndcg10 << "," << r.mrr << "\n";
  return os.str();
}

struct CommonFlags {
  std::optional<uint64_t> seed;
  std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--seed", flags.seed, "Override the config seed");
  cmd->add_option("--format", flags.format, "Output format: csv or json")
      ->check(CLI::IsMember({"csv", "json"}));
}

// Loads a trained model: dataset prep with the checkpoint's config, model
// construction, parameter restore.
struct LoadedModel {
  sesrec::Config cfg;
  sesrec::DatasetBundle bundle;
  std::unique_ptr<sesrec::Model<float>> model;
};

LoadedModel load_model(const std::string& ckpt, const std::string& data_path,
                       const std::string& config_path) {
  LoadedModel lm;
  lm.cfg = config_path.empty() ? sesrec::trainer::config_from_checkpoint_meta(ckpt)
                               : sesrec::Config::from_file(config_path);
  lm.bundle = sesrec::prepare_dataset(load_events(data_path), lm.cfg);
  lm.model = std::make_unique<sesrec::Model<float>>(lm.cfg, lm.bundle, lm.cfg.seed);
  auto info = sesrec::trainer::load_checkpoint(ckpt, lm.model->store(), lm.cfg);
  if (info.config_hash_mismatch)
    std::cerr << "warning: checkpoint " << ckpt
              << " was trained under a different config than the one in use\n";
  return lm;
}

int cmd_generate_data(const std::string& config_path, const std::string& out_dir,
                      const CommonFlags& flags) {
  sesrec::SynthConfig cfg = sesrec::SynthConfig::from_file(config_path);
  uint64_t seed = flags.seed.value_or(42);
  auto records = sesrec::generate_synthetic(cfg, seed);
  fs::create_directories(out_dir);
  fs::path out = fs::path(out_dir) / "events.jsonl";
  std::ofstream os(out);
  if (!os) throw sesrec::DataError("cannot write " + out.string());
  sesrec::write_event_stream(os, records);
  std::cout << "wrote " << records.size() << " events to " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_ckpt, const CommonFlags& flags) {
  sesrec::Config cfg = load_config(config_path, flags.seed);
  auto records = load_events(data_path);
  sesrec::DatasetBundle bundle = sesrec::prepare_dataset(records, cfg);
  sesrec::Model<float> model(cfg, bundle, cfg.seed);
  sesrec::TrainResult result = sesrec::trainer::train(model, bundle);
  if (!out_ckpt.empty()) {
    if (fs::path(out_ckpt).has_parent_path())
      fs::create_directories(fs::path(out_ckpt).parent_path());
    sesrec::trainer::save_checkpoint(out_ckpt, model.store(), cfg, result.best_epoch,
                                     result.best_val_ndcg10);
    sesrec::trainer::write_train_log_csv(out_ckpt + ".log.csv", result);
  }
  std::cout << "trained " << result.epochs.size() << " epochs; best epoch " << result.best_epoch
            << " val NDCG@10 " << std::setprecision(6) << result.best_val_ndcg10 << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& ckpt, const std::string& data_path,
                 const std::string& config_path, const std::string& out_path,
                 const std::string& per_user_path, const CommonFlags& flags) {
  LoadedModel lm = load_model(ckpt, data_path, config_path);
  uint64_t seed = flags.seed.value_or(lm.cfg.seed);
  auto table = sesrec::evaluator::evaluate(*lm.model, lm.bundle.split.test, lm.bundle.histories,
                                           lm.bundle.catalog.items, lm.cfg.eval_negatives, seed);
  write_text(out_path, flags.format == "json" ? metrics_json(table) : metrics_csv(table));
  if (!per_user_path.empty()) write_text(per_user_path, per_user_csv(table));
  return kExitOk;
}

int cmd_analyze_js(const std::string& ckpt, const std::string& data_path,
                   const std::string& config_path, const std::string& out_path,
                   const std::string& dump_out, const std::string& from_dump,
                   const CommonFlags& flags) {
  LoadedModel lm = load_model(ckpt, data_path, config_path);
  std::vector<sesrec::DisentangleDumpRow> dump;
  if (!from_dump.empty()) {
    std::ifstream in(from_dump);
    if (!in) throw sesrec::DataError("cannot open dump file: " + from_dump);
    dump = sesrec::analysis::read_disentangle_dump(in);
  } else {
    dump = sesrec::analysis::collect_disentangle_dump(*lm.model, lm.bundle);
  }
  if (!dump_out.empty()) {
    std::ofstream out(dump_out);
    if (!out) throw sesrec::DataError("cannot write dump file: " + dump_out);
    sesrec::analysis::write_disentangle_dump(dump, out);
  }
  auto report = sesrec::analysis::divergences_from_dump(dump, lm.bundle);
  if (flags.format == "json") {
    json j;
    j["skipped_users"] = report.skipped_users;
    j["rows"] = json::array();
    for (const auto& r : report.rows)
      j["rows"].push_back({{"user", r.user}, {"d_similar", r.d_similar}, {"d_dissimilar", r.d_dissimilar}});
    write_text(out_path, j.dump(2) + "\n");
  } else {
    std::ostringstream os;
    os << "user,d_similar,d_dissimilar\n" << std::setprecision(10);
    for (const auto& r : report.rows) os << r.user << "," << r.d_similar << "," << r.d_dissimilar << "\n";
    write_text(out_path, os.str());
  }
  std::cerr << "users reported: " << report.rows.size() << ", skipped: " << report.skipped_users
            << "\n";
  return kExitOk;
}

int cmd_analyze_cosine(const std::string& ckpt, const std::string& ckpt_noali,
                       const std::string& data_path, const std::string& config_path,
                       const std::string& config_noali_path, const std::string& out_path,
                       const CommonFlags& flags) {
  LoadedModel with = load_model(ckpt, data_path, config_path);
  LoadedModel without = load_model(ckpt_noali, data_path, config_noali_path);
  auto [with_sum, without_sum] =
      sesrec::analysis::cosine_report(*with.model, *without.model, with.bundle.histories);
  auto row = [](const sesrec::CosineSummary& s) {
    return json{{"mean", s.mean}, {"q1", s.q1}, {"median", s.median}, {"q3", s.q3}, {"n", s.n}};
  };
  if (flags.format == "json") {
    json j;
    j["with_alignment"] = row(with_sum);
    j["without_alignment"] = row(without_sum);
    write_text(out_path, j.dump(2) + "\n");
  } else {
    std::ostringstream os;
    os << "model,mean,q1,median,q3,n\n" << std::setprecision(10);
    os << "with_alignment," << with_sum.mean << "," << with_sum.q1 << "," << with_sum.median << ","
       << with_sum.q3 << "," << with_sum.n << "\n";
    os << "without_alignment," << without_sum.mean << "," << without_sum.q1 << ","
       << without_sum.median << "," << without_sum.q3 << "," << without_sum.n << "\n";
    write_text(out_path, os.str());
  }
  return kExitOk;
}

// Runs each variant in a forked child so no parameter state is shared, then
// collects the per-variant metric JSON files.
template <typename RunVariant>
std::vector<json> run_isolated(int n, const std::string& tag, RunVariant run) {
  std::vector<fs::path> files;
  std::vector<pid_t> pids;
  for (int i = 0; i < n; ++i) {
    fs::path tmp = fs::temp_directory_path() /
                   ("sesrec_" + tag + "_" + std::to_string(getpid()) + "_" + std::to_string(i) + ".json");
    files.push_back(tmp);
    pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      int code = kExitOk;
      try {
        json j = run(i);
        std::ofstream out(tmp);
        out << j.dump();
      } catch (const std::exception& e) {
        std::cerr << "variant " << i << " failed: " << e.what() << "\n";
        code = kExitError;
      }
      _exit(code);
    }
    pids.push_back(pid);
  }
  for (pid_t pid : pids) {
    int status = 0;
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
      throw std::runtime_error("a parallel variant run failed");
  }
  std::vector<json> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw std::runtime_error("missing variant result: " + f.string());
    out.push_back(json::parse(in));
    std::error_code ec;
    fs::remove(f, ec);
  }
  return out;
}

int cmd_analyze_sweep(const std::string& param, std::vector<std::string> values,
                      const std::string& config_path, const std::string& data_path,
                      const std::string& out_path, bool parallel, const CommonFlags& flags) {
  sesrec::Config base = load_config(config_path, flags.seed);
  if (values.empty()) values = sesrec::analysis::default_sweep_values(param);
  auto records = load_events(data_path);
  std::vector<sesrec::SweepRow> rows;
  if (parallel) {
    auto results = run_isolated(static_cast<int>(values.size()), "sweep", [&](int i) {
      sesrec::Config cfg = sesrec::analysis::apply_sweep_value(base, param, values[i]);
      auto [metrics, tr] = sesrec::analysis::run_training(cfg, records);
      return json{{"value", values[i]},
                  {"ndcg10", metrics.means.at("NDCG@10")},
                  {"mrr", metrics.means.at("MRR")}};
    });
    for (const auto& j : results)
      rows.push_back(sesrec::SweepRow{j.at("value"), j.at("ndcg10"), j.at("mrr")});
  } else {
    rows = sesrec::analysis::sweep(param, values, base, records);
  }
  if (flags.format == "json") {
    json j = json::array();
    for (const auto& r : rows) j.push_back({{"value", r.value}, {"NDCG@10", r.ndcg10}, {"MRR", r.mrr}});
    write_text(out_path, j.dump(2) + "\n");
  } else {
    std::ostringstream os;
    os << "value,NDCG@10,MRR\n" << std::setprecision(10);
    for (const auto& r : rows) os << r.value << "," << r.ndcg10 << "," << r.mrr << "\n";
    write_text(out_path, os.str());
  }
  return kExitOk;
}

int cmd_analyze_ablation(const std::string& config_path, const std::string& data_path,
                         const std::string& out_path, bool parallel, const CommonFlags& flags) {
  sesrec::Config base = load_config(config_path, flags.seed);
  auto records = load_events(data_path);
  auto variants = sesrec::analysis::ablation_variants(base);
  std::vector<sesrec::AblationRow> rows;
  if (parallel) {
    auto results = run_isolated(static_cast<int>(variants.size()), "ablation", [&](int i) {
      auto [metrics, tr] = sesrec::analysis::run_training(variants[i].cfg, records);
      return json{{"label", variants[i].label}, {"metrics", metrics.means}};
    });
    for (const auto& j : results)
      rows.push_back(sesrec::AblationRow{j.at("label"),
                                         j.at("metrics").get<std::map<std::string, double>>()});
  } else {
    rows = sesrec::analysis::ablation(base, records);
  }
  const std::vector<std::string> cols = {"NDCG@5", "NDCG@10", "HIT@1", "HIT@5", "HIT@10", "MRR"};
  if (flags.format == "json") {
    json j = json::array();
    for (const auto& r : rows) {
      json row{{"model", r.label}};
      for (const auto& c : cols) row[c] = r.metrics.at(c);
      j.push_back(row);
    }
    write_text(out_path, j.dump(2) + "\n");
  } else {
    std::ostringstream os;
    os << "model";
    for (const auto& c : cols) os << "," << c;
    os << "\n" << std::setprecision(10);
    for (const auto& r : rows) {
      os << r.label;
      for (const auto& c : cols) os << "," << r.metrics.at(c);
      os << "\n";
    }
    write_text(out_path, os.str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SESRec: search-enhanced sequential recommendation"};
  app.require_subcommand(1);

  CommonFlags flags;

  // generate-data
  std::string gen_config, gen_out;
  auto* gen = app.add_subcommand("generate-data", "Generate a synthetic S&R event log");
  gen->add_option("--config", gen_config, "Synthetic generator config (key=value)")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  add_common(gen, flags);

  // train
  std::string train_config, train_data, train_out;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", train_config, "Model/training config (key=value)");
  tr->add_option("--data", train_data, "Event file or directory containing events.jsonl")->required();
  tr->add_option("--out", train_out, "Checkpoint output path");
  add_common(tr, flags);

  // evaluate
  std::string eval_ckpt, eval_data, eval_config, eval_out, eval_per_user;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  ev->add_option("--ckpt", eval_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", eval_data, "Event file or directory")->required();
  ev->add_option("--config", eval_config, "Config override (defaults to checkpoint metadata)");
  ev->add_option("--out", eval_out, "Metrics output file ('-' for stdout)");
  ev->add_option("--per-user", eval_per_user, "Per-user CSV output path");
  add_common(ev, flags);

  // analyze
  auto* an = app.add_subcommand("analyze", "Analysis commands");
  an->require_subcommand(1);

  std::string js_ckpt, js_data, js_config, js_out, js_dump_out, js_from_dump;
  auto* js = an->add_subcommand("js", "Per-user JS divergence of separated interests");
  js->add_option("--ckpt", js_ckpt)->required();
  js->add_option("--data", js_data)->required();
  js->add_option("--config", js_config);
  js->add_option("--out", js_out, "Report output ('-' for stdout)");
  js->add_option("--dump-out", js_dump_out, "Also write the per-user selection dump (JSONL)");
  js->add_option("--from-dump", js_from_dump, "Compute the report from an existing dump");
  add_common(js, flags);

  std::string cos_ckpt, cos_ckpt_noali, cos_data, cos_config, cos_config_noali, cos_out;
  auto* cos = an->add_subcommand("cosine", "Query/clicked-item cosine under two models");
  cos->add_option("--ckpt", cos_ckpt, "Model trained with the alignment loss")->required();
  cos->add_option("--ckpt-noali", cos_ckpt_noali, "Model trained without the alignment loss")->required();
  cos->add_option("--data", cos_data)->required();
  cos->add_option("--config", cos_config);
  cos->add_option("--config-noali", cos_config_noali);
  cos->add_option("--out", cos_out);
  add_common(cos, flags);

  std::string sweep_param, sweep_config, sweep_data, sweep_out;
  std::vector<std::string> sweep_values;
  bool sweep_parallel = false;
  auto* sw = an->add_subcommand("sweep", "Train one model per hyperparameter value");
  sw->add_option("--param", sweep_param, "alpha | beta | threshold_strategy")->required();
  sw->add_option("--values", sweep_values, "Values to sweep (defaults per parameter)")->delimiter(',');
  sw->add_option("--config", sweep_config);
  sw->add_option("--data", sweep_data)->required();
  sw->add_option("--out", sweep_out);
  sw->add_flag("--parallel", sweep_parallel, "Run variants in isolated processes");
  add_common(sw, flags);

  std::string abl_config, abl_data, abl_out;
  bool abl_parallel = false;
  auto* abl = an->add_subcommand("ablation", "Base / +L_ali / +L_con / +MIE component study");
  abl->add_option("--config", abl_config);
  abl->add_option("--data", abl_data)->required();
  abl->add_option("--out", abl_out);
  abl->add_flag("--parallel", abl_parallel, "Run variants in isolated processes");
  add_common(abl, flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_generate_data(gen_config, gen_out, flags);
    if (tr->parsed()) return cmd_train(train_config, train_data, train_out, flags);
    if (ev->parsed())
      return cmd_evaluate(eval_ckpt, eval_data, eval_config, eval_out, eval_per_user, flags);
    if (js->parsed())
      return cmd_analyze_js(js_ckpt, js_data, js_config, js_out, js_dump_out, js_from_dump, flags);
    if (cos->parsed())
      return cmd_analyze_cosine(cos_ckpt, cos_ckpt_noali, cos_data, cos_config, cos_config_noali,
                                cos_out, flags);
    if (sw->parsed())
      return cmd_analyze_sweep(sweep_param, sweep_values, sweep_config, sweep_data, sweep_out,
                               sweep_parallel, flags);
    if (abl->parsed())
      return cmd_analyze_ablation(abl_config, abl_data, abl_out, abl_parallel, flags);
    std::cerr << "no subcommand\n";
    return kExitError;
  } catch (const sesrec::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sesrec::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
}
