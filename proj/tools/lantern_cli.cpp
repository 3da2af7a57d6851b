// Batch surface over generation, training and the evaluation reports. Every
// command resolves (config file, --set overrides, flags) into a RunConfig,
// writes its artifacts plus resolved_config.txt and stamp.json under --out,
// and never touches paths outside --out.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lantern/dataset.hpp"
#include "lantern/digest.hpp"
#include "lantern/errors.hpp"
#include "lantern/eval.hpp"
#include "lantern/model.hpp"
#include "lantern/run_config.hpp"
#include "lantern/train.hpp"

namespace fs = std::filesystem;
using lantern::IoError;
using lantern::RunConfig;
using lantern::ValidationError;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file (key = value)");
  cmd->add_option("--out", args.out_dir, "output directory")->required();
  cmd->add_option("--set", args.sets, "override a config key (key=value, repeatable)");
  cmd->add_option("--seed", args.seed, "override gen.seed and train.seed")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_path.empty()) cfg = lantern::load_run_config(args.config_path);
  for (const std::string& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("config --set: expected key=value, got '" + kv + "'");
    }
    lantern::apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1), "--set");
  }
  if (args.seed_given) {
    cfg.gen.seed = args.seed;
    cfg.train.seed = args.seed;
  }
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << content;
  if (!f) throw IoError("write failed on " + path.string());
}

// Collects digests as artifacts are written, then drops stamp.json.
class Run {
 public:
  Run(const std::string& command, const CommonArgs& args) : command_(command), args_(args) {
    cfg_ = resolve(args);
    out_ = fs::path(args.out_dir);
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create directory " + out_.string() + ": " + ec.message());
    resolved_ = lantern::render_run_config(cfg_);
    write_text(out_ / "resolved_config.txt", resolved_);
  }

  const RunConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }

  void emit(const std::string& name, const std::string& content) {
    write_text(out_ / name, content);
    artifacts_[name] = lantern::sha256_hex(content);
  }

  void note_file(const std::string& label, const fs::path& path) {
    inputs_[label] = lantern::file_sha256_hex(path.string());
  }

  void note_artifact_file(const std::string& name) {
    artifacts_[name] = lantern::file_sha256_hex((out_ / name).string());
  }

  void stamp() {
    ordered_json j;
    j["command"] = command_;
    j["gen_seed"] = cfg_.gen.seed;
    j["train_seed"] = cfg_.train.seed;
    j["config_digest"] = lantern::sha256_hex(resolved_);
    if (!inputs_.empty()) j["inputs"] = inputs_;
    ordered_json arts;
    for (const auto& [name, digest] : artifacts_) arts[name] = digest;
    j["artifacts"] = arts;
    write_text(out_ / "stamp.json", j.dump(2) + "\n");
  }

 private:
  std::string command_;
  CommonArgs args_;
  RunConfig cfg_;
  fs::path out_;
  std::string resolved_;
  std::map<std::string, std::string> artifacts_;
  std::map<std::string, std::string> inputs_;
};

lantern::Dataset load_data(const RunConfig& cfg, Run& run) {
  if (cfg.data_dir.empty()) {
    throw ValidationError("config: data_dir must point at a generated dataset");
  }
  lantern::Dataset ds = lantern::load_dataset(cfg.data_dir);
  run.note_file("dataset.manifest", fs::path(cfg.data_dir) / "manifest.json");
  run.note_file("dataset.records", fs::path(cfg.data_dir) / "records.jsonl");
  return ds;
}

lantern::Checkpoint load_ckpt(const RunConfig& cfg, Run& run) {
  if (cfg.checkpoint.empty()) {
    throw ValidationError("config: checkpoint must point at a trained model");
  }
  lantern::Checkpoint cp = lantern::load_checkpoint(cfg.checkpoint);
  run.note_file("checkpoint", cfg.checkpoint);
  return cp;
}

std::vector<std::int64_t> held_out_users(const lantern::Dataset& ds,
                                         const lantern::TrainConfig& tc) {
  auto [train_users, val_users] =
      lantern::train_val_split(static_cast<std::int64_t>(ds.records.size()), tc.seed);
  return val_users.empty() ? train_users : val_users;
}

void check_dims(const lantern::Dataset& ds, const lantern::LanternConfig& mc) {
  if (ds.manifest.survey_dim != mc.survey_dim || ds.manifest.external_dim != mc.external_dim ||
      ds.manifest.d_s() != mc.d_s) {
    throw ValidationError(
        "dataset dims (" + std::to_string(ds.manifest.survey_dim) + "," +
        std::to_string(ds.manifest.external_dim) + "," + std::to_string(ds.manifest.d_s()) +
        ") do not match the model config (" + std::to_string(mc.survey_dim) + "," +
        std::to_string(mc.external_dim) + "," + std::to_string(mc.d_s) +
        "); adjust model.* keys or regenerate");
  }
}

int cmd_generate(const CommonArgs& args) {
  Run run("generate", args);
  lantern::Dataset ds = lantern::generate_dataset(run.cfg().gen);
  const fs::path data_dir = run.out() / "data";
  lantern::save_dataset(ds, data_dir.string());
  run.note_artifact_file("data/manifest.json");
  run.note_artifact_file("data/records.jsonl");
  run.stamp();
  std::cout << "generated " << ds.records.size() << " users, " << ds.manifest.d_s()
            << " response keys -> " << data_dir.string() << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  Run run("train", args);
  lantern::Dataset ds = load_data(run.cfg(), run);
  check_dims(ds, run.cfg().model);
  lantern::TrainResult result = lantern::train(ds, run.cfg().train, run.cfg().model);
  run.emit("training_log.csv", lantern::train_log_csv(result.log));
  const fs::path ckpt = run.out() / "checkpoint.lntn";
  lantern::save_checkpoint(ckpt.string(), result.params, result.adam, run.cfg().model,
                           run.cfg().train);
  run.note_artifact_file("checkpoint.lntn");
  run.stamp();
  std::cout << "trained " << lantern::to_string(run.cfg().train.variant) << " for "
            << run.cfg().train.epochs << " epochs; final val_loss "
            << result.log.back().val_loss << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, double threshold_flag, bool threshold_given) {
  Run run("evaluate", args);
  RunConfig cfg = run.cfg();
  if (threshold_given) cfg.eval_threshold = threshold_flag;
  lantern::Dataset ds = load_data(cfg, run);
  lantern::Checkpoint cp = load_ckpt(cfg, run);
  check_dims(ds, cp.model_cfg);

  const auto users = held_out_users(ds, cp.train_cfg);
  lantern::MetricsReport m =
      lantern::evaluate_model(ds, users, cp.params, cp.train_cfg.variant, cfg.eval_threshold,
                              cfg.eval_averaging);
  std::ostringstream metrics;
  metrics << "threshold,precision,recall,f1,tp,fp,fn,n_scored\n"
          << m.threshold << "," << m.precision << "," << m.recall << "," << m.f1 << "," << m.tp
          << "," << m.fp << "," << m.fn << "," << m.n_scored << "\n";
  run.emit("metrics.csv", metrics.str());

  const std::int64_t k = cfg.bucket_k_or_default(ds.manifest.d_s());
  lantern::FrequencyBuckets buckets =
      lantern::frequency_buckets(ds.records, ds.manifest.d_s(), k, cfg.eval_bucket_mode);
  lantern::PredictionSet preds =
      lantern::collect_predictions(ds, users, cp.params, cp.train_cfg.variant);
  lantern::SegmentReport seg = lantern::segment_eval(preds.y_hat, preds.mask, buckets.rare,
                                                     buckets.frequent, cfg.eval_threshold);
  run.emit("segments.csv", lantern::segments_csv(seg));
  run.stamp();
  std::cout << "precision " << m.precision << ", recall " << m.recall << ", f1 " << m.f1
            << " over " << m.n_scored << " scored entries\n";
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  Run run("ablate", args);
  lantern::Dataset ds = load_data(run.cfg(), run);
  check_dims(ds, run.cfg().model);
  auto rows = lantern::ablation_suite(ds, run.cfg().model, run.cfg().train);
  run.emit("ablation.csv", lantern::ablation_csv(rows));
  run.stamp();
  for (const auto& row : rows) {
    std::cout << lantern::to_string(row.variant) << ": f1 " << row.metrics.f1 << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonArgs& args, const std::string& grid_flag) {
  Run run("sweep", args);
  RunConfig cfg = run.cfg();
  if (!grid_flag.empty()) lantern::apply_override(cfg, "eval.grid", grid_flag, "--grid");
  lantern::Dataset ds = load_data(cfg, run);
  lantern::Checkpoint cp = load_ckpt(cfg, run);
  check_dims(ds, cp.model_cfg);
  const auto users = held_out_users(ds, cp.train_cfg);
  lantern::PredictionSet preds =
      lantern::collect_predictions(ds, users, cp.params, cp.train_cfg.variant);
  lantern::ThresholdSweep sweep = lantern::threshold_sweep(preds.y_hat, preds.mask, cfg.eval_grid);
  run.emit("sweep.csv", lantern::sweep_csv(sweep));
  run.stamp();
  std::cout << "swept " << sweep.entries.size() << " thresholds over " << users.size()
            << " held-out users\n";
  return 0;
}

int cmd_gate_report(const CommonArgs& args) {
  Run run("gate-report", args);
  RunConfig cfg = run.cfg();
  lantern::Dataset ds = load_data(cfg, run);
  lantern::Checkpoint cp = load_ckpt(cfg, run);
  check_dims(ds, cp.model_cfg);
  if (cp.train_cfg.variant != lantern::Variant::fused) {
    throw ValidationError("gate-report: checkpoint holds a " +
                          lantern::to_string(cp.train_cfg.variant) +
                          " model; gates exist only in the fused variant");
  }
  const auto users = held_out_users(ds, cp.train_cfg);
  lantern::PredictionSet preds =
      lantern::collect_predictions(ds, users, cp.params, lantern::Variant::fused);
  lantern::GateHistogram hist = lantern::gate_histogram(preds.gates, cfg.eval_bins);
  run.emit("gates.csv", lantern::gates_csv(hist));
  ordered_json stats;
  stats["n_values"] = preds.gates.size();
  stats["mean"] = hist.mean;
  stats["frac_below_0.1"] = hist.frac_low;
  stats["frac_above_0.9"] = hist.frac_high;
  run.emit("gate_stats.json", stats.dump(2) + "\n");
  run.stamp();
  std::cout << "gate mean " << hist.mean << " over " << preds.gates.size() << " values ("
            << users.size() << " users x " << cp.model_cfg.d_embed << " dims)\n";
  return 0;
}

int cmd_label_diff(const CommonArgs& args) {
  Run run("label-diff", args);
  const RunConfig& cfg = run.cfg();
  if (cfg.manifest_a.empty() || cfg.manifest_b.empty()) {
    throw ValidationError("config: label-diff needs manifest_a and manifest_b");
  }
  lantern::DatasetManifest a = lantern::load_manifest(cfg.manifest_a);
  lantern::DatasetManifest b = lantern::load_manifest(cfg.manifest_b);
  run.note_file("manifest_a", cfg.manifest_a);
  run.note_file("manifest_b", cfg.manifest_b);
  lantern::LabelSpaceDiff diff = lantern::label_space_diff(a, b);

  std::ostringstream out;
  out << "label space diff: cycle " << a.cycle_id << " -> cycle " << b.cycle_id << "\n";
  out << "retained " << diff.retained.size() << ", added " << diff.added.size() << ", removed "
      << diff.removed.size() << "\n";
  auto list = [&out](const char* title, const std::set<std::pair<std::int64_t, std::int64_t>>& s) {
    out << title << ":";
    if (s.empty()) out << " (none)";
    out << "\n";
    for (const auto& [qid, pos] : s) {
      out << "  question " << qid << ", option " << pos << "\n";
    }
  };
  list("added keys", diff.added);
  list("removed keys", diff.removed);
  out << (diff.misaligned() ? "STRUCTURALLY MISALIGNED: a head trained on cycle " +
                                  std::to_string(a.cycle_id) + " cannot score cycle " +
                                  std::to_string(b.cycle_id) + " outputs\n"
                            : "label spaces align; trained heads remain valid\n");
  run.emit("label_diff.txt", out.str());
  run.stamp();
  std::cout << out.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LANTERN batch runner: synthetic surveys, training, evaluation reports"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, ablate_args, sweep_args, gate_args, diff_args;
  double threshold_flag = 0.5;
  bool threshold_given = false;
  std::string grid_flag;

  add_common(app.add_subcommand("generate", "synthesize an adaptive-survey dataset"), gen_args);
  add_common(app.add_subcommand("train", "fit a model variant on a dataset"), train_args);
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on held-out users");
  add_common(eval_cmd, eval_args);
  eval_cmd->add_option("--threshold", threshold_flag, "decision threshold in (0,1)")
      ->each([&threshold_given](const std::string&) { threshold_given = true; });
  add_common(app.add_subcommand("ablate", "train and score all three variants"), ablate_args);
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "metrics across decision thresholds");
  add_common(sweep_cmd, sweep_args);
  sweep_cmd->add_option("--grid", grid_flag, "comma-separated thresholds (default 0.3,0.5,0.7)");
  add_common(app.add_subcommand("gate-report", "gate histogram for a fused checkpoint"),
             gate_args);
  add_common(app.add_subcommand("label-diff", "compare label spaces of two manifests"),
             diff_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("generate")) return cmd_generate(gen_args);
    if (app.got_subcommand("train")) return cmd_train(train_args);
    if (app.got_subcommand("evaluate")) return cmd_evaluate(eval_args, threshold_flag, threshold_given);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_args);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_args, grid_flag);
    if (app.got_subcommand("gate-report")) return cmd_gate_report(gate_args);
    if (app.got_subcommand("label-diff")) return cmd_label_diff(diff_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
