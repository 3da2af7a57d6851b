#pragma once

#include <string>
#include <vector>

#include "lantern/dataset.hpp"
#include "lantern/eval.hpp"
#include "lantern/model.hpp"
#include "lantern/train.hpp"

namespace lantern {

// Everything a run needs, merged from a flat `key = value` file (with `#`
// comments) plus CLI overrides. Unknown keys are rejected by name. The
// resolved rendering parses back to an identical config.
struct RunConfig {
  GeneratorConfig gen;
  LanternConfig model;
  TrainConfig train;

  double eval_threshold = 0.5;
  std::vector<double> eval_grid{0.3, 0.5, 0.7};
  std::int64_t eval_bins = 50;
  std::int64_t eval_bucket_k = 0;  // 0 = d_s/10, at least 1
  BucketCountMode eval_bucket_mode = BucketCountMode::served;
  Averaging eval_averaging = Averaging::micro;

  std::string data_dir;
  std::string checkpoint;
  std::string manifest_a;
  std::string manifest_b;

  std::int64_t bucket_k_or_default(std::int64_t d_s) const;
  void validate() const;
};

// `origin` names the source in error messages ("--set" or a file path).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value,
                    const std::string& origin);

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& text, const std::string& origin);

// Canonical resolved form: every key, grouped, values round-trippable.
std::string render_run_config(const RunConfig& cfg);

}  // namespace lantern
