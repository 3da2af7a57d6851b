#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lantern/dataset.hpp"
#include "lantern/model.hpp"
#include "lantern/tensor.hpp"
#include "lantern/train.hpp"

namespace lantern {

// tp/fp/fn pooled over scored entries (mask != 0); n_scored counts them,
// including true negatives.
struct Confusion {
  std::int64_t tp = 0, fp = 0, fn = 0;
  std::int64_t n_scored = 0;
};

struct MetricsReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::int64_t tp = 0, fp = 0, fn = 0;
  double threshold = 0.0;
  std::int64_t n_scored = 0;
};

// Prediction = 1 iff y_hat >= threshold; truth from mask (+1 favorable,
// -1 non-favorable, 0 excluded).
Confusion masked_confusion(const ad::Tensor& y_hat, const ad::Tensor& mask, double threshold);

// Zero-denominator convention: 0.
MetricsReport precision_recall_f1(std::int64_t tp, std::int64_t fp, std::int64_t fn);

enum class Averaging { micro, macro };

// One report over an (N, d_s) prediction/mask pair. Micro pools counts over
// every scored entry; macro averages per-key P and R over keys with at least
// one scored entry (f1 stays the harmonic mean of the averaged P and R, so
// the report invariant f1*(P+R) == 2PR holds for both schemes).
MetricsReport metrics_at(const ad::Tensor& y_hat, const ad::Tensor& mask, double threshold,
                         Averaging avg = Averaging::micro);

struct ThresholdSweep {
  std::vector<std::pair<double, MetricsReport>> entries;
};

extern const std::vector<double> kDefaultThresholds;  // {0.3, 0.5, 0.7}

// Thresholds must be strictly increasing, each inside (0,1).
ThresholdSweep threshold_sweep(const ad::Tensor& y_hat, const ad::Tensor& mask,
                               const std::vector<double>& thresholds = kDefaultThresholds);

struct SegmentReport {
  MetricsReport rare, frequent;
  std::set<std::int64_t> rare_keys, frequent_keys;
};

// Metrics restricted to each bucket's key columns; buckets must be disjoint.
SegmentReport segment_eval(const ad::Tensor& y_hat, const ad::Tensor& mask,
                           const std::set<std::int64_t>& rare_keys,
                           const std::set<std::int64_t>& frequent_keys, double threshold);

struct GateHistogram {
  std::vector<double> edges;        // n_bins + 1 over [0,1]
  std::vector<std::int64_t> counts;  // per bin
  double mean = 0.0;
  double frac_low = 0.0;   // < 0.1
  double frac_high = 0.0;  // > 0.9
};

// Values must lie strictly inside (0,1); n_bins >= 2 (default 50).
GateHistogram gate_histogram(const std::vector<double>& values, std::int64_t n_bins = 50);

// Single eval-mode pass over the listed users; micro counts are summed per
// batch, so chunking cannot change the result.
MetricsReport evaluate_model(const Dataset& data, const std::vector<std::int64_t>& users,
                             const LanternParams& params, Variant variant, double threshold,
                             Averaging avg = Averaging::micro);

// Collects y_hat rows (and gate rows for fused) over the listed users.
struct PredictionSet {
  ad::Tensor y_hat;  // (n_users, d_s)
  ad::Tensor mask;   // (n_users, d_s)
  std::vector<double> gates;  // empty unless fused
};
PredictionSet collect_predictions(const Dataset& data, const std::vector<std::int64_t>& users,
                                  const LanternParams& params, Variant variant);

struct AblationRow {
  Variant variant;
  MetricsReport metrics;
};

// Trains all three variants with identical seed/split and scores each on the
// held-out users at threshold 0.5.
std::vector<AblationRow> ablation_suite(const Dataset& data, const LanternConfig& model_cfg,
                                        const TrainConfig& train_cfg);

std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string sweep_csv(const ThresholdSweep& sweep);
std::string segments_csv(const SegmentReport& report);
std::string gates_csv(const GateHistogram& hist);

}  // namespace lantern
