#include "lantern/eval.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "lantern/errors.hpp"
#include "lantern/ops.hpp"
#include "lantern/rng.hpp"
#include "lantern/tape.hpp"

namespace lantern {

namespace {

using i64 = std::int64_t;
using ad::Tensor;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

void check_pair(const Tensor& y_hat, const Tensor& mask, double threshold) {
  require(y_hat.defined() && mask.defined() && y_hat.rank() == 2 &&
              y_hat.shape() == mask.shape(),
          "metrics: y_hat/mask must share an (N, d_s) shape");
  require(threshold > 0.0 && threshold < 1.0,
          "metrics: threshold must lie in (0,1), got " + std::to_string(threshold));
}

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

MetricsReport from_counts(i64 tp, i64 fp, i64 fn) {
  require(tp >= 0 && fp >= 0 && fn >= 0, "metrics: counts must be non-negative");
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.precision = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
  r.recall = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
  r.f1 = safe_div(2.0 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

// Counts restricted to key columns accepted by `key_ok`.
template <typename KeyFilter>
Confusion confusion_filtered(const Tensor& y_hat, const Tensor& mask, double threshold,
                             KeyFilter key_ok) {
  Confusion c;
  const auto y = y_hat.data();
  const auto m = mask.data();
  const i64 n = y_hat.extent(0);
  const i64 d = y_hat.extent(1);
  for (i64 r = 0; r < n; ++r) {
    for (i64 k = 0; k < d; ++k) {
      if (!key_ok(k)) continue;
      const double mv = m[r * d + k];
      require(mv == -1.0 || mv == 0.0 || mv == 1.0,
              "metrics: mask values must lie in {-1,0,1}, got " + std::to_string(mv));
      if (mv == 0.0) continue;
      c.n_scored += 1;
      const bool predicted = y[r * d + k] >= threshold;
      const bool truth = mv == 1.0;
      if (predicted && truth) c.tp += 1;
      if (predicted && !truth) c.fp += 1;
      if (!predicted && truth) c.fn += 1;
    }
  }
  return c;
}

}  // namespace

const std::vector<double> kDefaultThresholds{0.3, 0.5, 0.7};

Confusion masked_confusion(const Tensor& y_hat, const Tensor& mask, double threshold) {
  check_pair(y_hat, mask, threshold);
  return confusion_filtered(y_hat, mask, threshold, [](i64) { return true; });
}

MetricsReport precision_recall_f1(i64 tp, i64 fp, i64 fn) { return from_counts(tp, fp, fn); }

MetricsReport metrics_at(const Tensor& y_hat, const Tensor& mask, double threshold,
                         Averaging avg) {
  check_pair(y_hat, mask, threshold);
  if (avg == Averaging::micro) {
    Confusion c = masked_confusion(y_hat, mask, threshold);
    MetricsReport r = from_counts(c.tp, c.fp, c.fn);
    r.threshold = threshold;
    r.n_scored = c.n_scored;
    return r;
  }

  // Macro: average per-key precision/recall over keys with scored entries.
  MetricsReport r;
  double p_sum = 0.0, r_sum = 0.0;
  i64 keys_scored = 0;
  for (i64 k = 0; k < y_hat.extent(1); ++k) {
    Confusion c = confusion_filtered(y_hat, mask, threshold, [k](i64 kk) { return kk == k; });
    r.tp += c.tp;
    r.fp += c.fp;
    r.fn += c.fn;
    r.n_scored += c.n_scored;
    if (c.n_scored == 0) continue;
    keys_scored += 1;
    p_sum += safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fp));
    r_sum += safe_div(static_cast<double>(c.tp), static_cast<double>(c.tp + c.fn));
  }
  r.precision = safe_div(p_sum, static_cast<double>(keys_scored));
  r.recall = safe_div(r_sum, static_cast<double>(keys_scored));
  r.f1 = safe_div(2.0 * r.precision * r.recall, r.precision + r.recall);
  r.threshold = threshold;
  return r;
}

ThresholdSweep threshold_sweep(const Tensor& y_hat, const Tensor& mask,
                               const std::vector<double>& thresholds) {
  require(!thresholds.empty(), "threshold_sweep: empty threshold list");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    require(thresholds[i] > thresholds[i - 1],
            "threshold_sweep: thresholds must be strictly increasing (" +
                std::to_string(thresholds[i - 1]) + " then " + std::to_string(thresholds[i]) +
                ")");
  }
  ThresholdSweep sweep;
  for (double t : thresholds) sweep.entries.emplace_back(t, metrics_at(y_hat, mask, t));
  for (std::size_t i = 1; i < sweep.entries.size(); ++i) {
    // Raising the threshold can only demote predicted positives, so recall is
    // non-increasing by construction; a violation means the counts are broken.
    require(sweep.entries[i].second.recall <= sweep.entries[i - 1].second.recall,
            "threshold_sweep: recall increased with the threshold (internal error)");
  }
  return sweep;
}

SegmentReport segment_eval(const Tensor& y_hat, const Tensor& mask,
                           const std::set<i64>& rare_keys, const std::set<i64>& frequent_keys,
                           double threshold) {
  check_pair(y_hat, mask, threshold);
  for (i64 k : rare_keys) {
    require(!frequent_keys.count(k),
            "segment_eval: key " + std::to_string(k) + " appears in both buckets");
  }
  auto bucket_metrics = [&](const std::set<i64>& keys) {
    Confusion c = confusion_filtered(y_hat, mask, threshold,
                                     [&keys](i64 k) { return keys.count(k) > 0; });
    MetricsReport r = from_counts(c.tp, c.fp, c.fn);
    r.threshold = threshold;
    r.n_scored = c.n_scored;
    return r;
  };
  SegmentReport report;
  report.rare = bucket_metrics(rare_keys);
  report.frequent = bucket_metrics(frequent_keys);
  report.rare_keys = rare_keys;
  report.frequent_keys = frequent_keys;
  return report;
}

GateHistogram gate_histogram(const std::vector<double>& values, i64 n_bins) {
  require(n_bins >= 2, "gate_histogram: need at least 2 bins, got " + std::to_string(n_bins));
  GateHistogram h;
  h.edges.resize(static_cast<std::size_t>(n_bins) + 1);
  for (i64 i = 0; i <= n_bins; ++i) {
    h.edges[static_cast<std::size_t>(i)] = static_cast<double>(i) / static_cast<double>(n_bins);
  }
  h.counts.assign(static_cast<std::size_t>(n_bins), 0);
  double sum = 0.0;
  i64 low = 0, high = 0;
  for (double v : values) {
    require(v > 0.0 && v < 1.0,
            "gate_histogram: gate value " + std::to_string(v) + " outside (0,1)");
    const i64 bin = std::min<i64>(static_cast<i64>(v * static_cast<double>(n_bins)), n_bins - 1);
    h.counts[static_cast<std::size_t>(bin)] += 1;
    sum += v;
    if (v < 0.1) low += 1;
    if (v > 0.9) high += 1;
  }
  const double n = static_cast<double>(values.size());
  h.mean = values.empty() ? 0.0 : sum / n;
  h.frac_low = values.empty() ? 0.0 : static_cast<double>(low) / n;
  h.frac_high = values.empty() ? 0.0 : static_cast<double>(high) / n;
  return h;
}

PredictionSet collect_predictions(const Dataset& data, const std::vector<i64>& users,
                                  const LanternParams& params, Variant variant) {
  require(!users.empty(), "collect_predictions: empty user list");
  const i64 n = static_cast<i64>(users.size());
  const i64 d_s = data.manifest.d_s();
  PredictionSet out;
  out.y_hat = Tensor::zeros({n, d_s});
  out.mask = Tensor::zeros({n, d_s});
  Rng rng(0);  // eval mode draws nothing
  constexpr i64 kChunk = 64;
  for (i64 start = 0; start < n; start += kChunk) {
    const i64 stop = std::min(n, start + kChunk);
    std::vector<i64> ids(users.begin() + start, users.begin() + stop);
    Batch b = assemble_batch(data, ids);
    ad::Tape tape(false);
    ForwardResult r = forward(tape, params, b.x_s, b.x_e, variant, Mode::eval, rng);
    std::copy(r.y_hat.data().begin(), r.y_hat.data().end(),
              out.y_hat.mutable_data().begin() + start * d_s);
    std::copy(b.mask.data().begin(), b.mask.data().end(),
              out.mask.mutable_data().begin() + start * d_s);
    if (r.gate.defined()) {
      out.gates.insert(out.gates.end(), r.gate.data().begin(), r.gate.data().end());
    }
  }
  return out;
}

MetricsReport evaluate_model(const Dataset& data, const std::vector<i64>& users,
                             const LanternParams& params, Variant variant, double threshold,
                             Averaging avg) {
  PredictionSet preds = collect_predictions(data, users, params, variant);
  return metrics_at(preds.y_hat, preds.mask, threshold, avg);
}

std::vector<AblationRow> ablation_suite(const Dataset& data, const LanternConfig& model_cfg,
                                        const TrainConfig& train_cfg) {
  auto [train_users, val_users] = train_val_split(static_cast<i64>(data.records.size()),
                                                  train_cfg.seed);
  if (val_users.empty()) val_users = train_users;
  std::vector<AblationRow> rows;
  for (Variant v : {Variant::fused, Variant::survey_only, Variant::external_only}) {
    TrainConfig cfg = train_cfg;
    cfg.variant = v;
    TrainResult r = train(data, cfg, model_cfg);
    rows.push_back({v, evaluate_model(data, val_users, r.params, v, 0.5)});
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant,precision,recall,f1\n";
  for (const auto& row : rows) {
    out << to_string(row.variant) << "," << fmt(row.metrics.precision) << ","
        << fmt(row.metrics.recall) << "," << fmt(row.metrics.f1) << "\n";
  }
  return out.str();
}

std::string sweep_csv(const ThresholdSweep& sweep) {
  std::ostringstream out;
  out << "threshold,precision,recall,f1\n";
  for (const auto& [t, m] : sweep.entries) {
    out << fmt(t) << "," << fmt(m.precision) << "," << fmt(m.recall) << "," << fmt(m.f1) << "\n";
  }
  return out.str();
}

std::string segments_csv(const SegmentReport& report) {
  std::ostringstream out;
  out << "bucket,precision,recall,f1\n";
  out << "rare," << fmt(report.rare.precision) << "," << fmt(report.rare.recall) << ","
      << fmt(report.rare.f1) << "\n";
  out << "frequent," << fmt(report.frequent.precision) << "," << fmt(report.frequent.recall)
      << "," << fmt(report.frequent.f1) << "\n";
  return out.str();
}

std::string gates_csv(const GateHistogram& hist) {
  std::ostringstream out;
  out << "bin_left,bin_right,count\n";
  for (std::size_t i = 0; i < hist.counts.size(); ++i) {
    out << fmt(hist.edges[i]) << "," << fmt(hist.edges[i + 1]) << "," << hist.counts[i] << "\n";
  }
  return out.str();
}

}  // namespace lantern
