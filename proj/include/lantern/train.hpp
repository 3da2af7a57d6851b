#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lantern/dataset.hpp"
#include "lantern/model.hpp"
#include "lantern/tensor.hpp"

namespace lantern {

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  std::int64_t batch_size = 32;
  std::int64_t epochs = 10;
  std::int64_t steps_per_epoch = 50;
  std::int64_t validation_steps = 10;
  std::uint64_t seed = 1;
  Variant variant = Variant::fused;

  void validate() const;
};

// Moments aligned 1:1 with a named parameter list; t counts completed steps.
struct AdamState {
  std::vector<ad::Tensor> m, v;
  std::int64_t t = 0;
};

AdamState init_adam_state(const std::vector<std::pair<std::string, ad::Tensor>>& params);

// In-place update from the gradients currently on the parameter tensors.
// m <- b1*m + (1-b1)*g; v <- b2*v + (1-b2)*g^2; p -= lr * m_hat/(sqrt(v_hat)+eps).
void adam_step(const std::vector<std::pair<std::string, ad::Tensor>>& params, AdamState& state,
               const TrainConfig& cfg);

struct Batch {
  ad::Tensor x_s, x_e, mask;
};

Batch assemble_batch(const Dataset& data, const std::vector<std::int64_t>& user_indices);

// One optimization step: training-mode forward, masked loss, backward, Adam.
// Returns the batch loss. Gradients are cleared on entry, so each step sees
// only its own batch.
double train_step(const Batch& batch, const LanternParams& params,
                  const std::vector<std::pair<std::string, ad::Tensor>>& named_params,
                  AdamState& state, const TrainConfig& cfg, Rng& rng);

// Deterministic 90/10 user split (at least one held-out user once n >= 2);
// shared by train() and the evaluation harness so both see the same rows.
std::pair<std::vector<std::int64_t>, std::vector<std::int64_t>> train_val_split(
    std::int64_t n_users, std::uint64_t seed);

struct EpochLog {
  std::int64_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  LanternParams params;
  AdamState adam;
  std::vector<EpochLog> log;
};

// Seeded 90/10 user split, reshuffle-on-wrap repeat stream, per-epoch losses.
TrainResult train(const Dataset& data, const TrainConfig& train_cfg,
                  const LanternConfig& model_cfg);

std::string train_log_csv(const std::vector<EpochLog>& log);

// Container with magic "LNTN": parameters, optimizer moments and both configs,
// restored bit-identically by load.
struct Checkpoint {
  LanternConfig model_cfg;
  TrainConfig train_cfg;
  LanternParams params;
  AdamState adam;
};

void save_checkpoint(const std::string& path, const LanternParams& params, const AdamState& adam,
                     const LanternConfig& model_cfg, const TrainConfig& train_cfg);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lantern
