#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace lantern {

enum class QuestionType { binary, single_choice, multi_choice };

std::string to_string(QuestionType t);
QuestionType question_type_from_string(const std::string& s);

struct ResponseKey {
  std::int64_t key_id = 0;
  std::int64_t question_id = 0;
  QuestionType question_type = QuestionType::binary;
  double serve_probability = 1.0;
};

struct DatasetManifest {
  std::int64_t survey_dim = 0;    // F_s
  std::int64_t external_dim = 0;  // F_e
  std::int64_t cycle_id = 0;
  std::uint64_t generator_seed = 0;
  std::vector<ResponseKey> keys;

  std::int64_t d_s() const { return static_cast<std::int64_t>(keys.size()); }
  void validate() const;
};

struct UserRecord {
  std::int64_t user_id = 0;
  std::vector<double> x_s;
  std::vector<double> x_e;
  std::vector<int> mask;  // {-1, 0, 1}, length d_s
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<UserRecord> records;
};

struct GeneratorConfig {
  std::int64_t n_users = 5000;
  std::int64_t latent_dim = 16;
  std::int64_t n_binary = 12;
  std::int64_t n_single = 8;
  std::int64_t n_single_options = 4;
  std::int64_t n_multi = 8;
  std::int64_t n_multi_options = 4;
  std::int64_t survey_dim = 24;    // F_s
  std::int64_t external_dim = 24;  // F_e
  double survey_noise_sigma = 0.1;
  double external_noise_sigma = 0.1;
  // Fraction of external features driven by the latent traits; the rest is
  // pure noise.
  double external_informative_fraction = 1.0;
  double base_serve_probability = 0.9;
  double rare_serve_probability = 0.1;
  double rare_key_fraction = 0.1;
  // 0 disables; otherwise rare-tier keys get this marginal favorability rate
  // instead of their slot on the [0.05, 0.5] ramp (high-SNR conditional keys).
  double rare_favorability_rate = 0.0;
  // Probability of flipping the favorability of a frequent-tier key label.
  double frequent_label_noise = 0.0;
  std::uint64_t seed = 1;
  std::int64_t cycle_id = 0;

  std::int64_t n_questions() const { return n_binary + n_single + n_multi; }
  std::int64_t d_s() const {
    return n_binary + n_single * n_single_options + n_multi * n_multi_options;
  }
  void validate() const;
};

Dataset generate_dataset(const GeneratorConfig& cfg);

// Writes `manifest.json` and `records.jsonl` under dir; byte-stable given
// identical inputs.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Reads a manifest.json on its own (label diffs need no records).
DatasetManifest load_manifest(const std::string& path);

// Structural check of one record against the manifest; throws ValidationError
// naming the violated invariant. `line` >= 1 is quoted in messages when given.
void validate_record(const DatasetManifest& manifest, const UserRecord& rec,
                     std::int64_t line = 0);

enum class BucketCountMode { served, favorable };

struct FrequencyBuckets {
  std::set<std::int64_t> rare;
  std::set<std::int64_t> frequent;
  std::vector<std::int64_t> counts;  // per key_id
};

// Response count of a key = users with mask != 0 there (served mode) or
// mask == +1 (favorable mode). Ties break by ascending key_id.
FrequencyBuckets frequency_buckets(const std::vector<UserRecord>& records, std::int64_t d_s,
                                   std::int64_t k,
                                   BucketCountMode mode = BucketCountMode::served);

// Keys identified by (question_id, position of the key within its question).
struct LabelSpaceDiff {
  std::set<std::pair<std::int64_t, std::int64_t>> added;
  std::set<std::pair<std::int64_t, std::int64_t>> removed;
  std::set<std::pair<std::int64_t, std::int64_t>> retained;

  bool misaligned() const { return !added.empty() || !removed.empty(); }
};

LabelSpaceDiff label_space_diff(const DatasetManifest& a, const DatasetManifest& b);

}  // namespace lantern
