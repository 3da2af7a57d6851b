#include "lantern/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include <json.hpp>

#include "lantern/errors.hpp"
#include "lantern/rng.hpp"

namespace lantern {

namespace {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using i64 = std::int64_t;

// Acklam's rational approximation of the inverse normal CDF (~1e-9 relative).
double inv_norm_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double p_low = 0.02425;
  if (p <= 0.0 || p >= 1.0) {
    throw ValidationError("inv_norm_cdf: p must lie in (0,1)");
  }
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - p_low) {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

double dot(const double* a, const double* b, i64 n) {
  double s = 0.0;
  for (i64 i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

std::string record_context(const UserRecord& rec, i64 line) {
  if (line > 0) return "records.jsonl line " + std::to_string(line) + ": ";
  return "user " + std::to_string(rec.user_id) + ": ";
}

}  // namespace

std::string to_string(QuestionType t) {
  switch (t) {
    case QuestionType::binary: return "binary";
    case QuestionType::single_choice: return "single_choice";
    case QuestionType::multi_choice: return "multi_choice";
  }
  throw ValidationError("unknown question type");
}

QuestionType question_type_from_string(const std::string& s) {
  if (s == "binary") return QuestionType::binary;
  if (s == "single_choice") return QuestionType::single_choice;
  if (s == "multi_choice") return QuestionType::multi_choice;
  throw ValidationError("unknown question_type '" + s + "'");
}

void DatasetManifest::validate() const {
  require(survey_dim >= 1, "manifest: survey_dim must be >= 1");
  require(external_dim >= 1, "manifest: external_dim must be >= 1");
  require(!keys.empty(), "manifest: d_s must be >= 1");
  for (std::size_t i = 0; i < keys.size(); ++i) {
    require(keys[i].key_id == static_cast<i64>(i),
            "manifest: key_ids must be dense 0..d_s-1, got " + std::to_string(keys[i].key_id) +
                " at position " + std::to_string(i));
    require(keys[i].serve_probability > 0.0 && keys[i].serve_probability <= 1.0,
            "manifest: serve_probability must lie in (0,1] for key " + std::to_string(i));
  }
  std::map<i64, std::vector<const ResponseKey*>> by_question;
  for (const auto& k : keys) by_question[k.question_id].push_back(&k);
  for (const auto& [qid, qkeys] : by_question) {
    for (const auto* k : qkeys) {
      require(k->question_type == qkeys.front()->question_type,
              "manifest: question " + std::to_string(qid) + " mixes question_types");
    }
    if (qkeys.front()->question_type == QuestionType::binary) {
      require(qkeys.size() == 1,
              "manifest: binary question " + std::to_string(qid) + " must have exactly one key");
    } else {
      require(qkeys.size() >= 2, "manifest: question " + std::to_string(qid) +
                                     " of type " + to_string(qkeys.front()->question_type) +
                                     " must have >= 2 keys");
    }
  }
}

void GeneratorConfig::validate() const {
  require(n_users >= 0, "generator: n_users must be >= 0");
  require(latent_dim >= 1, "generator: latent_dim must be >= 1");
  require(survey_dim >= 1, "generator: survey_dim must be >= 1");
  require(external_dim >= 1, "generator: external_dim must be >= 1");
  require(n_binary >= 0 && n_single >= 0 && n_multi >= 0,
          "generator: question counts must be >= 0");
  require(n_questions() >= 1, "generator: need at least one question");
  require(n_single == 0 || n_single_options >= 2,
          "generator: n_single_options must be >= 2");
  require(n_multi == 0 || n_multi_options >= 2, "generator: n_multi_options must be >= 2");
  require(survey_noise_sigma >= 0.0 && external_noise_sigma >= 0.0,
          "generator: noise sigmas must be >= 0");
  require(external_informative_fraction >= 0.0 && external_informative_fraction <= 1.0,
          "generator: external_informative_fraction must lie in [0,1]");
  require(base_serve_probability > 0.0 && base_serve_probability <= 1.0,
          "generator: base_serve_probability must lie in (0,1]");
  require(rare_serve_probability > 0.0 && rare_serve_probability <= 1.0,
          "generator: rare_serve_probability must lie in (0,1]");
  require(rare_key_fraction >= 0.0 && rare_key_fraction <= 1.0,
          "generator: rare_key_fraction must lie in [0,1]");
  require(rare_favorability_rate >= 0.0 && rare_favorability_rate < 1.0,
          "generator: rare_favorability_rate must lie in [0,1)");
  require(frequent_label_noise >= 0.0 && frequent_label_noise < 1.0,
          "generator: frequent_label_noise must lie in [0,1)");
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const i64 L = cfg.latent_dim;
  const i64 Fs = cfg.survey_dim;
  const i64 Fe = cfg.external_dim;
  const i64 nq = cfg.n_questions();
  const i64 ds = cfg.d_s();

  // Spread rare questions evenly across the ordered question list so each
  // question type gets its proportional share.
  std::vector<char> rare_q(static_cast<std::size_t>(nq), 0);
  i64 prev = 0;
  for (i64 q = 0; q < nq; ++q) {
    const i64 cur = static_cast<i64>(std::floor(static_cast<double>(q + 1) * cfg.rare_key_fraction));
    if (cur > prev) rare_q[static_cast<std::size_t>(q)] = 1;
    prev = cur;
  }

  Dataset ds_out;
  DatasetManifest& man = ds_out.manifest;
  man.survey_dim = Fs;
  man.external_dim = Fe;
  man.cycle_id = cfg.cycle_id;
  man.generator_seed = cfg.seed;

  struct QuestionInfo {
    QuestionType type;
    i64 first_key;
    i64 n_keys;
    bool rare;
  };
  std::vector<QuestionInfo> questions;
  questions.reserve(static_cast<std::size_t>(nq));
  i64 qid = 0, kid = 0;
  auto add_question = [&](QuestionType type, i64 n_keys) {
    const bool rare = rare_q[static_cast<std::size_t>(qid)] != 0;
    questions.push_back({type, kid, n_keys, rare});
    const double sp = rare ? cfg.rare_serve_probability : cfg.base_serve_probability;
    for (i64 j = 0; j < n_keys; ++j) {
      man.keys.push_back({kid, qid, type, sp});
      ++kid;
    }
    ++qid;
  };
  for (i64 q = 0; q < cfg.n_binary; ++q) add_question(QuestionType::binary, 1);
  for (i64 q = 0; q < cfg.n_single; ++q) add_question(QuestionType::single_choice, cfg.n_single_options);
  for (i64 q = 0; q < cfg.n_multi; ++q) add_question(QuestionType::multi_choice, cfg.n_multi_options);
  man.validate();

  // Generative story parameters, each from its own seed stream.
  const double col_sigma = 1.0 / std::sqrt(static_cast<double>(L));
  std::vector<double> A(static_cast<std::size_t>(Fs * L));
  {
    Rng r(Rng::mix(cfg.seed, fnv1a("gen.A")));
    for (auto& v : A) v = r.normal(0.0, col_sigma);
  }
  const i64 n_inf = static_cast<i64>(std::llround(cfg.external_informative_fraction *
                                                  static_cast<double>(Fe)));
  std::vector<double> B(static_cast<std::size_t>(n_inf * L));
  {
    Rng r(Rng::mix(cfg.seed, fnv1a("gen.B")));
    for (auto& v : B) v = r.normal(0.0, col_sigma);
  }
  std::vector<double> W(static_cast<std::size_t>(ds * L));
  {
    Rng r(Rng::mix(cfg.seed, fnv1a("gen.w")));
    for (auto& v : W) v = r.normal(0.0, 1.0);
  }

  // Per-key favorability thresholds: marginal rates ramp over [0.05, 0.5],
  // optionally overridden for rare-tier keys.
  std::vector<double> bias(static_cast<std::size_t>(ds));
  std::vector<char> key_rare(static_cast<std::size_t>(ds), 0);
  for (const auto& q : questions) {
    for (i64 j = 0; j < q.n_keys; ++j) {
      key_rare[static_cast<std::size_t>(q.first_key + j)] = q.rare ? 1 : 0;
    }
  }
  for (i64 k = 0; k < ds; ++k) {
    double rate = ds == 1 ? 0.5 : 0.05 + 0.45 * static_cast<double>(k) / static_cast<double>(ds - 1);
    if (key_rare[static_cast<std::size_t>(k)] && cfg.rare_favorability_rate > 0.0) {
      rate = cfg.rare_favorability_rate;
    }
    const double norm = std::sqrt(dot(&W[static_cast<std::size_t>(k * L)],
                                      &W[static_cast<std::size_t>(k * L)], L));
    bias[static_cast<std::size_t>(k)] = norm * inv_norm_cdf(rate);
  }

  ds_out.records.reserve(static_cast<std::size_t>(cfg.n_users));
  std::vector<double> z(static_cast<std::size_t>(L));
  std::vector<double> score(static_cast<std::size_t>(ds));
  std::vector<char> fav(static_cast<std::size_t>(ds));
  for (i64 u = 0; u < cfg.n_users; ++u) {
    const std::uint64_t user_seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(u));
    Rng r_latent(Rng::mix(user_seed, 0));
    Rng r_survey(Rng::mix(user_seed, 1));
    Rng r_external(Rng::mix(user_seed, 2));
    Rng r_flip(Rng::mix(user_seed, 3));
    Rng r_serve(Rng::mix(user_seed, 4));

    UserRecord rec;
    rec.user_id = u;
    for (auto& v : z) v = r_latent.normal(0.0, 1.0);

    rec.x_s.resize(static_cast<std::size_t>(Fs));
    for (i64 i = 0; i < Fs; ++i) {
      rec.x_s[static_cast<std::size_t>(i)] =
          dot(&A[static_cast<std::size_t>(i * L)], z.data(), L) +
          r_survey.normal(0.0, cfg.survey_noise_sigma);
    }
    rec.x_e.resize(static_cast<std::size_t>(Fe));
    for (i64 i = 0; i < Fe; ++i) {
      if (i < n_inf) {
        rec.x_e[static_cast<std::size_t>(i)] =
            dot(&B[static_cast<std::size_t>(i * L)], z.data(), L) +
            r_external.normal(0.0, cfg.external_noise_sigma);
      } else {
        rec.x_e[static_cast<std::size_t>(i)] = r_external.normal(0.0, 1.0);
      }
    }

    for (i64 k = 0; k < ds; ++k) {
      score[static_cast<std::size_t>(k)] =
          dot(&W[static_cast<std::size_t>(k * L)], z.data(), L) + bias[static_cast<std::size_t>(k)];
      fav[static_cast<std::size_t>(k)] = score[static_cast<std::size_t>(k)] > 0.0 ? 1 : 0;
    }

    rec.mask.assign(static_cast<std::size_t>(ds), 0);
    for (const auto& q : questions) {
      // Label corruption for frequent-tier keys; draws happen regardless of
      // the serving outcome so the stream layout depends only on the config.
      i64 choice = -1;
      if (q.type == QuestionType::single_choice) {
        choice = q.first_key;
        for (i64 j = 1; j < q.n_keys; ++j) {
          if (score[static_cast<std::size_t>(q.first_key + j)] >
              score[static_cast<std::size_t>(choice)]) {
            choice = q.first_key + j;
          }
        }
        if (!q.rare && cfg.frequent_label_noise > 0.0) {
          if (r_flip.uniform01() < cfg.frequent_label_noise) {
            choice = q.first_key + static_cast<i64>(r_flip.uniform_int(
                                       static_cast<std::uint64_t>(q.n_keys)));
          }
        }
      } else if (!q.rare && cfg.frequent_label_noise > 0.0) {
        for (i64 j = 0; j < q.n_keys; ++j) {
          if (r_flip.uniform01() < cfg.frequent_label_noise) {
            auto& f = fav[static_cast<std::size_t>(q.first_key + j)];
            f = f ? 0 : 1;
          }
        }
      }

      const double sp = man.keys[static_cast<std::size_t>(q.first_key)].serve_probability;
      const bool served = r_serve.uniform01() < sp;
      if (!served) continue;
      if (q.type == QuestionType::single_choice) {
        for (i64 j = 0; j < q.n_keys; ++j) {
          rec.mask[static_cast<std::size_t>(q.first_key + j)] =
              (q.first_key + j == choice) ? 1 : -1;
        }
      } else {
        for (i64 j = 0; j < q.n_keys; ++j) {
          rec.mask[static_cast<std::size_t>(q.first_key + j)] =
              fav[static_cast<std::size_t>(q.first_key + j)] ? 1 : -1;
        }
      }
    }
    validate_record(man, rec);
    ds_out.records.push_back(std::move(rec));
  }
  return ds_out;
}

void validate_record(const DatasetManifest& manifest, const UserRecord& rec, i64 line) {
  const std::string ctx = record_context(rec, line);
  require(static_cast<i64>(rec.x_s.size()) == manifest.survey_dim,
          ctx + "x_s length " + std::to_string(rec.x_s.size()) +
              " does not match survey_dim F_s=" + std::to_string(manifest.survey_dim));
  require(static_cast<i64>(rec.x_e.size()) == manifest.external_dim,
          ctx + "x_e length " + std::to_string(rec.x_e.size()) +
              " does not match external_dim F_e=" + std::to_string(manifest.external_dim));
  require(static_cast<i64>(rec.mask.size()) == manifest.d_s(),
          ctx + "mask length " + std::to_string(rec.mask.size()) + " does not match d_s=" +
              std::to_string(manifest.d_s()));
  for (std::size_t i = 0; i < rec.mask.size(); ++i) {
    require(rec.mask[i] == -1 || rec.mask[i] == 0 || rec.mask[i] == 1,
            ctx + "mask values must lie in {-1,0,1}, got " + std::to_string(rec.mask[i]) +
                " at key " + std::to_string(i));
  }
  // Per-question structure: unserved questions are all-zero; a served
  // single_choice question has exactly one +1 and no zeros.
  std::map<i64, std::vector<i64>> by_question;
  for (const auto& k : manifest.keys) by_question[k.question_id].push_back(k.key_id);
  for (const auto& [qid, kids] : by_question) {
    const QuestionType type = manifest.keys[static_cast<std::size_t>(kids.front())].question_type;
    i64 zeros = 0, plus = 0;
    for (i64 k : kids) {
      const int m = rec.mask[static_cast<std::size_t>(k)];
      zeros += m == 0;
      plus += m == 1;
    }
    if (type == QuestionType::single_choice && zeros != static_cast<i64>(kids.size())) {
      require(zeros == 0 && plus == 1,
              ctx + "served single_choice question " + std::to_string(qid) +
                  " must have exactly one +1 and no unserved keys");
    }
  }
}

namespace {

ordered_json manifest_to_json(const DatasetManifest& man) {
  ordered_json j;
  j["survey_dim"] = man.survey_dim;
  j["external_dim"] = man.external_dim;
  j["cycle_id"] = man.cycle_id;
  j["generator_seed"] = man.generator_seed;
  j["keys"] = ordered_json::array();
  for (const auto& k : man.keys) {
    ordered_json kj;
    kj["key_id"] = k.key_id;
    kj["question_id"] = k.question_id;
    kj["question_type"] = to_string(k.question_type);
    kj["serve_probability"] = k.serve_probability;
    j["keys"].push_back(std::move(kj));
  }
  return j;
}

DatasetManifest manifest_from_json(const ordered_json& j) {
  DatasetManifest man;
  try {
    man.survey_dim = j.at("survey_dim").get<i64>();
    man.external_dim = j.at("external_dim").get<i64>();
    man.cycle_id = j.at("cycle_id").get<i64>();
    man.generator_seed = j.at("generator_seed").get<std::uint64_t>();
    for (const auto& kj : j.at("keys")) {
      ResponseKey k;
      k.key_id = kj.at("key_id").get<i64>();
      k.question_id = kj.at("question_id").get<i64>();
      k.question_type = question_type_from_string(kj.at("question_type").get<std::string>());
      k.serve_probability = kj.at("serve_probability").get<double>();
      man.keys.push_back(k);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("manifest.json: ") + e.what());
  }
  man.validate();
  return man;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir) {
  ds.manifest.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + dir + ": " + ec.message());
  }
  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  {
    std::ofstream out(manifest_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + manifest_path);
    out << manifest_to_json(ds.manifest).dump(2) << '\n';
    if (!out) throw IoError("write failed on " + manifest_path);
  }
  const std::string records_path = (fs::path(dir) / "records.jsonl").string();
  std::ofstream out(records_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + records_path);
  for (const auto& rec : ds.records) {
    validate_record(ds.manifest, rec);
    ordered_json j;
    j["user_id"] = rec.user_id;
    j["x_s"] = rec.x_s;
    j["x_e"] = rec.x_e;
    j["mask"] = rec.mask;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed on " + records_path);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream min(path, std::ios::binary);
  if (!min) throw IoError("cannot open " + path);
  ordered_json mj;
  try {
    mj = ordered_json::parse(min);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return manifest_from_json(mj);
}

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  ds.manifest = load_manifest((fs::path(dir) / "manifest.json").string());

  const std::string records_path = (fs::path(dir) / "records.jsonl").string();
  std::ifstream rin(records_path, std::ios::binary);
  if (!rin) throw IoError("cannot open " + records_path);
  std::string linebuf;
  i64 line_no = 0;
  while (std::getline(rin, linebuf)) {
    ++line_no;
    if (linebuf.empty()) continue;
    UserRecord rec;
    try {
      const ordered_json j = ordered_json::parse(linebuf);
      rec.user_id = j.at("user_id").get<i64>();
      rec.x_s = j.at("x_s").get<std::vector<double>>();
      rec.x_e = j.at("x_e").get<std::vector<double>>();
      rec.mask = j.at("mask").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("records.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
    validate_record(ds.manifest, rec, line_no);
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

FrequencyBuckets frequency_buckets(const std::vector<UserRecord>& records, i64 d_s, i64 k,
                                   BucketCountMode mode) {
  require(d_s >= 1, "frequency_buckets: d_s must be >= 1");
  require(k >= 0, "frequency_buckets: k must be >= 0");
  require(2 * k <= d_s, "frequency_buckets: 2k=" + std::to_string(2 * k) + " exceeds d_s=" +
                            std::to_string(d_s));
  FrequencyBuckets out;
  out.counts.assign(static_cast<std::size_t>(d_s), 0);
  for (const auto& rec : records) {
    require(static_cast<i64>(rec.mask.size()) == d_s,
            "frequency_buckets: record mask length " + std::to_string(rec.mask.size()) +
                " does not match d_s=" + std::to_string(d_s));
    for (i64 i = 0; i < d_s; ++i) {
      const int m = rec.mask[static_cast<std::size_t>(i)];
      const bool hit = mode == BucketCountMode::served ? m != 0 : m == 1;
      out.counts[static_cast<std::size_t>(i)] += hit;
    }
  }
  std::vector<i64> order(static_cast<std::size_t>(d_s));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](i64 a, i64 b) {
    return out.counts[static_cast<std::size_t>(a)] < out.counts[static_cast<std::size_t>(b)];
  });
  for (i64 i = 0; i < k; ++i) out.rare.insert(order[static_cast<std::size_t>(i)]);
  for (i64 i = d_s - k; i < d_s; ++i) out.frequent.insert(order[static_cast<std::size_t>(i)]);
  return out;
}

LabelSpaceDiff label_space_diff(const DatasetManifest& a, const DatasetManifest& b) {
  a.validate();
  b.validate();
  auto identities = [](const DatasetManifest& m) {
    std::map<i64, i64> next_pos;
    std::set<std::pair<i64, i64>> out;
    for (const auto& k : m.keys) out.insert({k.question_id, next_pos[k.question_id]++});
    return out;
  };
  const auto ia = identities(a);
  const auto ib = identities(b);
  LabelSpaceDiff diff;
  for (const auto& id : ia) {
    if (ib.count(id)) {
      diff.retained.insert(id);
    } else {
      diff.removed.insert(id);
    }
  }
  for (const auto& id : ib) {
    if (!ia.count(id)) diff.added.insert(id);
  }
  return diff;
}

}  // namespace lantern
