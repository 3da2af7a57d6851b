#include "lantern/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "lantern/errors.hpp"

namespace lantern {

namespace {

using i64 = std::int64_t;

[[noreturn]] void bad(const std::string& origin, const std::string& msg) {
  throw ValidationError("config " + origin + ": " + msg);
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

i64 parse_i64(const std::string& v, const std::string& key, const std::string& origin) {
  i64 out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    bad(origin, "key '" + key + "': cannot parse '" + v + "' as an integer");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& v, const std::string& key, const std::string& origin) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    bad(origin, "key '" + key + "': cannot parse '" + v + "' as an unsigned integer");
  }
  return out;
}

double parse_f64(const std::string& v, const std::string& key, const std::string& origin) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) {
    bad(origin, "key '" + key + "': cannot parse '" + v + "' as a number");
  }
  return out;
}

std::vector<double> parse_grid(const std::string& v, const std::string& key,
                               const std::string& origin) {
  std::vector<double> out;
  std::string item;
  std::istringstream ss(v);
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad(origin, "key '" + key + "': empty list entry in '" + v + "'");
    out.push_back(parse_f64(item, key, origin));
  }
  if (out.empty()) bad(origin, "key '" + key + "': empty list");
  return out;
}

std::string fmt_f64(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_grid(const std::vector<double>& grid) {
  std::string out;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (i) out += ",";
    out += fmt_f64(grid[i]);
  }
  return out;
}

std::string to_string(BucketCountMode m) {
  return m == BucketCountMode::served ? "served" : "favorable";
}

std::string to_string(Averaging a) { return a == Averaging::micro ? "micro" : "macro"; }

}  // namespace

std::int64_t RunConfig::bucket_k_or_default(i64 d_s) const {
  if (eval_bucket_k > 0) return eval_bucket_k;
  return std::max<i64>(1, d_s / 10);
}

void RunConfig::validate() const {
  gen.validate();
  model.validate();
  train.validate();
  if (!(eval_threshold > 0.0 && eval_threshold < 1.0)) {
    throw ValidationError("config: eval.threshold must lie in (0,1)");
  }
  for (std::size_t i = 1; i < eval_grid.size(); ++i) {
    if (!(eval_grid[i] > eval_grid[i - 1])) {
      throw ValidationError("config: eval.grid must be strictly increasing");
    }
  }
  for (double t : eval_grid) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("config: eval.grid entries must lie in (0,1)");
  }
  if (eval_bins < 2) throw ValidationError("config: eval.bins must be >= 2");
  if (eval_bucket_k < 0) throw ValidationError("config: eval.bucket_k must be >= 0");
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value,
                    const std::string& origin) {
  using Setter = std::function<void(RunConfig&, const std::string&)>;
  static const std::map<std::string, Setter> setters = {
      {"gen.n_users", [](RunConfig& c, const std::string& v) { c.gen.n_users = parse_i64(v, "gen.n_users", "set"); }},
      {"gen.latent_dim", [](RunConfig& c, const std::string& v) { c.gen.latent_dim = parse_i64(v, "gen.latent_dim", "set"); }},
      {"gen.n_binary", [](RunConfig& c, const std::string& v) { c.gen.n_binary = parse_i64(v, "gen.n_binary", "set"); }},
      {"gen.n_single", [](RunConfig& c, const std::string& v) { c.gen.n_single = parse_i64(v, "gen.n_single", "set"); }},
      {"gen.n_single_options", [](RunConfig& c, const std::string& v) { c.gen.n_single_options = parse_i64(v, "gen.n_single_options", "set"); }},
      {"gen.n_multi", [](RunConfig& c, const std::string& v) { c.gen.n_multi = parse_i64(v, "gen.n_multi", "set"); }},
      {"gen.n_multi_options", [](RunConfig& c, const std::string& v) { c.gen.n_multi_options = parse_i64(v, "gen.n_multi_options", "set"); }},
      {"gen.survey_dim", [](RunConfig& c, const std::string& v) { c.gen.survey_dim = parse_i64(v, "gen.survey_dim", "set"); }},
      {"gen.external_dim", [](RunConfig& c, const std::string& v) { c.gen.external_dim = parse_i64(v, "gen.external_dim", "set"); }},
      {"gen.survey_noise_sigma", [](RunConfig& c, const std::string& v) { c.gen.survey_noise_sigma = parse_f64(v, "gen.survey_noise_sigma", "set"); }},
      {"gen.external_noise_sigma", [](RunConfig& c, const std::string& v) { c.gen.external_noise_sigma = parse_f64(v, "gen.external_noise_sigma", "set"); }},
      {"gen.external_informative_fraction", [](RunConfig& c, const std::string& v) { c.gen.external_informative_fraction = parse_f64(v, "gen.external_informative_fraction", "set"); }},
      {"gen.base_serve_probability", [](RunConfig& c, const std::string& v) { c.gen.base_serve_probability = parse_f64(v, "gen.base_serve_probability", "set"); }},
      {"gen.rare_serve_probability", [](RunConfig& c, const std::string& v) { c.gen.rare_serve_probability = parse_f64(v, "gen.rare_serve_probability", "set"); }},
      {"gen.rare_key_fraction", [](RunConfig& c, const std::string& v) { c.gen.rare_key_fraction = parse_f64(v, "gen.rare_key_fraction", "set"); }},
      {"gen.rare_favorability_rate", [](RunConfig& c, const std::string& v) { c.gen.rare_favorability_rate = parse_f64(v, "gen.rare_favorability_rate", "set"); }},
      {"gen.frequent_label_noise", [](RunConfig& c, const std::string& v) { c.gen.frequent_label_noise = parse_f64(v, "gen.frequent_label_noise", "set"); }},
      {"gen.seed", [](RunConfig& c, const std::string& v) { c.gen.seed = parse_u64(v, "gen.seed", "set"); }},
      {"gen.cycle_id", [](RunConfig& c, const std::string& v) { c.gen.cycle_id = parse_i64(v, "gen.cycle_id", "set"); }},
      {"model.survey_dim", [](RunConfig& c, const std::string& v) { c.model.survey_dim = parse_i64(v, "model.survey_dim", "set"); }},
      {"model.external_dim", [](RunConfig& c, const std::string& v) { c.model.external_dim = parse_i64(v, "model.external_dim", "set"); }},
      {"model.d_embed", [](RunConfig& c, const std::string& v) { c.model.d_embed = parse_i64(v, "model.d_embed", "set"); }},
      {"model.d_proj", [](RunConfig& c, const std::string& v) { c.model.d_proj = parse_i64(v, "model.d_proj", "set"); }},
      {"model.n_tokens", [](RunConfig& c, const std::string& v) { c.model.n_tokens = parse_i64(v, "model.n_tokens", "set"); }},
      {"model.d_token", [](RunConfig& c, const std::string& v) { c.model.d_token = parse_i64(v, "model.d_token", "set"); }},
      {"model.n_heads", [](RunConfig& c, const std::string& v) { c.model.n_heads = parse_i64(v, "model.n_heads", "set"); }},
      {"model.n_layers", [](RunConfig& c, const std::string& v) { c.model.n_layers = parse_i64(v, "model.n_layers", "set"); }},
      {"model.d_ffn", [](RunConfig& c, const std::string& v) { c.model.d_ffn = parse_i64(v, "model.d_ffn", "set"); }},
      {"model.d_s", [](RunConfig& c, const std::string& v) { c.model.d_s = parse_i64(v, "model.d_s", "set"); }},
      {"model.dropout_rate", [](RunConfig& c, const std::string& v) { c.model.dropout_rate = parse_f64(v, "model.dropout_rate", "set"); }},
      {"model.noise_sigma", [](RunConfig& c, const std::string& v) { c.model.noise_sigma = parse_f64(v, "model.noise_sigma", "set"); }},
      {"train.learning_rate", [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_f64(v, "train.learning_rate", "set"); }},
      {"train.beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = parse_f64(v, "train.beta1", "set"); }},
      {"train.beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = parse_f64(v, "train.beta2", "set"); }},
      {"train.epsilon", [](RunConfig& c, const std::string& v) { c.train.epsilon = parse_f64(v, "train.epsilon", "set"); }},
      {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = parse_i64(v, "train.batch_size", "set"); }},
      {"train.epochs", [](RunConfig& c, const std::string& v) { c.train.epochs = parse_i64(v, "train.epochs", "set"); }},
      {"train.steps_per_epoch", [](RunConfig& c, const std::string& v) { c.train.steps_per_epoch = parse_i64(v, "train.steps_per_epoch", "set"); }},
      {"train.validation_steps", [](RunConfig& c, const std::string& v) { c.train.validation_steps = parse_i64(v, "train.validation_steps", "set"); }},
      {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = parse_u64(v, "train.seed", "set"); }},
      {"train.variant", [](RunConfig& c, const std::string& v) { c.train.variant = variant_from_string(v); }},
      {"eval.threshold", [](RunConfig& c, const std::string& v) { c.eval_threshold = parse_f64(v, "eval.threshold", "set"); }},
      {"eval.grid", [](RunConfig& c, const std::string& v) { c.eval_grid = parse_grid(v, "eval.grid", "set"); }},
      {"eval.bins", [](RunConfig& c, const std::string& v) { c.eval_bins = parse_i64(v, "eval.bins", "set"); }},
      {"eval.bucket_k", [](RunConfig& c, const std::string& v) { c.eval_bucket_k = parse_i64(v, "eval.bucket_k", "set"); }},
      {"eval.bucket_mode", [](RunConfig& c, const std::string& v) {
         if (v == "served") c.eval_bucket_mode = BucketCountMode::served;
         else if (v == "favorable") c.eval_bucket_mode = BucketCountMode::favorable;
         else bad("set", "key 'eval.bucket_mode': expected served|favorable, got '" + v + "'");
       }},
      {"eval.averaging", [](RunConfig& c, const std::string& v) {
         if (v == "micro") c.eval_averaging = Averaging::micro;
         else if (v == "macro") c.eval_averaging = Averaging::macro;
         else bad("set", "key 'eval.averaging': expected micro|macro, got '" + v + "'");
       }},
      {"data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
      {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"manifest_a", [](RunConfig& c, const std::string& v) { c.manifest_a = v; }},
      {"manifest_b", [](RunConfig& c, const std::string& v) { c.manifest_b = v; }},
  };

  auto it = setters.find(key);
  if (it == setters.end()) bad(origin, "unknown key '" + key + "'");
  try {
    it->second(cfg, value);
  } catch (const ValidationError& e) {
    // Re-anchor value errors at the caller's origin (file:line or --set).
    std::string msg = e.what();
    const std::string prefix = "config set: ";
    if (msg.rfind(prefix, 0) == 0) bad(origin, msg.substr(prefix.size()));
    throw;
  }
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream ss(text);
  std::string line;
  i64 line_no = 0;
  while (std::getline(ss, line)) {
    line_no += 1;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      bad(origin + ":" + std::to_string(line_no), "expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) bad(origin + ":" + std::to_string(line_no), "empty key");
    apply_override(cfg, key, value, origin + ":" + std::to_string(line_no));
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config " + path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), path);
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "# resolved run configuration\n";
  out << "gen.n_users = " << cfg.gen.n_users << "\n";
  out << "gen.latent_dim = " << cfg.gen.latent_dim << "\n";
  out << "gen.n_binary = " << cfg.gen.n_binary << "\n";
  out << "gen.n_single = " << cfg.gen.n_single << "\n";
  out << "gen.n_single_options = " << cfg.gen.n_single_options << "\n";
  out << "gen.n_multi = " << cfg.gen.n_multi << "\n";
  out << "gen.n_multi_options = " << cfg.gen.n_multi_options << "\n";
  out << "gen.survey_dim = " << cfg.gen.survey_dim << "\n";
  out << "gen.external_dim = " << cfg.gen.external_dim << "\n";
  out << "gen.survey_noise_sigma = " << fmt_f64(cfg.gen.survey_noise_sigma) << "\n";
  out << "gen.external_noise_sigma = " << fmt_f64(cfg.gen.external_noise_sigma) << "\n";
  out << "gen.external_informative_fraction = " << fmt_f64(cfg.gen.external_informative_fraction)
      << "\n";
  out << "gen.base_serve_probability = " << fmt_f64(cfg.gen.base_serve_probability) << "\n";
  out << "gen.rare_serve_probability = " << fmt_f64(cfg.gen.rare_serve_probability) << "\n";
  out << "gen.rare_key_fraction = " << fmt_f64(cfg.gen.rare_key_fraction) << "\n";
  out << "gen.rare_favorability_rate = " << fmt_f64(cfg.gen.rare_favorability_rate) << "\n";
  out << "gen.frequent_label_noise = " << fmt_f64(cfg.gen.frequent_label_noise) << "\n";
  out << "gen.seed = " << cfg.gen.seed << "\n";
  out << "gen.cycle_id = " << cfg.gen.cycle_id << "\n";
  out << "model.survey_dim = " << cfg.model.survey_dim << "\n";
  out << "model.external_dim = " << cfg.model.external_dim << "\n";
  out << "model.d_embed = " << cfg.model.d_embed << "\n";
  out << "model.d_proj = " << cfg.model.d_proj << "\n";
  out << "model.n_tokens = " << cfg.model.n_tokens << "\n";
  out << "model.d_token = " << cfg.model.d_token << "\n";
  out << "model.n_heads = " << cfg.model.n_heads << "\n";
  out << "model.n_layers = " << cfg.model.n_layers << "\n";
  out << "model.d_ffn = " << cfg.model.d_ffn << "\n";
  out << "model.d_s = " << cfg.model.d_s << "\n";
  out << "model.dropout_rate = " << fmt_f64(cfg.model.dropout_rate) << "\n";
  out << "model.noise_sigma = " << fmt_f64(cfg.model.noise_sigma) << "\n";
  out << "train.learning_rate = " << fmt_f64(cfg.train.learning_rate) << "\n";
  out << "train.beta1 = " << fmt_f64(cfg.train.beta1) << "\n";
  out << "train.beta2 = " << fmt_f64(cfg.train.beta2) << "\n";
  out << "train.epsilon = " << fmt_f64(cfg.train.epsilon) << "\n";
  out << "train.batch_size = " << cfg.train.batch_size << "\n";
  out << "train.epochs = " << cfg.train.epochs << "\n";
  out << "train.steps_per_epoch = " << cfg.train.steps_per_epoch << "\n";
  out << "train.validation_steps = " << cfg.train.validation_steps << "\n";
  out << "train.seed = " << cfg.train.seed << "\n";
  out << "train.variant = " << to_string(cfg.train.variant) << "\n";
  out << "eval.threshold = " << fmt_f64(cfg.eval_threshold) << "\n";
  out << "eval.grid = " << fmt_grid(cfg.eval_grid) << "\n";
  out << "eval.bins = " << cfg.eval_bins << "\n";
  out << "eval.bucket_k = " << cfg.eval_bucket_k << "\n";
  out << "eval.bucket_mode = " << to_string(cfg.eval_bucket_mode) << "\n";
  out << "eval.averaging = " << to_string(cfg.eval_averaging) << "\n";
  if (!cfg.data_dir.empty()) out << "data_dir = " << cfg.data_dir << "\n";
  if (!cfg.checkpoint.empty()) out << "checkpoint = " << cfg.checkpoint << "\n";
  if (!cfg.manifest_a.empty()) out << "manifest_a = " << cfg.manifest_a << "\n";
  if (!cfg.manifest_b.empty()) out << "manifest_b = " << cfg.manifest_b << "\n";
  return out.str();
}

}  // namespace lantern
