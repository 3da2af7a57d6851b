#include "lantern/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lantern/errors.hpp"
#include "lantern/ops.hpp"
#include "lantern/rng.hpp"
#include "lantern/tape.hpp"

namespace lantern {

namespace {

using i64 = std::int64_t;
using json = nlohmann::json;
using ad::Tensor;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "train config: learning_rate must be > 0");
  require(beta1 > 0.0 && beta1 < 1.0, "train config: beta1 must lie in (0,1)");
  require(beta2 > 0.0 && beta2 < 1.0, "train config: beta2 must lie in (0,1)");
  require(epsilon > 0.0, "train config: epsilon must be > 0");
  require(batch_size >= 1, "train config: batch_size must be >= 1");
  require(epochs >= 1, "train config: epochs must be >= 1");
  require(steps_per_epoch >= 1, "train config: steps_per_epoch must be >= 1");
  require(validation_steps >= 1, "train config: validation_steps must be >= 1");
}

AdamState init_adam_state(const std::vector<std::pair<std::string, Tensor>>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const auto& [name, p] : params) {
    state.m.push_back(Tensor::zeros(p.shape()));
    state.v.push_back(Tensor::zeros(p.shape()));
  }
  return state;
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
               const TrainConfig& cfg) {
  require(state.m.size() == params.size() && state.v.size() == params.size(),
          "adam_step: state holds " + std::to_string(state.m.size()) + " moments for " +
              std::to_string(params.size()) + " parameters");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i].second;
    require(state.m[i].shape() == p.shape(),
            "adam_step: moment shape " + ad::shape_str(state.m[i].shape()) +
                " does not match parameter " + params[i].first + " " +
                ad::shape_str(p.shape()));
    auto pd = p.mutable_data();
    auto g = p.grad();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    for (i64 j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      pd[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

Batch assemble_batch(const Dataset& data, const std::vector<i64>& user_indices) {
  const i64 n = static_cast<i64>(user_indices.size());
  const i64 f_s = data.manifest.survey_dim;
  const i64 f_e = data.manifest.external_dim;
  const i64 d_s = data.manifest.d_s();
  Batch b;
  b.x_s = Tensor::zeros({n, f_s});
  b.x_e = Tensor::zeros({n, f_e});
  b.mask = Tensor::zeros({n, d_s});
  for (i64 r = 0; r < n; ++r) {
    const i64 u = user_indices[static_cast<std::size_t>(r)];
    require(u >= 0 && u < static_cast<i64>(data.records.size()),
            "assemble_batch: user index " + std::to_string(u) + " out of range");
    const UserRecord& rec = data.records[static_cast<std::size_t>(u)];
    std::copy(rec.x_s.begin(), rec.x_s.end(), b.x_s.mutable_data().begin() + r * f_s);
    std::copy(rec.x_e.begin(), rec.x_e.end(), b.x_e.mutable_data().begin() + r * f_e);
    for (i64 k = 0; k < d_s; ++k) {
      b.mask.mutable_data()[r * d_s + k] = static_cast<double>(rec.mask[static_cast<std::size_t>(k)]);
    }
  }
  return b;
}

double train_step(const Batch& batch, const LanternParams& params,
                  const std::vector<std::pair<std::string, Tensor>>& named_params,
                  AdamState& state, const TrainConfig& cfg, Rng& rng) {
  for (const auto& [name, p] : named_params) p.zero_grad();
  ad::Tape tape;
  ForwardResult r = forward(tape, params, batch.x_s, batch.x_e, cfg.variant, Mode::training, rng);
  Tensor loss = masked_bce_loss(tape, r.y_hat, batch.mask);
  tape.backward(loss);
  adam_step(named_params, state, cfg);
  return loss.item();
}

namespace {

// Cycles through the index pool, reshuffling at each wrap so no epoch repeats
// the previous order.
class RepeatStream {
 public:
  RepeatStream(std::vector<i64> pool, Rng rng) : pool_(std::move(pool)), rng_(rng) {
    rng_.shuffle(pool_);
  }

  std::vector<i64> next(i64 n) {
    std::vector<i64> out;
    out.reserve(static_cast<std::size_t>(n));
    while (static_cast<i64>(out.size()) < n) {
      if (pos_ == pool_.size()) {
        rng_.shuffle(pool_);
        pos_ = 0;
      }
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<i64> pool_;
  Rng rng_;
  std::size_t pos_ = 0;
};

double eval_loss(const Dataset& data, const std::vector<i64>& users, const LanternParams& params,
                 Variant variant, i64 batch_size, i64 steps) {
  Rng rng(0);  // eval mode draws nothing
  std::size_t pos = 0;
  double total = 0.0;
  for (i64 s = 0; s < steps; ++s) {
    std::vector<i64> ids;
    ids.reserve(static_cast<std::size_t>(batch_size));
    for (i64 k = 0; k < batch_size; ++k) {
      ids.push_back(users[pos]);
      pos = (pos + 1) % users.size();
    }
    Batch b = assemble_batch(data, ids);
    ad::Tape tape(false);
    ForwardResult r = forward(tape, params, b.x_s, b.x_e, variant, Mode::eval, rng);
    total += masked_bce_loss(tape, r.y_hat, b.mask).item();
  }
  return total / static_cast<double>(steps);
}

}  // namespace

std::pair<std::vector<i64>, std::vector<i64>> train_val_split(i64 n_users, std::uint64_t seed) {
  require(n_users >= 1, "train_val_split: need at least one user");
  std::vector<i64> order(static_cast<std::size_t>(n_users));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(Rng::mix(seed, fnv1a("train.split")));
  split_rng.shuffle(order);
  const i64 n_val = std::max<i64>(n_users >= 2 ? 1 : 0, n_users / 10);
  const i64 n_train = n_users - n_val;
  return {std::vector<i64>(order.begin(), order.begin() + n_train),
          std::vector<i64>(order.begin() + n_train, order.end())};
}

TrainResult train(const Dataset& data, const TrainConfig& train_cfg,
                  const LanternConfig& model_cfg) {
  train_cfg.validate();
  model_cfg.validate();
  require(!data.records.empty(), "train: dataset has no users");
  require(data.manifest.survey_dim == model_cfg.survey_dim &&
              data.manifest.external_dim == model_cfg.external_dim &&
              data.manifest.d_s() == model_cfg.d_s,
          "train: dataset dims (" + std::to_string(data.manifest.survey_dim) + "," +
              std::to_string(data.manifest.external_dim) + "," +
              std::to_string(data.manifest.d_s()) + ") do not match model config (" +
              std::to_string(model_cfg.survey_dim) + "," + std::to_string(model_cfg.external_dim) +
              "," + std::to_string(model_cfg.d_s) + ")");

  auto [train_users, val_users] = train_val_split(static_cast<i64>(data.records.size()),
                                                  train_cfg.seed);
  if (val_users.empty()) val_users = train_users;  // single-user corner: validate on train

  TrainResult result;
  result.params = init_params(model_cfg, Rng::mix(train_cfg.seed, fnv1a("train.init")));
  auto named = result.params.named(train_cfg.variant);
  result.adam = init_adam_state(named);

  RepeatStream stream(train_users, Rng(Rng::mix(train_cfg.seed, fnv1a("train.shuffle"))));
  Rng reg_rng(Rng::mix(train_cfg.seed, fnv1a("train.regularizers")));

  for (i64 epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    for (i64 step = 0; step < train_cfg.steps_per_epoch; ++step) {
      Batch b = assemble_batch(data, stream.next(train_cfg.batch_size));
      epoch_loss +=
          train_step(b, result.params, named, result.adam, train_cfg, reg_rng);
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss / static_cast<double>(train_cfg.steps_per_epoch);
    log.val_loss = eval_loss(data, val_users, result.params, train_cfg.variant,
                             train_cfg.batch_size, train_cfg.validation_steps);
    result.log.push_back(log);
  }
  return result;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  out.precision(17);
  for (const auto& e : log) {
    out << e.epoch << "," << e.train_loss << "," << e.val_loss << "\n";
  }
  return out.str();
}

// --- checkpoint container ---------------------------------------------------
//
// magic "LNTN" | u32 version | u32 n_entries | entries...
// entry: u16 name_len | name | u8 dtype (0 = f64 tensor, 1 = raw bytes)
//        | u8 rank | u64 extent per rank | payload
// All integers and doubles little-endian.

namespace {

constexpr char kMagic[4] = {'L', 'N', 'T', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(gather(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(gather(4)); }
  std::uint64_t u64() { return gather(8); }
  double f64() {
    const std::uint64_t bits = gather(8);
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) { return std::string(take(n), n); }
  bool exhausted() const { return pos_ == buf_.size(); }

 private:
  const char* take(std::size_t n) {
    if (buf_.size() - pos_ < n) {
      throw IoError("checkpoint " + path_ + ": truncated (wanted " + std::to_string(n) +
                    " bytes at offset " + std::to_string(pos_) + ")");
    }
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t gather(std::size_t n) {
    const char* p = take(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
  }

  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

void append_tensor_entry(std::string& out, const std::string& name, const Tensor& t) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(0);  // dtype f64
  out.push_back(static_cast<char>(t.rank()));
  for (i64 ax = 0; ax < t.rank(); ++ax) put_u64(out, static_cast<std::uint64_t>(t.extent(ax)));
  for (double d : t.data()) put_f64(out, d);
}

void append_bytes_entry(std::string& out, const std::string& name, const std::string& payload) {
  put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.append(name);
  out.push_back(1);  // dtype bytes
  out.push_back(1);  // rank 1: length
  put_u64(out, payload.size());
  out.append(payload);
}

json model_cfg_json(const LanternConfig& c) {
  return json{{"survey_dim", c.survey_dim}, {"external_dim", c.external_dim},
              {"d_embed", c.d_embed},       {"d_proj", c.d_proj},
              {"n_tokens", c.n_tokens},     {"d_token", c.d_token},
              {"n_heads", c.n_heads},       {"n_layers", c.n_layers},
              {"d_ffn", c.d_ffn},           {"d_s", c.d_s},
              {"dropout_rate", c.dropout_rate}, {"noise_sigma", c.noise_sigma}};
}

LanternConfig model_cfg_from_json(const json& j) {
  LanternConfig c;
  c.survey_dim = j.at("survey_dim").get<i64>();
  c.external_dim = j.at("external_dim").get<i64>();
  c.d_embed = j.at("d_embed").get<i64>();
  c.d_proj = j.at("d_proj").get<i64>();
  c.n_tokens = j.at("n_tokens").get<i64>();
  c.d_token = j.at("d_token").get<i64>();
  c.n_heads = j.at("n_heads").get<i64>();
  c.n_layers = j.at("n_layers").get<i64>();
  c.d_ffn = j.at("d_ffn").get<i64>();
  c.d_s = j.at("d_s").get<i64>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  return c;
}

json train_cfg_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"epsilon", c.epsilon},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"steps_per_epoch", c.steps_per_epoch},
              {"validation_steps", c.validation_steps},
              {"seed", c.seed},
              {"variant", to_string(c.variant)}};
}

TrainConfig train_cfg_from_json(const json& j) {
  TrainConfig c;
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.batch_size = j.at("batch_size").get<i64>();
  c.epochs = j.at("epochs").get<i64>();
  c.steps_per_epoch = j.at("steps_per_epoch").get<i64>();
  c.validation_steps = j.at("validation_steps").get<i64>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.variant = variant_from_string(j.at("variant").get<std::string>());
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const LanternParams& params, const AdamState& adam,
                     const LanternConfig& model_cfg, const TrainConfig& train_cfg) {
  auto named = params.named(train_cfg.variant);
  require(adam.m.size() == named.size() && adam.v.size() == named.size(),
          "save_checkpoint: optimizer state does not align with the " +
              to_string(train_cfg.variant) + " parameter list");

  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  const std::uint32_t n_entries =
      static_cast<std::uint32_t>(3 * named.size() + 3);  // params, m, v, step, two configs
  put_u32(out, n_entries);

  append_bytes_entry(out, "meta.model_config", model_cfg_json(model_cfg).dump());
  append_bytes_entry(out, "meta.train_config", train_cfg_json(train_cfg).dump());
  append_tensor_entry(out, "adam.step", Tensor::scalar(static_cast<double>(adam.t)));
  for (std::size_t i = 0; i < named.size(); ++i) {
    append_tensor_entry(out, "param." + named[i].first, named[i].second);
    append_tensor_entry(out, "adam.m." + named[i].first, adam.m[i]);
    append_tensor_entry(out, "adam.v." + named[i].first, adam.v[i]);
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint " + path + ": cannot open for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint " + path + ": write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint " + path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string buf = ss.str();

  Reader r(buf, path);
  const std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw IoError("checkpoint " + path + ": bad magic bytes (not a checkpoint file)");
  }
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("checkpoint " + path + ": unsupported version " + std::to_string(version) +
                  " (expected " + std::to_string(kVersion) + ")");
  }
  const std::uint32_t n_entries = r.u32();

  std::map<std::string, Tensor> tensors;
  std::map<std::string, std::string> blobs;
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const std::uint8_t dtype = r.u8();
    const std::uint8_t rank = r.u8();
    if (dtype == 1) {
      if (rank != 1) {
        throw IoError("checkpoint " + path + ": bytes entry " + name + " has rank " +
                      std::to_string(rank));
      }
      const std::uint64_t len = r.u64();
      blobs[name] = r.bytes(len);
      continue;
    }
    if (dtype != 0) {
      throw IoError("checkpoint " + path + ": entry " + name + " has unknown dtype " +
                    std::to_string(dtype));
    }
    ad::Shape shape;
    i64 count = 1;
    for (std::uint8_t ax = 0; ax < rank; ++ax) {
      shape.push_back(static_cast<i64>(r.u64()));
      count *= shape.back();
    }
    Tensor t = Tensor::zeros(shape);
    for (i64 k = 0; k < count; ++k) t.mutable_data()[k] = r.f64();
    tensors.emplace(name, t);
  }
  if (!r.exhausted()) {
    throw IoError("checkpoint " + path + ": trailing bytes after the last entry");
  }

  Checkpoint cp;
  try {
    cp.model_cfg = model_cfg_from_json(json::parse(blobs.at("meta.model_config")));
    cp.train_cfg = train_cfg_from_json(json::parse(blobs.at("meta.train_config")));
  } catch (const std::out_of_range&) {
    throw IoError("checkpoint " + path + ": config entries missing");
  } catch (const json::exception& e) {
    throw IoError("checkpoint " + path + ": config entries unreadable: " + e.what());
  }
  cp.model_cfg.validate();
  cp.train_cfg.validate();

  cp.params = init_params(cp.model_cfg, 0);
  auto named = cp.params.named(cp.train_cfg.variant);
  cp.adam = init_adam_state(named);
  auto fetch = [&](const std::string& name) -> const Tensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw IoError("checkpoint " + path + ": entry " + name + " missing");
    return it->second;
  };
  auto copy_into = [&](const Tensor& src, const Tensor& dst, const std::string& name) {
    if (src.shape() != dst.shape()) {
      throw IoError("checkpoint " + path + ": entry " + name + " has shape " +
                    ad::shape_str(src.shape()) + ", expected " + ad::shape_str(dst.shape()));
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  };
  for (std::size_t i = 0; i < named.size(); ++i) {
    copy_into(fetch("param." + named[i].first), named[i].second, "param." + named[i].first);
    copy_into(fetch("adam.m." + named[i].first), cp.adam.m[i], "adam.m." + named[i].first);
    copy_into(fetch("adam.v." + named[i].first), cp.adam.v[i], "adam.v." + named[i].first);
  }
  cp.adam.t = static_cast<i64>(fetch("adam.step").item());
  return cp;
}

}  // namespace lantern
