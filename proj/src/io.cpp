#include "coevo/io.hpp"

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <set>
#include <sstream>
#include <stdexcept>

#include "coevo/binary_io.hpp"

namespace fs = std::filesystem;

namespace coevo {
namespace {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// Walks the config tree in one fixed order, either filling a JSON document
// or reading one back with strict key checking.
class Writer {
 public:
  Json doc = Json::object();

  template <typename F>
  void section(const std::string& name, F&& body) {
    Json* saved = cur_;
    Json& child = (*cur_)[name] = Json::object();
    cur_ = &child;
    body();
    cur_ = saved;
  }
  template <typename T>
  void field(const std::string& name, T& v) { (*cur_)[name] = v; }
  template <typename E, typename P, typename S>
  void choice(const std::string& name, E& v, P, S show) { (*cur_)[name] = show(v); }

 private:
  Json* cur_ = &doc;
};

class Reader {
 public:
  explicit Reader(const Json& doc) : cur_(&doc) {
    if (!doc.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  }

  template <typename F>
  void section(const std::string& name, F&& body) {
    consumed_.back().insert(name);
    const Json* saved = cur_;
    const std::string saved_path = path_;
    path_ = path_.empty() ? name : path_ + "." + name;
    auto it = cur_->find(name);
    static const Json empty = Json::object();
    if (it != cur_->end() && !it->is_object()) {
      throw std::invalid_argument(path_ + ": expected an object");
    }
    cur_ = it == cur_->end() ? &empty : &*it;
    consumed_.emplace_back();
    body();
    check_unknown();
    consumed_.pop_back();
    cur_ = saved;
    path_ = saved_path;
  }

  template <typename T>
  void field(const std::string& name, T& v) {
    consumed_.back().insert(name);
    auto it = cur_->find(name);
    if (it == cur_->end()) return;
    const std::string key = path_.empty() ? name : path_ + "." + name;
    if (it->is_null()) throw std::invalid_argument(key + ": value is missing");
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw std::invalid_argument(key + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw std::invalid_argument(key + ": expected an integer");
      if (std::is_unsigned_v<T> && it->is_number_integer() && !it->is_number_unsigned() &&
          it->template get<long long>() < 0) {
        throw std::invalid_argument(key + ": must be >= 0");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw std::invalid_argument(key + ": expected a number");
    } else {
      if (!it->is_string()) throw std::invalid_argument(key + ": expected a string");
    }
    v = it->template get<T>();
  }

  template <typename E, typename P, typename S>
  void choice(const std::string& name, E& v, P parse, S) {
    std::string s;
    field(name, s);
    if (s.empty()) return;
    try {
      v = parse(s);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument((path_.empty() ? name : path_ + "." + name) + ": " + e.what());
    }
  }

  void finish() { check_unknown(); }

 private:
  void check_unknown() const {
    for (auto it = cur_->begin(); it != cur_->end(); ++it) {
      if (!consumed_.back().count(it.key())) {
        throw std::invalid_argument("unknown config key '" +
                                    (path_.empty() ? it.key() : path_ + "." + it.key()) + "'");
      }
    }
  }

  const Json* cur_;
  std::string path_;
  std::vector<std::set<std::string>> consumed_{1};
};

template <typename V>
void visit_optimizer(V& v, const std::string& name, OptimizerConfig& o) {
  v.section(name, [&] {
    v.choice("kind", o.kind, parse_optimizer, [](OptimizerKind k) { return to_string(k); });
    v.field("lr", o.lr);
    v.field("beta1", o.beta1);
    v.field("beta2", o.beta2);
    v.field("eps", o.eps);
    v.field("weight_decay", o.weight_decay);
  });
}

template <typename V>
void visit_config(V& v, TrainConfig& c) {
  v.section("domain", [&] {
    v.field("train_images", c.domain.train_images);
    v.field("feature_seed", c.seeds.feature_seed);
  });
  v.section("tokenizer", [&] {
    v.field("codebook_size", c.tokenizer.codebook_size);
    v.field("latent_dim", c.tokenizer.latent_dim);
    v.field("decoder_hidden", c.tokenizer.decoder_hidden);
    v.field("steps", c.tokenizer.steps);
    v.field("batch", c.tokenizer.batch);
    v.field("lr", c.tokenizer.lr);
    v.field("codebook_weight", c.tokenizer.codebook_weight);
    v.field("commitment_weight", c.tokenizer.commitment_weight);
  });
  v.section("policy", [&] {
    v.field("embed_dim", c.policy.embed_dim);
    v.field("hidden_dim", c.policy.hidden_dim);
    v.field("temperature", c.sampling.temperature);
    v.field("top_p", c.sampling.top_p);
    v.field("sft_steps", c.sft.steps);
    v.field("sft_batch", c.sft.batch);
    v.field("sft_lr", c.sft.lr);
  });
  v.section("rewards", [&] {
    v.choice("reward", c.reward_channel, parse_reward_channel,
             [](RewardChannel r) { return to_string(r); });
  });
  v.section("stage1", [&] {
    v.field("group_size", c.stage1.group_size);
    v.field("clip_eps", c.stage1.clip_eps);
    v.field("kl_beta", c.stage1.kl_beta);
    v.field("sigma_floor", c.stage1.sigma_floor);
    v.choice("advantage_norm", c.stage1.advantage_norm, parse_advantage_norm,
             [](AdvantageNorm a) { return to_string(a); });
    v.choice("surrogate", c.stage1.surrogate, parse_surrogate,
             [](Surrogate s) { return to_string(s); });
    visit_optimizer(v, "optimizer", c.stage1.optimizer);
  });
  v.section("stage2", [&] {
    v.field("lambda_r", c.stage2.lambda_r);
    v.field("lambda_g", c.stage2.lambda_g);
    v.field("lambda_c", c.stage2.lambda_c);
    v.field("lambda_d", c.stage2.lambda_d);
    v.field("tau", c.stage2.tau);
    v.choice("consistency_metric", c.stage2.consistency_metric, parse_consistency_metric,
             [](ConsistencyMetric m) { return to_string(m); });
    v.field("disc_hidden", c.stage2.disc_hidden);
    visit_optimizer(v, "decoder_optimizer", c.stage2.decoder_optimizer);
    visit_optimizer(v, "disc_optimizer", c.stage2.disc_optimizer);
  });
  v.section("driver", [&] {
    v.choice("mode", c.driver.mode, parse_train_mode, [](TrainMode m) { return to_string(m); });
    v.field("total_steps", c.driver.total_steps);
    v.field("batch_prompts", c.driver.batch_prompts);
    v.field("policy_ema_decay", c.driver.policy_ema_decay);
    v.field("decoder_ema_decay", c.driver.decoder_ema_decay);
    v.field("reference_ema", c.driver.reference_ema);
    v.field("reference_decay", c.driver.reference_decay);
    v.field("stage2_from_ema", c.driver.stage2_from_ema);
    v.field("decoder_every_n", c.driver.decoder_every_n);
    v.field("checkpoint_every", c.driver.checkpoint_every);
  });
  v.section("diagnostics", [&] {
    v.field("probe_every", c.diagnostics.probe_every);
    v.field("log_every", c.diagnostics.log_every);
    v.field("probe_samples", c.diagnostics.probe_samples);
    v.field("quality_samples", c.diagnostics.quality_samples);
    v.field("smoothing", c.diagnostics.smoothing);
    v.field("baseline_split_seed", c.diagnostics.baseline_split_seed);
    v.field("record_wall_time", c.diagnostics.record_wall_time);
  });
  v.section("seeds", [&] { v.field("seed", c.seeds.seed); });
  v.section("paths", [&] { v.field("out_dir", c.paths.out_dir); });
}

std::size_t dtype_bytes(Dtype d) { return d == Dtype::kFloat32 ? 4 : 8; }

constexpr char kMagic[] = "COEVOCK1";

}  // namespace

Json config_to_json(const TrainConfig& config) {
  TrainConfig copy = config;
  Writer w;
  visit_config(w, copy);
  return w.doc;
}

TrainConfig config_from_json(const Json& doc) {
  TrainConfig c;
  Reader r(doc);
  visit_config(r, c);
  r.finish();
  c.policy.codebook_size = c.tokenizer.codebook_size;
  validate(c);
  return c;
}

TrainConfig load_config(const fs::path& path) {
  const std::string text = read_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": parse error: " + e.what());
  }
  return config_from_json(doc);
}

void write_config(const TrainConfig& config, const fs::path& path) {
  write_file(path, config_to_json(config).dump(2) + "\n");
}

std::string config_hash(const TrainConfig& config) {
  return hex16(fnv1a(config_to_json(config).dump()));
}

void apply_env_overrides(TrainConfig& config) {
  const char* s = std::getenv("COEVO_SEED");
  if (s == nullptr || *s == '\0') return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || *end != '\0' || s[0] == '-') {
    throw std::invalid_argument(std::string("COEVO_SEED: not a nonnegative integer: '") + s + "'");
  }
  config.seeds.seed = v;
}

Dtype parse_dtype(const std::string& name) {
  if (name == "float32") return Dtype::kFloat32;
  if (name == "float64") return Dtype::kFloat64;
  throw std::invalid_argument("unknown dtype '" + name + "' (expected float32|float64)");
}

std::string to_string(Dtype dtype) { return dtype == Dtype::kFloat32 ? "float32" : "float64"; }

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path, Dtype dtype) {
  std::string payload;
  Json arrays = Json::array();
  for (const auto& [bundle_name, bundle] : ckpt.bundles) {
    for (const auto& [name, a] : bundle) {
      Json entry;
      entry["name"] = bundle_name + "/" + name;
      entry["shape"] = a.shape();
      entry["dtype"] = to_string(dtype);
      entry["offset"] = payload.size();
      for (double v : a.data()) {
        if (dtype == Dtype::kFloat32) {
          binary::put_f32(payload, static_cast<float>(v));
        } else {
          binary::put_f64(payload, v);
        }
      }
      entry["bytes"] = a.size() * dtype_bytes(dtype);
      arrays.push_back(std::move(entry));
    }
  }
  Json manifest;
  manifest["format"] = 1;
  manifest["step"] = ckpt.step;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["payload_bytes"] = payload.size();
  manifest["payload_fnv1a"] = hex16(fnv1a(payload));
  manifest["arrays"] = std::move(arrays);
  const std::string m = manifest.dump();
  std::string out(kMagic, 8);
  binary::put_u64(out, m.size());
  binary::put_u64(out, fnv1a(m));
  out += m;
  out += payload;
  write_file(path, out);
}

namespace {

Json parse_manifest(const std::string& bytes, const fs::path& path, std::size_t& payload_start) {
  const std::string where = "checkpoint " + path.string() + ": ";
  if (bytes.size() < 24 || bytes.compare(0, 8, kMagic, 8) != 0) {
    throw std::runtime_error(where + "not a checkpoint container");
  }
  binary::Reader r(bytes, 8);
  const std::uint64_t len = r.u64();
  const std::uint64_t sum = r.u64();
  if (len > r.remaining()) throw std::runtime_error(where + "truncated manifest");
  const std::string m = r.bytes(len);
  if (fnv1a(m) != sum) throw std::runtime_error(where + "manifest checksum mismatch");
  payload_start = r.pos();
  try {
    return Json::parse(m);
  } catch (const Json::exception& e) {
    throw std::runtime_error(where + "bad manifest: " + e.what());
  }
}

}  // namespace

Json read_manifest(const fs::path& path) {
  std::size_t start = 0;
  return parse_manifest(read_file(path), path, start);
}

Checkpoint load_checkpoint(const fs::path& path) {
  const std::string bytes = read_file(path);
  const std::string where = "checkpoint " + path.string() + ": ";
  std::size_t start = 0;
  const Json manifest = parse_manifest(bytes, path, start);
  Checkpoint ckpt;
  try {
    if (manifest.at("format").get<int>() != 1) throw std::runtime_error("unsupported format");
    ckpt.step = manifest.at("step").get<long>();
    ckpt.config_hash = manifest.at("config_hash").get<std::string>();
    const std::size_t payload_bytes = manifest.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - start != payload_bytes) {
      throw std::runtime_error("payload is " + std::to_string(bytes.size() - start) +
                               " bytes, manifest says " + std::to_string(payload_bytes));
    }
    const std::string payload = bytes.substr(start);
    if (hex16(fnv1a(payload)) != manifest.at("payload_fnv1a").get<std::string>()) {
      throw std::runtime_error("payload checksum mismatch");
    }
    std::size_t expected_offset = 0;
    for (const Json& e : manifest.at("arrays")) {
      const std::string full = e.at("name").get<std::string>();
      const auto slash = full.find('/');
      if (slash == std::string::npos) throw std::runtime_error("array name without bundle: " + full);
      const Shape shape = e.at("shape").get<Shape>();
      const Dtype dtype = parse_dtype(e.at("dtype").get<std::string>());
      const std::size_t offset = e.at("offset").get<std::size_t>();
      Array a(shape);
      if (offset != expected_offset || e.at("bytes").get<std::size_t>() != a.size() * dtype_bytes(dtype) ||
          offset + a.size() * dtype_bytes(dtype) > payload.size()) {
        throw std::runtime_error("inconsistent offset for " + full);
      }
      binary::Reader r(payload, offset);
      for (double& v : a.data()) v = dtype == Dtype::kFloat32 ? static_cast<double>(r.f32()) : r.f64();
      expected_offset = r.pos();
      ckpt.bundles[full.substr(0, slash)].set(full.substr(slash + 1), std::move(a));
    }
    if (expected_offset != payload.size()) throw std::runtime_error("trailing payload bytes");
  } catch (const Json::exception& e) {
    throw std::runtime_error(where + "bad manifest: " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(where + e.what());
  }
  return ckpt;
}

Checkpoint checkpoint_of(const TrainState& s, const std::string& hash) {
  Checkpoint c;
  c.step = s.step;
  c.config_hash = hash;
  c.bundles = {{"policy", s.policy},   {"reference", s.reference},
               {"policy_ema", s.policy_ema}, {"decoder", s.decoder},
               {"teacher", s.teacher}, {"discriminator", s.discriminator},
               {"encoder", s.encoder}, {"codebook", s.codebook}};
  return c;
}

void restore_state(TrainState& s, const Checkpoint& c, const TrainConfig& config) {
  auto take = [&](const char* name) -> const ParamBundle& {
    auto it = c.bundles.find(name);
    if (it == c.bundles.end()) throw std::runtime_error(std::string("checkpoint lacks bundle '") + name + "'");
    return it->second;
  };
  s.policy = take("policy");
  s.reference = take("reference");
  s.policy_ema = take("policy_ema");
  s.decoder = take("decoder");
  s.teacher = take("teacher");
  s.discriminator = take("discriminator");
  s.encoder = take("encoder");
  s.codebook = take("codebook");
  s.step = c.step;
  s.policy_opt = Optimizer(config.stage1.optimizer);
  s.decoder_opt = Optimizer(config.stage2.decoder_optimizer);
  s.disc_opt = Optimizer(config.stage2.disc_optimizer);
}

Checkpoint tokenizer_checkpoint(const Tokenizer& tok, const std::string& hash) {
  Checkpoint c;
  c.config_hash = hash;
  c.bundles = {{"encoder", tok.encoder}, {"codebook", tok.codebook}, {"decoder", tok.decoder}};
  return c;
}

Tokenizer tokenizer_from(const Checkpoint& c) {
  Tokenizer t;
  for (auto [name, dst] : {std::pair{"encoder", &t.encoder}, std::pair{"codebook", &t.codebook},
                           std::pair{"decoder", &t.decoder}}) {
    auto it = c.bundles.find(name);
    if (it == c.bundles.end()) throw std::runtime_error(std::string("tokenizer checkpoint lacks '") + name + "'");
    *dst = it->second;
  }
  return t;
}

MetricsWriter::MetricsWriter(const fs::path& path, bool record_wall_time)
    : path_(path), record_wall_time_(record_wall_time) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot write metrics " + path.string());
  start_ = std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void MetricsWriter::write(long step, const std::string& kind, const Scalars& values) {
  if (step < last_step_) {
    throw std::logic_error("metrics step went backwards: " + std::to_string(step) + " after " +
                           std::to_string(last_step_));
  }
  last_step_ = step;
  Json row;
  row["step"] = step;
  const double now =
      std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
  row["wall_time"] = record_wall_time_ ? now - start_ : 0.0;
  row["kind"] = kind;
  for (const auto& [k, v] : values) {
    if (k == "step" || k == "wall_time" || k == "kind") throw std::logic_error("reserved metric name " + k);
    row[k] = v;
  }
  out_ << row.dump() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("metrics write failed: " + path_.string());
}

void MetricsWriter::write(const MetricsRow& row) { write(row.step, row.kind, row.values); }

std::vector<MetricsRecord> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const Json j = Json::parse(line);
      MetricsRecord r;
      r.step = j.at("step").get<long>();
      r.wall_time = j.at("wall_time").get<double>();
      r.kind = j.at("kind").get<std::string>();
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "step" || it.key() == "wall_time" || it.key() == "kind") continue;
        if (it->is_number()) r.values[it.key()] = it->get<double>();
      }
      out.push_back(std::move(r));
    } catch (const Json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

RunArtifacts train(const TrainConfig& config, const PipelineInputs& inputs) {
  validate(config);
  RunArtifacts art;
  art.out_dir = config.paths.out_dir;
  art.metrics = art.out_dir / "metrics.jsonl";
  art.final_checkpoint = art.out_dir / "final.ckpt";
  fs::create_directories(art.out_dir);
  write_config(config, art.out_dir / "effective_config.json");
  const std::string hash = config_hash(config);
  MetricsWriter metrics(art.metrics, config.diagnostics.record_wall_time);

  Tokenizer tok;
  if (inputs.tokenizer_checkpoint) {
    tok = tokenizer_from(load_checkpoint(*inputs.tokenizer_checkpoint));
  } else {
    tok = pretrain_stage(config, make_dataset(config));
    save_checkpoint(tokenizer_checkpoint(tok, hash), art.out_dir / "tokenizer.ckpt");
  }
  Environment env(config, std::move(tok));

  ParamBundle sft;
  if (inputs.sft_checkpoint) {
    const Checkpoint c = load_checkpoint(*inputs.sft_checkpoint);
    auto it = c.bundles.find("policy");
    if (it == c.bundles.end()) throw std::runtime_error("sft checkpoint lacks 'policy'");
    sft = it->second;
    if (c.config_hash != hash) metrics.write(0, "warning", {{"config_hash_mismatch", 1.0}});
  } else {
    sft = sft_stage(config, env);
    Checkpoint c;
    c.config_hash = hash;
    c.bundles["policy"] = sft;
    save_checkpoint(c, art.out_dir / "sft.ckpt");
  }

  TrainState state = init_state(config, env, sft);
  TrainHooks hooks;
  hooks.metrics = [&](const MetricsRow& row) { metrics.write(row); };
  hooks.checkpoint = [&](const TrainState& s) {
    const Checkpoint c = checkpoint_of(s, hash);
    if (s.step == config.driver.total_steps) {
      save_checkpoint(c, art.final_checkpoint);
    } else {
      save_checkpoint(c, art.out_dir / ("step_" + std::to_string(s.step) + ".ckpt"));
    }
  };
  post_train(state, env, config, hooks);
  if (state.step != config.driver.total_steps) save_checkpoint(checkpoint_of(state, hash), art.final_checkpoint);
  return art;
}

}  // namespace coevo
