#include "ppsvae/training.hpp"

#include <zlib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace ppsvae {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(tau_end > 0.0) || tau_start < tau_end) throw UsageError("need tau_start >= tau_end > 0");
  if (epochs < 1) throw UsageError("epochs must be >= 1");
  if (max_steps < 0) throw UsageError("max_steps must be >= 0");
  if (M < 1) throw UsageError("M must be >= 1");
  if (latent_dim < 1) throw UsageError("latent_dim must be >= 1");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (log_every < 1) throw UsageError("log_every must be >= 1");
  if (checkpoint_every < 0) throw UsageError("checkpoint_every must be >= 0");
  if (weight_decay < 0.0) throw UsageError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw UsageError("adam_eps must be > 0");
  if (!(grad_clip_norm >= 0.0)) throw UsageError("grad_clip_norm must be >= 0");
  if (net_width < 1 || blocks < 0 || kernel_size < 1 || kernel_size % 2 == 0 || expansion < 1)
    throw UsageError("invalid network shape");
}

ModelConfig TrainConfig::model_config(int channels, int height, int width) const {
  ModelConfig c;
  c.channels = channels;
  c.height = height;
  c.width = width;
  c.latent_dim = latent_dim;
  c.net_width = net_width;
  c.blocks = blocks;
  c.kernel_size = kernel_size;
  c.expansion = expansion;
  c.normalize = normalize;
  c.padding = padding;
  return c;
}

SamplingOptions TrainConfig::sampling(double tau) const {
  SamplingOptions o;
  o.M = M;
  o.temperature = tau;
  o.posterior = variant;
  return o;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !in.eof()) throw UsageError("config key '" + key + "': cannot parse '" + value + "'");
  return out;
}

bool parse_flag(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on") return true;
  if (value == "false" || value == "0" || value == "off") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace

TrainConfig parse_train_config(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto num_i = [&] { return parse_number<int>(key, value); };
    auto num_d = [&] { return parse_number<double>(key, value); };
    if (key == "variant") {
      try {
        c.variant = parse_posterior(value);
      } catch (const UsageError&) {
        throw UsageError("config key 'variant': expected independent|autoregressive, got '" + value + "'");
      }
    } else if (key == "M") c.M = num_i();
    else if (key == "latent_dim" || key == "D") c.latent_dim = num_i();
    else if (key == "learning_rate") c.learning_rate = num_d();
    else if (key == "amsgrad") c.amsgrad = parse_flag(key, value);
    else if (key == "weight_decay") c.weight_decay = num_d();
    else if (key == "beta1") c.beta1 = num_d();
    else if (key == "beta2") c.beta2 = num_d();
    else if (key == "adam_eps") c.adam_eps = num_d();
    else if (key == "grad_clip_norm") c.grad_clip_norm = num_d();
    else if (key == "epochs") c.epochs = num_i();
    else if (key == "max_steps") c.max_steps = num_i();
    else if (key == "batch_size") c.batch_size = num_i();
    else if (key == "tau_start") c.tau_start = num_d();
    else if (key == "tau_end") c.tau_end = num_d();
    else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "dataset") c.dataset = value;
    else if (key == "data_root") c.data_root = value;
    else if (key == "checkpoint_every") c.checkpoint_every = num_i();
    else if (key == "log_every") c.log_every = num_i();
    else if (key == "synth_n") c.synth_n = num_i();
    else if (key == "synth_height") c.synth_height = num_i();
    else if (key == "synth_width") c.synth_width = num_i();
    else if (key == "synth_classes") c.synth_classes = num_i();
    else if (key == "net_width") c.net_width = num_i();
    else if (key == "blocks") c.blocks = num_i();
    else if (key == "kernel_size") c.kernel_size = num_i();
    else if (key == "expansion") c.expansion = num_i();
    else if (key == "normalize") c.normalize = parse_flag(key, value);
    else if (key == "padding") {
      if (value == "zero") c.padding = Padding::Zero;
      else if (value == "circular") c.padding = Padding::Circular;
      else throw UsageError("config key 'padding': expected zero|circular, got '" + value + "'");
    } else {
      throw UsageError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

std::string TrainConfig::to_text() const {
  std::ostringstream o;
  o << "variant = " << to_string(variant) << "\n"
    << "M = " << M << "\n"
    << "latent_dim = " << latent_dim << "\n"
    << "learning_rate = " << fmt(learning_rate) << "\n"
    << "amsgrad = " << (amsgrad ? "true" : "false") << "\n"
    << "weight_decay = " << fmt(weight_decay) << "\n"
    << "beta1 = " << fmt(beta1) << "\n"
    << "beta2 = " << fmt(beta2) << "\n"
    << "adam_eps = " << fmt(adam_eps) << "\n"
    << "grad_clip_norm = " << fmt(grad_clip_norm) << "\n"
    << "epochs = " << epochs << "\n"
    << "max_steps = " << max_steps << "\n"
    << "batch_size = " << batch_size << "\n"
    << "tau_start = " << fmt(tau_start) << "\n"
    << "tau_end = " << fmt(tau_end) << "\n"
    << "seed = " << seed << "\n"
    << "dataset = " << dataset << "\n";
  if (!data_root.empty()) o << "data_root = " << data_root << "\n";
  o << "checkpoint_every = " << checkpoint_every << "\n"
    << "log_every = " << log_every << "\n"
    << "synth_n = " << synth_n << "\n"
    << "synth_height = " << synth_height << "\n"
    << "synth_width = " << synth_width << "\n"
    << "synth_classes = " << synth_classes << "\n"
    << "net_width = " << net_width << "\n"
    << "blocks = " << blocks << "\n"
    << "kernel_size = " << kernel_size << "\n"
    << "expansion = " << expansion << "\n"
    << "normalize = " << (normalize ? "true" : "false") << "\n"
    << "padding = " << (padding == Padding::Zero ? "zero" : "circular") << "\n";
  return o.str();
}

double tau_at(const TrainConfig& config, std::int64_t step, std::int64_t total) {
  if (total <= 1) return config.tau_start;
  const double frac = std::clamp(static_cast<double>(step) / static_cast<double>(total - 1), 0.0, 1.0);
  return config.tau_start + (config.tau_end - config.tau_start) * frac;
}

Dataset training_dataset(const TrainConfig& config) { return dataset_split(config, "train"); }

Dataset dataset_split(const TrainConfig& config, const std::string& split, int n) {
  if (split != "train" && split != "test") throw UsageError("split must be train or test, got '" + split + "'");
  if (config.dataset == "synth_shapes") {
    constexpr std::uint64_t kTestLabel = 0x74657374ULL;
    const bool train = split == "train";
    const int count = n > 0 ? n : (train ? config.synth_n : 1000);
    Dataset ds = synth_shapes(count, config.synth_height, config.synth_width, config.synth_classes,
                              train ? config.seed : derive_seed(config.seed, kTestLabel));
    ds.split = split;
    return ds;
  }
  if (config.data_root.empty()) throw UsageError("dataset '" + config.dataset + "' needs data_root");
  return load_dataset(config.dataset, config.data_root, split, n);
}

// ---------------------------------------------------------------------------
// Optimizer

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay, bool amsgrad)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay), amsgrad_(amsgrad) {}

void AdamW::step(ParamSet& params) {
  const auto& entries = params.entries();
  if (state_.m.empty()) {
    for (const auto& e : entries) {
      state_.m.emplace_back(e.var.shape());
      state_.v.emplace_back(e.var.shape());
      state_.v_max.emplace_back(amsgrad_ ? Tensor(e.var.shape()) : Tensor());
    }
  }
  require(state_.m.size() == entries.size(), "optimizer state does not match the parameter set");
  ++state_.t;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(state_.t));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(state_.t));
  const double step_size = lr_ / bc1, sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    ag::Var var = entries[k].var;
    Tensor& p = var.mutable_value();
    const Tensor& g = var.grad();
    Tensor &m = state_.m[k], &v = state_.v[k], &vm = state_.v_max[k];
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      p[i] *= 1.0 - lr_ * weight_decay_;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double second = v[i];
      if (amsgrad_) {
        vm[i] = std::max(vm[i], v[i]);
        second = vm[i];
      }
      p[i] -= step_size * m[i] / (std::sqrt(second) / sqrt_bc2 + eps_);
    }
  }
}

double grad_norm(const ParamSet& params) {
  double acc = 0.0;
  for (const auto& e : params.entries())
    for (double g : e.var.grad().vec()) acc += g * g;
  return std::sqrt(acc);
}

void scale_grads(ParamSet& params, double factor) {
  for (const auto& e : params.entries()) {
    ag::Var v = e.var;
    for (double& g : v.mutable_grad().span()) g *= factor;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void Checkpoint::capture(const ParamSet& params) {
  arrays.clear();
  for (const auto& e : params.entries()) arrays.emplace_back(e.name, e.var.value());
}

void Checkpoint::restore(ParamSet& params) const {
  const auto& entries = params.entries();
  if (entries.size() != arrays.size())
    throw IncompatibleCheckpoint("checkpoint holds " + std::to_string(arrays.size()) + " arrays, model expects " +
                                 std::to_string(entries.size()));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (entries[k].name != arrays[k].first || entries[k].var.shape() != arrays[k].second.shape())
      throw IncompatibleCheckpoint("checkpoint array '" + arrays[k].first + "' does not match model array '" +
                                   entries[k].name + "'");
    ag::Var var = entries[k].var;
    var.mutable_value() = arrays[k].second;
  }
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out.insert(out.end(), c, c + n);
  }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void i64(std::int64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) u32(static_cast<std::uint32_t>(d));
    bytes(t.data(), t.numel() * sizeof(double));
  }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::size_t end, std::string origin)
      : buf(b), limit(end), origin(std::move(origin)) {}
  void bytes(void* p, std::size_t n) {
    if (pos + n > limit) throw IntegrityError(origin + ": truncated payload");
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::int64_t i64() {
    std::int64_t v = 0;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (pos + n > limit) throw IntegrityError(origin + ": truncated string");
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  Tensor tensor() {
    const std::uint32_t rank = u32();
    if (rank > 8) throw IntegrityError(origin + ": implausible array rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(u32());
    const std::size_t n = shape_numel(shape);
    if (pos + n * sizeof(double) > limit) throw IntegrityError(origin + ": truncated array");
    std::vector<double> data(n);
    bytes(data.data(), n * sizeof(double));
    return Tensor(shape, std::move(data));
  }
  std::size_t pos = 0;

 private:
  const std::vector<unsigned char>& buf;
  std::size_t limit;
  std::string origin;
};

std::uint32_t crc_of(const unsigned char* p, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), p, static_cast<uInt>(n)));
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(Checkpoint::kMagic, 8);
  w.u32(Checkpoint::kVersion);
  w.str(ckpt.kind);
  w.str(ckpt.config_text);
  w.i64(ckpt.step);
  w.u32(static_cast<std::uint32_t>(ckpt.channels));
  w.u32(static_cast<std::uint32_t>(ckpt.height));
  w.u32(static_cast<std::uint32_t>(ckpt.width));
  w.u32(static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& [name, t] : ckpt.arrays) {
    w.str(name);
    w.tensor(t);
  }
  const AdamState& o = ckpt.optimizer;
  w.i64(o.t);
  w.u32(static_cast<std::uint32_t>(o.m.size()));
  for (std::size_t k = 0; k < o.m.size(); ++k) {
    w.tensor(o.m[k]);
    w.tensor(o.v[k]);
    w.tensor(o.v_max[k]);
  }
  w.u32(crc_of(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes, const std::string& origin) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), Checkpoint::kMagic, 8) != 0)
    throw IntegrityError(origin + ": not a checkpoint (bad magic)");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, sizeof version);
  if (version != Checkpoint::kVersion)
    throw IncompatibleCheckpoint(origin + ": format version " + std::to_string(version) + ", this build reads " +
                                 std::to_string(Checkpoint::kVersion));
  const std::size_t body = bytes.size() - 4;
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != crc_of(bytes.data(), body)) throw IntegrityError(origin + ": checksum mismatch (truncated or corrupt)");

  Reader r(bytes, body, origin);
  r.pos = 12;
  Checkpoint c;
  c.kind = r.str();
  c.config_text = r.str();
  c.step = r.i64();
  c.channels = static_cast<int>(r.u32());
  c.height = static_cast<int>(r.u32());
  c.width = static_cast<int>(r.u32());
  const std::uint32_t n = r.u32();
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.str();
    c.arrays.emplace_back(std::move(name), r.tensor());
  }
  c.optimizer.t = r.i64();
  const std::uint32_t slots = r.u32();
  for (std::uint32_t k = 0; k < slots; ++k) {
    c.optimizer.m.push_back(r.tensor());
    c.optimizer.v.push_back(r.tensor());
    c.optimizer.v_max.push_back(r.tensor());
  }
  if (r.pos != body) throw IntegrityError(origin + ": trailing bytes after payload");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, path.string());
}

namespace {
constexpr std::uint64_t kInitLabel = 0x696e6974ULL;
constexpr std::uint64_t kNoiseLabel = 0x6e6f697365ULL;
}  // namespace

ModelParams model_from_checkpoint(const Checkpoint& ckpt, TrainConfig* config_out) {
  if (ckpt.kind != "ppsvae") throw IncompatibleCheckpoint("checkpoint holds a '" + ckpt.kind + "' model");
  const TrainConfig config = parse_train_config(ckpt.config_text);
  ModelParams params(config.model_config(ckpt.channels, ckpt.height, ckpt.width), derive_seed(config.seed, kInitLabel));
  ckpt.restore(params.params());
  if (config_out) *config_out = config;
  return params;
}

// ---------------------------------------------------------------------------
// Training loop

std::string metrics_json(const MetricsRow& row) {
  nlohmann::json j;
  j["step"] = row.step;
  j["elbo"] = row.mean.elbo;
  j["target_ll"] = row.mean.target_ll;
  j["kl_a"] = row.mean.kl_a;
  j["context_ll"] = row.mean.context_ll;
  j["location_ratio"] = row.mean.location_ratio;
  j["grad_norm"] = row.grad_norm;
  j["tau"] = row.tau;
  j["seconds"] = row.seconds;
  return j.dump();
}

std::int64_t total_steps(const TrainConfig& config, int dataset_size) {
  if (config.max_steps > 0) return config.max_steps;
  const std::int64_t per_epoch = (dataset_size + config.batch_size - 1) / config.batch_size;
  return per_epoch * config.epochs;
}

namespace {

double batch_mean(const ag::Var& v) {
  double s = 0.0;
  for (double x : v.value().vec()) s += x;
  return s / static_cast<double>(v.value().numel());
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& ds, const TrainOptions& options,
                  const Checkpoint* resume) {
  config.validate();
  ds.check_invariants();
  const auto start = std::chrono::steady_clock::now();
  const std::int64_t total = total_steps(config, ds.size());
  const auto batches_per_epoch = static_cast<std::int64_t>((ds.size() + config.batch_size - 1) / config.batch_size);

  ModelParams params(config.model_config(ds.channels(), ds.height(), ds.width()), derive_seed(config.seed, kInitLabel));
  AdamW opt(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay, config.amsgrad);
  std::int64_t step = 0;
  if (resume) {
    if (resume->kind != "ppsvae") throw IncompatibleCheckpoint("cannot resume from a '" + resume->kind + "' checkpoint");
    resume->restore(params.params());
    opt.set_state(resume->optimizer);
    step = resume->step;
  }

  auto snapshot = [&](std::int64_t at) {
    Checkpoint c;
    c.config_text = config.to_text();
    c.step = at;
    c.channels = ds.channels();
    c.height = ds.height();
    c.width = ds.width();
    c.capture(params.params());
    c.optimizer = opt.state();
    return c;
  };

  std::ofstream metrics;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    metrics.open(options.out_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw UsageError("cannot write metrics under " + options.out_dir.string());
  }

  TrainResult result;
  result.total_steps = total;
  const std::int64_t stop = options.stop_after >= 0 ? std::min(total, options.stop_after) : total;
  std::int64_t cached_epoch = -1;
  std::vector<std::vector<int>> epoch_batches;
  const std::uint64_t noise_root = derive_seed(config.seed, kNoiseLabel);

  for (; step < stop; ++step) {
    const std::int64_t epoch = step / batches_per_epoch;
    if (epoch != cached_epoch) {
      epoch_batches = batch_iter(ds.size(), config.batch_size, config.seed, static_cast<std::uint64_t>(epoch), true);
      cached_epoch = epoch;
    }
    const auto& indices = epoch_batches[static_cast<std::size_t>(step % batches_per_epoch)];
    const double tau = tau_at(config, step, total);
    NoiseStream noise(derive_seed(noise_root, static_cast<std::uint64_t>(step)));

    params.params().zero_grad();
    const ElboBatch b = elbo_terms(params, ds.gather(indices), config.sampling(tau), noise);
    MetricsRow row;
    row.step = step + 1;
    row.tau = tau;
    row.mean.target_ll = batch_mean(b.target_ll);
    row.mean.kl_a = batch_mean(b.kl_a);
    row.mean.context_ll = batch_mean(b.context_ll);
    row.mean.location_ratio = batch_mean(b.location_ratio);
    row.mean.elbo = batch_mean(b.elbo);

    auto fail = [&](const std::string& term) {
      if (!options.out_dir.empty()) save_checkpoint(snapshot(step), options.out_dir / "last_good.ckpt");
      throw NumericFailure("non-finite " + term + " at step " + std::to_string(step + 1));
    };
    const std::pair<const char*, double> terms[] = {{"target_ll", row.mean.target_ll},
                                                    {"kl_a", row.mean.kl_a},
                                                    {"context_ll", row.mean.context_ll},
                                                    {"location_ratio", row.mean.location_ratio}};
    for (const auto& [name, value] : terms)
      if (!std::isfinite(value)) fail(name);

    ag::backward(ag::scale(ag::mean_all(b.elbo), -1.0));
    row.grad_norm = grad_norm(params.params());
    if (!std::isfinite(row.grad_norm)) fail("grad_norm");
    if (config.grad_clip_norm > 0.0 && row.grad_norm > config.grad_clip_norm)
      scale_grads(params.params(), config.grad_clip_norm / row.grad_norm);
    opt.step(params.params());
    if (!params.params().all_finite()) fail("parameter update");

    if ((step + 1) % config.log_every == 0 || step + 1 == total) {
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.metrics.push_back(row);
      if (metrics.is_open()) metrics << metrics_json(row) << "\n" << std::flush;
      if (options.on_log) options.on_log(row);
    }
    if (!options.out_dir.empty() && config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0)
      save_checkpoint(snapshot(step + 1), options.out_dir / "latest.ckpt");
  }
  params.params().zero_grad();
  result.final = snapshot(step);
  if (!options.out_dir.empty()) save_checkpoint(result.final, options.out_dir / "final.ckpt");
  return result;
}

std::vector<double> window_means(const std::vector<double>& values, std::size_t window) {
  require(window >= 1, "window must be >= 1");
  std::vector<double> out;
  for (std::size_t i = 0; i + window <= values.size(); i += window) {
    double s = 0.0;
    for (std::size_t j = i; j < i + window; ++j) s += values[j];
    out.push_back(s / static_cast<double>(window));
  }
  return out;
}

}  // namespace ppsvae
