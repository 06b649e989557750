#include "ppsvae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

namespace ppsvae {

// ---------------------------------------------------------------------------
// PPS-RAND and imputation

ContextSet random_context(const Tensor& y, int M, Rng& rng) {
  require(y.rank() == 3, "random_context expects a C x H x W image");
  const int h = y.dim(1), w = y.dim(2), k = h * w;
  require(M >= 1 && M < k, "M must satisfy 1 <= M < H*W");
  std::vector<int> pool(static_cast<std::size_t>(k));
  std::iota(pool.begin(), pool.end(), 0);
  ContextSet ctx;
  ctx.M = M;
  ctx.mask = Tensor({h, w});
  for (int m = 0; m < M; ++m) {
    std::uniform_int_distribution<int> pick(m, k - 1);
    std::swap(pool[static_cast<std::size_t>(m)], pool[static_cast<std::size_t>(pick(rng))]);
    const int loc = pool[static_cast<std::size_t>(m)];
    ctx.locations.push_back(loc);
    SimplexVector oh{std::vector<double>(static_cast<std::size_t>(k), 0.0)};
    oh.probs[static_cast<std::size_t>(loc)] = 1.0;
    ctx.onehots.push_back(std::move(oh));
    ctx.mask[static_cast<std::size_t>(loc)] = 1.0;
  }
  ctx.values = lookup_values(y, ctx.mask);
  return ctx;
}

namespace {

template <typename F>
double mean_over_targets(const ModelParams& params, const ContextSet& ctx, const Tensor& y, F&& per_element) {
  require(y.rank() == 3 && ctx.values.same_shape(y), "imputation: image and context shapes differ");
  const CnpArrays p = convcnp_predict(params, ctx.mask, ctx.values);
  const std::size_t hw = ctx.mask.numel();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    if (ctx.mask[i % hw] != 0.0) continue;
    total += per_element(y[i], p.mean[i], p.scale[i]);
    ++count;
  }
  require(count > 0, "imputation over zero target pixels");
  return total / static_cast<double>(count);
}

}  // namespace

double imputation_log_likelihood(const ModelParams& params, const ContextSet& ctx, const Tensor& y) {
  return mean_over_targets(params, ctx, y, [](double v, double mu, double s) {
    const double z = (v - mu) / s;
    return -0.5 * z * z - std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
  });
}

double imputation_squared_error(const ModelParams& params, const ContextSet& ctx, const Tensor& y) {
  return mean_over_targets(params, ctx, y, [](double v, double mu, double) { return (v - mu) * (v - mu); });
}

// ---------------------------------------------------------------------------
// Probes

const char* to_string(FeatureKind k) {
  switch (k) {
    case FeatureKind::YmSample: return "yM-sample";
    case FeatureKind::YmMode: return "yM-mode";
    case FeatureKind::AbstractA: return "abstract-a";
    case FeatureKind::Image: return "image";
    case FeatureKind::RandomYm: return "random-yM";
    case FeatureKind::VaeZ: return "vae-z";
  }
  return "?";
}

FeatureKind parse_feature_kind(const std::string& s) {
  for (FeatureKind k : {FeatureKind::YmSample, FeatureKind::YmMode, FeatureKind::AbstractA, FeatureKind::Image,
                        FeatureKind::RandomYm, FeatureKind::VaeZ})
    if (s == to_string(k)) return k;
  throw UsageError("unknown feature kind '" + s + "' (expected yM-sample|yM-mode|abstract-a|image|random-yM|vae-z)");
}

bool is_spatial(FeatureKind k) { return k != FeatureKind::AbstractA && k != FeatureKind::VaeZ; }

std::string ProbeReport::to_json() const {
  nlohmann::json j;
  j["feature_kind"] = feature_kind;
  j["f1_macro_mean"] = f1_macro_mean;
  j["f1_macro_std"] = f1_macro_std;
  j["seeds"] = seeds;
  j["f1_per_seed"] = f1_per_seed;
  j["train_size"] = train_size;
  j["test_size"] = test_size;
  return j.dump(2);
}

double f1_macro(const std::vector<int>& predicted, const std::vector<int>& truth, int num_classes) {
  require(predicted.size() == truth.size() && !truth.empty(), "f1_macro: size mismatch");
  double total = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += predicted[i] == c && truth[i] == c;
      fp += predicted[i] == c && truth[i] != c;
      fn += predicted[i] != c && truth[i] == c;
    }
    total += tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  }
  return total / num_classes;
}

namespace {

class Classifier {
 public:
  Classifier(const Shape& feature_shape, int classes, const ProbeOptions& o, Rng& rng)
      : spatial_(feature_shape.size() == 4) {
    if (spatial_) {
      const int c = feature_shape[1], w = o.conv_width;
      pool_ = feature_shape[2] % 2 == 0 && feature_shape[3] % 2 == 0;
      c1_ = Conv2d(params_, "c1", {c, w, 3, 1, Padding::Zero}, rng);
      c2_ = Conv2d(params_, "c2", {w, 2 * w, 3, 1, Padding::Zero}, rng);
      c3_ = Conv2d(params_, "c3", {2 * w, 2 * w, 3, 1, Padding::Zero}, rng);
      out_ = Linear(params_, "out", 2 * w, classes, rng);
    } else {
      const int f = feature_shape[1];
      l1_ = Linear(params_, "l1", f, o.hidden, rng);
      l2_ = Linear(params_, "l2", o.hidden, o.hidden, rng);
      out_ = Linear(params_, "out", o.hidden, classes, rng);
    }
  }

  ag::Var logits(const ag::Var& x) const {
    constexpr double kSlope = 0.01;
    if (!spatial_) {
      const ag::Var h = ag::leaky_relu(l2_(ag::leaky_relu(l1_(x), kSlope)), kSlope);
      return out_(h);
    }
    ag::Var h = ag::leaky_relu(c1_(x), kSlope);
    if (pool_) h = ag::avg_pool2(h);
    h = ag::leaky_relu(c2_(h), kSlope);
    h = ag::leaky_relu(c3_(h), kSlope);
    return out_(ag::mean_spatial(h));
  }

  ParamSet& params() { return params_; }

 private:
  bool spatial_, pool_ = false;
  ParamSet params_;
  Conv2d c1_, c2_, c3_;
  Linear l1_, l2_, out_;
};

Tensor gather_rows(const Tensor& t, const std::vector<int>& idx) {
  const std::size_t per = t.numel() / static_cast<std::size_t>(t.dim(0));
  Shape s = t.shape();
  s[0] = static_cast<int>(idx.size());
  Tensor out(s);
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(t.data() + static_cast<std::size_t>(idx[k]) * per, per, out.data() + k * per);
  return out;
}

// Random shift (zero fill) and horizontal flip, per example.
void augment(Tensor& x, int pad, Rng& rng) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::uniform_int_distribution<int> shift(-pad, pad);
  std::bernoulli_distribution flip(0.5);
  Tensor out(x.shape());
  for (int i = 0; i < n; ++i) {
    const int dy = shift(rng), dx = shift(rng);
    const bool f = flip(rng);
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) {
          const int sy = yy + dy, sx0 = xx + dx;
          if (sy < 0 || sy >= h || sx0 < 0 || sx0 >= w) continue;
          const int sx = f ? w - 1 - sx0 : sx0;
          out.at(i, ch, yy, xx) = x.at(i, ch, sy, sx);
        }
  }
  x = std::move(out);
}

std::vector<int> predict(Classifier& clf, const Tensor& x) {
  ag::NoGradGuard no_grad;
  std::vector<int> out;
  const int n = x.dim(0);
  for (int start = 0; start < n; start += 256) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + 256); ++i) idx.push_back(i);
    const Tensor logits = clf.logits(ag::constant(gather_rows(x, idx))).value();
    const int k = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const double* row = logits.data() + r * k;
      out.push_back(static_cast<int>(std::max_element(row, row + k) - row));
    }
  }
  return out;
}

// Per-feature standardization statistics from the training rows (vector features).
void standardize(Tensor& train, Tensor& test) {
  const int n = train.dim(0), f = train.dim(1);
  for (int j = 0; j < f; ++j) {
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) mean += train[static_cast<std::size_t>(i) * f + j];
    mean /= n;
    for (int i = 0; i < n; ++i) {
      const double d = train[static_cast<std::size_t>(i) * f + j] - mean;
      sq += d * d;
    }
    const double sd = std::sqrt(sq / n) + 1e-8;
    for (int i = 0; i < n; ++i) {
      double& v = train[static_cast<std::size_t>(i) * f + j];
      v = (v - mean) / sd;
    }
    for (int i = 0; i < test.dim(0); ++i) {
      double& v = test[static_cast<std::size_t>(i) * f + j];
      v = (v - mean) / sd;
    }
  }
}

}  // namespace

ProbeReport probe_train_eval(const std::string& feature_kind, const Tensor& train_features,
                             const std::vector<int>& train_labels, const Tensor& test_features,
                             const std::vector<int>& test_labels, const std::vector<std::uint64_t>& seeds,
                             const ProbeOptions& options) {
  require(train_features.rank() == 2 || train_features.rank() == 4, "probe features must be N x F or N x C x H x W");
  require(train_features.dim(0) == static_cast<int>(train_labels.size()) &&
              test_features.dim(0) == static_cast<int>(test_labels.size()),
          "probe: feature and label counts differ");
  require(!seeds.empty(), "probe needs at least one seed");
  int classes = 0;
  for (int l : train_labels) {
    require(l >= 0, "probe labels must be nonnegative");
    classes = std::max(classes, l + 1);
  }
  for (int l : test_labels) classes = std::max(classes, l + 1);
  const bool multi = std::any_of(train_labels.begin(), train_labels.end(),
                                 [&](int l) { return l != train_labels.front(); });
  if (!multi) throw UsageError("probe needs at least two classes in the training labels");

  Tensor train_x = train_features, test_x = test_features;
  const bool spatial = train_x.rank() == 4;
  if (!spatial) standardize(train_x, test_x);

  ProbeReport report;
  report.feature_kind = feature_kind;
  report.seeds = seeds;
  report.train_size = train_x.dim(0);
  report.test_size = test_x.dim(0);

  for (std::uint64_t seed : seeds) {
    Rng rng(seed);
    Classifier clf(train_x.shape(), classes, options, rng);
    std::vector<int> fit, val;
    split_indices(train_x.dim(0), options.validation_fraction, seed, fit, val);
    const Tensor val_x = gather_rows(train_x, val);
    std::vector<int> val_y;
    for (int i : val) val_y.push_back(train_labels[static_cast<std::size_t>(i)]);

    AdamW opt(options.learning_rate, 0.9, 0.999, 1e-8, 1e-4, false);
    std::vector<Tensor> best;
    double best_f1 = -1.0;
    int since_best = 0;
    const int batch = std::min<int>(options.batch_size, static_cast<int>(fit.size()));
    for (int epoch = 0; epoch < options.max_epochs && since_best < options.patience; ++epoch) {
      for (const auto& b : batch_iter(static_cast<int>(fit.size()), batch, seed, static_cast<std::uint64_t>(epoch), true)) {
        std::vector<int> idx;
        for (int j : b) idx.push_back(fit[static_cast<std::size_t>(j)]);
        Tensor x = gather_rows(train_x, idx);
        if (spatial && options.augment) augment(x, options.crop_pad, rng);
        Tensor onehot({static_cast<int>(idx.size()), classes});
        for (std::size_t r = 0; r < idx.size(); ++r)
          onehot[r * classes + static_cast<std::size_t>(train_labels[static_cast<std::size_t>(idx[r])])] = 1.0;
        clf.params().zero_grad();
        const ag::Var ll = ag::rows_dot(ag::constant(onehot), ag::log_softmax_rows(clf.logits(ag::constant(x))));
        ag::backward(ag::scale(ag::mean_all(ll), -1.0));
        opt.step(clf.params());
      }
      const double f1 = f1_macro(predict(clf, val_x), val_y, classes);
      if (f1 > best_f1) {
        best_f1 = f1;
        since_best = 0;
        best.clear();
        for (const auto& e : clf.params().entries()) best.push_back(e.var.value());
      } else {
        ++since_best;
      }
    }
    for (std::size_t k = 0; k < best.size(); ++k) {
      ag::Var v = clf.params().entries()[k].var;
      v.mutable_value() = best[k];
    }
    const double f1 = f1_macro(predict(clf, test_x), test_labels, classes);
    require(f1 >= 0.0 && f1 <= 1.0, "F1 outside [0, 1]");
    report.f1_per_seed.push_back(f1);
  }
  const double n = static_cast<double>(report.f1_per_seed.size());
  report.f1_macro_mean = std::accumulate(report.f1_per_seed.begin(), report.f1_per_seed.end(), 0.0) / n;
  double sq = 0.0;
  for (double f : report.f1_per_seed) sq += (f - report.f1_macro_mean) * (f - report.f1_macro_mean);
  report.f1_macro_std = report.f1_per_seed.size() > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  return report;
}

Tensor pps_features(const ModelParams& params, const Dataset& ds, FeatureKind kind, int M, double tau,
                    Posterior variant, std::uint64_t seed) {
  require(kind != FeatureKind::VaeZ, "vae-z features come from the VAE baseline");
  ag::NoGradGuard no_grad;
  const int n = ds.size(), c = ds.channels(), h = ds.height(), w = ds.width();
  if (kind == FeatureKind::Image) return ds.images;

  SamplingOptions o;
  o.M = M;
  o.temperature = tau;
  o.posterior = variant;
  o.mode = kind == FeatureKind::YmMode;
  Tensor out = kind == FeatureKind::AbstractA ? Tensor({n, params.config().latent_dim}) : Tensor({n, c + 1, h, w});
  const std::size_t per = out.numel() / static_cast<std::size_t>(n);
  Rng rng(seed);
  constexpr int kChunk = 64;
  for (int start = 0; start < n; start += kChunk) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + kChunk); ++i) idx.push_back(i);
    Tensor feats;
    if (kind == FeatureKind::RandomYm) {
      std::vector<ContextSet> ctxs;
      for (int i : idx) ctxs.push_back(random_context(ds.image(i), M, rng));
      const ContextBatch b = batch_contexts(ctxs);
      feats = ag::concat_channels({b.values, b.mask}).value();
    } else {
      NoiseStream noise(derive_seed(seed, static_cast<std::uint64_t>(start)));
      const ContextBatch b = infer_context(params, ag::constant(ds.gather(idx)), o, noise);
      if (kind == FeatureKind::AbstractA)
        feats = abstract_posterior(params, b.mask, b.values).mean.value();
      else
        feats = ag::concat_channels({b.values, b.mask}).value();
    }
    std::copy_n(feats.data(), feats.numel(), out.data() + static_cast<std::size_t>(start) * per);
  }
  return out;
}

// ---------------------------------------------------------------------------
// VAE baseline

VaeParams::VaeParams(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config.validate();
  Rng rng(seed);
  const int c = config.channels, w = config.net_width, d = config.latent_dim;
  const bool pool = config.height % 2 == 0 && config.width % 2 == 0;
  const int flat = w * (pool ? config.pixels() / 4 : config.pixels());
  ConvBlockConfig block;
  block.channels = w;
  block.kernel_size = config.kernel_size;
  block.expansion = config.expansion;
  block.negative_slope = config.negative_slope;
  block.normalize = config.normalize;
  block.padding = config.padding;
  enc_stem = Conv2d(params_, "vae.enc.stem", {c, w, 3, 1, config.padding}, rng);
  enc_block = ConvBlock(params_, "vae.enc.block", block, rng);
  enc_mid = Conv2d(params_, "vae.enc.mid", {w, w, 3, 1, config.padding}, rng);
  enc_out = Linear(params_, "vae.enc.out", flat, 2 * d, rng);
  dec_in = Linear(params_, "vae.dec.in", d, w * config.pixels(), rng);
  dec_block = ConvBlock(params_, "vae.dec.block", block, rng);
  dec_head = Conv2d(params_, "vae.dec.head", {w, 2 * c, 1, 1, config.padding}, rng);
}

AbstractBatch vae_encode(const VaeParams& vae, const ag::Var& images) {
  const ModelConfig& c = vae.config();
  const int n = images.dim(0), d = c.latent_dim;
  ag::Var h = ag::leaky_relu(vae.enc_stem(images), c.negative_slope);
  h = vae.enc_block(h);
  h = ag::leaky_relu(vae.enc_mid(h), c.negative_slope);
  if (c.height % 2 == 0 && c.width % 2 == 0) h = ag::avg_pool2(h);
  const ag::Var out = ag::reshape(vae.enc_out(ag::reshape(h, {n, static_cast<int>(h.value().numel()) / n})),
                                  {n, 2 * d, 1, 1});
  AbstractBatch a;
  a.mean = ag::reshape(ag::slice_channels(out, 0, d), {n, d});
  a.scale = ag::positive_scale(ag::reshape(ag::slice_channels(out, d, d), {n, d}), kScaleFloor);
  return a;
}

GaussianField vae_decode(const VaeParams& vae, const ag::Var& z) {
  const ModelConfig& c = vae.config();
  const int n = z.dim(0);
  ag::Var h = ag::reshape(vae.dec_in(z), {n, c.net_width, c.height, c.width});
  h = vae.dec_block(ag::leaky_relu(h, c.negative_slope));
  const ag::Var out = vae.dec_head(h);
  GaussianField f;
  f.mean = ag::slice_channels(out, 0, c.channels);
  f.scale = ag::positive_scale(ag::slice_channels(out, c.channels, c.channels), kScaleFloor);
  return f;
}

VaeElbo vae_elbo_given_posterior(const VaeParams& vae, const Tensor& images, const ag::Var& mean,
                                 const ag::Var& scale, const Tensor& eps) {
  const ModelConfig& c = vae.config();
  require(images.rank() == 4 && images.dim(1) == c.channels && images.dim(2) == c.height && images.dim(3) == c.width,
          "VAE image shape " + shape_str(images.shape()) + " does not match the model");
  const int n = images.dim(0);
  const ag::Var z = ag::add(mean, ag::mul(scale, ag::constant(eps)));
  const GaussianField field = vae_decode(vae, z);
  VaeElbo out;
  out.mean = mean;
  out.scale = scale;
  out.reconstruction = ag::masked_gaussian_log_prob(ag::constant(images), field.mean, field.scale,
                                                    ag::constant(Tensor({n, 1, c.height, c.width}, 1.0)));
  out.kl = ag::kl_std_normal(mean, scale);
  out.elbo = ag::sub(out.reconstruction, out.kl);
  return out;
}

VaeElbo vae_elbo(const VaeParams& vae, const Tensor& images, NoiseStream& noise) {
  const AbstractBatch q = vae_encode(vae, ag::constant(images));
  return vae_elbo_given_posterior(vae, images, q.mean, q.scale, noise.normal(q.mean.shape()));
}

Tensor vae_generate(const VaeParams& vae, int n, NoiseStream& noise) {
  require(n >= 1, "vae_generate needs n >= 1");
  ag::NoGradGuard no_grad;
  return vae_decode(vae, ag::constant(noise.normal({n, vae.config().latent_dim}))).mean.value();
}

namespace {
constexpr std::uint64_t kVaeInitLabel = 0x7661652d696e6974ULL;
constexpr std::uint64_t kVaeNoiseLabel = 0x7661652d6e6fULL;
}  // namespace

VaeTrainResult vae_train(const TrainConfig& config, const Dataset& ds, const std::filesystem::path& out_dir) {
  config.validate();
  ds.check_invariants();
  VaeParams vae(config.model_config(ds.channels(), ds.height(), ds.width()), derive_seed(config.seed, kVaeInitLabel));
  AdamW opt(config.learning_rate, config.beta1, config.beta2, config.adam_eps, config.weight_decay, config.amsgrad);
  const std::int64_t total = total_steps(config, ds.size());
  const auto per_epoch = static_cast<std::int64_t>((ds.size() + config.batch_size - 1) / config.batch_size);
  const std::uint64_t noise_root = derive_seed(config.seed, kVaeNoiseLabel);
  VaeTrainResult result;
  std::vector<std::vector<int>> batches;
  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    metrics.open(out_dir / "metrics.jsonl", std::ios::trunc);
  }
  for (std::int64_t step = 0; step < total; ++step) {
    if (step % per_epoch == 0)
      batches = batch_iter(ds.size(), config.batch_size, config.seed, static_cast<std::uint64_t>(step / per_epoch), true);
    NoiseStream noise(derive_seed(noise_root, static_cast<std::uint64_t>(step)));
    vae.params().zero_grad();
    const VaeElbo e = vae_elbo(vae, ds.gather(batches[static_cast<std::size_t>(step % per_epoch)]), noise);
    const ag::Var mean_elbo = ag::mean_all(e.elbo);
    const double value = mean_elbo.value()[0];
    if (!std::isfinite(value)) throw NumericFailure("non-finite VAE elbo at step " + std::to_string(step + 1));
    ag::backward(ag::scale(mean_elbo, -1.0));
    if (config.grad_clip_norm > 0.0) {
      const double norm = grad_norm(vae.params());
      if (norm > config.grad_clip_norm) scale_grads(vae.params(), config.grad_clip_norm / norm);
    }
    opt.step(vae.params());
    result.elbo_per_step.push_back(value);
    if (metrics.is_open() && ((step + 1) % config.log_every == 0 || step + 1 == total)) {
      nlohmann::json j;
      j["step"] = step + 1;
      j["elbo"] = value;
      j["reconstruction"] = ag::mean_all(e.reconstruction).value()[0];
      j["kl"] = ag::mean_all(e.kl).value()[0];
      metrics << j.dump() << "\n";
    }
  }
  vae.params().zero_grad();
  Checkpoint& c = result.final;
  c.kind = "vae";
  c.config_text = config.to_text();
  c.step = total;
  c.channels = ds.channels();
  c.height = ds.height();
  c.width = ds.width();
  c.capture(vae.params());
  c.optimizer = opt.state();
  if (!out_dir.empty()) save_checkpoint(c, out_dir / "final.ckpt");
  return result;
}

VaeParams vae_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "vae") throw IncompatibleCheckpoint("checkpoint holds a '" + ckpt.kind + "' model, not a VAE");
  const TrainConfig config = parse_train_config(ckpt.config_text);
  VaeParams vae(config.model_config(ckpt.channels, ckpt.height, ckpt.width), derive_seed(config.seed, kVaeInitLabel));
  ckpt.restore(vae.params());
  return vae;
}

Tensor vae_features(const VaeParams& vae, const Dataset& ds) {
  ag::NoGradGuard no_grad;
  const int n = ds.size(), d = vae.config().latent_dim;
  Tensor out({n, d});
  for (int start = 0; start < n; start += 64) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + 64); ++i) idx.push_back(i);
    const Tensor m = vae_encode(vae, ag::constant(ds.gather(idx))).mean.value();
    std::copy_n(m.data(), m.numel(), out.data() + static_cast<std::size_t>(start) * d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diversity and geometry

double sample_diversity(const std::vector<Tensor>& images) {
  if (images.size() < 2) throw UsageError("sample_diversity needs at least two images");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = i + 1; j < images.size(); ++j) {
      require(images[i].numel() == images[j].numel(), "sample_diversity: image sizes differ");
      double sq = 0.0;
      for (std::size_t k = 0; k < images[i].numel(); ++k) {
        const double d = images[i][k] - images[j][k];
        sq += d * d;
      }
      total += std::sqrt(sq);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

std::vector<std::pair<int, int>> boundary_pixels(const Tensor& shape_mask) {
  require(shape_mask.rank() == 2, "boundary_pixels expects an H x W mask");
  const int h = shape_mask.dim(0), w = shape_mask.dim(1);
  std::vector<std::pair<int, int>> out;
  auto at = [&](int y, int x) { return shape_mask[static_cast<std::size_t>(y) * w + x]; };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = at(y, x);
      const bool edge = (y > 0 && at(y - 1, x) != v) || (y + 1 < h && at(y + 1, x) != v) ||
                        (x > 0 && at(y, x - 1) != v) || (x + 1 < w && at(y, x + 1) != v);
      if (edge) out.emplace_back(y, x);
    }
  return out;
}

double mean_edge_distance(const std::vector<int>& locations, const Tensor& shape_mask) {
  require(!locations.empty(), "mean_edge_distance of no locations");
  const auto edges = boundary_pixels(shape_mask);
  require(!edges.empty(), "shape mask has no boundary");
  const int w = shape_mask.dim(1);
  double total = 0.0;
  for (int loc : locations) {
    const int y = loc / w, x = loc % w;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& [ey, ex] : edges) best = std::min(best, std::hypot(double(y - ey), double(x - ex)));
    total += best;
  }
  return total / static_cast<double>(locations.size());
}

double sign_test_p(int wins, int losses) {
  require(wins >= 0 && losses >= 0, "sign test counts must be nonnegative");
  const int n = wins + losses;
  if (n == 0) return 1.0;
  double p = 0.0;
  for (int k = wins; k <= n; ++k)
    p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0));
  return std::min(1.0, p);
}

}  // namespace ppsvae
