#include "ppsvae/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ppsvae/evaluation.hpp"
#include "ppsvae/io.hpp"

namespace ppsvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

fs::path default_out(const std::string& command) {
  const char* root = std::getenv("PPSVAE_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / command;
}

/// One manifest per output directory, written before any other output and
/// completed with the end timestamp once the command succeeds.
class Manifest {
 public:
  Manifest(std::string command, fs::path out_dir) : out_(std::move(out_dir)) {
    doc_["command"] = std::move(command);
    doc_["start_time"] = utc_now();
    doc_["end_time"] = nullptr;
    doc_["output_dir"] = out_.string();
    doc_["inputs"] = json::object();
  }
  json& doc() { return doc_; }
  void set_checkpoint(const fs::path& ckpt) {
    doc_["inputs"]["checkpoint"] = ckpt.string();
    doc_["checkpoint_sha1"] = git_blob_sha1(ckpt);
  }
  void write() {
    fs::create_directories(out_);
    std::ofstream(out_ / "manifest.json") << doc_.dump(2) << "\n";
  }
  void finish(const std::vector<std::string>& outputs) {
    doc_["outputs"] = outputs;
    doc_["end_time"] = utc_now();
    write();
  }

 private:
  fs::path out_;
  json doc_;
};

void write_json(const fs::path& path, const json& j) { std::ofstream(path) << j.dump(2) << "\n"; }

struct LoadedModel {
  Checkpoint ckpt;
  TrainConfig config;
  ModelParams params;
};

LoadedModel load_model(const fs::path& path) {
  Checkpoint ckpt = load_checkpoint(path);
  TrainConfig config;
  ModelParams params = model_from_checkpoint(ckpt, &config);
  return {std::move(ckpt), std::move(config), std::move(params)};
}

// Evaluation data: the checkpoint's own dataset unless overridden.
Dataset eval_dataset(const TrainConfig& config, const std::string& name, const std::string& root,
                     const std::string& split, int n) {
  TrainConfig c = config;
  if (!name.empty()) c.dataset = name;
  if (!root.empty()) c.data_root = root;
  return dataset_split(c, split, n);
}

std::vector<int> first_n(int n, int available) {
  std::vector<int> idx(static_cast<std::size_t>(std::min(n, available)));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// ---- commands ----

struct DataArgs {
  std::string name, root, split = "test";
};

void add_data_options(CLI::App* sub, DataArgs& d) {
  sub->add_option("--dataset", d.name, "Dataset name (default: the checkpoint's)");
  sub->add_option("--data-root", d.root, "Directory holding the dataset files");
  sub->add_option("--split", d.split, "train or test")->check(CLI::IsMember({"train", "test"}));
}

int cmd_train(const fs::path& config_path, fs::path out, bool vae) {
  const TrainConfig config = load_train_config(config_path);
  if (out.empty()) out = default_out(vae ? "train-vae" : "train");
  Manifest manifest(vae ? "train-vae" : "train", out);
  manifest.doc()["config"] = config.to_text();
  manifest.doc()["seed"] = config.seed;
  manifest.doc()["inputs"]["config"] = config_path.string();
  manifest.write();
  const Dataset ds = training_dataset(config);
  if (vae) {
    const VaeTrainResult r = vae_train(config, ds, out);
    std::cout << "final elbo " << r.elbo_per_step.back() << "\n";
  } else {
    TrainOptions opts;
    opts.out_dir = out;
    opts.on_log = [](const MetricsRow& row) {
      std::cout << "step " << row.step << " elbo " << row.mean.elbo << " tau " << row.tau << "\n";
    };
    train(config, ds, opts);
  }
  manifest.finish({"metrics.jsonl", "final.ckpt"});
  return kExitOk;
}

int cmd_sample(const fs::path& ckpt_path, int n, int M, double tau, std::uint64_t seed, fs::path out) {
  LoadedModel m = load_model(ckpt_path);
  if (out.empty()) out = default_out("sample");
  Manifest manifest("sample", out);
  manifest.set_checkpoint(ckpt_path);
  GenerationOptions g;
  g.M = M > 0 ? M : m.config.M;
  g.temperature = tau > 0.0 ? tau : m.config.tau_end;
  manifest.doc()["config"] = {{"n", n}, {"M", g.M}, {"tau", g.temperature}, {"checkpoint_config", m.ckpt.config_text}};
  manifest.doc()["seed"] = seed;
  manifest.write();

  NoiseStream noise(seed);
  const auto traces = generate_unconditional(m.params, n, g, noise);
  const ModelConfig& c = m.params.config();
  constexpr int kScale = 8, kPad = 4;
  const int tw = c.width * kScale, th = c.height * kScale;
  std::vector<std::string> outputs;
  std::vector<Tensor> masks, ctx, tgt, img;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const GenerationTrace& t = traces[i];
    t.check_invariants();
    Rgb8Image canvas(4 * tw + 5 * kPad, th + 2 * kPad);
    blit_mask(canvas, t.mask, kPad, kPad, kScale);
    blit_image(canvas, t.context_values, 2 * kPad + tw, kPad, kScale);
    blit_image(canvas, t.target_values, 3 * kPad + 2 * tw, kPad, kScale);
    blit_image(canvas, t.image, 4 * kPad + 3 * tw, kPad, kScale);
    char name[32];
    std::snprintf(name, sizeof name, "trace_%03zu.png", i);
    write_png(canvas, out / name);
    outputs.emplace_back(name);
    masks.push_back(t.mask.reshaped({1, c.height, c.width}));
    ctx.push_back(t.context_values.reshaped({1, c.channels, c.height, c.width}));
    tgt.push_back(t.target_values.reshaped({1, c.channels, c.height, c.width}));
    img.push_back(t.image.reshaped({1, c.channels, c.height, c.width}));
  }
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  const int rows = (n + cols - 1) / cols;
  Rgb8Image grid(cols * tw + (cols + 1) * kPad, rows * th + (rows + 1) * kPad);
  for (int i = 0; i < n; ++i)
    blit_image(grid, traces[static_cast<std::size_t>(i)].image, kPad + (i % cols) * (tw + kPad),
               kPad + (i / cols) * (th + kPad), kScale);
  write_png(grid, out / "grid.png");
  write_npy(stack_batch(masks), out / "masks.npy");
  write_npy(stack_batch(ctx), out / "context_values.npy");
  write_npy(stack_batch(tgt), out / "target_values.npy");
  write_npy(stack_batch(img), out / "images.npy");
  json lat = json::array();
  for (const auto& t : traces) lat.push_back({{"a", t.a}, {"locations", t.locations}});
  write_json(out / "latents.json", lat);
  for (const char* f : {"grid.png", "masks.npy", "context_values.npy", "target_values.npy", "images.npy", "latents.json"})
    outputs.emplace_back(f);
  manifest.finish(outputs);
  std::cout << "wrote " << n << " traces to " << out.string() << "\n";
  return kExitOk;
}

int cmd_reconstruct(const fs::path& ckpt_path, const DataArgs& data, int n, std::uint64_t seed, fs::path out) {
  LoadedModel m = load_model(ckpt_path);
  if (out.empty()) out = default_out("reconstruct");
  Manifest manifest("reconstruct", out);
  manifest.set_checkpoint(ckpt_path);
  manifest.doc()["config"] = {{"n", n}, {"dataset", data.name.empty() ? m.config.dataset : data.name},
                              {"split", data.split}, {"checkpoint_config", m.ckpt.config_text}};
  manifest.doc()["seed"] = seed;
  manifest.write();

  const Dataset ds = eval_dataset(m.config, data.name, data.root, data.split, 0);
  const auto idx = first_n(n, ds.size());
  const int count = static_cast<int>(idx.size());
  NoiseStream noise(seed);
  SamplingOptions o = m.config.sampling(m.config.tau_end);
  const auto traces = reconstruct(m.params, ds.gather(idx), o, noise);

  const ModelConfig& c = m.params.config();
  constexpr int kScale = 8, kPad = 4;
  const int tw = c.width * kScale, th = c.height * kScale;
  Rgb8Image canvas(count * tw + (count + 1) * kPad, 2 * th + 3 * kPad);
  json circles = json::array();
  std::vector<Tensor> masks, recon;
  for (int i = 0; i < count; ++i) {
    const GenerationTrace& t = traces[static_cast<std::size_t>(i)];
    t.check_invariants();
    const int x0 = kPad + i * (tw + kPad);
    blit_image(canvas, ds.image(idx[static_cast<std::size_t>(i)]), x0, kPad, kScale);
    blit_image(canvas, t.image, x0, 2 * kPad + th, kScale);
    json centers = json::array(), canvas_centers = json::array();
    for (int p = 0; p < c.pixels(); ++p) {
      if (t.mask[static_cast<std::size_t>(p)] == 0.0) continue;
      const int r = p / c.width, col = p % c.width;
      const int cx = x0 + col * kScale + kScale / 2, cy = kPad + r * kScale + kScale / 2;
      centers.push_back({r, col});
      canvas_centers.push_back({cx, cy});
    }
    // Circles go on after every center is recorded so contrast is judged on the image alone.
    for (const auto& cc : canvas_centers) draw_context_circle(canvas, cc[0], cc[1], kScale / 2 - 1);
    circles.push_back({{"index", idx[static_cast<std::size_t>(i)]}, {"centers", centers},
                       {"canvas_centers", canvas_centers}});
    masks.push_back(t.mask.reshaped({1, c.height, c.width}));
    recon.push_back(t.image.reshaped({1, c.channels, c.height, c.width}));
  }
  write_png(canvas, out / "reconstruct.png");
  write_json(out / "circles.json", {{"tile_scale", kScale}, {"padding", kPad}, {"images", circles}});
  write_npy(stack_batch(masks), out / "masks.npy");
  write_npy(stack_batch(recon), out / "reconstructions.npy");
  manifest.finish({"reconstruct.png", "circles.json", "masks.npy", "reconstructions.npy"});
  return kExitOk;
}

int cmd_estimate(const fs::path& ckpt_path, const DataArgs& data, int K, int n_images, std::uint64_t seed,
                 fs::path out) {
  LoadedModel m = load_model(ckpt_path);
  if (K < 1) throw UsageError("--K must be >= 1");
  if (out.empty()) out = default_out("estimate");
  Manifest manifest("estimate", out);
  manifest.set_checkpoint(ckpt_path);
  manifest.doc()["config"] = {{"K", K}, {"n_images", n_images}, {"split", data.split},
                              {"checkpoint_config", m.ckpt.config_text}};
  manifest.doc()["seed"] = seed;
  manifest.write();

  const Dataset ds = eval_dataset(m.config, data.name, data.root, data.split, 0);
  const auto idx = first_n(n_images, ds.size());
  const SamplingOptions o = m.config.sampling(m.config.tau_end);
  double total = 0.0;
  for (int i : idx) {
    NoiseStream noise(derive_seed(seed, static_cast<std::uint64_t>(i)));
    total += iwae_log_marginal(m.params, ds.image(i), K, o, noise);
  }
  const json result = {{"K", K}, {"mean_log_marginal", total / static_cast<double>(idx.size())},
                       {"n_images", idx.size()}, {"seed", seed}};
  write_json(out / "estimate.json", result);
  std::cout << result.dump() << "\n";
  manifest.finish({"estimate.json"});
  return kExitOk;
}

struct ProbeArgs {
  int n_train = 2000, n_test = 500, seeds = 3;
  std::uint64_t seed = 0;
};

void add_probe_options(CLI::App* sub, ProbeArgs& p) {
  sub->add_option("--n-train", p.n_train, "Probe training images");
  sub->add_option("--n-test", p.n_test, "Probe test images");
  sub->add_option("--seeds", p.seeds, "Number of classifier seeds (>= 3)")->check(CLI::Range(3, 100));
  sub->add_option("--seed", p.seed, "Base seed");
}

std::vector<std::uint64_t> seed_list(const ProbeArgs& p) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < p.seeds; ++i) s.push_back(p.seed + static_cast<std::uint64_t>(i));
  return s;
}

int cmd_probe(const fs::path& ckpt_path, const fs::path& vae_ckpt, const DataArgs& data, const std::string& kind_name,
              const ProbeArgs& p, fs::path out) {
  const FeatureKind kind = parse_feature_kind(kind_name);
  LoadedModel m = load_model(ckpt_path);
  if (out.empty()) out = default_out("probe");
  Manifest manifest("probe", out);
  manifest.set_checkpoint(ckpt_path);
  manifest.doc()["config"] = {{"features", kind_name}, {"n_train", p.n_train}, {"n_test", p.n_test},
                              {"checkpoint_config", m.ckpt.config_text}};
  manifest.doc()["seed"] = p.seed;
  manifest.write();

  const Dataset train_ds = eval_dataset(m.config, data.name, data.root, "train", p.n_train);
  const Dataset test_ds = eval_dataset(m.config, data.name, data.root, "test", p.n_test);
  if (!train_ds.labeled() || !test_ds.labeled()) throw UsageError("probe needs a labeled dataset");
  Tensor ftrain, ftest;
  if (kind == FeatureKind::VaeZ) {
    if (vae_ckpt.empty()) throw UsageError("--features vae-z needs --vae-ckpt");
    const VaeParams vae = vae_from_checkpoint(load_checkpoint(vae_ckpt));
    ftrain = vae_features(vae, train_ds);
    ftest = vae_features(vae, test_ds);
  } else {
    const double tau = m.config.tau_end;
    ftrain = pps_features(m.params, train_ds, kind, m.config.M, tau, m.config.variant, derive_seed(p.seed, 1));
    ftest = pps_features(m.params, test_ds, kind, m.config.M, tau, m.config.variant, derive_seed(p.seed, 2));
  }
  const ProbeReport r = probe_train_eval(kind_name, ftrain, train_ds.labels, ftest, test_ds.labels, seed_list(p));
  std::ofstream(out / "probe.json") << r.to_json() << "\n";
  std::cout << r.to_json() << "\n";
  manifest.finish({"probe.json"});
  return kExitOk;
}

int cmd_compare_random(const fs::path& ckpt_path, const DataArgs& data, int n_images, const ProbeArgs& p,
                       fs::path out) {
  LoadedModel m = load_model(ckpt_path);
  if (out.empty()) out = default_out("compare-random");
  Manifest manifest("compare-random", out);
  manifest.set_checkpoint(ckpt_path);
  manifest.doc()["config"] = {{"n_images", n_images}, {"n_train", p.n_train}, {"n_test", p.n_test},
                              {"checkpoint_config", m.ckpt.config_text}};
  manifest.doc()["seed"] = p.seed;
  manifest.write();

  const Dataset test_ds = eval_dataset(m.config, data.name, data.root, "test", std::max(n_images, p.n_test));
  const SamplingOptions o = m.config.sampling(m.config.tau_end);
  Rng rng(derive_seed(p.seed, 3));
  int wins = 0, losses = 0;
  double learned_sum = 0.0, random_sum = 0.0;
  const auto idx = first_n(n_images, test_ds.size());
  for (int i : idx) {
    const Tensor y = test_ds.image(i);
    NoiseStream noise(derive_seed(p.seed, static_cast<std::uint64_t>(i)));
    const ContextSet learned = infer_context(m.params, y, o, noise);
    const ContextSet random = random_context(y, m.config.M, rng);
    const double l = imputation_log_likelihood(m.params, learned, y);
    const double r = imputation_log_likelihood(m.params, random, y);
    learned_sum += l;
    random_sum += r;
    wins += l > r;
    losses += l < r;
  }
  const double n = static_cast<double>(idx.size());
  json summary;
  summary["imputation"] = {{"n_images", idx.size()}, {"learned_mean_ll", learned_sum / n},
                           {"random_mean_ll", random_sum / n}, {"learned_wins", wins},
                           {"learned_win_fraction", wins / n}, {"sign_test_p", sign_test_p(wins, losses)}};

  if (test_ds.labeled()) {
    const Dataset train_ds = eval_dataset(m.config, data.name, data.root, "train", p.n_train);
    const Dataset probe_test = test_ds.subset(first_n(p.n_test, test_ds.size()));
    json probes;
    for (FeatureKind kind : {FeatureKind::YmSample, FeatureKind::RandomYm}) {
      const Tensor ftrain = pps_features(m.params, train_ds, kind, m.config.M, o.temperature, o.posterior,
                                         derive_seed(p.seed, 1));
      const Tensor ftest = pps_features(m.params, probe_test, kind, m.config.M, o.temperature, o.posterior,
                                        derive_seed(p.seed, 2));
      const ProbeReport r =
          probe_train_eval(to_string(kind), ftrain, train_ds.labels, ftest, probe_test.labels, seed_list(p));
      probes[to_string(kind)] = json::parse(r.to_json());
    }
    summary["probe"] = probes;
  }
  write_json(out / "summary.json", summary);
  std::cout << summary.dump(2) << "\n";
  manifest.finish({"summary.json"});
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Partial pixel specification VAE: training, sampling and evaluation"};
  app.require_subcommand(1);

  fs::path config, out, ckpt, vae_ckpt;
  int n = 16, M = 0, K = 1, n_images = 200;
  double tau = 0.0;
  std::uint64_t seed = 0;
  std::string features;
  DataArgs data;
  ProbeArgs probe;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
  train_cmd->add_option("--config", config, "key = value config file")->required();
  train_cmd->add_option("--out", out, "Output directory");
  auto* vae_cmd = app.add_subcommand("train-vae", "Train the single-latent VAE baseline");
  vae_cmd->add_option("--config", config, "key = value config file")->required();
  vae_cmd->add_option("--out", out, "Output directory");

  auto* sample_cmd = app.add_subcommand("sample", "Unconditional generation traces");
  sample_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sample_cmd->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  sample_cmd->add_option("--M", M, "Prior draws per sample (default: training M)");
  sample_cmd->add_option("--tau", tau, "Gumbel-softmax temperature (default: final training tau)");
  sample_cmd->add_option("--seed", seed, "Seed");
  sample_cmd->add_option("--out", out, "Output directory");

  auto* recon_cmd = app.add_subcommand("reconstruct", "Inferred contexts and reconstructions");
  recon_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  recon_cmd->add_option("--n", n, "Number of images")->check(CLI::PositiveNumber);
  recon_cmd->add_option("--seed", seed, "Seed");
  recon_cmd->add_option("--out", out, "Output directory");
  add_data_options(recon_cmd, data);

  auto* est_cmd = app.add_subcommand("estimate", "Importance-weighted log-marginal estimate");
  est_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  est_cmd->add_option("--K", K, "Importance samples per image");
  est_cmd->add_option("--n-images", n_images, "Images from the split")->check(CLI::PositiveNumber);
  est_cmd->add_option("--seed", seed, "Seed");
  est_cmd->add_option("--out", out, "Output directory");
  add_data_options(est_cmd, data);

  auto* probe_cmd = app.add_subcommand("probe", "Frozen-feature probe classification");
  probe_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  probe_cmd->add_option("--vae-ckpt", vae_ckpt, "VAE checkpoint (for vae-z features)");
  probe_cmd->add_option("--features", features, "yM-sample|yM-mode|abstract-a|image|random-yM|vae-z")->required();
  probe_cmd->add_option("--out", out, "Output directory");
  add_data_options(probe_cmd, data);
  add_probe_options(probe_cmd, probe);

  auto* cmp_cmd = app.add_subcommand("compare-random", "Learned versus uniformly random contexts");
  cmp_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  cmp_cmd->add_option("--n-images", n_images, "Paired test images")->check(CLI::PositiveNumber);
  cmp_cmd->add_option("--out", out, "Output directory");
  add_data_options(cmp_cmd, data);
  add_probe_options(cmp_cmd, probe);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();  // program name
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config, out, false);
    if (vae_cmd->parsed()) return cmd_train(config, out, true);
    if (sample_cmd->parsed()) return cmd_sample(ckpt, n, M, tau, seed, out);
    if (recon_cmd->parsed()) return cmd_reconstruct(ckpt, data, n, seed, out);
    if (est_cmd->parsed()) return cmd_estimate(ckpt, data, K, n_images, seed, out);
    if (probe_cmd->parsed()) return cmd_probe(ckpt, vae_ckpt, data, features, probe, out);
    if (cmp_cmd->parsed()) return cmd_compare_random(ckpt, data, n_images, probe, out);
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IncompatibleCheckpoint& e) {
    std::cerr << "incompatible checkpoint: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const IntegrityError& e) {
    std::cerr << "corrupt checkpoint: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IngestionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContractViolation& e) {
    std::cerr << "invalid arguments: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

int run_cli(int argc, char** argv) { return run_cli(std::vector<std::string>(argv, argv + argc)); }

}  // namespace ppsvae
