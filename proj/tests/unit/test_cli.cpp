#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "ppsvae/io.hpp"

using namespace ppsvae;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kSmallConfig =
    "M = 3\nlatent_dim = 2\nbatch_size = 8\nsynth_n = 40\nsynth_height = 8\nsynth_width = 8\n"
    "net_width = 4\nblocks = 1\nkernel_size = 3\nlog_every = 2\nmax_steps = 6\nseed = 11\n";

int run(const std::string& args) {
  const std::string cmd = std::string(PPSVAE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const std::string& name, const std::string& text) {
  const fs::path p = dir / name;
  std::ofstream(p) << text;
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<json> metrics_without_seconds(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> rows;
  for (std::string line; std::getline(in, line);) {
    json j = json::parse(line);
    j.erase("seconds");
    rows.push_back(j);
  }
  return rows;
}

// A checkpoint from one short training run, shared by the commands that need one.
const fs::path& trained_checkpoint() {
  static const fs::path ckpt = [] {
    const fs::path dir = testing::scratch_dir("cli_model");
    const fs::path cfg = write_config(dir, "small.cfg", kSmallConfig);
    REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "run").string()) == 0);
    return dir / "run" / "final.ckpt";
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("train: two runs of the same config write identical metrics apart from wall time") {
  const fs::path dir = testing::scratch_dir("cli_train");
  const fs::path cfg = write_config(dir, "small.cfg", kSmallConfig);
  REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "a").string()) == 0);
  REQUIRE(run("train --config " + cfg.string() + " --out " + (dir / "b").string()) == 0);
  const auto a = metrics_without_seconds(dir / "a" / "metrics.jsonl");
  CHECK(a.size() == 3);
  CHECK(a == metrics_without_seconds(dir / "b" / "metrics.jsonl"));
  for (const char* f : {"final.ckpt", "metrics.jsonl", "manifest.json"}) CHECK(fs::exists(dir / "a" / f));
  const json m = read_json(dir / "a" / "manifest.json");
  CHECK(m["command"] == "train");
  CHECK(m["seed"] == 11);
  CHECK_FALSE(m["end_time"].is_null());
  CHECK(m["outputs"].size() == 2);
}

TEST_CASE("sample: traces, grid and arrays are mutually consistent") {
  const fs::path out = testing::scratch_dir("cli_sample");
  REQUIRE(run("sample --ckpt " + trained_checkpoint().string() + " --n 4 --seed 3 --out " + out.string()) == 0);
  for (int i = 0; i < 4; ++i) CHECK(fs::exists(out / ("trace_00" + std::to_string(i) + ".png")));
  CHECK_FALSE(fs::exists(out / "trace_004.png"));

  constexpr int kScale = 8, kPad = 4, kTile = 8 * kScale;
  const Rgb8Image trace = read_png(out / "trace_000.png");
  CHECK(trace.width == 4 * kTile + 5 * kPad);
  CHECK(trace.height == kTile + 2 * kPad);
  const Rgb8Image grid = read_png(out / "grid.png");
  CHECK(grid.width == 2 * kTile + 3 * kPad);
  CHECK(grid.height == 2 * kTile + 3 * kPad);

  std::set<std::array<std::uint8_t, 3>> mask_colors;
  for (int y = kPad; y < kPad + kTile; ++y)
    for (int x = kPad; x < kPad + kTile; ++x) mask_colors.insert(trace.get(x, y));
  CHECK(mask_colors == std::set<std::array<std::uint8_t, 3>>{kMaskOn, kMaskOff});

  const Tensor masks = read_npy(out / "masks.npy"), ctx = read_npy(out / "context_values.npy");
  const Tensor tgt = read_npy(out / "target_values.npy"), img = read_npy(out / "images.npy");
  CHECK(masks.shape() == Shape{4, 8, 8});
  CHECK(img.shape() == Shape{4, 1, 8, 8});
  for (std::size_t i = 0; i < img.numel(); ++i) {
    CHECK(img[i] == ctx[i] + tgt[i]);
    CHECK(ctx[i] * tgt[i] == 0.0);
  }
  const json lat = read_json(out / "latents.json");
  REQUIRE(lat.size() == 4);
  for (std::size_t s = 0; s < 4; ++s) {
    int popcount = 0;
    for (int p = 0; p < 64; ++p) popcount += masks[s * 64 + static_cast<std::size_t>(p)] == 1.0;
    CHECK(popcount >= 1);
    CHECK(popcount <= 3);
    CHECK(lat[s]["a"].size() == 2);
    CHECK(lat[s]["locations"].size() == 3);
  }
}

TEST_CASE("reconstruct: one circle per context pixel") {
  const fs::path out = testing::scratch_dir("cli_recon");
  REQUIRE(run("reconstruct --ckpt " + trained_checkpoint().string() + " --n 3 --out " + out.string()) == 0);
  const Rgb8Image canvas = read_png(out / "reconstruct.png");
  CHECK(canvas.width == 3 * 64 + 4 * 4);
  CHECK(canvas.height == 2 * 64 + 3 * 4);
  const json circles = read_json(out / "circles.json");
  const Tensor masks = read_npy(out / "masks.npy");
  REQUIRE(circles["images"].size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    int popcount = 0;
    for (int p = 0; p < 64; ++p) popcount += masks[i * 64 + static_cast<std::size_t>(p)] == 1.0;
    CHECK(circles["images"][i]["centers"].size() == static_cast<std::size_t>(popcount));
  }
  CHECK(read_npy(out / "reconstructions.npy").shape() == Shape{3, 1, 8, 8});
}

TEST_CASE("estimate: writes the log-marginal summary") {
  const fs::path out = testing::scratch_dir("cli_estimate");
  REQUIRE(run("estimate --ckpt " + trained_checkpoint().string() + " --K 4 --n-images 3 --out " + out.string()) == 0);
  const json e = read_json(out / "estimate.json");
  CHECK(e["K"] == 4);
  CHECK(e["n_images"] == 3);
  CHECK(e["mean_log_marginal"].is_number());
  CHECK(std::isfinite(e["mean_log_marginal"].get<double>()));
  const json m = read_json(out / "manifest.json");
  CHECK(m["checkpoint_sha1"].get<std::string>().size() == 40);
}

TEST_CASE("probe: report names the feature kind and every seed") {
  const fs::path out = testing::scratch_dir("cli_probe");
  REQUIRE(run("probe --ckpt " + trained_checkpoint().string() +
              " --features abstract-a --n-train 30 --n-test 20 --seed 7 --out " + out.string()) == 0);
  const json r = read_json(out / "probe.json");
  CHECK(r["feature_kind"] == "abstract-a");
  CHECK(r["seeds"] == json::array({7, 8, 9}));
  CHECK(r["f1_per_seed"].size() == 3);
  CHECK(run("probe --ckpt " + trained_checkpoint().string() + " --features abstract-a --seeds 2") == 2);
  CHECK(run("probe --ckpt " + trained_checkpoint().string() + " --features pixels --out " + out.string()) == 2);
  CHECK(run("probe --ckpt " + trained_checkpoint().string() + " --features vae-z --out " + out.string()) == 2);
}

TEST_CASE("exit codes: usage, numeric failure and checkpoint errors") {
  const fs::path dir = testing::scratch_dir("cli_exit");
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("sample") == 2);
  CHECK(run("train --config " + (dir / "missing.cfg").string()) == 2);
  CHECK(run("train --config " + write_config(dir, "bad.cfg", "no_such_key = 1\n").string()) == 2);
  CHECK(run("sample --ckpt " + (dir / "missing.ckpt").string()) == 2);

  const fs::path diverge = write_config(dir, "diverge.cfg", kSmallConfig + "learning_rate = 1e300\n");
  CHECK(run("train --config " + diverge.string() + " --out " + (dir / "div").string()) == 3);

  std::ifstream in(trained_checkpoint(), std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(dir / "corrupt.ckpt", std::ios::binary) << bytes;
  CHECK(run("sample --ckpt " + (dir / "corrupt.ckpt").string() + " --out " + (dir / "s").string()) == 4);
  std::ofstream(dir / "trunc.ckpt", std::ios::binary) << bytes.substr(0, 20);
  CHECK(run("estimate --ckpt " + (dir / "trunc.ckpt").string() + " --out " + (dir / "e").string()) == 4);
}
