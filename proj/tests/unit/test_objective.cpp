#include <doctest.h>

#include <cmath>
#include <random>

#include "helpers.hpp"
#include "ppsvae/objective.hpp"

using namespace ppsvae;
using testing::random_tensor;
using testing::tiny_config;

namespace {

SamplingOptions opts(int M, Posterior p = Posterior::Independent, double tau = 0.5) {
  SamplingOptions o;
  o.M = M;
  o.temperature = tau;
  o.posterior = p;
  return o;
}

Tensor batch_of(const Tensor& image) { return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}); }

// Repeats every logged row so a batch of `copies` identical images replays the same noise per row.
NoiseStream::Log duplicate_rows(const NoiseStream::Log& log, int copies) {
  auto dup = [&](const std::vector<Tensor>& src) {
    std::vector<Tensor> out;
    for (const Tensor& t : src) out.push_back(stack_batch(std::vector<Tensor>(static_cast<std::size_t>(copies), t)));
    return out;
  };
  return {dup(log.draws), dup(log.anchors)};
}

double elbo_with(const ModelParams& m, const Tensor& images, const SamplingOptions& o, const NoiseStream::Log& log) {
  NoiseStream replay = NoiseStream::replaying(log);
  ag::NoGradGuard guard;
  return elbo_terms(m, images, o, replay).elbo.value()[0];
}

}  // namespace

TEST_CASE("elbo_terms: the four terms recombine into the elbo on random configurations") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 60; ++trial) {
    const int h = 4 + static_cast<int>(rng() % 4), w = 4 + static_cast<int>(rng() % 4);
    const int c = 1 + static_cast<int>(rng() % 3), d = 1 + static_cast<int>(rng() % 5);
    const ModelParams m(tiny_config(h, w, c, d), rng());
    const Tensor y = random_tensor({2, c, h, w}, rng());
    const int M = 1 + static_cast<int>(rng() % (h * w - 1));
    NoiseStream noise(rng());
    ag::NoGradGuard guard;
    const ElboBatch b = elbo_terms(m, y, opts(M, trial % 2 ? Posterior::Autoregressive : Posterior::Independent,
                                               0.2 + 0.05 * (trial % 10)),
                                   noise);
    for (const ElboBreakdown& r : b.rows()) {
      CHECK(std::abs(r.elbo - r.recombined()) <= 1e-6 * std::max(1.0, std::abs(r.elbo)));
      CHECK(r.kl_a >= 0.0);
      CHECK(std::isfinite(r.elbo));
    }
  }
}

TEST_CASE("elbo_terms: kl_a vanishes when the posterior head is forced to N(0, I)") {
  ModelParams m(tiny_config(), 2);
  m.h3_out.weight.mutable_value().fill(0.0);
  Tensor& bias = m.h3_out.bias.mutable_value();
  for (int i = 0; i < 4; ++i) {
    bias[static_cast<std::size_t>(i)] = 0.0;
    bias[static_cast<std::size_t>(4 + i)] = raw_from_scale(1.0);
  }
  NoiseStream noise(3);
  const ElboBreakdown b = elbo_terms_single(m, random_tensor({1, 6, 6}, 4), opts(3), noise);
  CHECK(std::abs(b.kl_a) < 1e-12);
}

TEST_CASE("elbo_terms: gradient matches central finite differences with the noise frozen") {
  for (Posterior p : {Posterior::Independent, Posterior::Autoregressive}) {
    CAPTURE(to_string(p));
    ModelParams m(tiny_config(6, 6, 1, 4), 5);
    // zero-initialized biases put empty receptive fields exactly on the leaky-relu kink
    std::mt19937_64 jitter(3);
    for (const auto& e : m.params().entries())
      if (e.name.ends_with("bias"))
        for (double& v : const_cast<ag::Var&>(e.var).mutable_value().span())
          v += std::uniform_real_distribution<double>(-0.05, 0.05)(jitter);
    const Tensor y = batch_of(random_tensor({1, 6, 6}, 6));
    const SamplingOptions o = opts(2, p, 0.5);

    NoiseStream rec(7);
    rec.start_recording();
    { ag::NoGradGuard guard; elbo_terms(m, y, o, rec); }
    const NoiseStream::Log log = rec.take_log();

    m.params().zero_grad();
    NoiseStream replay = NoiseStream::replaying(log);
    ag::backward(elbo_terms(m, y, o, replay).elbo);

    std::mt19937_64 pick(8);
    const auto& entries = m.params().entries();
    int checked = 0;
    for (int attempt = 0; checked < 10 && attempt < 200; ++attempt) {
      const auto& e = entries[pick() % entries.size()];
      Tensor& value = const_cast<ag::Var&>(e.var).mutable_value();
      const std::size_t i = pick() % value.numel();
      const double analytic = e.var.grad().empty() ? 0.0 : e.var.grad()[i];
      const double h = 1e-6, saved = value[i];
      value[i] = saved + h;
      const double up = elbo_with(m, y, o, log);
      value[i] = saved - h;
      const double down = elbo_with(m, y, o, log);
      value[i] = saved;
      const double numeric = (up - down) / (2 * h);
      if (std::abs(numeric) < 1e-4 && std::abs(analytic) < 1e-4) continue;  // flat direction
      CAPTURE(e.name);
      CHECK(std::abs(analytic - numeric) / std::max(std::abs(analytic), std::abs(numeric)) < 1e-3);
      ++checked;
    }
    CHECK(checked == 10);
  }
}

TEST_CASE("training_loss: a batch of one equals the negative elbo") {
  const ModelParams m(tiny_config(), 9);
  const Tensor y = batch_of(random_tensor({1, 6, 6}, 10));
  NoiseStream a(11), b(11);
  ag::NoGradGuard guard;
  CHECK(training_loss(m, y, opts(3), a).value()[0] == -elbo_terms(m, y, opts(3), b).elbo.value()[0]);
}

TEST_CASE("training_loss: a duplicated batch with duplicated noise has the same mean") {
  for (Posterior p : {Posterior::Independent, Posterior::Autoregressive}) {
    const ModelParams m(tiny_config(), 12);
    const Tensor y = batch_of(random_tensor({1, 6, 6}, 13));
    NoiseStream rec(14);
    rec.start_recording();
    ag::NoGradGuard guard;
    const double single = training_loss(m, y, opts(4, p), rec).value()[0];
    const NoiseStream::Log log = rec.take_log();
    NoiseStream replay = NoiseStream::replaying(duplicate_rows(log, 2));
    const double twice = training_loss(m, stack_batch({y, y}), opts(4, p), replay).value()[0];
    CHECK(twice == single);
  }
}

TEST_CASE("training_loss: finite on constant images, contract on empty batches") {
  const ModelParams m(tiny_config(), 15);
  NoiseStream noise(16);
  ag::NoGradGuard guard;
  CHECK(std::isfinite(training_loss(m, Tensor({1, 1, 6, 6}, 0.0), opts(3), noise).value()[0]));
  CHECK(std::isfinite(training_loss(m, Tensor({1, 1, 6, 6}, 1.0), opts(3), noise).value()[0]));
  CHECK_THROWS_AS(training_loss(m, Tensor({0, 1, 6, 6}), opts(3), noise), ContractViolation);
  CHECK_THROWS_AS(training_loss(m, Tensor({1, 2, 6, 6}), opts(3), noise), ContractViolation);
}

TEST_CASE("iwae_log_marginal: K = 1 equals the single-sample log weight bitwise") {
  const ModelParams m(tiny_config(6, 6, 2, 3), 17);
  for (int s = 0; s < 20; ++s) {
    const Tensor y = random_tensor({2, 6, 6}, 100 + s);
    const SamplingOptions o = opts(3, s % 2 ? Posterior::Autoregressive : Posterior::Independent);
    NoiseStream a(200 + s), b(200 + s);
    CHECK(iwae_log_marginal(m, y, 1, o, a) == single_sample_log_weight(m, y, o, b));
  }
}

TEST_CASE("iwae_log_marginal: more samples do not lower the estimate on average") {
  const ModelParams m(tiny_config(), 18);
  const Tensor y = random_tensor({1, 6, 6}, 19);
  double k1 = 0.0, k25 = 0.0;
  const int repeats = 40;
  for (int r = 0; r < repeats; ++r) {
    NoiseStream a(derive_seed(20, r)), b(derive_seed(21, r));
    k1 += iwae_log_marginal(m, y, 1, opts(3), a);
    k25 += iwae_log_marginal(m, y, 25, opts(3), b);
  }
  CHECK(k25 / repeats >= k1 / repeats);
}

TEST_CASE("iwae_log_marginal: K spanning multiple chunks and invalid K") {
  const ModelParams m(tiny_config(), 22);
  const Tensor y = random_tensor({1, 6, 6}, 23);
  NoiseStream noise(24);
  CHECK(std::isfinite(iwae_log_marginal(m, y, 130, opts(2), noise)));
  CHECK_THROWS_AS(iwae_log_marginal(m, y, 0, opts(2), noise), ContractViolation);
}

TEST_CASE("log weight equals the generative joint minus both posterior log-densities") {
  const ModelParams m(tiny_config(5, 5, 2, 3), 25);
  for (int s = 0; s < 10; ++s) {
    const Tensor y = random_tensor({2, 5, 5}, 300 + s);
    const SamplingOptions o = opts(4);
    NoiseStream rec(400 + s);
    rec.start_recording();
    const double log_w = single_sample_log_weight(m, y, o, rec);
    NoiseStream replay = NoiseStream::replaying(rec.take_log());

    // the same draws, assembled through the plain per-factor calls
    const ContextSet ctx = infer_context(m, y, o, replay);
    const AbstractLatent a = infer_abstract(m, ctx, replay);
    const std::vector<double> q_logits = [&] {
      ag::NoGradGuard guard;
      return location_logits_independent(m, ag::constant(batch_of(y))).value().vec();
    }();
    double log_q_x = 0.0;
    for (const auto& oh : ctx.onehots) log_q_x += categorical_log_prob(oh.probs, q_logits);
    const double log_q_a = diag_gaussian_log_prob(a.sample, a.posterior);

    GenerationTrace t;
    t.a = a.sample;
    t.mask = ctx.mask;
    t.context_values = ctx.values;
    t.target_values = lookup_values(y, complement_mask(ctx.mask));
    t.image = y;
    t.locations = ctx.locations;
    const TraceScore score = score_trace(m, t);
    CHECK(std::abs(log_w - (score.joint - log_q_x - log_q_a)) < 1e-6);
  }
}
