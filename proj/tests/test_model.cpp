#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "dualformer/model.hpp"

using namespace dualformer;
using namespace dualformer::model;

namespace {

Tensor random_matrix(std::size_t m, std::size_t n, std::mt19937_64& rng, double sd = 1.0, double mu = 0.0) {
  std::normal_distribution<double> dist(mu, sd);
  std::vector<double> v(m * n);
  for (auto& x : v) x = dist(rng);
  return Tensor({m, n}, std::move(v));
}

ModelConfig tiny() {
  ModelConfig c;
  c.lookback = 32;
  c.horizon = 8;
  c.channels = 2;
  c.width = 8;
  c.heads = 2;
  c.layers = 2;
  c.alpha = 0.5;
  return c;
}

// Periodic two-channel window with a little noise.
Tensor periodic_window(std::size_t len, std::size_t channels, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.05);
  std::vector<double> v(len * channels);
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t c = 0; c < channels; ++c)
      v[t * channels + c] = std::sin(2.0 * std::numbers::pi * t / 8.0 + c) + 0.3 * c + noise(rng);
  return Tensor({len, channels}, v);
}

}  // namespace

TEST(Config, ValidationRejectsBadValues) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(init_model(c), ConfigError);
  c = ModelConfig{};
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.layers = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  EXPECT_TRUE(apply_config_key(c, "alpha", "0.4"));
  EXPECT_EQ(c.alpha, 0.4);
  EXPECT_FALSE(apply_config_key(c, "bogus", "1"));
  EXPECT_THROW(apply_config_key(c, "D", "-4"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "D", "4x"), ConfigError);
  EXPECT_THROW(apply_config_key(c, "lag_policy", "auto"), ConfigError);
  EXPECT_THROW(parse_ablation("w/o"), ConfigError);
}

TEST(Init, ParameterCountClosedForm) {
  ModelConfig c;
  c.layers = 2;
  auto m = init_model(c);
  const std::size_t L = 96, T = 96, C = 7, D = 16, H = 4 * D;
  const std::size_t revin = 2 * C, embed = C * D + D;
  const std::size_t layer = 8 * D * D + 4 * D + (D * H + H + H * D + D);
  const std::size_t head = L * D * T * C + T * C;
  EXPECT_EQ(m.parameter_count(), revin + embed + 2 * layer + head);
  EXPECT_EQ(m.parameter_count(), 1041486u);
}

TEST(Init, SeedDeterminesParameters) {
  auto a = init_model(tiny()), b = init_model(tiny());
  EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
  auto c = tiny();
  c.seed = 1;
  EXPECT_NE(parameter_checksum(init_model(c)), parameter_checksum(a));
  const double bound = 1.0 / std::sqrt(32.0 * 8.0);
  for (double v : a.head_w.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(RevIN, RoundTripConstantChannelAndMoments) {
  std::mt19937_64 rng(3);
  RevIN r{Tensor::full({3}, 1.0), Tensor::zeros({3}), 1e-5};
  auto x = random_matrix(50, 3, rng, 4.0, 7.0);
  RevINState st;
  auto back = revin_denormalize(revin_normalize(x, r, st), r, st);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-9);

  auto flat = Tensor({4, 1}, {2.5, 2.5, 2.5, 2.5});
  RevIN r1{Tensor::full({1}, 1.0), Tensor::zeros({1}), 1e-5};
  auto z = revin_normalize(flat, r1, st);
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(st.std[0], 1e-5);

  // mean 5, population std 2
  auto y = Tensor({4, 1}, {3, 3, 7, 7});
  auto n = revin_normalize(y, r1, st);
  EXPECT_NEAR(st.mean[0], 5.0, 1e-12);
  EXPECT_NEAR(st.std[0], 2.0, 1e-12);
  double mu = 0, var = 0;
  for (double v : n.data()) mu += v / 4;
  for (double v : n.data()) var += (v - mu) * (v - mu) / 4;
  EXPECT_NEAR(mu, 0.0, 1e-9);
  EXPECT_NEAR(var, 1.0, 1e-9);
}

TEST(RevIN, AffineIsInvertedOnTheWayOut) {
  std::mt19937_64 rng(4);
  RevIN r{Tensor::vector({1.5, 0.7}), Tensor::vector({-0.2, 0.4}), 1e-5};
  auto x = random_matrix(20, 2, rng, 3.0, -1.0);
  RevINState st;
  auto back = revin_denormalize(revin_normalize(x, r, st), r, st);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-9);
}

TEST(Forward, DefaultShapeAndDeterminism) {
  ModelConfig c;
  auto m = init_model(c);
  std::mt19937_64 rng(5);
  auto x = periodic_window(96, 7, rng);
  auto y1 = forward(m, x), y2 = forward(m, x);
  EXPECT_EQ(y1.shape(), (Shape{96, 7}));
  EXPECT_EQ(y1.values(), y2.values());
  EXPECT_THROW(forward(m, random_matrix(96, 3, rng)), ContractError);
}

TEST(Forward, FusionWeightsAreComplementary) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    ForwardContext ctx;
    auto x = trial % 2 ? periodic_window(32, 2, rng) : random_matrix(32, 2, rng);
    forward(m, x, &ctx);
    EXPECT_GE(ctx.last_w_f, 0.0);
    EXPECT_LE(ctx.last_w_f, 1.0);
    EXPECT_EQ(ctx.last_w_f + ctx.last_w_t, 1.0);
  }
}

TEST(Forward, FlatChannelContributesZeroWeight) {
  auto m = init_model(tiny());
  std::vector<double> v(64);
  for (std::size_t t = 0; t < 32; ++t) {
    v[2 * t] = std::sin(2.0 * std::numbers::pi * t / 8.0);
    v[2 * t + 1] = 3.0;
  }
  ForwardContext ctx;
  forward(m, Tensor({32, 2}, v), &ctx);
  EXPECT_NEAR(ctx.channel_w_f[0], 1.0, 1e-12);
  EXPECT_EQ(ctx.channel_w_f[1], 0.0);
  EXPECT_NEAR(ctx.last_w_f, 0.5, 1e-12);
}

TEST(Ablation, BranchWiringAndWeights) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(7);
  auto x = periodic_window(32, 2, rng);

  ForwardContext t_ctx, f_ctx;
  auto t_only = forward(ablation_variant(m, Ablation::time_only), x, &t_ctx);
  auto f_only = forward(ablation_variant(m, Ablation::freq_only), x, &f_ctx);
  EXPECT_EQ(t_ctx.freq_calls, 0u);
  EXPECT_EQ(t_ctx.time_calls, 2u);
  EXPECT_EQ(f_ctx.time_calls, 0u);
  EXPECT_EQ(f_ctx.freq_calls, 2u);

  ForwardContext o0, o1, oh;
  o0.w_f_override = 0.0;
  o1.w_f_override = 1.0;
  oh.w_f_override = 0.5;
  EXPECT_EQ(forward(m, x, &o0).values(), t_only.values());
  EXPECT_EQ(forward(m, x, &o1).values(), f_only.values());
  EXPECT_EQ(forward(m, x, &oh).values(), forward(ablation_variant(m, Ablation::uniform_weighting), x).values());

  // Variants share storage with the source model.
  auto v = ablation_variant(m, Ablation::time_only);
  EXPECT_EQ(v.head_w.node(), m.head_w.node());
}

TEST(Ablation, NoRevinOnStandardizedInput) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(8);
  auto raw = periodic_window(32, 2, rng);
  RevINState st = revin_stats(raw, 1e-5);
  auto x = revin_standardize(raw, st);
  auto full = forward(m, x);
  auto plain = forward(ablation_variant(m, Ablation::no_revin), x);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_NEAR(full[i], plain[i], 1e-9);
}

TEST(Forward, ScaleEquivariance) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(9);
  auto x = periodic_window(32, 2, rng);
  auto y = forward(m, x);
  for (double c : {0.01, 3.0, 250.0}) {
    auto shifted = add_row(scale(x, c), Tensor::vector({-4.0, 11.0}));
    auto ys = forward(m, shifted);
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t ch = 0; ch < 2; ++ch) {
        const double want = c * y.at(t, ch) + (ch ? 11.0 : -4.0);
        EXPECT_NEAR(ys.at(t, ch), want, 1e-6 * std::max(1.0, c));
      }
  }
}

TEST(Forward, SingleLayerFullBandTimeBranchIsPlainAttention) {
  auto c = tiny();
  c.layers = 1;
  c.alpha = 1.0;
  auto m = init_model(c);
  std::mt19937_64 rng(10);
  auto h = random_matrix(32, 8, rng);
  auto a = attention::time_branch(h, m.plan.band(1), m.layers[0].time);
  auto b = attention::multi_head_attention(h, m.layers[0].time);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10);
}

TEST(Gradients, EveryGroupMatchesFiniteDifferences) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(11);
  auto y = random_matrix(8, 2, rng);
  auto groups = gradient_check(m, random_matrix(32, 2, rng), y);
  EXPECT_EQ(groups.size(), m.named_parameters().size());
  for (const auto& g : groups) EXPECT_LE(g.rel_error, 1e-3) << g.name << " |g| " << g.grad_norm;
}

// A strongly periodic window drives w_t to ~3e-3, leaving the first time
// branch with |grad| ~ 1e-8; a 1e-6 step is then at the roundoff floor
// (the discrepancy scales as 1/step), so this case probes with 1e-3.
TEST(Gradients, PeriodicInputWithWiderStep) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(11);
  auto y = random_matrix(8, 2, rng);
  auto x = periodic_window(32, 2, rng);
  for (const auto& g : gradient_check(m, x, y, 1e-3)) EXPECT_LE(g.rel_error, 1e-3) << g.name;
}

TEST(Gradients, CheckerFlagsACorruptedGradient) {
  auto m = init_model(tiny());
  std::mt19937_64 rng(13);
  auto x = random_matrix(32, 2, rng), y = random_matrix(8, 2, rng);
  // Without grad tracking the head bias never receives its analytic gradient.
  m.head_b.set_requires_grad(false);
  for (const auto& g : gradient_check(m, x, y)) {
    if (g.name == "head.bias") {
      EXPECT_GT(g.rel_error, 0.5);
    } else {
      EXPECT_LE(g.rel_error, 1e-3) << g.name;
    }
  }
}

TEST(Gradients, PerChannelWeightingAlsoChecks) {
  auto c = tiny();
  c.per_channel_weighting = true;
  auto m = init_model(c);
  std::mt19937_64 rng(12);
  auto x = random_matrix(32, 2, rng);
  auto y = random_matrix(8, 2, rng);
  for (const auto& g : gradient_check(m, x, y)) EXPECT_LE(g.rel_error, 1e-3) << g.name << " |g| " << g.grad_norm;
}

TEST(Checkpoint, RoundTripAndShapeValidation) {
  auto m = init_model(tiny());
  std::stringstream ss;
  save_checkpoint(m, ss);
  auto text = ss.str();
  std::istringstream in(text);
  auto back = load_checkpoint(in);
  EXPECT_EQ(parameter_checksum(back), parameter_checksum(m));
  EXPECT_EQ(back.cfg.lookback, 32u);

  auto broken = text;
  broken.replace(broken.find("param embed.weight 2 2 8"), 24, "param embed.weight 2 2 7");
  std::istringstream bad(broken);
  EXPECT_THROW(load_checkpoint(bad), ParseError);

  std::istringstream truncated(text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(truncated), ParseError);
  std::istringstream junk("not a checkpoint\n");
  EXPECT_THROW(load_checkpoint(junk), ParseError);
}

TEST(Checkpoint, KeepsAblationMode) {
  auto m = ablation_variant(init_model(tiny()), Ablation::freq_only);
  std::stringstream ss;
  save_checkpoint(m, ss);
  auto back = load_checkpoint(ss);
  EXPECT_EQ(back.mode, Ablation::freq_only);
  std::mt19937_64 rng(3);
  auto x = random_matrix(32, 2, rng);
  EXPECT_EQ(forward(back, x).values(), forward(m, x).values());

  auto text = ss.str();
  text.replace(text.find("mode freq_only"), 14, "mode sideways");
  std::istringstream bad(text);
  EXPECT_THROW(load_checkpoint(bad), ParseError);
}
