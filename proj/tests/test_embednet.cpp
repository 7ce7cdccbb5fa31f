#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "morphdet/embednet.hpp"
#include "morphdet/parallel.hpp"

using namespace morphdet;
using Catch::Approx;

namespace {

Tensor random_tensor(Rng& rng, std::size_t c, std::size_t h, std::size_t w) {
  Tensor t({c, h, w});
  for (double& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

EmbedNetConfig tiny_config(bool l2 = false) {
  EmbedNetConfig cfg;
  cfg.in_channels = 6;
  cfg.blocks = {{2, 3, 1}};
  cfg.embedding_dim = 4;
  cfg.seed = 11;
  cfg.l2_normalize = l2;
  return cfg;
}

double mean_loss(const EmbedNet& net, const std::vector<PairInput>& batch, const ContrastiveParams& p) {
  double s = 0.0;
  for (const auto& b : batch) s += pair_loss(net, b, p).loss;
  return s / static_cast<double>(batch.size());
}

// Central differences on randomly chosen parameters against the analytic
// gradient of the mean batch loss.
void gradient_check(bool l2, double margin) {
  Rng rng(l2 ? 77 : 76);
  EmbedNet net(tiny_config(l2));
  std::vector<Tensor> inputs;
  for (int i = 0; i < 6; ++i) inputs.push_back(random_tensor(rng, 6, 8, 8));
  const std::vector<PairInput> batch = {
      {&inputs[0], &inputs[1], 0}, {&inputs[2], &inputs[3], 1}, {&inputs[4], &inputs[5], 1}, {&inputs[1], &inputs[4], 0}};
  const ContrastiveParams p{margin};
  for (const auto& b : batch)
    if (b.label == 1) REQUIRE(pair_loss(net, b, p).distance < margin);

  const auto analytic = batch_loss_and_gradient(net, batch, p);
  CHECK(analytic.mean_loss == Approx(mean_loss(net, batch, p)).epsilon(1e-12));
  const std::size_t n = net.params().scalar_count();
  REQUIRE(n >= 100);
  auto grads = analytic.grads;
  const double h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = rng.below(n);
    EmbedNet plus = net, minus = net;
    plus.params().scalar(k) += h;
    minus.params().scalar(k) -= h;
    const double numeric = (mean_loss(plus, batch, p) - mean_loss(minus, batch, p)) / (2 * h);
    const double a = grads.scalar(k);
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
  }
  INFO("worst relative error " << worst);
  CHECK(worst < 1e-4);
}

}  // namespace

TEST_CASE("forward basics", "[embednet]") {
  Rng rng(1);
  EmbedNetConfig cfg;
  cfg.in_channels = 3;
  cfg.blocks = {{4, 3, 1}, {4, 3, 2}};
  cfg.embedding_dim = 8;
  EmbedNet net(cfg);
  const auto x = random_tensor(rng, 3, 16, 12);

  auto zero = net.params().zeros_like();
  const EmbedNet zero_net(cfg, zero);
  for (double v : forward(zero_net, x)) CHECK(v == 0.0);

  const auto e1 = forward(net, x), e2 = forward(net, x);
  CHECK(e1 == e2);
  CHECK(e1.size() == 8);
  CHECK(EmbedNet(cfg).params() == net.params());

  std::vector<Tensor> xs;
  for (int i = 0; i < 5; ++i) xs.push_back(random_tensor(rng, 3, 16, 12));
  const auto batch = forward_batch(net, xs);
  for (std::size_t i = 0; i < xs.size(); ++i) CHECK(batch[i] == forward(net, xs[i]));

  CHECK_THROWS_WITH(forward(net, random_tensor(rng, 2, 16, 12)), Catch::Matchers::StartsWith("shape mismatch"));
  CHECK_THROWS_WITH(forward(net, random_tensor(rng, 3, 2, 2)), Catch::Matchers::StartsWith("shape mismatch"));
}

TEST_CASE("l2-normalized embeddings have unit norm", "[embednet]") {
  Rng rng(2);
  EmbedNet net(tiny_config(true));
  const auto e = forward(net, random_tensor(rng, 6, 8, 8));
  double n2 = 0.0;
  for (double v : e) n2 += v * v;
  CHECK(n2 == Approx(1.0).epsilon(1e-12));
}

TEST_CASE("pair_distance", "[embednet]") {
  const std::vector<double> o{0, 0}, p{3, 4};
  CHECK(pair_distance(o, p) == 5.0);
  CHECK(pair_distance(p, p) == 0.0);
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(7), b(7), c(7);
    for (std::size_t i = 0; i < 7; ++i) a[i] = rng.normal(), b[i] = rng.normal(), c[i] = rng.normal();
    CHECK(pair_distance(a, b) == pair_distance(b, a));
    CHECK(pair_distance(a, c) <= pair_distance(a, b) + pair_distance(b, c) + 1e-12);
  }
  CHECK_THROWS(pair_distance(o, std::vector<double>{1, 2, 3}));
}

TEST_CASE("contrastive_loss", "[embednet]") {
  CHECK(contrastive_loss(0.0, 0) == 0.0);
  CHECK(contrastive_loss(1.5, 1, {1.0}) == 0.0);
  CHECK(contrastive_loss(0.4, 1, {1.0}) == Approx(0.36).epsilon(1e-15));
  CHECK(contrastive_loss(2.0, 0) == 4.0);
  CHECK(contrastive_loss(1.0 - 1e-9, 1) == Approx(0.0).margin(1e-17));
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const double d = rng.uniform(0, 3);
    CHECK(contrastive_loss(d, 0) >= 0.0);
    CHECK(contrastive_loss(d, 1) >= 0.0);
  }
  CHECK_THROWS(contrastive_loss(1.0, 1, {0.0}));
}

TEST_CASE("analytic gradient matches central differences", "[embednet][oracle]") {
  gradient_check(false, 10.0);
}

TEST_CASE("analytic gradient matches central differences with l2 normalization", "[embednet][oracle]") {
  gradient_check(true, 2.5);
}

TEST_CASE("gradient edge cases", "[embednet]") {
  Rng rng(5);
  EmbedNet net(tiny_config());
  const auto a = random_tensor(rng, 6, 8, 8), b = random_tensor(rng, 6, 8, 8);

  // Genuine pair of identical inputs and an imposter pair beyond a tiny margin.
  const std::vector<PairInput> zero_loss = {{&a, &a, 0}, {&a, &b, 1}};
  ContrastiveParams tiny{1e-9};
  REQUIRE(pair_loss(net, zero_loss[1], tiny).distance > 1e-9);
  const auto g = batch_loss_and_gradient(net, zero_loss, tiny);
  CHECK(g.mean_loss == 0.0);
  for (const auto& t : g.grads.tensors)
    for (double v : t.data) CHECK(v == 0.0);

  const std::vector<PairInput> batch = {{&a, &b, 0}, {&b, &a, 1}};
  const std::vector<PairInput> doubled = {{&a, &b, 0}, {&b, &a, 1}, {&a, &b, 0}, {&b, &a, 1}};
  const auto g1 = batch_loss_and_gradient(net, batch);
  const auto g2 = batch_loss_and_gradient(net, doubled);
  CHECK(g1.mean_loss == Approx(g2.mean_loss).epsilon(1e-15));
  for (std::size_t i = 0; i < g1.grads.tensors.size(); ++i)
    for (std::size_t j = 0; j < g1.grads.tensors[i].size(); ++j)
      CHECK(g1.grads.tensors[i].data[j] == Approx(g2.grads.tensors[i].data[j]).epsilon(1e-12).margin(1e-15));
}

TEST_CASE("gradient is independent of the thread count", "[embednet]") {
  Rng rng(6);
  EmbedNet net(tiny_config());
  std::vector<Tensor> in;
  for (int i = 0; i < 8; ++i) in.push_back(random_tensor(rng, 6, 8, 8));
  std::vector<PairInput> batch;
  for (int i = 0; i < 8; i += 2) batch.push_back({&in[i], &in[i + 1], i % 4 == 0 ? 0 : 1});
  const unsigned saved = thread_limit().load();
  thread_limit() = 1;
  const auto one = batch_loss_and_gradient(net, batch);
  thread_limit() = 4;
  const auto four = batch_loss_and_gradient(net, batch);
  thread_limit() = saved;
  CHECK(one.mean_loss == four.mean_loss);
  CHECK(one.grads == four.grads);
}

TEST_CASE("adam_step", "[embednet][oracle]") {
  EmbedNet net(tiny_config());
  const auto before = net.params();
  auto state = AdamState::for_net(net);
  adam_step(net, net.params().zeros_like(), state, 1e-3);
  CHECK(net.params() == before);
  CHECK(state.step == 1);

  // First bias-corrected step: m_hat = g, v_hat = g^2, so the update is
  // lr * g / (|g| + eps).
  EmbedNet net2(tiny_config());
  auto s2 = AdamState::for_net(net2);
  auto g = net2.params().zeros_like();
  Rng rng(8);
  for (auto& t : g.tensors)
    for (double& v : t.data) v = rng.uniform(-2, 2);
  const double lr = 1e-4;
  adam_step(net2, g, s2, lr);
  for (std::size_t i = 0; i < g.tensors.size(); ++i)
    for (std::size_t j = 0; j < g.tensors[i].size(); ++j) {
      const double gv = g.tensors[i].data[j];
      const double expected = before.tensors[i].data[j] - lr * gv / (std::abs(gv) + 1e-8);
      CHECK(net2.params().tensors[i].data[j] == Approx(expected).epsilon(1e-12));
    }

  EmbedNet net3(tiny_config());
  auto s3 = AdamState::for_net(net3);
  adam_step(net3, g, s3, lr);
  CHECK(net3.params() == net2.params());
  CHECK(s3 == s2);
}

TEST_CASE("parse_blocks", "[embednet]") {
  const auto b = parse_blocks("8:3:2,16:5");
  REQUIRE(b.size() == 2);
  CHECK(b[0].filters == 8);
  CHECK(b[0].kernel == 3);
  CHECK(b[0].stride == 2);
  CHECK(b[1].kernel == 5);
  CHECK(b[1].stride == 1);
  CHECK(parse_blocks(format_blocks(b)).size() == 2);
  CHECK_THROWS(parse_blocks("8:x"));
  CHECK_THROWS(parse_blocks(""));
}
