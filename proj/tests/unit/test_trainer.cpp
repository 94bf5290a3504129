#include <gtest/gtest.h>

#include <cmath>

#include "chanout/trainer.hpp"

using namespace chanout;

namespace {

LayerSpec spec(LayerType type, std::size_t units = 0) {
  LayerSpec s;
  s.type = type;
  s.units = units;
  return s;
}
LayerSpec dense(std::size_t units) { return spec(LayerType::Dense, units); }
LayerSpec chanout_layer(std::size_t k) {
  LayerSpec s = spec(LayerType::ChannelOut);
  s.group = k;
  return s;
}
LayerSpec maxout_layer(std::size_t k) {
  LayerSpec s = spec(LayerType::Maxout);
  s.group = k;
  return s;
}
LayerSpec conv(std::size_t filters, std::size_t kernel) {
  LayerSpec s = spec(LayerType::Conv, filters);
  s.kernel = kernel;
  return s;
}
LayerSpec pool(std::size_t window) {
  LayerSpec s = spec(LayerType::Pool);
  s.window = window;
  s.stride = window;
  return s;
}

Dataset blobs(std::size_t per_class, double noise, std::uint64_t seed) {
  return make_synthetic({SyntheticKind::Blobs, 2, per_class, noise, 1.0}, seed);
}

}  // namespace

TEST(Build, SmallMlpParameterReport) {
  NetworkConfig cfg{{2}, 2, {dense(8), chanout_layer(2)}};
  const auto b = build_network(cfg);
  ASSERT_EQ(b.report.size(), 4u);  // dense, channelout, dense, softmax
  EXPECT_EQ(b.report[0].parameters, 8u * 2u + 8u);
  EXPECT_EQ(b.report[1].parameters, 0u);
  EXPECT_EQ(b.report[2].parameters, 8u * 2u + 2u);  // channel-out keeps all 8 features
  EXPECT_EQ(b.parameter_count, 42u);
}

TEST(Build, ParameterCountsMatchClosedForm) {
  // maxout halves the width seen by the next layer
  const auto m = build_network({{2}, 2, {dense(44), maxout_layer(2), dense(44), maxout_layer(2)}});
  EXPECT_EQ(m.parameter_count, (2 * 44 + 44) + (22 * 44 + 44) + (22 * 2 + 2));
  const auto c = build_network({{2}, 2, {dense(32), chanout_layer(2), dense(32), chanout_layer(2)}});
  EXPECT_EQ(c.parameter_count, (2 * 32 + 32) + (32 * 32 + 32) + (32 * 2 + 2));
  // conv 1x8x8 -> 4x6x6 -> pool 4x3x3 -> dense 3
  const auto v = build_network({{1, 8, 8}, 3, {conv(4, 3), chanout_layer(2), pool(2)}});
  EXPECT_EQ(v.parameter_count, (4 * 9 + 4) + (36 * 3 + 3));
  EXPECT_EQ(v.feature_maps, (std::vector<std::size_t>{4}));
}

TEST(Build, IndivisibleGroupNamesLayer) {
  try {
    build_network({{2}, 2, {dense(8), chanout_layer(5)}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1 (channelout)"), std::string::npos) << e.what();
  }
}

TEST(Build, ReducedCifarStack) {
  NetworkConfig cfg{{3, 24, 24}, 10,
                    {conv(64, 5), chanout_layer(2), pool(2), conv(192, 5), chanout_layer(2), pool(2), conv(192, 3),
                     chanout_layer(2), dense(1210), chanout_layer(5)}};
  cfg.dropout_input = 0.2;
  cfg.dropout_hidden = 0.5;
  const auto b = build_network(cfg);
  EXPECT_EQ(b.feature_maps, (std::vector<std::size_t>{64, 192, 192, 1210}));
  EXPECT_EQ(b.report.back().output_shape, (Shape{10}));
  std::size_t dropouts = 0;
  for (const auto& r : b.report) dropouts += r.kind == "dropout";
  EXPECT_EQ(dropouts, 4u);  // input + after the first three channel-out blocks
}

TEST(Build, DropoutRange) {
  NetworkConfig cfg{{2}, 2, {dense(4)}};
  cfg.dropout_hidden = 1.0;
  EXPECT_THROW(build_network(cfg), ConfigError);
}

TEST(Build, GroupOfOneIsIdentity) {
  auto with = build_network({{3}, 2, {dense(4), chanout_layer(1), dense(4), chanout_layer(1)}});
  auto without = build_network({{3}, 2, {dense(4), dense(4)}});
  Rng r1(3), r2(3);
  init_parameters(with.net, r1);
  init_parameters(without.net, r2);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    Tensor x({3});
    for (auto& v : x.data()) v = rng.normal();
    EXPECT_EQ(network_forward(with.net, x, Mode::Infer, rng).output,
              network_forward(without.net, x, Mode::Infer, rng).output);
  }
}

TEST(Sgd, HandIteratedQuadratic) {
  Tensor w = Tensor::vector({1.0});
  std::vector<Tensor*> params{&w};
  SgdState state;
  for (double expected : {0.8, 0.46}) {
    std::vector<Tensor> grads{Tensor::vector({2.0 * w[0]})};
    sgd_step(params, grads, state, 0.1, 0.9);
    EXPECT_NEAR(w[0], expected, 1e-15);
  }
}

TEST(Sgd, ZeroRateAndZeroMomentum) {
  Tensor w = Tensor::vector({1.0, -2.0});
  std::vector<Tensor*> params{&w};
  std::vector<Tensor> grads{Tensor::vector({3.0, 4.0})};
  SgdState s1;
  sgd_step(params, grads, s1, 0.0, 0.9);
  EXPECT_EQ(w, Tensor::vector({1.0, -2.0}));
  SgdState s2;
  sgd_step(params, grads, s2, 0.5, 0.0);
  EXPECT_EQ(w, Tensor::vector({1.0 - 1.5, -2.0 - 2.0}));
  EXPECT_THROW(sgd_step(params, grads, s2, 0.1, 1.0), ConfigError);
}

TEST(Flip, Examples) {
  Rng rng(1);
  const Tensor img({1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(augment_flip(img, rng, 0.0), img);
  const Tensor f = augment_flip(img, rng, 1.0);
  EXPECT_EQ(f, Tensor({1, 2, 2}, {2, 1, 4, 3}));
  EXPECT_EQ(augment_flip(f, rng, 1.0), img);
  EXPECT_THROW(augment_flip(Tensor({4}), rng, 0.5), ConfigError);
}

TEST(Zca, WhitenedCovarianceNearIdentity) {
  const std::size_t n = 500, d = 10;
  Rng rng(4);
  // unequal scales plus correlation with the first coordinate; well conditioned
  Dataset data{{}, 1, {d}, {}};
  for (std::size_t r = 0; r < n; ++r) {
    Tensor x({d});
    for (std::size_t i = 0; i < d; ++i) x[i] = rng.normal() * static_cast<double>(i + 1) + (i > 0 ? 0.5 * x[0] : 3.0);
    data.samples.push_back({x, 0});
  }
  const auto [white, t] = zca_whiten(data);
  double worst = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double c = 0.0, mi = 0.0, mj = 0.0;
      for (const auto& s : white.samples) {
        mi += s.features[i];
        mj += s.features[j];
      }
      mi /= n;
      mj /= n;
      for (const auto& s : white.samples) c += (s.features[i] - mi) * (s.features[j] - mj);
      worst = std::max(worst, std::abs(c / n - (i == j ? 1.0 : 0.0)));
    }
  EXPECT_LT(worst, 0.05);
}

TEST(Zca, IsotropicDataNearIdentity) {
  Rng rng(6);
  Dataset data{{}, 1, {3}, {}};
  for (int r = 0; r < 5000; ++r) data.samples.push_back({Tensor::vector({rng.normal(), rng.normal(), rng.normal()}), 0});
  const auto t = fit_zca(data);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(t.matrix.at(i, j), i == j ? 1.0 : 0.0, 0.05);
}

TEST(Zca, ConstantColumnStaysSmall) {
  Rng rng(5);
  Dataset data{{}, 1, {3}, {}};
  for (int r = 0; r < 100; ++r) data.samples.push_back({Tensor::vector({rng.normal(), 7.0, rng.normal()}), 0});
  const auto [white, t] = zca_whiten(data);
  for (const auto& s : white.samples) {
    EXPECT_TRUE(s.features.all_finite());
    EXPECT_LT(std::abs(s.features[1]), 1e-6);
  }
}

TEST(Train, SeparableBlobsReachFullAccuracy) {
  auto b = build_network({{2}, 2, {}});
  Rng init(1);
  init_parameters(b.net, init);
  const Dataset data = blobs(100, 0.3, 2);
  const auto hist = train(b.net, data, data, {0.05, 0.9, 16, 50}, {}, Rng(3));
  ASSERT_EQ(hist.size(), 50u);
  EXPECT_EQ(hist.back().train_acc, 1.0);
  EXPECT_LT(hist[5].train_loss, hist[0].train_loss);
}

TEST(Train, UntrainedNetIsAtChance) {
  const std::size_t classes = 4;
  auto b = build_network({{2}, classes, {dense(16), chanout_layer(2)}});
  Rng rng(6);
  init_parameters(b.net, rng);
  Dataset data{{}, classes, {2}, {}};
  for (int i = 0; i < 4000; ++i)
    data.samples.push_back({Tensor::vector({rng.normal(), rng.normal()}), static_cast<int>(rng.below(classes))});
  EXPECT_NEAR(evaluate_accuracy(b.net, data), 1.0 / classes, 0.05);
}

TEST(Train, ZeroLearningRateLeavesAccuracy) {
  auto b = build_network({{2}, 2, {dense(8), chanout_layer(2)}});
  Rng init(7);
  init_parameters(b.net, init);
  const Dataset data = blobs(50, 1.0, 8);
  const auto hist = train(b.net, data, data, {0.0, 0.9, 8, 3}, {}, Rng(9));
  for (const auto& m : hist) EXPECT_EQ(m.train_acc, hist.front().train_acc);
}

TEST(Train, DeterministicGivenSeed) {
  NetworkConfig cfg{{2}, 2, {dense(8), chanout_layer(2)}};
  cfg.dropout_hidden = 0.2;
  cfg.layers.push_back(dense(8));
  cfg.layers.push_back(chanout_layer(2));
  const Dataset data = blobs(40, 1.0, 10);
  auto run = [&] {
    auto b = build_network(cfg);
    Rng init = Rng(11).substream("init");
    init_parameters(b.net, init);
    auto h = train(b.net, data, data, {0.05, 0.9, 8, 3}, {}, Rng(11));
    return std::pair{h.back().train_loss, b.net};
  };
  const auto [l1, n1] = run();
  const auto [l2, n2] = run();
  EXPECT_EQ(l1, l2);
  const auto p1 = parameters(n1);
  const auto p2 = parameters(n2);
  for (std::size_t t = 0; t < p1.size(); ++t) EXPECT_EQ(*p1[t], *p2[t]);
}

TEST(Train, EmptyDataset) {
  auto b = build_network({{2}, 2, {}});
  Dataset empty{{}, 2, {2}, {}};
  EXPECT_THROW(train(b.net, empty, empty, {}, {}, Rng(1)), DataError);
  EXPECT_TRUE(std::isnan(evaluate_accuracy(b.net, empty)));
}
