#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "meps/layers.hpp"
#include "support/gradcheck.hpp"
#include "support/layer_oracles.hpp"
#include "support/random.hpp"

namespace num = meps::num;
namespace geo = meps::geo;
namespace layers = meps::layers;
using meps::testing::random_tensor;
using num::Tensor;

namespace {

Tensor random_coords(num::Rng& rng, std::size_t n) { return random_tensor(rng, {n, 3}); }

std::vector<double> row_vec(const Tensor& t, std::size_t r) {
  auto d = t.data().subspan(r * t.size(1), t.size(1));
  return {d.begin(), d.end()};
}

void expect_matrix_near(const Tensor& got, const meps::testing::Matrix& want, double tol) {
  ASSERT_EQ(got.size(0), want.size());
  for (std::size_t r = 0; r < want.size(); ++r)
    for (std::size_t c = 0; c < want[r].size(); ++c) ASSERT_NEAR(got.at(r, c), want[r][c], tol) << r << "," << c;
}

void zero(Tensor& t) {
  for (auto& x : t.mutable_data()) x = 0.0;
}

}  // namespace

TEST(FeastRelation, ZeroParametersGiveUniformWeights) {
  num::Rng rng(1);
  auto l = layers::FeastConvLayer::init(5, 3, 4, rng);
  zero(l.u);
  zero(l.v);
  zero(l.c);
  auto q = layers::feast_relation(l, random_tensor(rng, {7, 5}), random_tensor(rng, {7, 5}));
  for (double x : q.data()) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(FeastRelation, OnlyBiasGivesSoftmaxOfBias) {
  num::Rng rng(2);
  auto l = layers::FeastConvLayer::init(5, 3, 3, rng);
  zero(l.u);
  zero(l.v);
  l.c = Tensor::vector({0.5, -1.0, 2.0});
  auto q = layers::feast_relation(l, random_tensor(rng, {6, 5}), random_tensor(rng, {6, 5}));
  const auto want = meps::testing::softmax_ref({0.5, -1.0, 2.0});
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t m = 0; m < 3; ++m) EXPECT_NEAR(q.at(r, m), want[m], 1e-15);
}

TEST(FeastRelation, MatchesTermwiseFormula) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(seed);
    auto l = meps::testing::random_feast(rng, 6, 2, 5);
    auto xi = random_tensor(rng, {4, 6}), xk = random_tensor(rng, {4, 6});
    auto q = layers::feast_relation(l, xi, xk);
    for (std::size_t r = 0; r < 4; ++r) {
      auto want = meps::testing::feast_relation_ref(l, row_vec(xi, r), row_vec(xk, r));
      for (std::size_t m = 0; m < 5; ++m) ASSERT_NEAR(q.at(r, m), want[m], 1e-14);
    }
  }
}

TEST(FeastRelation, RejectsWrongWidth) {
  num::Rng rng(3);
  auto l = layers::FeastConvLayer::init(5, 3, 2, rng);
  EXPECT_THROW(layers::feast_relation(l, random_tensor(rng, {2, 4}), random_tensor(rng, {2, 5})),
               meps::DimensionError);
}

TEST(FeastForward, UniformSingleFilterIdentityIsNeighborMean) {
  num::Rng rng(4);
  auto l = layers::FeastConvLayer::init(3, 3, 1, rng);
  zero(l.u);
  zero(l.v);
  zero(l.c);
  l.W = Tensor({1, 3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto x = random_tensor(rng, {6, 3});
  auto g = meps::testing::random_graph(rng, 6, 3);
  auto y = layers::feast_forward(l, x, g);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t d = 0; d < 3; ++d) {
      double mean = 0.0;
      for (auto k : g.row(i)) mean += x.at(k, d);
      EXPECT_NEAR(y.at(i, d), mean / 3.0, 1e-15);
    }
}

TEST(FeastForward, SingleNeighborIsAffineMap) {
  num::Rng rng(5);
  auto l = meps::testing::random_feast(rng, 4, 2, 1);
  auto x = random_tensor(rng, {3, 4});
  auto g = geo::NeighborhoodGraph::from_rows(1, {{2}, {0}, {1}});
  auto y = layers::feast_forward(l, x, g);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto k = g.row(i)[0];
    for (std::size_t d = 0; d < 2; ++d) {
      double want = l.b[d];
      for (std::size_t j = 0; j < 4; ++j) want += l.W[j * 2 + d] * x.at(k, j);
      EXPECT_NEAR(y.at(i, d), want, 1e-14);
    }
  }
}

TEST(FeastForward, MatchesTripleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    num::Rng rng(100 + seed);
    auto l = meps::testing::random_feast(rng, 3, 4, 2);
    auto x = random_tensor(rng, {8, 3});
    auto g = meps::testing::random_graph(rng, 8, 3);
    expect_matrix_near(layers::feast_forward(l, x, g),
                       meps::testing::feast_forward_ref(l, meps::testing::to_matrix(x), g), 1e-12);
  }
}

TEST(FeastForward, EmptyNeighborRowIsContractError) {
  num::Rng rng(6);
  auto l = layers::FeastConvLayer::init(2, 2, 2, rng);
  auto g = geo::NeighborhoodGraph::from_rows(1, {{1}, {}});
  EXPECT_THROW(layers::feast_forward(l, random_tensor(rng, {2, 2}), g), meps::ContractError);
}

TEST(FeastForward, GraphSizeMismatchRejected) {
  num::Rng rng(7);
  auto l = layers::FeastConvLayer::init(2, 2, 2, rng);
  auto g = meps::testing::random_graph(rng, 5, 2);
  EXPECT_THROW(layers::feast_forward(l, random_tensor(rng, {4, 2}), g), meps::DimensionError);
}

TEST(FeastForward, InvariantToNeighborOrder) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(200 + seed);
    auto l = meps::testing::random_feast(rng, 4, 3, 3);
    auto x = random_tensor(rng, {10, 4});
    auto g = meps::testing::random_graph(rng, 10, 4);
    auto a = layers::feast_forward(l, x, g);
    auto b = layers::feast_forward(l, x, meps::testing::shuffle_rows(rng, g));
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], 1e-13);
  }
}

TEST(Manifest, TotalParameterCount) {
  auto m = layers::BaseLearnerManifest::make(16, 9);
  EXPECT_EQ(m.total_params(), (2u * 16 * 32 + 32) + (32u * 9 + 9));
  EXPECT_EQ(m.blocks().size(), 2u);
  EXPECT_EQ(m.blocks()[0].cols, 32u);
  EXPECT_EQ(m.blocks()[1].rows, 9u);
  num::Rng rng(8);
  auto l = layers::MetaConvLayer::init(16, 32, 9, meps::testing::small_encoder(), rng);
  EXPECT_EQ(l.head.weight.size(1), m.total_params());
}

TEST(Manifest, DefaultEncoderIsFullSize) {
  layers::EncoderSpec spec;
  EXPECT_EQ(spec.widths, (std::vector<std::size_t>{64, 128}));
  EXPECT_EQ(spec.embedding, 1024u);
}

TEST(MetaEncode, CoincidentPointsGiveHeadOfPooledZeroInput) {
  num::Rng rng(9);
  auto l = meps::testing::random_meta(rng, 3, 2, 2, meps::testing::small_encoder());
  auto patch = Tensor({5, 3}, std::vector<double>(15, 0.0));
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t d = 0; d < 3; ++d) patch.mutable_data()[r * 3 + d] = 1.5 - 0.25 * static_cast<double>(d);
  auto theta = layers::meta_encode(l, patch);
  std::vector<double> h{0.0, 0.0, 0.0};
  for (const auto& lin : l.encoder) h = meps::testing::dense_ref(lin, h, true);
  const auto want = meps::testing::dense_ref(l.head, h, false);
  ASSERT_EQ(theta.numel(), want.size());
  for (std::size_t t = 0; t < want.size(); ++t) EXPECT_NEAR(theta[t], want[t], 1e-14);
}

TEST(MetaEncode, TooSmallPatchRejected) {
  num::Rng rng(10);
  auto l = layers::MetaConvLayer::init(3, 2, 2, meps::testing::small_encoder(), rng);
  EXPECT_THROW(layers::meta_encode(l, Tensor({1, 3}, {0, 0, 0})), meps::ContractError);
}

TEST(MetaEncode, InvariantToNeighborOrderAndTranslation) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(300 + seed);
    auto l = meps::testing::random_meta(rng, 3, 2, 2, meps::testing::small_encoder());
    const std::size_t rows = 2 + rng.below(10);
    auto patch = random_tensor(rng, {rows, 3});
    auto base = layers::meta_encode(l, patch);

    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span(order).subspan(1));
    auto permuted = layers::meta_encode(l, num::gather_rows(patch, order));
    for (std::size_t t = 0; t < base.numel(); ++t)
      ASSERT_NEAR(permuted[t], base[t], 1e-12 * std::max(1.0, std::abs(base[t]))) << "seed " << seed;

    auto shifted = patch.detach();
    const double sx = rng.uniform(-3, 3), sy = rng.uniform(-3, 3), sz = rng.uniform(-3, 3);
    for (std::size_t r = 0; r < rows; ++r) {
      shifted.mutable_data()[r * 3] += sx;
      shifted.mutable_data()[r * 3 + 1] += sy;
      shifted.mutable_data()[r * 3 + 2] += sz;
    }
    auto moved = layers::meta_encode(l, shifted);
    for (std::size_t t = 0; t < base.numel(); ++t)
      ASSERT_NEAR(moved[t], base[t], 1e-12 * std::max(1.0, std::abs(base[t]))) << "seed " << seed;
  }
}

TEST(MetaEncode, MatchesScalarOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    num::Rng rng(400 + seed);
    auto l = meps::testing::random_meta(rng, 3, 2, 2, meps::testing::small_encoder());
    auto patch = random_tensor(rng, {4, 3});
    auto theta = layers::meta_encode(l, patch);
    auto want = meps::testing::meta_encode_ref(l, meps::testing::to_matrix(patch));
    for (std::size_t t = 0; t < want.size(); ++t) ASSERT_NEAR(theta[t], want[t], 1e-12);
  }
}

TEST(BaseRelation, ZeroWeightsGiveSoftmaxOfOutputBias) {
  auto man = layers::BaseLearnerManifest::make(3, 4);
  std::vector<double> theta(man.total_params(), 0.0);
  const std::vector<double> c{0.1, -0.7, 1.3, 0.0};
  for (std::size_t m = 0; m < 4; ++m) theta[man.b2_offset() + m] = c[m];
  num::Rng rng(11);
  auto q = layers::base_relation(man, Tensor::vector(theta), random_tensor(rng, {5, 3}), random_tensor(rng, {5, 3}));
  const auto want = meps::testing::softmax_ref(c);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t m = 0; m < 4; ++m) EXPECT_NEAR(q.at(r, m), want[m], 1e-15);
}

TEST(BaseRelation, MatchesHandWiredMlp) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(500 + seed);
    auto man = layers::BaseLearnerManifest::make(4, 3);
    auto theta = random_tensor(rng, {man.total_params()}, 0.5);
    auto xi = random_tensor(rng, {6, 4}), xk = random_tensor(rng, {6, 4});
    auto q = layers::base_relation(man, theta, xi, xk);
    std::vector<double> th(theta.data().begin(), theta.data().end());
    for (std::size_t r = 0; r < 6; ++r) {
      auto want = meps::testing::base_relation_ref(man, th, row_vec(xi, r), row_vec(xk, r));
      for (std::size_t m = 0; m < 3; ++m) ASSERT_NEAR(q.at(r, m), want[m], 1e-13);
    }
  }
}

TEST(BaseRelation, LayoutMismatchIsManifestError) {
  auto man = layers::BaseLearnerManifest::make(4, 3);
  num::Rng rng(12);
  EXPECT_THROW(layers::base_relation(man, Tensor::zeros({man.total_params() - 1}), random_tensor(rng, {2, 4}),
                                     random_tensor(rng, {2, 4})),
               meps::ManifestError);
}

TEST(RelationProperty, BothRelationsArePositiveAndSumToOne) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(600 + seed);
    const auto c = 1 + rng.below(6), m = 1 + rng.below(9);
    auto fl = meps::testing::random_feast(rng, c, 2, m);
    auto man = layers::BaseLearnerManifest::make(c, m);
    const double s = rng.uniform(0.1, 20.0);
    auto xi = random_tensor(rng, {5, c}, s), xk = random_tensor(rng, {5, c}, s);
    for (const auto& q : {layers::feast_relation(fl, xi, xk),
                          layers::base_relation(man, random_tensor(rng, {man.total_params()}, 2.0), xi, xk)}) {
      for (std::size_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
          ASSERT_GE(q.at(r, j), 0.0);
          sum += q.at(r, j);
        }
        ASSERT_NEAR(sum, 1.0, 1e-12) << "seed " << seed;
      }
    }
  }
}

TEST(MetaForward, ReducesToBaselineWhenHeadEmitsConstantBias) {
  num::Rng rng(13);
  auto meta = meps::testing::random_meta(rng, 3, 4, 2, meps::testing::small_encoder());
  zero(meta.head.weight);
  zero(meta.head.bias);
  const std::vector<double> c{0.4, -0.9};
  meta.head.bias.mutable_data()[meta.manifest.b2_offset()] = c[0];
  meta.head.bias.mutable_data()[meta.manifest.b2_offset() + 1] = c[1];

  auto base = layers::FeastConvLayer::init(3, 4, 2, rng);
  zero(base.u);
  zero(base.v);
  base.c = Tensor::vector(c);
  base.W = meta.W;
  base.b = meta.b;

  auto x = random_tensor(rng, {9, 3});
  auto coords = random_coords(rng, 9);
  auto g = meps::testing::random_graph(rng, 9, 3);
  auto a = layers::meta_forward(meta, x, coords, g);
  auto b = layers::feast_forward(base, x, g);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
}

TEST(MetaForward, MatchesTripleLoopOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    num::Rng rng(700 + seed);
    auto l = meps::testing::random_meta(rng, 3, 4, 2, meps::testing::small_encoder());
    auto x = random_tensor(rng, {8, 3});
    auto coords = random_coords(rng, 8);
    auto g = meps::testing::random_graph(rng, 8, 3);
    expect_matrix_near(layers::meta_forward(l, x, coords, g),
                       meps::testing::meta_forward_ref(l, meps::testing::to_matrix(x), meps::testing::to_matrix(coords), g),
                       1e-12);
  }
}

TEST(MetaForward, InvariantToNeighborOrder) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(800 + seed);
    auto l = meps::testing::random_meta(rng, 4, 3, 3, meps::testing::small_encoder());
    auto x = random_tensor(rng, {10, 4});
    auto coords = random_coords(rng, 10);
    auto g = meps::testing::random_graph(rng, 10, 4);
    auto a = layers::meta_forward(l, x, coords, g);
    auto b = layers::meta_forward(l, x, coords, meps::testing::shuffle_rows(rng, g));
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_NEAR(a[i], b[i], 1e-13) << "seed " << seed;
  }
}

TEST(LayerGradients, FeastMatchesFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(900 + seed);
    const std::size_t n = 4 + rng.below(9);
    auto l = meps::testing::random_feast(rng, 4, 4, 2);
    num::ParameterSet params;
    l.register_params(params, "conv");
    auto x = random_tensor(rng, {n, 4}, 1.0, true);
    auto g = meps::testing::random_graph(rng, n, 3);
    auto r = random_tensor(rng, {n, 4});
    std::vector<std::pair<std::string, Tensor>> leaves{{"x", x}};
    for (auto& e : params.entries()) leaves.emplace_back(e.name, e.tensor);
    auto res = meps::testing::check_gradients(
        [&] { return num::sum(num::mul(layers::feast_forward(l, x, g), r)); }, leaves);
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " worst " << res.worst;
    worst = std::max(worst, res.max_rel_error);
  }
  RecordProperty("max_rel_error", std::to_string(worst));
}

TEST(LayerGradients, MetaMatchesFiniteDifferences) {
  double worst = 0.0;
  std::uint64_t draw = 0;
  for (int accepted = 0; accepted < 100; ++draw) {
    num::Rng rng(1000 + draw);
    const std::size_t n = 4 + rng.below(9);
    auto l = meps::testing::random_meta(rng, 4, 4, 2, meps::testing::small_encoder());
    auto x = random_tensor(rng, {n, 4}, 1.0, true);
    auto coords = random_coords(rng, n);
    auto g = meps::testing::random_graph(rng, n, 3);
    // Instances sitting on a ReLU or max-pool kink have no gradient to check.
    if (meps::testing::meta_kink_margin(l, meps::testing::to_matrix(x), meps::testing::to_matrix(coords), g) < 1e-3) {
      continue;
    }
    ++accepted;
    const auto seed = draw;
    num::ParameterSet params;
    l.register_params(params, "conv");
    auto patches = layers::make_patches(coords, g);
    auto r = random_tensor(rng, {n, 4});
    std::vector<std::pair<std::string, Tensor>> leaves{{"x", x}};
    for (auto& e : params.entries()) leaves.emplace_back(e.name, e.tensor);
    auto res = meps::testing::check_gradients(
        [&] { return num::sum(num::mul(layers::meta_forward(l, x, patches, g), r)); }, leaves);
    EXPECT_LT(res.max_rel_error, 1e-4) << "seed " << seed << " worst " << res.worst;
    worst = std::max(worst, res.max_rel_error);
  }
  RecordProperty("max_rel_error", std::to_string(worst));
}

TEST(Probe, SharedGapEqualsCenterDifferenceNorm) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(1100 + seed);
    auto meta = meps::testing::random_meta(rng, 4, 2, 3, meps::testing::small_encoder());
    const auto& man = meta.manifest;
    std::vector<double> theta(man.total_params());
    for (auto& t : theta) t = rng.normal();
    std::vector<double> vi(4), vj(4), vk(4);
    for (auto* v : {&vi, &vj, &vk})
      for (auto& x : *v) x = rng.normal();
    auto pi = random_tensor(rng, {4, 3}), pj = random_tensor(rng, {4, 3});
    auto gap = layers::preactivation_gap_probe(theta, meta, vi, vj, vk, pi, pj);
    double want = 0.0;
    for (std::size_t r = 0; r < man.hidden; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += theta[r * 8 + c] * (vi[c] - vj[c]);
      want += s * s;
    }
    ASSERT_NEAR(gap.shared, std::sqrt(want), 1e-12 * std::max(1.0, std::sqrt(want)));
  }
}

TEST(Probe, SharedGapVanishesForEqualCenters) {
  num::Rng rng(14);
  auto meta = meps::testing::random_meta(rng, 3, 2, 2, meps::testing::small_encoder());
  std::vector<double> theta(meta.manifest.total_params());
  for (auto& t : theta) t = rng.normal();
  std::vector<double> v{0.3, -1.2, 0.8}, vk{1, 2, 3};
  auto gap = layers::preactivation_gap_probe(theta, meta, v, v, vk, random_tensor(rng, {5, 3}),
                                             random_tensor(rng, {5, 3}));
  EXPECT_EQ(gap.shared, 0.0);
}

TEST(Probe, PatchPerturbationMovesOnlyMetaGap) {
  num::Rng rng(15);
  auto meta = meps::testing::random_meta(rng, 3, 2, 2, meps::testing::small_encoder());
  std::vector<double> theta(meta.manifest.total_params());
  for (auto& t : theta) t = rng.normal();
  std::vector<double> vi{0.3, -1.2, 0.8}, vj{-0.5, 0.1, 0.9}, vk{1, 2, 3};
  auto pi = random_tensor(rng, {5, 3}), pj = random_tensor(rng, {5, 3});
  auto before = layers::preactivation_gap_probe(theta, meta, vi, vj, vk, pi, pj);
  bool moved = false;
  for (int trial = 0; trial < 100 && !moved; ++trial) {
    auto pj2 = pj.detach();
    pj2.mutable_data()[3 * (1 + rng.below(4)) + rng.below(3)] += rng.normal();
    auto after = layers::preactivation_gap_probe(theta, meta, vi, vj, vk, pi, pj2);
    EXPECT_EQ(after.shared, before.shared);
    moved = std::abs(after.meta - before.meta) > 1e-6;
  }
  EXPECT_TRUE(moved);
}
