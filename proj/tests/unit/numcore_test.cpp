#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "meps/numcore/ops.hpp"
#include "meps/numcore/optim.hpp"
#include "meps/numcore/params.hpp"
#include "meps/numcore/rng.hpp"
#include "support/gradcheck.hpp"
#include "support/random.hpp"

namespace num = meps::num;
using meps::testing::check_gradients;
using meps::testing::random_tensor;

namespace {

num::Tensor identity(std::size_t n) {
  auto t = num::Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1.0;
  return t;
}

num::OptimizerState make_opt(double lr, double wd, num::UpdateRule rule = num::UpdateRule::Sgd) {
  num::OptimizerState opt;
  opt.learning_rate = lr;
  opt.weight_decay = wd;
  opt.rule = rule;
  return opt;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  num::Rng rng(1);
  auto m = random_tensor(rng, {3, 4});
  auto out = num::matmul(identity(3), m);
  ASSERT_EQ(out.shape(), m.shape());
  for (std::size_t i = 0; i < m.numel(); ++i) EXPECT_EQ(out[i], m[i]);
}

TEST(Matmul, HandEvaluatedProduct) {
  auto out = num::matmul(num::Tensor::matrix({{1, 2}, {3, 4}}), num::Tensor::matrix({{1}, {1}}));
  ASSERT_EQ(out.shape(), (num::Shape{2, 1}));
  EXPECT_EQ(out[0], 3.0);
  EXPECT_EQ(out[1], 7.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    num::matmul(num::Tensor::zeros({2, 3}), num::Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const meps::DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  num::Rng rng(2);
  auto a = random_tensor(rng, {3, 4}, 1.0, true);
  auto b = random_tensor(rng, {4, 2});
  num::backward(num::sum(num::matmul(a, b)));
  // ones(3x2) * B^T: row i of the gradient is the row sums of B.
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(a.grad()[i * 4 + j], b.at(j, 0) + b.at(j, 1), 1e-15);

  auto res = check_gradients([&] { return num::sum(num::matmul(a, b)); }, {{"a", a}}, 1e-5);
  EXPECT_LT(res.max_rel_error, 1e-8) << res.worst;
}

TEST(Softmax, EqualLogitsAreUniform) {
  auto y = num::softmax(num::Tensor::vector({2.5, 2.5, 2.5}), 0);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ZeroAndLogTwo) {
  auto y = num::softmax(num::Tensor::vector({0.0, std::log(2.0)}), 0);
  EXPECT_NEAR(y[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(y[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, RejectsNaN) {
  EXPECT_THROW(num::softmax(num::Tensor::vector({0.0, NAN}), 0), meps::NumericError);
}

TEST(Softmax, PropertiesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(seed);
    const std::size_t rows = 1 + rng.below(4), len = 2 + rng.below(7);
    auto x = random_tensor(rng, {rows, len}, 5.0);
    auto y = num::softmax(x, 1);
    // Shift invariance.
    const double c = rng.normal(0.0, 10.0);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += c;
    auto ys = num::softmax(num::Tensor({rows, len}, shifted), 1);
    // Permutation equivariance along the axis.
    std::vector<std::size_t> perm(len);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span(perm));
    std::vector<double> permuted(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) permuted[r * len + j] = x.at(r, perm[j]);
    auto yp = num::softmax(num::Tensor({rows, len}, permuted), 1);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        EXPECT_GT(y.at(r, j), 0.0);
        s += y.at(r, j);
        EXPECT_NEAR(ys.at(r, j), y.at(r, j), 1e-12);
        EXPECT_NEAR(yp.at(r, j), y.at(r, perm[j]), 1e-15);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, NonLastAxis) {
  num::Rng rng(5);
  auto x = random_tensor(rng, {3, 4, 2});
  auto y = num::softmax(x, 1);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t c = 0; c < 2; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < 4; ++b) s += y[(a * 4 + b) * 2 + c];
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  auto logits = num::Tensor::zeros({3, 7});
  std::vector<std::size_t> labels{0, 3, 6};
  EXPECT_NEAR(num::cross_entropy(logits, labels).item(), std::log(7.0), 1e-15);
}

TEST(CrossEntropy, SaturatesToZero) {
  std::vector<std::size_t> labels{1};
  double prev = INFINITY;
  for (double big : {10.0, 50.0, 200.0, 800.0}) {
    auto loss = num::cross_entropy(num::Tensor({1, 3}, {0.0, big, 0.0}), labels).item();
    EXPECT_LE(loss, prev);
    prev = loss;
  }
  EXPECT_EQ(prev, 0.0);
}

TEST(CrossEntropy, MatchesScalarLogSumExpOracle) {
  num::Rng rng(11);
  auto logits = random_tensor(rng, {4, 5}, 3.0);
  std::vector<std::size_t> labels{4, 0, 2, 2};
  double oracle = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    long double z = 0.0L;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(static_cast<long double>(logits.at(i, j)));
    oracle += static_cast<double>(std::log(z) - logits.at(i, labels[i]));
  }
  oracle /= 4.0;
  EXPECT_NEAR(num::cross_entropy(logits, labels).item(), oracle, 1e-12);
}

TEST(CrossEntropy, LabelOutOfRange) {
  std::vector<std::size_t> labels{5};
  EXPECT_THROW(num::cross_entropy(num::Tensor::zeros({1, 5}), labels), meps::IndexError);
}

TEST(Backward, SumGivesOnes) {
  num::Rng rng(3);
  auto x = random_tensor(rng, {2, 3}, 1.0, true);
  num::backward(num::sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwoX) {
  num::Rng rng(4);
  auto x = random_tensor(rng, {5}, 1.0, true);
  num::backward(num::sum(num::mul(x, x)));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = num::Tensor::zeros({2}, true);
  EXPECT_THROW(num::backward(num::scale(x, 2.0)), meps::ContractError);
}

TEST(Backward, ReuseEqualsDuplicatedLeaf) {
  // f(x) = sum(relu(x) * (x @ W)) uses x along two paths. Rebuilding it with
  // two independent copies of x must give path gradients that sum to the
  // reused-leaf gradient.
  num::Rng rng(8);
  auto x = random_tensor(rng, {3, 3}, 1.0, true);
  auto w = random_tensor(rng, {3, 3});
  num::backward(num::sum(num::mul(num::relu(x), num::matmul(x, w))));

  auto x1 = x.detach().set_requires_grad(true);
  auto x2 = x.detach().set_requires_grad(true);
  num::backward(num::sum(num::mul(num::relu(x1), num::matmul(x2, w))));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(x.grad()[i], x1.grad()[i] + x2.grad()[i], 1e-14);
}

TEST(Backward, AccumulatesAcrossCalls) {
  auto x = num::Tensor::vector({1.0, -2.0}, true);
  num::backward(num::sum(x));
  num::backward(num::sum(x));
  EXPECT_EQ(x.grad()[0], 2.0);
  EXPECT_EQ(x.grad()[1], 2.0);
}

TEST(NoGrad, RecordsNoHistory) {
  auto x = num::Tensor::vector({1.0}, true);
  num::NoGradGuard guard;
  EXPECT_FALSE(num::scale(x, 2.0).requires_grad());
}

// Every differentiable op against central differences on random small
// tensors, 100 seeds each.
TEST(GradientProperty, AllOpsMatchFiniteDifferences) {
  double worst = 0.0;
  std::string where;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    num::Rng rng(seed);
    auto a = random_tensor(rng, {4, 3}, 1.0, true);
    auto b = random_tensor(rng, {3, 5}, 1.0, true);
    auto c = random_tensor(rng, {4, 3}, 1.0, true);
    auto bias = random_tensor(rng, {3}, 1.0, true);
    auto r = random_tensor(rng, {4, 5});
    auto r3 = random_tensor(rng, {4, 3});
    std::vector<std::size_t> labels{rng.below(5), rng.below(5), rng.below(5), rng.below(5)};
    std::vector<std::size_t> rows{3, 0, 0, 2, 1};
    std::vector<std::size_t> seg{0, 1, 4};
    auto sm_w = random_tensor(rng, {2, 6}, 1.0, true);  // two 2x3 matrices

    const std::vector<std::pair<std::string, std::function<num::Tensor()>>> cases = {
        {"matmul", [&] { return num::sum(num::mul(num::matmul(a, b), r)); }},
        {"transpose", [&] { return num::sum(num::mul(num::matmul(num::transpose(b), num::transpose(a)), num::transpose(r))); }},
        {"add_sub", [&] { return num::sum(num::mul(num::sub(num::add(a, c), num::scale(c, 3.0)), r3)); }},
        {"mul", [&] { return num::sum(num::mul(num::mul(a, c), r3)); }},
        {"relu", [&] { return num::sum(num::mul(num::relu(a), r3)); }},
        {"add_bias", [&] { return num::sum(num::mul(num::add_bias(a, bias), r3)); }},
        {"softmax", [&] { return num::sum(num::mul(num::softmax(num::matmul(a, b), 1), r)); }},
        {"softmax_axis0", [&] { return num::sum(num::mul(num::softmax(a, 0), r3)); }},
        {"cross_entropy", [&] { return num::cross_entropy(num::matmul(a, b), labels); }},
        {"gather", [&] { return num::sum(num::mul(num::gather_rows(a, rows), num::gather_rows(r3, rows))); }},
        {"concat_slice", [&] { return num::sum(num::mul(num::slice_cols(num::concat_cols(a, c), 2, 3), r3)); }},
        {"reshape_permute", [&] {
           auto t = num::permute(num::reshape(a, {2, 2, 3}), {2, 0, 1});
           return num::sum(num::mul(num::reshape(t, {4, 3}), r3));
         }},
        {"segment_max", [&] { return num::sum(num::mul(num::segment_max(a, seg), num::Tensor::matrix({{1, -2, 3}, {0.5, 1, -1}}))); }},
        {"segment_matvec", [&] {
           return num::sum(num::mul(num::segment_matvec(sm_w, a, seg, 2, 3),
                                    num::Tensor::matrix({{1, 2}, {-1, 0.5}, {3, 1}, {0.2, -2}})));
         }},
        {"mixture_aggregate", [&] {
           // 3 vertices, edges 0:{1,2} 1:{0} 2:{0,1}; two filters, out dim 2
           auto q = num::softmax(num::slice_cols(num::matmul(num::gather_rows(a, {0, 1, 2, 3, 0}), b), 0, 2), 1);
           auto y = num::slice_cols(num::matmul(num::gather_rows(c, {1, 2, 3}), b), 0, 4);
           auto out = num::mixture_aggregate(q, y, {0, 2, 3, 5}, {1, 2, 0, 0, 1}, 2);
           return num::sum(num::mul(out, num::Tensor::matrix({{1, -1}, {2, 0.5}, {-3, 1}})));
         }},
    };
    for (const auto& [name, f] : cases) {
      auto res = check_gradients(f, {{"a", a}, {"b", b}, {"c", c}, {"bias", bias}, {"w", sm_w}});
      if (res.max_rel_error > worst) {
        worst = res.max_rel_error;
        where = name + ":" + res.worst + " seed " + std::to_string(seed);
      }
    }
  }
  EXPECT_LT(worst, 1e-4) << where;
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  num::Rng rng(1);
  num::ParameterSet params;
  auto& p = params.add("p", random_tensor(rng, {3, 2}));
  const std::vector<double> before(p.data().begin(), p.data().end());
  num::backward(num::sum(num::mul(p, p)));
  auto opt = make_opt(0.0, 0.0);
  num::sgd_step(params, opt);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), before);
  EXPECT_FALSE(p.has_grad());
  EXPECT_EQ(p.shape(), (num::Shape{3, 2}));
}

TEST(Sgd, OneStep) {
  num::ParameterSet params;
  auto& p = params.add("p", num::Tensor::vector({1.0}));
  num::backward(num::sum(p));
  auto opt = make_opt(0.1, 0.0);
  num::sgd_step(params, opt);
  EXPECT_DOUBLE_EQ(p[0], 0.9);
}

TEST(Sgd, WeightDecayOnly) {
  num::ParameterSet params;
  auto& p = params.add("p", num::Tensor::vector({1.0}));
  num::backward(num::scale(num::sum(p), 0.0));
  auto opt = make_opt(0.1, 1e-4);
  num::sgd_step(params, opt);
  EXPECT_DOUBLE_EQ(p[0], 0.99999);
}

TEST(Sgd, MissingGradIsContractError) {
  num::ParameterSet params;
  params.add("used", num::Tensor::vector({1.0}));
  params.add("unused", num::Tensor::vector({1.0}));
  num::backward(num::sum(params.get("used")));
  num::OptimizerState opt;
  EXPECT_THROW(num::sgd_step(params, opt), meps::ContractError);
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  num::ParameterSet params;
  auto& p = params.add("p", num::Tensor::vector({1.0, -3.0}));
  num::backward(num::sum(num::mul(p, p)));
  auto opt = make_opt(0.0, 0.0, num::UpdateRule::Adam);
  num::optimizer_step(params, opt);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -3.0);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  num::ParameterSet params;
  auto& p = params.add("p", num::Tensor::vector({1.0, -3.0}));
  num::backward(num::sum(num::mul(p, p)));
  auto opt = make_opt(0.01, 0.0, num::UpdateRule::Adam);
  num::optimizer_step(params, opt);
  // Bias-corrected first step is lr * g / (|g| + eps).
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], -2.99, 1e-9);
}

TEST(Parameters, JsonRoundTripPreservesBits) {
  num::Rng rng(9);
  num::ParameterSet params;
  params.add("w", random_tensor(rng, {2, 3}));
  params.add("b", random_tensor(rng, {3}));
  const auto doc = num::parameters_to_json(params);
  auto back = num::parameters_from_json(nlohmann::json::parse(doc.dump()));
  back.check_layout(params);
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params.entries()[t].tensor.numel(); ++i)
      EXPECT_EQ(back.entries()[t].tensor[i], params.entries()[t].tensor[i]);
}

TEST(Parameters, VersionMismatchIsManifestError) {
  nlohmann::json doc = {{"format_version", 99}, {"parameters", nlohmann::json::array()}};
  EXPECT_THROW(num::parameters_from_json(doc), meps::ManifestError);
}

TEST(Rng, SameSeedSameStream) {
  num::Rng a(42), b(42), c(42, 1);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    differs = differs || x != c.normal();
  }
  EXPECT_TRUE(differs);
}
