#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "scbch/losses.hpp"

using namespace scbch;
using nd::Matrix;

namespace {


NeighborSet one_anchor(std::vector<std::size_t> idx, std::vector<double> s1,
                       std::vector<double> s2) {
  NeighborSet nb;
  nb.indices = {std::move(idx)};
  nb.sim_image = {std::move(s1)};
  nb.sim_text = {std::move(s2)};
  return nb;
}

}  // namespace

// ---------------------------------------------------------------------------
// Jaccard, mask, pairing
// ---------------------------------------------------------------------------

TEST(Jaccard, Examples) {
  const std::vector<double> a{1, 0, 1}, b{1, 1, 0}, c{1, 0, 0}, d{0, 1, 1};
  EXPECT_DOUBLE_EQ(jaccard(a, b), 1.0 / 3.0);
  EXPECT_EQ(jaccard(a, a), 1.0);
  EXPECT_EQ(jaccard(c, d), 0.0);
  const std::vector<double> z{0, 0, 0};
  EXPECT_EQ(jaccard(z, z), 0.0);
  const std::vector<double> short_row{1, 0};
  EXPECT_THROW(jaccard(a, short_row), ShapeError);
}

TEST(Jaccard, MatrixInvariantsAndOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 20; ++t) {
    const Matrix y = oracle::random_labels(rng, 12, 6);
    const Matrix r = jaccard_matrix(y);
    const auto ref = oracle::jaccard_grid(oracle::to_grid(y));
    const Matrix m = positive_mask(r);
    for (std::size_t i = 0; i < 12; ++i) {
      EXPECT_EQ(r(i, i), 1.0);
      EXPECT_EQ(m(i, i), 0.0);
      for (std::size_t j = 0; j < 12; ++j) {
        EXPECT_EQ(r(i, j), r(j, i));
        EXPECT_GE(r(i, j), 0.0);
        EXPECT_LE(r(i, j), 1.0);
        EXPECT_NEAR(r(i, j), ref[i][j], 1e-15);
        if (i != j) { EXPECT_EQ(m(i, j), r(i, j) > 0.0 ? 1.0 : 0.0); }
      }
    }
  }
}

TEST(Pairing, StrategiesOnExamples) {
  const std::vector<double> a{1, 1, 0}, same{1, 1, 0}, part{1, 0, 1}, none{0, 0, 1};
  EXPECT_EQ(classify_pair(PairingStrategy::all, a, same), PairKind::positive);
  EXPECT_EQ(classify_pair(PairingStrategy::all, a, part), PairKind::negative);
  EXPECT_EQ(classify_pair(PairingStrategy::any, a, part), PairKind::positive);
  EXPECT_EQ(classify_pair(PairingStrategy::any, a, none), PairKind::negative);
  EXPECT_EQ(classify_pair(PairingStrategy::bidirectional, a, same), PairKind::positive);
  EXPECT_EQ(classify_pair(PairingStrategy::bidirectional, a, part), PairKind::soft);
  EXPECT_EQ(classify_pair(PairingStrategy::bidirectional, a, none), PairKind::negative);
}

TEST(Pairing, BidirectionalMembershipExhaustiveC3) {
  const std::size_t c = 3;
  for (unsigned x = 0; x < (1u << c); ++x)
    for (unsigned y = 0; y < (1u << c); ++y) {
      std::vector<double> a(c), b(c);
      for (std::size_t k = 0; k < c; ++k) {
        a[k] = (x >> k) & 1u;
        b[k] = (y >> k) & 1u;
      }
      const double r = oracle::jaccard(a, b);
      const auto pc = pair_contribution(jaccard(a, b));
      EXPECT_EQ(pc.attraction, r > 0.0);
      EXPECT_EQ(pc.repulsion_weight > 0.0, r < 1.0);
      EXPECT_EQ(pc.attraction && pc.repulsion_weight > 0.0, r > 0.0 && r < 1.0);
    }
}

// ---------------------------------------------------------------------------
// Soft labels and weights
// ---------------------------------------------------------------------------

TEST(SoftLabel, SingleNeighborCopiesItsLabel) {
  const Matrix labels{{1, 0, 0}, {0, 0, 1}};
  const auto p = neighbor_soft_label(0, one_anchor({1}, {0.4}, {0.9}), labels);
  EXPECT_EQ(p, (std::vector<double>{0, 0, 1}));
}

TEST(SoftLabel, EqualSimilaritiesAverageLabels) {
  const Matrix labels{{1, 1}, {1, 0}, {0, 1}};
  const auto p = neighbor_soft_label(0, one_anchor({1, 2}, {0.3, 0.3}, {0.6, 0.6}), labels);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(SoftLabel, HandEvaluation) {
  const Matrix labels{{1, 1}, {1, 0}, {0, 1}};
  const auto p = neighbor_soft_label(0, one_anchor({1, 2}, {0.9, 0.1}, {0.5, 0.5}), labels);
  EXPECT_NEAR(p[0], 0.7, 1e-15);
  EXPECT_NEAR(p[1], 0.3, 1e-15);
}

TEST(SoftLabel, NonPositiveSimilarityMassFallsBackToUniform) {
  const Matrix labels{{1, 1}, {1, 0}, {0, 1}};
  const auto p = neighbor_soft_label(0, one_anchor({1, 2}, {-0.5, -0.2}, {1.0, 0.0}), labels);
  // image view uniform (0.5, 0.5), text view (1, 0)
  EXPECT_NEAR(p[0], 0.75, 1e-15);
  EXPECT_NEAR(p[1], 0.25, 1e-15);
}

TEST(SoftLabel, ContractViolations) {
  const Matrix labels{{1, 0}, {0, 1}};
  EXPECT_THROW(neighbor_soft_label(0, one_anchor({0}, {1}, {1}), labels), ContractError);
  EXPECT_THROW(neighbor_soft_label(0, one_anchor({}, {}, {}), labels), ContractError);
  EXPECT_THROW(neighbor_soft_label(0, one_anchor({1}, {1, 2}, {1}), labels), ShapeError);
  EXPECT_THROW(neighbor_soft_label(3, one_anchor({1}, {1}, {1}), labels), ShapeError);
}

TEST(ConfidenceWeight, Examples) {
  const std::vector<double> y{1, 1, 0}, p_same{2, 2, 0}, p_orth{0, 0, 1}, p{1, 0, 0};
  EXPECT_NEAR(confidence_weight(y, p_same, 0.5), 1.0, 1e-12);
  EXPECT_NEAR(confidence_weight(y, p_orth, 0.5), 0.5, 1e-15);
  EXPECT_NEAR(confidence_weight(y, p, 0.5), 0.5 + 0.5 / std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(confidence_weight(y, p, 0.5), 0.85355, 1e-5);
  EXPECT_THROW(confidence_weight(y, p, 1.5), SpecError);
}

TEST(ConfidenceWeight, AlwaysWithinGammaAndOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 500; ++t) {
    const Matrix y = oracle::random_labels(rng, 1, 5, true);
    std::vector<double> p(5);
    for (double& v : p) v = u(rng);
    const double gamma = u(rng);
    const double w = confidence_weight(y.row(0), p, gamma);
    EXPECT_GE(w, gamma);
    EXPECT_LE(w, 1.0);
  }
}

// ---------------------------------------------------------------------------
// CSCC
// ---------------------------------------------------------------------------

TEST(Cscc, PerfectPredictionIsTiny) {
  const Matrix y{{1, 0, 1}, {0, 1, 0}};
  const std::vector<double> w{0.7, 1.0};
  EXPECT_LT(cscc_loss(y, y, y, w)[0], 1e-5);
}

TEST(Cscc, ZeroWeightsGiveZero) {
  const Matrix z{{0.2, 0.9}}, y{{1, 0}};
  const std::vector<double> w{0.0};
  EXPECT_EQ(cscc_loss(z, z, y, w)[0], 0.0);
}

TEST(Cscc, ScalarBceOracle) {
  const std::vector<double> w{1.0};
  EXPECT_NEAR(cscc_loss(Matrix{{0.5}}, Matrix{{0.5}}, Matrix{{1}}, w)[0], std::log(2.0), 1e-15);
}

TEST(Cscc, ShapeErrors) {
  const std::vector<double> w{1.0};
  EXPECT_THROW(cscc_loss(Matrix(1, 2), Matrix(1, 3), Matrix(1, 2), w), ShapeError);
  EXPECT_THROW(cscc_loss(Matrix(2, 2, 0.5), Matrix(2, 2, 0.5), Matrix(2, 2), w), ShapeError);
}

TEST(Cscc, MatchesLoopOracle) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const Matrix z1 = oracle::random_matrix(rng, 8, 5, 0, 1);
    const Matrix z2 = oracle::random_matrix(rng, 8, 5, 0, 1);
    const Matrix y = oracle::random_labels(rng, 8, 5);
    std::vector<double> w(8);
    for (double& v : w) v = std::uniform_real_distribution<double>(0.5, 1)(rng);
    EXPECT_NEAR(cscc_loss(z1, z2, y, w)[0],
                oracle::cscc(oracle::to_grid(z1), oracle::to_grid(z2), oracle::to_grid(y), w), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Attraction / repulsion / quantization
// ---------------------------------------------------------------------------

TEST(Attraction, DiagonalOnly) {
  const Matrix s{{1, 0.3}, {-0.2, 1}};
  EXPECT_DOUBLE_EQ(attraction_loss(s, Matrix(2, 2, 0.0), 1.0)[0], -1.0);
}

TEST(Attraction, SingleMaskedPair) {
  const double xi = 0.7;
  const Matrix s{{0, xi}, {0.1, 0}};
  const Matrix mask{{0, 1}, {0, 0}};
  EXPECT_DOUBLE_EQ(attraction_loss(s, mask, xi)[0], 0.25);
}

TEST(Attraction, RejectsNonSquare) {
  EXPECT_THROW(attraction_loss(Matrix(2, 3), Matrix(2, 3), 1.0), ShapeError);
}

TEST(Attraction, MatchesLoopOracle) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const Matrix s = oracle::random_matrix(rng, 4, 4, -1, 1);
    const Matrix r = jaccard_matrix(oracle::random_labels(rng, 4, 4));
    EXPECT_NEAR(attraction_loss(s, positive_mask(r), 1.0)[0],
                oracle::attraction(oracle::to_grid(s), oracle::to_grid(r), 1.0), 1e-12);
  }
}

TEST(HardNegative, Examples) {
  EXPECT_EQ(hard_negative_adjust(0.9, 1.0, 1.0, 0.2), 0.9);
  EXPECT_EQ(hard_negative_adjust(0.8, 1.0, 1.0, 0.2), 0.8);
  EXPECT_NEAR(hard_negative_adjust(0.0, 1.0, 1.0, 0.2), -0.8, 1e-15);
  for (double sd : {-1.0, -0.3, 0.0, 0.4, 1.0}) EXPECT_EQ(hard_negative_adjust(sd, 1.0, 0.0, 0.2), sd);
}

TEST(Repulsion, FullAgreementCollapsesToConstant) {
  std::mt19937_64 rng(5);
  const std::size_t n = 5;
  const Matrix s = oracle::random_matrix(rng, n, n, -1, 1);
  const double expect = static_cast<double>(n * n - n) / static_cast<double>(n * n);
  EXPECT_NEAR(repulsion_loss(s, Matrix(n, n, 1.0), 1.0, 0.2)[0], expect, 1e-15);
}

TEST(Repulsion, ZeroSimilarities) {
  EXPECT_DOUBLE_EQ(repulsion_loss(Matrix(2, 2, 0.0), Matrix(2, 2, 0.0), 0.0, 0.2)[0], 0.5);
}

TEST(Repulsion, MatchesLoopOracle) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 50; ++t) {
    const Matrix s = oracle::random_matrix(rng, 4, 4, -1, 1);
    const Matrix r = jaccard_matrix(oracle::random_labels(rng, 4, 4));
    EXPECT_NEAR(repulsion_loss(s, r, 1.0, 0.2)[0],
                oracle::repulsion(oracle::to_grid(s), oracle::to_grid(r), 1.0, 0.2), 1e-12);
  }
}

TEST(Quantization, Examples) {
  EXPECT_DOUBLE_EQ(quantization_loss(Matrix(3, 8, 0.0), Matrix(3, 8, 0.0), 0.3)[0], 0.6);
  EXPECT_NEAR(quantization_loss(Matrix(3, 8, 1.0), Matrix(3, 8, -1.0), 0.3)[0], 0.0, 1e-15);
  const double near_one = 1.0 - 1e-12;
  EXPECT_NEAR(quantization_loss(Matrix{{0.5, -0.5}}, Matrix{{near_one, near_one}}, 0.3)[0], 0.15,
              1e-10);
}

TEST(CrossSimilarity, MeanScalingKeepsEntriesInUnitRange) {
  std::mt19937_64 rng(7);
  const Matrix h1 = oracle::random_matrix(rng, 6, 16, -1, 1);
  const Matrix h2 = oracle::random_matrix(rng, 6, 16, -1, 1);
  const Matrix s = cross_similarity(h1, h2, SimilarityScaling::mean);
  const auto ref = oracle::similarity(oracle::to_grid(h1), oracle::to_grid(h2));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      EXPECT_LE(std::fabs(s(i, j)), 1.0);
      EXPECT_NEAR(s(i, j), ref[i][j], 1e-15);
    }
  EXPECT_NEAR(cross_similarity(h1, h2, SimilarityScaling::raw)(0, 0), 16 * s(0, 0), 1e-13);
}

// ---------------------------------------------------------------------------
// Composite contrastive term
// ---------------------------------------------------------------------------

TEST(Bsch, SingletonBatch) {
  const Matrix h1{{0.5, -0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 0.1}};
  const Matrix h2{{0.5, 0.5, 0.5, -0.5, 0.1, -0.1, 0.1, 0.1}};
  const Matrix y{{1, 0}};
  BschParams p;
  const auto terms = bsch_loss(h1, h2, y, p);
  const double s11 = cross_similarity(h1, h2, SimilarityScaling::mean)[0];
  EXPECT_NEAR(terms.attraction[0], -s11, 1e-15);
  EXPECT_EQ(terms.repulsion[0], 0.0);
}

TEST(Bsch, IdenticalLabelsRepulsionIsConstant) {
  std::mt19937_64 rng(8);
  const Matrix h1 = oracle::random_matrix(rng, 4, 8, -1, 1);
  const Matrix h2 = oracle::random_matrix(rng, 4, 8, -1, 1);
  const Matrix y(4, 3, 1.0);
  EXPECT_NEAR(bsch_loss(h1, h2, y, BschParams{}).repulsion[0], 12.0 / 16.0, 1e-15);
}

TEST(Bsch, MatchesLoopOracle) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    const Matrix h1 = oracle::random_matrix(rng, 8, 16, -1, 1);
    const Matrix h2 = oracle::random_matrix(rng, 8, 16, -1, 1);
    const Matrix y = oracle::random_labels(rng, 8, 5);
    BschParams p;
    p.xi = 1.3;
    p.margin = 0.1;
    const auto terms = bsch_loss(h1, h2, y, p);
    const auto g1 = oracle::to_grid(h1), g2 = oracle::to_grid(h2);
    const auto s = oracle::similarity(g1, g2);
    const auto r = oracle::jaccard_grid(oracle::to_grid(y));
    const double att = oracle::attraction(s, r, 1.3);
    const double rep = oracle::repulsion(s, r, 1.3, 0.1);
    const double quant = oracle::quantization(g1, g2, 0.3);
    EXPECT_NEAR(terms.attraction[0], att, 1e-10);
    EXPECT_NEAR(terms.repulsion[0], rep, 1e-10);
    EXPECT_NEAR(terms.quantization[0], quant, 1e-10);
    EXPECT_NEAR(terms.total[0], att + rep + quant, 1e-10);
  }
}

TEST(Bsch, SeparateRepulsionScale) {
  std::mt19937_64 rng(10);
  const Matrix h1 = oracle::random_matrix(rng, 6, 8, -1, 1);
  const Matrix h2 = oracle::random_matrix(rng, 6, 8, -1, 1);
  const Matrix y = oracle::random_labels(rng, 6, 4);
  BschParams p;
  p.xi_repulsion = 0.0;
  const auto r = oracle::jaccard_grid(oracle::to_grid(y));
  const auto s = oracle::similarity(oracle::to_grid(h1), oracle::to_grid(h2));
  EXPECT_NEAR(bsch_loss(h1, h2, y, p).repulsion[0], oracle::repulsion(s, r, 0.0, 0.2), 1e-12);
}

TEST(Bsch, AttractionSwitch) {
  std::mt19937_64 rng(11);
  const Matrix h1 = oracle::random_matrix(rng, 6, 8, -1, 1);
  const Matrix h2 = oracle::random_matrix(rng, 6, 8, -1, 1);
  const Matrix y = oracle::random_labels(rng, 6, 4);
  BschParams p;
  p.use_attraction = false;
  const auto t = bsch_loss(h1, h2, y, p);
  EXPECT_NEAR(t.total[0], t.repulsion[0] + t.quantization[0], 1e-15);
}

// ---------------------------------------------------------------------------
// Gradients of each term against central differences
// ---------------------------------------------------------------------------

namespace {

template <class F>
double gradient_error(std::vector<Matrix> inputs, F f) {
  nd::Tape tape;
  std::vector<nd::Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.variable(m));
  tape.backward(f(vars));
  std::vector<Matrix> analytic;
  for (const auto& v : vars) analytic.push_back(v.grad());
  auto value = [&] { return f(inputs)[0]; };
  return oracle::max_relative_error(analytic, oracle::numeric_gradient(inputs, value));
}

}  // namespace

TEST(LossGradients, EachTermMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const Matrix y = oracle::random_labels(rng, 6, 4);
  const Matrix r = jaccard_matrix(y);
  const std::vector<double> w{1.0, 0.6, 0.8, 0.5, 0.9, 0.7};
  const Matrix z1 = oracle::random_matrix(rng, 6, 4, 0.05, 0.95);
  const Matrix z2 = oracle::random_matrix(rng, 6, 4, 0.05, 0.95);
  EXPECT_LT(gradient_error({z1, z2}, [&](const auto& v) { return cscc_loss(v[0], v[1], y, w); }), 1e-6);

  const Matrix s = oracle::random_matrix(rng, 6, 6, -1, 1);
  EXPECT_LT(gradient_error({s}, [&](const auto& v) { return attraction_loss(v[0], positive_mask(r), 1.0); }), 1e-6);

  const Matrix h1 = oracle::random_matrix(rng, 6, 8, 0.05, 0.95);
  const Matrix h2 = oracle::random_matrix(rng, 6, 8, -0.95, -0.05);
  EXPECT_LT(gradient_error({h1, h2}, [&](const auto& v) { return quantization_loss(v[0], v[1], 0.3); }), 1e-6);
}
