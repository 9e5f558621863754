#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "scbch/ndmath/matrix.hpp"

using namespace scbch;
using nd::Matrix;

TEST(Matrix, DataLengthIsRowsTimesCols) {
  for (auto [r, c] : {std::pair{0, 0}, {1, 5}, {3, 4}, {7, 1}}) {
    Matrix m(r, c);
    EXPECT_EQ(m.size(), static_cast<std::size_t>(r * c));
    EXPECT_EQ(m.values().size(), m.rows() * m.cols());
  }
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW((Matrix{{1, 2}, {3}}), ShapeError);
}

TEST(Matrix, MatmulIdentity) {
  const Matrix a{{1, 2}, {3, 4}};
  EXPECT_EQ(nd::matmul(a, Matrix::identity(2)), a);
  EXPECT_EQ(nd::matmul(Matrix{{1, 0}, {0, 1}}, Matrix{{5}, {7}}), (Matrix{{5}, {7}}));
}

TEST(Matrix, MatmulHandComputed) {
  EXPECT_EQ(nd::matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{1}, {1}}), (Matrix{{3}, {7}}));
}

TEST(Matrix, MatmulMatchesLoopOracle) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = oracle::random_matrix(rng, 4, 7, -2, 2);
    const Matrix b = oracle::random_matrix(rng, 7, 3, -2, 2);
    const Matrix c = nd::matmul(a, b);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 7; ++k) acc += a(i, k) * b(k, j);
        EXPECT_NEAR(c(i, j), acc, 1e-12);
      }
  }
}

TEST(Matrix, MatmulShapeMismatchThrows) {
  EXPECT_THROW(nd::matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST(Matrix, ElementwiseExamples) {
  EXPECT_EQ(nd::tanh(Matrix{{0}})[0], 0.0);
  EXPECT_EQ(nd::sigmoid(Matrix{{0}})[0], 0.5);
  EXPECT_EQ(nd::relu(Matrix{{-3}})[0], 0.0);
  EXPECT_EQ(nd::relu(Matrix{{2.5}})[0], 2.5);
  EXPECT_EQ(nd::abs(Matrix{{-2, 3}}), (Matrix{{2, 3}}));
  EXPECT_EQ(nd::clamp(Matrix{{-2, 0.5, 3}}, 0, 1), (Matrix{{0, 0.5, 1}}));
  EXPECT_EQ(nd::add(Matrix{{1, 2}}, Matrix{{3, 4}}), (Matrix{{4, 6}}));
  EXPECT_EQ(nd::sub(Matrix{{1, 2}}, Matrix{{3, 4}}), (Matrix{{-2, -2}}));
  EXPECT_EQ(nd::mul(Matrix{{1, 2}}, Matrix{{3, 4}}), (Matrix{{3, 8}}));
  EXPECT_EQ(nd::scale(Matrix{{1, 2}}, -2), (Matrix{{-2, -4}}));
  EXPECT_THROW(nd::add(Matrix(1, 2), Matrix(2, 1)), ShapeError);
}

TEST(Matrix, SigmoidStableAtExtremes) {
  const Matrix z = nd::sigmoid(Matrix{{-800, 800}});
  EXPECT_EQ(z[0], 0.0);
  EXPECT_EQ(z[1], 1.0);
  EXPECT_TRUE(nd::all_finite(z));
}

TEST(Matrix, ExpAndLogRefuseNonFiniteResults) {
  EXPECT_THROW(nd::exp(Matrix{{1000}}), NumericalError);
  EXPECT_THROW(nd::log(Matrix{{0}}), NumericalError);
  EXPECT_THROW(nd::log(Matrix{{-1}}), NumericalError);
  EXPECT_NEAR(nd::log(Matrix{{std::exp(2.0)}})[0], 2.0, 1e-15);
}

TEST(Matrix, Reductions) {
  EXPECT_EQ(nd::sum(Matrix{{1, 2}, {3, 4}})[0], 10.0);
  EXPECT_EQ(nd::mean(Matrix{{2, 4}})[0], 3.0);
  EXPECT_EQ(nd::row_sum(Matrix{{1, 2}, {3, 4}}), (Matrix{{3}, {7}}));
  EXPECT_EQ(nd::row_mean(Matrix{{1, 2}, {3, 4}}), (Matrix{{1.5}, {3.5}}));
  EXPECT_EQ(nd::diag(Matrix{{1, 2}, {3, 4}}), (Matrix{{1}, {4}}));
  EXPECT_THROW(nd::mean(Matrix()), ShapeError);
}

TEST(Matrix, Broadcasts) {
  EXPECT_EQ(nd::add_row(Matrix{{1, 2}, {3, 4}}, Matrix{{10, 20}}), (Matrix{{11, 22}, {13, 24}}));
  EXPECT_EQ(nd::add_col(Matrix{{1, 2}, {3, 4}}, Matrix{{10}, {20}}), (Matrix{{11, 12}, {23, 24}}));
  EXPECT_THROW(nd::add_row(Matrix(2, 2), Matrix(1, 3)), ShapeError);
  EXPECT_THROW(nd::add_col(Matrix(2, 2), Matrix(3, 1)), ShapeError);
}

TEST(Matrix, TransposeAndGather) {
  const Matrix a{{1, 2, 3}, {4, 5, 6}};
  EXPECT_EQ(nd::transpose(a), (Matrix{{1, 4}, {2, 5}, {3, 6}}));
  const std::vector<std::size_t> idx{1, 0, 1};
  EXPECT_EQ(nd::gather_rows(a, idx), (Matrix{{4, 5, 6}, {1, 2, 3}, {4, 5, 6}}));
  const std::vector<std::size_t> bad{2};
  EXPECT_THROW(nd::gather_rows(a, bad), ShapeError);
}

// Property: finite inputs in a moderate range stay finite through every op.
TEST(Matrix, OpsPreserveFiniteness) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const Matrix a = oracle::random_matrix(rng, 3, 4, -5, 5);
    const Matrix b = oracle::random_matrix(rng, 3, 4, -5, 5);
    for (const Matrix& m :
         {nd::add(a, b), nd::sub(a, b), nd::mul(a, b), nd::scale(a, 3), nd::tanh(a), nd::relu(a),
          nd::sigmoid(a), nd::exp(a), nd::abs(a), nd::clamp(a, -1, 1), nd::log(nd::exp(a)),
          nd::matmul(a, nd::transpose(b)), nd::sum(a), nd::mean(a), nd::row_sum(a)}) {
      EXPECT_TRUE(nd::all_finite(m));
    }
  }
}
