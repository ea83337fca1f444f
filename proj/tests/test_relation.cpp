#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "aerialvg/grad_check.hpp"
#include "aerialvg/relation.hpp"
#include "test_util.hpp"

using namespace aerialvg;
using aerialvg::testing::values;
using aerialvg::testing::weighted_sum;

namespace {

constexpr std::size_t kD = 8;

void zero(Linear& l) {
  for (double& v : l.weight.mutable_data()) v = 0.0;
  if (l.bias.defined())
    for (double& v : l.bias.mutable_data()) v = 0.0;
}

struct RelationCase {
  ParameterSet params;
  RngState rng;
  RelationParams rel;
  TextFeatures txt;

  explicit RelationCase(std::uint64_t seed = 12) : rng(seed) {
    rel = RelationParams::make(ParamScope{params, "rel.", rng}, kD);
    // Non-trivial norm parameters so permutation checks exercise them.
    for (const auto& [name, t] : params.entries()) {
      if (name.find("norm") == std::string::npos) continue;
      for (double& v : Tensor(t).mutable_data()) v += 0.3 * rng.normal();
    }
    txt = TextFeatures::from_tokens(Tensor::randn({4, kD}, rng));
  }
};

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(1);
  return {t.data().begin() + static_cast<std::ptrdiff_t>(r * w), t.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * w)};
}

}  // namespace

TEST(BuildPairs, SingleQuery) {
  RelationCase c;
  const Tensor q = Tensor::randn({1, kD}, c.rng);
  const Tensor grid = build_pairs(q, c.rel);
  ASSERT_EQ(grid.shape(), (Shape{1, kD}));
  EXPECT_EQ(values(grid), values(add(c.rel.pair_first(q), c.rel.pair_second(q))));
}

TEST(BuildPairs, IdenticalQueriesGiveEqualCells) {
  RelationCase c;
  const Tensor one = Tensor::randn({1, kD}, c.rng);
  const Tensor q = gather_rows(one, std::vector<std::size_t>{0, 0, 0});
  const Tensor grid = build_pairs(q, c.rel);
  for (std::size_t r = 1; r < 9; ++r) EXPECT_EQ(row(grid, r), row(grid, 0));
}

TEST(BuildPairs, TwoQueriesMatchHandConcatenation) {
  RelationCase c;
  const Tensor q = Tensor::randn({2, kD}, c.rng);
  const Tensor grid = build_pairs(q, c.rel);
  // P [a; b] = a W1 + b W2 with the 2d x d matrix split into its halves.
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      std::vector<double> want(kD, 0.0);
      for (std::size_t o = 0; o < kD; ++o) {
        for (std::size_t k = 0; k < kD; ++k) want[o] += q[i * kD + k] * c.rel.pair_first.weight[k * kD + o];
        double b = 0.0;
        for (std::size_t k = 0; k < kD; ++k) b += q[j * kD + k] * c.rel.pair_second.weight[k * kD + o];
        want[o] += b;
      }
      const auto got = row(grid, i * 2 + j);
      for (std::size_t o = 0; o < kD; ++o) EXPECT_NEAR(got[o], want[o], 1e-13);
    }
  }
  EXPECT_NE(row(grid, 1), row(grid, 2));
}

TEST(RelationBlockTest, ZeroProjectionsLeaveGridUnchanged) {
  RelationCase c;
  for (auto& b : c.rel.blocks) {
    zero(b.column_attn.v);
    zero(b.column_attn.o);
    zero(b.text_attn.v);
    zero(b.text_attn.o);
    zero(b.mlp.fc2);
  }
  const Tensor grid = build_pairs(Tensor::randn({3, kD}, c.rng), c.rel);
  Tensor x = grid;
  for (const auto& b : c.rel.blocks) x = b(x, 3, c.txt);
  EXPECT_EQ(values(x), values(grid));
}

TEST(RelationBlockTest, SingleCellColumnAttentionIsItsValue) {
  RelationCase c;
  const auto& attn = c.rel.blocks[0].column_attn;
  const Tensor x = Tensor::randn({1, kD}, c.rng);
  EXPECT_EQ(values(column_self_attention(x, 1, attn)), values(attn.o(attn.v(x))));
}

TEST(RelationBlockTest, ColumnsAreIndependent) {
  RelationCase c;
  const std::size_t m = 3;
  const auto& attn = c.rel.blocks[0].column_attn;
  Tensor grid = Tensor::randn({m * m, kD}, c.rng);
  const Tensor base = column_self_attention(grid, m, attn);
  // Perturb only column 1 and check columns 0 and 2 stay bit-identical.
  auto v = values(grid);
  for (std::size_t i = 0; i < m; ++i) v[(i * m + 1) * kD] += 1.0;
  const Tensor moved = column_self_attention(Tensor::from({m * m, kD}, v), m, attn);
  for (std::size_t i = 0; i < m; ++i) {
    EXPECT_EQ(row(moved, i * m), row(base, i * m));
    EXPECT_EQ(row(moved, i * m + 2), row(base, i * m + 2));
    EXPECT_NE(row(moved, i * m + 1), row(base, i * m + 1));
  }
}

TEST(RelationBlockTest, GradCheckThroughAllBlocks) {
  RelationCase c;
  const Tensor q = Tensor::randn({3, kD}, c.rng);
  RngState rng(2);
  for (const auto& pc : grad_check_params([&] { return weighted_sum(relation_forward(q, c.txt, c.rel)); },
                                          c.params.entries(), 3, rng)) {
    EXPECT_LT(pc.max_rel_error, 1e-4) << pc.name;
  }
  EXPECT_LT(grad_check([&](const Tensor& x) { return weighted_sum(relation_forward(x, c.txt, c.rel)); }, q), 1e-4);
}

TEST(RelationMatrixTest, EqualLogitsAreUniform) {
  for (std::size_t m = 1; m <= 8; ++m) {
    for (double v : values(relation_matrix(Tensor::full({m, m}, 1.7)))) {
      EXPECT_NEAR(v, 1.0 / static_cast<double>(m * m), 1e-15);
    }
  }
  EXPECT_EQ(values(relation_matrix(Tensor::full({1, 1}, -4.0))), (std::vector<double>{1.0}));
}

TEST(RelationMatrixTest, OneDominantCell) {
  const auto v = values(relation_matrix(Tensor::from({2, 2}, {0, 0, 0, 10})));
  const double z = 3.0 + std::exp(10.0);
  EXPECT_NEAR(v[3], std::exp(10.0) / z, 1e-15);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(v[i], 1.0 / z, 1e-15);
}

TEST(RelationScoresTest, HandCases) {
  EXPECT_EQ(relation_scores(Tensor::full({2, 2}, 0.25)), (std::vector<double>{0.25, 0.25}));
  EXPECT_EQ(relation_scores(Tensor::from({2, 2}, {0.7, 0.1, 0.1, 0.1})), (std::vector<double>{0.7, 0.1}));
}

TEST(RelationScoresTest, MatchesRowScan) {
  RngState rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor m = relation_matrix(Tensor::randn({4, 4}, rng, 2.0));
    const auto s = relation_scores(m);
    for (std::size_t i = 0; i < 4; ++i) {
      double best = 0.0;
      for (std::size_t j = 0; j < 4; ++j) best = std::max(best, m[i * 4 + j]);
      ASSERT_EQ(s[i], best);
      ASSERT_GT(s[i], 0.0);
      ASSERT_LE(s[i], 1.0);
    }
  }
}

TEST(CombineScores, HandCase) {
  const double l6 = std::log(0.6 / 0.4), l8 = std::log(0.8 / 0.2);
  const auto f = combine_scores(Tensor::from({2, 2}, {l6, -1.0, -3.0, l8}), {0.5, 0.1});
  EXPECT_NEAR(f[0], 1.1, 1e-15);
  EXPECT_NEAR(f[1], 0.9, 1e-15);
  EXPECT_EQ(rank_by_score(f), (std::vector<std::size_t>{0, 1}));
}

TEST(CombineScores, RelationBreaksEqualClassRows) {
  const Tensor cls = Tensor::from({2, 3}, {0.2, 1.0, -1.0, 0.2, 1.0, -1.0});
  EXPECT_EQ(rank_by_score(combine_scores(cls, {0.1, 0.9})), (std::vector<std::size_t>{1, 0}));
  EXPECT_EQ(rank_by_score(combine_scores(cls, {0.9, 0.1})), (std::vector<std::size_t>{0, 1}));
}

TEST(CombineScores, EqualRelationKeepsClassRanking) {
  RngState rng(3);
  const Tensor cls = Tensor::randn({6, 4}, rng);
  EXPECT_EQ(rank_by_score(combine_scores(cls, std::vector<double>(6, 1e-9))), rank_by_score(combine_scores(cls, {})));
}

TEST(CombineScores, DependsOnlyOnRowMaximum) {
  RngState rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = values(Tensor::randn({5, 4}, rng));
    std::vector<double> s(5);
    for (auto& x : s) x = rng.uniform();
    const auto before = combine_scores(Tensor::from({5, 4}, v), s);
    // Lower every non-maximal entry; the result must not move.
    for (std::size_t i = 0; i < 5; ++i) {
      const auto mx = std::max_element(v.begin() + static_cast<std::ptrdiff_t>(i * 4), v.begin() + static_cast<std::ptrdiff_t>(i * 4 + 4));
      for (auto it = v.begin() + static_cast<std::ptrdiff_t>(i * 4); it != v.begin() + static_cast<std::ptrdiff_t>(i * 4 + 4); ++it)
        if (it != mx) *it -= rng.uniform() * 3.0;
    }
    ASSERT_EQ(combine_scores(Tensor::from({5, 4}, v), s), before);
  }
}

TEST(CombineScores, LengthMismatchThrows) {
  EXPECT_THROW(combine_scores(Tensor::zeros({3, 2}), {0.1, 0.2}), ShapeError);
}

TEST(RelationProperty, MatrixSumsToOne) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RelationCase c(seed);
    const std::size_t m = 1 + seed % 8;
    const auto v = values(relation_matrix(relation_forward(Tensor::randn({m, kD}, c.rng), c.txt, c.rel)));
    double sum = 0.0;
    for (double x : v) {
      ASSERT_GT(x, 0.0);
      sum += x;
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(RelationProperty, PermutationEquivariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    RelationCase c(100 + seed);
    const std::size_t m = 2 + seed % 7;
    const Tensor q = Tensor::randn({m, kD}, c.rng);
    std::vector<std::size_t> pi(m);
    std::iota(pi.begin(), pi.end(), std::size_t{0});
    for (std::size_t i = m - 1; i > 0; --i) std::swap(pi[i], pi[static_cast<std::size_t>(c.rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
    // Row r of the permuted input is query pi[r].
    const Tensor mat = relation_matrix(relation_forward(q, c.txt, c.rel));
    const Tensor pm = relation_matrix(relation_forward(gather_rows(q, pi), c.txt, c.rel));
    const auto s = relation_scores(mat), ps = relation_scores(pm);
    for (std::size_t a = 0; a < m; ++a) {
      ASSERT_NEAR(ps[a], s[pi[a]], 1e-10);
      for (std::size_t b = 0; b < m; ++b) ASSERT_NEAR(pm[a * m + b], mat[pi[a] * m + pi[b]], 1e-10);
    }
  }
}

TEST(RelationProperty, ZeroHeadGivesUniformColdStart) {
  for (std::size_t m = 1; m <= 8; ++m) {
    RelationCase c(m);
    zero(c.rel.head);
    const Tensor logits = relation_forward(Tensor::randn({m, kD}, c.rng), c.txt, c.rel);
    for (double v : logits.data()) ASSERT_EQ(v, 0.0);
    for (double v : relation_scores(relation_matrix(logits))) ASSERT_NEAR(v, 1.0 / static_cast<double>(m * m), 1e-15);
  }
}
