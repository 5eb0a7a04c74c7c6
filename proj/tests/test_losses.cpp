#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dcfl/error.hpp"
#include "dcfl/losses.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

namespace dcfl {
namespace {

using testing::brute_dcfl_prototype;
using testing::brute_dcfl_sample;
using testing::brute_supcon;
using testing::random_labels;
using testing::random_unit_rows;

// Four 2-D points, two per class. Frozen values from an independent numpy evaluation.
EmbeddingBatch hand_batch() {
  return EmbeddingBatch(Tensor::matrix({{1, 0}, {0.6, 0.8}, {0, 1}, {-0.8, 0.6}}), {0, 0, 1, 1}, 2);
}

PrototypeSet make_protos(Tensor p) {
  PrototypeSet s;
  s.counts.assign(p.rows(), 1);
  s.stale.assign(p.rows(), false);
  s.prototypes = std::move(p);
  return s;
}

TEST(EmbeddingBatch, ValidatesNormsAndLabels) {
  EXPECT_THROW(EmbeddingBatch(Tensor::matrix({{1, 1}}), {0}, 2), DegenerateInputError);
  EXPECT_THROW(EmbeddingBatch(Tensor::matrix({{1, 0}}), {2}, 2), IndexError);
  EXPECT_NO_THROW(EmbeddingBatch(Tensor::matrix({{1, 0}}), {1}, 2));
}

TEST(SupCon, LonePositiveFillsDenominator) {
  const EmbeddingBatch b(Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}}), {1, 1}, 2);
  EXPECT_NEAR(supcon_loss(b, 0.5), 0.0, 1e-15);
  EXPECT_NEAR(supcon_decomposed(b, 0.5), 0.0, 1e-15);
}

TEST(SupCon, HandBatchMatchesDirectEvaluation) {
  const EmbeddingBatch b = hand_batch();
  EXPECT_NEAR(supcon_loss(b, 0.5), 0.66804020171360134, 1e-13);
  EXPECT_NEAR(supcon_loss(b, 0.5), brute_supcon(b.embeddings(), b.labels(), 0.5), 1e-13);
}

TEST(SupCon, SingleAnchorHandFormula) {
  // Rows 0 and 1 coincide so both anchors see s+ = 1 and s- = 0.6; row 2 has no positive.
  const EmbeddingBatch b(Tensor::matrix({{1, 0}, {1, 0}, {0.6, 0.8}}), {0, 0, 1}, 2);
  const double tau = 0.5;
  const double expected = -1.0 / tau + std::log(std::exp(1.0 / tau) + std::exp(0.6 / tau));
  EXPECT_NEAR(supcon_loss(b, tau), expected, 1e-14);
  EXPECT_NEAR(supcon_decomposed(b, tau), expected, 1e-14);
}

TEST(SupCon, NoPositivesThrows) {
  const EmbeddingBatch b(Tensor::matrix({{1, 0}, {0, 1}}), {0, 1}, 2);
  EXPECT_THROW(supcon_loss(b, 0.5), NoPositivesError);
  EXPECT_THROW(supcon_decomposed(b, 0.5), NoPositivesError);
  EXPECT_THROW(supcon_loss(hand_batch(), 0.0), ConfigError);
}

TEST(SupCon, RandomBatchesMatchBruteForce) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + trial % 30;
    const std::size_t c = 2 + trial % 5;
    Tensor z = random_unit_rows(b, 2 + trial % 16, rng);
    std::vector<int> y = random_labels(b, c, rng);
    y[1] = y[0];
    const EmbeddingBatch batch(z, y, c);
    EXPECT_NEAR(supcon_loss(batch, 0.5), brute_supcon(z, y, 0.5), 1e-10) << "trial " << trial;
  }
}

// The log-softmax and split forms agree; the brute-force check above covers correctness of either.
TEST(SupCon, DecompositionIdentityOnRandomBatches) {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> bdist(2, 64), cdist(2, 10), ddist(2, 128);
  std::uniform_real_distribution<double> tdist(0.05, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = bdist(rng), c = cdist(rng), d = ddist(rng);
    std::vector<int> y = random_labels(b, c, rng);
    y[1] = y[0];
    const EmbeddingBatch batch(random_unit_rows(b, d, rng), y, c);
    const double tau = tdist(rng);
    EXPECT_LT(std::abs(supcon_loss(batch, tau) - supcon_decomposed(batch, tau)), 1e-10) << "trial " << trial;
  }
}

TEST(Losses, PermutationInvariance) {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t b = 16, c = 4, d = 8;
    const Tensor z = random_unit_rows(b, d, rng);
    const std::vector<int> y = random_labels(b, c, rng);
    std::vector<std::size_t> perm(b);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Tensor zp({b, d}, 0.0);
    std::vector<int> yp(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::copy(z.row(perm[i]).begin(), z.row(perm[i]).end(), zp.row(i).begin());
      yp[i] = y[perm[i]];
    }
    const EmbeddingBatch a(z, y, c), p(zp, yp, c);
    const PrototypeSet protos = make_protos(random_unit_rows(c, d, rng));
    EXPECT_NEAR(supcon_loss(a, 0.5), supcon_loss(p, 0.5), 1e-10);
    EXPECT_NEAR(supcon_decomposed(a, 0.5), supcon_decomposed(p, 0.5), 1e-10);
    EXPECT_NEAR(dcfl_sample_loss(a, 0.5, 0.9, 0.1).total, dcfl_sample_loss(p, 0.5, 0.9, 0.1).total, 1e-10);
    EXPECT_NEAR(dcfl_prototype_loss(a, protos, 0.5, 0.9, 0.1).total,
                dcfl_prototype_loss(p, protos, 0.5, 0.9, 0.1).total, 1e-10);
  }
}

TEST(DcflSample, HandBatchMatchesDirectEvaluation) {
  const LossBreakdown r = dcfl_sample_loss(hand_batch(), 0.5, 0.9, 0.1);
  EXPECT_NEAR(r.alignment_term, 1.2, 1e-14);
  EXPECT_NEAR(r.uniformity_term, 0.98390074088833901, 1e-14);
  EXPECT_NEAR(r.total, -0.98160992591116614, 1e-14);
  EXPECT_EQ(r.anchors_used, 4u);
}

TEST(DcflSample, EmptyNegativesKeepAlignmentOnly) {
  const Tensor z = Tensor::matrix({{1, 0}, {0.6, 0.8}, {0, 1}});
  const EmbeddingBatch b(z, {1, 1, 1}, 2);
  const LossBreakdown r = dcfl_sample_loss(b, 0.5, 0.9, 0.1);
  // Sum over ordered pairs of s_ij / tau, averaged over 3 anchors.
  const double sims = 2 * (0.6 + 0.0 + 0.8) / 0.5 / 3.0;
  EXPECT_EQ(r.uniformity_term, 0.0);
  EXPECT_NEAR(r.alignment_term, sims, 1e-14);
  EXPECT_NEAR(r.total, -0.9 * sims, 1e-14);
}

TEST(DcflSample, SkipsAnchorsWithoutPositives) {
  const EmbeddingBatch b(Tensor::matrix({{1, 0}, {0.6, 0.8}, {0, 1}}), {0, 0, 1}, 2);
  const LossBreakdown r = dcfl_sample_loss(b, 0.5, 0.9, 0.1);
  EXPECT_EQ(r.anchors_used, 2u);
  const auto brute = brute_dcfl_sample(b.embeddings(), b.labels(), 0.5, 0.9, 0.1);
  EXPECT_NEAR(r.total, brute.total, 1e-13);
  const EmbeddingBatch none(Tensor::matrix({{1, 0}, {0, 1}}), {0, 1}, 2);
  EXPECT_THROW(dcfl_sample_loss(none, 0.5, 0.9, 0.1), NoUsableAnchorsError);
}

TEST(DcflSample, RandomBatchesMatchBruteForce) {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 2 + trial % 40, c = 2 + trial % 6;
    const Tensor z = random_unit_rows(b, 3 + trial % 20, rng);
    std::vector<int> y = random_labels(b, c, rng);
    y[1] = y[0];
    const EmbeddingBatch batch(z, y, c);
    const LossBreakdown r = dcfl_sample_loss(batch, 0.5, 0.7, 0.3);
    const auto brute = brute_dcfl_sample(z, y, 0.5, 0.7, 0.3);
    EXPECT_NEAR(r.total, brute.total, 1e-10);
    EXPECT_NEAR(r.alignment_term, brute.alignment, 1e-10);
    EXPECT_NEAR(r.uniformity_term, brute.uniformity, 1e-10);
    EXPECT_EQ(r.anchors_used, brute.anchors);
    EXPECT_LE(r.anchors_used, b);
  }
}

TEST(DcflPrototype, AnchorsOnOrthogonalPrototypes) {
  const std::size_t c = 3;
  const PrototypeSet protos = make_protos(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}));
  const EmbeddingBatch b(Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}}), {0, 1, 2, 1}, c);
  const LossBreakdown r = dcfl_prototype_loss(b, protos, 0.5, 0.9, 0.1);
  EXPECT_NEAR(-0.9 * r.alignment_term, -1.8, 1e-14);
  EXPECT_NEAR(0.1 * r.uniformity_term, 0.1 * std::log(static_cast<double>(c - 1)), 1e-14);
  EXPECT_NEAR(r.total, -1.8 + 0.1 * std::log(2.0), 1e-14);
  EXPECT_EQ(r.anchors_used, 4u);
}

TEST(DcflPrototype, EqualPrototypesStayFinite) {
  const PrototypeSet protos = make_protos(Tensor::matrix({{0.6, 0.8}, {0.6, 0.8}}));
  const EmbeddingBatch b(Tensor::matrix({{1, 0}, {0, 1}}), {0, 1}, 2);
  const LossBreakdown r = dcfl_prototype_loss(b, protos, 0.5, 0.9, 0.1);
  EXPECT_TRUE(std::isfinite(r.total));
  // With identical prototypes the positive and the single negative have the same similarity.
  EXPECT_NEAR(r.alignment_term, r.uniformity_term, 1e-14);
}

TEST(DcflPrototype, SingleClassThrows) {
  const PrototypeSet protos = make_protos(Tensor::matrix({{1, 0}}));
  const EmbeddingBatch b(Tensor::matrix({{1, 0}}), {0}, 1);
  EXPECT_THROW(dcfl_prototype_loss(b, protos, 0.5, 0.9, 0.1), InsufficientClassesError);
}

TEST(DcflPrototype, RandomBatchesMatchBruteForce) {
  std::mt19937_64 rng(505);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + trial % 40, c = 2 + trial % 9, d = 2 + trial % 30;
    const Tensor z = random_unit_rows(b, d, rng);
    const std::vector<int> y = random_labels(b, c, rng);
    const Tensor p = random_unit_rows(c, d, rng);
    const LossBreakdown r = dcfl_prototype_loss(EmbeddingBatch(z, y, c), make_protos(p), 0.5, 0.9, 0.1);
    const auto brute = brute_dcfl_prototype(z, y, p, 0.5, 0.9, 0.1);
    EXPECT_NEAR(r.total, brute.total, 1e-10);
    EXPECT_NEAR(r.alignment_term, brute.alignment, 1e-10);
    EXPECT_NEAR(r.uniformity_term, brute.uniformity, 1e-10);
    EXPECT_EQ(r.anchors_used, b);
  }
}

// Sample-wise on a batch holding two copies of every prototype gives each anchor exactly one positive
// (its twin, at c_y) and two copies of every other prototype as negatives. Alignment therefore
// agrees with the prototype-wise loss on the prototypes themselves and uniformity is offset by log 2.
TEST(DcflPrototype, AgreesWithSampleWiseOnPrototypeBatch) {
  std::mt19937_64 rng(606);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 2 + trial % 8, d = 4 + trial % 10;
    const Tensor p = random_unit_rows(c, d, rng);
    Tensor twin({2 * c, d}, 0.0);
    std::vector<int> ytwin(2 * c), y(c);
    for (std::size_t g = 0; g < c; ++g) {
      std::copy(p.row(g).begin(), p.row(g).end(), twin.row(2 * g).begin());
      std::copy(p.row(g).begin(), p.row(g).end(), twin.row(2 * g + 1).begin());
      ytwin[2 * g] = ytwin[2 * g + 1] = y[g] = static_cast<int>(g);
    }
    const LossBreakdown sw = dcfl_sample_loss(EmbeddingBatch(twin, ytwin, c), 0.5, 0.9, 0.1);
    const LossBreakdown pw = dcfl_prototype_loss(EmbeddingBatch(p, y, c), make_protos(p), 0.5, 0.9, 0.1);
    EXPECT_NEAR(sw.alignment_term, pw.alignment_term, 1e-12);
    EXPECT_NEAR(sw.uniformity_term, pw.uniformity_term + std::log(2.0), 1e-12);
  }
}

TEST(DcflPrototype, MovingTowardPrototypeLowersAlignmentContribution) {
  const PrototypeSet protos = make_protos(Tensor::matrix({{1, 0, 0}, {0, 1, 0}}));
  double previous = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 20; ++step) {
    // Great circle from (0, 0, 1) to c_0.
    const double angle = step / 20.0 * M_PI / 2.0;
    const EmbeddingBatch b(Tensor::matrix({{std::sin(angle), 0.0, std::cos(angle)}}), {0}, 2);
    const double contribution = -0.9 * dcfl_prototype_loss(b, protos, 0.5, 0.9, 0.1).alignment_term;
    EXPECT_LT(contribution, previous);
    previous = contribution;
  }
}

TEST(Dcfl, TotalIsLinearInLambdas) {
  std::mt19937_64 rng(707);
  const Tensor z = random_unit_rows(12, 6, rng);
  std::vector<int> y = random_labels(12, 3, rng);
  y[1] = y[0];
  const EmbeddingBatch b(z, y, 3);
  const PrototypeSet protos = make_protos(random_unit_rows(3, 6, rng));
  const LossBreakdown ref = dcfl_sample_loss(b, 0.5, 0.9, 0.1);
  const LossBreakdown pref = dcfl_prototype_loss(b, protos, 0.5, 0.9, 0.1);
  for (double la : {0.1, 0.3, 0.5, 0.7, 0.9, 1.5}) {
    const double lu = 1.0 - la;
    const LossBreakdown r = dcfl_sample_loss(b, 0.5, la, lu);
    EXPECT_EQ(r.alignment_term, ref.alignment_term);
    EXPECT_EQ(r.uniformity_term, ref.uniformity_term);
    EXPECT_NEAR(r.total, -la * ref.alignment_term + lu * ref.uniformity_term, 1e-13);
    const LossBreakdown p = dcfl_prototype_loss(b, protos, 0.5, la, lu);
    EXPECT_NEAR(p.total, -la * pref.alignment_term + lu * pref.uniformity_term, 1e-13);
  }
}

TEST(Losses, FiniteForSmallTemperatures) {
  std::mt19937_64 rng(808);
  for (double tau : {0.05, 0.07, 0.1, 0.5, 1.0}) {
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor z = random_unit_rows(32, 4, rng);
      std::vector<int> y = random_labels(32, 4, rng);
      y[1] = y[0];
      const EmbeddingBatch b(z, y, 4);
      EXPECT_TRUE(std::isfinite(supcon_loss(b, tau)));
      EXPECT_TRUE(std::isfinite(supcon_decomposed(b, tau)));
      EXPECT_TRUE(std::isfinite(dcfl_sample_loss(b, tau, 0.9, 0.1).total));
      EXPECT_TRUE(std::isfinite(dcfl_prototype_loss(b, make_protos(random_unit_rows(4, 4, rng)), tau, 0.9, 0.1).total));
    }
  }
}

TEST(CombinedObjective, HandArithmetic) {
  EXPECT_EQ(combined_objective(1.25, 7.0, 0.0), 1.25);
  EXPECT_DOUBLE_EQ(combined_objective(1.0, 0.5, 10.0), 6.0);
  for (double mu : {0.001, 0.01, 0.1, 1.0, 5.0, 10.0}) EXPECT_NO_THROW(combined_objective(1.0, 0.5, mu));
  EXPECT_THROW(combined_objective(1.0, 0.5, -1.0), ConfigError);
}

class LossGradient : public ::testing::TestWithParam<int> {};

TEST_P(LossGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  const std::size_t b = 6 + GetParam() % 7, c = 3, d = 5;
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor raw({b, d}, 0.0);
  for (double& v : raw.values()) v = g(rng);
  std::vector<int> y = random_labels(b, c, rng);
  y[1] = y[0];
  const PrototypeSet protos = make_protos(random_unit_rows(c, d, rng));
  using testing::check_gradient;
  auto z = [](const std::vector<Var>& v) { return ad::l2_normalize_rows(v[0]); };
  const double supcon = check_gradient(
      [&](Tape&, const std::vector<Var>& v) { return ad::supcon_loss(z(v), y, 0.5); }, {raw}).max_rel_error;
  const double decomposed = check_gradient(
      [&](Tape&, const std::vector<Var>& v) { return ad::supcon_decomposed(z(v), y, 0.5); }, {raw}).max_rel_error;
  const double sw = check_gradient(
      [&](Tape&, const std::vector<Var>& v) { return ad::dcfl_sample_loss(z(v), y, 0.5, 0.9, 0.1).total; },
      {raw}).max_rel_error;
  const double pw = check_gradient(
      [&](Tape&, const std::vector<Var>& v) {
        return ad::dcfl_prototype_loss(z(v), y, protos, 0.5, 0.9, 0.1).total;
      },
      {raw}).max_rel_error;
  EXPECT_LT(supcon, 1e-4);
  EXPECT_LT(decomposed, 1e-4);
  EXPECT_LT(sw, 1e-4);
  EXPECT_LT(pw, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradient, ::testing::Range(0, 10));

}  // namespace
}  // namespace dcfl
