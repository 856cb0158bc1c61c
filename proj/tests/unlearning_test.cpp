// Copyright 2026 The fedaf Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedaf/unlearning.hpp"

#include <gtest/gtest.h>

#include "support/oracles.hpp"

namespace fedaf {
namespace {

using testing::Real;

Eigen::RowVectorXd row(std::initializer_list<double> v) {
  Eigen::RowVectorXd r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

ParamVector flat(std::initializer_list<double> v) {
  Vector values(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) values(i++) = x;
  return ParamVector({LayerShape{1, v.size() - 1, 1, 0}}, values);
}

Matrix random_features(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  return x;
}

TEST(TeacherLabelTest, IdenticalTeachersReproduceOne) {
  const ModelSpec spec({6, 5, 4});
  const auto p = xavier_init(spec, 3);
  Rng rng(1);
  const Matrix x = random_features(rng, 7, 6);
  const TeacherEnsemble same(spec, std::vector<ParamVector>(5, p));
  EXPECT_LE((teacher_label(same, x) - forward(p, spec, x)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(TeacherLabelTest, RowsOnSimplexAndJobsAgnostic) {
  const ModelSpec spec({6, 5, 4});
  const TeacherEnsemble t(spec, 10, 99);
  Rng rng(2);
  const Matrix x = random_features(rng, 20, 6);
  const Matrix y = teacher_label(t, x);
  for (Eigen::Index i = 0; i < y.rows(); ++i) EXPECT_NEAR(y.row(i).sum(), 1.0, 1e-9);
  EXPECT_TRUE(y == teacher_label(t, x, 4));
}

TEST(TeacherLabelTest, LargerEnsembleHasLowerVarianceAcrossSeeds) {
  const ModelSpec spec({10, 8, 5});
  Rng rng(3);
  const Matrix x = random_features(rng, 1, 10);
  auto variance = [&](std::size_t q) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(5), sq = Eigen::RowVectorXd::Zero(5);
    for (std::uint64_t s = 0; s < 100; ++s) {
      const Eigen::RowVectorXd y = teacher_label(TeacherEnsemble(spec, q, s), x).row(0);
      sum += y;
      sq += y.cwiseAbs2();
    }
    return Eigen::RowVectorXd(sq / 100.0 - (sum / 100.0).cwiseAbs2());
  };
  const auto v1 = variance(1), v10 = variance(10);
  for (Eigen::Index c = 0; c < 5; ++c) EXPECT_LT(v10(c), v1(c)) << "class " << c;
}

TEST(DynamicSigmaTest, Examples) {
  Eigen::RowVectorXd uniform = Eigen::RowVectorXd::Constant(10, 0.1);
  EXPECT_EQ(dynamic_sigma(uniform, 3), 1.0);
  Eigen::RowVectorXd y = Eigen::RowVectorXd::Constant(10, 0.8 / 9.0);
  y(4) = 0.2;
  EXPECT_DOUBLE_EQ(dynamic_sigma(y, 4), 0.5);
  y.setConstant(0.95 / 9.0);
  y(4) = 0.05;
  EXPECT_EQ(dynamic_sigma(y, 4), 1.0);
  y.setConstant(1.0 / 9.0);
  y(4) = 0.0;
  EXPECT_EQ(dynamic_sigma(y, 4), 1.0);
}

TEST(DebiasLabelTest, Examples) {
  const auto out = debias_label(row({0.2, 0.8}), row({0, 1}), 0.5);
  EXPECT_NEAR(out(0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(out(1), 2.0 / 3.0, 1e-15);
  const auto y_hat = row({0.1, 0.3, 0.6});
  EXPECT_TRUE(debias_label(y_hat, row({0, 0, 1}), 1.0) == y_hat);
  const auto zero = debias_label(y_hat, row({0, 0, 1}), 0.0);
  EXPECT_EQ(zero(2), 0.0);
  EXPECT_NEAR(zero(0), 0.25, 1e-15);
  EXPECT_NEAR(zero(1), 0.75, 1e-15);
  EXPECT_THROW(debias_label(row({0, 1}), row({0, 1}), 0.0), DegenerateLabelError);
  EXPECT_THROW(debias_label(row({0.5, 0.5}), row({0, 1}), 1.5), InvalidArgument);
}

// Property: for random simplex rows and sigma, output stays on the simplex,
// sigma = 1 is the identity and sigma < 1 strictly lowers a positive target.
TEST(DebiasLabelTest, SimplexAndMonotoneProperties) {
  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const auto c = static_cast<Eigen::Index>(2 + rng.below(12));
    const Matrix y_hat = testing::random_simplex_rows(rng, 1, c, false);
    const auto t = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(c)));
    Eigen::RowVectorXd y = Eigen::RowVectorXd::Zero(c);
    y(t) = 1.0;
    const double sigma = trial % 10 == 0 ? 0.0 : rng.uniform();
    const auto out = debias_label(y_hat.row(0), y, sigma);
    EXPECT_NEAR(out.sum(), 1.0, 1e-9);
    EXPECT_GE(out.minCoeff(), 0.0);
    EXPECT_LT(out(t), y_hat(0, t));
    EXPECT_TRUE(debias_label(y_hat.row(0), y, 1.0) == Eigen::RowVectorXd(y_hat.row(0)));
  }
}

class MemoryTest : public ::testing::Test {
 protected:
  ModelSpec spec{{12, 9, 6}};
  TeacherEnsemble teachers{spec, 10, 4};
  Batch r;

  void SetUp() override {
    Rng rng(8);
    r.features = random_features(rng, 15, 12);
    r.labels = Matrix::Zero(15, 6);
    r.labels.col(2).setOnes();
  }
};

TEST_F(MemoryTest, UniformLabels) {
  const Batch m = build_memories(FakeLabelKind::kUniform, teachers, r, {}, 0);
  EXPECT_TRUE((m.labels.array() == 1.0 / 6.0).all());
}

TEST_F(MemoryTest, DebiasWithUnitSigmaEqualsTeacherLabel) {
  EwcConfig cfg;
  cfg.sigma_mode = SigmaMode::kFixed;
  cfg.sigma_fixed = 1.0;
  const Batch m = build_memories(FakeLabelKind::kDebiasTeacher, teachers, r, cfg, 0);
  EXPECT_TRUE(m.labels == teacher_label(teachers, r.features));
}

TEST_F(MemoryTest, DynamicDebiasSuppressesHeldClass) {
  const Matrix y_hat = teacher_label(teachers, r.features);
  const Batch m = build_memories(FakeLabelKind::kDebiasTeacher, teachers, r, {}, 0);
  for (Eigen::Index i = 0; i < m.labels.rows(); ++i) {
    EXPECT_NEAR(m.labels.row(i).sum(), 1.0, 1e-12);
    EXPECT_LE(m.labels(i, 2), std::max(y_hat(i, 2), 1.0 / 6.0) + 1e-15);
    if (y_hat(i, 2) > 1.0 / 6.0) {
      EXPECT_LT(m.labels(i, 2), y_hat(i, 2));
    }
  }
}

TEST_F(MemoryTest, EveryKindPairsFeaturesAndLeavesTeachersUntouched) {
  const auto before = teachers.members();
  for (auto kind : {FakeLabelKind::kUniform, FakeLabelKind::kRandom, FakeLabelKind::kTeacher,
                    FakeLabelKind::kDebiasTeacher}) {
    const Batch m = build_memories(kind, teachers, r, {}, 11);
    ASSERT_EQ(m.size(), r.size());
    EXPECT_TRUE(m.features == r.features);
    EXPECT_NO_THROW(m.validate()) << to_string(kind);
  }
  for (std::size_t q = 0; q < before.size(); ++q) EXPECT_TRUE(before[q] == teachers.members()[q]);
  EXPECT_TRUE(build_memories(FakeLabelKind::kRandom, teachers, r, {}, 11).labels ==
              build_memories(FakeLabelKind::kRandom, teachers, r, {}, 11).labels);
  EXPECT_THROW(build_memories(FakeLabelKind::kUniform, teachers, Batch{}, {}, 0), InvalidArgument);
}

TEST(LabelKindTest, NamesRoundTrip) {
  for (auto kind : {FakeLabelKind::kUniform, FakeLabelKind::kRandom, FakeLabelKind::kTeacher,
                    FakeLabelKind::kDebiasTeacher}) {
    EXPECT_EQ(parse_label_kind(to_string(kind)), kind);
  }
  EXPECT_THROW(parse_label_kind("soft"), InvalidArgument);
}

TEST(FisherTest, SingleSampleIsSquaredGradient) {
  Rng rng(13);
  const auto g = testing::random_instance(rng, false);
  const Batch one{g.features.topRows(1), g.labels.topRows(1)};
  const auto f = fisher_diagonal(g.params, g.spec, one, 32);
  const auto grad = loss_and_grad(g.params, g.spec, one).grad;
  EXPECT_LE((f.values.values() - grad.values().cwiseAbs2()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_TRUE(f.anchor == g.params);
}

// Oracle: brute-force mean over a per-sample loop, and invariance under row
// permutation and chunk size.
TEST(FisherTest, MatchesPerSampleLoopAndIsPermutationInvariant) {
  Rng rng(14);
  for (int trial = 0; trial < 30; ++trial) {
    auto g = testing::random_instance(rng, false);
    if (g.features.rows() < 3) continue;
    Vector want = Vector::Zero(static_cast<Eigen::Index>(g.params.size()));
    for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
      want += loss_and_grad(g.params, g.spec, g.features.row(i), g.labels.row(i)).grad.values().cwiseAbs2();
    }
    want /= static_cast<double>(g.features.rows());
    const Batch data{g.features, g.labels};
    const auto f = fisher_diagonal(g.params, g.spec, data, 2);
    EXPECT_GE(f.values.values().minCoeff(), 0.0);
    const double tol = 1e-13 * (1.0 + want.cwiseAbs().maxCoeff());
    EXPECT_LE((f.values.values() - want).cwiseAbs().maxCoeff(), tol);
    const auto perm = rng.permutation(data.size());
    const auto shuffled = fisher_diagonal(g.params, g.spec, gather(data, perm), 3);
    EXPECT_LE((shuffled.values.values() - want).cwiseAbs().maxCoeff(), tol);
  }
}

TEST(EwcPenaltyTest, Examples) {
  const FisherDiagonal f{flat({2.0}), flat({1.0})};
  const auto pen = ewc_penalty(flat({3.0}), f, 10.0);
  EXPECT_DOUBLE_EQ(pen.loss, 40.0);
  EXPECT_DOUBLE_EQ(pen.grad.values()[0], 40.0);
  const auto at_anchor = ewc_penalty(flat({1.0}), f, 1e9);
  EXPECT_EQ(at_anchor.loss, 0.0);
  EXPECT_EQ(at_anchor.grad.values()[0], 0.0);
  EXPECT_THROW(ewc_penalty(flat({1.0, 2.0}), f, 1.0), DimensionError);
}

TEST(EwcPenaltyTest, LinearInLambdaAndMatchesFiniteDifferences) {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_instance(rng, false);
    ParamVector fisher = g.params.like(0.0), theta = g.params;
    for (Eigen::Index i = 0; i < fisher.values().size(); ++i) {
      fisher.values()[i] = rng.uniform(0.0, 2.0);
      theta.values()[i] += rng.uniform(-0.5, 0.5);
    }
    const FisherDiagonal f{fisher, g.params};
    const double lambda = rng.uniform(0.1, 50.0);
    const auto a = ewc_penalty(theta, f, lambda), b = ewc_penalty(theta, f, 2.0 * lambda);
    EXPECT_EQ(b.loss, 2.0 * a.loss);
    EXPECT_TRUE(b.grad.values() == 2.0 * a.grad.values());
    const auto fd = testing::central_diff(
        [&](const std::vector<Real>& v) { return testing::ref_ewc(v, fisher, g.params, lambda); },
        testing::to_real(theta));
    EXPECT_LE(testing::max_rel_error(a.grad.values(), fd), 1e-4);
  }
}

TEST(UnlearnLossTest, CancelsWhenMemoriesEqualTargets) {
  Rng rng(16);
  const auto g = testing::random_instance(rng, true);
  const Batch b{g.features, g.labels};
  const FisherDiagonal f{g.params.like(1.0), g.params};
  ParamVector theta = g.params;
  theta.values().array() += 0.1;
  const auto lg = unlearn_loss_grad(theta, g.spec, b, b, f, 0.0);
  EXPECT_EQ(lg.loss, 0.0);
  EXPECT_EQ(lg.grad.values().cwiseAbs().maxCoeff(), 0.0);
}

TEST(UnlearnLossTest, AtAnchorPenaltyVanishesForAnyLambda) {
  Rng rng(17);
  const auto g = testing::random_instance(rng, false);
  const Batch r{g.features, g.labels};
  const Batch m{g.features, testing::random_simplex_rows(rng, g.features.rows(), g.labels.cols(), false)};
  const FisherDiagonal f{g.params.like(3.0), g.params};
  const auto big = unlearn_loss_grad(g.params, g.spec, m, r, f, 1e8);
  Vector want = loss_and_grad(g.params, g.spec, m).grad.values() - loss_and_grad(g.params, g.spec, r).grad.values();
  EXPECT_TRUE(big.grad.values() == want);
}

TEST(UnlearnLossTest, MatchesFiniteDifferences) {
  Rng rng(18);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = testing::random_instance(rng, false);
    const Batch r{g.features, g.labels};
    const Batch m{g.features, testing::random_simplex_rows(rng, g.features.rows(), g.labels.cols(), false)};
    ParamVector fisher = g.params.like(0.0), anchor = g.params;
    for (Eigen::Index i = 0; i < fisher.values().size(); ++i) {
      fisher.values()[i] = rng.uniform(0.0, 1.0);
      anchor.values()[i] += rng.uniform(-0.2, 0.2);
    }
    const FisherDiagonal f{fisher, anchor};
    const double lambda = rng.uniform(0.0, 20.0);
    const auto lg = unlearn_loss_grad(g.params, g.spec, m, r, f, lambda);
    const auto shapes = g.params.shapes();
    auto ref = [&](const std::vector<Real>& v) {
      return testing::ref_loss(v, shapes, m.features, m.labels) - testing::ref_loss(v, shapes, r.features, r.labels) +
             testing::ref_ewc(v, fisher, anchor, lambda);
    };
    EXPECT_NEAR(lg.loss, static_cast<double>(ref(testing::to_real(g.params))), 1e-10);
    const auto fd = testing::central_diff(ref, testing::to_real(g.params));
    EXPECT_LE(testing::max_rel_error(lg.grad.values(), fd), 1e-4) << "trial " << trial;
  }
}

TEST(UnlearnLossTest, NamesTheDivergingTerm) {
  const ModelSpec spec({2, 2});
  ParamVector p(spec);
  p.weights(0)(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Batch b{Matrix::Constant(1, 2, 0.5), Matrix::Identity(1, 2)};
  try {
    unlearn_loss_grad(p, spec, b, b, {p.like(0.0), ParamVector(spec)}, 1.0);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("memory"), std::string::npos) << e.what();
  }
}

// Small federated scenario on blobs shared by the run_* tests.
class UnlearnRunTest : public ::testing::Test {
 protected:
  ModelSpec spec{{10, 12, 4}};
  FederationConfig fed;
  std::vector<Batch> clients;
  GlobalState state;
  UnlearnRequest req;
  Dataset data = make_blobs(4, 60, 10, 0.1, 30);

  void SetUp() override {
    fed.rounds = 4;
    fed.seed = 3;
    const auto part = partition_iid(data, 4, 1);
    clients = client_batches(data, part);
    state = run_federated(fed, spec, part, data);
    req.client_id = 1;
    req.target_class = 2;
    const Dataset own = data.subset(part.assignments[1]);
    req.target_rows = select_class(own, 2);
  }
};

TEST_F(UnlearnRunTest, ZeroEpochsLeaveStateUnchanged) {
  const auto out = run_unlearn_epochs(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, {}, 5, 0);
  EXPECT_TRUE(out.global_params == state.global_params);
  const auto conv = run_conventional(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, {}, 5, 0);
  EXPECT_TRUE(conv.global_params == state.global_params);
}

TEST_F(UnlearnRunTest, OnlyTargetClientChangesAndResultIsReaggregated) {
  const auto out = run_unlearn(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, {}, 5);
  for (std::size_t k = 0; k < 4; ++k) {
    if (k == req.client_id) {
      EXPECT_FALSE(out.client_params[k] == state.client_params[k]);
    } else {
      EXPECT_TRUE(out.client_params[k] == state.client_params[k]);
    }
  }
  EXPECT_TRUE(out.global_params == aggregate(out.client_params, out.weights));
  EXPECT_TRUE(out.global_params == run_unlearn(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, {}, 5).global_params);
}

TEST_F(UnlearnRunTest, HugeLambdaKeepsTargetClientCloserToAnchor) {
  EwcConfig cfg;
  cfg.batch_size = 4;  // several steps, so the penalty acts after the first
  cfg.ewc_epochs = 2;
  // Plain SGD on the penalty is stable only while lr * lambda * F_i < 2;
  // pick the step so the largest Fisher entry sits well inside that range.
  const auto fisher = fisher_diagonal(state.client_params[1], spec, clients[1], cfg.batch_size);
  cfg.learning_rate = 0.5 / (1e6 * fisher.values.values().maxCoeff());
  auto displacement = [&](double lambda) {
    cfg.lambda = lambda;
    const auto out = run_unlearn(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, cfg, 9);
    return (out.client_params[1].values() - state.client_params[1].values()).norm();
  };
  const double small = displacement(10.0), huge = displacement(1e6);
  EXPECT_GT(small, 0.0);
  EXPECT_LT(huge, small);
}

TEST_F(UnlearnRunTest, ConventionalRunOnlyMovesTargetClient) {
  const auto out = run_conventional(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, {}, 5, 1);
  EXPECT_FALSE(out.client_params[1] == state.client_params[1]);
  EXPECT_TRUE(out.client_params[0] == state.client_params[0]);
}

TEST_F(UnlearnRunTest, DivergenceIsReported) {
  EwcConfig cfg;
  cfg.learning_rate = 1e4;
  cfg.batch_size = 1;
  cfg.lambda = 0.0;
  EXPECT_THROW(run_unlearn(state, spec, clients, req, FakeLabelKind::kDebiasTeacher, cfg, 5), DivergenceError);
}

TEST_F(UnlearnRunTest, RetrainDropsTargetRowsOnly) {
  const auto reduced = remove_target(clients, req);
  EXPECT_EQ(reduced[1].size(), clients[1].size() - req.target_rows.size());
  for (Eigen::Index i = 0; i < reduced[1].labels.rows(); ++i) EXPECT_NE(argmax(reduced[1].labels.row(i)), 2u);
  EXPECT_EQ(reduced[0].size(), clients[0].size());
  const auto retrained = run_retrain(fed, spec, clients, req);
  EXPECT_EQ(retrained.round, fed.rounds);
  EXPECT_FALSE(retrained.global_params == state.global_params);
}

TEST(EwcConfigTest, Validation) {
  EwcConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.ewc_epochs = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.lambda = -1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.sigma_fixed = 1.1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace fedaf
