#include <doctest.h>

#include <cmath>

#include "oracle.hpp"
#include "towl/error.hpp"
#include "towl/graph.hpp"
#include "towl/prox.hpp"

using namespace towl;
using towl::test::max_abs_diff;

TEST_CASE("soft_threshold closed forms") {
  CHECK(soft_threshold(Mat{{1.2}}, 0.5)(0, 0) == doctest::Approx(0.7));
  CHECK(soft_threshold(Mat{{-0.3}}, 0.5)(0, 0) == 0.0);
  CHECK(soft_threshold(Mat{{-1.2}}, 0.5)(0, 0) == doctest::Approx(-0.7));
  const Mat z{{0.3, -2.0}, {5.0, 0.0}};
  CHECK(soft_threshold(z, 0.0) == z);
  CHECK_THROWS_AS(soft_threshold(z, -0.1), DomainError);
}

TEST_CASE("row_group_threshold closed forms") {
  const Mat r = row_group_threshold(Mat{{3, 4}}, 2.5);
  CHECK(r(0, 0) == doctest::Approx(1.5));
  CHECK(r(0, 1) == doctest::Approx(2.0));
  CHECK(row_group_threshold(Mat{{0.3, 0.4}}, 0.5) == Mat{{0, 0}});
  const Mat z{{0.3, -2.0}, {5.0, 0.0}};
  CHECK(row_group_threshold(z, 0.0) == z);
  CHECK_THROWS_AS(row_group_threshold(z, -1.0), DomainError);
}

TEST_CASE("apply_prox dispatch and regularizer values") {
  const Mat z{{3, -4}};
  CHECK(apply_prox(ProxKind::Identity, z, 10.0) == z);
  CHECK(apply_prox(ProxKind::SoftThreshold, z, 1.0) == Mat{{2, -3}});
  CHECK(regularizer_value(ProxKind::SoftThreshold, z) == 7.0);
  CHECK(regularizer_value(ProxKind::RowGroupThreshold, z) == 5.0);
  CHECK(regularizer_value(ProxKind::Identity, z) == 0.0);
  CHECK(parse_prox_kind("l1") == ProxKind::SoftThreshold);
  CHECK(parse_prox_kind(to_string(ProxKind::RowGroupThreshold)) == ProxKind::RowGroupThreshold);
}

TEST_CASE("prox_oracle reproduces the closed forms") {
  CHECK(prox_oracle(Mat{{1.2}}, 0.5, ProxKind::SoftThreshold, 2.0, 1e-4)(0, 0) ==
        doctest::Approx(0.7).epsilon(1e-3));
  const Mat r = prox_oracle(Mat{{3, 4}}, 2.5, ProxKind::RowGroupThreshold, 6.0, 1e-4);
  CHECK(std::abs(r(0, 0) - 1.5) < 1e-3);
  CHECK(std::abs(r(0, 1) - 2.0) < 1e-3);
  const Mat x{{0.3, -0.7}};
  CHECK(prox_oracle(x, 0.0, ProxKind::SoftThreshold, 1.0, 1e-3) == x);

  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const Mat x_point = rng.normal_matrix(2, 3) * 2.0;
    const double theta = rng.uniform(0.0, 2.0);
    for (ProxKind kind : {ProxKind::SoftThreshold, ProxKind::RowGroupThreshold}) {
      const Mat closed = apply_prox(kind, x_point, theta);
      const Mat grid = prox_oracle(x_point, theta, kind, 12.0, 1e-3);
      CHECK(max_abs_diff(closed, grid) < 1e-3);
    }
  }
}

TEST_CASE("moreau_envelope") {
  CHECK(moreau_envelope(Mat{{1.2}}, 1.0, 0.5, ProxKind::SoftThreshold) ==
        doctest::Approx(0.475));
  CHECK(moreau_envelope(Mat{{1.2, -3}}, 1.0, 0.0, ProxKind::SoftThreshold) == 0.0);

  // brute-force envelope: min over a grid of (1/2μ)(z−x)² + θ|z|
  const double x = -0.8;
  const double mu = 0.5;
  const double theta = 0.3;
  double best = 1e300;
  for (double z = -3.0; z <= 3.0; z += 1e-4) {
    best = std::min(best, (z - x) * (z - x) / (2 * mu) + theta * std::abs(z));
  }
  CHECK(std::abs(moreau_envelope(Mat{{x}}, mu, theta, ProxKind::SoftThreshold) - best) < 1e-3);
}

TEST_CASE("ista_lipschitz") {
  IstaProblem p;
  p.x = Mat(4, 3);
  p.d = Mat::identity(3);
  CHECK(ista_lipschitz(p) == doctest::Approx(1.0));
  p.x = Mat(4, 1);
  p.d = Mat{{2}};
  CHECK(ista_lipschitz(p) == doctest::Approx(4.0));
  p.d = Mat(1, 1);
  CHECK_THROWS_AS(ista_lipschitz(p), DomainError);

  Rng rng(17);
  IstaProblem q;
  q.x = rng.uniform_matrix(12, 5, 0.0, 1.0);
  q.d = rng.normal_matrix(3, 5);
  q.alpha = 0.7;
  q.graph = laplacian(knn_similarity(q.x, 3));
  const double oracle = std::pow(test::svd_norm(q.d), 2) + 0.7 * test::svd_norm(q.graph->matrix);
  CHECK(std::abs(ista_lipschitz(q) - oracle) < 1e-6);
}

TEST_CASE("ista_step analytic cases") {
  Rng rng(2);
  IstaProblem p;
  p.x = rng.normal_matrix(5, 3);
  p.d = Mat::identity(3);
  p.beta = 0.4;
  CHECK(max_abs_diff(ista_step(p, Mat(5, 3)), soft_threshold(p.x, 0.4)) < 1e-15);

  p.beta = 0.0;
  CHECK(max_abs_diff(ista_step(p, p.x), p.x) < 1e-15);
}

TEST_CASE("ista_solve: identity-dictionary lasso is solved in one step") {
  Rng rng(3);
  IstaProblem p;
  p.x = rng.normal_matrix(6, 4);
  p.d = Mat::identity(4);
  p.beta = 0.3;
  const IstaResult r = ista_solve(p, 100, 1e-12);
  CHECK(max_abs_diff(r.z, soft_threshold(p.x, 0.3)) < 1e-8);
  CHECK(r.converged);
}

TEST_CASE("ista_solve: least squares matches the normal equations") {
  Rng rng(4);
  IstaProblem p;
  p.x = rng.normal_matrix(8, 5);
  p.d = rng.normal_matrix(3, 5);
  p.prox_kind = ProxKind::Identity;
  const IstaResult r = ista_solve(p, 200000, 1e-14);
  const Eigen::MatrixXd d = test::to_eigen(p.d);
  const Eigen::MatrixXd x = test::to_eigen(p.x);
  const Eigen::MatrixXd z = (d * d.transpose()).ldlt().solve(d * x.transpose()).transpose();
  CHECK(max_abs_diff(r.z, test::from_eigen(z)) < 1e-6);
}

TEST_CASE("ista_solve: objective trace is monotone and matches a long run") {
  Rng rng(6);
  for (ProxKind kind : {ProxKind::SoftThreshold, ProxKind::RowGroupThreshold}) {
    IstaProblem p;
    p.x = rng.uniform_matrix(8, 4, 0.0, 1.0);
    p.d = rng.normal_matrix(3, 4);
    p.alpha = 0.5;
    p.beta = 0.2;
    p.graph = laplacian(knn_similarity(p.x, 2));
    p.prox_kind = kind;
    const IstaResult shortrun = ista_solve(p, 50, 0.0);
    CHECK(shortrun.trace.size() == 51);
    for (std::size_t t = 1; t < shortrun.trace.size(); ++t) {
      CHECK(shortrun.trace[t] <= shortrun.trace[t - 1] + 1e-10);
    }
    const IstaResult longrun = ista_solve(p, 5000, 0.0);
    const IstaResult mid = ista_solve(p, 2000, 1e-12);
    CHECK(std::abs(mid.trace.back() - longrun.trace.back()) < 1e-4);
    CHECK(std::abs(ista_objective(p, longrun.z) - longrun.trace.back()) < 1e-12);
  }
}
