#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracle.hpp"
#include "towl/error.hpp"
#include "towl/graph.hpp"
#include "towl/prox.hpp"
#include "towl/unroll.hpp"

using namespace towl;
using towl::test::max_abs_diff;
using towl::test::svd_norm;

namespace {

IstaProblem random_problem(Rng& rng, std::size_t n, std::size_t k, std::size_t d,
                           double alpha, bool with_graph, ProxKind prox) {
  IstaProblem p;
  p.x = rng.normal_matrix(n, d);
  p.d = random_dictionary(k, d, rng);
  p.alpha = alpha;
  p.beta = 0.05;
  p.prox_kind = prox;
  if (with_graph) p.graph = build_graph(GraphKind::Laplacian, p.x, 3);
  return p;
}

Mat iterate_ista(const IstaProblem& p, std::size_t steps) {
  Mat z(p.n(), p.k());
  for (std::size_t t = 0; t < steps; ++t) z = ista_step(p, z);
  return z;
}

// Dense matrix of Z ↦ ZF − α·G·Z·W acting on the row-major vectorization of Z.
Mat linear_part_matrix(const LayerParams& params, const Mat* g, std::size_t n) {
  const std::size_t k = params.k();
  Mat m(n * k, n * k);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) m(i * k + a, i * k + b) += params.f(b, a);
    }
  }
  if (g && params.alpha > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t a = 0; a < k; ++a) {
          for (std::size_t b = 0; b < k; ++b) {
            m(i * k + a, j * k + b) -= params.alpha * (*g)(i, j) * params.w(b, a);
          }
        }
      }
    }
  }
  return m;
}

}  // namespace

TEST_CASE("identity dictionary gives closed-form parameters") {
  IstaProblem p;
  p.x = Mat{{1, 2, 3}, {0, -1, 0.5}};
  p.d = Mat::identity(3);
  p.beta = 0.2;
  Rng rng(1);
  const LayerParams lp = ista_layer_params(p, 2, rng);
  CHECK(lp.f.max_abs() < 1e-15);
  CHECK(max_abs_diff(lp.u, Mat::identity(3)) < 1e-15);
  CHECK(max_abs_diff(lp.w, Mat::identity(3)) < 1e-15);
  REQUIRE(lp.theta.size() == 2);
  CHECK(lp.theta[0] == doctest::Approx(0.2));
  CHECK(lp.theta[1] == doctest::Approx(0.2));
}

TEST_CASE("initialization is deterministic per seed") {
  IstaProblem p;
  p.x = Mat(6, 5, 0.5);
  p.beta = 0.1;
  Rng a(42), b(42), c(43);
  const LayerParams pa = ista_layer_params(p, 3, a, 4);
  const LayerParams pb = ista_layer_params(p, 3, b, 4);
  const LayerParams pc = ista_layer_params(p, 3, c, 4);
  CHECK(pa.f == pb.f);
  CHECK(pa.u == pb.u);
  CHECK(pa.theta == pb.theta);
  CHECK_FALSE(pa.u == pc.u);
}

TEST_CASE("random dictionary rows have unit norm") {
  Rng rng(3);
  const Mat d = random_dictionary(5, 11, rng);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double s = 0.0;
    for (double v : d.row(i)) s += v * v;
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("layer_forward special cases") {
  Rng rng(7);
  const Mat z = rng.normal_matrix(5, 3);
  const Mat x = rng.normal_matrix(5, 4);
  LayerParams p;
  p.f = Mat::identity(3);
  p.w = Mat(3, 3);
  p.u = Mat(4, 3);
  p.theta = {0.0};
  CHECK(layer_forward(p, 0, z, x, nullptr) == z);

  p.theta = {0.3};
  CHECK(layer_forward(p, 0, Mat(5, 3), x, nullptr).max_abs() == 0.0);

  SUBCASE("preactivation matches a hand expansion") {
    p.f = rng.normal_matrix(3, 3);
    p.w = rng.normal_matrix(3, 3);
    p.u = rng.normal_matrix(4, 3);
    p.alpha = 0.4;
    p.graph_kind = GraphKind::Laplacian;
    const GraphOperator g = build_graph(GraphKind::Laplacian, x, 2);
    const Mat expected = towl::test::naive_matmul(z, p.f) -
                         p.alpha * towl::test::naive_matmul(towl::test::naive_matmul(g.matrix, z), p.w) +
                         towl::test::naive_matmul(x, p.u);
    CHECK(max_abs_diff(layer_preactivation(p, z, x, &g), expected) < 1e-12);
    CHECK_THROWS_AS(layer_preactivation(p, z, x, nullptr), DomainError);
  }
}

TEST_CASE("alpha = 0 layer equals one ISTA step") {
  Rng rng(11);
  for (ProxKind prox : {ProxKind::SoftThreshold, ProxKind::RowGroupThreshold}) {
    const IstaProblem p = random_problem(rng, 12, 4, 7, 0.0, false, prox);
    Rng init(0);
    const LayerParams lp = ista_layer_params(p, 1, init);
    const Mat z = rng.normal_matrix(12, 4);
    CHECK(max_abs_diff(layer_forward(lp, 0, z, p.x, nullptr), ista_step(p, z)) < 1e-12);
  }
}

TEST_CASE("unrolled forward equals composed ISTA steps") {
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    for (bool graph : {false, true}) {
      for (ProxKind prox : {ProxKind::SoftThreshold, ProxKind::RowGroupThreshold}) {
        const IstaProblem p = random_problem(rng, 16, 4, 6, graph ? 0.6 : 0.0, graph, prox);
        Rng init(5);
        const UnrolledModel m = init_from_ista(p, 4, init);
        const ForwardResult r = model_forward(m, std::vector<Mat>{p.x});
        const Mat ref = iterate_ista(p, 4);
        CHECK((r.z_fused - ref).frobenius_norm() < 1e-9);
        CHECK((r.z_per_modality[0] - ref).frobenius_norm() < 1e-9);
      }
    }
  }
}

TEST_CASE("alpha >= 1 still reproduces ISTA") {
  Rng rng(77);
  const IstaProblem p = random_problem(rng, 10, 3, 5, 2.5, true, ProxKind::SoftThreshold);
  Rng init(0);
  const UnrolledModel m = init_from_ista(p, 3, init);
  CHECK(m.params[0].alpha < 1.0);
  const ForwardResult r = model_forward(m, std::vector<Mat>{p.x});
  CHECK((r.z_fused - iterate_ista(p, 3)).frobenius_norm() < 1e-9);
}

TEST_CASE("model_forward reductions") {
  Rng rng(9);
  const IstaProblem p = random_problem(rng, 8, 3, 5, 0.0, false, ProxKind::SoftThreshold);
  Rng init(1);
  UnrolledModel single = init_from_ista(p, 3, init);

  SUBCASE("single modality equals iterated layers") {
    Mat z(8, 3);
    for (std::size_t t = 0; t < 3; ++t) z = layer_forward(single.params[0], t, z, p.x, nullptr);
    CHECK(model_forward(single, std::vector<Mat>{p.x}).z_fused == z);
  }

  SUBCASE("identical modalities with equal weights") {
    UnrolledModel multi = single;
    multi.params = {single.params[0], single.params[0], single.params[0]};
    multi.graphs.assign(3, std::nullopt);
    multi.fusion = Fusion::equal_weights(3);
    const Mat one = model_forward(single, std::vector<Mat>{p.x}).z_fused;
    const Mat fused = model_forward(multi, std::vector<Mat>{p.x, p.x, p.x}).z_fused;
    CHECK(max_abs_diff(one, fused) < 1e-14);
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(model_forward(single, std::vector<Mat>{p.x, p.x}), ShapeError);
    CHECK_THROWS_AS(model_forward(single, std::vector<Mat>{Mat(8, 4)}), ShapeError);
  }

  SUBCASE("deterministic") {
    const auto a = model_forward(single, std::vector<Mat>{p.x});
    const auto b = model_forward(single, std::vector<Mat>{p.x});
    CHECK(a.z_fused == b.z_fused);
    CHECK(a.cache.fingerprint == b.cache.fingerprint);
  }
}

TEST_CASE("cache records every layer") {
  Rng rng(4);
  const IstaProblem p = random_problem(rng, 9, 3, 4, 0.5, true, ProxKind::SoftThreshold);
  Rng init(2);
  const UnrolledModel m = init_from_ista(p, 3, init);
  const ForwardResult r = model_forward(m, std::vector<Mat>{p.x});
  REQUIRE(r.cache.modalities.size() == 1);
  const ModalityCache& c = r.cache.modalities[0];
  CHECK(c.inputs.size() == 3);
  CHECK(c.preactivations.size() == 3);
  CHECK(c.graph_products.size() == 3);
  CHECK(c.inputs[0].max_abs() == 0.0);
  CHECK(r.cache.fingerprint == m.fingerprint());
}

TEST_CASE("fingerprint tracks parameter changes") {
  Rng rng(5);
  const IstaProblem p = random_problem(rng, 6, 2, 3, 0.0, false, ProxKind::SoftThreshold);
  Rng init(0);
  UnrolledModel m = init_from_ista(p, 2, init);
  const auto before = m.fingerprint();
  m.params[0].theta[1] += 1e-12;
  CHECK(m.fingerprint() != before);
}

TEST_CASE("LayerParams validation") {
  LayerParams p;
  p.f = Mat::identity(2);
  p.w = Mat::identity(2);
  p.u = Mat(3, 2);
  p.theta = {0.1};
  CHECK_NOTHROW(p.validate());
  p.alpha = 1.0;
  CHECK_THROWS_AS(p.validate(), DomainError);
  p.alpha = 0.2;
  p.theta = {-0.1};
  CHECK_THROWS_AS(p.validate(), DomainError);
  p.theta = {0.1};
  p.w = Mat(3, 3);
  CHECK_THROWS_AS(p.validate(), ShapeError);
}

TEST_CASE("linear_part_norm agrees with a dense SVD") {
  Rng rng(31);
  for (bool graph : {false, true}) {
    const IstaProblem p = random_problem(rng, 7, 3, 4, graph ? 0.7 : 0.0, graph, ProxKind::SoftThreshold);
    LayerParams lp;
    lp.f = rng.normal_matrix(3, 3);
    lp.w = rng.normal_matrix(3, 3);
    lp.u = rng.normal_matrix(4, 3);
    lp.theta = {0.1};
    lp.alpha = p.alpha;
    lp.graph_kind = graph ? GraphKind::Laplacian : GraphKind::None;
    const GraphOperator* g = graph ? &*p.graph : nullptr;
    const double expected = svd_norm(linear_part_matrix(lp, g ? &g->matrix : nullptr, 7));
    CHECK(linear_part_norm(lp, g, 7) == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("constant layer map has ratio zero") {
  Rng rng(8);
  LayerParams p;
  p.f = Mat(3, 3);
  p.w = Mat(3, 3);
  p.u = rng.normal_matrix(4, 3);
  p.theta = {0.0};
  UnrolledModel m;
  m.t_layers = 1;
  m.params = {p};
  m.graphs = {std::nullopt};
  const Mat x = rng.normal_matrix(6, 4);
  Rng trial_rng(1);
  const ContractionReport r = verify_contraction(m, 0, x, 10, trial_rng);
  CHECK(r.max_ratio == 0.0);
  CHECK(r.linear_norm == 0.0);
  CHECK(r.passed());
}

TEST_CASE("rescaled ISTA layer contracts at the target rate") {
  Rng rng(12);
  for (bool graph : {false, true}) {
    for (ProxKind prox : {ProxKind::SoftThreshold, ProxKind::RowGroupThreshold}) {
      const IstaProblem p = random_problem(rng, 20, 4, 8, graph ? 0.5 : 0.0, graph, prox);
      Rng init(3);
      UnrolledModel m = init_from_ista(p, 2, init);
      rescale_linear_part(m, 0, 0.9, 20);
      CHECK(linear_part_norm(m.params[0], graph ? &*m.graphs[0] : nullptr, 20) ==
            doctest::Approx(0.9).epsilon(1e-9));
      Rng trial_rng(4);
      const ContractionReport r = verify_contraction(m, 0, p.x, 20, trial_rng);
      CHECK(r.max_ratio <= 0.9 + 1e-9);
      CHECK(r.max_ratio <= r.analytic_bound + 1e-9);
      CHECK(r.decay_rate <= 0.9 + 1e-6);
      CHECK(r.reached_fixed_point);
      CHECK(r.iterations <= r.iteration_bound);
      CHECK(r.passed());
    }
  }
}

TEST_CASE("verify_contraction rejects bad arguments") {
  Rng rng(1);
  const IstaProblem p = random_problem(rng, 5, 2, 3, 0.0, false, ProxKind::SoftThreshold);
  Rng init(0);
  const UnrolledModel m = init_from_ista(p, 1, init);
  CHECK_THROWS_AS(verify_contraction(m, 0, p.x, 0, rng), DomainError);
  CHECK_THROWS_AS(verify_contraction(m, 1, p.x, 5, rng), DomainError);
}
