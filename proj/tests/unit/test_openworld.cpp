#include <doctest.h>

#include <cmath>
#include <vector>

#include "towl/error.hpp"
#include "towl/openworld.hpp"
#include "towl/rng.hpp"

using namespace towl;

namespace {

// Row with the given maximum spread evenly over the other columns.
std::vector<double> row_with_max(double max, std::size_t k) {
  std::vector<double> r(k, (1.0 - max) / static_cast<double>(k - 1));
  r[0] = max;
  return r;
}

Mat from_rows(const std::vector<std::vector<double>>& rows) {
  Mat m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace

TEST_CASE("known_loss closed forms") {
  const Mat one_hot{{1, 0}, {0, 1}};
  const std::vector<int> labels{0, 1};
  CHECK(known_loss(one_hot, labels, {true, true}) == doctest::Approx(0.0));
  CHECK(known_loss(Mat(3, 4, 0.25), std::vector<int>{0, 1, 2}, {true, true, true}) ==
        doctest::Approx(std::log(4.0)));
  const Mat two{{0.5, 0.5}, {0.75, 0.25}};
  CHECK(known_loss(two, labels, {true, true}) == doctest::Approx(1.5 * std::log(2.0)));
  CHECK(known_loss(two, labels, {false, true}) == doctest::Approx(-std::log(0.25)));
  CHECK_THROWS_AS(known_loss(two, labels, {false, false}), DomainError);
  CHECK(known_loss(Mat{{0.0, 1.0}}, std::vector<int>{0}, {true}) ==
        doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("rank_and_discard counting") {
  Mat z(10, 2);
  for (std::size_t i = 0; i < 10; ++i) {
    z(i, 0) = 0.5 + 0.04 * static_cast<double>((i * 7) % 10);
    z(i, 1) = 1.0 - z(i, 0);
  }
  const Mask all(10, true);
  const Selection s = rank_and_discard(z, all, 0.1);
  std::size_t kept = 0;
  for (bool b : s.selected) kept += b;
  CHECK(kept == 8);
  CHECK(s.discarded_low == 1);
  CHECK(s.discarded_high == 1);
  // (i*7)%10 == 0 at i=0 is the lowest key, == 9 at i=7 the highest
  CHECK_FALSE(s.selected[0]);
  CHECK_FALSE(s.selected[7]);

  const Selection none = rank_and_discard(z, all, 0.0);
  for (bool b : none.selected) CHECK(b);

  Mask five(10, false);
  for (std::size_t i = 0; i < 5; ++i) five[i] = true;
  const Selection small = rank_and_discard(z, five, 0.1);
  for (std::size_t i = 0; i < 10; ++i) CHECK(small.selected[i] == (i < 5));
  CHECK_THROWS_AS(rank_and_discard(z, all, 0.5), DomainError);
}

TEST_CASE("rank_and_discard breaks ties by index") {
  const Mat z(6, 2, 0.5);
  const Selection s = rank_and_discard(z, Mask(6, true), 0.2);
  CHECK(s.selected == Mask{false, true, true, true, true, false});
}

TEST_CASE("unknown_loss closed forms") {
  CHECK(unknown_loss(Mat{{0.9, 0.1}}, {true}) == doctest::Approx(std::log(0.9)));
  CHECK(unknown_loss(Mat{{0.5, 0.5}}, {true}) == doctest::Approx(std::log(0.5)));
  CHECK(unknown_loss(Mat{{0.9, 0.1}}, {false}) == 0.0);

  Rng rng(3);
  const Mat p = row_softmax(rng.normal_matrix(20, 4));
  for (std::size_t i = 0; i < 20; ++i) {
    Mask m(20, false);
    m[i] = true;
    const double v = unknown_loss(p, m);
    CHECK(v <= 0.0);
    CHECK(v >= std::log(0.25) - 1e-12);
  }
}

TEST_CASE("total_loss combination") {
  CHECK(total_loss(1.0, -0.5, 1.0, 1.0) == 0.5);
  CHECK(total_loss(2.0, -3.0, 0.5, 0.0) == 1.0);
  CHECK(total_loss(2.0, -3.0, 0.0, 0.0) == 0.0);
  CHECK_THROWS_AS(total_loss(1.0, 1.0, -1.0, 0.0), DomainError);
}

TEST_CASE("select_agent examples") {
  SUBCASE("degenerate rows") {
    const Mat z = from_rows(std::vector<std::vector<double>>(5, row_with_max(0.8, 3)));
    const AgentThreshold a = select_agent(z);
    CHECK(a.a_k == doctest::Approx(0.8));
    CHECK(a.a_u == doctest::Approx(0.8));
    CHECK(a.a == doctest::Approx(0.8));
  }
  SUBCASE("one uncertain row among ten") {
    std::vector<std::vector<double>> rows(9, {0.9, 0.04, 0.03, 0.03});
    rows.push_back({0.3, 0.25, 0.25, 0.2});
    const AgentThreshold a = select_agent(from_rows(rows));
    CHECK(a.a_k == doctest::Approx(0.84));
    CHECK(a.a_u == doctest::Approx(0.3));
    CHECK(a.a == doctest::Approx(0.57));
    CHECK(a.n_high_entropy == 1);
    CHECK(a.a == (a.a_k + a.a_u) / 2);
  }
  SUBCASE("uniform binary rows") {
    const AgentThreshold a = select_agent(Mat(4, 2, 0.5));
    CHECK(a.a_k == doctest::Approx(0.5));
    CHECK(a.a_u == doctest::Approx(0.5));
    CHECK(a.a == doctest::Approx(0.5));
  }
  SUBCASE("bounds on random rows") {
    Rng rng(11);
    for (int t = 0; t < 20; ++t) {
      const Mat p = row_softmax(rng.normal_matrix(30, 4) * 3.0);
      const AgentThreshold a = select_agent(p);
      CHECK(a.a_k >= 0.25 - 1e-12);
      CHECK(a.a_k <= 1.0);
      CHECK(a.a >= std::min(a.a_k, a.a_u));
      CHECK(a.a <= std::max(a.a_k, a.a_u));
    }
  }
  CHECK_THROWS_AS(select_agent(Mat(0, 3)), DomainError);
}

TEST_CASE("predict thresholds at the agent") {
  AgentThreshold a;
  a.a = 0.5;
  const Mat z{{0.3, 0.2, 0.25, 0.25}, {0.05, 0.9, 0.05, 0.0}, {0.5, 0.5, 0.0, 0.0},
              {0.4, 0.6, 0.0, 0.0}};
  CHECK(predict(z, a) == std::vector<int>{kUnknown, 1, kUnknown, 1});

  a.a = 0.3;
  CHECK(predict(Mat{{0.35, 0.35, 0.3}}, a) == std::vector<int>{0});
}

TEST_CASE("predict is invariant to row rescaling with renormalization") {
  Rng rng(12);
  const Mat p = row_softmax(rng.normal_matrix(10, 3));
  Mat scaled = p * 7.5;
  for (std::size_t i = 0; i < scaled.rows(); ++i) {
    double s = 0.0;
    for (double v : scaled.row(i)) s += v;
    for (double& v : scaled.row(i)) v /= s;
  }
  CHECK(row_argmax(p) == row_argmax(scaled));
}

TEST_CASE("open_world_accuracy counting") {
  const std::vector<int> known{0, 1, 2};
  const std::vector<int> truth{0, 1, 2, 7, 8};
  CHECK(open_world_accuracy(std::vector<int>{0, 1, 2, kUnknown, kUnknown}, truth, known).accuracy ==
        1.0);
  const AccuracyReport mixed =
      open_world_accuracy(std::vector<int>{0, 1, 0, kUnknown, kUnknown}, truth, known);
  CHECK(mixed.accuracy == doctest::Approx(0.8));
  CHECK(mixed.correct == 4);
  CHECK(mixed.unknown_total == 2);
  CHECK(mixed.unknown_recall == 1.0);
  CHECK(mixed.per_class_recall.at(2) == 0.0);
  CHECK(mixed.per_class_recall.at(0) == 1.0);

  CHECK(open_world_accuracy(std::vector<int>(3, kUnknown), std::vector<int>{0, 1, 2}, known)
            .accuracy == 0.0);
  CHECK_THROWS_AS(open_world_accuracy(std::vector<int>{0}, std::vector<int>{0, 1}, known),
                  ShapeError);
}

TEST_CASE("evaluate_loss gradient matches finite differences") {
  Rng rng(21);
  const Mat p = row_softmax(rng.normal_matrix(12, 3));
  Mask labeled(12, false), pool(12, false);
  std::vector<int> labels(12, kUnknown);
  for (std::size_t i = 0; i < 4; ++i) {
    labeled[i] = true;
    labels[i] = static_cast<int>(i % 3);
  }
  for (std::size_t i = 4; i < 12; ++i) pool[i] = true;
  const LossTargets t = make_loss_targets(p, labels, labeled, pool, 0.1);
  const LossEvaluation e = evaluate_loss(p, t, 0.7, 1.3);
  CHECK(e.report.l_total == 0.7 * e.report.l_k + 1.3 * e.report.l_u);
  CHECK(e.report.n_labeled == 4);
  CHECK(e.report.n_unlabeled_used == 8);

  const double eps = 1e-7;
  Mat q = p;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double v = q.data()[i];
    q.data()[i] = v + eps;
    const double up = evaluate_loss(q, t, 0.7, 1.3).report.l_total;
    q.data()[i] = v - eps;
    const double down = evaluate_loss(q, t, 0.7, 1.3).report.l_total;
    q.data()[i] = v;
    CHECK(e.grad.data()[i] == doctest::Approx((up - down) / (2 * eps)).epsilon(1e-6));
  }
}

TEST_CASE("empty selection is flagged") {
  const Mat p = Mat(3, 2, 0.5);
  const LossTargets t = make_loss_targets(p, std::vector<int>{0, 0, 0}, {true, false, false},
                                          {false, false, false}, 0.1);
  const LossEvaluation e = evaluate_loss(p, t, 1.0, 1.0);
  CHECK(e.report.empty_selection);
  CHECK(e.report.l_u == 0.0);
}

TEST_CASE("softmax_backward matches finite differences") {
  Rng rng(22);
  const Mat z = rng.normal_matrix(4, 3);
  const Mat g = rng.normal_matrix(4, 3);
  const Mat dz = softmax_backward(row_softmax(z), g);
  const double eps = 1e-6;
  Mat w = z;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double v = w.data()[i];
    w.data()[i] = v + eps;
    const double up = inner(row_softmax(w), g);
    w.data()[i] = v - eps;
    const double down = inner(row_softmax(w), g);
    w.data()[i] = v;
    CHECK(dz.data()[i] == doctest::Approx((up - down) / (2 * eps)).epsilon(1e-7));
  }
}

TEST_CASE("entropy helpers") {
  CHECK(row_entropy(std::vector<double>{0.5, 0.5}) == doctest::Approx(std::log(2.0)));
  CHECK(row_entropy(std::vector<double>{1.0, 0.0}) == 0.0);
  CHECK(mean_entropy(Mat{{0.5, 0.5}, {1.0, 0.0}}, {true, true}) ==
        doctest::Approx(std::log(2.0) / 2));
}
