#include "towl/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "towl/error.hpp"
#include "towl/rng.hpp"

namespace towl {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                     b.shape_string());
  }
}

void require_finite(const Mat& m, const char* op) {
  if (!m.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("Mat: ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Mat Mat::diagonal(std::span<const double> values) {
  Mat m(values.size(), values.size());
  for (std::size_t i = 0; i < values.size(); ++i) m(i, i) = values[i];
  return m;
}

Mat Mat::from_data(std::size_t rows, std::size_t cols, std::vector<double> data) {
  if (data.size() != rows * cols) {
    throw ShapeError("Mat::from_data: " + std::to_string(data.size()) + " values for " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Mat m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(data);
  return m;
}

Mat Mat::transpose() const {
  Mat t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Mat& Mat::operator+=(const Mat& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) noexcept {
  for (double& v : data_) v *= s;
  return *this;
}

bool Mat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Mat::frobenius_norm() const noexcept {
  double s = 0.0;
  for (double v : data_) s += v * v;
  return std::sqrt(s);
}

double Mat::max_abs() const noexcept {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

std::string Mat::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(Mat a, double s) { return a *= s; }
Mat operator*(double s, Mat a) { return a *= s; }

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape_string() + " by " + b.shape_string());
  }
  Mat out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      const double* bp = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aip * bp[j];
    }
  }
  require_finite(out, "matmul");
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                     b.shape_string());
  }
  Mat out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double* bp = b.row(p).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double api = a(p, i);
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += api * bp[j];
    }
  }
  require_finite(out, "matmul_tn");
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                     b.shape_string());
  }
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t p = 0; p < ai.size(); ++p) s += ai[p] * bj[p];
      out(i, j) = s;
    }
  }
  require_finite(out, "matmul_nt");
  return out;
}

Mat hadamard(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "hadamard");
  Mat out = a;
  auto od = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= bd[i];
  return out;
}

double inner(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "inner");
  double s = 0.0;
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < ad.size(); ++i) s += ad[i] * bd[i];
  return s;
}

double spectral_norm(const Mat& a, const PowerIterationOptions& opts) {
  if (a.empty()) throw DomainError("spectral_norm: empty matrix");
  if (opts.iters == 0) throw DomainError("spectral_norm: iters must be >= 1");
  if (a.max_abs() == 0.0) return 0.0;

  Rng rng(opts.seed);
  std::vector<double> v(a.cols());
  for (double& x : v) x = rng.normal();
  std::vector<double> av(a.rows());
  std::vector<double> next(a.cols());

  auto normalize = [](std::vector<double>& x) {
    double s = 0.0;
    for (double e : x) s += e * e;
    s = std::sqrt(s);
    if (s > 0.0)
      for (double& e : x) e /= s;
    return s;
  };
  if (normalize(v) == 0.0) v[0] = 1.0;

  double sigma = 0.0;
  for (std::size_t it = 0; it < opts.iters; ++it) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const auto r = a.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * v[j];
      av[i] = s;
    }
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      const auto r = a.row(i);
      for (std::size_t j = 0; j < r.size(); ++j) next[j] += r[j] * av[i];
    }
    // ‖aᵀa v‖ with ‖v‖ = 1 converges to σ²
    const double lambda = normalize(next);
    if (lambda == 0.0) {
      // v landed in the null space; restart from a fresh direction
      for (double& x : v) x = rng.normal();
      normalize(v);
      continue;
    }
    const double estimate = std::sqrt(lambda);
    v.swap(next);
    const bool converged = sigma > 0.0 && std::abs(estimate - sigma) < opts.tol * estimate;
    sigma = estimate;
    if (converged) break;
  }
  return sigma;
}

Mat row_softmax(const Mat& z) {
  Mat out(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    if (r.empty()) continue;
    const double m = *std::max_element(r.begin(), r.end());
    auto o = out.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) {
      o[j] = std::exp(r[j] - m);
      s += o[j];
    }
    for (double& v : o) v /= s;
  }
  return out;
}

Mat minmax_normalize(const Mat& x) {
  Mat out(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      lo = std::min(lo, x(i, j));
      hi = std::max(hi, x(i, j));
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      out(i, j) = range > 0.0 ? (x(i, j) - lo) / range : 0.0;
    }
  }
  return out;
}

Mat select_rows(const Mat& x, const std::vector<bool>& mask) {
  if (mask.size() != x.rows()) {
    throw ShapeError("select_rows: mask length " + std::to_string(mask.size()) +
                     " for matrix " + x.shape_string());
  }
  const auto count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  Mat out(count, x.cols());
  std::size_t r = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (!mask[i]) continue;
    std::copy(x.row(i).begin(), x.row(i).end(), out.row(r).begin());
    ++r;
  }
  return out;
}

std::vector<std::size_t> row_argmax(const Mat& z) {
  std::vector<std::size_t> idx(z.rows(), 0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    for (std::size_t j = 1; j < r.size(); ++j)
      if (r[j] > r[idx[i]]) idx[i] = j;
  }
  return idx;
}

std::vector<double> row_max(const Mat& z) {
  std::vector<double> out(z.rows(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto r = z.row(i);
    if (!r.empty()) out[i] = *std::max_element(r.begin(), r.end());
  }
  return out;
}

}  // namespace towl
