#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace towl {

/// Dense row-major real matrix. Every numeric quantity in the library
/// (features, codes, dictionaries, graph operators, weights) is a Mat.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::initializer_list<std::initializer_list<double>> rows);

  static Mat identity(std::size_t n);
  static Mat diagonal(std::span<const double> values);
  /// Takes ownership of `data`; its length must be rows * cols.
  static Mat from_data(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  Mat transpose() const;

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s) noexcept;

  bool same_shape(const Mat& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;
  double frobenius_norm() const noexcept;
  double max_abs() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(Mat a, double s);
Mat operator*(double s, Mat a);

/// a * b. Throws ShapeError naming both shapes when a.cols != b.rows, and
/// NumericError when the product overflows.
Mat matmul(const Mat& a, const Mat& b);
/// aᵀ * b without materializing the transpose.
Mat matmul_tn(const Mat& a, const Mat& b);
/// a * bᵀ without materializing the transpose.
Mat matmul_nt(const Mat& a, const Mat& b);

Mat hadamard(const Mat& a, const Mat& b);
/// Frobenius inner product.
double inner(const Mat& a, const Mat& b);

struct PowerIterationOptions {
  std::size_t iters = 200;
  double tol = 1e-10;
  std::uint64_t seed = 0x5eed5eedULL;
};

/// Largest singular value by power iteration on aᵀa. Stops when the
/// relative change of the estimate drops below `tol` or after `iters`
/// iterations. A zero matrix yields 0.
double spectral_norm(const Mat& a, const PowerIterationOptions& opts = {});

/// Numerically stable softmax of every row (max subtraction).
Mat row_softmax(const Mat& z);

/// Per-column affine map onto [0, 1]. Constant columns map to 0.
Mat minmax_normalize(const Mat& x);

/// Rows of `x` whose mask entry is set, in order.
Mat select_rows(const Mat& x, const std::vector<bool>& mask);

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<std::size_t> row_argmax(const Mat& z);
std::vector<double> row_max(const Mat& z);

}  // namespace towl
