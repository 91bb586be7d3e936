#pragma once

// Serial complex-to-complex FFT building blocks.
//
// Forward transforms use the exp(-2*pi*i*jk/n) sign convention and are
// unnormalized. All routines are pure and may be called concurrently.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace collfft {

template <typename Scalar>
using Complex = std::complex<Scalar>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, 1>;

/// Row-major dense complex matrix; the row-major layout is what the slab
/// chunking and the wire format rely on.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic,
                              Eigen::RowMajor>;

using ComplexSample = Complex<double>;
using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

/// Thrown for transform sizes the radix-2 kernel cannot handle.
class LengthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

constexpr bool is_pow2(std::size_t n) noexcept { return std::has_single_bit(n); }

/// O(n^2) transform evaluated straight from the definition. This is the
/// correctness oracle; it shares no code with the fast path.
template <typename Derived>
auto dft_naive(const Eigen::MatrixBase<Derived>& x) {
  using C = typename Derived::Scalar;
  using Scalar = typename C::value_type;
  const Eigen::Index n = x.size();
  // roots[m] = exp(-2*pi*i*m/n); jk is reduced mod n so every angle is in [0, 2*pi).
  std::vector<C> roots(static_cast<std::size_t>(n));
  for (Eigen::Index m = 0; m < n; ++m) {
    const Scalar angle = -2 * std::numbers::pi_v<Scalar> * static_cast<Scalar>(m) /
                         static_cast<Scalar>(n);
    roots[static_cast<std::size_t>(m)] = C{std::cos(angle), std::sin(angle)};
  }
  VectorX<Scalar> out(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    C acc{0, 0};
    for (Eigen::Index j = 0; j < n; ++j) {
      acc += x(j) * roots[static_cast<std::size_t>((j * k) % n)];
    }
    out(k) = acc;
  }
  return out;
}

/// In-place iterative radix-2 decimation-in-time FFT.
template <typename Scalar>
void fft_pow2_inplace(std::span<Complex<Scalar>> data) {
  const std::size_t n = data.size();
  if (n == 0 || !is_pow2(n)) {
    throw LengthError("fft_pow2: length " + std::to_string(n) +
                      " is not a power of two");
  }
  if (n == 1) return;

  // bit-reversal permutation
  const int bits = std::countr_zero(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t rev = 0;
    for (int b = 0; b < bits; ++b) rev |= ((i >> b) & 1u) << (bits - 1 - b);
    if (i < rev) std::swap(data[i], data[rev]);
  }

  std::vector<Complex<Scalar>> twiddle;
  twiddle.reserve(n / 2);
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    twiddle.resize(half);
    for (std::size_t k = 0; k < half; ++k) {
      const Scalar angle = -2 * std::numbers::pi_v<Scalar> *
                           static_cast<Scalar>(k) / static_cast<Scalar>(len);
      twiddle[k] = std::polar(Scalar{1}, angle);
    }
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const Complex<Scalar> even = data[start + k];
        const Complex<Scalar> odd = data[start + k + half] * twiddle[k];
        data[start + k] = even + odd;
        data[start + k + half] = even - odd;
      }
    }
  }
}

template <typename Derived>
auto fft_pow2(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar::value_type;
  VectorX<Scalar> out = x;
  fft_pow2_inplace<Scalar>(std::span(out.data(), static_cast<std::size_t>(out.size())));
  return out;
}

/// Transforms every row of `m` in place.
template <typename Scalar>
void fft_rows_inplace(MatrixX<Scalar>& m) {
  const auto cols = static_cast<std::size_t>(m.cols());
  if (cols == 0 || !is_pow2(cols)) {
    throw LengthError("fft_rows: column count " + std::to_string(cols) +
                      " is not a power of two");
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    fft_pow2_inplace<Scalar>(std::span(m.row(r).data(), cols));
  }
}

template <typename Derived>
auto fft_rows(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar::value_type;
  MatrixX<Scalar> out = m;
  fft_rows_inplace(out);
  return out;
}

/// 2D transform: rows, transpose, rows, transpose back.
template <typename Derived>
auto fft2_serial(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar::value_type;
  if (!is_pow2(static_cast<std::size_t>(m.rows()))) {
    throw LengthError("fft2_serial: row count " + std::to_string(m.rows()) +
                      " is not a power of two");
  }
  MatrixX<Scalar> work = fft_rows(m);
  MatrixX<Scalar> transposed = work.transpose();
  fft_rows_inplace(transposed);
  return MatrixX<Scalar>(transposed.transpose());
}

/// Elementwise max of |a - b| / max(|b|, 1e-30).
template <typename DerivedA, typename DerivedB>
auto max_rel_error(const Eigen::MatrixBase<DerivedA>& a,
                   const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar::value_type;
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_rel_error: shape mismatch");
  }
  constexpr Scalar floor = Scalar(1e-30);
  Scalar worst{0};
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const Scalar err = std::abs(a(i, j) - b(i, j)) / std::max(std::abs(b(i, j)), floor);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const auto v = m(i, j);
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    }
  }
  return true;
}

}  // namespace collfft
