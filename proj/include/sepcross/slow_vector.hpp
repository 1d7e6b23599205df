#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>

namespace sepcross {

inline constexpr std::size_t kMaxSlowDim = 4;

/// Slow variables z. Fixed inline capacity so the hot integration loops never
/// allocate; the runtime size is the model's dim_z (possibly 0).
class SlowVector {
 public:
  SlowVector() = default;
  explicit SlowVector(std::size_t n, double fill = 0.0) : n_(n) {
    if (n > kMaxSlowDim) throw std::length_error("SlowVector: dimension exceeds kMaxSlowDim");
    std::fill_n(v_.begin(), n, fill);
  }
  SlowVector(std::initializer_list<double> init) : SlowVector(init.size()) {
    std::copy(init.begin(), init.end(), v_.begin());
  }
  explicit SlowVector(std::span<const double> values) : SlowVector(values.size()) {
    std::copy(values.begin(), values.end(), v_.begin());
  }

  [[nodiscard]] std::size_t size() const noexcept { return n_; }
  [[nodiscard]] bool empty() const noexcept { return n_ == 0; }
  double& operator[](std::size_t i) noexcept { return v_[i]; }
  double operator[](std::size_t i) const noexcept { return v_[i]; }
  double* begin() noexcept { return v_.data(); }
  double* end() noexcept { return v_.data() + n_; }
  [[nodiscard]] const double* begin() const noexcept { return v_.data(); }
  [[nodiscard]] const double* end() const noexcept { return v_.data() + n_; }
  [[nodiscard]] std::span<const double> span() const noexcept { return {v_.data(), n_}; }
  std::span<double> span() noexcept { return {v_.data(), n_}; }

  SlowVector& operator+=(const SlowVector& o) noexcept {
    for (std::size_t i = 0; i < n_; ++i) v_[i] += o.v_[i];
    return *this;
  }
  SlowVector& operator-=(const SlowVector& o) noexcept {
    for (std::size_t i = 0; i < n_; ++i) v_[i] -= o.v_[i];
    return *this;
  }
  SlowVector& operator*=(double s) noexcept {
    for (std::size_t i = 0; i < n_; ++i) v_[i] *= s;
    return *this;
  }
  friend SlowVector operator+(SlowVector a, const SlowVector& b) noexcept { return a += b; }
  friend SlowVector operator-(SlowVector a, const SlowVector& b) noexcept { return a -= b; }
  friend SlowVector operator*(SlowVector a, double s) noexcept { return a *= s; }
  friend SlowVector operator*(double s, SlowVector a) noexcept { return a *= s; }
  friend bool operator==(const SlowVector& a, const SlowVector& b) noexcept {
    return a.n_ == b.n_ && std::equal(a.begin(), a.end(), b.begin());
  }

  [[nodiscard]] double dot(const SlowVector& o) const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += v_[i] * o.v_[i];
    return s;
  }
  [[nodiscard]] double norm1() const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s += std::abs(v_[i]);
    return s;
  }
  [[nodiscard]] double norm_inf() const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) s = std::max(s, std::abs(v_[i]));
    return s;
  }

 private:
  std::array<double, kMaxSlowDim> v_{};
  std::size_t n_ = 0;
};

}  // namespace sepcross
