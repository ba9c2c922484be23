#pragma once

// Dormand-Prince 5(4) with the standard 4th-order continuous extension.
// The stepper advances one accepted step at a time so callers can inspect
// the step (events, chart changes) and edit the state between steps.

#include "causal_lens/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace causal_lens {

struct OdeOptions {
  double atol = 1e-10;
  double rtol = 1e-10;
  double h_max = std::numeric_limits<double>::infinity();
  double h_min_rel = 1e-14;  // relative to max(1, |s|)
  size_t max_steps = 5'000'000;
};

/// Continuous extension of one accepted step; valid on [s0, s0 + h].
struct DenseStep {
  double s0 = 0.0;
  double h = 0.0;
  Vec r1, r2, r3, r4, r5;

  Vec eval(double s) const {
    const double th = h == 0.0 ? 0.0 : (s - s0) / h;
    const double th1 = 1.0 - th;
    return r1 + th * (r2 + th1 * (r3 + th * (r4 + th1 * r5)));
  }
  double end() const { return s0 + h; }
};

class Dopri5 {
 public:
  using Rhs = std::function<void(double, const Vec&, Vec&)>;

  Dopri5(Rhs rhs, OdeOptions opt = {}) : f_(std::move(rhs)), opt_(opt) {}

  /// (Re)starts from (s, y). The last step size is kept as a hint.
  void reset(double s, const Vec& y) {
    s_ = s;
    y_ = y;
    k1_.resize(y.size());
    f_(s_, y_, k1_);
    fresh_ = true;
  }

  void set_h_max(double h) { opt_.h_max = h; }

  double s() const { return s_; }
  const Vec& y() const { return y_; }
  const DenseStep& dense() const { return dense_; }
  size_t steps() const { return steps_; }

  /// Takes one accepted step toward s_end (never past it).
  void step(double s_end) {
    const double dir = s_end >= s_ ? 1.0 : -1.0;
    const double span = std::abs(s_end - s_);
    if (span == 0.0) return;
    if (fresh_ || h_ == 0.0) h_ = initial_step(dir);
    fresh_ = false;
    double h = dir * std::min({std::abs(h_), span, opt_.h_max});

    const Eigen::Index n = y_.size();
    Vec k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), yt(n), y1(n);
    for (;;) {
      if (++steps_ > opt_.max_steps) throw Error(ErrorKind::budget, "ODE step budget exhausted");
      const double hmin = opt_.h_min_rel * std::max(1.0, std::abs(s_));
      if (std::abs(h) < hmin && std::abs(h) < span)
        throw Error(ErrorKind::stiffness, "step size underflow at s=" + std::to_string(s_));

      yt = y_ + h * (a21 * k1_);
      f_(s_ + c2 * h, yt, k2);
      yt = y_ + h * (a31 * k1_ + a32 * k2);
      f_(s_ + c3 * h, yt, k3);
      yt = y_ + h * (a41 * k1_ + a42 * k2 + a43 * k3);
      f_(s_ + c4 * h, yt, k4);
      yt = y_ + h * (a51 * k1_ + a52 * k2 + a53 * k3 + a54 * k4);
      f_(s_ + c5 * h, yt, k5);
      yt = y_ + h * (a61 * k1_ + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      f_(s_ + h, yt, k6);
      y1 = y_ + h * (a71 * k1_ + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
      f_(s_ + h, y1, k7);

      double err = 0.0;
      bool finite = y1.allFinite();
      if (finite) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const double e = h * (e1 * k1_[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
          const double sc = opt_.atol + opt_.rtol * std::max(std::abs(y_[i]), std::abs(y1[i]));
          err += (e / sc) * (e / sc);
        }
        err = std::sqrt(err / static_cast<double>(n));
        finite = std::isfinite(err);
      }
      if (!finite) {
        h *= 0.25;
        continue;
      }
      if (err <= 1.0) {
        dense_.s0 = s_;
        dense_.h = h;
        dense_.r1 = y_;
        dense_.r2 = y1 - y_;
        dense_.r3 = h * k1_ - dense_.r2;
        dense_.r4 = dense_.r2 - h * k7 - dense_.r3;
        dense_.r5 = h * (d1 * k1_ + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        const bool last = std::abs(h) >= span;
        s_ = last ? s_end : s_ + h;
        y_ = y1;
        k1_ = k7;
        const double fac = err == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(err, -0.2), 0.2, 5.0);
        if (!last || fac < 1.0) h_ = h * fac;
        return;
      }
      h *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
    }
  }

  /// Integrates all the way to s_end without inspection.
  void advance_to(double s_end) {
    while (s_ != s_end) step(s_end);
  }

 private:
  double initial_step(double dir) const {
    const Eigen::Index n = y_.size();
    double d0 = 0.0, d1n = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = opt_.atol + opt_.rtol * std::abs(y_[i]);
      d0 += (y_[i] / sc) * (y_[i] / sc);
      d1n += (k1_[i] / sc) * (k1_[i] / sc);
    }
    d0 = std::sqrt(d0 / n);
    d1n = std::sqrt(d1n / n);
    double h0 = (d0 < 1e-5 || d1n < 1e-5) ? 1e-6 : 0.01 * d0 / d1n;
    Vec y1 = y_ + dir * h0 * k1_;
    Vec k(n);
    f_(s_ + dir * h0, y1, k);
    double d2 = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = opt_.atol + opt_.rtol * std::abs(y_[i]);
      d2 += ((k[i] - k1_[i]) / sc) * ((k[i] - k1_[i]) / sc);
    }
    d2 = std::sqrt(d2 / n) / h0;
    const double dm = std::max(d1n, d2);
    const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
    return std::min({100.0 * h0, h1, opt_.h_max});
  }

  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                          a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                          d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                          d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

  Rhs f_;
  OdeOptions opt_;
  double s_ = 0.0;
  double h_ = 0.0;
  bool fresh_ = true;
  size_t steps_ = 0;
  Vec y_, k1_;
  DenseStep dense_;
};

/// Locates the first root of g along a dense step, given g(start) > 0 >= g(end)
/// somewhere on the step. Returns the bracket's right end after bisection.
template <class G>
double bisect_dense(const DenseStep& d, double sa, double sb, G&& g, int iters = 80) {
  double ga = g(d.eval(sa));
  for (int i = 0; i < iters; ++i) {
    const double sm = 0.5 * (sa + sb);
    if (sm == sa || sm == sb) break;
    const double gm = g(d.eval(sm));
    if ((gm > 0) == (ga > 0)) {
      sa = sm;
      ga = gm;
    } else {
      sb = sm;
    }
  }
  return sb;
}

}  // namespace causal_lens
