#pragma once

#include <algorithm>
#include <cmath>

#include "isflow/errors.hpp"
#include "isflow/vec.hpp"

namespace isflow {

// One accepted Dormand-Prince step with its quartic interpolant. eval(t) is
// the standard continuous extension, 5th-order accurate inside [t0, t1]; it
// is what event scanning and bisection run on.
struct DenseStep {
  double t0 = 0, t1 = 0;
  Vec3 rcont1{}, rcont2{}, rcont3{}, rcont4{}, rcont5{};

  double h() const { return t1 - t0; }

  Vec3 eval(double t) const {
    double th = (t - t0) / (t1 - t0);
    double th1 = 1.0 - th;
    Vec3 y;
    for (int i = 0; i < 3; ++i) {
      y[i] = rcont1[i] + th * (rcont2[i] + th1 * (rcont3[i] + th * (rcont4[i] + th1 * rcont5[i])));
    }
    return y;
  }
};

struct StepperOptions {
  double tol = 1e-9;       // atol = rtol
  double h_max = 0.5;
  double h_init = 1e-3;
  double safety = 0.9;
};

// Adaptive embedded Runge-Kutta 4(5), Dormand-Prince coefficients, with the
// classic dense-output polynomial. The right-hand side is any callable
// Vec3(const Vec3&); fields here are autonomous.
template <typename Rhs>
class Dopri5 {
 public:
  Dopri5(Rhs rhs, const Vec3& y0, double t0, const StepperOptions& opt)
      : rhs_(rhs), opt_(opt), t_(t0), y_(y0), h_(std::min(opt.h_init, opt.h_max)) {
    k1_ = rhs_(y_);
  }

  double t() const { return t_; }
  const Vec3& y() const { return y_; }
  const Vec3& f() const { return k1_; }

  // Replace the state (e.g. after projecting onto an implicit surface or
  // wrapping torus coordinates). Refreshes the FSAL derivative.
  void reset_state(const Vec3& y) {
    y_ = y;
    k1_ = rhs_(y_);
  }

  // Advance one accepted step; fills `dense`. Throws on step-size underflow.
  void step(DenseStep& dense) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      if (!(h_ > 1e-14 * (std::abs(t_) + 1.0)))
        fail(ErrorKind::StepUnderflow, "integrator step size underflow at t=" + std::to_string(t_));
      Vec3 k2, k3, k4, k5, k6, k7, y1;
      double err = try_step(h_, k2, k3, k4, k5, k6, k7, y1);
      if (err <= 1.0) {
        fill_dense(dense, h_, k3, k4, k5, k6, k7, y1);
        t_ += h_;
        y_ = y1;
        k1_ = k7;  // FSAL
        double fac = err > 0 ? opt_.safety * std::pow(err, -0.2) : 5.0;
        h_ = std::min(opt_.h_max, h_ * std::clamp(fac, 0.2, 5.0));
        return;
      }
      h_ *= std::max(0.2, opt_.safety * std::pow(err, -0.2));
    }
    fail(ErrorKind::StepUnderflow, "integrator failed to find an acceptable step");
  }

 private:
  double try_step(double h, Vec3& k2, Vec3& k3, Vec3& k4, Vec3& k5, Vec3& k6, Vec3& k7, Vec3& y1) {
    const Vec3& y = y_;
    const Vec3& k1 = k1_;
    k2 = rhs_(y + (h * a21) * k1);
    k3 = rhs_(y + h * (a31 * k1 + a32 * k2));
    k4 = rhs_(y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    k5 = rhs_(y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    k6 = rhs_(y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    y1 = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    k7 = rhs_(y1);
    double err = 0;
    for (int i = 0; i < 3; ++i) {
      double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]);
      double sc = opt_.tol + opt_.tol * std::max(std::abs(y[i]), std::abs(y1[i]));
      err += (e / sc) * (e / sc);
    }
    return std::sqrt(err / 3.0);
  }

  void fill_dense(DenseStep& d, double h, const Vec3& k3, const Vec3& k4, const Vec3& k5, const Vec3& k6,
                  const Vec3& k7, const Vec3& y1) const {
    d.t0 = t_;
    d.t1 = t_ + h;
    d.rcont1 = y_;
    d.rcont2 = y1 - y_;
    d.rcont3 = h * k1_ - d.rcont2;
    d.rcont4 = d.rcont2 - h * k7 - d.rcont3;
    d.rcont5 = h * (d1 * k1_ + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
  }

  static constexpr double a21 = 1.0 / 5.0;
  static constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
  static constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
  static constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                          a54 = -212.0 / 729.0;
  static constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0,
                          a64 = 49.0 / 176.0, a65 = -5103.0 / 18656.0;
  static constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0,
                          a75 = -2187.0 / 6784.0, a76 = 11.0 / 84.0;
  static constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0,
                          e5 = -17253.0 / 339200.0, e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
  static constexpr double d1 = -12715105075.0 / 11282082432.0;
  static constexpr double d3 = 87487479700.0 / 32700410799.0;
  static constexpr double d4 = -10690763975.0 / 1880347072.0;
  static constexpr double d5 = 701980252875.0 / 199316789632.0;
  static constexpr double d6 = -1453857185.0 / 822651844.0;
  static constexpr double d7 = 69997945.0 / 29380423.0;

  Rhs rhs_;
  StepperOptions opt_;
  double t_;
  Vec3 y_;
  Vec3 k1_;
  double h_;
};

// Cubic Hermite interpolation between two stored samples (t0,y0,f0), (t1,y1,f1).
inline Vec3 hermite(double t, double t0, const Vec3& y0, const Vec3& f0, double t1, const Vec3& y1,
                    const Vec3& f1) {
  double h = t1 - t0;
  if (h == 0.0) return y0;
  double s = (t - t0) / h;
  double s2 = s * s, s3 = s2 * s;
  double h00 = 2 * s3 - 3 * s2 + 1;
  double h10 = s3 - 2 * s2 + s;
  double h01 = -2 * s3 + 3 * s2;
  double h11 = s3 - s2;
  Vec3 y;
  for (int i = 0; i < 3; ++i) y[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
  return y;
}

}  // namespace isflow
