#pragma once

// Forward-mode dual numbers and the small dense derivative helpers built on
// them. Second derivatives come from nesting: Dual<Dual<double>>.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <utility>
#include <vector>

namespace mpgp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <class T>
struct Dual {
  T val{};
  T der{};

  Dual() = default;
  Dual(double v) : val(v), der(0.0) {}  // NOLINT: implicit lift of constants
  Dual(T v, T d) : val(std::move(v)), der(std::move(d)) {}

  friend Dual operator+(const Dual& a, const Dual& b) { return {a.val + b.val, a.der + b.der}; }
  friend Dual operator-(const Dual& a, const Dual& b) { return {a.val - b.val, a.der - b.der}; }
  friend Dual operator*(const Dual& a, const Dual& b) {
    return {a.val * b.val, a.der * b.val + a.val * b.der};
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    T inv = T(1.0) / b.val;
    return {a.val * inv, (a.der - a.val * inv * b.der) * inv};
  }
  friend Dual operator-(const Dual& a) { return {-a.val, -a.der}; }

  Dual& operator+=(const Dual& o) { return *this = *this + o; }
  Dual& operator-=(const Dual& o) { return *this = *this - o; }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }
};

inline double value(double x) { return x; }
template <class T>
double value(const Dual<T>& x) {
  return value(x.val);
}

// Comparisons look only at the primal value.
template <class T>
bool operator<(const Dual<T>& a, const Dual<T>& b) { return value(a) < value(b); }
template <class T>
bool operator>(const Dual<T>& a, const Dual<T>& b) { return value(a) > value(b); }
template <class T>
bool operator<(const Dual<T>& a, double b) { return value(a) < b; }
template <class T>
bool operator>(const Dual<T>& a, double b) { return value(a) > b; }

template <class T>
Dual<T> sqrt(const Dual<T>& x) {
  using std::sqrt;
  T s = sqrt(x.val);
  return {s, x.der / (T(2.0) * s)};
}
template <class T>
Dual<T> exp(const Dual<T>& x) {
  using std::exp;
  T e = exp(x.val);
  return {e, x.der * e};
}
template <class T>
Dual<T> log(const Dual<T>& x) {
  using std::log;
  return {log(x.val), x.der / x.val};
}
template <class T>
Dual<T> sin(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.val), x.der * cos(x.val)};
}
template <class T>
Dual<T> cos(const Dual<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.val), -(x.der * sin(x.val))};
}
template <class T>
Dual<T> tanh(const Dual<T>& x) {
  using std::tanh;
  T t = tanh(x.val);
  return {t, x.der * (T(1.0) - t * t)};
}

using Dual1 = Dual<double>;
using Dual2 = Dual<Dual<double>>;

/// Value, gradient and (optionally) Hessian of a scalar function of a short
/// vector, computed by nested forward mode.
struct LocalDerivatives {
  double value = 0.0;
  Vector gradient;
  Matrix hessian;
};

/// `fn` is a generic callable `S fn(std::span<const S>)`.
template <class Fn>
void local_derivatives(const Fn& fn, std::span<const double> x, bool need_hessian,
                       LocalDerivatives& out) {
  const auto k = static_cast<Eigen::Index>(x.size());
  out.gradient.setZero(k);
  if (!need_hessian) {
    std::vector<Dual1> v(x.begin(), x.end());
    if (k == 0) {
      out.value = value(fn(std::span<const Dual1>(v)));
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      v[i].der = 1.0;
      Dual1 r = fn(std::span<const Dual1>(v));
      v[i].der = 0.0;
      out.value = r.val;
      out.gradient[i] = r.der;
    }
    out.hessian.resize(0, 0);
    return;
  }
  out.hessian.setZero(k, k);
  std::vector<Dual2> v(x.begin(), x.end());
  if (k == 0) {
    out.value = value(fn(std::span<const Dual2>(v)));
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    v[i].val.der = 1.0;
    for (Eigen::Index j = i; j < k; ++j) {
      v[j].der.val = 1.0;
      Dual2 r = fn(std::span<const Dual2>(v));
      v[j].der.val = 0.0;
      if (j == i) {
        out.value = r.val.val;
        out.gradient[i] = r.val.der;
      }
      out.hessian(i, j) = r.der.der;
      out.hessian(j, i) = r.der.der;
    }
    v[i].val.der = 0.0;
  }
}

/// A vector map f(z; theta) with exact Jacobians. Either wraps a generic
/// callable evaluated with dual numbers, or a hand-coded analytic evaluator.
class DifferentiableMap {
 public:
  using Analytic =
      std::function<void(const Vector& z, const Vector& theta, Vector& value, Matrix& jac_z,
                         Matrix& jac_theta)>;

  /// `fn(std::span<const S> z, std::span<const S> theta, std::span<S> out)`.
  template <class Fn>
  static DifferentiableMap from_generic(int output_dim, int z_dim, int theta_dim, Fn fn) {
    DifferentiableMap m(output_dim, z_dim, theta_dim);
    m.value_fn_ = [fn](const Vector& z, const Vector& theta, Vector& out) {
      std::vector<double> o(static_cast<size_t>(out.size()));
      fn(std::span<const double>(z.data(), static_cast<size_t>(z.size())),
         std::span<const double>(theta.data(), static_cast<size_t>(theta.size())),
         std::span<double>(o));
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = o[static_cast<size_t>(i)];
    };
    m.jac_fn_ = [fn, output_dim, z_dim, theta_dim](const Vector& z, const Vector& theta,
                                                   Vector& value, Matrix& jz, Matrix& jt) {
      std::vector<Dual1> zd(z.data(), z.data() + z_dim);
      std::vector<Dual1> td(theta.data(), theta.data() + theta_dim);
      std::vector<Dual1> out(static_cast<size_t>(output_dim));
      value.resize(output_dim);
      jz.resize(output_dim, z_dim);
      jt.resize(output_dim, theta_dim);
      auto run = [&] {
        fn(std::span<const Dual1>(zd), std::span<const Dual1>(td), std::span<Dual1>(out));
      };
      if (z_dim + theta_dim == 0) run();
      for (int j = 0; j < z_dim + theta_dim; ++j) {
        Dual1& seed = j < z_dim ? zd[static_cast<size_t>(j)] : td[static_cast<size_t>(j - z_dim)];
        seed.der = 1.0;
        run();
        seed.der = 0.0;
        for (int i = 0; i < output_dim; ++i) {
          if (j < z_dim) {
            jz(i, j) = out[static_cast<size_t>(i)].der;
          } else {
            jt(i, j - z_dim) = out[static_cast<size_t>(i)].der;
          }
        }
      }
      for (int i = 0; i < output_dim; ++i) value[i] = out[static_cast<size_t>(i)].val;
    };
    return m;
  }

  static DifferentiableMap from_analytic(int output_dim, int z_dim, int theta_dim,
                                         Analytic analytic) {
    DifferentiableMap m(output_dim, z_dim, theta_dim);
    m.value_fn_ = [analytic](const Vector& z, const Vector& theta, Vector& out) {
      Matrix jz, jt;
      analytic(z, theta, out, jz, jt);
    };
    m.jac_fn_ = std::move(analytic);
    return m;
  }

  int output_dim() const { return output_dim_; }
  int z_dim() const { return z_dim_; }
  int theta_dim() const { return theta_dim_; }

  Vector value(const Vector& z, const Vector& theta) const {
    Vector out(output_dim_);
    value_fn_(z, theta, out);
    return out;
  }

  void jacobians(const Vector& z, const Vector& theta, Vector& value, Matrix& jac_z,
                 Matrix& jac_theta) const {
    jac_fn_(z, theta, value, jac_z, jac_theta);
  }

 private:
  DifferentiableMap(int o, int z, int t) : output_dim_(o), z_dim_(z), theta_dim_(t) {}

  int output_dim_;
  int z_dim_;
  int theta_dim_;
  std::function<void(const Vector&, const Vector&, Vector&)> value_fn_;
  Analytic jac_fn_;
};

struct MapEvaluation {
  Vector value;
  Matrix jac_z;
  Matrix jac_theta;
};

/// Thrown when a map produces non-finite values on finite inputs.
struct NumericalBreakdown : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline MapEvaluation eval_with_jacobians(const DifferentiableMap& map, const Vector& z,
                                         const Vector& theta) {
  if (z.size() != map.z_dim() || theta.size() != map.theta_dim()) {
    throw std::invalid_argument("eval_with_jacobians: dimension mismatch");
  }
  MapEvaluation e;
  map.jacobians(z, theta, e.value, e.jac_z, e.jac_theta);
  if (!e.value.allFinite() || !e.jac_z.allFinite() || !e.jac_theta.allFinite()) {
    throw NumericalBreakdown("eval_with_jacobians: non-finite output");
  }
  return e;
}

/// Central differences. Test oracle only.
inline std::pair<Matrix, Matrix> fd_jacobian(const DifferentiableMap& map, const Vector& z,
                                             const Vector& theta, double h = 1e-6) {
  if (!(h > 0.0)) throw std::invalid_argument("fd_jacobian: step must be positive");
  Matrix jz(map.output_dim(), map.z_dim());
  Matrix jt(map.output_dim(), map.theta_dim());
  Vector zp = z;
  for (int j = 0; j < map.z_dim(); ++j) {
    zp[j] = z[j] + h;
    Vector fp = map.value(zp, theta);
    zp[j] = z[j] - h;
    Vector fm = map.value(zp, theta);
    zp[j] = z[j];
    jz.col(j) = (fp - fm) / (2.0 * h);
  }
  Vector tp = theta;
  for (int j = 0; j < map.theta_dim(); ++j) {
    tp[j] = theta[j] + h;
    Vector fp = map.value(z, tp);
    tp[j] = theta[j] - h;
    Vector fm = map.value(z, tp);
    tp[j] = theta[j];
    jt.col(j) = (fp - fm) / (2.0 * h);
  }
  return {jz, jt};
}

}  // namespace mpgp
