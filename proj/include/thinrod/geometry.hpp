#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <unsupported/Eigen/Splines>

#include "thinrod/errors.hpp"
#include "thinrod/fd.hpp"

namespace thinrod {

using Vec3 = Eigen::Vector3d;

enum class CurveKind { straight, circular_arc, helix, sampled };
enum class TwistKind { none, linear, tabulated };
enum class FrameKind { rotation_minimizing, frenet };

struct TwistSpec {
    TwistKind kind = TwistKind::none;
    double rate = 0.0;
    std::vector<double> alpha; // one value per s-node for tabulated
};

struct CurveSpec {
    CurveKind kind = CurveKind::straight;
    double length = std::numbers::pi; // ignored for sampled curves
    double radius = 1.0;              // circular_arc
    double a = 1.0, b = 1.0;          // helix (a cos t, a sin t, b t)
    std::vector<Vec3> points;         // sampled
    TwistSpec twist;
    FrameKind frame = FrameKind::rotation_minimizing;
};

struct FrameField {
    int intervals = 0; // M_s, nodes 0..M_s
    double s0 = 0.0;
    double h = 0.0;
    std::vector<double> s;
    std::vector<Vec3> r, tau, eta, beta;
    Eigen::VectorXd kappa1, kappa2, kappa3, kappa3_prime;

    int nodes() const { return intervals + 1; }
};

namespace detail {

// arc-length evaluation of r, tau and tau'
class CurveEval {
public:
    virtual ~CurveEval() = default;
    virtual double length() const = 0;
    virtual Vec3 r(double s) const = 0;
    virtual Vec3 tau(double s) const = 0;
    virtual Vec3 dtau(double s) const = 0;
};

class StraightEval final : public CurveEval {
public:
    explicit StraightEval(double L) : L_(L) {}
    double length() const override { return L_; }
    Vec3 r(double s) const override { return Vec3(s, 0, 0); }
    Vec3 tau(double) const override { return Vec3::UnitX(); }
    Vec3 dtau(double) const override { return Vec3::Zero(); }

private:
    double L_;
};

class ArcEval final : public CurveEval {
public:
    ArcEval(double L, double R) : L_(L), R_(R) {}
    double length() const override { return L_; }
    Vec3 r(double s) const override {
        return Vec3(R_ * std::sin(s / R_), R_ * (1.0 - std::cos(s / R_)), 0.0);
    }
    Vec3 tau(double s) const override { return Vec3(std::cos(s / R_), std::sin(s / R_), 0.0); }
    Vec3 dtau(double s) const override {
        return Vec3(-std::sin(s / R_), std::cos(s / R_), 0.0) / R_;
    }

private:
    double L_, R_;
};

class HelixEval final : public CurveEval {
public:
    HelixEval(double L, double a, double b) : L_(L), a_(a), b_(b), c_(std::hypot(a, b)) {}
    double length() const override { return L_; }
    Vec3 r(double s) const override {
        const double t = s / c_;
        return Vec3(a_ * std::cos(t), a_ * std::sin(t), b_ * t);
    }
    Vec3 tau(double s) const override {
        const double t = s / c_;
        return Vec3(-a_ * std::sin(t), a_ * std::cos(t), b_) / c_;
    }
    Vec3 dtau(double s) const override {
        const double t = s / c_;
        return Vec3(-a_ * std::cos(t), -a_ * std::sin(t), 0.0) / (c_ * c_);
    }

private:
    double L_, a_, b_, c_;
};

// cubic interpolating spline in chord-length parameter, re-parameterized by arc length
class SampledEval final : public CurveEval {
public:
    using Spline3 = Eigen::Spline<double, 3, 3>;

    explicit SampledEval(const std::vector<Vec3>& pts) {
        if (pts.size() < 4) throw Error(ErrorKind::InvalidCurve, "sampled curve needs at least 4 points");
        for (std::size_t i = 1; i < pts.size(); ++i)
            if ((pts[i] - pts[i - 1]).norm() <= 1e-12)
                throw Error(ErrorKind::InvalidCurve, "repeated sample point at index " + std::to_string(i));
        Eigen::Matrix3Xd P(3, static_cast<Eigen::Index>(pts.size()));
        for (std::size_t i = 0; i < pts.size(); ++i) P.col(static_cast<Eigen::Index>(i)) = pts[i];
        spline_ = Eigen::SplineFitting<Spline3>::Interpolate(P, 3);

        // arc length table on a fine uniform parameter grid, Gauss-Legendre per cell
        const int cells = std::max<int>(512, 16 * static_cast<int>(pts.size()));
        u_.resize(cells + 1);
        sl_.resize(cells + 1);
        sl_[0] = 0.0;
        for (int i = 0; i <= cells; ++i) u_[i] = double(i) / cells;
        for (int i = 0; i < cells; ++i) sl_[i + 1] = sl_[i] + seg_length(u_[i], u_[i + 1]);
        L_ = sl_[cells];
        if (!(L_ > 0)) throw Error(ErrorKind::InvalidCurve, "sampled curve too short");
    }

    double length() const override { return L_; }
    Vec3 r(double s) const override { return spline_(param(s)); }
    Vec3 tau(double s) const override {
        auto d = spline_.derivatives(param(s), 1);
        return d.col(1).matrix().normalized();
    }
    Vec3 dtau(double s) const override {
        auto d = spline_.derivatives(param(s), 2);
        const Vec3 r1 = d.col(1).matrix(), r2 = d.col(2).matrix();
        const double v = r1.norm();
        const Vec3 t = r1 / v;
        return (r2 - r2.dot(t) * t) / (v * v);
    }

private:
    double speed(double u) const { return spline_.derivatives(u, 1).col(1).matrix().norm(); }

    double seg_length(double a, double b) const {
        static const double x[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563,
                                    0.8611363115940526};
        static const double w[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461,
                                    0.3478548451374538};
        const double m = 0.5 * (a + b), r = 0.5 * (b - a);
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += w[k] * speed(m + r * x[k]);
        return r * acc;
    }

    // u(s): monotone Hermite guess from the table, then Newton on s(u) = s
    double param(double s) const {
        s = std::clamp(s, 0.0, L_);
        const auto it = std::upper_bound(sl_.begin(), sl_.end(), s);
        std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - sl_.begin()) - 1));
        if (i + 1 >= sl_.size()) i = sl_.size() - 2;
        const double s_a = sl_[i], s_b = sl_[i + 1], u_a = u_[i], u_b = u_[i + 1];
        const double ds = s_b - s_a;
        const double t = (s - s_a) / ds;
        const double m_a = ds / speed(u_a), m_b = ds / speed(u_b);
        const double t2 = t * t, t3 = t2 * t;
        double u = (2 * t3 - 3 * t2 + 1) * u_a + (t3 - 2 * t2 + t) * m_a + (-2 * t3 + 3 * t2) * u_b +
                   (t3 - t2) * m_b;
        u = std::clamp(u, u_a, u_b);
        for (int k = 0; k < 3; ++k) {
            const double f = s_a + seg_length(u_a, u) - s;
            u = std::clamp(u - f / speed(u), u_a, u_b);
        }
        return u;
    }

    Spline3 spline_;
    std::vector<double> u_, sl_;
    double L_ = 0.0;
};

inline std::unique_ptr<CurveEval> make_eval(const CurveSpec& spec) {
    switch (spec.kind) {
    case CurveKind::straight: return std::make_unique<StraightEval>(spec.length);
    case CurveKind::circular_arc:
        if (!(spec.radius > 0)) throw Error(ErrorKind::InvalidCurve, "arc radius must be positive");
        return std::make_unique<ArcEval>(spec.length, spec.radius);
    case CurveKind::helix:
        if (!(spec.a > 0) || !std::isfinite(spec.b))
            throw Error(ErrorKind::InvalidCurve, "helix needs a > 0 and finite b");
        return std::make_unique<HelixEval>(spec.length, spec.a, spec.b);
    case CurveKind::sampled: return std::make_unique<SampledEval>(spec.points);
    }
    throw Error(ErrorKind::InvalidCurve, "unknown curve kind");
}

inline Vec3 any_normal(const Vec3& t) {
    Vec3 e = std::abs(t.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitZ();
    return (e - e.dot(t) * t).normalized();
}

} // namespace detail

// kappa1 = tau'.eta, kappa2 = -tau'.beta, kappa3 = eta'.beta and kappa3'
inline void curvatures_from_frame(FrameField& f) {
    const auto dtau = fd::derivative(f.tau, f.h);
    const auto deta = fd::derivative(f.eta, f.h);
    const int n = f.nodes();
    f.kappa1.resize(n);
    f.kappa2.resize(n);
    f.kappa3.resize(n);
    for (int i = 0; i < n; ++i) {
        f.kappa1[i] = dtau[i].dot(f.eta[i]);
        f.kappa2[i] = -dtau[i].dot(f.beta[i]);
        f.kappa3[i] = deta[i].dot(f.beta[i]);
    }
    f.kappa3_prime = fd::derivative(f.kappa3, f.h);
}

inline FrameField build_frame(const CurveSpec& spec, int intervals) {
    if (intervals < 16) throw Error(ErrorKind::InvalidCurve, "need at least 16 s-intervals");
    if (spec.kind != CurveKind::sampled && !(spec.length > 0 && std::isfinite(spec.length)))
        throw Error(ErrorKind::InvalidCurve, "curve length must be positive");
    if (spec.twist.kind == TwistKind::linear && !std::isfinite(spec.twist.rate))
        throw Error(ErrorKind::InvalidCurve, "twist rate must be finite");
    if (spec.twist.kind == TwistKind::tabulated &&
        spec.twist.alpha.size() != static_cast<std::size_t>(intervals + 1))
        throw Error(ErrorKind::InvalidCurve, "tabulated twist needs one angle per s-node (" +
                                                 std::to_string(intervals + 1) + ")");

    const auto ev = detail::make_eval(spec);
    FrameField f;
    f.intervals = intervals;
    f.s0 = ev->length();
    f.h = f.s0 / intervals;
    const int n = intervals + 1;
    f.s.resize(n);
    f.r.resize(n);
    f.tau.resize(n);
    f.eta.resize(n);
    f.beta.resize(n);
    for (int i = 0; i < n; ++i) {
        f.s[i] = i == intervals ? f.s0 : i * f.h;
        f.r[i] = ev->r(f.s[i]);
        f.tau[i] = ev->tau(f.s[i]);
    }

    if (spec.kind == CurveKind::sampled) {
        for (int i = 0; i < n; ++i)
            for (int j = i + 3; j < n; ++j)
                if ((f.r[i] - f.r[j]).norm() < 0.5 * f.h)
                    throw Error(ErrorKind::InvalidCurve, "sampled curve self-intersects near s=" +
                                                             std::to_string(f.s[i]));
    }

    if (spec.frame == FrameKind::frenet) {
        for (int i = 0; i < n; ++i) {
            const Vec3 d = ev->dtau(f.s[i]);
            if (d.norm() < 1e-10)
                throw Error(ErrorKind::FrenetUndefined, "curvature vanishes at s=" + std::to_string(f.s[i]));
            f.eta[i] = d.normalized();
        }
    } else {
        // initial normal: Frenet normal where defined, otherwise a global axis
        const Vec3 d0 = ev->dtau(0.0);
        Vec3 e = d0.norm() > 1e-10 ? Vec3(d0.normalized()) : detail::any_normal(f.tau[0]);
        f.eta[0] = e;
        auto rhs = [&](double s, const Vec3& y) {
            const Vec3 t = ev->tau(s);
            return Vec3(-y.dot(ev->dtau(s)) * t);
        };
        for (int i = 0; i < intervals; ++i) {
            const double s = f.s[i], h = f.s[i + 1] - f.s[i];
            const Vec3 k1 = rhs(s, e);
            const Vec3 k2 = rhs(s + 0.5 * h, e + 0.5 * h * k1);
            const Vec3 k3 = rhs(s + 0.5 * h, e + 0.5 * h * k2);
            const Vec3 k4 = rhs(s + h, e + h * k3);
            e += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            const Vec3& t = f.tau[i + 1];
            const double drift = std::max(std::abs(e.dot(t)), std::abs(e.norm() - 1.0));
            if (drift > 1e-4)
                throw Error(ErrorKind::FrameDrift, "transport drift " + std::to_string(drift) +
                                                       " at s=" + std::to_string(f.s[i + 1]));
            e = (e - e.dot(t) * t).normalized();
            f.eta[i + 1] = e;
        }
    }

    for (int i = 0; i < n; ++i) {
        double alpha = 0.0;
        if (spec.twist.kind == TwistKind::linear) alpha = spec.twist.rate * f.s[i];
        if (spec.twist.kind == TwistKind::tabulated) alpha = spec.twist.alpha[static_cast<std::size_t>(i)];
        const Vec3 b0 = f.tau[i].cross(f.eta[i]);
        f.eta[i] = std::cos(alpha) * f.eta[i] + std::sin(alpha) * b0;
        f.beta[i] = f.tau[i].cross(f.eta[i]);
    }
    curvatures_from_frame(f);
    return f;
}

struct FrameResidual {
    double orthonormality = 0.0; // worst unit-length or dot-product defect
    double ode = 0.0;            // worst frame-equation residual
    double arclength = 0.0;      // worst |dr/ds - tau|
};

inline FrameResidual frame_residual(const FrameField& f) {
    FrameResidual out;
    const auto dtau = fd::derivative(f.tau, f.h);
    const auto deta = fd::derivative(f.eta, f.h);
    const auto dbeta = fd::derivative(f.beta, f.h);
    const auto dr = fd::derivative(f.r, f.h);
    for (int i = 0; i < f.nodes(); ++i) {
        const Vec3 &t = f.tau[i], &e = f.eta[i], &b = f.beta[i];
        const double k1 = f.kappa1[i], k2 = f.kappa2[i], k3 = f.kappa3[i];
        out.orthonormality = std::max({out.orthonormality, std::abs(t.norm() - 1), std::abs(e.norm() - 1),
                                       std::abs(b.norm() - 1), std::abs(t.dot(e)), std::abs(t.dot(b)),
                                       std::abs(e.dot(b)), (b - t.cross(e)).norm()});
        out.ode = std::max({out.ode, (dtau[i] - (k1 * e - k2 * b)).norm(),
                            (deta[i] - (-k1 * t + k3 * b)).norm(), (dbeta[i] - (k2 * t - k3 * e)).norm()});
        out.arclength = std::max(out.arclength, (dr[i] - t).norm());
    }
    return out;
}

struct FrenetReport {
    double bending = 0.0; // max |k1^2 + k2^2 - kappa^2|
    double twist = 0.0;   // max |k3 - alpha' - torsion|
};

// Frenet curvature and torsion from r alone, compared with the stored frame
inline FrenetReport frenet_consistency_check(const FrameField& f) {
    const auto r1 = fd::derivative(f.r, f.h);
    const auto r2 = fd::derivative(r1, f.h);
    const auto r3 = fd::derivative(r2, f.h);
    const int n = f.nodes();
    Eigen::VectorXd kappa(n), torsion(n), alpha(n);
    for (int i = 0; i < n; ++i) {
        const Vec3 c = r1[i].cross(r2[i]);
        const double v = r1[i].norm();
        if (c.norm() < 1e-8 * v * v * v)
            throw Error(ErrorKind::FrenetUndefined, "curvature vanishes at s=" + std::to_string(f.s[i]));
        kappa[i] = c.norm() / (v * v * v);
        torsion[i] = c.dot(r3[i]) / c.squaredNorm();
        const Vec3 t = r1[i] / v;
        const Vec3 nrm = (r2[i] - r2[i].dot(t) * t).normalized();
        const Vec3 bin = t.cross(nrm);
        alpha[i] = std::atan2(f.eta[i].dot(bin), f.eta[i].dot(nrm));
        if (i > 0) {
            while (alpha[i] - alpha[i - 1] > std::numbers::pi) alpha[i] -= 2 * std::numbers::pi;
            while (alpha[i] - alpha[i - 1] < -std::numbers::pi) alpha[i] += 2 * std::numbers::pi;
        }
    }
    const Eigen::VectorXd dalpha = fd::derivative(alpha, f.h);
    FrenetReport rep;
    for (int i = 0; i < n; ++i) {
        const double k2 = f.kappa1[i] * f.kappa1[i] + f.kappa2[i] * f.kappa2[i];
        rep.bending = std::max(rep.bending, std::abs(k2 - kappa[i] * kappa[i]));
        rep.twist = std::max(rep.twist, std::abs(f.kappa3[i] - dalpha[i] - torsion[i]));
    }
    return rep;
}

} // namespace thinrod
