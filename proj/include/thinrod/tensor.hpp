#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "thinrod/geometry.hpp"
#include "thinrod/section.hpp"

namespace thinrod {

// s-grid x section interior nodes. Fields are vectors of length ns()*nx()
// with index (k-1)*nx + i for interior s-node k = 1..M-1.
struct TensorGrid {
    SectionGrid sec;
    int M = 0;
    double hs = 0.0;
    Eigen::VectorXd k1, k2, k3; // all s-nodes 0..M

    TensorGrid() = default;
    TensorGrid(const FrameField& f, SectionGrid g)
        : sec(std::move(g)), M(f.intervals), hs(f.h), k1(f.kappa1), k2(f.kappa2), k3(f.kappa3) {}

    int ns() const { return M - 1; }
    int nx() const { return sec.size(); }
    Eigen::Index size() const { return static_cast<Eigen::Index>(ns()) * nx(); }

    double q(int k, double x2, double x3) const { return k1[k] * x2 - k2[k] * x3; }
    double q(int k, int i) const { return q(k, sec.xi2[i], sec.xi3[i]); }

    // sections as columns
    static Eigen::Map<Eigen::MatrixXd> slices(Eigen::VectorXd& u, int nx, int ns) { return {u.data(), nx, ns}; }
    static Eigen::Map<const Eigen::MatrixXd> slices(const Eigen::VectorXd& u, int nx, int ns) {
        return {u.data(), nx, ns};
    }
};

// q on the tensor grid (interior nodes)
inline Eigen::VectorXd q_tensor(const TensorGrid& g) {
    Eigen::VectorXd q(g.size());
    for (int k = 1; k < g.M; ++k)
        for (int i = 0; i < g.nx(); ++i) q[static_cast<Eigen::Index>(k - 1) * g.nx() + i] = g.q(k, i);
    return q;
}

// u(s) v(xi)
inline Eigen::VectorXd outer_field(const Eigen::VectorXd& profile_interior, const Eigen::VectorXd& section) {
    Eigen::VectorXd u(profile_interior.size() * section.size());
    for (Eigen::Index k = 0; k < profile_interior.size(); ++k)
        u.segment(k * section.size(), section.size()) = profile_interior[k] * section;
    return u;
}

inline double tensor_dot(const TensorGrid& g, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return g.hs * g.sec.h * g.sec.h * a.dot(b);
}

// Energy form
//   sum_mid a_ss (D_s u)^2 + 2 sum a_sr (C_s u)(R u) + sum_edges a_t (D_t u)^2 + sum_Q w a_rr (R u)^2
// visited entry by entry. Coefficient policy:
//   ss(k, qmid)  midpoint k+1/2
//   sr(k, q)     interior node
//   t(k, qedge)  section edge midpoint
//   rr(k, q)     R quadrature point
template <typename Coeff, typename Emit>
void visit_form(const TensorGrid& g, const Coeff& c, Emit&& emit) {
    const SectionGrid& sec = g.sec;
    const int nx = g.nx(), M = g.M;
    const double hx2 = 1.0 / (sec.h * sec.h), hs2 = 1.0 / (g.hs * g.hs), hs_c = 0.5 / g.hs;
    auto id = [nx](int k, int i) { return static_cast<Eigen::Index>(k - 1) * nx + i; };

    if (c.t_terms) {
        for (int k = 1; k < M; ++k)
            for (int i = 0; i < nx; ++i)
                for (int d = 0; d < 4; ++d) {
                    // edge midpoint from the lower box index so both sides agree bitwise
                    const int a = sec.i2[i] - (d == 1 ? 1 : 0), b = sec.i3[i] - (d == 3 ? 1 : 0);
                    const double xm2 = sec.x2 + (a + (d < 2 ? 0.5 : 0.0)) * sec.h;
                    const double xm3 = sec.x3 + (b + (d < 2 ? 0.0 : 0.5)) * sec.h;
                    const double v = c.t(k, g.q(k, xm2, xm3)) * hx2;
                    emit(id(k, i), id(k, i), v);
                    const int j = sec.nb[d][i];
                    if (j >= 0) emit(id(k, i), id(k, j), -v);
                }
    }
    if (!c.s_terms) return;

    for (int k = 0; k < M; ++k)
        for (int i = 0; i < nx; ++i) {
            const double qm = 0.5 * (g.q(k, i) + g.q(k + 1, i));
            const double v = c.ss(k, qm) * hs2;
            if (k >= 1) emit(id(k, i), id(k, i), v);
            if (k + 1 <= M - 1) emit(id(k + 1, i), id(k + 1, i), v);
            if (k >= 1 && k + 1 <= M - 1) {
                emit(id(k, i), id(k + 1, i), -v);
                emit(id(k + 1, i), id(k, i), -v);
            }
        }

    // cross terms: C_s^T a R + R^T a C_s on interior R rows
    for (int k = 1; k < M; ++k)
        for (int i = 0; i < nx; ++i) {
            const double a = c.sr(k, g.q(k, i));
            if (a == 0.0) continue;
            const auto& ix = sec.ridx[i];
            const auto& cf = sec.rcoef[i];
            for (int kk : {k - 1, k + 1}) {
                if (kk < 1 || kk > M - 1) continue;
                const double cs = (kk == k + 1 ? hs_c : -hs_c);
                for (int t = 0; t < 4; ++t) {
                    if (ix[t] < 0) continue;
                    const double v = a * cs * cf[t];
                    emit(id(kk, i), id(k, ix[t]), v);
                    emit(id(k, ix[t]), id(kk, i), v);
                }
            }
        }

    for (int k = 1; k < M; ++k)
        for (int qp = 0; qp < sec.quad_size(); ++qp) {
            const double a = sec.qw[qp] * c.rr(k, g.q(k, sec.qxi2[qp], sec.qxi3[qp]));
            if (a == 0.0) continue;
            const auto& ix = sec.ridx[qp];
            const auto& cf = sec.rcoef[qp];
            for (int x = 0; x < 4; ++x) {
                if (ix[x] < 0) continue;
                for (int y = 0; y < 4; ++y)
                    if (ix[y] >= 0) emit(id(k, ix[x]), id(k, ix[y]), a * cf[x] * cf[y]);
            }
        }
}

template <typename Coeff>
Eigen::VectorXd apply_form(const TensorGrid& g, const Coeff& c, const Eigen::VectorXd& u) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(u.size());
    visit_form(g, c, [&](Eigen::Index r, Eigen::Index col, double v) { out[r] += v * u[col]; });
    return out;
}

template <typename Coeff>
Eigen::MatrixXd apply_form(const TensorGrid& g, const Coeff& c, const Eigen::MatrixXd& U) {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(U.rows(), U.cols());
    // row-major copy keeps the block update contiguous
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const RowMat Ur = U;
    RowMat Or = RowMat::Zero(U.rows(), U.cols());
    visit_form(g, c, [&](Eigen::Index r, Eigen::Index col, double v) { Or.row(r) += v * Ur.row(col); });
    out = Or;
    return out;
}

template <typename Coeff>
Eigen::SparseMatrix<double> form_matrix(const TensorGrid& g, const Coeff& c) {
    std::vector<Eigen::Triplet<double>> t;
    visit_form(g, c, [&](Eigen::Index r, Eigen::Index col, double v) { t.emplace_back(r, col, v); });
    Eigen::SparseMatrix<double> A(g.size(), g.size());
    A.setFromTriplets(t.begin(), t.end());
    Eigen::SparseMatrix<double> At = A.transpose();
    return 0.5 * (A + At);
}

// coefficient policies

struct SectionLaplacianCoeff { // L0: -Delta_xi slice by slice
    static constexpr bool t_terms = true, s_terms = false;
    double t(int, double) const { return 1.0; }
    double ss(int, double) const { return 0.0; }
    double sr(int, double) const { return 0.0; }
    double rr(int, double) const { return 0.0; }
};

struct F1Coeff { // F_1 = -div_xi q grad_xi  (energy form with a_t = q)
    static constexpr bool t_terms = true, s_terms = false;
    double t(int, double q) const { return q; }
    double ss(int, double) const { return 0.0; }
    double sr(int, double) const { return 0.0; }
    double rr(int, double) const { return 0.0; }
};

// minus F_j, j >= 2
struct FjCoeff {
    static constexpr bool t_terms = false, s_terms = true;
    const Eigen::VectorXd* k3;
    int power; // j - 2
    double pw(double q) const {
        double r = 1.0;
        for (int e = 0; e < power; ++e) r *= q;
        return r;
    }
    double t(int, double) const { return 0.0; }
    double ss(int, double q) const { return pw(q); }
    double sr(int k, double q) const { return (*k3)[k] * pw(q); }
    double rr(int k, double q) const { return (*k3)[k] * (*k3)[k] * pw(q); }
};

// the straightened operator with p = 1 - eps q
struct DirectCoeff {
    static constexpr bool t_terms = true, s_terms = true;
    const Eigen::VectorXd* k3;
    double eps;
    double t(int, double q) const { return (1.0 - eps * q) / (eps * eps); }
    double ss(int, double q) const { return 1.0 / (1.0 - eps * q); }
    double sr(int k, double q) const { return (*k3)[k] / (1.0 - eps * q); }
    double rr(int k, double q) const { return (*k3)[k] * (*k3)[k] / (1.0 - eps * q); }
};

inline Eigen::VectorXd apply_F(const TensorGrid& g, int j, const Eigen::VectorXd& u) {
    if (j < 1) throw Error(ErrorKind::ConfigError, "F_j needs j >= 1");
    if (j == 1) return apply_form(g, F1Coeff{}, u);
    return -apply_form(g, FjCoeff{&g.k3, j - 2}, u);
}

} // namespace thinrod
