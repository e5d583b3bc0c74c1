#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "thinrod/errors.hpp"
#include "thinrod/fd.hpp"
#include "thinrod/geometry.hpp"
#include "thinrod/reduced.hpp"
#include "thinrod/section.hpp"
#include "thinrod/tensor.hpp"

namespace thinrod {

struct QField {
    Eigen::VectorXd q;  // tensor field
    Eigen::VectorXd qn; // (q phi_n, phi_n) at every s-node 0..M
};

inline QField q_field(const TensorGrid& g, const SectionMode& mode) {
    QField r;
    r.q = q_tensor(g);
    r.qn.resize(g.M + 1);
    const Eigen::VectorXd w = mode.phi.cwiseAbs2() * (g.sec.h * g.sec.h);
    for (int k = 0; k <= g.M; ++k) {
        double acc = 0.0;
        for (int i = 0; i < g.nx(); ++i) acc += g.q(k, i) * w[i];
        r.qn[k] = acc;
    }
    return r;
}

// max |q| over every point where a coefficient of the direct operator is sampled
inline double max_abs_q(const TensorGrid& g) {
    double m = 0.0;
    for (int k = 0; k <= g.M; ++k)
        for (int p = 0; p < g.sec.quad_size(); ++p)
            m = std::max(m, std::abs(g.q(k, g.sec.qxi2[p], g.sec.qxi3[p])));
    return m;
}

// Shared immutable context for one section mode n.
struct ExpansionSetup {
    FrameField frame;
    TensorGrid grid;
    int n = 1;
    double lambda_n = 0.0;
    double C = 0.0;
    Eigen::VectorXd phi;
    QField q;
    ReducedOperator reduced; // the discrete-consistent L_n
    std::vector<ReducedMode> modes;
    std::shared_ptr<const SectionResolvent> section_res;
};

// interior profile -> tensor field Psi(s) phi(xi)
inline Eigen::VectorXd lift(const ExpansionSetup& S, const Eigen::VectorXd& Psi) { return outer_field(Psi, S.phi); }

// (u(s,.), phi)_omega at interior s-nodes
inline Eigen::VectorXd project_phi(const ExpansionSetup& S, const Eigen::VectorXd& u) {
    const auto U = TensorGrid::slices(u, S.grid.nx(), S.grid.ns());
    return (U.transpose() * S.phi) * (S.grid.sec.h * S.grid.sec.h);
}

// 1/2 (F1 - lambda_n q)(q Psi phi) + F2(Psi phi)
inline Eigen::VectorXd F_tilde(const ExpansionSetup& S, const Eigen::VectorXd& Psi) {
    const Eigen::VectorXd u = lift(S, Psi);
    const Eigen::VectorXd qu = S.q.q.cwiseProduct(u);
    return 0.5 * (apply_F(S.grid, 1, qu) - S.lambda_n * S.q.q.cwiseProduct(qu)) + apply_F(S.grid, 2, u);
}

inline ExpansionSetup make_setup(const FrameField& f, const SectionSpectrum& sp, int n, int mode_count) {
    assert_simple(sp, n);
    ExpansionSetup S;
    S.frame = f;
    S.grid = TensorGrid(f, sp.grid);
    S.n = n;
    const auto& mode = sp.mode(n);
    S.lambda_n = mode.lambda;
    S.C = mode.C;
    S.phi = mode.phi;
    S.q = q_field(S.grid, mode);

    // L_n^h = D_s^T D_s + C k3^2 + bend, bend = -1/2 ((F1 - lambda_n q)(q phi), phi) read off the stencil
    const int ns = S.grid.ns();
    const Eigen::VectorXd qu = S.q.q.cwiseProduct(lift(S, Eigen::VectorXd::Ones(ns)));
    const Eigen::VectorXd a = apply_F(S.grid, 1, qu) - S.lambda_n * S.q.q.cwiseProduct(qu);
    Eigen::VectorXd V = build_reduced(f, S.C, n).V;
    V.segment(1, ns) = S.C * f.kappa3.segment(1, ns).array().square().matrix() - 0.5 * project_phi(S, a);
    S.reduced = reduced_from_potential(f, V, n);
    S.modes = solve_reduced(S.reduced, mode_count);
    S.section_res = std::make_shared<const SectionResolvent>(sp, n);
    return S;
}

struct ExpansionState {
    int n = 1, m = 1, N = 2;
    std::vector<double> lambda; // lambda[i + 2] = lambda_i, i = -2..N
    std::vector<Eigen::VectorXd> Psi;       // interior profiles, 0..N
    std::vector<Eigen::VectorXd> psi_tilde; // 0..N+1
    std::vector<Eigen::VectorXd> psi;       // 0..N
    std::vector<double> section_defects, reduced_defects;

    double lambda_at(int i) const { return lambda.at(static_cast<std::size_t>(i + 2)); }
    double max_defect() const {
        double d = 0.0;
        for (double x : section_defects) d = std::max(d, x);
        for (double x : reduced_defects) d = std::max(d, x);
        return d;
    }
};

inline ExpansionState run_recurrence(const ExpansionSetup& S, int m, int N, double defect_tol = 1e-8) {
    if (N < 2) throw Error(ErrorKind::ConfigError, "expansion order N must be >= 2");
    if (m < 1 || m > static_cast<int>(S.modes.size()))
        throw Error(ErrorKind::ConfigError, "reduced mode " + std::to_string(m) + " not available");
    const TensorGrid& g = S.grid;
    const int ns = g.ns(), nx = g.nx();
    const Eigen::VectorXd& q = S.q.q;
    const Eigen::VectorXd qn = S.q.qn.segment(1, ns);
    const ReducedMode& mode = S.modes[static_cast<std::size_t>(m - 1)];
    ReducedResolvent rres(S.reduced, mode);

    ExpansionState st;
    st.n = S.n;
    st.m = m;
    st.N = N;
    st.lambda.assign(static_cast<std::size_t>(N + 3), 0.0);
    st.lambda[0] = S.lambda_n;
    st.lambda[1] = 0.0;
    st.lambda[2] = mode.lambda;
    auto lam = [&](int i) { return st.lambda[static_cast<std::size_t>(i + 2)]; };

    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(g.size());
    st.Psi.push_back(mode.Psi.segment(1, ns));
    st.psi_tilde = {zero, zero};
    st.psi.push_back(lift(S, st.Psi[0]));
    Eigen::VectorXd Ft = zero; // F_tilde_{i+1}

    auto colmax = [&](const Eigen::VectorXd& u) { return TensorGrid::slices(u, nx, ns).colwise().norm().maxCoeff(); };
    auto section_solve = [&](const Eigen::VectorXd& rhs, double scale, int step) {
        Eigen::VectorXd r = rhs;
        auto R = TensorGrid::slices(r, nx, ns);
        double d = 0.0;
        Eigen::MatrixXd U;
        try {
            U = S.section_res->solve(Eigen::MatrixXd(R), defect_tol, &d, scale);
        } catch (const Error& e) {
            throw Error(e.kind(), std::string(e.what()) + " (section solve for psi_tilde_" + std::to_string(step) +
                                      ", mode " + std::to_string(S.n) + "," + std::to_string(m) + ")");
        }
        st.section_defects.push_back(d);
        return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(U.data(), U.size()));
    };
    auto Fq = [&](int j, const Eigen::VectorXd& u) { // (F_j - lambda_{j-3} q) u
        Eigen::VectorXd r = apply_F(g, j, u);
        if (lam(j - 3) != 0.0) r -= lam(j - 3) * q.cwiseProduct(u);
        return r;
    };

    for (int i = 1; i <= N; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        // psi_tilde_{i+1}
        const Eigen::VectorXd Fp = F_tilde(S, st.Psi[iu - 1]);
        Eigen::VectorXd rhs = Ft + Fp;
        double scale = std::max(colmax(Ft), colmax(Fp));
        for (int j = 2; j <= i + 1; ++j) {
            const Eigen::VectorXd t = lam(j - 2) * st.psi[static_cast<std::size_t>(i + 1 - j)];
            scale = std::max(scale, colmax(t));
            rhs += t;
        }
        st.psi_tilde.push_back(section_solve(rhs, scale, i + 1));

        // F_tilde_{i+2}
        Eigen::VectorXd F = Fq(1, st.psi_tilde[iu + 1]);
        F += apply_F(g, 2, st.psi_tilde[iu] + 0.5 * q.cwiseProduct(lift(S, st.Psi[iu - 1])));
        for (int j = 3; j <= i + 2; ++j) F += Fq(j, st.psi[static_cast<std::size_t>(i + 2 - j)]);
        Ft = F;

        // f_{i+2}, lambda_i, Psi_i
        Eigen::VectorXd f = project_phi(S, F);
        for (int j = 0; j <= i - 1; ++j) f += 0.5 * lam(j) * st.Psi[static_cast<std::size_t>(i - 1 - j)].cwiseProduct(qn);
        st.lambda[iu + 2] = -profile_dot(g.hs, f, st.Psi[0]);
        Eigen::VectorXd r = f;
        double rscale = f.norm();
        for (int j = 1; j <= i; ++j) {
            const Eigen::VectorXd t = lam(j) * st.Psi[static_cast<std::size_t>(i - j)];
            rscale = std::max(rscale, t.norm());
            r += t;
        }
        double d = 0.0;
        try {
            st.Psi.push_back(rres.solve(r, defect_tol, &d, rscale));
        } catch (const Error& e) {
            throw Error(e.kind(), std::string(e.what()) + " (reduced solve for Psi_" + std::to_string(i) + ", mode " +
                                      std::to_string(S.n) + "," + std::to_string(m) + ")");
        }
        st.reduced_defects.push_back(d);

        st.psi.push_back(st.psi_tilde[iu] + 0.5 * q.cwiseProduct(lift(S, st.Psi[iu - 1])) + lift(S, st.Psi[iu]));
    }
    st.psi_tilde.resize(static_cast<std::size_t>(N + 1));
    return st;
}

// Resolvent-free form of lambda_1, exact for the discrete recurrence:
//   -1/4 ((F1 - lambda q)(q psi0), q psi0) - (F2 psi0, q psi0) - (F3 psi0, psi0)
inline double lambda1_closed(const ExpansionSetup& S, int m) {
    const TensorGrid& g = S.grid;
    const Eigen::VectorXd& q = S.q.q;
    const Eigen::VectorXd u = lift(S, S.modes.at(static_cast<std::size_t>(m - 1)).Psi.segment(1, g.ns()));
    const Eigen::VectorXd qu = q.cwiseProduct(u);
    const Eigen::VectorXd a = apply_F(g, 1, qu) - S.lambda_n * q.cwiseProduct(qu);
    return -0.25 * tensor_dot(g, a, qu) - tensor_dot(g, apply_F(g, 2, u), qu) - tensor_dot(g, apply_F(g, 3, u), u);
}

// lambda_1 = (psi0, Q psi0) + 2 (R psi0, k3^2 q R psi0) with
// Q = (2 lambda0 - (2 C - 1/2) k3^2) q + q_ss / 2 + k3' (R q) / 2, by tensor quadrature
inline double lambda1_continuum(const ExpansionSetup& S, int m) {
    const TensorGrid& g = S.grid;
    const SectionGrid& sec = g.sec;
    const auto& mode = S.modes.at(static_cast<std::size_t>(m - 1));
    const FrameField& f = S.frame;
    const Eigen::VectorXd k1ss = fd::derivative(fd::derivative(f.kappa1, f.h), f.h);
    const Eigen::VectorXd k2ss = fd::derivative(fd::derivative(f.kappa2, f.h), f.h);
    Eigen::VectorXd Rphi(sec.quad_size());
    apply_R(sec, S.phi, Rphi);
    const double h2 = sec.h * sec.h;
    double acc = 0.0;
    for (int k = 1; k < g.M; ++k) {
        const double P2 = mode.Psi[k] * mode.Psi[k];
        if (P2 == 0.0) continue;
        const double k3 = f.kappa3[k];
        const double a = 2 * mode.lambda - (2 * S.C - 0.5) * k3 * k3;
        double sl = 0.0;
        for (int i = 0; i < g.nx(); ++i) {
            const double x2 = sec.xi2[i], x3 = sec.xi3[i];
            const double qq = g.q(k, i);
            const double qss = k1ss[k] * x2 - k2ss[k] * x3;
            const double Rq = x3 * f.kappa1[k] + x2 * f.kappa2[k];
            sl += S.phi[i] * S.phi[i] * (a * qq + 0.5 * qss + 0.5 * f.kappa3_prime[k] * Rq);
        }
        double sr = 0.0;
        for (int p = 0; p < sec.quad_size(); ++p)
            sr += sec.qw[p] * Rphi[p] * Rphi[p] * g.q(k, sec.qxi2[p], sec.qxi3[p]);
        acc += P2 * h2 * (sl + 2 * k3 * k3 * sr);
    }
    return g.hs * acc;
}

struct PartialSum {
    double lambda = 0.0;   // eps^-2 lambda_n + sum
    double reduced = 0.0;  // sum_{i=0}^{N-2} eps^i lambda_i
    Eigen::VectorXd psi;   // sum_{i=0}^N eps^i psi_i
};

inline void check_epsilon(const TensorGrid& g, double eps) {
    const double mq = max_abs_q(g);
    if (!(eps > 0.0) || (mq > 0.0 && !(eps < 0.5 / mq)))
        throw Error(ErrorKind::EpsilonOutOfRange,
                    "epsilon " + std::to_string(eps) + " outside (0, 0.5/max|q|), max|q| = " + std::to_string(mq));
}

inline PartialSum partial_sums(const ExpansionSetup& S, const ExpansionState& st, double eps) {
    check_epsilon(S.grid, eps);
    PartialSum r;
    double e = 1.0;
    for (int i = 0; i <= st.N - 2; ++i, e *= eps) r.reduced += e * st.lambda_at(i);
    r.lambda = st.lambda_at(-2) / (eps * eps) + r.reduced;
    r.psi = Eigen::VectorXd::Zero(S.grid.size());
    e = 1.0;
    for (int i = 0; i <= st.N; ++i, e *= eps) r.psi += e * st.psi[static_cast<std::size_t>(i)];
    return r;
}

} // namespace thinrod
