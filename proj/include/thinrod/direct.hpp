#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "thinrod/asymptotic.hpp"
#include "thinrod/errors.hpp"
#include "thinrod/lobpcg.hpp"
#include "thinrod/section.hpp"
#include "thinrod/tensor.hpp"

namespace thinrod {

// A^(eps) at one point, in the (s, xi) variables
inline Eigen::Matrix3d coefficient_matrix(double eps, double q, double k3, double x2, double x3) {
    const double p = 1.0 - eps * q, ip = 1.0 / p;
    const double e3 = eps * k3 * x3, e2 = eps * k3 * x2;
    Eigen::Matrix3d A;
    A << ip, e3 * ip, -e2 * ip,
         e3 * ip, p + e3 * e3 * ip, -e2 * e3 * ip,
         -e2 * ip, -e2 * e3 * ip, p + e2 * e2 * ip;
    return A;
}

// k-th Taylor coefficient of A^(eps) in eps
inline Eigen::Matrix3d coefficient_series_term(int k, double q, double k3, double x2, double x3) {
    if (k < 0) throw Error(ErrorKind::ConfigError, "series index must be >= 0");
    Eigen::Matrix3d A = Eigen::Matrix3d::Zero();
    const double qk = std::pow(q, k);
    A(0, 0) = qk;
    if (k >= 1) {
        const double q1 = std::pow(q, k - 1);
        A(0, 1) = A(1, 0) = k3 * x3 * q1;
        A(0, 2) = A(2, 0) = -k3 * x2 * q1;
    }
    if (k == 0) A(1, 1) = A(2, 2) = 1.0;
    if (k == 1) A(1, 1) = A(2, 2) = -q;
    if (k >= 2) {
        const double q2 = std::pow(q, k - 2);
        A(1, 1) = k3 * k3 * x3 * x3 * q2;
        A(2, 2) = k3 * k3 * x2 * x2 * q2;
        A(1, 2) = A(2, 1) = -k3 * k3 * x2 * x3 * q2;
    }
    return A;
}

struct CoefficientReport {
    double min_minor2 = 0.0, min_minor3 = 0.0;
    double max_asymmetry = 0.0;
    double min_p = 0.0, max_p = 0.0;
};

// Straightened operator on the tensor grid. H is applied matrix-free through
// the energy form; B = diag(p) at interior nodes.
struct TransformedOperator {
    double eps = 0.0;
    TensorGrid grid;
    Eigen::VectorXd p;

    DirectCoeff coeff() const { return DirectCoeff{&grid.k3, eps}; }
    Eigen::VectorXd apply(const Eigen::VectorXd& u) const { return apply_form(grid, coeff(), u); }
    Eigen::MatrixXd apply(const Eigen::MatrixXd& U) const { return apply_form(grid, coeff(), U); }
    Eigen::Index size() const { return grid.size(); }
};

inline TransformedOperator assemble(const FrameField& f, const SectionGrid& sec, double eps) {
    TransformedOperator op;
    op.grid = TensorGrid(f, sec);
    check_epsilon(op.grid, eps);
    op.eps = eps;
    op.p = (1.0 - eps * q_tensor(op.grid).array()).matrix();
    return op;
}

inline CoefficientReport check_coefficients(const TransformedOperator& op) {
    CoefficientReport r;
    r.min_minor2 = r.min_minor3 = r.min_p = INFINITY;
    r.max_p = -INFINITY;
    const auto& g = op.grid;
    for (int k = 0; k <= g.M; ++k)
        for (int i = 0; i < g.nx(); ++i) {
            const double x2 = g.sec.xi2[i], x3 = g.sec.xi3[i], q = g.q(k, i);
            const Eigen::Matrix3d A = coefficient_matrix(op.eps, q, g.k3[k], x2, x3);
            r.max_asymmetry = std::max(r.max_asymmetry, (A - A.transpose()).cwiseAbs().maxCoeff());
            r.min_minor2 = std::min(r.min_minor2, A.topLeftCorner<2, 2>().determinant());
            r.min_minor3 = std::min(r.min_minor3, A.determinant());
            r.min_p = std::min(r.min_p, 1.0 - op.eps * q);
            r.max_p = std::max(r.max_p, 1.0 - op.eps * q);
        }
    return r;
}

inline Eigen::SparseMatrix<double> to_sparse(const TransformedOperator& op) {
    return form_matrix(op.grid, op.coeff());
}

// coordinate text dump: MatrixMarket header, then 0-based `row col value` lines
inline void write_matrix_market(const Eigen::SparseMatrix<double>& A, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::ConfigError, "cannot write " + path);
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << A.rows() << ' ' << A.cols() << ' ' << A.nonZeros() << '\n';
    out << std::setprecision(17);
    for (int c = 0; c < A.outerSize(); ++c)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, c); it; ++it)
            out << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
}

namespace detail {

// orthonormal Dirichlet sine basis for n interior points, columns by frequency
inline Eigen::MatrixXd sine_basis(int n) {
    Eigen::MatrixXd S(n, n);
    const double c = std::sqrt(2.0 / (n + 1));
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) S(k, j) = c * std::sin(std::numbers::pi * (j + 1) * (k + 1) / (n + 1));
    return S;
}

inline Eigen::VectorXd sine_eigenvalues(int n, double h) {
    Eigen::VectorXd mu(n);
    for (int j = 0; j < n; ++j) mu[j] = 4.0 / (h * h) * std::pow(std::sin(std::numbers::pi * (j + 1) / (2.0 * (n + 1))), 2);
    return mu;
}

} // namespace detail

// (H0 - sigma)^{-1} with H0 = eps^-2 L0 (x) I + I (x) D_s^T D_s, diagonalised in s by sines.
// Rectangular sections are diagonalised exactly; masks use a ladder of shifted
// section factorizations.
class SeparablePreconditioner {
public:
    SeparablePreconditioner(const TensorGrid& g, double eps, double lambda1, double sigma, double ladder = 1.5)
        : nx_(g.nx()), ns_(g.ns()), rect_(g.sec.rectangular), r2_(g.sec.r2), r3_(g.sec.r3) {
        Ss_ = detail::sine_basis(ns_);
        const Eigen::VectorXd mu = detail::sine_eigenvalues(ns_, g.hs);
        const double ie2 = 1.0 / (eps * eps);
        if (rect_) {
            S2_ = detail::sine_basis(r2_);
            S3_ = detail::sine_basis(r3_);
            const Eigen::VectorXd l2 = detail::sine_eigenvalues(r2_, g.sec.h), l3 = detail::sine_eigenvalues(r3_, g.sec.h);
            inv_.resize(nx_, ns_);
            for (int k = 0; k < ns_; ++k)
                for (int a = 0; a < r2_; ++a)
                    for (int b = 0; b < r3_; ++b) {
                        const double v = ie2 * (l2[a] + l3[b]) + mu[k] - sigma;
                        if (!(v > 0)) throw Error(ErrorKind::SolverFail, "preconditioner shift above the spectrum");
                        inv_(a * r3_ + b, k) = 1.0 / v;
                    }
            return;
        }
        // section factor for s-mode k: eps^-2 (L0 - lambda1) + c, c <= mu_k - sigma + eps^-2 lambda1
        const Eigen::SparseMatrix<double> L = laplacian(g.sec);
        Eigen::SparseMatrix<double> I(nx_, nx_);
        I.setIdentity();
        const double base = sigma - ie2 * lambda1;
        which_.resize(ns_);
        for (int k = 0; k < ns_; ++k) {
            const double c = mu[k] - base;
            if (!(c > 0)) throw Error(ErrorKind::SolverFail, "preconditioner shift above the spectrum");
            // reuse the last rung while it is within the ladder ratio
            if (!levels_.empty() && c <= levels_.back() * ladder) {
                which_[k] = static_cast<int>(levels_.size()) - 1;
                continue;
            }
            levels_.push_back(c);
            auto f = std::make_unique<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>();
            const Eigen::SparseMatrix<double> K = ie2 * L + (c - ie2 * lambda1) * I;
            f->compute(K);
            if (f->info() != Eigen::Success) throw Error(ErrorKind::SolverFail, "preconditioner factorization failed");
            factors_.push_back(std::move(f));
            which_[k] = static_cast<int>(levels_.size()) - 1;
        }
    }

    Eigen::MatrixXd operator()(const Eigen::MatrixXd& R) const {
        Eigen::MatrixXd out(R.rows(), R.cols());
        for (Eigen::Index c = 0; c < R.cols(); ++c) {
            const auto U = Eigen::Map<const Eigen::MatrixXd>(R.col(c).data(), nx_, ns_);
            Eigen::MatrixXd Uh = U * Ss_;
            if (rect_) {
                for (int k = 0; k < ns_; ++k) {
                    Eigen::Map<Eigen::MatrixXd> X(Uh.col(k).data(), r3_, r2_);
                    Eigen::MatrixXd Y = S3_ * X * S2_;
                    Y.array() *= Eigen::Map<const Eigen::MatrixXd>(inv_.col(k).data(), r3_, r2_).array();
                    X = S3_ * Y * S2_;
                }
            } else {
                for (std::size_t l = 0; l < factors_.size(); ++l) {
                    std::vector<int> cols;
                    for (int k = 0; k < ns_; ++k)
                        if (which_[k] == static_cast<int>(l)) cols.push_back(k);
                    Eigen::MatrixXd B(nx_, static_cast<Eigen::Index>(cols.size()));
                    for (std::size_t t = 0; t < cols.size(); ++t) B.col(static_cast<Eigen::Index>(t)) = Uh.col(cols[t]);
                    const Eigen::MatrixXd X = factors_[l]->solve(B);
                    for (std::size_t t = 0; t < cols.size(); ++t) Uh.col(cols[t]) = X.col(static_cast<Eigen::Index>(t));
                }
            }
            Eigen::Map<Eigen::MatrixXd>(out.col(c).data(), nx_, ns_) = Uh * Ss_;
        }
        return out;
    }

    int factor_count() const { return static_cast<int>(factors_.size()); }

private:
    int nx_, ns_;
    bool rect_;
    int r2_, r3_;
    Eigen::MatrixXd Ss_, S2_, S3_, inv_;
    std::vector<double> levels_;
    std::vector<int> which_;
    std::vector<std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>>> factors_;
};

struct DirectOptions {
    double tol_abs = 1e-9;
    double tol_rel = 1e-13;
    int max_iter = 300;
    int extra = 2;          // block size K + extra
    int section_modes = 3;  // section modes offered to the start block
};

struct DirectSolution {
    Eigen::VectorXd lambda;
    Eigen::MatrixXd u; // B-orthonormal columns
    Eigen::VectorXd residuals;
    int iterations = 0;
    double sigma = 0.0;
    std::vector<double> history;
};

inline DirectSolution solve_direct(const TransformedOperator& op, int K, const DirectOptions& opt = {},
                                   const SectionSpectrum* spectrum = nullptr) {
    if (K < 1) throw Error(ErrorKind::ConfigError, "need K >= 1 direct eigenpairs");
    const auto& g = op.grid;
    const int p = K + opt.extra;
    if (p > g.size() / 4) throw Error(ErrorKind::ConfigError, "too many direct eigenpairs for this grid");

    std::optional<SectionSpectrum> own;
    if (!spectrum || static_cast<int>(spectrum->modes.size()) < 1) {
        own = solve_section(g.sec, std::min(opt.section_modes, g.nx() / 4));
        spectrum = &*own;
    }
    const double ie2 = 1.0 / (op.eps * op.eps);
    const Eigen::VectorXd mu = detail::sine_eigenvalues(g.ns(), g.hs);
    const double lambda1 = spectrum->modes[0].lambda;
    const double lmin = ie2 * lambda1 + mu[0];
    const double sigma = lmin - std::max(1.0, mu[std::min(1, g.ns() - 1)] - mu[0]);
    SeparablePreconditioner T(g, op.eps, lambda1, sigma);

    // start block: section modes times s-sines, by H0 eigenvalue
    struct Cand {
        double e;
        int n, m;
    };
    std::vector<Cand> cand;
    for (std::size_t n = 0; n < spectrum->modes.size(); ++n)
        for (int m = 0; m < std::min(p, g.ns()); ++m)
            cand.push_back({ie2 * spectrum->modes[n].lambda + mu[m], static_cast<int>(n), m});
    std::stable_sort(cand.begin(), cand.end(), [](const Cand& a, const Cand& b) { return a.e < b.e; });
    if (static_cast<int>(cand.size()) < p) throw Error(ErrorKind::ConfigError, "start block too small");
    const Eigen::MatrixXd Ss = detail::sine_basis(g.ns());
    Eigen::MatrixXd X(g.size(), p);
    for (int j = 0; j < p; ++j)
        X.col(j) = outer_field(Ss.col(cand[j].m), spectrum->modes[static_cast<std::size_t>(cand[j].n)].phi);

    LobpcgOptions lo;
    lo.tol_abs = opt.tol_abs;
    lo.tol_rel = opt.tol_rel;
    lo.max_iter = opt.max_iter;
    auto A = [&](const Eigen::MatrixXd& V) { return op.apply(V); };
    LobpcgResult r = lobpcg(A, &op.p, T, X, K, lo);

    DirectSolution s;
    s.lambda = r.values;
    s.u = r.vectors;
    s.residuals = r.residuals;
    s.iterations = r.iterations;
    s.history = r.history;
    s.sigma = sigma;
    for (int j = 0; j < K; ++j) {
        Eigen::Index imax = 0;
        s.u.col(j).cwiseAbs().maxCoeff(&imax);
        if (s.u(imax, j) < 0) s.u.col(j) = -s.u.col(j);
    }
    return s;
}

struct Certificate {
    double rho = 0.0;
    double distance = 0.0; // min_j |lambda_j - lambda|
    bool window_safe = false;
    bool holds = true;     // distance <= rho, meaningful when window_safe
};

// rho = |B^-1/2 (H - lambda B) psi| / |B^1/2 psi|
inline double residual_rho(const TransformedOperator& op, double lambda, const Eigen::VectorXd& psi) {
    const double den = std::sqrt(psi.dot(op.p.cwiseProduct(psi)));
    if (!(den > 0)) throw Error(ErrorKind::ConfigError, "residual of a zero field");
    const Eigen::VectorXd r = op.apply(psi) - lambda * op.p.cwiseProduct(psi);
    return std::sqrt(r.dot(r.cwiseQuotient(op.p))) / den;
}

inline Certificate residual_certificate(const TransformedOperator& op, const DirectSolution& sol, double lambda,
                                        const Eigen::VectorXd& psi) {
    Certificate c;
    c.rho = residual_rho(op, lambda, psi);
    c.distance = (sol.lambda.array() - lambda).abs().minCoeff();
    c.window_safe = lambda + c.rho < sol.lambda[sol.lambda.size() - 1];
    c.holds = !c.window_safe || c.distance <= c.rho;
    return c;
}

// sin of the B-angle between u and v
inline double sin_angle_B(const Eigen::VectorXd& w, const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    const double nu = std::sqrt(u.dot(w.cwiseProduct(u))), nv = std::sqrt(v.dot(w.cwiseProduct(v)));
    const Eigen::VectorXd e = u / nu;
    const Eigen::VectorXd r = v / nv - e * e.dot(w.cwiseProduct(v / nv));
    return std::min(1.0, std::sqrt(std::max(0.0, r.dot(w.cwiseProduct(r)))));
}

struct PairRow {
    int m = 0;
    int index = -1; // paired direct eigenpair, 0-based
    double lambda_direct = 0.0, lambda_partial = 0.0, abs_gap = 0.0;
    double neighbour_gap = 0.0; // distance from lambda_direct to the other computed eigenvalues
    double rho = 0.0, sin_angle = 0.0;
    Certificate cert;
};

struct Comparison {
    std::vector<PairRow> rows;
    bool injective = true;
};

// states and partial sums are for modes m = 1..M of one section mode
inline Comparison compare(const TransformedOperator& op, const DirectSolution& sol,
                          const std::vector<PartialSum>& sums, bool throw_on_ambiguous = true) {
    Comparison c;
    const Eigen::Index K = sol.lambda.size();
    std::vector<int> used(static_cast<std::size_t>(K), 0);
    for (std::size_t j = 0; j < sums.size(); ++j) {
        PairRow r;
        r.m = static_cast<int>(j) + 1;
        r.lambda_partial = sums[j].lambda;
        Eigen::Index best = 0;
        (sol.lambda.array() - r.lambda_partial).abs().minCoeff(&best);
        r.index = static_cast<int>(best);
        if (used[static_cast<std::size_t>(best)]++) c.injective = false;
        r.lambda_direct = sol.lambda[best];
        r.abs_gap = std::abs(r.lambda_direct - r.lambda_partial);
        r.neighbour_gap = INFINITY;
        for (Eigen::Index k = 0; k < K; ++k)
            if (k != best) r.neighbour_gap = std::min(r.neighbour_gap, std::abs(sol.lambda[k] - r.lambda_direct));
        r.cert = residual_certificate(op, sol, r.lambda_partial, sums[j].psi);
        r.rho = r.cert.rho;
        r.sin_angle = sin_angle_B(op.p, sol.u.col(best), sums[j].psi);
        c.rows.push_back(r);
    }
    if (!c.injective && throw_on_ambiguous)
        throw Error(ErrorKind::PairingAmbiguous, "two partial sums share one direct eigenvalue");
    return c;
}

} // namespace thinrod
