#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "thinrod/errors.hpp"
#include "thinrod/geometry.hpp"

namespace thinrod {

// -d^2/ds^2 + V on (0, s0), 3-point stencil, Dirichlet ends
struct ReducedOperator {
    int n = 1;
    double h = 0.0;
    std::vector<double> s; // all nodes 0..M
    Eigen::VectorXd V; // potential at all nodes

    int intervals() const { return static_cast<int>(s.size()) - 1; }
    int interior() const { return intervals() - 1; }
};

struct ReducedMode {
    int m = 0;
    double lambda = 0.0;
    Eigen::VectorXd Psi; // all nodes, zero at the ends; h sum Psi^2 = 1
};

// V = C_n k3^2 - (k1^2 + k2^2)/4
inline ReducedOperator build_reduced(const FrameField& f, double C, int n = 1) {
    ReducedOperator op;
    op.n = n;
    op.h = f.h;
    op.s = f.s;
    op.V = C * f.kappa3.array().square() - 0.25 * (f.kappa1.array().square() + f.kappa2.array().square());
    return op;
}

inline ReducedOperator reduced_from_potential(const FrameField& f, Eigen::VectorXd V, int n = 1) {
    ReducedOperator op;
    op.n = n;
    op.h = f.h;
    op.s = f.s;
    op.V = std::move(V);
    return op;
}

// y = (L - shift) x on interior nodes
inline Eigen::VectorXd apply_reduced(const ReducedOperator& op, const Eigen::VectorXd& x, double shift = 0.0) {
    const int n = op.interior();
    const double c = 1.0 / (op.h * op.h);
    Eigen::VectorXd y(n);
    for (int k = 0; k < n; ++k) {
        double v = (2 * c + op.V[k + 1] - shift) * x[k];
        if (k > 0) v -= c * x[k - 1];
        if (k + 1 < n) v -= c * x[k + 1];
        y[k] = v;
    }
    return y;
}

inline std::vector<ReducedMode> solve_reduced(const ReducedOperator& op, int count, double gap_tol = 1e-8) {
    const int n = op.interior();
    if (count < 1 || count >= n) throw Error(ErrorKind::ConfigError, "reduced mode count out of range");
    const double c = 1.0 / (op.h * op.h);
    Eigen::VectorXd d = op.V.segment(1, n).array() + 2 * c;
    Eigen::VectorXd e = Eigen::VectorXd::Constant(n - 1, -c);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(d, e);
    if (es.info() != Eigen::Success) throw Error(ErrorKind::SolverFail, "tridiagonal eigensolve failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    for (int j = 0; j < count && j + 1 < n; ++j)
        if (!(lam[j + 1] - lam[j] > gap_tol * std::max(1.0, std::abs(lam[j]))))
            throw Error(ErrorKind::DegenerateReduced, "reduced eigenvalues " + std::to_string(j + 1) + " and " +
                                                          std::to_string(j + 2) + " coincide numerically");
    std::vector<ReducedMode> out;
    for (int j = 0; j < count; ++j) {
        ReducedMode m;
        m.m = j + 1;
        m.lambda = lam[j];
        Eigen::VectorXd v = es.eigenvectors().col(j);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v[imax] < 0) v = -v;
        m.Psi = Eigen::VectorXd::Zero(n + 2);
        m.Psi.segment(1, n) = v / std::sqrt(op.h * v.squaredNorm());
        out.push_back(std::move(m));
    }
    return out;
}

inline double profile_dot(double h, const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return h * a.dot(b); }

// (L - lambda_0)^{-1} on the complement of Psi_0; works on interior-node vectors
class ReducedResolvent {
public:
    ReducedResolvent(const ReducedOperator& op, const ReducedMode& mode) : lambda_(mode.lambda) {
        const int n = op.interior();
        psi_ = mode.Psi.segment(1, n);
        psi_.normalize();
        const double c = 1.0 / (op.h * op.h);
        std::vector<Eigen::Triplet<double>> t;
        for (int k = 0; k < n; ++k) {
            t.emplace_back(k, k, 2 * c + op.V[k + 1] - lambda_);
            if (k > 0) t.emplace_back(k, k - 1, -c);
            if (k + 1 < n) t.emplace_back(k, k + 1, -c);
            t.emplace_back(k, n, psi_[k]);
            t.emplace_back(n, k, psi_[k]);
        }
        K_.resize(n + 1, n + 1);
        K_.setFromTriplets(t.begin(), t.end());
        K_.makeCompressed();
        lu_.compute(K_);
        if (lu_.info() != Eigen::Success) throw Error(ErrorKind::SolverFail, "bordered reduced factorization failed");
    }

    // scale, when given, is the size of the terms rhs was summed from
    double defect(const Eigen::VectorXd& rhs, double scale = 0.0) const {
        const double nr = std::max(scale, rhs.norm());
        return nr == 0 ? 0.0 : std::abs(psi_.dot(rhs)) / nr;
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs, double tol = 1e-8, double* defect_out = nullptr,
                          double scale = 0.0) const {
        const double d = defect(rhs, scale);
        if (defect_out) *defect_out = d;
        if (d > tol)
            throw Error(ErrorKind::SolvabilityViolation, "reduced right-hand side has Psi_0 weight " + std::to_string(d));
        const int n = static_cast<int>(psi_.size());
        Eigen::VectorXd b = Eigen::VectorXd::Zero(n + 1);
        b.head(n) = rhs - psi_ * psi_.dot(rhs);
        Eigen::VectorXd x = lu_.solve(b);
        x += lu_.solve(Eigen::VectorXd(b - K_ * x));
        Eigen::VectorXd u = x.head(n);
        u -= psi_ * psi_.dot(u);
        return u;
    }

    double lambda() const { return lambda_; }

private:
    double lambda_;
    Eigen::VectorXd psi_;
    Eigen::SparseMatrix<double> K_;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

} // namespace thinrod
