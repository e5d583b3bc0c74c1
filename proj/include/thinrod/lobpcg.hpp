#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "thinrod/errors.hpp"

namespace thinrod {

struct LobpcgOptions {
    double tol_abs = 1e-9;  // on ||A x - lambda B x|| / ||B x||
    double tol_rel = 0.0;   // added as tol_rel * |lambda|
    int max_iter = 500;
    int refresh = 8;        // recompute A X explicitly every few steps
};

struct LobpcgResult {
    Eigen::VectorXd values;
    Eigen::MatrixXd vectors; // B-orthonormal columns
    Eigen::VectorXd residuals;
    int iterations = 0;
    std::vector<double> history; // worst wanted residual per step
};

namespace detail {

// diagonal weight or identity
struct Weight {
    const Eigen::VectorXd* d = nullptr;
    Eigen::MatrixXd operator()(const Eigen::MatrixXd& V) const {
        if (!d) return V;
        return d->asDiagonal() * V;
    }
};

// V <- V * M with V^T B V = I, dropping near-dependent directions; returns M
inline Eigen::MatrixXd svqb(Eigen::MatrixXd& V, const Weight& B, double drop = 1e-13) {
    if (V.cols() == 0) return Eigen::MatrixXd(0, 0);
    Eigen::MatrixXd G = V.transpose() * B(V);
    G = 0.5 * (G + G.transpose()).eval();
    Eigen::VectorXd d = G.diagonal().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd Gs = d.asDiagonal() * G * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Gs);
    const Eigen::VectorXd& th = es.eigenvalues();
    const double top = th.maxCoeff();
    std::vector<int> keep;
    for (int i = 0; i < th.size(); ++i)
        if (th[i] > drop * top) keep.push_back(i);
    Eigen::MatrixXd M(V.cols(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t k = 0; k < keep.size(); ++k)
        M.col(static_cast<Eigen::Index>(k)) =
            d.asDiagonal() * es.eigenvectors().col(keep[k]) / std::sqrt(th[keep[k]]);
    V = (V * M).eval();
    return M;
}

inline void project_out(Eigen::MatrixXd& V, const Eigen::MatrixXd& Q, const Weight& B) {
    if (Q.cols() == 0 || V.cols() == 0) return;
    for (int pass = 0; pass < 2; ++pass) V -= Q * (B(Q).transpose() * V);
}

} // namespace detail

// Locally optimal block preconditioned conjugate gradient for A x = lambda B x,
// B diagonal (or identity when weight is null), T an SPD preconditioner.
template <typename ApplyA, typename ApplyT>
LobpcgResult lobpcg(ApplyA&& A, const Eigen::VectorXd* weight, ApplyT&& T, Eigen::MatrixXd X, int nev,
                    const LobpcgOptions& opt) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const detail::Weight B{weight};
    const int p = static_cast<int>(X.cols());
    if (nev < 1 || nev > p) throw Error(ErrorKind::SolverFail, "lobpcg: bad block size");

    detail::svqb(X, B);
    if (X.cols() != p) throw Error(ErrorKind::SolverFail, "lobpcg: dependent start vectors");
    MatrixXd AX = A(X);
    VectorXd lam;
    {
        MatrixXd G = X.transpose() * AX;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (G + G.transpose()));
        X = (X * es.eigenvectors()).eval();
        AX = (AX * es.eigenvectors()).eval();
        lam = es.eigenvalues();
    }
    MatrixXd P(X.rows(), 0), AP(X.rows(), 0);
    LobpcgResult res;
    VectorXd rn(p);

    auto residuals = [&](MatrixXd& R) {
        MatrixXd BX = B(X);
        R = AX - BX * lam.asDiagonal();
        for (int j = 0; j < p; ++j) rn[j] = R.col(j).norm() / BX.col(j).norm();
    };
    auto tol_of = [&](int j) { return opt.tol_abs + opt.tol_rel * std::abs(lam[j]); };

    MatrixXd R;
    int it = 0;
    for (; it < opt.max_iter; ++it) {
        residuals(R);
        double worst = 0.0;
        bool done = true;
        for (int j = 0; j < nev; ++j) {
            worst = std::max(worst, rn[j]);
            if (rn[j] > tol_of(j)) done = false;
        }
        res.history.push_back(worst);
        if (done) break;

        std::vector<int> act;
        for (int j = 0; j < p; ++j)
            if (rn[j] > tol_of(j)) act.push_back(j);
        MatrixXd Ra(R.rows(), static_cast<Eigen::Index>(act.size()));
        for (std::size_t k = 0; k < act.size(); ++k) Ra.col(static_cast<Eigen::Index>(k)) = R.col(act[k]);
        R.resize(0, 0);
        MatrixXd W = T(Ra);
        Ra.resize(0, 0);
        for (Eigen::Index j = 0; j < W.cols(); ++j) W.col(j).normalize();
        detail::project_out(W, X, B);
        detail::project_out(W, P, B);
        detail::svqb(W, B);
        detail::project_out(W, X, B);
        detail::project_out(W, P, B);
        detail::svqb(W, B);
        MatrixXd AW = W.cols() ? A(W) : MatrixXd(X.rows(), 0);

        const Eigen::Index nx = X.cols(), nw = W.cols(), np = P.cols(), m = nx + nw + np;
        const MatrixXd* S[3] = {&X, &W, &P};
        const MatrixXd* AS[3] = {&AX, &AW, &AP};
        const Eigen::Index off[3] = {0, nx, nx + nw};
        MatrixXd G(m, m), M(m, m);
        for (int a = 0; a < 3; ++a) {
            if (S[a]->cols() == 0) continue;
            const MatrixXd BSa = B(*S[a]);
            for (int b = 0; b < 3; ++b) {
                if (S[b]->cols() == 0) continue;
                G.block(off[a], off[b], S[a]->cols(), S[b]->cols()) = S[a]->transpose() * *AS[b];
                M.block(off[a], off[b], S[a]->cols(), S[b]->cols()) = BSa.transpose() * *S[b];
            }
        }
        G = 0.5 * (G + G.transpose()).eval();
        M = 0.5 * (M + M.transpose()).eval();
        Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(G, M);
        if (ges.info() != Eigen::Success) {
            // basis lost definiteness: drop the search directions and retry next step
            P.resize(X.rows(), 0);
            AP.resize(X.rows(), 0);
            continue;
        }
        const MatrixXd C = ges.eigenvectors().leftCols(p);
        lam = ges.eigenvalues().head(p);

        MatrixXd Xn = X * C.topRows(nx);
        MatrixXd AXn = AX * C.topRows(nx);
        MatrixXd Pn = MatrixXd::Zero(X.rows(), p), APn = MatrixXd::Zero(X.rows(), p);
        if (nw) {
            Pn += W * C.middleRows(nx, nw);
            APn += AW * C.middleRows(nx, nw);
        }
        if (np) {
            Pn += P * C.bottomRows(np);
            APn += AP * C.bottomRows(np);
        }
        Xn += Pn;
        AXn += APn;
        X.swap(Xn);
        AX.swap(AXn);
        Xn.resize(0, 0);
        AXn.resize(0, 0);
        W.resize(0, 0);
        AW.resize(0, 0);

        if ((it + 1) % opt.refresh == 0) {
            detail::svqb(X, B);
            if (X.cols() != p) throw Error(ErrorKind::SolverFail, "lobpcg: block collapsed");
            AX = A(X);
            MatrixXd G2 = X.transpose() * AX;
            Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (G2 + G2.transpose()));
            X = (X * es.eigenvectors()).eval();
            AX = (AX * es.eigenvectors()).eval();
            lam = es.eigenvalues();
        }
        // keep P B-orthogonal to X and B-orthonormal
        const MatrixXd Cp = B(X).transpose() * Pn;
        Pn -= X * Cp;
        APn -= AX * Cp;
        const MatrixXd Mp = detail::svqb(Pn, B);
        P.swap(Pn);
        AP = APn * Mp;
    }

    // final explicit Rayleigh-Ritz on X
    detail::svqb(X, B);
    AX = A(X);
    {
        MatrixXd G = X.transpose() * AX;
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (G + G.transpose()));
        X = (X * es.eigenvectors()).eval();
        AX = (AX * es.eigenvectors()).eval();
        lam = es.eigenvalues();
    }
    residuals(R);
    res.iterations = it;
    res.values = lam.head(nev);
    res.vectors = X.leftCols(nev);
    res.residuals = rn.head(nev);
    for (int j = 0; j < nev; ++j)
        if (!(rn[j] <= 10 * tol_of(j))) {
            std::string hist;
            const std::size_t from = res.history.size() > 6 ? res.history.size() - 6 : 0;
            for (std::size_t k = from; k < res.history.size(); ++k) hist += " " + std::to_string(res.history[k]);
            throw Error(ErrorKind::SolverFail, "lobpcg did not converge after " + std::to_string(it) +
                                                   " iterations, residual " + std::to_string(rn[j]) +
                                                   " for pair " + std::to_string(j + 1) + "; last residuals:" +
                                                   hist);
        }
    return res;
}

} // namespace thinrod
