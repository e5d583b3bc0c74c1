#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "thinrod/direct.hpp"

using namespace thinrod;
using std::numbers::pi;

namespace {

FrameField test_rod(int M) {
    CurveSpec c;
    c.kind = CurveKind::circular_arc;
    c.radius = 1.2;
    c.length = pi;
    c.twist.kind = TwistKind::linear;
    c.twist.rate = 0.8;
    return build_frame(c, M);
}

FrameField straight(int M) {
    CurveSpec c;
    c.kind = CurveKind::straight;
    c.length = pi;
    return build_frame(c, M);
}

double discrete_sine(int m, int M) {
    const double h = pi / M;
    return 4.0 / (h * h) * std::pow(std::sin(m * h / 2), 2);
}

Eigen::VectorXd random_vector(Eigen::Index n, unsigned seed) {
    std::mt19937 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::VectorXd v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = nd(rng);
    return v;
}

// dense generalized eigenvalues of the assembled pair
Eigen::VectorXd dense_eigenvalues(const TransformedOperator& op) {
    const Eigen::MatrixXd H = Eigen::MatrixXd(to_sparse(op));
    const Eigen::MatrixXd B = op.p.asDiagonal();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(H, B);
    return es.eigenvalues();
}

} // namespace

TEST(Coefficients, IdentityWithoutCurvature) {
    for (double x2 : {-0.4, 0.0, 0.3})
        for (double x3 : {-0.2, 0.45}) {
            const Eigen::Matrix3d A = coefficient_matrix(0.1, 0.0, 0.0, x2, x3);
            EXPECT_EQ((A - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff(), 0.0);
        }
}

TEST(Coefficients, SymmetricPositiveOnRod) {
    const auto op = assemble(test_rod(48), make_square(1.0, 16, 0.1, 0.05), 0.2);
    const auto r = check_coefficients(op);
    EXPECT_EQ(r.max_asymmetry, 0.0);
    EXPECT_GT(r.min_minor2, 0.0);
    EXPECT_GT(r.min_minor3, 0.0);
    EXPECT_GE(r.min_p, 0.5);
    EXPECT_LE(r.max_p, 1.5);
    EXPECT_GE(op.p.minCoeff(), 0.5);
    EXPECT_LE(op.p.maxCoeff(), 1.5);
    // p is affine in q
    const Eigen::VectorXd q = q_tensor(op.grid);
    EXPECT_NEAR(op.p.minCoeff(), 1.0 - 0.2 * q.maxCoeff(), 1e-15);
}

// det A = p: the transformation has Jacobian p
TEST(Coefficients, DeterminantIsP) {
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int t = 0; t < 50; ++t) {
        const double eps = 0.3, q = u(rng), k3 = 4 * u(rng), x2 = u(rng), x3 = u(rng);
        const Eigen::Matrix3d A = coefficient_matrix(eps, q, k3, x2, x3);
        EXPECT_NEAR(A.determinant(), 1.0 - eps * q, 1e-13);
    }
}

// the energy policy reproduces g^T A g with the eps^-1 scaling of the xi gradient
TEST(Coefficients, FormPolicyMatchesMatrix) {
    Eigen::VectorXd k3(1);
    k3[0] = 0.9;
    std::mt19937 rng(11);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int t = 0; t < 50; ++t) {
        const double eps = 0.15, x2 = u(rng), x3 = u(rng), q = 1.3 * x2 - 0.4 * x3;
        const DirectCoeff c{&k3, eps};
        const Eigen::Vector3d g(u(rng), u(rng), u(rng));
        const Eigen::Vector3d gs(g[0], g[1] / eps, g[2] / eps);
        const double want = gs.dot(coefficient_matrix(eps, q, k3[0], x2, x3) * gs);
        const double R = x3 * g[1] - x2 * g[2];
        const double got = c.ss(0, q) * g[0] * g[0] + 2 * c.sr(0, q) * g[0] * R + c.t(0, q) * (g[1] * g[1] + g[2] * g[2]) +
                           c.rr(0, q) * R * R;
        EXPECT_NEAR(got, want, 1e-12 * std::abs(want));
    }
}

TEST(Coefficients, TaylorSeries) {
    const double q = 0.8, k3 = 1.1, x2 = 0.35, x3 = -0.25;
    double e11[3], eall[3];
    int j = 0;
    for (double eps : {0.1, 0.05, 0.025}) {
        Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
        double a11 = 0.0;
        for (int k = 0; k <= 3; ++k) {
            S += std::pow(eps, k) * coefficient_series_term(k, q, k3, x2, x3);
            a11 += std::pow(eps * q, k);
        }
        const Eigen::Matrix3d A = coefficient_matrix(eps, q, k3, x2, x3);
        e11[j] = std::abs(A(0, 0) - a11);
        eall[j] = (A - S).cwiseAbs().maxCoeff();
        ++j;
    }
    for (int k = 0; k < 2; ++k) {
        EXPECT_NEAR(std::log2(e11[k] / e11[k + 1]), 4.0, 0.1);
        EXPECT_NEAR(std::log2(eall[k] / eall[k + 1]), 4.0, 0.1);
    }
    EXPECT_EQ(coefficient_series_term(0, q, k3, x2, x3), Eigen::Matrix3d::Identity().eval());
    EXPECT_THROW(coefficient_series_term(-1, q, k3, x2, x3), Error);
}

TEST(Assemble, EpsilonOutOfRange) {
    const auto f = test_rod(32);
    const auto sec = make_square(1.0, 12);
    try {
        assemble(f, sec, 1.5); // max|q| is about 0.49
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::EpsilonOutOfRange);
    }
    EXPECT_THROW(assemble(f, sec, 0.0), Error);
    EXPECT_THROW(assemble(f, sec, -0.1), Error);
}

TEST(Assemble, SymmetricAndPositive) {
    const auto op = assemble(test_rod(24), make_square(1.0, 10, 0.1, 0.05), 0.2);
    const Eigen::SparseMatrix<double> H = to_sparse(op);
    const Eigen::SparseMatrix<double> Ht = H.transpose();
    EXPECT_EQ((H - Ht).norm(), 0.0);
    for (unsigned s = 0; s < 5; ++s) {
        const Eigen::VectorXd u = random_vector(op.size(), s), v = random_vector(op.size(), s + 100);
        const double a = op.apply(u).dot(v), b = u.dot(op.apply(v));
        EXPECT_NEAR(a, b, 1e-12 * op.apply(u).norm() * v.norm());
        EXPECT_GT(op.apply(u).dot(u), 0.0);
        EXPECT_LT((H * u - op.apply(u)).norm(), 1e-12 * (H * u).norm());
    }
}

TEST(Assemble, MatrixMarketDump) {
    const auto op = assemble(straight(16), make_square(1.0, 6), 0.1);
    const auto H = to_sparse(op);
    const auto path = std::filesystem::temp_directory_path() / "thinrod_dump.mtx";
    write_matrix_market(H, path.string());
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header.rfind("%%MatrixMarket", 0), 0u);
    long rows = 0, cols = 0, nnz = 0;
    in >> rows >> cols >> nnz;
    EXPECT_EQ(rows, op.size());
    EXPECT_EQ(nnz, H.nonZeros());
    long r = 0, c = 0, count = 0, minr = rows;
    double v = 0;
    while (in >> r >> c >> v) {
        ++count;
        minr = std::min(minr, r);
    }
    EXPECT_EQ(count, nnz);
    EXPECT_EQ(minr, 0); // 0-based
    std::filesystem::remove(path);
}

TEST(Direct, StraightRodFactorizes) {
    const int M = 64;
    const auto sec = make_square(1.0, 24);
    const auto sp = solve_section(sec, 2);
    const auto op = assemble(straight(M), sec, 0.1);
    const auto sol = solve_direct(op, 3);
    for (int m = 1; m <= 3; ++m) {
        const double want = sp.mode(1).lambda / 0.01 + discrete_sine(m, M);
        EXPECT_NEAR(sol.lambda[m - 1], want, 1e-8 * want);
        // continuum value within grid error
        EXPECT_NEAR(sol.lambda[m - 1], 2 * pi * pi / 0.01 + m * m, 5.0);
    }
}

TEST(Direct, MatchesDenseSolve) {
    const auto op = assemble(test_rod(16), make_square(1.0, 8, 0.1, 0.05), 0.2);
    const Eigen::VectorXd ref = dense_eigenvalues(op);
    const auto sol = solve_direct(op, 4);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(sol.lambda[j], ref[j], 1e-9 * ref[j]);
}

TEST(Direct, DiskLadderMatchesDense) {
    const auto op = assemble(test_rod(16), make_disk(0.5, 10), 0.2);
    const Eigen::VectorXd ref = dense_eigenvalues(op);
    const auto sol = solve_direct(op, 3);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(sol.lambda[j], ref[j], 1e-9 * ref[j]);
}

TEST(Direct, SolutionContract) {
    const auto op = assemble(test_rod(48), make_square(1.0, 16, 0.1, 0.05), 0.1);
    const auto sol = solve_direct(op, 4);
    const Eigen::MatrixXd G = sol.u.transpose() * op.p.asDiagonal() * sol.u;
    EXPECT_LT((G - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
    for (int j = 0; j < 4; ++j) {
        const Eigen::VectorXd u = sol.u.col(j);
        const Eigen::VectorXd Bu = op.p.cwiseProduct(u);
        EXPECT_LT((op.apply(u) - sol.lambda[j] * Bu).norm() / Bu.norm(), 1e-8);
        if (j > 0) EXPECT_GT(sol.lambda[j], sol.lambda[j - 1]);
    }
    // deterministic
    const auto again = solve_direct(op, 4);
    EXPECT_EQ(again.lambda, sol.lambda);
}

TEST(Direct, RejectsBadK) {
    const auto op = assemble(straight(16), make_square(1.0, 6), 0.1);
    EXPECT_THROW(solve_direct(op, 0), Error);
    EXPECT_THROW(solve_direct(op, 200), Error);
}

TEST(Certificate, ExactEigenpair) {
    const auto op = assemble(test_rod(32), make_square(1.0, 12, 0.1, 0.0), 0.1);
    const auto sol = solve_direct(op, 3);
    for (int j = 0; j < 2; ++j) {
        const auto c = residual_certificate(op, sol, sol.lambda[j], sol.u.col(j));
        EXPECT_LT(c.rho, 1e-8);
        EXPECT_EQ(c.distance, 0.0);
        EXPECT_TRUE(c.window_safe);
        EXPECT_TRUE(c.holds);
    }
    // the top of the window is never safe
    const auto top = residual_certificate(op, sol, sol.lambda[2], sol.u.col(2));
    EXPECT_FALSE(top.window_safe);
    EXPECT_THROW(residual_rho(op, 1.0, Eigen::VectorXd::Zero(op.size())), Error);
}

TEST(Certificate, StraightRodExpansionExact) {
    const auto f = straight(48);
    const auto sp = solve_section(make_square(1.0, 16), 2);
    const auto S = make_setup(f, sp, 1, 2);
    const auto st = run_recurrence(S, 1, 4);
    for (double eps : {0.2, 0.05}) {
        const auto op = assemble(f, sp.grid, eps);
        const auto ps = partial_sums(S, st, eps);
        EXPECT_LT(residual_rho(op, ps.lambda, ps.psi), 1e-8 * ps.lambda);
    }
}

// curved twisted rod, N = 3: certificate rate, eigenvalue rate, pairing
TEST(Compare, CurvedRates) {
    const auto f = test_rod(48);
    const auto sp = solve_section(make_square(1.0, 16, 0.1, 0.05), 2);
    const auto S = make_setup(f, sp, 1, 3);
    std::vector<ExpansionState> st;
    for (int m = 1; m <= 3; ++m) st.push_back(run_recurrence(S, m, 3));
    std::vector<Comparison> cmp;
    const double eps[3] = {0.2, 0.1, 0.05};
    for (double e : eps) {
        const auto op = assemble(f, sp.grid, e);
        const auto sol = solve_direct(op, 4, {}, &sp);
        std::vector<PartialSum> ps;
        for (const auto& s : st) ps.push_back(partial_sums(S, s, e));
        cmp.push_back(compare(op, sol, ps));
        EXPECT_TRUE(cmp.back().injective);
        for (const auto& r : cmp.back().rows) {
            EXPECT_EQ(r.index, r.m - 1);
            EXPECT_TRUE(r.cert.holds);
        }
    }
    for (int m = 0; m < 3; ++m) {
        std::vector<double> le, lg, lr;
        for (int k = 0; k < 3; ++k) {
            le.push_back(std::log(eps[k]));
            lg.push_back(std::log(cmp[k].rows[m].abs_gap));
            lr.push_back(std::log(cmp[k].rows[m].rho));
        }
        // least squares slope
        auto fit = [&](const std::vector<double>& y) {
            const double mx = (le[0] + le[1] + le[2]) / 3, my = (y[0] + y[1] + y[2]) / 3;
            double num = 0, den = 0;
            for (int k = 0; k < 3; ++k) {
                num += (le[k] - mx) * (y[k] - my);
                den += (le[k] - mx) * (le[k] - mx);
            }
            return num / den;
        };
        EXPECT_GE(fit(lr), 1.5);
        EXPECT_GE(fit(lg), 1.5);
        EXPECT_LE(fit(lg), 2.5);
        EXPECT_GT(cmp[0].rows[m].sin_angle, cmp[1].rows[m].sin_angle);
        EXPECT_GT(cmp[1].rows[m].sin_angle, cmp[2].rows[m].sin_angle);
    }
}

TEST(Compare, FirstOrderGapRatio) {
    const auto f = test_rod(48);
    const auto sp = solve_section(make_square(1.0, 16, 0.1, 0.05), 2);
    const auto S = make_setup(f, sp, 1, 1);
    const auto st = run_recurrence(S, 1, 2);
    double gap[2];
    int k = 0;
    for (double e : {0.1, 0.05}) {
        const auto op = assemble(f, sp.grid, e);
        const auto sol = solve_direct(op, 2, {}, &sp);
        gap[k++] = compare(op, sol, {partial_sums(S, st, e)}).rows[0].abs_gap;
    }
    EXPECT_GE(gap[0] / gap[1], 1.5);
    EXPECT_LE(gap[0] / gap[1], 3.0);
}

TEST(Compare, PairingAmbiguous) {
    const auto f = test_rod(32);
    const auto sp = solve_section(make_square(1.0, 12, 0.1, 0.0), 2);
    const auto S = make_setup(f, sp, 1, 2);
    const auto st = run_recurrence(S, 1, 2);
    const auto op = assemble(f, sp.grid, 0.1);
    const auto sol = solve_direct(op, 3, {}, &sp);
    const auto ps = partial_sums(S, st, 0.1);
    try {
        compare(op, sol, {ps, ps});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::PairingAmbiguous);
    }
    const auto c = compare(op, sol, {ps, ps}, false);
    EXPECT_FALSE(c.injective);
    EXPECT_EQ(c.rows.size(), 2u);
}

TEST(Compare, SinAngle) {
    const Eigen::VectorXd w = Eigen::VectorXd::Constant(3, 2.0);
    EXPECT_NEAR(sin_angle_B(w, Eigen::Vector3d(1, 0, 0), Eigen::Vector3d(1, 1, 0)), std::sqrt(0.5), 1e-15);
    EXPECT_EQ(sin_angle_B(w, Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(-2, -4, -6)), 0.0);
}
