#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "thinrod/reduced.hpp"
#include "thinrod/section.hpp"

using namespace thinrod;
using std::numbers::pi;

namespace {

FrameField straight(int M, double twist = 0.0) {
    CurveSpec c;
    c.kind = CurveKind::straight;
    c.length = pi;
    if (twist != 0.0) {
        c.twist.kind = TwistKind::linear;
        c.twist.rate = twist;
    }
    return build_frame(c, M);
}

FrameField arc(int M, double R) {
    CurveSpec c;
    c.kind = CurveKind::circular_arc;
    c.radius = R;
    c.length = pi;
    return build_frame(c, M);
}

// 3-point Dirichlet eigenvalue of sin(m s) on (0, pi)
double discrete_sine(int m, int M) {
    const double h = pi / M;
    return 4.0 / (h * h) * std::pow(std::sin(m * h / 2), 2);
}

} // namespace

TEST(Reduced, Potentials) {
    EXPECT_EQ(build_reduced(straight(64), 0.3).V.cwiseAbs().maxCoeff(), 0.0);
    const auto tw = build_reduced(straight(64, 1.5), 0.3);
    EXPECT_LT((tw.V.array() - 0.3 * 2.25).abs().maxCoeff(), 2e-5); // 4th-order FD of the frame
    const auto ar = build_reduced(arc(64, 1.0), 0.3);
    EXPECT_LT((ar.V.array() + 0.25).abs().maxCoeff(), 1e-6);
}

TEST(Reduced, StraightSineModes) {
    const auto modes = solve_reduced(build_reduced(straight(256), 0.1), 4);
    for (const auto& m : modes) {
        EXPECT_NEAR(m.lambda, discrete_sine(m.m, 256), 1e-9 * m.lambda);
        EXPECT_NEAR(m.lambda, m.m * m.m, 1e-4 * m.m * m.m * m.m * m.m);
        EXPECT_NEAR(profile_dot(pi / 256, m.Psi, m.Psi), 1.0, 1e-10);
        EXPECT_EQ(m.Psi[0], 0.0);
        EXPECT_EQ(m.Psi[256], 0.0);
    }
    for (std::size_t j = 0; j + 1 < modes.size(); ++j) EXPECT_LT(modes[j].lambda, modes[j + 1].lambda);
}

TEST(Reduced, TwistShiftBySquareC1) {
    const auto sp = solve_section(make_square(1.0, 64), 1);
    const double C = sp.mode(1).C;
    const auto m = solve_reduced(build_reduced(straight(256, 1.0), C), 1)[0];
    EXPECT_NEAR(m.lambda, discrete_sine(1, 256) + C, 1e-8);
    EXPECT_NEAR(m.lambda, 1.0 + pi * pi / 6 - 1.5, 1e-3);
}

TEST(Reduced, ArcShift) {
    for (int M : {64, 128, 256}) {
        const auto m = solve_reduced(build_reduced(arc(M, 1.0), 0.2), 2);
        EXPECT_NEAR(m[0].lambda, discrete_sine(1, M) - 0.25, 1e-6);
        EXPECT_NEAR(m[1].lambda, discrete_sine(2, M) - 0.25, 1e-6);
    }
    const auto m = solve_reduced(build_reduced(arc(256, 1.0), 0.2), 1);
    EXPECT_NEAR(m[0].lambda, 0.75, 1e-4);
}

TEST(Reduced, RefinementRatio) {
    double l[3];
    int k = 0;
    for (int M : {32, 64, 128}) l[k++] = solve_reduced(build_reduced(arc(M, 1.0), 0.0), 1)[0].lambda;
    EXPECT_NEAR((l[0] - l[1]) / (l[1] - l[2]), 4.0, 1.5);
}

TEST(Reduced, ConstantShiftProperty) {
    auto op = build_reduced(arc(128, 0.8), 0.1);
    const auto a = solve_reduced(op, 3);
    op.V.array() += 2.5;
    const auto b = solve_reduced(op, 3);
    for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(b[j].lambda, a[j].lambda + 2.5, 1e-11 * b[j].lambda);
        EXPECT_LT((a[j].Psi - b[j].Psi).cwiseAbs().maxCoeff(), 1e-9);
    }
}

TEST(Reduced, OperatorSymmetric) {
    CurveSpec c;
    c.kind = CurveKind::helix;
    c.a = 1.0;
    c.b = 0.5;
    c.length = 4.0;
    c.twist.kind = TwistKind::linear;
    c.twist.rate = 0.7;
    const auto op = build_reduced(build_frame(c, 100), 0.3);
    std::mt19937 rng(5);
    std::normal_distribution<double> nd;
    Eigen::VectorXd x(op.interior()), y(op.interior());
    for (int k = 0; k < op.interior(); ++k) {
        x[k] = nd(rng);
        y[k] = nd(rng);
    }
    const double a = apply_reduced(op, x).dot(y), b = x.dot(apply_reduced(op, y));
    EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
    const auto modes = solve_reduced(op, 6);
    for (std::size_t j = 0; j + 1 < modes.size(); ++j) EXPECT_GT(modes[j + 1].lambda - modes[j].lambda, 0.0);
}

TEST(Reduced, ResolventEigenbasis) {
    const auto op = build_reduced(arc(200, 1.3), 0.0);
    const auto modes = solve_reduced(op, 3);
    ReducedResolvent res(op, modes[0]);
    const int n = op.interior();
    for (int j = 1; j < 3; ++j) {
        const Eigen::VectorXd u = res.solve(modes[j].Psi.segment(1, n));
        const Eigen::VectorXd ref = modes[j].Psi.segment(1, n) / (modes[j].lambda - modes[0].lambda);
        EXPECT_LT((u - ref).norm(), 1e-8 * ref.norm());
    }
    try {
        res.solve(modes[0].Psi.segment(1, n));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SolvabilityViolation);
    }
}

TEST(Reduced, ResolventRoundTrip) {
    CurveSpec c;
    c.kind = CurveKind::helix;
    c.a = 0.6;
    c.b = 0.3;
    c.length = 3.0;
    const auto op = build_reduced(build_frame(c, 180), 0.2);
    const auto m0 = solve_reduced(op, 1)[0];
    ReducedResolvent res(op, m0);
    const int n = op.interior();
    const Eigen::VectorXd psi = m0.Psi.segment(1, n);
    std::mt19937 rng(17);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd w(n);
        for (int k = 0; k < n; ++k) w[k] = nd(rng);
        w -= psi * profile_dot(op.h, psi, w);
        const Eigen::VectorXd rhs = apply_reduced(op, w, m0.lambda);
        double d = 1.0;
        const Eigen::VectorXd u = res.solve(rhs, 1e-8, &d);
        EXPECT_LT(d, 1e-8);
        EXPECT_LT((u - w).norm(), 1e-8 * w.norm());
        EXPECT_LT(std::abs(profile_dot(op.h, u, psi)), 1e-12 * u.norm());
        EXPECT_LT((apply_reduced(op, u, m0.lambda) - rhs).norm(), 1e-10 * rhs.norm());
    }
}

TEST(Reduced, RejectsBadCount) {
    const auto op = build_reduced(straight(32), 0.0);
    EXPECT_THROW(solve_reduced(op, 0), Error);
    EXPECT_THROW(solve_reduced(op, 40), Error);
}
