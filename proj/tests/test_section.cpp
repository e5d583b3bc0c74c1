#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "thinrod/section.hpp"

using namespace thinrod;
using std::numbers::pi;

namespace {

// discrete 5-point eigenvalue of sin(a pi x) sin(b pi y) on the unit square
double discrete_square(int a, int b, int N) {
    const double h = 1.0 / N;
    return 4.0 / (h * h) * (std::pow(std::sin(a * pi * h / 2), 2) + std::pow(std::sin(b * pi * h / 2), 2));
}

std::string write_mask(const std::string& name, const std::vector<std::string>& rows, double h) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::ofstream out(path);
    out << rows.size() << " " << rows[0].size() << " " << h << "\n";
    for (const auto& r : rows) out << r << "\n";
    return path.string();
}

std::vector<std::string> l_shape(int n) {
    std::vector<std::string> rows(static_cast<std::size_t>(n), std::string(static_cast<std::size_t>(n), '0'));
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (a < n / 2 || b < n / 3) rows[a][b] = '1';
    return rows;
}

std::vector<std::string> rotate90(const std::vector<std::string>& r) {
    const int n2 = static_cast<int>(r.size()), n3 = static_cast<int>(r[0].size());
    std::vector<std::string> o(static_cast<std::size_t>(n3), std::string(static_cast<std::size_t>(n2), '0'));
    for (int a = 0; a < n2; ++a)
        for (int b = 0; b < n3; ++b) o[b][n2 - 1 - a] = r[a][b];
    return o;
}

} // namespace

TEST(Section, UnitSquareGroundState) {
    const auto sp = solve_section(make_square(1.0, 48), 1);
    EXPECT_NEAR(sp.mode(1).lambda, discrete_square(1, 1, 48), 1e-9 * sp.mode(1).lambda);
    EXPECT_NEAR(sp.mode(1).lambda, 2 * pi * pi, 2e-3 * 2 * pi * pi);
}

TEST(Section, SquareDegeneratePair) {
    const auto sp = solve_section(make_square(1.0, 40), 3);
    const double ref = discrete_square(1, 2, 40);
    EXPECT_NEAR(sp.mode(2).lambda, ref, 1e-9 * ref);
    EXPECT_NEAR(sp.mode(3).lambda, ref, 1e-9 * ref);
    EXPECT_LT(sp.gaps[1], 1e-8 * ref);
    EXPECT_NEAR(ref, 5 * pi * pi, 5e-3 * ref);
}

TEST(Section, NormalizationOrthogonalitySign) {
    const auto sp = solve_section(make_disk(1.0, 40), 4);
    const auto& g = sp.grid;
    for (const auto& m : sp.modes) {
        EXPECT_NEAR(section_dot(g, m.phi, m.phi), 1.0, 1e-10);
        Eigen::Index i;
        m.phi.cwiseAbs().maxCoeff(&i);
        EXPECT_GT(m.phi[i], 0.0);
        EXPECT_GT(m.lambda, 0.0);
        EXPECT_GE(m.C, 0.0);
        for (const auto& k : sp.modes)
            if (k.n != m.n) EXPECT_LT(std::abs(section_dot(g, m.phi, k.phi)), 1e-8);
    }
    EXPECT_LT(sp.mode(1).lambda, sp.mode(2).lambda);
}

TEST(Section, DiskGroundStateApproachesBesselZero) {
    const double j0 = 2.404825557695773;
    const double e32 = std::abs(solve_section(make_disk(1.0, 32), 1).mode(1).lambda - j0 * j0);
    const double e64 = std::abs(solve_section(make_disk(1.0, 64), 1).mode(1).lambda - j0 * j0);
    EXPECT_LT(e64, 0.03 * j0 * j0);
    EXPECT_LT(e64, e32);
}

TEST(Section, ConvergenceRatioSecondOrder) {
    const double l1 = solve_section(make_square(1.0, 12), 1).mode(1).lambda;
    const double l2 = solve_section(make_square(1.0, 24), 1).mode(1).lambda;
    const double l3 = solve_section(make_square(1.0, 48), 1).mode(1).lambda;
    EXPECT_NEAR((l1 - l2) / (l2 - l3), 4.0, 1.5);
}

TEST(Section, AssertSimple) {
    const auto sq = solve_section(make_square(1.0, 32), 3);
    EXPECT_NO_THROW(assert_simple(sq, 1));
    try {
        assert_simple(sq, 2);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::MultipleEigenvalue);
    }
    const auto dk = solve_section(make_disk(1.0, 32), 2);
    EXPECT_NO_THROW(assert_simple(dk, 1));
}

TEST(Section, RotationalCoefficientSquare) {
    const auto sp = solve_section(make_square(1.0, 64), 1);
    const auto [C, field] = rotational_coefficient(sp, 1);
    EXPECT_NEAR(C, pi * pi / 6 - 1.5, 1e-3);
    EXPECT_DOUBLE_EQ(C, sp.mode(1).C);
    EXPECT_EQ(field.size(), sp.grid.quad_size());
}

TEST(Section, RotationalCoefficientDiskShrinksWithGrid) {
    const double c32 = solve_section(make_disk(1.0, 32), 1).mode(1).C;
    const double c64 = solve_section(make_disk(1.0, 64), 1).mode(1).C;
    // staircase boundary: first order only
    EXPECT_LT(c64, c32);
    EXPECT_LT(c64, 0.02);
}

TEST(Section, RotationalCoefficientRotationInvariant) {
    const auto rows = l_shape(18);
    const auto a = solve_section(load_mask(write_mask("thinrod_l.txt", rows, 0.05)), 1);
    const auto b = solve_section(load_mask(write_mask("thinrod_l_rot.txt", rotate90(rows), 0.05)), 1);
    EXPECT_NEAR(a.mode(1).lambda, b.mode(1).lambda, 1e-10 * a.mode(1).lambda);
    EXPECT_NEAR(a.mode(1).C, b.mode(1).C, 1e-10);
}

TEST(Section, CentroidAndOffset) {
    const auto g = make_square(1.0, 20, 0.25, 0.0);
    EXPECT_NEAR(g.xi2.mean(), 0.25, 1e-14);
    EXPECT_NEAR(g.xi3.mean(), 0.0, 1e-14);
    const auto sp = solve_section(g, 1);
    EXPECT_NEAR(sp.mode(1).m2, 0.25, 1e-12);
    EXPECT_NEAR(sp.mode(1).m3, 0.0, 1e-12);
    EXPECT_TRUE(g.rectangular);
}

TEST(Section, MaskErrors) {
    EXPECT_THROW(load_mask("/nonexistent/mask.txt"), Error);
    EXPECT_THROW(load_mask(write_mask("thinrod_bad1.txt", {"111", "11"}, 0.1)), Error);
    EXPECT_THROW(load_mask(write_mask("thinrod_small.txt", {"111", "111", "111"}, 0.1)), Error);
    std::vector<std::string> two(12, std::string(12, '0'));
    for (int a = 0; a < 12; ++a)
        for (int b = 0; b < 12; ++b)
            if (b < 5 || b > 6) two[a][b] = '1';
    EXPECT_THROW(load_mask(write_mask("thinrod_split.txt", two, 0.1)), Error);
}

TEST(Section, LaplacianSymmetric) {
    const auto g = load_mask(write_mask("thinrod_l2.txt", l_shape(14), 0.1));
    const Eigen::SparseMatrix<double> L = laplacian(g);
    const Eigen::SparseMatrix<double> Lt = L.transpose();
    EXPECT_EQ((L - Lt).norm(), 0.0);
}

TEST(Section, RotationStencil) {
    const auto g = make_disk(1.0, 24, 0.1, -0.2);
    std::mt19937 rng(3);
    std::normal_distribution<double> nd;
    const int n = g.size(), nq = g.quad_size();
    Eigen::VectorXd u(n), v(n), w(nq), Ru(nq), Rv(nq), RTw = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < n; ++k) {
        u[k] = nd(rng);
        v[k] = nd(rng);
    }
    for (int q = 0; q < nq; ++q) w[q] = nd(rng);
    apply_R(g, u, Ru);
    apply_R(g, v, Rv);
    add_RT(g, w, RTw);
    // transpose
    EXPECT_NEAR(Ru.dot(w), u.dot(RTw), 1e-12 * Ru.norm() * w.norm());
    // skew on interior rows
    EXPECT_NEAR(Ru.head(n).dot(v), -u.dot(Rv.head(n)), 1e-12 * Ru.norm() * v.norm());
    // exact on the rigid rotation of a linear function inside the ring
    Eigen::VectorXd lin = 2.0 * g.xi2 + g.xi3, Rl(nq);
    apply_R(g, lin, Rl);
    for (int k = 0; k < n; ++k) {
        bool deep = true;
        for (int d = 0; d < 4; ++d) deep = deep && g.nb[d][k] >= 0;
        if (deep) EXPECT_NEAR(Rl[k], 2.0 * g.xi3[k] - g.xi2[k], 1e-12);
    }
}

TEST(Section, ResolventEigenbasis) {
    const auto sp = solve_section(make_disk(1.0, 32), 4);
    SectionResolvent res(sp, 1);
    for (int k = 2; k <= 4; ++k) {
        const auto& m = sp.mode(k);
        const Eigen::VectorXd u = res.solve(m.phi);
        const Eigen::VectorXd ref = m.phi / (m.lambda - sp.mode(1).lambda);
        EXPECT_LT((u - ref).norm(), 1e-8 * ref.norm()) << k;
    }
    try {
        res.solve(Eigen::VectorXd(sp.mode(1).phi));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SolvabilityViolation);
    }
}

TEST(Section, ResolventRoundTrip) {
    const auto sp = solve_section(make_square(1.0, 32, 0.1, 0.05), 2);
    const auto& g = sp.grid;
    const auto& phi = sp.mode(1).phi;
    SectionResolvent res(sp, 1);
    const Eigen::SparseMatrix<double> L = laplacian(g);
    std::mt19937 rng(11);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd w(g.size());
        for (int k = 0; k < g.size(); ++k) w[k] = nd(rng);
        w -= phi * section_dot(g, phi, w);
        const Eigen::VectorXd rhs = L * w - sp.mode(1).lambda * w;
        const Eigen::VectorXd u = res.solve(rhs);
        EXPECT_LT((u - w).norm(), 1e-8 * w.norm());
        EXPECT_LT(std::abs(section_dot(g, u, phi)), 1e-12 * std::sqrt(section_dot(g, u, u)));
        const Eigen::VectorXd r = L * u - sp.mode(1).lambda * u - rhs;
        EXPECT_LT(r.norm(), 1e-10 * rhs.norm());
    }
}

TEST(Section, Deterministic) {
    const auto a = solve_section(make_disk(1.0, 30), 3);
    const auto b = solve_section(make_disk(1.0, 30), 3);
    for (int n = 1; n <= 3; ++n) {
        EXPECT_EQ(a.mode(n).lambda, b.mode(n).lambda);
        EXPECT_EQ((a.mode(n).phi - b.mode(n).phi).norm(), 0.0);
    }
}
