#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include "thinrod/errors.hpp"
#include "thinrod/lobpcg.hpp"

namespace thinrod {

enum class SectionKind { square, disk, mask_file };

// Node grid of the cross-section. Only interior nodes carry unknowns; the
// full box includes at least one ring of exterior nodes around them.
struct SectionGrid {
    SectionKind kind = SectionKind::square;
    double h = 0.0;
    int n2 = 0, n3 = 0;        // full box node counts
    double x2 = 0.0, x3 = 0.0; // xi coordinates of box node (0,0)
    std::vector<int> index;    // box node -> interior index or -1
    std::vector<int> i2, i3;   // interior index -> box node
    Eigen::VectorXd xi2, xi3;  // interior node coordinates
    // neighbours of each interior node: +xi2, -xi2, +xi3, -xi3 (-1 outside)
    std::array<std::vector<int>, 4> nb;
    bool rectangular = false; // interior is a full r2 x r3 block in row-major order
    int r2 = 0, r3 = 0;

    // quadrature points for R: interior nodes first, then the exterior ring
    // (nodes with an interior 4-neighbour) where R u uses one-sided differences
    std::vector<double> qw;
    Eigen::VectorXd qxi2, qxi3;
    std::vector<std::array<int, 4>> ridx;
    std::vector<std::array<double, 4>> rcoef;

    int size() const { return static_cast<int>(i2.size()); }
    int quad_size() const { return static_cast<int>(qw.size()); }
    double area_weight() const { return h * h; }
};

namespace detail {

inline void build_rotation_stencil(SectionGrid& g) {
    const int n = g.size();
    auto id = [&](int a, int b) {
        if (a < 0 || b < 0 || a >= g.n2 || b >= g.n3) return -1;
        return g.index[static_cast<std::size_t>(a) * g.n3 + b];
    };
    const double c = 0.5 / g.h;
    std::vector<std::array<int, 2>> pts;
    for (int k = 0; k < n; ++k) pts.push_back({g.i2[k], g.i3[k]});
    for (int a = 0; a < g.n2; ++a)
        for (int b = 0; b < g.n3; ++b) {
            if (id(a, b) >= 0) continue;
            if (id(a + 1, b) >= 0 || id(a - 1, b) >= 0 || id(a, b + 1) >= 0 || id(a, b - 1) >= 0) pts.push_back({a, b});
        }
    const int nq = static_cast<int>(pts.size());
    g.qw.assign(static_cast<std::size_t>(nq), 1.0);
    g.qxi2.resize(nq);
    g.qxi3.resize(nq);
    g.ridx.assign(static_cast<std::size_t>(nq), {-1, -1, -1, -1});
    g.rcoef.assign(static_cast<std::size_t>(nq), {0, 0, 0, 0});
    for (int q = 0; q < nq; ++q) {
        const int a = pts[q][0], b = pts[q][1];
        const double x2 = g.x2 + a * g.h, x3 = g.x3 + b * g.h;
        g.qxi2[q] = x2;
        g.qxi3[q] = x3;
        // d/dxi2 weighted by xi3, d/dxi3 weighted by -xi2
        const double wt[2] = {x3, -x2};
        int slot = 0;
        int touching = 0;
        for (int t = 0; t < 2; ++t) {
            const int da = t == 0 ? 1 : 0, db = t == 0 ? 0 : 1;
            const int up = id(a + da, b + db), dn = id(a - da, b - db);
            if (q < n) {
                g.ridx[q][slot] = up;
                g.rcoef[q][slot++] = c * wt[t];
                g.ridx[q][slot] = dn;
                g.rcoef[q][slot++] = -c * wt[t];
                continue;
            }
            touching += (up >= 0) + (dn >= 0);
            if (up >= 0 && dn >= 0) {
                g.ridx[q][slot] = up;
                g.rcoef[q][slot++] = c * wt[t];
                g.ridx[q][slot] = dn;
                g.rcoef[q][slot++] = -c * wt[t];
            } else if (up >= 0) {
                g.ridx[q][slot] = up;
                g.rcoef[q][slot++] = 4 * c * wt[t];
                g.ridx[q][slot] = id(a + 2 * da, b + 2 * db);
                g.rcoef[q][slot++] = -c * wt[t];
            } else if (dn >= 0) {
                g.ridx[q][slot] = dn;
                g.rcoef[q][slot++] = -4 * c * wt[t];
                g.ridx[q][slot] = id(a - 2 * da, b - 2 * db);
                g.rcoef[q][slot++] = c * wt[t];
            }
        }
        if (q >= n) g.qw[q] = std::min(1.0, 0.5 * touching);
        for (int k = 0; k < 4; ++k)
            if (g.ridx[q][k] < 0) g.rcoef[q][k] = 0.0;
    }
}

inline SectionGrid finish_grid(SectionKind kind, double h, int n2, int n3, const std::vector<char>& inside,
                               double x2, double x3) {
    SectionGrid g;
    g.kind = kind;
    g.h = h;
    g.n2 = n2;
    g.n3 = n3;
    g.index.assign(static_cast<std::size_t>(n2) * n3, -1);
    for (int a = 0; a < n2; ++a)
        for (int b = 0; b < n3; ++b)
            if (inside[static_cast<std::size_t>(a) * n3 + b]) {
                if (a == 0 || b == 0 || a == n2 - 1 || b == n3 - 1)
                    throw Error(ErrorKind::ConfigError, "section mask touches the grid border");
                g.index[static_cast<std::size_t>(a) * n3 + b] = static_cast<int>(g.i2.size());
                g.i2.push_back(a);
                g.i3.push_back(b);
            }
    const int n = g.size();
    if (n < 25) throw Error(ErrorKind::ConfigError, "section has fewer than 25 interior nodes");

    // connectivity
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::queue<int> q;
    q.push(0);
    seen[0] = 1;
    int reached = 1;
    auto id = [&](int a, int b) { return g.index[static_cast<std::size_t>(a) * n3 + b]; };
    while (!q.empty()) {
        const int k = q.front();
        q.pop();
        const int a = g.i2[k], b = g.i3[k];
        for (auto [da, db] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
            const int j = id(a + da, b + db);
            if (j >= 0 && !seen[j]) {
                seen[j] = 1;
                ++reached;
                q.push(j);
            }
        }
    }
    if (reached != n) throw Error(ErrorKind::ConfigError, "section mask is not connected");

    for (auto& v : g.nb) v.resize(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        const int a = g.i2[k], b = g.i3[k];
        g.nb[0][k] = id(a + 1, b);
        g.nb[1][k] = id(a - 1, b);
        g.nb[2][k] = id(a, b + 1);
        g.nb[3][k] = id(a, b - 1);
    }

    // centre at the node centroid, then shift by the requested offset
    double c2 = 0, c3 = 0;
    for (int k = 0; k < n; ++k) {
        c2 += g.i2[k];
        c3 += g.i3[k];
    }
    c2 /= n;
    c3 /= n;
    g.x2 = -c2 * h + x2;
    g.x3 = -c3 * h + x3;
    g.xi2.resize(n);
    g.xi3.resize(n);
    for (int k = 0; k < n; ++k) {
        g.xi2[k] = g.x2 + g.i2[k] * h;
        g.xi3[k] = g.x3 + g.i3[k] * h;
    }

    const int lo2 = *std::min_element(g.i2.begin(), g.i2.end()), hi2 = *std::max_element(g.i2.begin(), g.i2.end());
    const int lo3 = *std::min_element(g.i3.begin(), g.i3.end()), hi3 = *std::max_element(g.i3.begin(), g.i3.end());
    g.r2 = hi2 - lo2 + 1;
    g.r3 = hi3 - lo3 + 1;
    g.rectangular = (g.r2 * g.r3 == n);
    build_rotation_stencil(g);
    return g;
}

} // namespace detail

// square of given side with `intervals` cells per side; offset moves the centroid
inline SectionGrid make_square(double side, int intervals, double off2 = 0.0, double off3 = 0.0) {
    if (!(side > 0) || intervals < 6) throw Error(ErrorKind::ConfigError, "square needs side > 0 and >= 6 intervals");
    const int n = intervals + 1;
    std::vector<char> in(static_cast<std::size_t>(n) * n, 0);
    for (int a = 1; a < n - 1; ++a)
        for (int b = 1; b < n - 1; ++b) in[static_cast<std::size_t>(a) * n + b] = 1;
    return detail::finish_grid(SectionKind::square, side / intervals, n, n, in, off2, off3);
}

// staircase disk: nodes of the box [-R,R]^2 strictly inside the circle
inline SectionGrid make_disk(double radius, int intervals, double off2 = 0.0, double off3 = 0.0) {
    if (!(radius > 0) || intervals < 8) throw Error(ErrorKind::ConfigError, "disk needs radius > 0 and >= 8 intervals");
    const int n = intervals + 1;
    const double h = 2.0 * radius / intervals;
    std::vector<char> in(static_cast<std::size_t>(n) * n, 0);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
            const double x = -radius + a * h, y = -radius + b * h;
            in[static_cast<std::size_t>(a) * n + b] = (x * x + y * y < radius * radius * (1.0 - 1e-12)) ? 1 : 0;
        }
    return detail::finish_grid(SectionKind::disk, h, n, n, in, off2, off3);
}

// text mask: first line "ny nz h", then ny rows of nz entries 0/1 (spaces optional)
inline SectionGrid load_mask(const std::string& path, double off2 = 0.0, double off3 = 0.0) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open mask file " + path);
    int ny = 0, nz = 0;
    double h = 0;
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::ConfigError, "empty mask file " + path);
    {
        std::istringstream hs(line);
        if (!(hs >> ny >> nz >> h) || ny < 1 || nz < 1 || !(h > 0))
            throw Error(ErrorKind::ConfigError, "bad mask header in " + path);
    }
    const int n2 = ny + 2, n3 = nz + 2;
    std::vector<char> cells(static_cast<std::size_t>(n2) * n3, 0);
    for (int a = 0; a < ny; ++a) {
        if (!std::getline(in, line)) throw Error(ErrorKind::ConfigError, "mask file ends early: " + path);
        int b = 0;
        for (char c : line) {
            if (c == '0' || c == '1') {
                if (b >= nz) throw Error(ErrorKind::ConfigError, "mask row too long at row " + std::to_string(a));
                cells[static_cast<std::size_t>(a + 1) * n3 + (b + 1)] = c == '1';
                ++b;
            } else if (!std::isspace(static_cast<unsigned char>(c))) {
                throw Error(ErrorKind::ConfigError, "bad character in mask row " + std::to_string(a));
            }
        }
        if (b != nz) throw Error(ErrorKind::ConfigError, "mask row " + std::to_string(a) + " has wrong length");
    }
    return detail::finish_grid(SectionKind::mask_file, h, n2, n3, cells, off2, off3);
}

// ---- stencil primitives on interior fields (zero extension outside) ----

// central difference along xi2 (t = 0) or xi3 (t = 1)
template <typename In, typename Out>
void central(const SectionGrid& g, int t, const In& u, Out&& out) {
    const auto& up = g.nb[2 * t];
    const auto& dn = g.nb[2 * t + 1];
    const double c = 0.5 / g.h;
    for (int k = 0; k < g.size(); ++k) {
        const double a = up[k] >= 0 ? u[up[k]] : 0.0;
        const double b = dn[k] >= 0 ? u[dn[k]] : 0.0;
        out[k] = c * (a - b);
    }
}

// R u = xi3 d2 u - xi2 d3 u on the quadrature points (size quad_size())
template <typename In, typename Out>
void apply_R(const SectionGrid& g, const In& u, Out&& out) {
    for (int q = 0; q < g.quad_size(); ++q) {
        const auto& ix = g.ridx[q];
        const auto& cf = g.rcoef[q];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k)
            if (ix[k] >= 0) acc += cf[k] * u[ix[k]];
        out[q] = acc;
    }
}

// out += R^T v, v on the quadrature points
template <typename In, typename Out>
void add_RT(const SectionGrid& g, const In& v, Out&& out) {
    for (int q = 0; q < g.quad_size(); ++q) {
        const auto& ix = g.ridx[q];
        const auto& cf = g.rcoef[q];
        for (int k = 0; k < 4; ++k)
            if (ix[k] >= 0) out[ix[k]] += cf[k] * v[q];
    }
}

// weighted quadrature of a product of two fields living on the R points
inline double quad_dot(const SectionGrid& g, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    double acc = 0.0;
    for (int q = 0; q < g.quad_size(); ++q) acc += g.qw[q] * a[q] * b[q];
    return g.h * g.h * acc;
}

// 5-point Dirichlet Laplacian (positive definite) on interior nodes
inline Eigen::SparseMatrix<double> laplacian(const SectionGrid& g) {
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(g.size()) * 5);
    const double c = 1.0 / (g.h * g.h);
    for (int k = 0; k < g.size(); ++k) {
        t.emplace_back(k, k, 4.0 * c);
        for (int d = 0; d < 4; ++d)
            if (g.nb[d][k] >= 0) t.emplace_back(k, g.nb[d][k], -c);
    }
    Eigen::SparseMatrix<double> L(g.size(), g.size());
    L.setFromTriplets(t.begin(), t.end());
    return L;
}

struct SectionMode {
    int n = 0;
    double lambda = 0.0;
    Eigen::VectorXd phi; // sum phi^2 h^2 = 1
    double C = 0.0;      // sum (R phi)^2 h^2
    double m2 = 0.0, m3 = 0.0;
    double residual = 0.0;
};

struct SectionSpectrum {
    SectionGrid grid;
    std::vector<SectionMode> modes;
    std::vector<double> gaps; // lambda_{n+1} - lambda_n

    const SectionMode& mode(int n) const {
        if (n < 1 || n > static_cast<int>(modes.size()))
            throw Error(ErrorKind::ConfigError, "section mode " + std::to_string(n) + " not computed");
        return modes[static_cast<std::size_t>(n - 1)];
    }
};

inline double section_dot(const SectionGrid& g, const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    return g.h * g.h * a.dot(b);
}

// C_n and the field R phi_n
inline std::pair<double, Eigen::VectorXd> rotational_coefficient(const SectionSpectrum& sp, int n) {
    const auto& m = sp.mode(n);
    Eigen::VectorXd r(sp.grid.quad_size());
    apply_R(sp.grid, m.phi, r);
    return {quad_dot(sp.grid, r, r), r};
}

inline SectionSpectrum solve_section(const SectionGrid& g, int count, double tol_rel = 1e-11) {
    if (count < 1) throw Error(ErrorKind::ConfigError, "section count must be >= 1");
    const int n = g.size();
    if (count > n / 4) throw Error(ErrorKind::ConfigError, "too many section modes for this grid");
    const Eigen::SparseMatrix<double> L = laplacian(g);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> chol(L);
    if (chol.info() != Eigen::Success) throw Error(ErrorKind::SolverFail, "section factorization failed");

    // start: box sine products in ascending box eigenvalue order
    const int p = std::min(n, count + 4);
    const int lo2 = *std::min_element(g.i2.begin(), g.i2.end()) - 1;
    const int lo3 = *std::min_element(g.i3.begin(), g.i3.end()) - 1;
    const int L2 = *std::max_element(g.i2.begin(), g.i2.end()) + 1 - lo2;
    const int L3 = *std::max_element(g.i3.begin(), g.i3.end()) + 1 - lo3;
    std::vector<std::array<int, 2>> ab;
    for (int a = 1; a <= p + 1; ++a)
        for (int b = 1; b <= p + 1; ++b) ab.push_back({a, b});
    std::stable_sort(ab.begin(), ab.end(), [&](const auto& x, const auto& y) {
        const double ex = double(x[0] * x[0]) / (L2 * L2) + double(x[1] * x[1]) / (L3 * L3);
        const double ey = double(y[0] * y[0]) / (L2 * L2) + double(y[1] * y[1]) / (L3 * L3);
        return ex < ey;
    });
    Eigen::MatrixXd X(n, p);
    for (int j = 0; j < p; ++j)
        for (int k = 0; k < n; ++k)
            X(k, j) = std::sin(std::numbers::pi * ab[j][0] * (g.i2[k] - lo2) / L2) *
                      std::sin(std::numbers::pi * ab[j][1] * (g.i3[k] - lo3) / L3);

    LobpcgOptions opt;
    opt.tol_abs = 0.0;
    opt.tol_rel = tol_rel;
    opt.max_iter = 400;
    auto A = [&](const Eigen::MatrixXd& V) { return Eigen::MatrixXd(L * V); };
    auto T = [&](const Eigen::MatrixXd& V) { return Eigen::MatrixXd(chol.solve(V)); };
    LobpcgResult r = lobpcg(A, nullptr, T, X, std::min(p, count + 1), opt);

    SectionSpectrum sp;
    sp.grid = g;
    const int keep = std::min<int>(count + 1, static_cast<int>(r.values.size()));
    for (int j = 0; j < keep; ++j) {
        SectionMode m;
        m.n = j + 1;
        m.lambda = r.values[j];
        m.residual = r.residuals[j];
        Eigen::VectorXd v = r.vectors.col(j);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v[imax] < 0) v = -v;
        m.phi = v / (g.h * v.norm());
        sp.modes.push_back(std::move(m));
    }
    for (auto& m : sp.modes) {
        Eigen::VectorXd rp(g.quad_size());
        apply_R(g, m.phi, rp);
        m.C = quad_dot(g, rp, rp);
        m.m2 = section_dot(g, g.xi2.cwiseProduct(m.phi), m.phi);
        m.m3 = section_dot(g, g.xi3.cwiseProduct(m.phi), m.phi);
    }
    for (std::size_t j = 0; j + 1 < sp.modes.size(); ++j)
        sp.gaps.push_back(sp.modes[j + 1].lambda - sp.modes[j].lambda);
    // the extra mode only serves the gap above the last requested one
    if (static_cast<int>(sp.modes.size()) > count) sp.modes.resize(static_cast<std::size_t>(count));
    return sp;
}

// refuses n when lambda_n is numerically multiple
inline void assert_simple(const SectionSpectrum& sp, int n, double gap_tol = 1e-6) {
    const auto& m = sp.mode(n);
    if (n > static_cast<int>(sp.gaps.size()))
        throw Error(ErrorKind::ConfigError, "need lambda_{n+1} to test simplicity of mode " + std::to_string(n));
    double gap = sp.gaps[static_cast<std::size_t>(n - 1)];
    if (n > 1) gap = std::min(gap, sp.gaps[static_cast<std::size_t>(n - 2)]);
    if (!(gap > gap_tol * m.lambda))
        throw Error(ErrorKind::MultipleEigenvalue, "section eigenvalue " + std::to_string(n) + " = " +
                                                       std::to_string(m.lambda) + " has gap " + std::to_string(gap));
}

// (L0 - lambda_n)^{-1} on the orthogonal complement of phi_n, via a bordered factorization
class SectionResolvent {
public:
    SectionResolvent(const SectionSpectrum& sp, int n) : grid_(sp.grid), lambda_(sp.mode(n).lambda) {
        const int N = grid_.size();
        phi_ = sp.mode(n).phi * grid_.h; // Euclidean unit vector
        const Eigen::SparseMatrix<double> L = laplacian(grid_);
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(L.nonZeros() + 2 * N));
        for (int c = 0; c < L.outerSize(); ++c)
            for (Eigen::SparseMatrix<double>::InnerIterator it(L, c); it; ++it)
                t.emplace_back(it.row(), it.col(), it.value() - (it.row() == it.col() ? lambda_ : 0.0));
        for (int k = 0; k < N; ++k) {
            t.emplace_back(k, N, phi_[k]);
            t.emplace_back(N, k, phi_[k]);
        }
        K_.resize(N + 1, N + 1);
        K_.setFromTriplets(t.begin(), t.end());
        K_.makeCompressed();
        lu_.analyzePattern(K_);
        lu_.factorize(K_);
        if (lu_.info() != Eigen::Success) throw Error(ErrorKind::SolverFail, "bordered section factorization failed");
    }

    // relative weight of phi_n in the columns of rhs (columns are sections);
    // scale, when given, is the size of the terms rhs was summed from
    double defect(const Eigen::MatrixXd& rhs, double scale = 0.0) const {
        scale = std::max(scale, rhs.colwise().norm().maxCoeff());
        if (scale == 0) return 0.0;
        return (phi_.transpose() * rhs).cwiseAbs().maxCoeff() / scale;
    }

    // throws when rhs has a phi_n component above tol
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs, double tol = 1e-8, double* defect_out = nullptr,
                          double scale = 0.0) const {
        const double d = defect(rhs, scale);
        if (defect_out) *defect_out = d;
        if (d > tol)
            throw Error(ErrorKind::SolvabilityViolation, "section right-hand side has phi_n weight " + std::to_string(d));
        const int N = grid_.size();
        Eigen::MatrixXd b = Eigen::MatrixXd::Zero(N + 1, rhs.cols());
        b.topRows(N) = rhs - phi_ * (phi_.transpose() * rhs);
        Eigen::MatrixXd x = lu_.solve(b);
        const Eigen::MatrixXd r = b - K_ * x;
        x += lu_.solve(r);
        Eigen::MatrixXd u = x.topRows(N);
        u -= phi_ * (phi_.transpose() * u);
        return u;
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs, double tol = 1e-8) const {
        return solve(Eigen::MatrixXd(rhs), tol).col(0);
    }

    double lambda() const { return lambda_; }

private:
    SectionGrid grid_;
    double lambda_;
    Eigen::VectorXd phi_;
    Eigen::SparseMatrix<double> K_;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
};

} // namespace thinrod
