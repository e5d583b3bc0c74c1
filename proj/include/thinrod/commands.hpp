#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "thinrod/asymptotic.hpp"
#include "thinrod/config.hpp"
#include "thinrod/direct.hpp"
#include "thinrod/report.hpp"

namespace thinrod {

using nlohmann::json;

enum ExitCode { kPass = 0, kChecksFailed = 1, kConfigError = 2, kRuntimeError = 3 };

struct CommandResult {
    std::string name;
    json report = json::object();
    std::string csv;
    std::vector<std::string> failures, warnings;
    std::vector<std::string> written; // files written directly into the output directory

    int exit_code() const { return failures.empty() ? kPass : kChecksFailed; }
};

// frame, section spectrum and expansion contexts shared by every job of a run
class Workspace {
public:
    explicit Workspace(const RunConfig& rc)
        : rc_(rc), frame_(build_frame(rc.curve, rc.s_intervals)),
          spectrum_(solve_section(make_section(rc.section), std::max(rc.max_n(), 2))) {}

    const RunConfig& config() const { return rc_; }
    const FrameField& frame() const { return frame_; }
    const SectionSpectrum& spectrum() const { return spectrum_; }

    const ExpansionSetup& setup(int n) {
        auto it = setups_.find(n);
        if (it == setups_.end()) it = setups_.emplace(n, make_setup(frame_, spectrum_, n, std::max(rc_.max_m(n), 1))).first;
        return it->second;
    }

    const ExpansionState& state(int n, int m) {
        const auto key = std::make_pair(n, m);
        auto it = states_.find(key);
        if (it == states_.end()) {
            const ExpansionSetup& S = setup(n);
            try {
                it = states_.emplace(key, run_recurrence(S, m, rc_.order, rc_.solver.defect_tol)).first;
            } catch (const Error& e) {
                throw Error(e.kind(), std::string(e.what()) + " [n=" + std::to_string(n) + ", m=" + std::to_string(m) +
                                          "]");
            }
        }
        return it->second;
    }

private:
    RunConfig rc_;
    FrameField frame_;
    SectionSpectrum spectrum_;
    std::map<int, ExpansionSetup> setups_;
    std::map<std::pair<int, int>, ExpansionState> states_;
};

namespace detail {

inline json grid_json(const Workspace& ws) {
    const auto& g = ws.spectrum().grid;
    const auto& f = ws.frame();
    const char* kinds[] = {"square", "disk", "mask_file"};
    return {{"s_intervals", f.intervals},
            {"s0", f.s0},
            {"h_s", f.h},
            {"section", {{"kind", kinds[static_cast<int>(g.kind)]},
                         {"h", g.h},
                         {"interior_nodes", g.size()},
                         {"rectangular", g.rectangular}}}};
}

inline double lsq_slope(const std::vector<double>& x, const std::vector<double>& y) {
    double mx = 0, my = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        mx += x[k];
        my += y[k];
    }
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(y.size());
    double num = 0, den = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        num += (x[k] - mx) * (y[k] - my);
        den += (x[k] - mx) * (x[k] - mx);
    }
    return num / den;
}

} // namespace detail

inline CommandResult cmd_expand(Workspace& ws) {
    const RunConfig& rc = ws.config();
    CommandResult r;
    r.name = "expand";
    r.warnings = rc.warnings;
    CsvTable csv({"n", "m", "i", "lambda_i"});
    json sections = json::array(), modes = json::array();

    std::vector<int> ns;
    for (auto [n, m] : rc.modes)
        if (std::find(ns.begin(), ns.end(), n) == ns.end()) ns.push_back(n);
    for (int n : ns) {
        const ExpansionSetup& S = ws.setup(n);
        const auto& sp = ws.spectrum();
        const auto& mode = sp.mode(n);
        json gaps = {{"above", sp.gaps[static_cast<std::size_t>(n - 1)]}};
        if (n > 1) gaps["below"] = sp.gaps[static_cast<std::size_t>(n - 2)];
        json reduced = json::array();
        for (const auto& rm : S.modes) reduced.push_back(rm.lambda);
        sections.push_back({{"n", n},
                            {"lambda_n", mode.lambda},
                            {"C_n", mode.C},
                            {"m2", mode.m2},
                            {"m3", mode.m3},
                            {"gaps", gaps},
                            {"reduced_eigenvalues", reduced}});
    }

    for (auto [n, m] : rc.modes) {
        const ExpansionState& st = ws.state(n, m);
        for (int i = -2; i <= rc.order - 2; ++i)
            csv.row({std::to_string(n), std::to_string(m), std::to_string(i), fmt17(st.lambda_at(i))});
        const std::string tag = "(" + std::to_string(n) + "," + std::to_string(m) + ")";
        if (st.lambda_at(-1) != 0.0) r.failures.push_back("lambda_-1 nonzero for " + tag);
        double sd = 0, rd = 0;
        for (double d : st.section_defects) sd = std::max(sd, d);
        for (double d : st.reduced_defects) rd = std::max(rd, d);
        if (!(st.max_defect() < rc.solver.defect_tol)) r.failures.push_back("solvability defect for " + tag);
        json row = {{"n", n},
                    {"m", m},
                    {"lambda0", st.lambda_at(0)},
                    {"max_section_defect", sd},
                    {"max_reduced_defect", rd}};
        if (rc.order >= 3) {
            const double closed = lambda1_closed(ws.setup(n), m), rec = st.lambda_at(1);
            row["lambda1_closed"] = closed;
            row["lambda1_recurrence"] = rec;
            const double tol = 1e-8 * std::max(std::abs(rec), 1e-4 * std::max(1.0, std::abs(st.lambda_at(0))));
            if (!(std::abs(closed - rec) <= tol)) r.failures.push_back("closed-form lambda_1 disagrees for " + tag);
        }
        modes.push_back(row);
    }
    r.csv = csv.text();
    r.report = {{"command", "expand"}, {"order", rc.order}, {"grid", detail::grid_json(ws)},
                {"sections", sections}, {"modes", modes}};
    return r;
}

struct VerifyRow {
    double eps = 0.0;
    int m = 0;
    PairRow pair;
    bool injective = true;
    double direct_residual = 0.0;
};

// direct solve and comparison for every epsilon; section mode n = 1 only
inline std::vector<VerifyRow> run_verify(Workspace& ws, CommandResult& r) {
    const RunConfig& rc = ws.config();
    std::vector<int> ms;
    for (auto [n, m] : rc.modes) {
        if (n == 1) ms.push_back(m);
        else r.warnings.push_back("mode (" + std::to_string(n) + "," + std::to_string(m) +
                                  ") skipped: the direct comparison pairs section mode n = 1 only");
    }
    std::sort(ms.begin(), ms.end());
    if (ms.empty()) throw Error(ErrorKind::ConfigError, "/modes: verify needs at least one mode with n = 1");
    const int M = ms.back();
    const int K = rc.solver.direct_count > 0 ? rc.solver.direct_count : M + 1;
    if (K < M)
        r.warnings.push_back("UnderresolvedWindow: direct_count " + std::to_string(K) + " < M = " +
                             std::to_string(M) + "; higher modes cannot be paired reliably");

    DirectOptions opt;
    opt.tol_abs = rc.solver.direct_tol;
    opt.max_iter = rc.solver.max_iter;
    const ExpansionSetup& S = ws.setup(1);

    std::vector<VerifyRow> rows;
    for (std::size_t e = 0; e < rc.epsilon.size(); ++e) {
        const double eps = rc.epsilon[e];
        const auto op = assemble(ws.frame(), ws.spectrum().grid, eps);
        if (rc.dump_matrix) {
            std::ostringstream name;
            name << "H_eps" << e << ".mtx";
            r.written.push_back(name.str());
            write_matrix_market(to_sparse(op), (std::filesystem::path(rc.out_dir) / name.str()).string());
        }
        const auto sol = solve_direct(op, K, opt, &ws.spectrum());
        std::vector<PartialSum> sums;
        for (int m : ms) sums.push_back(partial_sums(S, ws.state(1, m), eps));
        const auto cmp = compare(op, sol, sums, false);
        const std::string at = "eps=" + fmt17(eps);
        if (!cmp.injective) r.failures.push_back("PairingAmbiguous at " + at);
        for (int j = 0; j < sol.lambda.size(); ++j)
            if (!(sol.residuals[j] < 1e-8))
                r.failures.push_back("direct residual " + fmt17(sol.residuals[j]) + " for pair " +
                                     std::to_string(j + 1) + " at " + at);
        for (std::size_t j = 0; j < cmp.rows.size(); ++j) {
            VerifyRow v;
            v.eps = eps;
            v.m = ms[j];
            v.pair = cmp.rows[j];
            v.pair.m = ms[j];
            v.injective = cmp.injective;
            v.direct_residual = sol.residuals[v.pair.index];
            const std::string tag = "m=" + std::to_string(v.m) + " at " + at;
            if (!v.pair.cert.window_safe)
                r.warnings.push_back("certificate not checked for " + tag + ": lambda + rho beyond the window");
            else if (!v.pair.cert.holds)
                r.failures.push_back("quasimode certificate violated for " + tag);
            rows.push_back(v);
        }
    }
    return rows;
}

inline std::string verify_csv(const std::vector<VerifyRow>& rows) {
    CsvTable csv({"eps", "m", "lambda_direct", "lambda_partial", "abs_gap", "residual_rho", "sin_angle"});
    for (const auto& v : rows)
        csv.row({fmt17(v.eps), std::to_string(v.m), fmt17(v.pair.lambda_direct), fmt17(v.pair.lambda_partial),
                 fmt17(v.pair.abs_gap), fmt17(v.pair.rho), fmt17(v.pair.sin_angle)});
    return csv.text();
}

inline json verify_json(const std::vector<VerifyRow>& rows) {
    json a = json::array();
    for (const auto& v : rows)
        a.push_back({{"eps", v.eps},
                     {"m", v.m},
                     {"direct_index", v.pair.index + 1},
                     {"lambda_direct", v.pair.lambda_direct},
                     {"lambda_partial", v.pair.lambda_partial},
                     {"abs_gap", v.pair.abs_gap},
                     {"neighbour_gap", v.pair.neighbour_gap},
                     {"residual_rho", v.pair.rho},
                     {"sin_angle", v.pair.sin_angle},
                     {"spectrum_distance", v.pair.cert.distance},
                     {"window_safe", v.pair.cert.window_safe},
                     {"certificate_holds", v.pair.cert.holds},
                     {"direct_residual", v.direct_residual},
                     {"injective", v.injective}});
    return a;
}

inline CommandResult cmd_verify(Workspace& ws) {
    CommandResult r;
    r.name = "verify";
    r.warnings = ws.config().warnings;
    const auto rows = run_verify(ws, r);
    r.csv = verify_csv(rows);
    r.report = {{"command", "verify"}, {"order", ws.config().order}, {"grid", detail::grid_json(ws)},
                {"rows", verify_json(rows)}};
    return r;
}

inline CommandResult cmd_sweep(Workspace& ws) {
    const RunConfig& rc = ws.config();
    if (rc.epsilon.size() < 2) throw Error(ErrorKind::ConfigError, "/epsilon: sweep needs at least two values");
    CommandResult r;
    r.name = "sweep";
    r.warnings = rc.warnings;
    const auto rows = run_verify(ws, r);
    r.csv = verify_csv(rows);

    const double expected = rc.order - 1;
    json slopes = json::array();
    std::vector<int> ms;
    for (const auto& v : rows)
        if (std::find(ms.begin(), ms.end(), v.m) == ms.end()) ms.push_back(v.m);
    for (int m : ms) {
        std::vector<double> le, lg, lr, sa;
        double gmax = 0, rmax = 0, lam = 0;
        for (const auto& v : rows)
            if (v.m == m) {
                le.push_back(std::log(v.eps));
                lg.push_back(std::log(v.pair.abs_gap));
                lr.push_back(std::log(v.pair.rho));
                sa.push_back(v.pair.sin_angle);
                gmax = std::max(gmax, v.pair.abs_gap);
                rmax = std::max(rmax, v.pair.rho);
                lam = std::max(lam, v.pair.lambda_direct);
            }
        json s = {{"m", m}, {"expected", expected}};
        // at rounding level the expansion is exact and no rate exists
        const bool gap_na = gmax <= 1e-11 * lam, rho_na = rmax <= 1e-11 * lam;
        const std::string tag = "m=" + std::to_string(m);
        if (gap_na) s["gap_slope"] = "n/a";
        else {
            const double g = detail::lsq_slope(le, lg);
            s["gap_slope"] = g;
            if (!(g >= expected - 0.5)) r.failures.push_back("eigenvalue gap slope " + fmt17(g) + " below " +
                                                             fmt17(expected - 0.5) + " for " + tag);
        }
        if (rho_na) s["rho_slope"] = "n/a";
        else {
            const double g = detail::lsq_slope(le, lr);
            s["rho_slope"] = g;
            if (!(g >= expected - 0.5)) r.failures.push_back("residual slope " + fmt17(g) + " below " +
                                                             fmt17(expected - 0.5) + " for " + tag);
        }
        // sin angle should fall as eps falls
        std::vector<std::pair<double, double>> by(le.size());
        for (std::size_t k = 0; k < le.size(); ++k) by[k] = {le[k], sa[k]};
        std::sort(by.begin(), by.end());
        bool mono = true;
        for (std::size_t k = 0; k + 1 < by.size(); ++k) mono = mono && by[k].second < by[k + 1].second;
        if (gap_na) s["sin_angle_monotone"] = "n/a";
        else s["sin_angle_monotone"] = mono;
        slopes.push_back(s);
    }
    r.report = {{"command", "sweep"}, {"order", rc.order}, {"grid", detail::grid_json(ws)},
                {"rows", verify_json(rows)}, {"slopes", slopes}};
    return r;
}

// exactness checks, run end to end on small grids
inline CommandResult cmd_selftest() {
    using std::numbers::pi;
    CommandResult r;
    r.name = "selftest";
    json checks = json::array();
    CsvTable csv({"check", "pass", "value"});
    auto check = [&](const std::string& name, const std::function<std::pair<bool, double>()>& f) {
        bool ok = false;
        double value = NAN;
        std::string err;
        try {
            std::tie(ok, value) = f();
        } catch (const std::exception& e) {
            err = e.what();
        }
        json c = {{"check", name}, {"pass", ok}, {"value", value}};
        if (!err.empty()) c["error"] = err;
        checks.push_back(c);
        csv.row({name, ok ? "1" : "0", fmt17(value)});
        if (!ok) r.failures.push_back(name + (err.empty() ? "" : ": " + err));
    };
    auto expect_error = [](ErrorKind k, const std::function<void()>& f) {
        try {
            f();
        } catch (const Error& e) {
            return std::make_pair(e.kind() == k, 0.0);
        }
        return std::make_pair(false, 0.0);
    };

    CurveSpec line;
    line.kind = CurveKind::straight;
    CurveSpec twisted = line;
    twisted.twist.kind = TwistKind::linear;
    twisted.twist.rate = 1.0;
    CurveSpec arc;
    arc.kind = CurveKind::circular_arc;
    arc.radius = 1.0;

    check("straight_frame_zero_curvature", [&] {
        const auto f = build_frame(line, 32);
        const double v = std::max({f.kappa1.cwiseAbs().maxCoeff(), f.kappa2.cwiseAbs().maxCoeff(),
                                   f.kappa3.cwiseAbs().maxCoeff()});
        return std::make_pair(v == 0.0, v);
    });
    check("straight_frenet_undefined", [&] {
        CurveSpec c = line;
        c.frame = FrameKind::frenet;
        return expect_error(ErrorKind::FrenetUndefined, [&] { build_frame(c, 32); });
    });
    check("twisted_line_kappa3", [&] {
        const auto f = build_frame(twisted, 128);
        const double v = (f.kappa3.array() - 1.0).abs().maxCoeff();
        return std::make_pair(v < 1e-6, v);
    });
    const auto sq = solve_section(make_square(1.0, 24), 3);
    check("square_lambda1", [&] {
        const double v = std::abs(sq.mode(1).lambda - 2 * pi * pi);
        return std::make_pair(v < 0.05, v);
    });
    check("square_degenerate_pair", [&] {
        const double v = std::abs(sq.mode(2).lambda - sq.mode(3).lambda);
        return std::make_pair(v < 1e-8 * sq.mode(2).lambda, v);
    });
    check("square_n2_multiple", [&] { return expect_error(ErrorKind::MultipleEigenvalue, [&] { assert_simple(sq, 2); }); });
    check("disk_n1_simple", [&] {
        assert_simple(solve_section(make_disk(0.5, 24), 1), 1);
        return std::make_pair(true, 0.0);
    });
    check("section_resolvent_eigenbasis", [&] {
        const SectionResolvent res(sq, 1);
        const Eigen::VectorXd u = res.solve(Eigen::VectorXd(sq.mode(2).phi));
        const Eigen::VectorXd want = sq.mode(2).phi / (sq.mode(2).lambda - sq.mode(1).lambda);
        const double v = (u - want).norm() / want.norm();
        return std::make_pair(v < 1e-8, v);
    });
    check("section_resolvent_rejects_phi", [&] {
        const SectionResolvent res(sq, 1);
        return expect_error(ErrorKind::SolvabilityViolation, [&] { res.solve(Eigen::VectorXd(sq.mode(1).phi)); });
    });
    check("reduced_straight_sine", [&] {
        const auto m = solve_reduced(build_reduced(build_frame(line, 128), 0.1), 2);
        const double v = std::max(std::abs(m[0].lambda - 1.0), std::abs(m[1].lambda - 4.0));
        return std::make_pair(v < 1e-3, v);
    });
    check("reduced_arc_shift", [&] {
        const auto m = solve_reduced(build_reduced(build_frame(arc, 128), 0.0), 1);
        const double v = std::abs(m[0].lambda - 0.75);
        return std::make_pair(v < 1e-3, v);
    });
    check("q_zero_on_twisted_line", [&] {
        const double v = max_abs_q(TensorGrid(build_frame(twisted, 32), make_square(1.0, 12)));
        return std::make_pair(v == 0.0, v);
    });
    check("F1_zero_without_curvature", [&] {
        const TensorGrid g(build_frame(twisted, 24), make_square(1.0, 10));
        const Eigen::VectorXd u = Eigen::VectorXd::LinSpaced(g.size(), -1.0, 2.0);
        const double v = apply_F(g, 1, u).cwiseAbs().maxCoeff();
        return std::make_pair(v == 0.0, v);
    });
    const auto lf = build_frame(line, 48);
    const auto sq16 = solve_section(make_square(1.0, 16), 2);
    const auto S = make_setup(lf, sq16, 1, 2);
    const auto st = run_recurrence(S, 1, 5);
    check("lambda_minus1_zero", [&] { return std::make_pair(st.lambda_at(-1) == 0.0, st.lambda_at(-1)); });
    check("straight_corrections_vanish", [&] {
        double v = 0;
        for (int i = 1; i <= 3; ++i) v = std::max(v, std::abs(st.lambda_at(i)));
        return std::make_pair(v < 1e-8 * st.lambda_at(0), v);
    });
    check("partial_sum_N2", [&] {
        auto s2 = run_recurrence(S, 1, 2);
        const double v = std::abs(partial_sums(S, s2, 0.1).lambda - (S.lambda_n / 0.01 + s2.lambda_at(0)));
        return std::make_pair(v <= 1e-12 * S.lambda_n / 0.01, v);
    });
    const auto op = assemble(lf, sq16.grid, 0.1);
    const auto sol = solve_direct(op, 3, {}, &sq16);
    check("direct_straight_separable", [&] {
        double v = 0;
        const double h = lf.h;
        for (int m = 1; m <= 3; ++m) {
            const double want = sq16.mode(1).lambda / 0.01 + 4 / (h * h) * std::pow(std::sin(m * h / 2), 2);
            v = std::max(v, std::abs(sol.lambda[m - 1] - want) / want);
        }
        return std::make_pair(v < 1e-8, v);
    });
    check("direct_B_orthonormal", [&] {
        const Eigen::MatrixXd G = sol.u.transpose() * op.p.asDiagonal() * sol.u;
        const double v = (G - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff();
        return std::make_pair(v < 1e-8, v);
    });
    check("certificate_exact_pair", [&] {
        const auto c = residual_certificate(op, sol, sol.lambda[0], sol.u.col(0));
        return std::make_pair(c.rho < 1e-8 && c.distance == 0.0, c.rho);
    });
    check("straight_expansion_residual", [&] {
        const auto ps = partial_sums(S, st, 0.1);
        const double v = residual_rho(op, ps.lambda, ps.psi);
        return std::make_pair(v < 1e-8 * ps.lambda, v);
    });
    check("epsilon_admissibility", [&] {
        return expect_error(ErrorKind::ConfigError, [&] {
            parse_config_json(json{{"curve", {{"kind", "circular_arc"}, {"radius", 0.25}}},
                                   {"section", {{"intervals", 12}}},
                                   {"epsilon", 0.9}});
        });
    });
    check("unknown_field", [&] {
        return expect_error(ErrorKind::ConfigError, [&] { parse_config_json(json{{"bogus", 1}}); });
    });

    r.csv = csv.text();
    r.report = {{"command", "selftest"}, {"checks", checks}};
    return r;
}

} // namespace thinrod
