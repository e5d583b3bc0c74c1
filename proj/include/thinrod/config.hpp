#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "thinrod/asymptotic.hpp"
#include "thinrod/errors.hpp"
#include "thinrod/geometry.hpp"
#include "thinrod/section.hpp"

namespace thinrod {

struct SectionSpec {
    SectionKind kind = SectionKind::square;
    double side = 1.0;   // square
    double radius = 0.5; // disk
    int intervals = 96;
    std::string path;    // mask file, resolved against the config directory
    double off2 = 0.0, off3 = 0.0;
};

struct SolverSpec {
    int direct_count = 0; // 0: one more than the largest requested m
    double direct_tol = 1e-9;
    int max_iter = 300;
    double defect_tol = 1e-8;
};

struct RunConfig {
    CurveSpec curve;
    int s_intervals = 256;
    SectionSpec section;
    std::vector<std::pair<int, int>> modes{{1, 1}};
    int order = 4;
    std::vector<double> epsilon{0.1};
    SolverSpec solver;
    std::string out_dir = "out";
    bool dump_matrix = false;
    bool rng_free = true;
    std::vector<std::string> warnings;

    int max_n() const {
        int v = 1;
        for (auto [n, m] : modes) v = std::max(v, n);
        return v;
    }
    int max_m(int n) const {
        int v = 0;
        for (auto [a, m] : modes)
            if (a == n) v = std::max(v, m);
        return v;
    }
};

inline constexpr int kMaxOrder = 6;

inline SectionGrid make_section(const SectionSpec& s) {
    switch (s.kind) {
    case SectionKind::square: return make_square(s.side, s.intervals, s.off2, s.off3);
    case SectionKind::disk: return make_disk(s.radius, s.intervals, s.off2, s.off3);
    case SectionKind::mask_file: return load_mask(s.path, s.off2, s.off3);
    }
    throw Error(ErrorKind::ConfigError, "unknown section kind");
}

namespace detail {

using nlohmann::json;

// walks one JSON object, remembering its path and which keys were read
class Node {
public:
    Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) fail("expected an object");
    }

    [[noreturn]] void fail(const std::string& msg, const std::string& key = "") const {
        throw Error(ErrorKind::ConfigError, at(key) + ": " + msg);
    }
    std::string at(const std::string& key) const { return key.empty() ? (path_.empty() ? "/" : path_) : path_ + "/" + key; }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }
    const json& raw(const std::string& key) {
        seen_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key, double def) {
        if (!has(key)) return def;
        return number_at(raw(key), at(key));
    }
    int integer(const std::string& key, int def) {
        if (!has(key)) return def;
        return integer_at(raw(key), at(key));
    }
    bool boolean(const std::string& key, bool def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_boolean()) fail("expected true or false", key);
        return v.get<bool>();
    }
    std::string string(const std::string& key, const std::string& def) {
        if (!has(key)) return def;
        const json& v = raw(key);
        if (!v.is_string()) fail("expected a string", key);
        return v.get<std::string>();
    }
    Node child(const std::string& key) { return Node(raw(key), at(key)); }

    // unknown keys are errors
    void done() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) fail("unknown field", it.key());
    }

    static double number_at(const json& v, const std::string& path) {
        if (!v.is_number()) throw Error(ErrorKind::ConfigError, path + ": expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) throw Error(ErrorKind::ConfigError, path + ": must be finite");
        return d;
    }
    static int integer_at(const json& v, const std::string& path) {
        if (!v.is_number_integer()) throw Error(ErrorKind::ConfigError, path + ": expected an integer");
        return v.get<int>();
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void parse_curve(Node c, RunConfig& rc) {
    CurveSpec& cs = rc.curve;
    const std::string kind = c.string("kind", "straight");
    if (kind == "straight") cs.kind = CurveKind::straight;
    else if (kind == "circular_arc") cs.kind = CurveKind::circular_arc;
    else if (kind == "helix") cs.kind = CurveKind::helix;
    else if (kind == "sampled") cs.kind = CurveKind::sampled;
    else c.fail("unknown curve kind '" + kind + "'", "kind");

    if (cs.kind == CurveKind::sampled) {
        if (c.has("length")) c.fail("sampled curves take their length from the points", "length");
        if (!c.has("points")) c.fail("sampled curve needs points", "points");
        const auto& pts = c.raw("points");
        if (!pts.is_array() || pts.size() < 4) c.fail("expected an array of at least 4 points", "points");
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const std::string p = c.at("points") + "/" + std::to_string(i);
            if (!pts[i].is_array() || pts[i].size() != 3) throw Error(ErrorKind::ConfigError, p + ": expected [x, y, z]");
            Vec3 v;
            for (int k = 0; k < 3; ++k) v[k] = Node::number_at(pts[i][k], p + "/" + std::to_string(k));
            cs.points.push_back(v);
        }
    } else {
        cs.length = c.number("length", std::numbers::pi);
        if (!(cs.length > 0)) c.fail("must be positive", "length");
    }
    if (cs.kind == CurveKind::circular_arc) {
        cs.radius = c.number("radius", 1.0);
        if (!(cs.radius > 0)) c.fail("must be positive", "radius");
    }
    if (cs.kind == CurveKind::helix) {
        cs.a = c.number("a", 1.0);
        cs.b = c.number("b", 1.0);
        if (!(cs.a > 0)) c.fail("must be positive", "a");
    }

    const std::string frame = c.string("frame", "rotation_minimizing");
    if (frame == "rotation_minimizing") cs.frame = FrameKind::rotation_minimizing;
    else if (frame == "frenet") cs.frame = FrameKind::frenet;
    else c.fail("expected rotation_minimizing or frenet", "frame");

    if (c.has("twist")) {
        Node t = c.child("twist");
        const std::string tk = t.string("kind", "none");
        if (tk == "none") cs.twist.kind = TwistKind::none;
        else if (tk == "linear") {
            cs.twist.kind = TwistKind::linear;
            cs.twist.rate = t.number("rate", 0.0);
        } else if (tk == "tabulated") {
            cs.twist.kind = TwistKind::tabulated;
            if (!t.has("alpha")) t.fail("tabulated twist needs alpha", "alpha");
            const auto& a = t.raw("alpha");
            if (!a.is_array()) t.fail("expected an array", "alpha");
            for (std::size_t i = 0; i < a.size(); ++i)
                cs.twist.alpha.push_back(Node::number_at(a[i], t.at("alpha") + "/" + std::to_string(i)));
        } else {
            t.fail("unknown twist kind '" + tk + "'", "kind");
        }
        t.done();
    }
    c.done();
}

inline void parse_section(Node s, RunConfig& rc, const std::filesystem::path& base) {
    SectionSpec& ss = rc.section;
    const std::string kind = s.string("kind", "square");
    if (kind == "square") {
        ss.kind = SectionKind::square;
        ss.side = s.number("side", 1.0);
        if (!(ss.side > 0)) s.fail("must be positive", "side");
    } else if (kind == "disk") {
        ss.kind = SectionKind::disk;
        ss.radius = s.number("radius", 0.5);
        if (!(ss.radius > 0)) s.fail("must be positive", "radius");
    } else if (kind == "mask_file") {
        ss.kind = SectionKind::mask_file;
        if (!s.has("path")) s.fail("mask section needs a path", "path");
        if (s.has("intervals")) s.fail("mask files fix their own grid", "intervals");
        std::filesystem::path p = s.string("path", "");
        ss.path = (p.is_absolute() ? p : base / p).string();
    } else {
        s.fail("unknown section kind '" + kind + "'", "kind");
    }
    if (ss.kind != SectionKind::mask_file) {
        ss.intervals = s.integer("intervals", 96);
        if (ss.intervals < 6) s.fail("need at least 6", "intervals");
    }
    if (s.has("offset")) {
        const auto& o = s.raw("offset");
        if (!o.is_array() || o.size() != 2) s.fail("expected [d2, d3]", "offset");
        ss.off2 = Node::number_at(o[0], s.at("offset") + "/0");
        ss.off3 = Node::number_at(o[1], s.at("offset") + "/1");
    }
    s.done();
}

} // namespace detail

// strict schema; every error names the JSON path of the offending field
inline RunConfig parse_config_json(const nlohmann::json& j, const std::filesystem::path& base = ".") {
    using detail::Node;
    RunConfig rc;
    Node root(j, "");
    if (root.has("curve")) detail::parse_curve(root.child("curve"), rc);
    if (root.has("grid")) {
        Node g = root.child("grid");
        rc.s_intervals = g.integer("s_intervals", 256);
        if (rc.s_intervals < 16) g.fail("need at least 16", "s_intervals");
        g.done();
    }
    if (root.has("section")) detail::parse_section(root.child("section"), rc, base);

    if (root.has("modes")) {
        const auto& ms = root.raw("modes");
        if (!ms.is_array() || ms.empty()) root.fail("expected a non-empty array", "modes");
        rc.modes.clear();
        for (std::size_t i = 0; i < ms.size(); ++i) {
            Node m(ms[i], "/modes/" + std::to_string(i));
            const int n = m.integer("n", 1), mm = m.integer("m", 1);
            if (n < 1) m.fail("must be >= 1", "n");
            if (mm < 1) m.fail("must be >= 1", "m");
            m.done();
            for (auto [a, b] : rc.modes)
                if (a == n && b == mm) m.fail("duplicate mode");
            rc.modes.emplace_back(n, mm);
        }
    }
    rc.order = root.integer("order", 4);
    if (rc.order < 2) root.fail("must be >= 2", "order");
    if (rc.order > kMaxOrder)
        rc.warnings.push_back("order " + std::to_string(rc.order) + " exceeds " + std::to_string(kMaxOrder) +
                              "; high coefficients are dominated by grid error");

    bool eps_list = false;
    if (root.has("epsilon")) {
        const auto& e = root.raw("epsilon");
        eps_list = e.is_array();
        rc.epsilon.clear();
        if (e.is_array()) {
            if (e.empty()) root.fail("expected at least one value", "epsilon");
            for (std::size_t i = 0; i < e.size(); ++i)
                rc.epsilon.push_back(Node::number_at(e[i], "/epsilon/" + std::to_string(i)));
        } else {
            rc.epsilon.push_back(Node::number_at(e, "/epsilon"));
        }
        for (std::size_t i = 0; i < rc.epsilon.size(); ++i)
            if (!(rc.epsilon[i] > 0))
                throw Error(ErrorKind::ConfigError,
                            (eps_list ? "/epsilon/" + std::to_string(i) : std::string("/epsilon")) + ": must be positive");
    }

    if (root.has("solver")) {
        Node s = root.child("solver");
        rc.solver.direct_count = s.integer("direct_count", 0);
        rc.solver.direct_tol = s.number("direct_tol", 1e-9);
        rc.solver.max_iter = s.integer("max_iter", 300);
        rc.solver.defect_tol = s.number("defect_tol", 1e-8);
        if (rc.solver.direct_count < 0) s.fail("must be >= 0", "direct_count");
        if (!(rc.solver.direct_tol > 0)) s.fail("must be positive", "direct_tol");
        if (rc.solver.max_iter < 1) s.fail("must be >= 1", "max_iter");
        if (!(rc.solver.defect_tol > 0)) s.fail("must be positive", "defect_tol");
        s.done();
    }
    if (root.has("output")) {
        Node o = root.child("output");
        rc.out_dir = o.string("dir", "out");
        rc.dump_matrix = o.boolean("dump_matrix", false);
        o.done();
    }
    rc.rng_free = root.boolean("rng_free", true);
    if (!rc.rng_free) root.fail("only deterministic runs are supported", "rng_free");
    root.done();

    if (rc.curve.twist.kind == TwistKind::tabulated &&
        rc.curve.twist.alpha.size() != static_cast<std::size_t>(rc.s_intervals + 1))
        throw Error(ErrorKind::ConfigError, "/curve/twist/alpha: need one angle per s-node (" +
                                                std::to_string(rc.s_intervals + 1) + ")");

    // admissibility: p_eps > 0.5 on the grid
    FrameField f;
    SectionGrid g;
    try {
        f = build_frame(rc.curve, rc.s_intervals);
        g = make_section(rc.section);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ConfigError) throw;
        throw Error(ErrorKind::ConfigError, std::string("/curve: ") + e.what());
    }
    const double mq = max_abs_q(TensorGrid(f, g));
    for (std::size_t i = 0; i < rc.epsilon.size(); ++i)
        if (mq > 0 && !(rc.epsilon[i] < 0.5 / mq))
            throw Error(ErrorKind::ConfigError, (eps_list ? "/epsilon/" + std::to_string(i) : std::string("/epsilon")) +
                                                    ": epsilon " + std::to_string(rc.epsilon[i]) +
                                                    " not admissible, need epsilon < 0.5/max|q| = " +
                                                    std::to_string(0.5 / mq));
    return rc;
}

inline RunConfig parse_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::ConfigError, path + ": " + e.what());
    }
    return parse_config_json(j, std::filesystem::path(path).parent_path());
}

} // namespace thinrod
