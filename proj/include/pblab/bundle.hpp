#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pblab/diffvs.hpp"
#include "pblab/univariate.hpp"

namespace pblab {

// A cell of a 1-dimensional chart: a point {q} or an open interval (lo, hi).
struct Cell {
    std::string chart;
    bool point = false;
    Bound lo, hi;

    static Cell at(std::string chart, const Rational& q) {
        return {std::move(chart), true, Bound::finite(q), Bound::finite(q)};
    }
    static Cell interval(std::string chart, const Bound& lo, const Bound& hi) {
        if (!(lo < hi)) throw Error(ErrorKind::ShapeMismatch, "empty interval (" + lo.str() + "," + hi.str() + ")");
        return {std::move(chart), false, lo, hi};
    }
    static Cell whole(std::string chart) { return interval(std::move(chart), Bound::neg_inf(), Bound::pos_inf()); }

    const Rational& value() const { return lo.value; }

    bool contains(const Rational& x) const {
        if (point) return x == lo.value;
        Bound b = Bound::finite(x);
        return lo < b && b < hi;
    }
    bool contains(const Cell& c) const {
        if (c.chart != chart) return false;
        if (point) return c.point && c.lo.value == lo.value;
        if (c.point) return contains(c.value());
        return lo <= c.lo && c.hi <= hi;
    }
    bool overlaps(const Cell& c) const {
        if (c.chart != chart) return false;
        if (point) return c.contains(value());
        if (c.point) return contains(c.value());
        return lo < c.hi && c.lo < hi;
    }

    // Midpoint for bounded intervals, one unit inside for half-lines, 1/2 for the line.
    Rational sample() const {
        if (point) return lo.value;
        if (lo.is_finite() && hi.is_finite()) return (lo.value + hi.value) / 2;
        if (hi.is_finite()) return hi.value - 1;
        if (lo.is_finite()) return lo.value + 1;
        return make_rational(1, 2);
    }

    Rational random_point(std::mt19937_64& rng) const {
        if (point) return lo.value;
        std::uniform_int_distribution<long> num(1, 999), mag(1, 40);
        Rational t(num(rng), 1000);
        t.canonicalize();
        if (lo.is_finite() && hi.is_finite()) return lo.value + t * (hi.value - lo.value);
        Rational r = Rational(mag(rng)) * t;
        if (hi.is_finite()) return hi.value - r;
        if (lo.is_finite()) return lo.value + r;
        return sgn(Rational(num(rng) - 500)) < 0 ? Rational(-r) : r;
    }

    Sign sign() const {
        if (point) {
            int s = sgn(lo.value);
            return s > 0 ? Sign::Pos : s < 0 ? Sign::Neg : Sign::Zero;
        }
        if (Bound::finite(0) <= lo) return Sign::Pos;
        if (hi <= Bound::finite(0)) return Sign::Neg;
        return Sign::Any;
    }
    SignContext context(const Var& v) const { return SignContext().set(v, sign()); }

    std::string range_str() const {
        if (point) return "{" + lo.value.get_str() + "}";
        return "(" + lo.str() + "," + hi.str() + ")";
    }
    std::string str() const { return chart + ":" + range_str(); }

    friend bool operator==(const Cell& a, const Cell& b) {
        return a.chart == b.chart && a.point == b.point && a.lo == b.lo && a.hi == b.hi;
    }
    friend bool operator<(const Cell& a, const Cell& b) {
        if (a.chart != b.chart) return a.chart < b.chart;
        if (!(a.lo == b.lo)) return a.lo < b.lo;
        if (a.point != b.point) return a.point;
        return a.hi < b.hi;
    }
};

// Restricts e to a cell: exact substitution on a point, sign normalization on an interval.
inline RatAbsExpr restrict_to(const RatAbsExpr& e, const Cell& c, const Var& x) {
    if (c.point) return at_point(e, x, c.value());
    return normalize(e, c.context(x));
}

inline ExprMatrix restrict_to(const ExprMatrix& m, const Cell& c, const Var& x) {
    return m.map([&](const RatAbsExpr& e) { return restrict_to(e, c, x); });
}

inline std::vector<RatAbsExpr> restrict_to(std::vector<RatAbsExpr> v, const Cell& c, const Var& x) {
    for (auto& e : v) e = restrict_to(e, c, x);
    return v;
}

// Splits intervals at the given points.
inline std::vector<Cell> refine(const std::vector<Cell>& cells, const std::set<Rational>& cuts) {
    std::vector<Cell> out;
    for (const auto& c : cells) {
        if (c.point) {
            out.push_back(c);
            continue;
        }
        Bound lo = c.lo;
        for (const auto& q : cuts) {
            if (!c.contains(q)) continue;
            out.push_back(Cell::interval(c.chart, lo, Bound::finite(q)));
            out.push_back(Cell::at(c.chart, q));
            lo = Bound::finite(q);
        }
        out.push_back(Cell::interval(c.chart, lo, c.hi));
    }
    std::sort(out.begin(), out.end());
    return out;
}

struct Chart {
    std::string id;
    Var var;
    size_t fibre_dim = 0;
    std::vector<Cell> cells;  // sorted, pairwise disjoint; their union is the chart's base

    const Cell* locate(const Rational& x) const {
        for (const auto& c : cells)
            if (c.contains(x)) return &c;
        return nullptr;
    }
    const Cell* containing(const Cell& sub) const {
        for (const auto& c : cells)
            if (c.contains(sub)) return &c;
        return nullptr;
    }
    friend bool operator==(const Chart&, const Chart&) = default;
};

inline std::vector<Cell> standard_cells(const std::string& chart) {
    return {Cell::interval(chart, Bound::neg_inf(), Bound::finite(0)), Cell::at(chart, 0),
            Cell::interval(chart, Bound::finite(0), Bound::pos_inf())};
}

// A home cell that was glued away: its points now live at f(x) in the target cell,
// and its fibre maps into the target fibre by lift(x).
struct Identification {
    Cell source;
    Cell target;
    RatAbsExpr f;          // in the source chart variable
    RatAbsExpr f_inverse;  // in the target chart variable
    ExprMatrix lift;       // target fibre dim x source fibre dim, in the source variable
};

// Split-form generator (x, v...) -> (x, components(x, v...)).
struct TotalGenerator {
    std::string chart;
    Var base_var;
    std::vector<Var> fibre_vars;
    std::vector<RatAbsExpr> components;
    std::optional<std::vector<Cell>> support;  // nullopt: every home cell of the chart
    std::string label;

    bool defined_on(const Cell& c) const {
        if (c.chart != chart) return false;
        if (!support) return true;
        for (const auto& s : *support)
            if (s.contains(c)) return true;
        return false;
    }
    std::string str() const {
        std::string s = "(" + base_var;
        for (const auto& v : fibre_vars) s += ", " + v;
        s += ") -> (" + base_var;
        for (const auto& c : components) s += ", " + c.str();
        return s + ")";
    }
};

inline std::optional<std::vector<Cell>> intersect_support(const std::optional<std::vector<Cell>>& a,
                                                          const std::optional<std::vector<Cell>>& b) {
    if (!a) return b;
    if (!b) return a;
    std::vector<Cell> out;
    for (const auto& x : *a)
        for (const auto& y : *b) {
            if (x.contains(y)) out.push_back(y);
            else if (y.contains(x)) out.push_back(x);
        }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

class PseudoBundle {
public:
    PseudoBundle() = default;
    PseudoBundle(std::string name, std::vector<Chart> charts, std::vector<TotalGenerator> generators,
                 std::vector<Identification> identifications = {})
        : name_(std::move(name)), charts_(std::move(charts)), identifications_(std::move(identifications)) {
        for (auto& ch : charts_) {
            std::sort(ch.cells.begin(), ch.cells.end());
            for (size_t i = 0; i + 1 < ch.cells.size(); ++i)
                if (ch.cells[i].overlaps(ch.cells[i + 1]))
                    throw Error(ErrorKind::ShapeMismatch, "cells " + ch.cells[i].str() + " and " + ch.cells[i + 1].str() + " overlap");
            for (const auto& c : ch.cells)
                if (c.chart != ch.id) throw Error(ErrorKind::ShapeMismatch, "cell " + c.str() + " listed under chart " + ch.id);
        }
        for (auto& g : generators) generators_.push_back(canonical(std::move(g)));
        for (const auto& id : identifications_) {
            const Chart& s = chart(id.source.chart);
            const Chart& t = chart(id.target.chart);
            if (id.lift.rows() != t.fibre_dim || id.lift.cols() != s.fibre_dim)
                throw Error(ErrorKind::LiftDomainMismatch, "lift on " + id.source.str() + " has the wrong shape");
        }
        for (const auto& ch : charts_)
            for (const auto& c : ch.cells)
                if (!identification(c)) fibres_.emplace(c, build_fibre(c));
    }

    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }
    const std::vector<Chart>& charts() const { return charts_; }
    const std::vector<TotalGenerator>& generators() const { return generators_; }
    const std::vector<Identification>& identifications() const { return identifications_; }
    bool subset_diffeology_approximate() const { return approximate_; }
    void mark_approximate() { approximate_ = true; }

    const Chart& chart(const std::string& id) const {
        for (const auto& c : charts_)
            if (c.id == id) return c;
        throw Error(ErrorKind::BaseMismatch, "no chart " + id + " in " + name_);
    }
    bool has_chart(const std::string& id) const {
        return std::any_of(charts_.begin(), charts_.end(), [&](const Chart& c) { return c.id == id; });
    }
    const Chart& only_chart() const {
        if (charts_.size() != 1) throw Error(ErrorKind::BaseMismatch, name_ + " has " + std::to_string(charts_.size()) + " charts");
        return charts_.front();
    }

    const Identification* identification(const Cell& home) const {
        for (const auto& id : identifications_)
            if (id.source.contains(home)) return &id;
        return nullptr;
    }

    // Cells of the resolved base: home cells that were not glued away.
    std::vector<Cell> live_cells() const {
        std::vector<Cell> out;
        for (const auto& [c, v] : fibres_) out.push_back(c);
        return out;
    }
    bool is_live(const Cell& c) const { return fibres_.count(c) > 0; }

    const GeneratedVS& fibre(const Cell& live) const {
        auto it = fibres_.find(live);
        if (it == fibres_.end()) throw Error(ErrorKind::PointOutsideBase, live.str() + " is not a cell of " + name_);
        return it->second;
    }

    // Fibre over any cell contained in a home cell; identified cells are not glued here.
    GeneratedVS fibre_on(const Cell& c) const {
        if (auto it = fibres_.find(c); it != fibres_.end()) return it->second;
        if (!chart(c.chart).containing(c)) throw Error(ErrorKind::PointOutsideBase, c.str() + " is outside " + name_);
        return build_fibre(c);
    }

    std::vector<const TotalGenerator*> generators_on(const Cell& c) const {
        std::vector<const TotalGenerator*> out;
        for (const auto& g : generators_)
            if (g.defined_on(c)) out.push_back(&g);
        return out;
    }

private:
    TotalGenerator canonical(TotalGenerator g) const {
        const Chart& ch = chart(g.chart);
        if (g.components.size() != ch.fibre_dim)
            throw Error(ErrorKind::DimensionMismatch, "generator " + g.str() + " has " + std::to_string(g.components.size()) +
                                                          " fibre components, fibre has dimension " + std::to_string(ch.fibre_dim));
        std::set<Var> taken{ch.var};
        std::map<Var, Var> names;
        if (g.base_var != ch.var) names[g.base_var] = ch.var;
        std::vector<Var> fv;
        for (const auto& v : g.fibre_vars) {
            if (v == g.base_var) throw Error(ErrorKind::ShapeMismatch, "fibre variable repeats the base variable " + v);
            Var w = taken.count(v) ? fresh_var(v, taken) : v;
            taken.insert(w);
            if (w != v) names[v] = w;
            fv.push_back(w);
        }
        g.fibre_vars = fv;
        for (auto& c : g.components) {
            c = rename(c, names);
            for (const auto& v : c.variables())
                if (!taken.count(v)) throw Error(ErrorKind::ShapeMismatch, "variable " + v + " not in the generator domain");
        }
        g.base_var = ch.var;
        return g;
    }

    GeneratedVS build_fibre(const Cell& c) const {
        const Chart& ch = chart(c.chart);
        std::vector<GeneratorPlot> plots;
        for (const auto* g : generators_on(c)) plots.push_back({g->fibre_vars, restrict_to(g->components, c, ch.var)});
        std::vector<Var> params;
        if (!c.point) params.push_back(ch.var);
        return GeneratedVS(ch.fibre_dim, std::move(plots), name_ + "@" + c.str(), params, c.context(ch.var));
    }

    std::string name_;
    std::vector<Chart> charts_;
    std::vector<TotalGenerator> generators_;
    std::vector<Identification> identifications_;
    std::map<Cell, GeneratedVS> fibres_;
    bool approximate_ = false;
};

// One chart over the cells given, no generators: the standard (fine) bundle.
inline PseudoBundle standard_bundle(const std::string& name, const std::string& chart, const Var& var, size_t fibre_dim,
                                    std::vector<Cell> cells = {}) {
    if (cells.empty()) cells = standard_cells(chart);
    return PseudoBundle(name, {Chart{chart, var, fibre_dim, std::move(cells)}}, {});
}

// Fibre over an exact point of a chart; points in glued-away cells are followed to their image.
inline GeneratedVS fibre_space_at(const PseudoBundle& B, const std::string& chart, const Rational& x) {
    const Chart& ch = B.chart(chart);
    const Cell* home = ch.locate(x);
    if (!home) throw Error(ErrorKind::PointOutsideBase, x.get_str() + " is not in chart " + chart + " of " + B.name());
    if (const Identification* id = B.identification(*home)) {
        Rational y = eval_at(id->f, {{ch.var, x}});
        return fibre_space_at(B, id->target.chart, y);
    }
    return B.fibre_on(Cell::at(chart, x));
}

inline GeneratedVS fibre_space_at(const PseudoBundle& B, const Rational& x) {
    return fibre_space_at(B, B.only_chart().id, x);
}

using Profile = std::map<Cell, size_t>;

inline Profile dual_dim_profile(const PseudoBundle& B) {
    Profile out;
    for (const auto& c : B.live_cells()) out[c] = dual_basis(B.fibre(c)).size();
    return out;
}

inline std::string profile_str(const Profile& p) {
    std::string s = "{";
    bool first = true;
    for (const auto& [c, d] : p) {
        if (!first) s += ", ";
        first = false;
        s += c.str() + ": " + std::to_string(d);
    }
    return s + "}";
}

inline void require_same_base(const PseudoBundle& a, const PseudoBundle& b) {
    auto fail = [&](const std::string& why) {
        throw Error(ErrorKind::BaseMismatch, a.name() + " and " + b.name() + ": " + why);
    };
    if (a.charts().size() != b.charts().size()) fail("different charts");
    for (size_t i = 0; i < a.charts().size(); ++i) {
        const Chart &x = a.charts()[i], &y = b.charts()[i];
        if (x.id != y.id || x.var != y.var || x.cells != y.cells) fail("chart " + x.id + " differs");
    }
    if (a.identifications().size() != b.identifications().size()) fail("different gluing");
    for (size_t i = 0; i < a.identifications().size(); ++i) {
        const auto &p = a.identifications()[i], &q = b.identifications()[i];
        if (!(p.source == q.source) || !(p.target == q.target) || !(p.f == q.f)) fail("different gluing on " + p.source.str());
    }
}

inline ExprMatrix block_diag(const ExprMatrix& a, const ExprMatrix& b) {
    ExprMatrix out(a.rows() + b.rows(), a.cols() + b.cols());
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j) out(i, j) = a(i, j);
    for (size_t i = 0; i < b.rows(); ++i)
        for (size_t j = 0; j < b.cols(); ++j) out(a.rows() + i, a.cols() + j) = b(i, j);
    return out;
}

inline PseudoBundle direct_sum_bundle(const PseudoBundle& A, const PseudoBundle& B) {
    require_same_base(A, B);
    std::vector<Chart> charts = A.charts();
    for (size_t i = 0; i < charts.size(); ++i) charts[i].fibre_dim += B.charts()[i].fibre_dim;
    std::vector<TotalGenerator> gens;
    for (const auto& g : A.generators()) {
        TotalGenerator h = g;
        h.components.resize(h.components.size() + B.chart(g.chart).fibre_dim);
        gens.push_back(std::move(h));
    }
    for (const auto& g : B.generators()) {
        TotalGenerator h = g;
        h.components.assign(A.chart(g.chart).fibre_dim, RatAbsExpr());
        h.components.insert(h.components.end(), g.components.begin(), g.components.end());
        gens.push_back(std::move(h));
    }
    std::vector<Identification> ids = A.identifications();
    for (size_t i = 0; i < ids.size(); ++i) ids[i].lift = block_diag(ids[i].lift, B.identifications()[i].lift);
    return PseudoBundle(A.name() + "+" + B.name(), std::move(charts), std::move(gens), std::move(ids));
}

inline PseudoBundle tensor_bundle(const PseudoBundle& A, const PseudoBundle& B) {
    require_same_base(A, B);
    std::vector<Chart> charts = A.charts();
    for (size_t i = 0; i < charts.size(); ++i) charts[i].fibre_dim *= B.charts()[i].fibre_dim;
    std::vector<TotalGenerator> gens;
    for (const auto& p : A.generators()) {
        size_t db = B.chart(p.chart).fibre_dim;
        std::set<Var> taken(p.fibre_vars.begin(), p.fibre_vars.end());
        taken.insert(p.base_var);
        for (const auto& q0 : B.generators()) {
            if (q0.chart != p.chart) continue;
            auto support = intersect_support(p.support, q0.support);
            if (support && support->empty()) continue;
            GeneratorPlot q = rename_apart({q0.fibre_vars, q0.components}, taken);
            TotalGenerator g{p.chart, p.base_var, p.fibre_vars, tensor_components(p.components, q.components), support,
                             p.label + "*" + q0.label};
            g.fibre_vars.insert(g.fibre_vars.end(), q.domain_vars.begin(), q.domain_vars.end());
            gens.push_back(std::move(g));
        }
        for (size_t k = 0; k < db; ++k)
            gens.push_back({p.chart, p.base_var, p.fibre_vars, tensor_components(p.components, basis_vector(k, db)), p.support,
                            p.label + "*e" + std::to_string(k + 1)});
    }
    for (const auto& q : B.generators()) {
        size_t da = A.chart(q.chart).fibre_dim;
        for (size_t k = 0; k < da; ++k)
            gens.push_back({q.chart, q.base_var, q.fibre_vars, tensor_components(basis_vector(k, da), q.components), q.support,
                            "e" + std::to_string(k + 1) + "*" + q.label});
    }
    std::vector<Identification> ids = A.identifications();
    for (size_t i = 0; i < ids.size(); ++i) ids[i].lift = kronecker(ids[i].lift, B.identifications()[i].lift);
    return PseudoBundle(A.name() + "*" + B.name(), std::move(charts), std::move(gens), std::move(ids));
}

// Per-cell dual fibres with a pairing oracle against the total generators.
struct DualBundleView {
    const PseudoBundle* bundle = nullptr;
    std::map<Cell, std::vector<Functional>> bases;

    Profile dims() const {
        Profile out;
        for (const auto& [c, b] : bases) out[c] = b.size();
        return out;
    }

    // phi paired with a generator over a cell; smooth iff phi is a dual element there.
    RatAbsExpr pair(const Cell& c, const Functional& phi, const TotalGenerator& g) const {
        const Chart& ch = bundle->chart(c.chart);
        return normalize(pblab::apply(phi, restrict_to(g.components, c, ch.var)), c.context(ch.var));
    }
    bool pairing_smooth(const Cell& c, const Functional& phi) const {
        const Chart& ch = bundle->chart(c.chart);
        for (const auto* g : bundle->generators_on(c)) {
            std::set<Var> dv(g->fibre_vars.begin(), g->fibre_vars.end());
            if (!c.point) dv.insert(ch.var);
            if (!is_smooth_in(pair(c, phi, *g), c.context(ch.var), dv)) return false;
        }
        return true;
    }
};

inline DualBundleView dual_bundle(const PseudoBundle& B) {
    DualBundleView v{&B, {}};
    for (const auto& c : B.live_cells()) v.bases[c] = dual_basis(B.fibre(c));
    return v;
}

// The dual as a bundle: finite-dimensional duals are standard, so only the rank per chart matters.
inline PseudoBundle dual_as_bundle(const PseudoBundle& B) {
    if (!B.identifications().empty()) throw Error(ErrorKind::BaseMismatch, "dual_as_bundle needs an unglued bundle");
    std::vector<Chart> charts;
    Profile p = dual_dim_profile(B);
    for (const auto& ch : B.charts()) {
        std::optional<size_t> d;
        for (const auto& c : ch.cells) {
            if (d && *d != p.at(c))
                throw Error(ErrorKind::NotLocallyTrivial, "dual dimension of " + B.name() + " changes across chart " + ch.id);
            d = p.at(c);
        }
        Chart dual = ch;
        dual.fibre_dim = d.value_or(0);
        charts.push_back(dual);
    }
    return PseudoBundle(B.name() + "^*", std::move(charts), {});
}

// Spanning vectors of W per cell; a cell of the SubBundleSpec covers every home cell it contains.
struct SubBundleSpec {
    std::vector<std::pair<Cell, std::vector<std::vector<RatAbsExpr>>>> spans;

    const std::vector<std::vector<RatAbsExpr>>& at(const Cell& c) const {
        for (const auto& [cell, vs] : spans)
            if (cell.contains(c)) return vs;
        throw Error(ErrorKind::NotASubspace, "no subspace given over " + c.str());
    }

    static SubBundleSpec uniform(const PseudoBundle& B, const std::vector<std::vector<RatAbsExpr>>& vs) {
        SubBundleSpec s;
        for (const auto& ch : B.charts()) s.spans.push_back({Cell::whole(ch.id), vs});
        return s;
    }
    static SubBundleSpec zero(const PseudoBundle& B) { return uniform(B, {}); }
    static SubBundleSpec full(const PseudoBundle& B) {
        SubBundleSpec s;
        for (const auto& ch : B.charts()) {
            std::vector<std::vector<RatAbsExpr>> vs;
            for (size_t k = 0; k < ch.fibre_dim; ++k) vs.push_back(basis_vector(k, ch.fibre_dim));
            s.spans.push_back({Cell::whole(ch.id), vs});
        }
        return s;
    }
};

// W over one cell in reduced form: pivots[k] is the coordinate that row k owns.
struct CellSubspace {
    std::vector<std::vector<RatAbsExpr>> rows;
    std::vector<size_t> pivots;
    size_t ambient = 0;

    std::vector<size_t> free_coords() const {
        std::vector<size_t> out;
        for (size_t j = 0; j < ambient; ++j)
            if (std::find(pivots.begin(), pivots.end(), j) == pivots.end()) out.push_back(j);
        return out;
    }
    std::vector<RatAbsExpr> coords(const std::vector<RatAbsExpr>& v) const {
        std::vector<RatAbsExpr> out;
        for (size_t p : pivots) out.push_back(v[p]);
        return out;
    }
    // v mod W in the free coordinates.
    std::vector<RatAbsExpr> quotient(const std::vector<RatAbsExpr>& v) const {
        std::vector<RatAbsExpr> out;
        for (size_t j : free_coords()) {
            RatAbsExpr e = v[j];
            for (size_t k = 0; k < pivots.size(); ++k)
                if (!v[pivots[k]].is_zero() && !rows[k][j].is_zero()) e -= v[pivots[k]] * rows[k][j];
            out.push_back(e);
        }
        return out;
    }
    bool contains(const std::vector<RatAbsExpr>& v, const SignContext& ctx) const {
        for (auto& e : quotient(v))
            if (!normalize(e, ctx).is_zero()) return false;
        return true;
    }
};

inline CellSubspace cell_subspace(const std::vector<std::vector<RatAbsExpr>>& spans, size_t ambient, const Cell& c,
                                  const Var& x) {
    std::vector<std::vector<RatAbsExpr>> rows;
    for (const auto& v : spans) {
        if (v.size() != ambient)
            throw Error(ErrorKind::NotASubspace, "spanning vector of length " + std::to_string(v.size()) + " in a fibre of dimension " +
                                                     std::to_string(ambient));
        rows.push_back(restrict_to(v, c, x));
    }
    auto e = rref(ExprMatrix::from_rows(rows, ambient));
    CellSubspace s;
    s.ambient = ambient;
    s.pivots = e.pivots;
    for (size_t k = 0; k < e.pivots.size(); ++k) s.rows.push_back(normalize_row(e.reduced.row(k), c.context(x)));
    return s;
}

// Every key coefficient of a generator lies in W (the generator lands in W for all parameters).
inline bool lands_in(const std::vector<RatAbsExpr>& comps, const std::vector<Var>& fibre_vars, const CellSubspace& W,
                     const SignContext& ctx) {
    GeneratorPlot p{fibre_vars, comps};
    for (const auto& [k, v] : key_coefficients(p, comps.size(), false))
        if (!W.contains(v, ctx)) return false;
    return true;
}

namespace detail {

enum class SubKind { Sub, Quotient };

inline std::vector<Cell> support_cells(const PseudoBundle& B, const TotalGenerator& g) {
    std::vector<Cell> out;
    for (const auto& c : B.chart(g.chart).cells)
        if (g.defined_on(c)) out.push_back(c);
    return out;
}

inline PseudoBundle sub_or_quotient(const PseudoBundle& B, const SubBundleSpec& W, SubKind kind) {
    std::map<Cell, CellSubspace> subs;
    std::vector<Chart> charts;
    for (const auto& ch : B.charts()) {
        std::optional<size_t> r;
        for (const auto& c : ch.cells) {
            CellSubspace s = cell_subspace(W.at(c), ch.fibre_dim, c, ch.var);
            if (r && *r != s.pivots.size())
                throw Error(ErrorKind::DimensionMismatch, "subspace dimension changes across chart " + ch.id);
            r = s.pivots.size();
            subs.emplace(c, std::move(s));
        }
        Chart out = ch;
        size_t rank = r.value_or(0);
        out.fibre_dim = kind == SubKind::Sub ? rank : ch.fibre_dim - rank;
        charts.push_back(out);
    }
    auto transform = [&](const std::vector<RatAbsExpr>& v, const Cell& c) {
        return kind == SubKind::Sub ? subs.at(c).coords(v) : subs.at(c).quotient(v);
    };

    std::vector<TotalGenerator> gens;
    for (const auto& g : B.generators()) {
        const Var& x = B.chart(g.chart).var;
        std::vector<Cell> cells = support_cells(B, g);
        std::vector<std::pair<Cell, std::vector<RatAbsExpr>>> images;
        for (const auto& c : cells) {
            auto comps = restrict_to(g.components, c, x);
            if (kind == SubKind::Sub && !lands_in(comps, g.fibre_vars, subs.at(c), c.context(x))) continue;
            // unrestricted image where possible, so one generator survives across cells
            images.push_back({c, transform(g.components, c)});
        }
        bool uniform = images.size() == cells.size();
        for (size_t i = 1; uniform && i < images.size(); ++i) uniform = images[i].second == images[0].second;
        if (uniform && !images.empty()) {
            TotalGenerator h = g;
            h.components = images[0].second;
            gens.push_back(std::move(h));
            continue;
        }
        for (const auto& [c, comps] : images) {
            TotalGenerator h = g;
            h.components = restrict_to(comps, c, x);
            h.support = std::vector<Cell>{c};
            gens.push_back(std::move(h));
        }
    }

    std::vector<Identification> ids;
    for (const auto& id : B.identifications()) {
        const Chart& s = B.chart(id.source.chart);
        const CellSubspace& Ws = subs.at(id.source);
        CellSubspace Wt = cell_subspace(W.at(id.target), B.chart(id.target.chart).fibre_dim, id.target,
                                        B.chart(id.target.chart).var);
        // W over the target, pulled back to the source variable
        std::map<Var, RatAbsExpr> back{{B.chart(id.target.chart).var, id.f}};
        SignContext sctx = id.source.context(s.var);
        for (auto& row : Wt.rows)
            for (auto& e : row) e = id.source.point ? restrict_to(substitute(e, back), id.source, s.var) : substitute(e, back, sctx);
        Identification out = id;
        if (kind == SubKind::Sub) {
            out.lift = ExprMatrix(Wt.pivots.size(), Ws.pivots.size());
            for (size_t k = 0; k < Ws.rows.size(); ++k) {
                auto image = (id.lift * ExprMatrix::column(Ws.rows[k])).col(0);
                if (!Wt.contains(image, sctx))
                    throw Error(ErrorKind::ConditionFails, "lift does not map W into W over " + id.source.str());
                auto c = Wt.coords(image);
                for (size_t i = 0; i < c.size(); ++i) out.lift(i, k) = normalize(c[i], sctx);
            }
        } else {
            for (const auto& row : Ws.rows) {
                auto image = (id.lift * ExprMatrix::column(row)).col(0);
                if (!Wt.contains(image, sctx))
                    throw Error(ErrorKind::ConditionFails, "lift does not map W into W over " + id.source.str());
            }
            auto fs = Ws.free_coords();
            out.lift = ExprMatrix(Wt.free_coords().size(), fs.size());
            for (size_t k = 0; k < fs.size(); ++k) {
                auto q = Wt.quotient(id.lift.col(fs[k]));
                for (size_t i = 0; i < q.size(); ++i) out.lift(i, k) = normalize(q[i], sctx);
            }
        }
        ids.push_back(std::move(out));
    }
    std::string suffix = kind == SubKind::Sub ? "|W" : "/W";
    PseudoBundle out(B.name() + suffix, std::move(charts), std::move(gens), std::move(ids));
    if (kind == SubKind::Sub) out.mark_approximate();
    return out;
}

}  // namespace detail

// Generators of B that land in W, in W's pivot coordinates; W-standard plots are implicit.
inline PseudoBundle sub_bundle(const PseudoBundle& B, const SubBundleSpec& W) {
    return detail::sub_or_quotient(B, W, detail::SubKind::Sub);
}

// Images of B's generators under v -> v mod W, in the non-pivot coordinates.
inline PseudoBundle quotient_bundle(const PseudoBundle& B, const SubBundleSpec& W) {
    return detail::sub_or_quotient(B, W, detail::SubKind::Quotient);
}

// Same charts, fibre dims, generators (components and supports) and gluing data.
inline bool structurally_equal(const PseudoBundle& a, const PseudoBundle& b) {
    if (a.charts() != b.charts() || a.generators().size() != b.generators().size()) return false;
    for (size_t i = 0; i < a.generators().size(); ++i) {
        const auto &g = a.generators()[i], &h = b.generators()[i];
        if (g.chart != h.chart || g.fibre_vars != h.fibre_vars || g.components != h.components || g.support != h.support)
            return false;
    }
    if (a.identifications().size() != b.identifications().size()) return false;
    for (size_t i = 0; i < a.identifications().size(); ++i) {
        const auto &p = a.identifications()[i], &q = b.identifications()[i];
        if (!(p.source == q.source) || !(p.target == q.target) || !(p.f == q.f) || !(p.lift == q.lift)) return false;
    }
    return true;
}

// Constraint rows, dual dimension and dimension agree: the finite certificate that two fibres coincide.
inline bool fibres_agree(const GeneratedVS& a, const GeneratedVS& b) {
    if (a.dim() != b.dim()) return false;
    ExprMatrix ca = constraint_matrix(a), cb = constraint_matrix(b);
    return same_span(ca.row_list(), cb.row_list(), a.dim()) && dual_basis(a).size() == dual_basis(b).size();
}

}  // namespace pblab
