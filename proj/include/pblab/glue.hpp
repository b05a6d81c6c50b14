#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "pblab/bundle.hpp"

namespace pblab {

struct BaseGluing {
    std::string source_chart, target_chart;
    std::vector<Cell> Y;                  // cells of the source chart
    RatAbsExpr f;                         // target coordinate, in the source variable
    std::optional<RatAbsExpr> f_inverse;  // source coordinate, in the target variable
};

struct BundleGluing {
    BaseGluing base;
    std::vector<std::pair<Cell, ExprMatrix>> lift;  // one entry per cell of Y

    const ExprMatrix& lift_on(const Cell& c) const {
        for (const auto& [cell, m] : lift)
            if (cell.contains(c)) return m;
        throw Error(ErrorKind::LiftDomainMismatch, "no lift over " + c.str());
    }
};

// One cell of Y after re-celling, together with the single target cell it maps onto.
struct GluePiece {
    Cell source, target;
    RatAbsExpr f;                         // restricted to source
    std::optional<RatAbsExpr> f_inverse;  // restricted to target
};

struct Resolution {
    Chart source, target;
    std::vector<GluePiece> pieces;

    const GluePiece* piece_from(const Cell& c) const {
        for (const auto& p : pieces)
            if (p.source.contains(c)) return &p;
        return nullptr;
    }
    const GluePiece* piece_onto(const Cell& c) const {
        for (const auto& p : pieces)
            if (p.target.contains(c)) return &p;
        return nullptr;
    }
};

namespace detail {

inline UniPoly unipoly_or_throw(const AbsPolyExpr& e, const Var& x, const std::string& what) {
    auto p = to_unipoly(e, x);
    if (!p) throw Error(ErrorKind::MalformedGluing, what + " is not a rational function of " + x);
    return *p;
}

// cells tile `whole` exactly (sorted, alternating, no gaps)
inline bool tiles(const std::vector<Cell>& cells, const Cell& whole) {
    std::vector<Cell> in;
    for (const auto& c : cells)
        if (whole.contains(c)) in.push_back(c);
    std::sort(in.begin(), in.end());
    if (whole.point) return in.size() == 1;
    if (in.empty() || in.front().point || !(in.front().lo == whole.lo) || in.back().point || !(in.back().hi == whole.hi))
        return false;
    for (size_t i = 0; i + 1 < in.size(); ++i) {
        const Cell &a = in[i], &b = in[i + 1];
        if (a.point == b.point) return false;
        if (!a.point && !(a.hi == b.lo)) return false;
        if (a.point && !(a.lo == b.lo)) return false;
    }
    return true;
}

}  // namespace detail

// Image of a cell under a rational map that is monotone there (or constant, if allowed).
inline Cell image_of(const RatAbsExpr& f, const Cell& c, const Var& x, const std::string& target_chart,
                     bool allow_constant = false) {
    RatAbsExpr g = restrict_to(f, c, x);
    if (c.point) return Cell::at(target_chart, eval_at(g, std::map<Var, Rational>{}));
    if (!is_smooth_in(g, c.context(x), {x}))
        throw Error(ErrorKind::MalformedGluing, "map " + f.str() + " keeps abs(" + x + ") on " + c.str());
    UniPoly num = detail::unipoly_or_throw(g.num(), x, f.str());
    UniPoly den = detail::unipoly_or_throw(g.den(), x, f.str());
    if (count_roots_open(den, c.lo, c.hi) > 0) throw Error(ErrorKind::MalformedGluing, f.str() + " has a pole inside " + c.str());
    UniPoly slope = num.derivative() * den - num * den.derivative();
    if (slope.is_zero()) {
        if (!allow_constant) throw Error(ErrorKind::MalformedGluing, f.str() + " is constant on " + c.str());
        return Cell::at(target_chart, eval_at(g, std::map<Var, Rational>{{x, c.sample()}}));
    }
    if (count_roots_open(slope, c.lo, c.hi) > 0)
        throw Error(ErrorKind::MalformedGluing, f.str() + " is not monotone on " + c.str());
    Bound a = limit_of(num, den, c.lo, +1), b = limit_of(num, den, c.hi, -1);
    return a < b ? Cell::interval(target_chart, a, b) : Cell::interval(target_chart, b, a);
}

inline Resolution resolve(const Chart& X1, const Chart& X2, const BaseGluing& G) {
    if (X1.id == X2.id) throw Error(ErrorKind::MalformedGluing, "both factors use chart " + X1.id);
    if (G.source_chart != X1.id || G.target_chart != X2.id)
        throw Error(ErrorKind::MalformedGluing, "gluing is declared from " + G.source_chart + " to " + G.target_chart);
    for (size_t i = 0; i < G.Y.size(); ++i) {
        if (G.Y[i].chart != X1.id) throw Error(ErrorKind::MalformedGluing, "Y cell " + G.Y[i].str() + " is not in " + X1.id);
        for (size_t j = i + 1; j < G.Y.size(); ++j)
            if (G.Y[i].overlaps(G.Y[j])) throw Error(ErrorKind::MalformedGluing, "Y cells overlap");
    }
    const Var &x1 = X1.var, &x2 = X2.var;
    Resolution R{X1, X2, {}};

    auto cuts_of = [](const std::vector<Cell>& cells) {
        std::set<Rational> cuts;
        for (const auto& c : cells) {
            if (c.lo.is_finite()) cuts.insert(c.lo.value);
            if (c.hi.is_finite()) cuts.insert(c.hi.value);
        }
        return cuts;
    };
    R.source.cells = refine(X1.cells, cuts_of(G.Y));
    for (const auto& y : G.Y)
        if (!detail::tiles(R.source.cells, y)) throw Error(ErrorKind::MalformedGluing, "Y cell " + y.str() + " is outside the base");

    auto y_cells = [&]() {
        std::vector<Cell> out;
        for (const auto& c : R.source.cells)
            for (const auto& y : G.Y)
                if (y.contains(c)) out.push_back(c);
        return out;
    };

    std::vector<Cell> images;
    for (const auto& h : y_cells()) images.push_back(image_of(G.f, h, x1, X2.id));
    R.target.cells = refine(X2.cells, cuts_of(images));
    for (const auto& I : images)
        if (!detail::tiles(R.target.cells, I)) throw Error(ErrorKind::MalformedGluing, "f maps Y outside the target base");

    // split Y so that every piece lands on exactly one target cell
    std::set<Rational> splits;
    for (const auto& I : images) {
        if (I.point) continue;
        for (const auto& t : R.target.cells) {
            if (!t.point || !I.contains(t)) continue;
            if (!G.f_inverse) throw Error(ErrorKind::NotInvertible, "re-celling Y at " + t.str() + " needs f_inverse");
            splits.insert(eval_at(restrict_to(*G.f_inverse, t, x2), std::map<Var, Rational>{}));
        }
    }
    R.source.cells = refine(R.source.cells, splits);

    for (const auto& h : y_cells()) {
        Cell I = image_of(G.f, h, x1, X2.id);
        auto it = std::find(R.target.cells.begin(), R.target.cells.end(), I);
        if (it == R.target.cells.end()) throw Error(ErrorKind::MalformedGluing, "image of " + h.str() + " is not a single cell");
        GluePiece p{h, I, restrict_to(G.f, h, x1), std::nullopt};
        if (G.f_inverse) p.f_inverse = restrict_to(*G.f_inverse, I, x2);
        R.pieces.push_back(std::move(p));
    }
    for (size_t i = 0; i < R.pieces.size(); ++i)
        for (size_t j = i + 1; j < R.pieces.size(); ++j)
            if (R.pieces[i].target == R.pieces[j].target) throw Error(ErrorKind::MalformedGluing, "f is not injective on Y");

    if (G.f_inverse)
        for (const auto& p : R.pieces) {
            bool ok;
            if (p.source.point) {
                ok = eval_at(*p.f_inverse, std::map<Var, Rational>{}) == p.source.value();
            } else {
                RatAbsExpr there = substitute(p.f, {{x1, *p.f_inverse}}, p.target.context(x2));
                RatAbsExpr back = substitute(*p.f_inverse, {{x2, p.f}}, p.source.context(x1));
                ok = normalize(there, p.target.context(x2)) == RatAbsExpr::variable(x2) &&
                     normalize(back, p.source.context(x1)) == RatAbsExpr::variable(x1);
            }
            if (!ok) throw Error(ErrorKind::MalformedGluing, "f_inverse does not invert f on " + p.source.str());
        }
    return R;
}

enum class Region { I1, I2 };

inline const char* to_string(Region r) { return r == Region::I1 ? "i1" : "i2"; }

struct GluedPoint {
    Region region;
    Cell cell;
    Rational coord;
};

struct GluedSpace {
    BaseGluing gluing;
    Resolution res;

    std::vector<Cell> live_cells() const {
        std::vector<Cell> out;
        for (const auto& c : res.source.cells)
            if (!res.piece_from(c)) out.push_back(c);
        out.insert(out.end(), res.target.cells.begin(), res.target.cells.end());
        return out;
    }
    Region region(const Cell& live) const { return live.chart == res.source.id ? Region::I1 : Region::I2; }

    // Representative of a point of X1 or X2 in the glued space.
    GluedPoint locate(const std::string& chart, const Rational& x) const {
        if (chart == res.source.id) {
            const Cell* c = res.source.locate(x);
            if (!c) throw Error(ErrorKind::PointOutsideBase, x.get_str() + " is not in " + chart);
            if (const GluePiece* p = res.piece_from(*c)) {
                Rational y = eval_at(p->f, std::map<Var, Rational>{{res.source.var, x}});
                return {Region::I2, *res.target.locate(y), y};
            }
            return {Region::I1, *c, x};
        }
        if (chart != res.target.id) throw Error(ErrorKind::PointOutsideBase, "no chart " + chart);
        const Cell* c = res.target.locate(x);
        if (!c) throw Error(ErrorKind::PointOutsideBase, x.get_str() + " is not in " + chart);
        return {Region::I2, *c, x};
    }
};

inline GluedSpace glue_spaces(const Chart& X1, const Chart& X2, const BaseGluing& G) { return {G, resolve(X1, X2, G)}; }

namespace detail {

inline Cell rename_cell(Cell c, const std::string& from, const std::string& to) {
    if (c.chart == from) c.chart = to;
    return c;
}

inline PseudoBundle rename_chart(const PseudoBundle& B, const std::string& from, const std::string& to) {
    std::vector<Chart> charts = B.charts();
    for (auto& ch : charts) {
        if (ch.id == from) ch.id = to;
        for (auto& c : ch.cells) c = rename_cell(c, from, to);
    }
    std::vector<TotalGenerator> gens = B.generators();
    for (auto& g : gens) {
        if (g.chart == from) g.chart = to;
        if (g.support)
            for (auto& c : *g.support) c = rename_cell(c, from, to);
    }
    std::vector<Identification> ids = B.identifications();
    for (auto& id : ids) {
        id.source = rename_cell(id.source, from, to);
        id.target = rename_cell(id.target, from, to);
    }
    return PseudoBundle(B.name(), std::move(charts), std::move(gens), std::move(ids));
}

inline BaseGluing rename_gluing(BaseGluing G, const std::string& from, const std::string& to) {
    if (G.source_chart == from) G.source_chart = to;
    for (auto& y : G.Y) y = rename_cell(y, from, to);
    return G;
}

inline BundleGluing rename_gluing(BundleGluing G, const std::string& from, const std::string& to) {
    G.base = rename_gluing(std::move(G.base), from, to);
    for (auto& [c, m] : G.lift) c = rename_cell(c, from, to);
    return G;
}

inline std::string fresh_chart(const std::string& id, const PseudoBundle& other) {
    for (int i = 1;; ++i) {
        std::string c = id + std::to_string(i);
        if (!other.has_chart(c)) return c;
    }
}

// Factors of a gluing with distinct chart ids: a self-gluing renames the source copy.
struct Prepared {
    PseudoBundle B1, B2;
    BundleGluing G;
    std::string renamed_from, renamed_to;

    SubBundleSpec spec1(SubBundleSpec W) const {
        if (renamed_to.empty()) return W;
        for (auto& [c, vs] : W.spans) c = rename_cell(c, renamed_from, renamed_to);
        return W;
    }
};

inline Prepared prepare(const PseudoBundle& B1, const PseudoBundle& B2, const BundleGluing& G) {
    const Chart& c1 = B1.only_chart();
    B2.only_chart();
    if (!B1.identifications().empty() || !B2.identifications().empty())
        throw Error(ErrorKind::BaseMismatch, "gluing factors must be unglued bundles");
    if (!B2.has_chart(c1.id)) return {B1, B2, G, "", ""};
    std::string to = fresh_chart(c1.id, B2);
    return {rename_chart(B1, c1.id, to), B2, rename_gluing(G, c1.id, to), c1.id, to};
}

}  // namespace detail

struct GluedBundle {
    PseudoBundle bundle;
    PseudoBundle B1, B2;  // factors as glued (the source may carry a renamed chart)
    BundleGluing gluing;
    Resolution res;

    Region region(const Cell& live) const { return live.chart == res.source.id ? Region::I1 : Region::I2; }
    GluedSpace space() const { return {gluing.base, res}; }
};

inline void check_lift_domain(const BundleGluing& G, size_t n1, size_t n2) {
    for (const auto& y : G.base.Y) {
        int n = 0;
        for (const auto& [c, m] : G.lift)
            if (c == y) ++n;
        if (n != 1) throw Error(ErrorKind::LiftDomainMismatch, "lift must be given exactly once over " + y.str());
    }
    for (const auto& [c, m] : G.lift) {
        if (std::find(G.base.Y.begin(), G.base.Y.end(), c) == G.base.Y.end())
            throw Error(ErrorKind::LiftDomainMismatch, "lift over " + c.str() + " which is not a cell of Y");
        if (m.rows() != n2 || m.cols() != n1)
            throw Error(ErrorKind::LiftDomainMismatch, "lift over " + c.str() + " is " + std::to_string(m.rows()) + "x" +
                                                           std::to_string(m.cols()) + ", expected " + std::to_string(n2) + "x" +
                                                           std::to_string(n1));
    }
}

// Transports target-side data defined in the source variable over a piece into the target variable.
inline RatAbsExpr to_target(const RatAbsExpr& e, const GluePiece& p, const Var& x1, const Var& x2) {
    if (p.source.point) return restrict_to(e, p.source, x1);
    if (!p.f_inverse) throw Error(ErrorKind::NotInvertible, "transport over " + p.source.str() + " needs f_inverse");
    return substitute(restrict_to(e, p.source, x1), {{x1, *p.f_inverse}}, p.target.context(x2));
}

// Pulls target-side data back to the source variable.
inline RatAbsExpr to_source(const RatAbsExpr& e, const GluePiece& p, const Var& x1, const Var& x2) {
    if (p.source.point) return restrict_to(e, p.target, x2);
    return substitute(restrict_to(e, p.target, x2), {{x2, p.f}}, p.source.context(x1));
}

inline GluedBundle glue_bundles(const PseudoBundle& B1_in, const PseudoBundle& B2_in, const BundleGluing& G_in) {
    detail::Prepared P = detail::prepare(B1_in, B2_in, G_in);
    const Chart &c1 = P.B1.only_chart(), &c2 = P.B2.only_chart();
    check_lift_domain(P.G, c1.fibre_dim, c2.fibre_dim);
    Resolution R = resolve(c1, c2, P.G.base);
    R.source.fibre_dim = c1.fibre_dim;
    R.target.fibre_dim = c2.fibre_dim;
    const Var &x1 = c1.var, &x2 = c2.var;

    std::vector<Identification> ids;
    for (const auto& p : R.pieces) {
        if (!p.source.point && !p.f_inverse) throw Error(ErrorKind::NotInvertible, "gluing bundles needs f_inverse");
        ids.push_back({p.source, p.target, p.f, p.f_inverse.value_or(RatAbsExpr(p.source.value())),
                       restrict_to(P.G.lift_on(p.source), p.source, x1)});
    }

    std::vector<TotalGenerator> gens = P.B1.generators();
    gens.insert(gens.end(), P.B2.generators().begin(), P.B2.generators().end());
    // B1's generators carried through the lift onto the target chart
    for (const auto& g : P.B1.generators()) {
        GeneratorPlot q = rename_apart({g.fibre_vars, g.components}, {x1, x2});
        std::vector<std::pair<std::vector<RatAbsExpr>, std::vector<Cell>>> groups;
        for (size_t k = 0; k < R.pieces.size(); ++k) {
            const GluePiece& p = R.pieces[k];
            if (!g.defined_on(p.source)) continue;
            auto lifted = (ids[k].lift * ExprMatrix::column(restrict_to(q.components, p.source, x1))).col(0);
            for (auto& e : lifted) e = to_target(e, p, x1, x2);
            auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& gr) { return gr.first == lifted; });
            if (it == groups.end()) groups.push_back({lifted, {p.target}});
            else it->second.push_back(p.target);
        }
        for (auto& [comps, cells] : groups)
            gens.push_back({c2.id, x2, q.domain_vars, comps, cells, g.label + "~"});
    }
    std::string name = P.B1.name() + "~" + P.B2.name();
    PseudoBundle glued(name, {R.source, R.target}, std::move(gens), std::move(ids));
    return {std::move(glued), P.B1, P.B2, P.G, std::move(R)};
}

// ---- maps and sections ----

struct PiecewiseExpr {
    std::vector<std::pair<Cell, RatAbsExpr>> pieces;

    static PiecewiseExpr uniform(const std::string& chart, RatAbsExpr e) { return {{{Cell::whole(chart), std::move(e)}}}; }
    const RatAbsExpr& at(const Cell& c) const {
        for (const auto& [cell, e] : pieces)
            if (cell.contains(c)) return e;
        throw Error(ErrorKind::PointOutsideBase, "map undefined over " + c.str());
    }
};

struct PiecewiseSection {
    std::vector<std::pair<Cell, std::vector<RatAbsExpr>>> pieces;

    static PiecewiseSection uniform(const std::string& chart, std::vector<RatAbsExpr> v) {
        return {{{Cell::whole(chart), std::move(v)}}};
    }
    const std::vector<RatAbsExpr>& at(const Cell& c) const {
        for (const auto& [cell, v] : pieces)
            if (cell.contains(c)) return v;
        throw Error(ErrorKind::PointOutsideBase, "section undefined over " + c.str());
    }
};

namespace detail {

inline PiecewiseExpr rename_chart(PiecewiseExpr e, const std::string& from, const std::string& to) {
    if (!to.empty())
        for (auto& [c, v] : e.pieces) c = rename_cell(c, from, to);
    return e;
}
inline PiecewiseSection rename_chart(PiecewiseSection s, const std::string& from, const std::string& to) {
    if (!to.empty())
        for (auto& [c, v] : s.pieces) c = rename_cell(c, from, to);
    return s;
}

}  // namespace detail

// phi1(y) = phi2(f(y)) on every piece of Y.
inline bool check_f_compatible(const PiecewiseExpr& phi1, const PiecewiseExpr& phi2, const Resolution& R) {
    const Var &x1 = R.source.var, &x2 = R.target.var;
    for (const auto& p : R.pieces) {
        RatAbsExpr lhs = restrict_to(phi1.at(p.source), p.source, x1);
        RatAbsExpr rhs = to_source(phi2.at(p.target), p, x1, x2);
        if (!(lhs == rhs)) return false;
    }
    return true;
}

// g(psi1(y)) = psi2(f(y)) where g is the gluing H of the ranges.
inline bool check_fg_compatible(const PiecewiseExpr& psi1, const PiecewiseExpr& psi2, const Resolution& R,
                                const Resolution& H) {
    const Var &x1 = R.source.var, &x2 = R.target.var, &z1 = H.source.var;
    for (const auto& p : R.pieces) {
        RatAbsExpr v1 = restrict_to(psi1.at(p.source), p.source, x1);
        Cell img = image_of(psi1.at(p.source), p.source, x1, H.source.id, true);
        const GluePiece* h = H.piece_from(img);
        if (!h) return false;
        RatAbsExpr lhs = p.source.point ? at_point(h->f, z1, eval_at(v1, std::map<Var, Rational>{}))
                                        : substitute(h->f, {{z1, v1}}, p.source.context(x1));
        RatAbsExpr rhs = to_source(psi2.at(p.target), p, x1, x2);
        if (!(normalize(lhs, p.source.context(x1)) == rhs)) return false;
    }
    return true;
}

// phi1 on i1 cells, phi2 on i2 cells.
inline PiecewiseExpr glue_maps(const PiecewiseExpr& phi1, const PiecewiseExpr& phi2, const GluedSpace& X) {
    if (!check_f_compatible(phi1, phi2, X.res)) throw Error(ErrorKind::IncompatibleMaps, "maps disagree on Y");
    PiecewiseExpr out;
    for (const auto& c : X.live_cells()) {
        const Var& x = X.region(c) == Region::I1 ? X.res.source.var : X.res.target.var;
        out.pieces.push_back({c, restrict_to((X.region(c) == Region::I1 ? phi1 : phi2).at(c), c, x)});
    }
    return out;
}

inline Rational evaluate(const PiecewiseExpr& m, const GluedSpace& X, const std::string& chart, const Rational& x) {
    GluedPoint p = X.locate(chart, x);
    const Var& v = p.region == Region::I1 ? X.res.source.var : X.res.target.var;
    return eval_at(m.at(p.cell), std::map<Var, Rational>{{v, p.coord}});
}

// lift(y) s1(y) = s2(f(y)) on every piece.
inline bool check_sections_compatible(const PiecewiseSection& s1, const PiecewiseSection& s2, const GluedBundle& GB) {
    const Var &x1 = GB.res.source.var, &x2 = GB.res.target.var;
    for (const auto& p : GB.res.pieces) {
        auto v1 = restrict_to(s1.at(p.source), p.source, x1);
        auto lhs = (restrict_to(GB.gluing.lift_on(p.source), p.source, x1) * ExprMatrix::column(v1)).col(0);
        const auto& v2 = s2.at(p.target);
        if (v2.size() != lhs.size()) return false;
        for (size_t i = 0; i < lhs.size(); ++i)
            if (!(normalize(lhs[i], p.source.context(x1)) == to_source(v2[i], p, x1, x2))) return false;
    }
    return true;
}

// Sections on the factors use the factors' own chart ids; a renamed source chart is followed.
inline PiecewiseSection glue_sections(const PiecewiseSection& s1_in, const PiecewiseSection& s2, const GluedBundle& GB,
                                      const std::string& original_source_chart = {}) {
    PiecewiseSection s1 = original_source_chart.empty() || original_source_chart == GB.res.source.id
                              ? s1_in
                              : detail::rename_chart(s1_in, original_source_chart, GB.res.source.id);
    if (!check_sections_compatible(s1, s2, GB)) throw Error(ErrorKind::IncompatibleMaps, "sections disagree on Y");
    PiecewiseSection out;
    for (const auto& c : GB.bundle.live_cells()) {
        bool first = GB.region(c) == Region::I1;
        const Var& x = first ? GB.res.source.var : GB.res.target.var;
        out.pieces.push_back({c, restrict_to((first ? s1 : s2).at(c), c, x)});
    }
    return out;
}

inline PiecewiseSection scale(const PiecewiseExpr& h, const PiecewiseSection& s) {
    PiecewiseSection out;
    for (const auto& [c, v] : s.pieces) {
        std::vector<RatAbsExpr> w;
        for (const auto& e : v) w.push_back(h.at(c) * e);
        out.pieces.push_back({c, w});
    }
    return out;
}

// Cellwise equality over the given cells (each section restricted to each cell).
inline bool sections_equal(const PiecewiseSection& a, const PiecewiseSection& b, const std::vector<Cell>& cells,
                           const std::map<std::string, Var>& vars) {
    for (const auto& c : cells) {
        const Var& x = vars.at(c.chart);
        if (restrict_to(a.at(c), c, x) != restrict_to(b.at(c), c, x)) return false;
    }
    return true;
}

// ---- switch map ----

struct ChartPoint {
    std::string chart;
    Rational x;
    friend bool operator==(const ChartPoint&, const ChartPoint&) = default;
};

// X1 u_f X2 -> X2 u_{f^-1} X1 on representatives; `forward` false is the inverse direction.
class SwitchMap {
public:
    SwitchMap(Resolution res, bool forward = true) : res_(std::move(res)), forward_(forward) {
        for (const auto& p : res_.pieces)
            if (!p.source.point && !p.f_inverse) throw Error(ErrorKind::NotInvertible, "switch map needs f_inverse");
    }

    SwitchMap inverse() const { return SwitchMap(res_, !forward_); }

    // Canonical representative in the presentation this map starts from.
    ChartPoint canonical(const ChartPoint& p) const {
        if (forward_ && p.chart == res_.source.id)
            if (const GluePiece* g = piece_from(p.x)) return {res_.target.id, eval_f(*g, p.x)};
        if (!forward_ && p.chart == res_.target.id)
            if (const GluePiece* g = piece_onto(p.x)) return {res_.source.id, eval_finv(*g, p.x)};
        return p;
    }

    ChartPoint operator()(const ChartPoint& in) const {
        ChartPoint p = canonical(in);
        if (forward_ && p.chart == res_.target.id)
            if (const GluePiece* g = piece_onto(p.x)) return {res_.source.id, eval_finv(*g, p.x)};
        if (!forward_ && p.chart == res_.source.id)
            if (const GluePiece* g = piece_from(p.x)) return {res_.target.id, eval_f(*g, p.x)};
        return p;
    }

    // Region tag of a representative in the starting presentation: the first factor is i1.
    Region region(const ChartPoint& in) const {
        ChartPoint p = canonical(in);
        const std::string& first = forward_ ? res_.source.id : res_.target.id;
        return p.chart == first ? Region::I1 : Region::I2;
    }
    Region region_after(const ChartPoint& in) const { return inverse().region((*this)(in)); }

private:
    const GluePiece* piece_from(const Rational& x) const {
        for (const auto& p : res_.pieces)
            if (p.source.contains(x)) return &p;
        return nullptr;
    }
    const GluePiece* piece_onto(const Rational& y) const {
        for (const auto& p : res_.pieces)
            if (p.target.contains(y)) return &p;
        return nullptr;
    }
    Rational eval_f(const GluePiece& p, const Rational& x) const {
        return eval_at(p.f, std::map<Var, Rational>{{res_.source.var, x}});
    }
    Rational eval_finv(const GluePiece& p, const Rational& y) const {
        if (p.source.point) return p.source.value();
        return eval_at(*p.f_inverse, std::map<Var, Rational>{{res_.target.var, y}});
    }

    Resolution res_;
    bool forward_;
};

inline SwitchMap switch_map(const GluedSpace& X) {
    if (!X.gluing.f_inverse) throw Error(ErrorKind::NotInvertible, "switch map needs f_inverse");
    return SwitchMap(X.res);
}

// ---- dual gluing and the commutativity checks ----

inline BaseGluing switched(const Resolution& R, const BaseGluing& G) {
    if (!G.f_inverse) throw Error(ErrorKind::NotInvertible, "f has no declared inverse");
    BaseGluing out{G.target_chart, G.source_chart, {}, *G.f_inverse, G.f};
    for (const auto& p : R.pieces) out.Y.push_back(p.target);
    return out;
}

// Gluing of the duals along f^-1 with lift L(f^-1(y))^T.
inline BundleGluing dual_gluing(const Chart& X1, const Chart& X2, const BundleGluing& G) {
    Resolution R = resolve(X1, X2, G.base);
    BundleGluing out{switched(R, G.base), {}};
    for (const auto& p : R.pieces) {
        ExprMatrix L = restrict_to(G.lift_on(p.source), p.source, X1.var).transpose();
        out.lift.push_back({p.target, L.map([&](const RatAbsExpr& e) { return to_target(e, p, X1.var, X2.var); })});
    }
    return out;
}

inline ExprMatrix functional_rows(const std::vector<Functional>& fs, size_t dim) {
    std::vector<std::vector<RatAbsExpr>> rows;
    for (const auto& f : fs) rows.push_back(f.coeffs);
    return ExprMatrix::from_rows(rows, dim);
}

struct DualNecessaryCell {
    Cell cell;
    size_t dual1 = 0, dual2 = 0;
    bool iso = false;
};

struct DualNecessaryReport {
    bool holds = true;
    std::vector<DualNecessaryCell> cells;
};

// Per piece: equal dual dimensions and the dual lift maps the target dual onto the source dual.
inline DualNecessaryReport check_dual_necessary(const PseudoBundle& B1_in, const PseudoBundle& B2_in, const BundleGluing& G_in) {
    detail::Prepared P = detail::prepare(B1_in, B2_in, G_in);
    const Chart &c1 = P.B1.only_chart(), &c2 = P.B2.only_chart();
    check_lift_domain(P.G, c1.fibre_dim, c2.fibre_dim);
    if (!P.G.base.f_inverse) throw Error(ErrorKind::NotInvertible, "dual gluing needs f_inverse");
    Resolution R = resolve(c1, c2, P.G.base);
    DualNecessaryReport rep;
    for (const auto& p : R.pieces) {
        auto D1 = dual_basis(P.B1.fibre_on(p.source));
        auto D2 = dual_basis(P.B2.fibre_on(p.target));
        DualNecessaryCell cell{p.source, D1.size(), D2.size(), false};
        if (D1.size() == D2.size()) {
            ExprMatrix L = restrict_to(P.G.lift_on(p.source), p.source, c1.var);
            ExprMatrix M2 = functional_rows(D2, c2.fibre_dim).map([&](const RatAbsExpr& e) { return to_source(e, p, c1.var, c2.var); });
            ExprMatrix M = normalize(M2 * L, p.source.context(c1.var));
            auto rows1 = functional_rows(D1, c1.fibre_dim).row_list();
            cell.iso = rank(M) == D1.size() && span_contains(rows1, M.row_list(), c1.fibre_dim);
        }
        rep.holds = rep.holds && cell.iso;
        rep.cells.push_back(cell);
    }
    return rep;
}

enum class Inclusion { Forward, Reverse, Mixed, Fails };

inline const char* to_string(Inclusion k) {
    switch (k) {
    case Inclusion::Forward: return "Forward";
    case Inclusion::Reverse: return "Reverse";
    case Inclusion::Mixed: return "Mixed";
    case Inclusion::Fails: return "Fails";
    }
    return "Fails";
}

struct SubbundleCondition {
    Inclusion overall = Inclusion::Forward;
    std::vector<std::pair<Cell, Inclusion>> cells;
};

namespace detail {

// W over a piece: reduced on the home cell that contains it, then restricted.
inline CellSubspace piece_subspace(const PseudoBundle& B, const SubBundleSpec& W, const Cell& c) {
    const Chart& ch = B.chart(c.chart);
    const Cell* home = ch.containing(c);
    if (!home) throw Error(ErrorKind::PointOutsideBase, c.str() + " is outside " + B.name());
    CellSubspace s = cell_subspace(W.at(*home), ch.fibre_dim, *home, ch.var);
    for (auto& row : s.rows) row = restrict_to(row, c, ch.var);
    return s;
}

inline CellSubspace pulled_back(CellSubspace s, const GluePiece& p, const Var& x1, const Var& x2) {
    for (auto& row : s.rows)
        for (auto& e : row) e = to_source(e, p, x1, x2);
    return s;
}

}  // namespace detail

inline SubbundleCondition check_subbundle_condition(const PseudoBundle& B1_in, const PseudoBundle& B2_in,
                                                    const SubBundleSpec& W1_in, const SubBundleSpec& W2,
                                                    const BundleGluing& G_in) {
    detail::Prepared P = detail::prepare(B1_in, B2_in, G_in);
    SubBundleSpec W1 = P.spec1(W1_in);
    const Chart &c1 = P.B1.only_chart(), &c2 = P.B2.only_chart();
    check_lift_domain(P.G, c1.fibre_dim, c2.fibre_dim);
    Resolution R = resolve(c1, c2, P.G.base);
    SubbundleCondition out;
    bool all_fwd = true, all_rev = true, any_fail = false;
    for (const auto& p : R.pieces) {
        SignContext ctx = p.source.context(c1.var);
        CellSubspace w1 = detail::piece_subspace(P.B1, W1, p.source);
        CellSubspace w2 = detail::pulled_back(detail::piece_subspace(P.B2, W2, p.target), p, c1.var, c2.var);
        ExprMatrix L = restrict_to(P.G.lift_on(p.source), p.source, c1.var);
        std::vector<std::vector<RatAbsExpr>> img;
        for (const auto& r : w1.rows) img.push_back(normalize_row((L * ExprMatrix::column(r)).col(0), ctx));
        bool fwd = span_contains(w2.rows, img, c2.fibre_dim);
        bool rev = span_contains(img, w2.rows, c2.fibre_dim);
        Inclusion k = fwd ? Inclusion::Forward : rev ? Inclusion::Reverse : Inclusion::Fails;
        all_fwd = all_fwd && fwd;
        all_rev = all_rev && rev;
        any_fail = any_fail || (!fwd && !rev);
        out.cells.push_back({p.source, k});
    }
    out.overall = all_fwd ? Inclusion::Forward : all_rev ? Inclusion::Reverse : any_fail ? Inclusion::Fails : Inclusion::Mixed;
    return out;
}

// The lift restricted to W1 -> W2 in W coordinates; exists iff the condition is Forward.
inline BundleGluing induced_subbundle_gluing(const PseudoBundle& B1_in, const PseudoBundle& B2_in, const SubBundleSpec& W1_in,
                                             const SubBundleSpec& W2, const BundleGluing& G_in) {
    if (check_subbundle_condition(B1_in, B2_in, W1_in, W2, G_in).overall != Inclusion::Forward)
        throw Error(ErrorKind::ConditionFails, "lift does not map W1 into W2");
    detail::Prepared P = detail::prepare(B1_in, B2_in, G_in);
    SubBundleSpec W1 = P.spec1(W1_in);
    const Chart &c1 = P.B1.only_chart(), &c2 = P.B2.only_chart();
    Resolution R = resolve(c1, c2, P.G.base);
    BundleGluing out{P.G.base, {}};
    out.base.Y.clear();
    for (const auto& p : R.pieces) {
        SignContext ctx = p.source.context(c1.var);
        CellSubspace w1 = detail::piece_subspace(P.B1, W1, p.source);
        CellSubspace w2 = detail::pulled_back(detail::piece_subspace(P.B2, W2, p.target), p, c1.var, c2.var);
        ExprMatrix L = restrict_to(P.G.lift_on(p.source), p.source, c1.var);
        ExprMatrix m(w2.pivots.size(), w1.pivots.size());
        for (size_t k = 0; k < w1.rows.size(); ++k) {
            auto c = w2.coords((L * ExprMatrix::column(w1.rows[k])).col(0));
            for (size_t i = 0; i < c.size(); ++i) m(i, k) = normalize(c[i], ctx);
        }
        out.base.Y.push_back(p.source);
        out.lift.push_back({p.source, m});
    }
    if (!P.renamed_to.empty()) out = detail::rename_gluing(out, P.renamed_to, P.renamed_from);
    return out;
}

struct CellAgreement {
    Cell cell;
    size_t lhs_dual = 0, rhs_dual = 0;
    bool agree = false;
};

inline std::vector<CellAgreement> compare_fibres(const PseudoBundle& lhs, const PseudoBundle& rhs, bool& all) {
    std::vector<CellAgreement> out;
    all = lhs.live_cells() == rhs.live_cells();
    if (!all) return out;
    for (const auto& c : lhs.live_cells()) {
        const GeneratedVS &a = lhs.fibre(c), &b = rhs.fibre(c);
        CellAgreement ca{c, dual_basis(a).size(), dual_basis(b).size(), fibres_agree(a, b)};
        all = all && ca.agree;
        out.push_back(ca);
    }
    return out;
}

struct QuotientGluing {
    GluedBundle glued;               // quotient, then glue
    PseudoBundle glue_then_quotient;
    bool agree = false;
    std::vector<CellAgreement> cells;
};

inline QuotientGluing quotient_gluing(const PseudoBundle& B1_in, const PseudoBundle& B2_in, const SubBundleSpec& W1_in,
                                      const SubBundleSpec& W2, const BundleGluing& G_in) {
    if (check_subbundle_condition(B1_in, B2_in, W1_in, W2, G_in).overall != Inclusion::Forward)
        throw Error(ErrorKind::ConditionFails, "lift does not map W1 into W2");
    detail::Prepared P = detail::prepare(B1_in, B2_in, G_in);
    SubBundleSpec W1 = P.spec1(W1_in);
    const Chart &c1 = P.B1.only_chart(), &c2 = P.B2.only_chart();
    Resolution R = resolve(c1, c2, P.G.base);

    BundleGluing GZ{P.G.base, {}};
    GZ.base.Y.clear();
    for (const auto& p : R.pieces) {
        SignContext ctx = p.source.context(c1.var);
        CellSubspace w1 = detail::piece_subspace(P.B1, W1, p.source);
        CellSubspace w2 = detail::pulled_back(detail::piece_subspace(P.B2, W2, p.target), p, c1.var, c2.var);
        ExprMatrix L = restrict_to(P.G.lift_on(p.source), p.source, c1.var);
        auto fs = w1.free_coords();
        ExprMatrix m(c2.fibre_dim - w2.pivots.size(), fs.size());
        for (size_t k = 0; k < fs.size(); ++k) {
            auto q = w2.quotient(L.col(fs[k]));
            for (size_t i = 0; i < q.size(); ++i) m(i, k) = normalize(q[i], ctx);
        }
        GZ.base.Y.push_back(p.source);
        GZ.lift.push_back({p.source, m});
    }
    QuotientGluing out{glue_bundles(quotient_bundle(P.B1, W1), quotient_bundle(P.B2, W2), GZ), {}, false, {}};

    GluedBundle whole = glue_bundles(P.B1, P.B2, P.G);
    SubBundleSpec W = W1;
    W.spans.insert(W.spans.end(), W2.spans.begin(), W2.spans.end());
    out.glue_then_quotient = quotient_bundle(whole.bundle, W);
    out.cells = compare_fibres(out.glued.bundle, out.glue_then_quotient, out.agree);
    return out;
}

struct CommutativityReport {
    bool agree = false;
    std::vector<CellAgreement> cells;
    std::vector<std::pair<Cell, ExprMatrix>> lifts;  // lifts of the glue-of-products side
    bool lifts_identity = false;
    PseudoBundle lhs, rhs;                          // product of gluings, gluing of products
};

namespace detail {

inline bool same_base_gluing(const BaseGluing& a, const BaseGluing& b) {
    if (a.source_chart != b.source_chart || a.target_chart != b.target_chart || a.Y != b.Y || !(a.f == b.f)) return false;
    if (a.f_inverse.has_value() != b.f_inverse.has_value()) return false;
    return !a.f_inverse || *a.f_inverse == *b.f_inverse;
}

template <class BundleOp, class LiftOp>
CommutativityReport commutativity(const PseudoBundle& B1, const PseudoBundle& B1p, const PseudoBundle& B2,
                                  const PseudoBundle& B2p, const BundleGluing& G, const BundleGluing& Gp, BundleOp op,
                                  LiftOp lift_op) {
    if (!same_base_gluing(G.base, Gp.base)) throw Error(ErrorKind::BaseMismatch, "gluings are over different base maps");
    CommutativityReport rep;
    rep.lhs = op(glue_bundles(B1, B2, G).bundle, glue_bundles(B1p, B2p, Gp).bundle);
    BundleGluing H{G.base, {}};
    for (const auto& [c, m] : G.lift) H.lift.push_back({c, lift_op(m, Gp.lift_on(c))});
    rep.rhs = glue_bundles(op(B1, B1p), op(B2, B2p), H).bundle;
    rep.cells = compare_fibres(rep.lhs, rep.rhs, rep.agree);
    rep.lifts_identity = true;
    for (const auto& id : rep.rhs.identifications()) {
        rep.lifts.push_back({id.source, id.lift});
        if (!id.lift.is_square() || !(normalize(id.lift, id.source.context(rep.rhs.chart(id.source.chart).var)) ==
                                      ExprMatrix::identity(id.lift.rows())))
            rep.lifts_identity = false;
    }
    return rep;
}

}  // namespace detail

inline CommutativityReport tensor_glue_commutativity_check(const PseudoBundle& B1, const PseudoBundle& B1p,
                                                           const PseudoBundle& B2, const PseudoBundle& B2p,
                                                           const BundleGluing& G, const BundleGluing& Gp) {
    return detail::commutativity(
        B1, B1p, B2, B2p, G, Gp, [](const PseudoBundle& a, const PseudoBundle& b) { return tensor_bundle(a, b); },
        [](const ExprMatrix& a, const ExprMatrix& b) { return kronecker(a, b); });
}

inline CommutativityReport sum_glue_commutativity_check(const PseudoBundle& B1, const PseudoBundle& B1p,
                                                        const PseudoBundle& B2, const PseudoBundle& B2p,
                                                        const BundleGluing& G, const BundleGluing& Gp) {
    return detail::commutativity(
        B1, B1p, B2, B2p, G, Gp, [](const PseudoBundle& a, const PseudoBundle& b) { return direct_sum_bundle(a, b); },
        [](const ExprMatrix& a, const ExprMatrix& b) { return block_diag(a, b); });
}

}  // namespace pblab
