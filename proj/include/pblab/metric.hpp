#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pblab/glue.hpp"

namespace pblab {

struct MetricPiece {
    Cell cell;
    ExprMatrix matrix;
    std::optional<SosCertificate> sos;
};

struct BundleMetric {
    std::string name;
    std::vector<MetricPiece> pieces;

    const MetricPiece* find(const Cell& c) const {
        for (const auto& p : pieces)
            if (p.cell.contains(c)) return &p;
        return nullptr;
    }
    const MetricPiece& piece_on(const Cell& c) const {
        if (const MetricPiece* p = find(c)) return *p;
        throw Error(ErrorKind::ShapeMismatch, "metric " + name + " is undefined over " + c.str());
    }

    static BundleMetric uniform(std::string name, const std::string& chart, ExprMatrix m,
                                std::optional<SosCertificate> sos = std::nullopt) {
        return {std::move(name), {{Cell::whole(chart), std::move(m), std::move(sos)}}};
    }
};

inline SosCertificate restrict_to(const SosCertificate& cert, const Cell& c, const Var& x) {
    SosCertificate out;
    for (const auto& t : cert) out.push_back({restrict_to(t.coeff, c, x), Functional{restrict_to(t.functional.coeffs, c, x)}});
    return out;
}

namespace detail {

inline void check_shape(const ExprMatrix& m, size_t n, const Cell& c) {
    if (m.rows() != n || m.cols() != n)
        throw Error(ErrorKind::ShapeMismatch, "metric over " + c.str() + " is " + std::to_string(m.rows()) + "x" +
                                                  std::to_string(m.cols()) + ", fibre dimension is " + std::to_string(n));
}

inline BundleMetric rename_chart(BundleMetric g, const std::string& from, const std::string& to) {
    if (!to.empty())
        for (auto& p : g.pieces) p.cell = rename_cell(p.cell, from, to);
    return g;
}

}  // namespace detail

// Metric matrix over a home cell; identified cells see L^T G2(f(x)) L.
inline ExprMatrix metric_on_home(const PseudoBundle& B, const BundleMetric& g, const Cell& home) {
    const Chart& ch = B.chart(home.chart);
    if (const Identification* id = B.identification(home)) {
        const Chart& tc = B.chart(id->target.chart);
        ExprMatrix G2 = metric_on_home(B, g, id->target);
        ExprMatrix L = restrict_to(id->lift, home, ch.var);
        if (home.point) return restrict_to(L.transpose() * G2 * L, home, ch.var);
        SignContext ctx = home.context(ch.var);
        ExprMatrix pulled = substitute(G2, {{tc.var, restrict_to(id->f, home, ch.var)}}, ctx);
        return normalize(L.transpose() * pulled * L, ctx);
    }
    const MetricPiece& p = g.piece_on(home);
    detail::check_shape(p.matrix, ch.fibre_dim, home);
    return restrict_to(p.matrix, home, ch.var);
}

// ---- probes ----

struct Probe {
    std::string label;
    std::vector<Var> fibre_vars;
    std::vector<RatAbsExpr> components;  // in the chart variable
    std::optional<std::vector<Cell>> support;
    bool constant = false;

    bool defined_on(const Cell& c) const {
        if (!support) return true;
        for (const auto& s : *support)
            if (s.contains(c)) return true;
        return false;
    }
};

namespace detail {
inline std::string constant_probe_label(const Chart& ch, size_t k) {
    std::string label = "(" + ch.var;
    for (size_t i = 0; i < ch.fibre_dim; ++i) label += i == k ? ", 1" : ", 0";
    return label + ")";
}
}  // namespace detail

// Generators of the chart plus the constant plots u -> (u, e_k).
inline std::vector<Probe> probes_on(const PseudoBundle& B, const Chart& ch) {
    std::vector<Probe> out;
    for (const auto& g : B.generators())
        if (g.chart == ch.id) out.push_back({g.str(), g.fibre_vars, g.components, g.support, false});
    for (size_t k = 0; k < ch.fibre_dim; ++k)
        out.push_back({detail::constant_probe_label(ch, k), {}, basis_vector(k, ch.fibre_dim), std::nullopt, true});
    return out;
}

namespace detail {

inline Probe apart(const Probe& q, const std::set<Var>& taken) {
    GeneratorPlot r = rename_apart({q.fibre_vars, q.components}, taken);
    Probe out = q;
    out.fibre_vars = r.domain_vars;
    out.components = r.components;
    return out;
}

inline bool has_pole_in(const RatAbsExpr& e, const Cell& c, const Var& x) {
    if (c.point) return false;
    auto den = to_unipoly(e.den(), x);
    return den && count_roots_open(*den, c.lo, c.hi) > 0;
}

}  // namespace detail

struct ProbeWitness {
    std::string p, q, where, reason;
};

// Smoothness of u -> g(u)(P(u, .), Q(u, .)) over one chart; cells are home cells of the chart.
inline std::optional<ProbeWitness> probe_pair_failure(const Chart& ch, const std::map<Cell, ExprMatrix>& G, const Probe& P,
                                                      const Probe& Q0) {
    std::set<Var> taken{ch.var};
    taken.insert(P.fibre_vars.begin(), P.fibre_vars.end());
    Probe Q = detail::apart(Q0, taken);
    std::set<Var> fv(P.fibre_vars.begin(), P.fibre_vars.end());
    fv.insert(Q.fibre_vars.begin(), Q.fibre_vars.end());
    std::set<Var> all = fv;
    all.insert(ch.var);

    std::map<Cell, RatAbsExpr> ev;
    for (const auto& c : ch.cells) {
        if (!P.defined_on(c) || !Q.defined_on(c)) continue;
        SignContext ctx = c.point ? SignContext() : c.context(ch.var);
        RatAbsExpr e;
        try {
            e = normalize(bilinear_eval(G.at(c), restrict_to(P.components, c, ch.var), restrict_to(Q.components, c, ch.var)), ctx);
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::DivisionByZero) throw;
            return ProbeWitness{P.label, Q0.label, c.str(), "undefined"};
        }
        if (!is_smooth_in(e, ctx, c.point ? fv : all)) return ProbeWitness{P.label, Q0.label, c.str(), "non-smooth term in " + e.str()};
        if (detail::has_pole_in(e, c, ch.var)) return ProbeWitness{P.label, Q0.label, c.str(), "pole inside the cell"};
        ev.emplace(c, e);
    }
    // pieces meeting at a point must be one smooth expression
    for (const auto& [q, eq] : ev) {
        if (!q.point) continue;
        const RatAbsExpr* left = nullptr;
        const RatAbsExpr* right = nullptr;
        for (const auto& [c, e] : ev) {
            if (c.point) continue;
            if (c.hi == q.lo) left = &e;
            if (c.lo == q.lo) right = &e;
        }
        for (const RatAbsExpr* side : {left, right}) {
            if (!side) continue;
            std::optional<RatAbsExpr> lim;
            try {
                lim = at_point(*side, ch.var, q.value());
            } catch (const Error& err) {
                if (err.kind() != ErrorKind::DivisionByZero) throw;
            }
            if (!lim || !(*lim == eq))
                return ProbeWitness{P.label, Q0.label, q.str(), "value " + eq.str() + " does not continue " + side->str()};
        }
        if (left && right && !(*left == *right))
            return ProbeWitness{P.label, Q0.label, q.str(), "pieces " + left->str() + " and " + right->str() + " differ"};
    }
    return std::nullopt;
}

// ---- verdicts ----

struct CellRank {
    Cell cell;
    size_t rank = 0, required = 0;
    bool constant = true;  // no rank drop inside the cell
    bool ok() const { return constant && rank == required; }
};

struct MetricVerdict {
    bool symmetric = false;
    std::vector<Cell> asymmetric_cells;
    bool smooth = false;
    std::optional<ProbeWitness> witness;
    size_t probe_pairs = 0;
    PsdResult psd;
    std::string psd_cell;
    std::vector<CellRank> ranks;

    bool rank_ok() const {
        for (const auto& r : ranks)
            if (!r.ok()) return false;
        return true;
    }
    bool pass() const { return symmetric && smooth && psd.accepts() && rank_ok(); }
};

namespace detail {

inline std::vector<std::vector<size_t>> combinations(size_t n, size_t k) {
    std::vector<std::vector<size_t>> out;
    std::vector<size_t> cur;
    auto rec = [&](auto&& self, size_t start) -> void {
        if (cur.size() == k) {
            out.push_back(cur);
            return;
        }
        for (size_t i = start; i < n; ++i) {
            cur.push_back(i);
            self(self, i + 1);
            cur.pop_back();
        }
    };
    rec(rec, 0);
    return out;
}

// True when the r x r minors (r = generic rank) vanish together somewhere inside an interval cell.
inline bool rank_drops_inside(const ExprMatrix& m, size_t r, const Cell& c, const Var& x) {
    if (c.point || r == 0) return false;
    std::optional<UniPoly> g;
    for (const auto& rows : combinations(m.rows(), r))
        for (const auto& cols : combinations(m.cols(), r)) {
            ExprMatrix sub(r, r);
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < r; ++j) sub(i, j) = m(rows[i], cols[j]);
            RatAbsExpr d = determinant(sub);
            if (d.is_zero()) continue;
            auto p = to_unipoly(d.num(), x);
            if (!p) return false;  // depends on more than the base coordinate
            g = g ? gcd(*g, *p) : *p;
        }
    return g && count_roots_open(*g, c.lo, c.hi) > 0;
}

}  // namespace detail

inline std::map<Cell, ExprMatrix> home_metrics(const PseudoBundle& B, const BundleMetric& g, const Chart& ch) {
    std::map<Cell, ExprMatrix> out;
    for (const auto& c : ch.cells) out.emplace(c, metric_on_home(B, g, c));
    return out;
}

inline MetricVerdict is_pseudometric(const PseudoBundle& B, const BundleMetric& g, std::uint64_t seed = 1) {
    MetricVerdict v;
    std::map<std::string, std::map<Cell, ExprMatrix>> homes;
    for (const auto& ch : B.charts()) homes[ch.id] = home_metrics(B, g, ch);

    v.symmetric = true;
    for (const auto& c : B.live_cells())
        if (!is_symmetric(homes[c.chart].at(c))) {
            v.symmetric = false;
            v.asymmetric_cells.push_back(c);
        }

    v.smooth = true;
    for (const auto& ch : B.charts()) {
        auto probes = probes_on(B, ch);
        for (const auto& P : probes) {
            for (const auto& Q : probes) {
                ++v.probe_pairs;
                if (auto w = probe_pair_failure(ch, homes[ch.id], P, Q)) {
                    v.smooth = false;
                    v.witness = w;
                    break;
                }
            }
            if (!v.smooth) break;
        }
        if (!v.smooth) break;
    }

    Profile req = dual_dim_profile(B);
    for (const auto& c : B.live_cells()) {
        const Chart& ch = B.chart(c.chart);
        const ExprMatrix& m = homes[c.chart].at(c);
        size_t r = rank(m);
        v.ranks.push_back({c, r, req.at(c), !detail::rank_drops_inside(m, r, c, ch.var)});
    }

    // PSD: exact where a certificate matches, sampled elsewhere
    std::mt19937_64 rng(seed);
    bool all_exact = true;
    for (const auto& c : B.live_cells()) {
        const Chart& ch = B.chart(c.chart);
        const ExprMatrix& m = homes[c.chart].at(c);
        const MetricPiece& piece = g.piece_on(c);
        SignContext ctx = c.point ? SignContext() : c.context(ch.var);
        if (piece.sos && certificate_matches(restrict_to(*piece.sos, c, ch.var), m, ctx)) continue;
        // constant matrices are decided exactly by their characteristic polynomial
        bool constant = true;
        for (const auto& row : m.row_list())
            for (const auto& e : row) constant = constant && e.constant_value().has_value();
        if (constant) {
            if (is_psd(eval_at(m, std::map<Var, Rational>{}))) continue;
            v.psd.kind = PsdResult::Kind::Fails;
            v.psd.witness = {c.random_point(rng)};
            v.psd_cell = c.str();
            return v;
        }
        all_exact = false;
        int n = c.point ? 1 : 50;
        for (int s = 0; s < n; ++s) {
            Rational x = c.random_point(rng);
            QMatrix q;
            try {
                q = eval_at(m, std::map<Var, Rational>{{ch.var, x}});
            } catch (const Error& err) {
                if (err.kind() != ErrorKind::DivisionByZero) throw;
                continue;
            }
            ++v.psd.samples;
            if (!is_psd(q)) {
                v.psd.kind = PsdResult::Kind::Fails;
                v.psd.witness = {x};
                v.psd_cell = c.str();
                return v;
            }
        }
    }
    v.psd.kind = all_exact ? PsdResult::Kind::Exact : PsdResult::Kind::Probabilistic;
    return v;
}

// Joins [interval, point, interval] runs carrying one expression into a single piece.
inline BundleMetric merge_pieces(const PseudoBundle& B, const BundleMetric& g) {
    BundleMetric out{g.name, {}};
    for (const auto& ch : B.charts()) {
        std::vector<MetricPiece> run;
        for (const auto& c : ch.cells) {
            if (!B.is_live(c)) continue;
            const MetricPiece& p = g.piece_on(c);
            MetricPiece here{c, restrict_to(p.matrix, c, ch.var), std::nullopt};
            if (p.sos) here.sos = restrict_to(*p.sos, c, ch.var);
            run.push_back(std::move(here));
            // try to absorb the last two pieces into the one before them
            while (run.size() >= 3) {
                MetricPiece &a = run[run.size() - 3], &q = run[run.size() - 2], &b = run.back();
                if (a.cell.point || !q.cell.point || b.cell.point || !(a.cell.hi == q.cell.lo) || !(b.cell.lo == q.cell.lo)) break;
                if (!(a.matrix == b.matrix)) break;
                bool same_sos = a.sos.has_value() == b.sos.has_value() && a.sos.has_value() == q.sos.has_value();
                if (same_sos && a.sos) {
                    same_sos = a.sos->size() == b.sos->size();
                    for (size_t k = 0; same_sos && k < a.sos->size(); ++k)
                        same_sos = (*a.sos)[k].coeff == (*b.sos)[k].coeff && (*a.sos)[k].functional == (*b.sos)[k].functional;
                }
                if (!same_sos) break;
                ExprMatrix at;
                try {
                    at = restrict_to(a.matrix, q.cell, ch.var);
                } catch (const Error& err) {
                    if (err.kind() != ErrorKind::DivisionByZero) throw;
                    break;
                }
                if (!(at == q.matrix)) break;
                MetricPiece merged{Cell::interval(ch.id, a.cell.lo, b.cell.hi), a.matrix, a.sos};
                run.resize(run.size() - 3);
                run.push_back(std::move(merged));
            }
        }
        out.pieces.insert(out.pieces.end(), run.begin(), run.end());
    }
    return out;
}

// ---- compatibility and the two gluing constructions ----

inline bool compat_check(const PseudoBundle& B1_in, const PseudoBundle& B2_in, const BundleMetric& g1_in, const BundleMetric& g2,
                         const BundleGluing& G_in) {
    detail::Prepared P = detail::prepare(B1_in, B2_in, G_in);
    BundleMetric g1 = detail::rename_chart(g1_in, P.renamed_from, P.renamed_to);
    const Chart &c1 = P.B1.only_chart(), &c2 = P.B2.only_chart();
    check_lift_domain(P.G, c1.fibre_dim, c2.fibre_dim);
    Resolution R = resolve(c1, c2, P.G.base);
    for (const auto& p : R.pieces) {
        ExprMatrix G1 = metric_on_home(P.B1, g1, p.source);
        ExprMatrix G2 = metric_on_home(P.B2, g2, p.target).map([&](const RatAbsExpr& e) { return to_source(e, p, c1.var, c2.var); });
        ExprMatrix L = restrict_to(P.G.lift_on(p.source), p.source, c1.var);
        if (!(restrict_to(L.transpose() * G2 * L, p.source, c1.var) == G1)) return false;
    }
    return true;
}

struct GluedMetric {
    GluedBundle glued;
    BundleMetric metric;
};

// g1 on the i1 cells, g2 on the i2 cells.
inline GluedMetric glue_metrics(const PseudoBundle& B1, const PseudoBundle& B2, const BundleMetric& g1_in, const BundleMetric& g2,
                                const BundleGluing& G) {
    if (!compat_check(B1, B2, g1_in, g2, G)) throw Error(ErrorKind::IncompatibleMetrics, "g1 differs from the pullback of g2 on Y");
    GluedMetric out{glue_bundles(B1, B2, G), {g1_in.name + "~" + g2.name, {}}};
    const std::string& from = B1.only_chart().id;
    BundleMetric g1 = detail::rename_chart(g1_in, from, out.glued.res.source.id == from ? "" : out.glued.res.source.id);
    for (const auto& c : out.glued.bundle.live_cells()) {
        bool first = out.glued.region(c) == Region::I1;
        const PseudoBundle& F = first ? out.glued.B1 : out.glued.B2;
        const BundleMetric& g = first ? g1 : g2;
        // live cells are factor home cells, so a factor certificate restricts unchanged
        std::optional<SosCertificate> sos;
        if (const MetricPiece* p = g.find(c); p && p->sos) sos = restrict_to(*p->sos, c, F.chart(c.chart).var);
        out.metric.pieces.push_back({c, metric_on_home(F, g, c), sos});
    }
    return out;
}

namespace detail {

// Columns where the rows of D are independent, and the inverse of that square block.
inline std::pair<std::vector<size_t>, ExprMatrix> pivot_block(const ExprMatrix& D) {
    auto piv = rref(D).pivots;
    ExprMatrix Q(D.rows(), piv.size());
    for (size_t i = 0; i < D.rows(); ++i)
        for (size_t k = 0; k < piv.size(); ++k) Q(i, k) = D(i, piv[k]);
    auto inv = inverse(Q);
    if (!inv) throw Error(ErrorKind::NotLocallyTrivial, "dual basis is degenerate");
    return {piv, *inv};
}

inline ExprMatrix select_cols(const ExprMatrix& m, const std::vector<size_t>& cols) {
    ExprMatrix out(m.rows(), cols.size());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t k = 0; k < cols.size(); ++k) out(i, k) = m(i, cols[k]);
    return out;
}

// M with G = D^T M D, or nothing if G is not a form on span(D).
inline std::optional<ExprMatrix> form_in_dual_basis(const ExprMatrix& G, const ExprMatrix& D, const SignContext& ctx) {
    if (D.rows() == 0) {
        if (normalize(G, ctx).is_zero()) return ExprMatrix(0, 0);
        return std::nullopt;
    }
    auto [piv, Qinv] = pivot_block(D);
    ExprMatrix Gpp(piv.size(), piv.size());
    for (size_t i = 0; i < piv.size(); ++i)
        for (size_t j = 0; j < piv.size(); ++j) Gpp(i, j) = G(piv[i], piv[j]);
    ExprMatrix M = normalize(Qinv.transpose() * Gpp * Qinv, ctx);
    if (!(normalize(D.transpose() * M * D, ctx) == normalize(G, ctx))) return std::nullopt;
    return M;
}

}  // namespace detail

// Metric transported from g1 through the dual identification on the glued cells, g2 elsewhere on chart 2.
inline GluedMetric glue_metrics_commutative(const PseudoBundle& B1, const PseudoBundle& B2, const BundleMetric& g1_in,
                                            const BundleMetric& g2, const BundleGluing& G) {
    if (!check_dual_necessary(B1, B2, G).holds)
        throw Error(ErrorKind::NecessaryConditionFails, "duals of the glued fibres are not identified by the lift");
    if (!compat_check(B1, B2, g1_in, g2, G)) throw Error(ErrorKind::IncompatibleMetrics, "g1 differs from the pullback of g2 on Y");
    GluedMetric out{glue_bundles(B1, B2, G), {g1_in.name + "~*" + g2.name, {}}};
    const GluedBundle& GB = out.glued;
    const std::string& from = B1.only_chart().id;
    BundleMetric g1 = detail::rename_chart(g1_in, from, GB.res.source.id == from ? "" : GB.res.source.id);
    const Var &x1 = GB.res.source.var, &x2 = GB.res.target.var;
    size_t n1 = GB.res.source.fibre_dim, n2 = GB.res.target.fibre_dim;

    for (const auto& c : GB.bundle.live_cells()) {
        if (GB.region(c) == Region::I1) {
            out.metric.pieces.push_back({c, metric_on_home(GB.B1, g1, c), std::nullopt});
            continue;
        }
        const GluePiece* p = GB.res.piece_onto(c);
        if (!p) {
            out.metric.pieces.push_back({c, metric_on_home(GB.B2, g2, c), std::nullopt});
            continue;
        }
        SignContext ctx = p->source.point ? SignContext() : p->source.context(x1);
        ExprMatrix G1 = metric_on_home(GB.B1, g1, p->source);
        ExprMatrix D1 = functional_rows(dual_basis(GB.B1.fibre_on(p->source)), n1);
        ExprMatrix Dt = functional_rows(dual_basis(GB.bundle.fibre(c)), n2).map([&](const RatAbsExpr& e) {
            return to_source(e, *p, x1, x2);
        });
        ExprMatrix L = restrict_to(GB.gluing.lift_on(p->source), p->source, x1);
        auto M1 = detail::form_in_dual_basis(G1, D1, ctx);
        if (!M1) throw Error(ErrorKind::IncompatibleMetrics, "g1 is not a form on the dual over " + p->source.str());
        ExprMatrix Gt(n2, n2);
        if (D1.rows() > 0) {
            auto [piv, Qinv] = detail::pivot_block(D1);
            ExprMatrix DL = normalize(Dt * L, ctx);
            ExprMatrix T = normalize(detail::select_cols(DL, piv) * Qinv, ctx);
            if (!(normalize(T * D1, ctx) == DL))
                throw Error(ErrorKind::NecessaryConditionFails, "dual lift does not factor through the dual over " + p->source.str());
            auto Tinv = inverse(T);
            if (!Tinv) throw Error(ErrorKind::NecessaryConditionFails, "dual lift is singular over " + p->source.str());
            ExprMatrix M = Tinv->transpose() * *M1 * *Tinv;
            Gt = normalize(Dt.transpose() * M * Dt, ctx);
        }
        out.metric.pieces.push_back({c, Gt.map([&](const RatAbsExpr& e) { return to_target(e, *p, x1, x2); }), std::nullopt});
    }
    return out;
}

inline bool metrics_coincide(const PseudoBundle& B, const BundleMetric& a, const BundleMetric& b) {
    for (const auto& c : B.live_cells())
        if (!(metric_on_home(B, a, c) == metric_on_home(B, b, c))) return false;
    return true;
}

// ---- existence ----

struct ForcedVanishing {
    Cell cell;
    std::vector<Rational> functional;  // over the symmetric unknowns
    std::string probe_p, probe_q;      // a single probe pair whose constraint alone forces it, if any
};

// A vanishing carried from an interval to its endpoint by continuity along constant probes.
struct ContinuityTransfer {
    Cell from, to;
    std::vector<Rational> functional;
    std::string probe_p, probe_q;  // constant probes of the first unknown the functional touches
};

struct NonexistenceCertificate {
    Profile required;
    std::vector<std::pair<size_t, size_t>> unknowns;  // (i, j), i <= j
    std::vector<ForcedVanishing> forced;
    std::vector<ContinuityTransfer> transfers;
    Cell point;
    size_t required_rank = 0, max_rank = 0;
};

struct ExistenceResult {
    enum class Kind { Exists, NonExistent, Unknown };
    Kind kind = Kind::Unknown;
    std::optional<BundleMetric> metric;
    std::optional<MetricVerdict> verdict;
    std::optional<NonexistenceCertificate> certificate;

    const char* name() const {
        switch (kind) {
        case Kind::Exists: return "Exists";
        case Kind::NonExistent: return "NonExistent";
        case Kind::Unknown: return "Unknown";
        }
        return "Unknown";
    }
};

namespace detail {

inline std::vector<std::pair<size_t, size_t>> sym_unknowns(size_t n) {
    std::vector<std::pair<size_t, size_t>> out;
    for (size_t i = 0; i < n; ++i)
        for (size_t j = i; j < n; ++j) out.push_back({i, j});
    return out;
}

struct LabelledRow {
    std::vector<RatAbsExpr> row;
    std::string p, q;
};

// Linear conditions on g(x) from smoothness of every probe pair in the fibre variables over one cell.
inline std::vector<LabelledRow> cell_constraints(const PseudoBundle& B, const Chart& ch, const Cell& c) {
    auto unknowns = sym_unknowns(ch.fibre_dim);
    SignContext ctx = c.point ? SignContext() : c.context(ch.var);
    auto probes = probes_on(B, ch);
    std::vector<LabelledRow> out;
    for (const auto& P : probes) {
        if (P.constant || !P.defined_on(c)) continue;
        auto pc = restrict_to(P.components, c, ch.var);
        std::set<Var> taken{ch.var};
        taken.insert(P.fibre_vars.begin(), P.fibre_vars.end());
        for (const auto& Q0 : probes) {
            if (!Q0.defined_on(c)) continue;
            Probe Q = apart(Q0, taken);
            auto qc = restrict_to(Q.components, c, ch.var);
            std::set<Var> fv(P.fibre_vars.begin(), P.fibre_vars.end());
            fv.insert(Q.fibre_vars.begin(), Q.fibre_vars.end());
            std::map<TermKey, std::vector<RatAbsExpr>> rows;
            for (size_t k = 0; k < unknowns.size(); ++k) {
                auto [i, j] = unknowns[k];
                RatAbsExpr e = pc[i] * qc[j];
                if (i != j) e += pc[j] * qc[i];
                e = normalize(e, ctx);
                for (const auto& [key, coef] : split_by(e.num(), fv)) {
                    if (key.abs_vars.empty()) continue;
                    auto& r = rows[key];
                    r.resize(unknowns.size());
                    r[k] = normalize(RatAbsExpr::fraction(coef, e.den()), ctx);
                }
            }
            for (auto& [key, r] : rows) out.push_back({std::move(r), P.label, Q0.label});
        }
    }
    return out;
}

inline ExprMatrix rows_of(const std::vector<LabelledRow>& rows, size_t m) {
    std::vector<std::vector<RatAbsExpr>> rs;
    for (const auto& r : rows) rs.push_back(r.row);
    return ExprMatrix::from_rows(rs, m);
}

inline ExprMatrix sym_matrix(const std::vector<RatAbsExpr>& a, const std::vector<std::pair<size_t, size_t>>& unknowns, size_t n) {
    ExprMatrix m(n, n);
    for (size_t k = 0; k < unknowns.size(); ++k) {
        auto [i, j] = unknowns[k];
        m(i, j) = a[k];
        m(j, i) = a[k];
    }
    return m;
}

// Largest rank of a symmetric matrix whose unknowns range over span(basis).
inline size_t max_rank(const std::vector<std::vector<RatAbsExpr>>& basis, const std::vector<std::pair<size_t, size_t>>& unknowns,
                       size_t n, const SignContext& ctx) {
    if (basis.empty()) return 0;
    std::vector<RatAbsExpr> a(unknowns.size());
    for (size_t b = 0; b < basis.size(); ++b) {
        RatAbsExpr t = RatAbsExpr::variable("t_" + std::to_string(b));
        for (size_t k = 0; k < unknowns.size(); ++k)
            if (!basis[b][k].is_zero()) a[k] += t * basis[b][k];
    }
    return rank(normalize(sym_matrix(a, unknowns, n), ctx));
}

inline std::vector<RatAbsExpr> as_exprs(const std::vector<Rational>& v) {
    std::vector<RatAbsExpr> out;
    for (const auto& q : v) out.push_back(RatAbsExpr(q));
    return out;
}

// Constant functionals in the row space of C(x) for every x in the cell, verified symbolically.
inline std::vector<std::vector<Rational>> constant_row_functionals(const ExprMatrix& C, const Cell& c, const Var& x, size_t m,
                                                                   std::mt19937_64& rng) {
    if (C.rows() == 0) return {};
    std::vector<std::vector<Rational>> null_rows;
    int used = 0;
    for (int attempt = 0; attempt < 12 && used < 4; ++attempt) {
        Rational pt = attempt == 0 ? c.sample() : c.random_point(rng);
        QMatrix q;
        try {
            q = eval_at(C, std::map<Var, Rational>{{x, pt}});
        } catch (const Error& err) {
            if (err.kind() != ErrorKind::DivisionByZero) throw;
            continue;
        }
        for (auto& v : nullspace(q)) null_rows.push_back(std::move(v));
        ++used;
    }
    std::vector<std::vector<Rational>> cands =
        null_rows.empty() ? nullspace(QMatrix(0, m)) : nullspace(QMatrix::from_rows(null_rows, m));
    std::vector<std::vector<Rational>> out;
    auto crows = C.row_list();
    for (auto& l : cands)
        if (span_contains(crows, {as_exprs(l)}, m)) out.push_back(std::move(l));
    return out;
}

inline std::vector<std::vector<Rational>> unit_functionals(size_t m) {
    std::vector<std::vector<Rational>> out;
    for (size_t k = 0; k < m; ++k) {
        std::vector<Rational> e(m, Rational(0));
        e[k] = 1;
        out.push_back(e);
    }
    return out;
}

// The allowed space at a point: point constraints plus functionals forced from neighbouring intervals.
inline std::vector<std::vector<RatAbsExpr>> allowed_at(const ExprMatrix& Cq, const std::vector<std::vector<Rational>>& forced, size_t m) {
    auto rows = Cq.row_list();
    for (const auto& l : forced) rows.push_back(as_exprs(l));
    return nullspace(ExprMatrix::from_rows(rows, m));
}

}  // namespace detail

// Candidate Sum phi_k phi_k^T from each cell's dual basis, kept only if it verifies exactly.
inline BundleMetric sos_candidate(const PseudoBundle& B) {
    BundleMetric g{"g_" + B.name(), {}};
    for (const auto& c : B.live_cells()) {
        const GeneratedVS& F = B.fibre(c);
        SosCertificate cert = pseudometric_certificate(F);
        g.pieces.push_back({c, normalize(sos_matrix(cert, F.dim()), F.context()), cert});
    }
    return g;
}

// Negative branch: propagates linear conditions on g(x) from cells to points and looks for a
// point (or cell) where the surviving matrices cannot reach the required rank.
inline std::optional<NonexistenceCertificate> find_nonexistence(const PseudoBundle& B, std::uint64_t seed = 1) {
    if (B.charts().size() != 1 || !B.identifications().empty()) return std::nullopt;
    const Chart& ch = B.only_chart();
    size_t n = ch.fibre_dim;
    auto unknowns = detail::sym_unknowns(n);
    size_t m = unknowns.size();
    NonexistenceCertificate cert;
    cert.required = dual_dim_profile(B);
    cert.unknowns = unknowns;
    std::mt19937_64 rng(seed);

    std::map<Cell, std::vector<std::vector<Rational>>> forced;
    auto fail_at = [&](const Cell& c, size_t mr) {
        cert.point = c;
        cert.required_rank = cert.required.at(c);
        cert.max_rank = mr;
        return cert;
    };

    for (const auto& c : ch.cells) {
        if (c.point) continue;
        auto rows = detail::cell_constraints(B, ch, c);
        ExprMatrix C = detail::rows_of(rows, m);
        size_t need = cert.required.at(c);
        auto ls = need == 0 ? detail::unit_functionals(m) : detail::constant_row_functionals(C, c, ch.var, m, rng);
        for (const auto& l : ls) {
            ForcedVanishing fvn{c, l, need == 0 ? "rank 0" : "", ""};
            for (const auto& r : rows)
                if (need > 0 && span_contains(std::vector<std::vector<RatAbsExpr>>{r.row}, std::vector<std::vector<RatAbsExpr>>{detail::as_exprs(l)}, m)) {
                    fvn.probe_p = r.p;
                    fvn.probe_q = r.q;
                    break;
                }
            cert.forced.push_back(fvn);
        }
        forced[c] = ls;
        size_t mr = detail::max_rank(nullspace(C), unknowns, n, c.context(ch.var));
        if (mr < need) return fail_at(c, mr);
    }
    for (const auto& q : ch.cells) {
        if (!q.point) continue;
        std::vector<std::vector<Rational>> fs;
        std::vector<ContinuityTransfer> moved;
        for (const auto& [c, ls] : forced) {
            if (!(c.hi == q.lo || c.lo == q.lo)) continue;
            fs.insert(fs.end(), ls.begin(), ls.end());
            for (const auto& l : ls) {
                size_t k = 0;
                while (k < m && l[k] == 0) ++k;
                if (k == m) continue;
                moved.push_back({c, q, l, detail::constant_probe_label(ch, unknowns[k].first),
                                 detail::constant_probe_label(ch, unknowns[k].second)});
            }
        }
        ExprMatrix Cq = detail::rows_of(detail::cell_constraints(B, ch, q), m);
        size_t mr = detail::max_rank(detail::allowed_at(Cq, fs, m), unknowns, n, {});
        if (mr < cert.required.at(q)) {
            cert.transfers = moved;
            return fail_at(q, mr);
        }
    }
    return std::nullopt;
}

inline ExistenceResult existence_check(const PseudoBundle& B, std::uint64_t seed = 1) {
    ExistenceResult res;
    BundleMetric g = sos_candidate(B);
    MetricVerdict v = is_pseudometric(B, g, seed);
    if (v.pass() && v.psd.kind == PsdResult::Kind::Exact) {
        res.kind = ExistenceResult::Kind::Exists;
        res.metric = merge_pieces(B, g);
        res.verdict = v;
        return res;
    }
    if (auto cert = find_nonexistence(B, seed)) {
        res.kind = ExistenceResult::Kind::NonExistent;
        res.certificate = cert;
    }
    return res;
}

// Re-derives every recorded constraint from the bundle and re-checks the rank contradiction.
inline bool replay(const PseudoBundle& B, const NonexistenceCertificate& cert) {
    if (B.charts().size() != 1 || !B.identifications().empty()) return false;
    const Chart& ch = B.only_chart();
    size_t n = ch.fibre_dim;
    auto unknowns = detail::sym_unknowns(n);
    size_t m = unknowns.size();
    if (cert.unknowns != unknowns || cert.required != dual_dim_profile(B)) return false;
    std::vector<std::vector<Rational>> at_point;
    for (const auto& f : cert.forced) {
        if (f.functional.size() != m || f.cell.point) return false;
        if (cert.required.at(f.cell) > 0) {
            auto rows = detail::cell_constraints(B, ch, f.cell);
            if (!span_contains(detail::rows_of(rows, m).row_list(), {detail::as_exprs(f.functional)}, m)) return false;
        }
        if (cert.point.point && (f.cell.hi == cert.point.lo || f.cell.lo == cert.point.lo)) at_point.push_back(f.functional);
    }
    for (const auto& t : cert.transfers) {
        bool backed = false;
        for (const auto& f : cert.forced) backed = backed || (f.cell == t.from && f.functional == t.functional);
        if (!backed || !(t.to == cert.point)) return false;
    }
    ExprMatrix C = detail::rows_of(detail::cell_constraints(B, ch, cert.point), m);
    size_t mr = cert.point.point ? detail::max_rank(detail::allowed_at(C, at_point, m), unknowns, n, {})
                                 : detail::max_rank(nullspace(C), unknowns, n, cert.point.context(ch.var));
    return mr == cert.max_rank && mr < cert.required.at(cert.point) && cert.required_rank == cert.required.at(cert.point);
}

// ---- pairing map and the dual metric ----

struct PairingCell {
    Cell cell;
    ExprMatrix matrix;
    size_t rank = 0;
    std::vector<std::vector<RatAbsExpr>> kernel;
};

struct PairingMap {
    std::vector<PairingCell> cells;
    bool rank_warning = false;  // the metric's rank differs from the dual dimension somewhere

    const PairingCell& at(const Cell& c) const {
        for (const auto& p : cells)
            if (p.cell.contains(c)) return p;
        throw Error(ErrorKind::PointOutsideBase, "no pairing over " + c.str());
    }
};

// v -> g(x)(v, .), as the matrix G(x) acting on the left slot.
inline PairingMap pairing_map(const PseudoBundle& B, const BundleMetric& g) {
    PairingMap out;
    Profile req = dual_dim_profile(B);
    for (const auto& c : B.live_cells()) {
        ExprMatrix G = metric_on_home(B, g, c);
        PairingCell pc{c, G, rank(G), nullspace(G)};
        if (pc.rank != req.at(c)) out.rank_warning = true;
        out.cells.push_back(std::move(pc));
    }
    return out;
}

struct DualMetric {
    PseudoBundle bundle;
    BundleMetric metric;
};

inline DualMetric dual_metric(const PseudoBundle& B, const BundleMetric& g, std::uint64_t seed = 1) {
    MetricVerdict v = is_pseudometric(B, g, seed);
    if (!v.pass()) throw Error(ErrorKind::MetricRequired, "dual metric needs a pseudo-metric on " + B.name());
    for (const auto& r : v.ranks)
        if (!r.constant) throw Error(ErrorKind::NotLocallyTrivial, "rank drops inside " + r.cell.str());
    DualMetric out{dual_as_bundle(B), {g.name + "*", {}}};
    const Chart& ch = B.only_chart();
    for (const auto& c : B.live_cells()) {
        SignContext ctx = c.point ? SignContext() : c.context(ch.var);
        const GeneratedVS& F = B.fibre(c);
        ExprMatrix D = functional_rows(dual_basis(F), ch.fibre_dim);
        size_t d = D.rows();
        ExprMatrix G = metric_on_home(B, g, c);
        const MetricPiece& piece = g.piece_on(c);

        std::optional<SosCertificate> cert;
        if (piece.sos) cert = restrict_to(*piece.sos, c, ch.var);
        if (cert && cert->size() == d && d > 0 && certificate_matches(*cert, G, ctx)) {
            // phi_k = a_k^T D; g* = A^-1 C^-1 A^-T
            auto [piv, Qinv] = detail::pivot_block(D);
            ExprMatrix A(d, d);
            for (size_t k = 0; k < d; ++k) {
                ExprMatrix row = ExprMatrix::from_rows({(*cert)[k].functional.coeffs}, ch.fibre_dim);
                ExprMatrix a = normalize(detail::select_cols(row, piv) * Qinv, ctx);
                for (size_t j = 0; j < d; ++j) A(k, j) = a(0, j);
            }
            auto Ainv = inverse(A);
            bool nonzero = true;
            for (const auto& t : *cert) nonzero = nonzero && !normalize(t.coeff, ctx).is_zero();
            if (Ainv && nonzero) {
                SosCertificate dual;
                for (size_t k = 0; k < d; ++k) {
                    std::vector<RatAbsExpr> col;
                    for (size_t i = 0; i < d; ++i) col.push_back(normalize((*Ainv)(i, k), ctx));
                    dual.push_back({normalize(RatAbsExpr(Rational(1)) / (*cert)[k].coeff, ctx), Functional{col}});
                }
                out.metric.pieces.push_back({c, normalize(sos_matrix(dual, d), ctx), dual});
                continue;
            }
        }
        auto M = detail::form_in_dual_basis(G, D, ctx);
        if (!M) throw Error(ErrorKind::MetricRequired, "metric is not a form on the dual over " + c.str());
        auto Minv = d == 0 ? std::optional<ExprMatrix>(ExprMatrix(0, 0)) : inverse(*M);
        if (!Minv) throw Error(ErrorKind::NotLocallyTrivial, "metric is degenerate on the dual over " + c.str());
        out.metric.pieces.push_back({c, normalize(*Minv, ctx), std::nullopt});
    }
    out.metric = merge_pieces(out.bundle, out.metric);
    return out;
}

}  // namespace pblab
