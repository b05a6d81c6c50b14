#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pblab/error.hpp"
#include "pblab/linalg.hpp"
#include "pblab/symexpr.hpp"

namespace pblab {

struct GeneratorPlot {
    std::vector<Var> domain_vars;
    std::vector<RatAbsExpr> components;

    std::string str() const {
        std::string out = "(";
        for (size_t i = 0; i < domain_vars.size(); ++i) out += (i ? ", " : "") + domain_vars[i];
        out += ") -> (";
        for (size_t i = 0; i < components.size(); ++i) out += (i ? ", " : "") + components[i].str();
        return out + ")";
    }
};

struct Functional {
    std::vector<RatAbsExpr> coeffs;

    static Functional basis(size_t i, size_t dim) {
        Functional f{std::vector<RatAbsExpr>(dim)};
        f.coeffs[i] = RatAbsExpr(Rational(1));
        return f;
    }
    size_t dim() const { return coeffs.size(); }
    std::vector<std::string> strs() const {
        std::vector<std::string> out;
        for (const auto& c : coeffs) out.push_back(c.str());
        return out;
    }
    friend bool operator==(const Functional&, const Functional&) = default;
};

struct BilinearForm {
    ExprMatrix matrix;
};

struct SosTerm {
    RatAbsExpr coeff;
    Functional functional;
};

// B = sum_k c_k phi_k phi_k^T with c_k >= 0.
using SosCertificate = std::vector<SosTerm>;

inline ExprMatrix sos_matrix(const SosCertificate& cert, size_t dim) {
    ExprMatrix m(dim, dim);
    for (const auto& t : cert)
        for (size_t i = 0; i < dim; ++i)
            for (size_t j = 0; j < dim; ++j) {
                if (t.functional.coeffs[i].is_zero() || t.functional.coeffs[j].is_zero()) continue;
                m(i, j) += t.coeff * t.functional.coeffs[i] * t.functional.coeffs[j];
            }
    return m;
}

inline Var fresh_var(const Var& base, const std::set<Var>& taken) {
    for (int i = 2;; ++i) {
        Var candidate = base + std::to_string(i);
        if (!taken.count(candidate)) return candidate;
    }
}

// Renames plot variables away from `taken`; returns the renamed plot.
inline GeneratorPlot rename_apart(const GeneratorPlot& p, const std::set<Var>& taken) {
    std::map<Var, Var> names;
    std::set<Var> used = taken;
    for (const auto& v : p.domain_vars) used.insert(v);
    GeneratorPlot out;
    for (const auto& v : p.domain_vars) {
        Var w = taken.count(v) ? fresh_var(v, used) : v;
        used.insert(w);
        names[v] = w;
        out.domain_vars.push_back(w);
    }
    for (const auto& c : p.components) out.components.push_back(rename(c, names));
    return out;
}

// A finite-dimensional vector space with the vector-space diffeology generated by finitely many
// plots. Parameters are extra variables (a base coordinate) that the coefficients may depend on.
class GeneratedVS {
public:
    GeneratedVS() = default;
    GeneratedVS(size_t dim, std::vector<GeneratorPlot> generators, std::string label = {},
                std::vector<Var> parameters = {}, SignContext context = {})
        : dim_(dim), label_(std::move(label)), parameters_(std::move(parameters)), context_(std::move(context)) {
        std::set<Var> params(parameters_.begin(), parameters_.end());
        for (auto& g : generators) {
            if (g.components.size() != dim_)
                throw Error(ErrorKind::DimensionMismatch, "generator has " + std::to_string(g.components.size()) +
                                                              " components, space has dimension " + std::to_string(dim_));
            std::set<Var> allowed = params;
            allowed.insert(g.domain_vars.begin(), g.domain_vars.end());
            bool zero = true;
            for (auto& c : g.components) {
                c = normalize(c, context_);
                for (const auto& v : c.variables())
                    if (!allowed.count(v)) throw Error(ErrorKind::ShapeMismatch, "variable " + v + " not in the plot domain");
                for (const auto& v : c.den().variables())
                    if (!params.count(v))
                        throw Error(ErrorKind::ShapeMismatch, "denominator depends on domain variable " + v);
                if (!c.is_zero()) zero = false;
            }
            if (!zero) generators_.push_back(std::move(g));
        }
    }

    static GeneratedVS standard(size_t dim, std::string label = {}) { return GeneratedVS(dim, {}, std::move(label)); }

    size_t dim() const { return dim_; }
    const std::vector<GeneratorPlot>& generators() const { return generators_; }
    const std::string& label() const { return label_; }
    const std::vector<Var>& parameters() const { return parameters_; }
    const SignContext& context() const { return context_; }

private:
    size_t dim_ = 0;
    std::vector<GeneratorPlot> generators_;
    std::string label_;
    std::vector<Var> parameters_;
    SignContext context_;
};

// Coefficient vectors of the non-smooth keys of a plot: p = sum_K c_K * K(domain vars).
inline std::map<TermKey, std::vector<RatAbsExpr>> key_coefficients(const GeneratorPlot& p, size_t dim,
                                                                   bool nonsmooth_only = true) {
    std::set<Var> dv(p.domain_vars.begin(), p.domain_vars.end());
    std::map<TermKey, std::vector<RatAbsExpr>> out;
    for (size_t i = 0; i < dim; ++i) {
        const RatAbsExpr& c = p.components[i];
        for (const auto& [key, coef] : split_by(c.num(), dv)) {
            if (nonsmooth_only && key.abs_vars.empty()) continue;
            auto& row = out[key];
            row.resize(dim);
            row[i] = RatAbsExpr::fraction(coef, c.den());
        }
    }
    return out;
}

// Rows a with sum_i a_i p_i free of |domain var| terms, one per (generator, non-smooth key).
inline ExprMatrix constraint_matrix(const GeneratedVS& V) {
    std::vector<std::vector<RatAbsExpr>> rows;
    for (const auto& g : V.generators())
        for (auto& [key, row] : key_coefficients(g, V.dim())) rows.push_back(normalize_row(row, V.context()));
    return ExprMatrix::from_rows(rows, V.dim());
}

inline std::vector<Functional> dual_basis(const GeneratedVS& V) {
    std::vector<Functional> out;
    for (auto& v : nullspace(constraint_matrix(V))) out.push_back(Functional{std::move(v)});
    return out;
}

inline RatAbsExpr apply(const Functional& phi, const std::vector<RatAbsExpr>& v) {
    RatAbsExpr s;
    for (size_t i = 0; i < v.size(); ++i)
        if (!phi.coeffs[i].is_zero() && !v[i].is_zero()) s += phi.coeffs[i] * v[i];
    return s;
}

inline bool is_smooth_functional(const GeneratedVS& V, const Functional& phi) {
    if (phi.dim() != V.dim()) throw Error(ErrorKind::ShapeMismatch, "functional length differs from dimension");
    for (const auto& g : V.generators()) {
        std::set<Var> dv(g.domain_vars.begin(), g.domain_vars.end());
        if (!is_smooth_in(normalize(apply(phi, g.components), V.context()), V.context(), dv)) return false;
    }
    return true;
}

inline RatAbsExpr bilinear_eval(const ExprMatrix& B, const std::vector<RatAbsExpr>& p, const std::vector<RatAbsExpr>& q) {
    RatAbsExpr s;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i].is_zero()) continue;
        for (size_t j = 0; j < q.size(); ++j) {
            if (q[j].is_zero() || B(i, j).is_zero()) continue;
            s += B(i, j) * p[i] * q[j];
        }
    }
    return s;
}

inline std::vector<RatAbsExpr> basis_vector(size_t k, size_t dim) { return Functional::basis(k, dim).coeffs; }

inline bool is_smooth_bilinear(const GeneratedVS& V, const BilinearForm& B) {
    const ExprMatrix& m = B.matrix;
    if (m.rows() != V.dim() || m.cols() != V.dim()) throw Error(ErrorKind::ShapeMismatch, "form size differs from dimension");
    std::set<Var> params(V.parameters().begin(), V.parameters().end());
    for (const auto& p : V.generators()) {
        std::set<Var> taken = params;
        taken.insert(p.domain_vars.begin(), p.domain_vars.end());
        for (const auto& q0 : V.generators()) {
            GeneratorPlot q = rename_apart(q0, taken);
            std::set<Var> dv = taken;
            dv.insert(q.domain_vars.begin(), q.domain_vars.end());
            for (const auto& v : params) dv.erase(v);
            if (!is_smooth_in(normalize(bilinear_eval(m, p.components, q.components), V.context()), V.context(), dv))
                return false;
        }
        std::set<Var> dv(p.domain_vars.begin(), p.domain_vars.end());
        for (size_t k = 0; k < V.dim(); ++k) {
            auto e = basis_vector(k, V.dim());
            if (!is_smooth_in(normalize(bilinear_eval(m, p.components, e), V.context()), V.context(), dv)) return false;
            if (!is_smooth_in(normalize(bilinear_eval(m, e, p.components), V.context()), V.context(), dv)) return false;
        }
    }
    return true;
}

inline SosCertificate pseudometric_certificate(const GeneratedVS& V) {
    SosCertificate cert;
    for (auto& phi : dual_basis(V)) cert.push_back({RatAbsExpr(Rational(1)), std::move(phi)});
    return cert;
}

inline BilinearForm construct_pseudometric_vs(const GeneratedVS& V) {
    return {sos_matrix(pseudometric_certificate(V), V.dim())};
}

struct PsdResult {
    enum class Kind { Exact, Probabilistic, Fails };
    Kind kind = Kind::Probabilistic;
    size_t samples = 0;
    std::vector<Rational> witness;  // a vector v with v^T B v < 0, or a point where the minor test failed

    bool accepts() const { return kind != Kind::Fails; }
    const char* name() const {
        switch (kind) {
        case Kind::Exact: return "exact";
        case Kind::Probabilistic: return "probabilistic";
        case Kind::Fails: return "fails";
        }
        return "fails";
    }
};

struct VsVerdict {
    bool symmetric = false;
    bool smooth = false;
    PsdResult psd;
    size_t rank = 0;
    size_t dual_dim = 0;
    bool rank_ok = false;

    bool pass() const { return symmetric && smooth && psd.accepts() && rank_ok; }
};

// Nonnegativity of a coefficient under a sign context, decided exactly when possible.
inline bool provably_nonneg(const RatAbsExpr& c, const SignContext& ctx) {
    if (auto v = c.constant_value()) return sgn(*v) >= 0;
    auto sn = definite_sign(c.num(), ctx);
    auto sd = definite_sign(c.den(), ctx);
    return sn && sd && *sn * *sd >= 0;
}

inline bool certificate_matches(const SosCertificate& cert, const ExprMatrix& m, const SignContext& ctx) {
    for (const auto& t : cert) {
        if (t.functional.dim() != m.rows()) return false;
        if (!provably_nonneg(t.coeff, ctx)) return false;
    }
    return normalize(sos_matrix(cert, m.rows()), ctx) == normalize(m, ctx);
}

inline std::map<Var, Rational> context_sample(const std::vector<Var>& params, const SignContext& ctx) {
    std::map<Var, Rational> out;
    for (const auto& v : params) {
        switch (ctx.of(v)) {
        case Sign::Pos: out[v] = 1; break;
        case Sign::Neg: out[v] = -1; break;
        case Sign::Zero: out[v] = 0; break;
        case Sign::Any: out[v] = make_rational(1, 3); break;
        }
    }
    return out;
}

inline VsVerdict is_pseudometric_vs(const GeneratedVS& V, const BilinearForm& B,
                                    const std::optional<SosCertificate>& cert = std::nullopt, std::uint64_t seed = 1) {
    VsVerdict v;
    const ExprMatrix& m = B.matrix;
    if (m.rows() != V.dim() || m.cols() != V.dim()) throw Error(ErrorKind::ShapeMismatch, "form size differs from dimension");
    v.symmetric = is_symmetric(normalize(m, V.context()));
    v.smooth = is_smooth_bilinear(V, B);
    v.rank = rank(normalize(m, V.context()));
    v.dual_dim = dual_basis(V).size();
    v.rank_ok = v.rank == v.dual_dim;
    if (cert && certificate_matches(*cert, m, V.context())) {
        v.psd.kind = PsdResult::Kind::Exact;
    } else {
        QMatrix q = eval_at(m, context_sample(V.parameters(), V.context()));
        std::mt19937_64 rng(seed);
        v.psd.kind = PsdResult::Kind::Probabilistic;
        for (int s = 0; s < 50; ++s) {
            std::vector<Rational> x;
            for (size_t i = 0; i < V.dim(); ++i) x.push_back(random_rational(rng, 20, 10));
            Rational val = 0;
            for (size_t i = 0; i < V.dim(); ++i)
                for (size_t j = 0; j < V.dim(); ++j) val += x[i] * q(i, j) * x[j];
            ++v.psd.samples;
            if (sgn(val) < 0) {
                v.psd.kind = PsdResult::Kind::Fails;
                v.psd.witness = x;
                break;
            }
        }
    }
    return v;
}

inline GeneratedVS direct_sum_vs(const GeneratedVS& V, const GeneratedVS& W) {
    std::vector<GeneratorPlot> gens;
    size_t d = V.dim() + W.dim();
    for (const auto& p : V.generators()) {
        GeneratorPlot g{p.domain_vars, p.components};
        g.components.resize(d);
        gens.push_back(std::move(g));
    }
    for (const auto& q : W.generators()) {
        GeneratorPlot g{q.domain_vars, std::vector<RatAbsExpr>(V.dim())};
        g.components.insert(g.components.end(), q.components.begin(), q.components.end());
        gens.push_back(std::move(g));
    }
    std::vector<Var> params = V.parameters();
    for (const auto& w : W.parameters())
        if (std::find(params.begin(), params.end(), w) == params.end()) params.push_back(w);
    SignContext ctx = V.context();
    for (const auto& [w, s] : W.context().entries()) ctx.set(w, s);
    return GeneratedVS(d, std::move(gens), V.label() + "+" + W.label(), params, ctx);
}

// Index (i, j) of the tensor product lives at i * dim(W) + j.
inline std::vector<RatAbsExpr> tensor_components(const std::vector<RatAbsExpr>& a, const std::vector<RatAbsExpr>& b) {
    std::vector<RatAbsExpr> out(a.size() * b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i].is_zero()) continue;
        for (size_t j = 0; j < b.size(); ++j)
            if (!b[j].is_zero()) out[i * b.size() + j] = a[i] * b[j];
    }
    return out;
}

inline GeneratedVS tensor_vs(const GeneratedVS& V, const GeneratedVS& W) {
    std::vector<Var> params = V.parameters();
    for (const auto& w : W.parameters())
        if (std::find(params.begin(), params.end(), w) == params.end()) params.push_back(w);
    std::set<Var> pset(params.begin(), params.end());
    std::vector<GeneratorPlot> gens;
    for (const auto& p : V.generators()) {
        std::set<Var> taken = pset;
        taken.insert(p.domain_vars.begin(), p.domain_vars.end());
        for (const auto& q0 : W.generators()) {
            GeneratorPlot q = rename_apart(q0, taken);
            GeneratorPlot g{p.domain_vars, tensor_components(p.components, q.components)};
            g.domain_vars.insert(g.domain_vars.end(), q.domain_vars.begin(), q.domain_vars.end());
            gens.push_back(std::move(g));
        }
        for (size_t k = 0; k < W.dim(); ++k)
            gens.push_back({p.domain_vars, tensor_components(p.components, basis_vector(k, W.dim()))});
    }
    for (const auto& q : W.generators())
        for (size_t k = 0; k < V.dim(); ++k)
            gens.push_back({q.domain_vars, tensor_components(basis_vector(k, V.dim()), q.components)});
    SignContext ctx = V.context();
    for (const auto& [w, s] : W.context().entries()) ctx.set(w, s);
    return GeneratedVS(V.dim() * W.dim(), std::move(gens), V.label() + "*" + W.label(), params, ctx);
}

}  // namespace pblab
