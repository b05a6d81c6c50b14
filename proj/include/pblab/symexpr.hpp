#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pblab/error.hpp"
#include "pblab/rational.hpp"
#include "pblab/univariate.hpp"

namespace pblab {

using Var = std::string;

enum class Sign { Neg, Zero, Pos, Any };

inline const char* to_string(Sign s) {
    switch (s) {
    case Sign::Neg: return "Neg";
    case Sign::Zero: return "Zero";
    case Sign::Pos: return "Pos";
    case Sign::Any: return "Any";
    }
    return "Any";
}

class SignContext {
public:
    SignContext() = default;

    SignContext& set(const Var& v, Sign s) {
        signs_[v] = s;
        return *this;
    }
    Sign of(const Var& v) const {
        auto it = signs_.find(v);
        return it == signs_.end() ? Sign::Any : it->second;
    }
    const std::map<Var, Sign>& entries() const { return signs_; }

    friend bool operator==(const SignContext&, const SignContext&) = default;

private:
    std::map<Var, Sign> signs_;
};

// Monomial times a product of distinct |v| factors.
struct TermKey {
    std::map<Var, unsigned> powers;
    std::set<Var> abs_vars;

    friend auto operator<=>(const TermKey&, const TermKey&) = default;
    friend bool operator==(const TermKey&, const TermKey&) = default;

    bool is_constant() const { return powers.empty() && abs_vars.empty(); }
    unsigned degree() const {
        unsigned d = static_cast<unsigned>(abs_vars.size());
        for (const auto& [v, e] : powers) d += e;
        return d;
    }
};

inline TermKey multiply(const TermKey& a, const TermKey& b) {
    TermKey out = a;
    for (const auto& [v, e] : b.powers) out.powers[v] += e;
    for (const auto& v : b.abs_vars) {
        if (out.abs_vars.erase(v))
            out.powers[v] += 2;
        else
            out.abs_vars.insert(v);
    }
    return out;
}

class AbsPolyExpr {
public:
    using TermMap = std::map<TermKey, Rational>;

    AbsPolyExpr() = default;
    explicit AbsPolyExpr(const Rational& c) { add_term(TermKey{}, c); }

    static AbsPolyExpr constant(const Rational& c) { return AbsPolyExpr(c); }
    static AbsPolyExpr variable(const Var& v) {
        AbsPolyExpr e;
        TermKey k;
        k.powers[v] = 1;
        e.add_term(k, 1);
        return e;
    }
    static AbsPolyExpr abs_variable(const Var& v) {
        AbsPolyExpr e;
        TermKey k;
        k.abs_vars.insert(v);
        e.add_term(k, 1);
        return e;
    }
    static AbsPolyExpr term(const Rational& c, const TermKey& k) {
        AbsPolyExpr e;
        e.add_term(k, c);
        return e;
    }

    void add_term(const TermKey& k, const Rational& c) {
        if (sgn(c) == 0) return;
        auto [it, inserted] = terms_.try_emplace(k, c);
        if (!inserted) {
            it->second += c;
            if (sgn(it->second) == 0) terms_.erase(it);
        }
    }

    const TermMap& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }
    bool is_constant() const { return terms_.empty() || (terms_.size() == 1 && terms_.begin()->first.is_constant()); }
    std::optional<Rational> constant_value() const {
        if (terms_.empty()) return Rational(0);
        if (is_constant()) return terms_.begin()->second;
        return std::nullopt;
    }
    bool is_abs_free() const {
        for (const auto& [k, c] : terms_)
            if (!k.abs_vars.empty()) return false;
        return true;
    }
    std::set<Var> variables() const {
        std::set<Var> out;
        for (const auto& [k, c] : terms_) {
            for (const auto& [v, e] : k.powers) out.insert(v);
            out.insert(k.abs_vars.begin(), k.abs_vars.end());
        }
        return out;
    }

    AbsPolyExpr& operator+=(const AbsPolyExpr& o) {
        for (const auto& [k, c] : o.terms_) add_term(k, c);
        return *this;
    }
    AbsPolyExpr& operator-=(const AbsPolyExpr& o) {
        for (const auto& [k, c] : o.terms_) add_term(k, -c);
        return *this;
    }
    AbsPolyExpr& operator*=(const Rational& s) {
        if (sgn(s) == 0) {
            terms_.clear();
            return *this;
        }
        for (auto& [k, c] : terms_) c *= s;
        return *this;
    }
    friend AbsPolyExpr operator+(AbsPolyExpr a, const AbsPolyExpr& b) { return a += b; }
    friend AbsPolyExpr operator-(AbsPolyExpr a, const AbsPolyExpr& b) { return a -= b; }
    friend AbsPolyExpr operator-(AbsPolyExpr a) { return a *= Rational(-1); }
    friend AbsPolyExpr operator*(AbsPolyExpr a, const Rational& s) { return a *= s; }
    friend AbsPolyExpr operator*(const AbsPolyExpr& a, const AbsPolyExpr& b) {
        AbsPolyExpr out;
        for (const auto& [ka, ca] : a.terms_)
            for (const auto& [kb, cb] : b.terms_) out.add_term(multiply(ka, kb), ca * cb);
        return out;
    }
    AbsPolyExpr& operator*=(const AbsPolyExpr& o) { return *this = *this * o; }

    AbsPolyExpr pow(unsigned n) const {
        AbsPolyExpr out(1);
        for (unsigned i = 0; i < n; ++i) out *= *this;
        return out;
    }

    friend bool operator==(const AbsPolyExpr&, const AbsPolyExpr&) = default;

    std::string str() const;

private:
    TermMap terms_;
};

namespace detail {

inline std::string factor_string(const TermKey& k) {
    std::string out;
    auto append = [&](const std::string& f) {
        if (!out.empty()) out += "*";
        out += f;
    };
    for (const auto& [v, e] : k.powers) append(e == 1 ? v : v + "^" + std::to_string(e));
    for (const auto& v : k.abs_vars) append("abs(" + v + ")");
    return out;
}

inline std::string term_string(const TermKey& k, const Rational& c) {
    if (k.is_constant()) return c.get_str();
    std::string f = factor_string(k);
    if (c == 1) return f;
    if (c == -1) return "-" + f;
    return c.get_str() + "*" + f;
}

}  // namespace detail

inline std::string AbsPolyExpr::str() const {
    if (terms_.empty()) return "0";
    std::string out;
    bool first = true;
    for (const auto& [k, c] : terms_) {
        if (first) {
            out = detail::term_string(k, c);
            first = false;
        } else if (sgn(c) < 0) {
            out += " - " + detail::term_string(k, Rational(-c));
        } else {
            out += " + " + detail::term_string(k, c);
        }
    }
    return out;
}

inline std::ostream& operator<<(std::ostream& os, const AbsPolyExpr& e) { return os << e.str(); }

// Rewrites |u| by the sign of u in ctx; Zero kills every term mentioning u.
inline AbsPolyExpr normalize(const AbsPolyExpr& e, const SignContext& ctx) {
    AbsPolyExpr out;
    for (const auto& [key, c] : e.terms()) {
        TermKey k;
        Rational coef = c;
        bool zero = false;
        for (const auto& [v, p] : key.powers) {
            if (ctx.of(v) == Sign::Zero) {
                zero = true;
                break;
            }
            k.powers[v] = p;
        }
        if (zero) continue;
        for (const auto& v : key.abs_vars) {
            Sign s = ctx.of(v);
            if (s == Sign::Zero) {
                zero = true;
                break;
            }
            if (s == Sign::Any) {
                k.abs_vars.insert(v);
                continue;
            }
            k.powers[v] += 1;
            if (s == Sign::Neg) coef = -coef;
        }
        if (!zero) out.add_term(k, coef);
    }
    return out;
}

inline bool is_smooth(const AbsPolyExpr& e, const SignContext& ctx) { return normalize(e, ctx).is_abs_free(); }

// Smooth in the listed variables; |w| factors of other variables are treated as coefficients.
inline bool is_smooth_in(const AbsPolyExpr& e, const SignContext& ctx, const std::set<Var>& vars) {
    AbsPolyExpr n = normalize(e, ctx);
    for (const auto& [k, c] : n.terms())
        for (const auto& v : k.abs_vars)
            if (vars.count(v)) return false;
    return true;
}

// +1 if e >= 0 on ctx, -1 if e <= 0, 0 if e is the zero expression; nullopt if undecided.
inline std::optional<int> definite_sign(const AbsPolyExpr& e, const SignContext& ctx) {
    AbsPolyExpr n = normalize(e, ctx);
    if (n.is_zero()) return 0;
    bool nonneg = true, nonpos = true;
    for (const auto& [k, c] : n.terms()) {
        int s = sgn(c);
        bool definite = true;
        for (const auto& [v, p] : k.powers) {
            if (p % 2 == 0) continue;
            Sign sv = ctx.of(v);
            if (sv == Sign::Neg)
                s = -s;
            else if (sv != Sign::Pos)
                definite = false;
        }
        if (!definite) return std::nullopt;
        if (s > 0) nonpos = false;
        if (s < 0) nonneg = false;
    }
    if (nonneg) return 1;
    if (nonpos) return -1;
    return std::nullopt;
}

// Splits e as sum_K coeff_K * K where K only mentions `vars`.
inline std::map<TermKey, AbsPolyExpr> split_by(const AbsPolyExpr& e, const std::set<Var>& vars) {
    std::map<TermKey, AbsPolyExpr> out;
    for (const auto& [k, c] : e.terms()) {
        TermKey in, rest;
        for (const auto& [v, p] : k.powers) (vars.count(v) ? in : rest).powers[v] = p;
        for (const auto& v : k.abs_vars) (vars.count(v) ? in : rest).abs_vars.insert(v);
        out[in].add_term(rest, c);
    }
    for (auto it = out.begin(); it != out.end();) it = it->second.is_zero() ? out.erase(it) : std::next(it);
    return out;
}

inline AbsPolyExpr rename(const AbsPolyExpr& e, const std::map<Var, Var>& names) {
    auto mapped = [&](const Var& v) {
        auto it = names.find(v);
        return it == names.end() ? v : it->second;
    };
    AbsPolyExpr out;
    for (const auto& [k, c] : e.terms()) {
        AbsPolyExpr t(c);
        for (const auto& [v, p] : k.powers) t *= AbsPolyExpr::variable(mapped(v)).pow(p);
        for (const auto& v : k.abs_vars) t *= AbsPolyExpr::abs_variable(mapped(v));
        out += t;
    }
    return out;
}

inline Rational evaluate(const AbsPolyExpr& e, const std::map<Var, Rational>& point) {
    Rational total = 0;
    for (const auto& [k, c] : e.terms()) {
        Rational t = c;
        for (const auto& [v, p] : k.powers) {
            auto it = point.find(v);
            if (it == point.end()) throw Error(ErrorKind::ShapeMismatch, "no value for variable " + v);
            for (unsigned i = 0; i < p; ++i) t *= it->second;
        }
        for (const auto& v : k.abs_vars) {
            auto it = point.find(v);
            if (it == point.end()) throw Error(ErrorKind::ShapeMismatch, "no value for variable " + v);
            t *= abs_value(it->second);
        }
        total += t;
    }
    return total;
}

// Abs-free expression in at most the single variable v, as a dense polynomial.
inline std::optional<UniPoly> to_unipoly(const AbsPolyExpr& e, const Var& v) {
    std::vector<Rational> c;
    for (const auto& [k, coef] : e.terms()) {
        if (!k.abs_vars.empty()) return std::nullopt;
        unsigned p = 0;
        for (const auto& [w, e2] : k.powers) {
            if (w != v) return std::nullopt;
            p = e2;
        }
        if (c.size() <= p) c.resize(p + 1);
        c[p] += coef;
    }
    return UniPoly(std::move(c));
}

inline AbsPolyExpr from_unipoly(const UniPoly& p, const Var& v) {
    AbsPolyExpr out;
    for (int i = 0; i <= p.degree(); ++i) {
        TermKey k;
        if (i > 0) k.powers[v] = static_cast<unsigned>(i);
        out.add_term(k, p.coeffs()[i]);
    }
    return out;
}

// num/den with an abs-free, nonzero denominator.
class RatAbsExpr {
public:
    RatAbsExpr() : den_(1) {}
    RatAbsExpr(const AbsPolyExpr& num) : num_(num), den_(1) {}
    RatAbsExpr(const Rational& c) : num_(c), den_(1) {}

    static RatAbsExpr constant(long p, long q = 1) { return RatAbsExpr(make_rational(p, q)); }
    static RatAbsExpr variable(const Var& v) { return RatAbsExpr(AbsPolyExpr::variable(v)); }
    static RatAbsExpr abs_variable(const Var& v) { return RatAbsExpr(AbsPolyExpr::abs_variable(v)); }

    static RatAbsExpr fraction(const AbsPolyExpr& num, const AbsPolyExpr& den) {
        if (den.is_zero()) throw Error(ErrorKind::DivisionByZero, "zero denominator");
        if (!den.is_abs_free()) return RatAbsExpr(num) / RatAbsExpr(den);
        RatAbsExpr r;
        r.num_ = num;
        r.den_ = den;
        r.simplify();
        return r;
    }

    const AbsPolyExpr& num() const { return num_; }
    const AbsPolyExpr& den() const { return den_; }
    bool is_zero() const { return num_.is_zero(); }
    bool is_polynomial() const { return den_ == AbsPolyExpr(1); }
    std::optional<Rational> constant_value() const {
        auto n = num_.constant_value();
        auto d = den_.constant_value();
        if (!n || !d) return std::nullopt;
        return Rational(*n / *d);
    }
    std::set<Var> variables() const {
        std::set<Var> v = num_.variables();
        for (const auto& w : den_.variables()) v.insert(w);
        return v;
    }

    friend RatAbsExpr operator+(const RatAbsExpr& a, const RatAbsExpr& b) {
        if (a.den_ == b.den_) return fraction(a.num_ + b.num_, a.den_);
        return fraction(a.num_ * b.den_ + b.num_ * a.den_, a.den_ * b.den_);
    }
    friend RatAbsExpr operator-(const RatAbsExpr& a) {
        RatAbsExpr r = a;
        r.num_ = -r.num_;
        return r;
    }
    friend RatAbsExpr operator-(const RatAbsExpr& a, const RatAbsExpr& b) { return a + (-b); }
    friend RatAbsExpr operator*(const RatAbsExpr& a, const RatAbsExpr& b) {
        if (a.is_zero() || b.is_zero()) return RatAbsExpr();
        return fraction(a.num_ * b.num_, a.den_ * b.den_);
    }
    friend RatAbsExpr operator/(const RatAbsExpr& a, const RatAbsExpr& b) { return a * b.inverse(); }
    RatAbsExpr& operator+=(const RatAbsExpr& o) { return *this = *this + o; }
    RatAbsExpr& operator-=(const RatAbsExpr& o) { return *this = *this - o; }
    RatAbsExpr& operator*=(const RatAbsExpr& o) { return *this = *this * o; }

    // Removes |u| factors from the new denominator by multiplying with conjugates. The
    // conjugate can add removable zeros (1/(1+|x|) = (1-|x|)/(1-x^2)), so callers invert
    // abs-carrying expressions only on cells where the sign of x is fixed.
    RatAbsExpr inverse() const {
        if (num_.is_zero()) throw Error(ErrorKind::DivisionByZero, "inverse of zero");
        AbsPolyExpr top = den_;
        AbsPolyExpr bottom = num_;
        while (!bottom.is_abs_free()) {
            Var u;
            for (const auto& [k, c] : bottom.terms())
                if (!k.abs_vars.empty()) {
                    u = *k.abs_vars.begin();
                    break;
                }
            AbsPolyExpr p, q;
            for (const auto& [k, c] : bottom.terms()) {
                if (k.abs_vars.count(u)) {
                    TermKey k2 = k;
                    k2.abs_vars.erase(u);
                    q.add_term(k2, c);
                } else {
                    p.add_term(k, c);
                }
            }
            AbsPolyExpr conj = p - q * AbsPolyExpr::abs_variable(u);
            top *= conj;
            bottom *= conj;
            if (bottom.is_zero()) throw Error(ErrorKind::DivisionByZero, "denominator vanishes on a half-space");
        }
        return fraction(top, bottom);
    }

    // Semantic equality by cross-multiplication.
    friend bool operator==(const RatAbsExpr& a, const RatAbsExpr& b) {
        if (a.den_ == b.den_) return a.num_ == b.num_;
        return a.num_ * b.den_ == b.num_ * a.den_;
    }

    std::string str() const {
        if (is_polynomial()) return num_.str();
        std::string n = num_.str();
        if (num_.terms().size() > 1) n = "(" + n + ")";
        std::string d = den_.str();
        bool bare = den_.terms().size() == 1 && den_.terms().begin()->second == 1;
        if (!bare) d = "(" + d + ")";
        return n + "/" + d;
    }

private:
    void simplify();

    AbsPolyExpr num_;
    AbsPolyExpr den_;
};

inline void RatAbsExpr::simplify() {
    if (num_.is_zero()) {
        den_ = AbsPolyExpr(1);
        return;
    }
    // cancel the common monomial content
    std::map<Var, unsigned> common;
    bool first = true;
    auto absorb = [&](const AbsPolyExpr& e) {
        for (const auto& [k, c] : e.terms()) {
            if (first) {
                common = k.powers;
                first = false;
                continue;
            }
            for (auto it = common.begin(); it != common.end();) {
                auto f = k.powers.find(it->first);
                if (f == k.powers.end()) {
                    it = common.erase(it);
                } else {
                    it->second = std::min(it->second, f->second);
                    ++it;
                }
            }
        }
    };
    absorb(num_);
    absorb(den_);
    if (!common.empty()) {
        auto strip = [&](const AbsPolyExpr& e) {
            AbsPolyExpr out;
            for (const auto& [k, c] : e.terms()) {
                TermKey k2 = k;
                for (const auto& [v, p] : common) {
                    k2.powers[v] -= p;
                    if (k2.powers[v] == 0) k2.powers.erase(v);
                }
                out.add_term(k2, c);
            }
            return out;
        };
        num_ = strip(num_);
        den_ = strip(den_);
    }
    // univariate gcd when both sides are polynomials in one variable
    std::set<Var> vars = num_.variables();
    for (const auto& v : den_.variables()) vars.insert(v);
    if (vars.size() == 1 && num_.is_abs_free()) {
        const Var& v = *vars.begin();
        auto pn = to_unipoly(num_, v);
        auto pd = to_unipoly(den_, v);
        if (pn && pd) {
            UniPoly g = gcd(*pn, *pd);
            if (g.degree() > 0) {
                num_ = from_unipoly(UniPoly::divmod(*pn, g).first, v);
                den_ = from_unipoly(UniPoly::divmod(*pd, g).first, v);
            }
        }
    }
    Rational lead = den_.terms().rbegin()->second;
    if (lead != 1) {
        Rational inv = 1 / lead;
        num_ *= inv;
        den_ *= inv;
    }
}

inline std::ostream& operator<<(std::ostream& os, const RatAbsExpr& e) { return os << e.str(); }

inline RatAbsExpr normalize(const RatAbsExpr& e, const SignContext& ctx) {
    AbsPolyExpr d = normalize(e.den(), ctx);
    if (d.is_zero()) throw Error(ErrorKind::DivisionByZero, "denominator vanishes under sign context");
    return RatAbsExpr::fraction(normalize(e.num(), ctx), d);
}

inline bool is_smooth(const RatAbsExpr& e, const SignContext& ctx) { return is_smooth(e.num(), ctx); }

inline bool is_smooth_in(const RatAbsExpr& e, const SignContext& ctx, const std::set<Var>& vars) {
    return is_smooth_in(e.num(), ctx, vars);
}

inline RatAbsExpr rename(const RatAbsExpr& e, const std::map<Var, Var>& names) {
    return RatAbsExpr::fraction(rename(e.num(), names), rename(e.den(), names));
}

inline Rational eval_at(const RatAbsExpr& e, const std::map<Var, Rational>& point) {
    Rational d = evaluate(e.den(), point);
    if (sgn(d) == 0) throw Error(ErrorKind::DivisionByZero, "denominator " + e.den().str() + " vanishes");
    return evaluate(e.num(), point) / d;
}

// Point coordinates are matched to the expression's variables in sorted order.
inline Rational eval_at(const RatAbsExpr& e, const std::vector<Rational>& point) {
    std::set<Var> vars = e.variables();
    if (vars.size() > point.size()) throw Error(ErrorKind::ShapeMismatch, "point has too few coordinates");
    std::map<Var, Rational> env;
    size_t i = 0;
    for (const auto& v : vars) env[v] = point[i++];
    return eval_at(e, env);
}

// |r| kept inside the class, or SubstitutionOutOfClass.
inline RatAbsExpr abs_of(const RatAbsExpr& r, const SignContext& ctx) {
    if (auto c = r.constant_value()) return RatAbsExpr(abs_value(*c));
    auto sn = definite_sign(r.num(), ctx);
    auto sd = definite_sign(r.den(), ctx);
    if (sn && sd) {
        int s = *sn * *sd;
        if (s == 0) return RatAbsExpr();
        return s > 0 ? r : -r;
    }
    if (sd && *sd != 0 && r.num().terms().size() == 1) {
        const auto& [k, c] = *r.num().terms().begin();
        AbsPolyExpr out(abs_value(c));
        std::set<Var> vars;
        for (const auto& [v, p] : k.powers) vars.insert(v);
        vars.insert(k.abs_vars.begin(), k.abs_vars.end());
        for (const auto& v : vars) {
            auto it = k.powers.find(v);
            unsigned a = (it == k.powers.end() ? 0 : it->second) + (k.abs_vars.count(v) ? 1 : 0);
            out *= AbsPolyExpr::variable(v).pow(a - a % 2);
            if (a % 2 == 1) out *= AbsPolyExpr::abs_variable(v);
        }
        RatAbsExpr den = *sd > 0 ? RatAbsExpr(r.den()) : RatAbsExpr(-r.den());
        return normalize(RatAbsExpr(out) / den, ctx);
    }
    throw Error(ErrorKind::SubstitutionOutOfClass, "abs(" + r.str() + ") is sign-indefinite");
}

inline RatAbsExpr substitute(const AbsPolyExpr& e, const std::map<Var, RatAbsExpr>& sigma,
                             const SignContext& ctx = {}) {
    RatAbsExpr out;
    for (const auto& [k, c] : e.terms()) {
        RatAbsExpr t(c);
        for (const auto& [v, p] : k.powers) {
            auto it = sigma.find(v);
            RatAbsExpr base = it == sigma.end() ? RatAbsExpr::variable(v) : it->second;
            for (unsigned i = 0; i < p; ++i) t *= base;
        }
        for (const auto& v : k.abs_vars) {
            auto it = sigma.find(v);
            t *= it == sigma.end() ? RatAbsExpr::abs_variable(v) : abs_of(it->second, ctx);
        }
        out += t;
    }
    return normalize(out, ctx);
}

inline RatAbsExpr substitute(const RatAbsExpr& e, const std::map<Var, RatAbsExpr>& sigma,
                             const SignContext& ctx = {}) {
    RatAbsExpr d = substitute(e.den(), sigma, ctx);
    if (d.is_zero()) throw Error(ErrorKind::DivisionByZero, "denominator vanishes after substitution");
    return substitute(e.num(), sigma, ctx) / d;
}

// Substitutes v := q exactly.
inline RatAbsExpr at_point(const RatAbsExpr& e, const Var& v, const Rational& q) {
    return substitute(e, {{v, RatAbsExpr(q)}});
}

}  // namespace pblab
