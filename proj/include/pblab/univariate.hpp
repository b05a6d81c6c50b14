#pragma once

#include <compare>
#include <string>
#include <utility>
#include <vector>

#include "pblab/error.hpp"
#include "pblab/rational.hpp"

namespace pblab {

// Extended rational: -inf, a finite value, or +inf.
struct Bound {
    enum class Kind { NegInf, Finite, PosInf };
    Kind kind = Kind::Finite;
    Rational value = 0;

    static Bound neg_inf() { return {Kind::NegInf, 0}; }
    static Bound pos_inf() { return {Kind::PosInf, 0}; }
    static Bound finite(const Rational& q) { return {Kind::Finite, q}; }

    bool is_finite() const { return kind == Kind::Finite; }

    std::string str() const {
        if (kind == Kind::NegInf) return "-inf";
        if (kind == Kind::PosInf) return "inf";
        return value.get_str();
    }

    friend bool operator==(const Bound& a, const Bound& b) {
        if (a.kind != b.kind) return false;
        return a.kind != Kind::Finite || a.value == b.value;
    }
    friend bool operator<(const Bound& a, const Bound& b) {
        if (a.kind != b.kind) return static_cast<int>(a.kind) < static_cast<int>(b.kind);
        return a.kind == Kind::Finite && a.value < b.value;
    }
    friend bool operator<=(const Bound& a, const Bound& b) { return a < b || a == b; }
};

// Dense univariate polynomial over Q; c[i] is the coefficient of x^i.
class UniPoly {
public:
    UniPoly() = default;
    explicit UniPoly(std::vector<Rational> coeffs) : c_(std::move(coeffs)) { trim(); }

    static UniPoly constant(const Rational& a) { return UniPoly(std::vector<Rational>{a}); }
    static UniPoly x() { return UniPoly(std::vector<Rational>{Rational(0), Rational(1)}); }
    // x - a
    static UniPoly linear_root(const Rational& a) { return UniPoly(std::vector<Rational>{Rational(-a), Rational(1)}); }

    int degree() const { return static_cast<int>(c_.size()) - 1; }
    bool is_zero() const { return c_.empty(); }
    const Rational& lead() const { return c_.back(); }
    const std::vector<Rational>& coeffs() const { return c_; }
    Rational coeff(int i) const { return i >= 0 && i < static_cast<int>(c_.size()) ? c_[i] : Rational(0); }

    Rational operator()(const Rational& x) const {
        Rational acc = 0;
        for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
        return acc;
    }

    friend UniPoly operator+(const UniPoly& a, const UniPoly& b) {
        std::vector<Rational> out(std::max(a.c_.size(), b.c_.size()));
        for (size_t i = 0; i < out.size(); ++i) out[i] = a.coeff(static_cast<int>(i)) + b.coeff(static_cast<int>(i));
        return UniPoly(std::move(out));
    }
    friend UniPoly operator-(const UniPoly& a) {
        std::vector<Rational> out = a.c_;
        for (auto& v : out) v = -v;
        return UniPoly(std::move(out));
    }
    friend UniPoly operator-(const UniPoly& a, const UniPoly& b) { return a + (-b); }
    friend UniPoly operator*(const UniPoly& a, const UniPoly& b) {
        if (a.is_zero() || b.is_zero()) return {};
        std::vector<Rational> out(a.c_.size() + b.c_.size() - 1);
        for (size_t i = 0; i < a.c_.size(); ++i)
            for (size_t j = 0; j < b.c_.size(); ++j) out[i + j] += a.c_[i] * b.c_[j];
        return UniPoly(std::move(out));
    }
    friend bool operator==(const UniPoly& a, const UniPoly& b) { return a.c_ == b.c_; }

    static std::pair<UniPoly, UniPoly> divmod(const UniPoly& a, const UniPoly& b) {
        if (b.is_zero()) throw Error(ErrorKind::DivisionByZero, "polynomial division by zero");
        std::vector<Rational> rem = a.c_;
        int db = b.degree();
        if (a.degree() < db) return {UniPoly(), a};
        std::vector<Rational> quo(a.degree() - db + 1);
        for (int i = a.degree(); i >= db; --i) {
            Rational q = rem[i] / b.lead();
            quo[i - db] = q;
            if (sgn(q) == 0) continue;
            for (int j = 0; j <= db; ++j) rem[i - db + j] -= q * b.c_[j];
        }
        return {UniPoly(std::move(quo)), UniPoly(std::move(rem))};
    }

    UniPoly derivative() const {
        if (c_.size() <= 1) return {};
        std::vector<Rational> out(c_.size() - 1);
        for (size_t i = 1; i < c_.size(); ++i) out[i - 1] = c_[i] * static_cast<long>(i);
        return UniPoly(std::move(out));
    }

    UniPoly monic() const {
        if (is_zero()) return {};
        std::vector<Rational> out = c_;
        Rational l = lead();
        for (auto& v : out) v /= l;
        return UniPoly(std::move(out));
    }

private:
    void trim() {
        while (!c_.empty() && sgn(c_.back()) == 0) c_.pop_back();
    }
    std::vector<Rational> c_;
};

inline UniPoly gcd(UniPoly a, UniPoly b) {
    while (!b.is_zero()) {
        UniPoly r = UniPoly::divmod(a, b).second;
        a = std::move(b);
        b = std::move(r);
    }
    return a.monic();
}

// Sign of p at an extended point (for +-inf, the sign of the leading behaviour).
inline int sign_at(const UniPoly& p, const Bound& at) {
    if (p.is_zero()) return 0;
    if (at.is_finite()) return sgn(p(at.value));
    int s = sgn(p.lead());
    if (at.kind == Bound::Kind::NegInf && p.degree() % 2 == 1) s = -s;
    return s;
}

// Number of distinct real roots of p in the open interval (lo, hi). p must be nonzero.
inline int count_roots_open(UniPoly p, const Bound& lo, const Bound& hi) {
    if (p.is_zero()) throw Error(ErrorKind::DivisionByZero, "root count of the zero polynomial");
    if (lo.is_finite())
        while (p.degree() > 0 && sgn(p(lo.value)) == 0) p = UniPoly::divmod(p, UniPoly::linear_root(lo.value)).first;
    if (hi.is_finite())
        while (p.degree() > 0 && sgn(p(hi.value)) == 0) p = UniPoly::divmod(p, UniPoly::linear_root(hi.value)).first;
    if (p.degree() <= 0) return 0;
    std::vector<UniPoly> seq{p, p.derivative()};
    while (!seq.back().is_zero()) {
        UniPoly r = UniPoly::divmod(seq[seq.size() - 2], seq.back()).second;
        if (r.is_zero()) break;
        seq.push_back(-r);
    }
    auto variations = [&](const Bound& at) {
        int count = 0, last = 0;
        for (const auto& s : seq) {
            int v = sign_at(s, at);
            if (v == 0) continue;
            if (last != 0 && v != last) ++count;
            last = v;
        }
        return count;
    };
    return variations(lo) - variations(hi);
}

// One-sided limit of num/den at `at`; side = +1 approaches from above, -1 from below.
inline Bound limit_of(UniPoly num, UniPoly den, const Bound& at, int side) {
    if (den.is_zero()) throw Error(ErrorKind::DivisionByZero, "limit with zero denominator");
    if (num.is_zero()) return Bound::finite(0);
    UniPoly g = gcd(num, den);
    num = UniPoly::divmod(num, g).first;
    den = UniPoly::divmod(den, g).first;
    if (!at.is_finite()) {
        int dn = num.degree(), dd = den.degree();
        if (dn < dd) return Bound::finite(0);
        if (dn == dd) return Bound::finite(num.lead() / den.lead());
        int s = sgn(num.lead()) * sgn(den.lead());
        if (at.kind == Bound::Kind::NegInf && (dn - dd) % 2 == 1) s = -s;
        return s > 0 ? Bound::pos_inf() : Bound::neg_inf();
    }
    const Rational& a = at.value;
    if (sgn(den(a)) != 0) return Bound::finite(num(a) / den(a));
    int m = 0;
    while (sgn(den(a)) == 0) {
        den = UniPoly::divmod(den, UniPoly::linear_root(a)).first;
        ++m;
    }
    int s = sgn(num(a)) * sgn(den(a));
    if (side < 0 && m % 2 == 1) s = -s;
    return s > 0 ? Bound::pos_inf() : Bound::neg_inf();
}

}  // namespace pblab
