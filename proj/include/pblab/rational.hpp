#pragma once

#include <gmpxx.h>

#include <random>
#include <string>

namespace pblab {

using Rational = mpq_class;

inline Rational make_rational(long num, long den = 1) {
    Rational r(num, den);
    r.canonicalize();
    return r;
}

inline std::string to_string(const Rational& r) { return r.get_str(); }

inline int sign_of(const Rational& r) { return sgn(r); }

inline Rational abs_value(const Rational& r) { return sgn(r) < 0 ? Rational(-r) : r; }

// Nonzero-safe small random rational with |num| <= max_num and den in [1, max_den].
inline Rational random_rational(std::mt19937_64& rng, long max_num, long max_den) {
    std::uniform_int_distribution<long> num(-max_num, max_num);
    std::uniform_int_distribution<long> den(1, max_den);
    return make_rational(num(rng), den(rng));
}

}  // namespace pblab
