#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "pblab/linalg.hpp"
#include "pblab/symexpr.hpp"

using namespace pblab;

namespace {

AbsPolyExpr V(const char* n) { return AbsPolyExpr::variable(n); }
AbsPolyExpr A(const char* n) { return AbsPolyExpr::abs_variable(n); }
AbsPolyExpr C(long p, long q = 1) { return AbsPolyExpr(make_rational(p, q)); }

SignContext random_ctx(std::mt19937_64& rng, int nvars) {
    std::uniform_int_distribution<int> s(0, 3);
    SignContext ctx;
    for (int i = 0; i < nvars; ++i) ctx.set(oracle::var_name(i), static_cast<Sign>(s(rng)));
    return ctx;
}

std::vector<Rational> point_in(const SignContext& ctx, int nvars, std::mt19937_64& rng) {
    std::vector<Rational> p;
    for (int i = 0; i < nvars; ++i) {
        Rational r = oracle::random_offset(rng);
        switch (ctx.of(oracle::var_name(i))) {
        case Sign::Pos: r = abs_value(r); break;
        case Sign::Neg: r = -abs_value(r); break;
        case Sign::Zero: r = 0; break;
        case Sign::Any: break;
        }
        p.push_back(r);
    }
    return p;
}

std::map<Var, Rational> env(const std::vector<Rational>& p) {
    std::map<Var, Rational> out;
    for (size_t i = 0; i < p.size(); ++i) out[oracle::var_name(static_cast<int>(i))] = p[i];
    return out;
}

}  // namespace

TEST(Normalize, AbsSquaredIsSquare) {
    EXPECT_EQ(A("u") * A("u"), V("u") * V("u"));
    EXPECT_TRUE((A("u") * A("u")).is_abs_free());
}

TEST(Normalize, Cancellation) {
    AbsPolyExpr e = V("u") * A("v") + C(-1) * V("u") * A("v");
    EXPECT_TRUE(e.is_zero());
}

TEST(Normalize, SignSubstitution) {
    SignContext ctx;
    ctx.set("u", Sign::Neg);
    EXPECT_EQ(normalize(A("u"), ctx), -V("u"));
    ctx.set("u", Sign::Pos);
    EXPECT_EQ(normalize(A("u"), ctx), V("u"));
    ctx.set("u", Sign::Zero);
    EXPECT_TRUE(normalize(A("u") + V("u") * V("w"), ctx).is_zero());
}

TEST(IsSmooth, Examples) {
    SignContext any;
    EXPECT_TRUE(is_smooth(V("u"), any));
    EXPECT_FALSE(is_smooth(A("v"), any));
    EXPECT_FALSE(is_smooth(V("u") * A("v"), any));
    EXPECT_TRUE(is_smooth(V("u") * V("u") + A("u") * A("u"), any));
    EXPECT_EQ(V("u") * V("u") + A("u") * A("u"), C(2) * V("u") * V("u"));
}

TEST(IsSmooth, ThirdDifferenceOfUAbsVDiverges) {
    // u|v| along v at (1, 0): the second difference grows 4x per refinement, the third 16x
    auto g = [](const Rational& t) { return Rational(abs_value(t)); };
    oracle::Divergence d = oracle::probe_line(g);
    EXPECT_TRUE(d.diverges);
    EXPECT_EQ(d.order, 3);
}

TEST(Substitute, Examples) {
    AbsPolyExpr e = V("u") * A("v");
    EXPECT_EQ(substitute(e, {{"v", RatAbsExpr(Rational(1))}}), RatAbsExpr::variable("u"));
    EXPECT_TRUE(substitute(e, {{"u", RatAbsExpr(Rational(0))}}).is_zero());
    try {
        substitute(e, {{"v", RatAbsExpr(V("u") + V("w"))}});
        FAIL() << "expected SubstitutionOutOfClass";
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::SubstitutionOutOfClass);
    }
}

TEST(Substitute, SignDefiniteCompositesStayInClass) {
    SignContext ctx;
    ctx.set("x", Sign::Pos);
    // |x + 1| with x > 0 is x + 1
    RatAbsExpr r = substitute(A("v"), {{"v", RatAbsExpr(V("x") + C(1))}}, ctx);
    EXPECT_EQ(r, RatAbsExpr(V("x") + C(1)));
    // |1/x| with x < 0 is -1/x
    ctx.set("x", Sign::Neg);
    RatAbsExpr inv = RatAbsExpr(C(1)) / RatAbsExpr::variable("x");
    EXPECT_EQ(substitute(A("v"), {{"v", inv}}, ctx), -inv);
    // |2 x^3 w| keeps one |x| and |w|
    RatAbsExpr m = substitute(A("v"), {{"v", RatAbsExpr(C(-2) * V("x").pow(3) * V("w"))}});
    EXPECT_EQ(m, RatAbsExpr(C(2) * V("x").pow(2) * A("x") * A("w")));
}

TEST(EvalAt, Examples) {
    EXPECT_EQ(eval_at(RatAbsExpr(V("u") * A("v")), std::vector<Rational>{2, -3}), 6);
    EXPECT_EQ(eval_at(RatAbsExpr(V("u") * V("u")), std::vector<Rational>{make_rational(1, 2)}), make_rational(1, 4));
    RatAbsExpr inv = RatAbsExpr(C(1)) / RatAbsExpr::variable("u");
    try {
        eval_at(inv, std::vector<Rational>{0});
        FAIL() << "expected DivisionByZero";
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::DivisionByZero);
    }
}

TEST(RatAbs, SimplifiesCommonFactors) {
    RatAbsExpr a = RatAbsExpr::fraction(V("x") * V("x") - C(1), V("x") - C(1));
    EXPECT_TRUE(a.is_polynomial());
    EXPECT_EQ(a.num(), V("x") + C(1));
    RatAbsExpr b = RatAbsExpr::fraction(C(2) * V("x"), C(4) * V("x") * V("x"));
    EXPECT_EQ(b.str(), "1/2/x");
}

TEST(RatAbs, InverseRationalizesAbs) {
    RatAbsExpr e = RatAbsExpr(C(1) + A("x"));
    RatAbsExpr inv = e.inverse();
    EXPECT_TRUE(inv.den().is_abs_free());
    for (Rational n : {Rational(-3), Rational(1, 2), Rational(2), Rational(5)}) {
        std::map<Var, Rational> p{{"x", n}};
        EXPECT_EQ(eval_at(inv, p) * eval_at(e, p), 1);
    }
}

TEST(RatAbs, Printing) {
    RatAbsExpr e = RatAbsExpr(C(3) * V("x") * A("v") - C(1, 2) * V("y") + C(2));
    EXPECT_EQ(e.str(), "2 + 3*x*abs(v) - 1/2*y");
    RatAbsExpr f = RatAbsExpr(C(1)) / RatAbsExpr(V("x") * V("x") + C(1));
    EXPECT_EQ(f.str(), "1/(1 + x^2)");
    RatAbsExpr g = RatAbsExpr(C(-1)) / RatAbsExpr::variable("x");
    EXPECT_EQ(g.str(), "-1/x");
}

TEST(Univariate, SturmCounts) {
    // (x - 1)(x + 2)(x - 3)
    UniPoly p = UniPoly::linear_root(1) * UniPoly::linear_root(-2) * UniPoly::linear_root(3);
    EXPECT_EQ(count_roots_open(p, Bound::neg_inf(), Bound::pos_inf()), 3);
    EXPECT_EQ(count_roots_open(p, Bound::finite(0), Bound::pos_inf()), 2);
    EXPECT_EQ(count_roots_open(p, Bound::finite(1), Bound::finite(3)), 0);
    EXPECT_EQ(count_roots_open(p * p, Bound::finite(-3), Bound::finite(2)), 2);
    UniPoly q(std::vector<Rational>{1, 0, 1});  // x^2 + 1
    EXPECT_EQ(count_roots_open(q, Bound::neg_inf(), Bound::pos_inf()), 0);
}

TEST(Univariate, Limits) {
    UniPoly one = UniPoly::constant(1), x = UniPoly::x();
    EXPECT_EQ(limit_of(one, x, Bound::finite(0), +1), Bound::pos_inf());
    EXPECT_EQ(limit_of(one, x, Bound::finite(0), -1), Bound::neg_inf());
    EXPECT_EQ(limit_of(one, x, Bound::pos_inf(), -1), Bound::finite(0));
    EXPECT_EQ(limit_of(x * x, x, Bound::neg_inf(), +1), Bound::neg_inf());
    EXPECT_EQ(limit_of(x, x * x, Bound::finite(0), -1), Bound::neg_inf());
}

TEST(Properties, NormalizeIdempotent) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 500; ++i) {
        oracle::RawExpr raw = oracle::random_raw(rng);
        SignContext ctx = random_ctx(rng, raw.nvars);
        AbsPolyExpr once = normalize(oracle::build(raw), ctx);
        EXPECT_EQ(normalize(once, ctx), once);
    }
}

TEST(Properties, NormalizePreservesValuesOnContext) {
    std::mt19937_64 rng(12);
    for (int i = 0; i < 300; ++i) {
        oracle::RawExpr raw = oracle::random_raw(rng);
        SignContext ctx = random_ctx(rng, raw.nvars);
        AbsPolyExpr n = normalize(oracle::build(raw), ctx);
        for (int k = 0; k < 5; ++k) {
            std::vector<Rational> p = point_in(ctx, raw.nvars, rng);
            ASSERT_EQ(evaluate(n, env(p)), oracle::eval_raw(raw, p));
        }
    }
}

TEST(Properties, BuildMatchesRawEvaluation) {
    std::mt19937_64 rng(13);
    for (int i = 0; i < 300; ++i) {
        oracle::RawExpr raw = oracle::random_raw(rng);
        AbsPolyExpr e = oracle::build(raw);
        for (int k = 0; k < 5; ++k) {
            std::vector<Rational> p = point_in(SignContext{}, raw.nvars, rng);
            ASSERT_EQ(evaluate(e, env(p)), oracle::eval_raw(raw, p));
        }
    }
}

TEST(Properties, CommutativeRing) {
    std::mt19937_64 rng(14);
    for (int i = 0; i < 100; ++i) {
        oracle::RawExpr ra = oracle::random_raw(rng), rb = oracle::random_raw(rng), rc = oracle::random_raw(rng);
        ra.nvars = rb.nvars = rc.nvars = 3;
        AbsPolyExpr a = oracle::build(ra), b = oracle::build(rb), c = oracle::build(rc);
        AbsPolyExpr lhs[] = {(a + b) + c, (a * b) * c, a * (b + c), a * b, a + b};
        AbsPolyExpr rhs[] = {a + (b + c), a * (b * c), a * b + a * c, b * a, b + a};
        for (int k = 0; k < 10; ++k) {
            std::map<Var, Rational> p = env(point_in(SignContext{}, 3, rng));
            for (int j = 0; j < 5; ++j) ASSERT_EQ(evaluate(lhs[j], p), evaluate(rhs[j], p));
        }
    }
}

TEST(Properties, SmoothnessAgreesWithFiniteDifferenceOracle) {
    std::mt19937_64 rng(15);
    int smooth = 0, nonsmooth = 0;
    for (int i = 0; i < 250; ++i) {
        oracle::RawExpr raw = oracle::random_raw(rng);
        bool symbolic = is_smooth(oracle::build(raw), SignContext{});
        bool numeric = !oracle::numeric_nonsmooth(raw, rng).diverges;
        ASSERT_EQ(symbolic, numeric) << "case " << i << ": " << oracle::build(raw).str();
        (symbolic ? smooth : nonsmooth)++;
    }
    EXPECT_GT(smooth, 30);
    EXPECT_GT(nonsmooth, 30);
}

TEST(Linalg, RrefAndNullspace) {
    QMatrix m = QMatrix::from_rows({{1, 2, 3}, {2, 4, 6}, {1, 0, 1}}, 3);
    Echelon<Rational> e = rref(m);
    EXPECT_EQ(e.pivots, (std::vector<size_t>{0, 1}));
    auto ns = nullspace(m);
    ASSERT_EQ(ns.size(), 1u);
    EXPECT_EQ(ns[0], (std::vector<Rational>{-1, -1, 1}));
    EXPECT_EQ(rank(m), 2u);
}

TEST(Linalg, InverseAndDeterminant) {
    QMatrix m = QMatrix::from_rows({{2, 1}, {1, 1}}, 2);
    auto inv = inverse(m);
    ASSERT_TRUE(inv.has_value());
    EXPECT_EQ(m * *inv, QMatrix::identity(2));
    EXPECT_EQ(determinant(m), 1);
    EXPECT_FALSE(inverse(QMatrix::from_rows({{1, 2}, {2, 4}}, 2)).has_value());
}

TEST(Linalg, PrincipalMinorSums) {
    QMatrix m = QMatrix::from_rows({{2, 1, 0}, {1, 3, 1}, {0, 1, 4}}, 3);
    auto s = principal_minor_sums(m);
    EXPECT_EQ(s[1], 9);
    EXPECT_EQ(s[2], (6 - 1) + 8 + (12 - 1));
    EXPECT_EQ(s[3], determinant(m));
    EXPECT_TRUE(is_psd(m));
    EXPECT_FALSE(is_psd(QMatrix::from_rows({{1, 2}, {2, 1}}, 2)));
    EXPECT_TRUE(is_psd(QMatrix::from_rows({{1, 1}, {1, 1}}, 2)));
}

TEST(Linalg, SymbolicRank) {
    RatAbsExpr x = RatAbsExpr::variable("x");
    ExprMatrix m = ExprMatrix::from_rows({{x, RatAbsExpr(Rational(1))}, {x * x, x}}, 2);
    EXPECT_EQ(rank(m), 1u);
    ExprMatrix n = ExprMatrix::from_rows({{x, RatAbsExpr(Rational(1))}, {RatAbsExpr(Rational(1)), x}}, 2);
    EXPECT_EQ(rank(n), 2u);
}
