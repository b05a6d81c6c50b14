// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "docgen.hpp"
#include "oracles.hpp"
#include "pblab/catalog.hpp"
#include "pblab/dsl.hpp"
#include "pblab/metric.hpp"

using namespace pblab;

namespace {

// failures accumulate here; a criterion passes when nothing was recorded
struct Check {
    std::vector<std::string> failures;
    std::vector<std::string> notes;

    void require(bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    }
    void note(const std::string& s) { notes.push_back(s); }
};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); }

RatAbsExpr E(long p) { return RatAbsExpr(Rational(p)); }
RatAbsExpr X(const char* v) { return RatAbsExpr::variable(v); }
RatAbsExpr Abs(const char* v) { return RatAbsExpr::abs_variable(v); }

Cell neg(const std::string& c) { return Cell::interval(c, Bound::neg_inf(), Bound::finite(0)); }
Cell zero(const std::string& c) { return Cell::at(c, 0); }
Cell pos(const std::string& c) { return Cell::interval(c, Bound::finite(0), Bound::pos_inf()); }

Chart line(const std::string& id, size_t fibre) { return Chart{id, id, fibre, standard_cells(id)}; }
ExprMatrix scalar(long c) { return ExprMatrix::from_rows({{E(c)}}, 1); }
PseudoBundle std_line(const std::string& chart, size_t n = 1) { return standard_bundle("S" + chart, chart, chart, n); }

BundleGluing circle(long on_neg, long on_pos) {
    return {{"u", "v", {neg("u"), pos("u")}, E(1) / X("u"), E(1) / X("v")},
            {{neg("u"), scalar(on_neg)}, {pos("u"), scalar(on_pos)}}};
}
BundleGluing identity_gluing(const std::string& a, const std::string& b, size_t n) {
    return {{a, b, {neg(a), zero(a), pos(a)}, X(a.c_str()), X(b.c_str())},
            {{neg(a), ExprMatrix::identity(n)}, {zero(a), ExprMatrix::identity(n)}, {pos(a), ExprMatrix::identity(n)}}};
}

GeneratedVS axes_space(size_t n, bool every_axis) {
    std::vector<GeneratorPlot> gens;
    for (size_t i = every_axis ? 0 : n - 1; i < n; ++i) {
        GeneratorPlot g{{"x"}, std::vector<RatAbsExpr>(n)};
        g.components[i] = Abs("x");
        gens.push_back(g);
    }
    return GeneratedVS(n, gens);
}

dsl::Json fixture_report(const std::string& name, Check& chk) {
    for (const auto& [n, text] : fixture_catalog())
        if (n == name) {
            dsl::Report r = dsl::run_text(text, 1);
            chk.require(r.exit_code == 0, name + " exits " + std::to_string(r.exit_code));
            return r.json;
        }
    chk.require(false, "fixture " + name + " missing from the catalog");
    return {};
}

const dsl::Json* result(const dsl::Json& report, const std::string& command) {
    if (!report.contains("results")) return nullptr;
    for (const auto& r : report["results"])
        if (r["command"] == command) return &r;
    return nullptr;
}

bool all_profile_values(const dsl::Json& profile, size_t want) {
    if (profile.empty()) return false;
    for (const auto& [k, v] : profile.items())
        if (v.get<size_t>() != want) return false;
    return true;
}

void check_time(Check& chk, Clock::time_point t0, double limit_ms) {
    double t = ms_since(t0);
    std::ostringstream s;
    s << static_cast<long>(t) << " ms";
    chk.note(s.str());
    chk.require(t < limit_ms, "took " + s.str() + ", limit " + std::to_string(static_cast<long>(limit_ms)) + " ms");
}

// ---- criteria ----

void dual_dimensions(Check& chk) {
    auto t0 = Clock::now();
    for (size_t n : {2u, 3u}) {
        size_t all = dual_basis(axes_space(n, true)).size();
        size_t one = dual_basis(axes_space(n, false)).size();
        chk.require(all == 0, "R^" + std::to_string(n) + " with every |x|e_i has dual dimension " + std::to_string(all));
        chk.require(one == n - 1, "R^" + std::to_string(n) + " with |x|e_n has dual dimension " + std::to_string(one));
    }
    for (size_t n = 1; n <= 4; ++n)
        chk.require(dual_basis(GeneratedVS::standard(n)).size() == n, "standard R^" + std::to_string(n) + " dual is not full");
    check_time(chk, t0, 1000);

    dsl::Json fine = fixture_report("fine_space", chk), triv = fixture_report("trivial_dual_space", chk);
    auto dual_of = [&](const dsl::Json& rep, const std::string& cmd) -> long {
        const dsl::Json* r = result(rep, cmd);
        return r ? r->at("dual_dim").get<long>() : -1;
    };
    chk.require(dual_of(triv, "dual T2") == 0, "fixture T2 dual");
    chk.require(dual_of(triv, "dual T3") == 0, "fixture T3 dual");
    chk.require(dual_of(fine, "dual L3") == 2, "fixture L3 dual");
    chk.require(dual_of(fine, "dual R2") == 2, "fixture R2 dual");
}

void example_5_2_nonexistence(Check& chk) {
    auto t0 = Clock::now();
    PseudoBundle B("E52", {line("u", 1)}, {{"u", "u", {"v"}, {X("u") * Abs("v")}, std::nullopt, "p"}});
    ExistenceResult r = existence_check(B);
    chk.require(r.kind == ExistenceResult::Kind::NonExistent, "existence_check did not return NonExistent");
    if (r.certificate) {
        const NonexistenceCertificate& c = *r.certificate;
        chk.require(c.point == zero("u"), "certificate point is " + c.point.str());
        chk.require(c.required_rank == 1 && c.max_rank == 0, "rank requirement is not 1 against 0");
        bool probe = !c.transfers.empty();
        for (const auto& t : c.transfers) probe = probe && t.to == zero("u") && t.probe_p == "(u, 1)" && t.probe_q == "(u, 1)";
        chk.require(probe, "constant probe (u, 1) does not carry the vanishing coefficient to x = 0");
        chk.require(replay(B, c), "certificate does not replay");
        NonexistenceCertificate tampered = c;
        tampered.max_rank = 1;
        chk.require(!replay(B, tampered), "tampered certificate replays");
    } else {
        chk.require(false, "no certificate");
    }
    check_time(chk, t0, 1000);

    dsl::Json rep = fixture_report("example_5_2_nometric", chk);
    const dsl::Json* e = result(rep, "exists E52");
    chk.require(e && e->at("result") == "NonExistent", "fixture verdict");
    chk.require(e && e->at("certificate").value("replayed", false), "fixture certificate not replayed");
}

void example_5_1_existence(Check& chk) {
    PseudoBundle B("E51", {line("u", 2)}, {{"u", "u", {"v"}, {E(0), Abs("v")}, std::nullopt, "p"}});
    ExistenceResult r = existence_check(B);
    chk.require(r.kind == ExistenceResult::Kind::Exists, "existence_check did not return Exists");
    ExprMatrix e2e2 = ExprMatrix::from_rows({{E(1), E(0)}, {E(0), E(0)}}, 2);
    if (r.metric) {
        for (const auto& c : B.live_cells())
            chk.require(metric_on_home(B, *r.metric, c) == e2e2, "metric over " + c.str() + " is not the first-coordinate square");
        MetricVerdict v = is_pseudometric(B, *r.metric);
        chk.require(v.pass(), "is_pseudometric rejects the metric");
        chk.require(v.psd.kind == PsdResult::Kind::Exact, "PSD is not exact");
    }
    dsl::Json rep = fixture_report("example_5_1", chk);
    const dsl::Json* e = result(rep, "exists E51");
    chk.require(e && e->at("result") == "Exists", "fixture verdict");
    chk.require(e && e->at("metric")["pieces"][0]["matrix"] == dsl::Json::array({{"1", "0"}, {"0", "0"}}), "fixture metric");
    const dsl::Json* cm = result(rep, "check-metric g");
    chk.require(cm && cm->at("verdict")["pass"] == true && cm->at("verdict")["psd"]["kind"] == "exact", "fixture check-metric");
}

void moebius_annulus(Check& chk) {
    auto t0 = Clock::now();
    BundleMetric g1 = BundleMetric::uniform("g1", "u", scalar(1), SosCertificate{{E(1), Functional::basis(0, 1)}});
    BundleMetric g2 = BundleMetric::uniform("g2", "v", scalar(1), SosCertificate{{E(1), Functional::basis(0, 1)}});
    for (long s : {-1L, 1L}) {
        std::string name = s < 0 ? "Moebius" : "annulus";
        BundleGluing G = circle(1, s);
        GluedBundle glued = glue_bundles(std_line("u"), std_line("v"), G);
        for (const auto& [c, d] : dual_dim_profile(glued.bundle)) chk.require(d == 1, name + " dual over " + c.str());
        chk.require(compat_check(std_line("u"), std_line("v"), g1, g2, G), name + " compat_check");
        GluedMetric a = glue_metrics(std_line("u"), std_line("v"), g1, g2, G);
        GluedMetric b = glue_metrics_commutative(std_line("u"), std_line("v"), g1, g2, G);
        MetricVerdict va = is_pseudometric(a.glued.bundle, a.metric), vb = is_pseudometric(b.glued.bundle, b.metric);
        chk.require(va.pass() && va.psd.kind == PsdResult::Kind::Exact, name + " glued metric");
        chk.require(vb.pass() && vb.psd.kind == PsdResult::Kind::Exact, name + " commutative glued metric");
        chk.require(metrics_coincide(a.glued.bundle, a.metric, b.metric), name + " metrics do not coincide");
    }
    check_time(chk, t0, 2000);

    for (const char* f : {"moebius", "annulus"}) {
        std::string fx = f;
        std::string B = fx == "moebius" ? "M" : "A";
        dsl::Json rep = fixture_report(fx, chk);
        const dsl::Json* d = result(rep, "dual " + B);
        chk.require(d && all_profile_values(d->at("profile"), 1), fx + " fixture dual profile");
        const dsl::Json* im = result(rep, "induce-metric " + B + " g1 g2");
        bool ok = im && im->at("compatible") == true && im->at("verdict")["pass"] == true &&
                  im->at("commutative")["verdict"]["pass"] == true && im->at("commutative")["coincide"] == true;
        chk.require(ok, fx + " fixture induce-metric");
    }
}

void tensor_commutativity(Check& chk) {
    auto tensor = [](const BundleGluing& G, const BundleGluing& H) {
        return tensor_glue_commutativity_check(std_line("u"), std_line("u"), std_line("v"), std_line("v"), G, H);
    };
    CommutativityReport mm = tensor(circle(1, -1), circle(1, -1));
    chk.require(mm.agree, "Moebius x Moebius disagrees");
    chk.require(mm.lifts_identity, "Moebius x Moebius lift is not +1 everywhere");
    for (const auto& [c, L] : mm.lifts) chk.require(L == scalar(1), "Moebius x Moebius lift over " + c.str());
    chk.require(tensor(circle(1, 1), circle(1, -1)).agree, "annulus x Moebius disagrees");
    CommutativityReport ss = tensor_glue_commutativity_check(std_line("s"), std_line("s", 2), std_line("t"), std_line("t", 2),
                                                             identity_gluing("s", "t", 1), identity_gluing("s", "t", 2));
    chk.require(ss.agree, "standard x standard disagrees");
    for (const auto& cell : ss.cells) chk.require(cell.agree, "standard x standard over " + cell.cell.str());

    dsl::Json rep = fixture_report("tensor_commute", chk);
    for (const char* cmd : {"commute-tensor M M", "commute-tensor A M", "commute-tensor S T"}) {
        const dsl::Json* r = result(rep, cmd);
        chk.require(r && r->at("agree") == true, std::string("fixture ") + cmd);
    }
    const dsl::Json* r = result(rep, "commute-tensor M M");
    chk.require(r && r->at("lifts_identity") == true, "fixture Moebius x Moebius lift");
}

void dual_necessary(Check& chk) {
    chk.require(check_dual_necessary(std_line("u"), std_line("v"), circle(1, -1)).holds, "Moebius");
    chk.require(check_dual_necessary(std_line("u"), std_line("v"), circle(1, 1)).holds, "annulus");
    PseudoBundle W("W", {line("v", 1)}, {{"v", "v", {"w"}, {Abs("w")}, std::nullopt, "a"}});
    chk.require(!check_dual_necessary(std_line("u"), W, identity_gluing("u", "v", 1)).holds, "standard onto |w| holds");

    for (const auto& [fx, cmd, want] : std::vector<std::tuple<std::string, std::string, bool>>{
             {"moebius", "dual-necessary M", true}, {"annulus", "dual-necessary A", true}, {"dual_necessary_fail", "dual-necessary F", false}}) {
        dsl::Json rep = fixture_report(fx, chk);
        const dsl::Json* r = result(rep, cmd);
        chk.require(r && r->at("holds") == want, "fixture " + fx);
    }
}

void smoothness_oracle(Check& chk) {
    std::mt19937_64 rng(7001);
    int smooth = 0, nonsmooth = 0, disagree = 0;
    const int cases = 250;
    for (int i = 0; i < cases; ++i) {
        oracle::RawExpr raw = oracle::random_raw(rng);
        bool symbolic = is_smooth(oracle::build(raw), SignContext{});
        bool numeric = !oracle::numeric_nonsmooth(raw, rng).diverges;
        if (symbolic != numeric) {
            ++disagree;
            chk.require(false, "disagreement on " + oracle::build(raw).str());
        }
        (symbolic ? smooth : nonsmooth)++;
    }
    chk.note(std::to_string(cases) + " expressions, " + std::to_string(smooth) + " smooth, " + std::to_string(nonsmooth) +
             " not, " + std::to_string(disagree) + " disagreements");
    // both verdicts must be exercised
    chk.require(smooth >= 30 && nonsmooth >= 30, "sample is one-sided");
}

GeneratedVS random_vs(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dim(1, 3), ng(0, 3);
    size_t d = dim(rng);
    int n = ng(rng);
    std::vector<GeneratorPlot> gens;
    for (int i = 0; i < n; ++i) gens.push_back(oracle::to_plot(oracle::random_plot(rng, d)));
    return GeneratedVS(d, gens);
}

PseudoBundle random_bundle(std::mt19937_64& rng) {
    std::uniform_int_distribution<size_t> dd(1, 3);
    std::uniform_int_distribution<int> ng(0, 2);
    size_t d = dd(rng);
    int n = ng(rng);
    std::vector<TotalGenerator> gens;
    for (int i = 0; i < n; ++i) {
        std::vector<RatAbsExpr> comps;
        for (size_t k = 0; k < d; ++k) comps.push_back(RatAbsExpr(oracle::build(oracle::random_component_over(rng, {0, 1}))));
        gens.push_back({"u", "u", {oracle::var_name(1)}, comps, std::nullopt, "g" + std::to_string(i)});
    }
    return PseudoBundle("R", {line("u", d)}, gens);
}

void property_suites(Check& chk) {
    std::mt19937_64 rng(8001);
    int bad = 0;
    for (int i = 0; i < 100; ++i) {
        GeneratedVS V = random_vs(rng);
        std::vector<GeneratorPlot> more = V.generators();
        more.push_back(oracle::to_plot(oracle::random_plot(rng, V.dim())));
        if (dual_basis(GeneratedVS(V.dim(), more)).size() > dual_basis(V).size()) ++bad;
    }
    chk.require(bad == 0, std::to_string(bad) + "/100 monotonicity failures");

    bad = 0;
    for (int i = 0; i < 100; ++i) {
        GeneratedVS V = random_vs(rng);
        VsVerdict v = is_pseudometric_vs(V, construct_pseudometric_vs(V), pseudometric_certificate(V));
        if (!v.pass() || v.psd.kind != PsdResult::Kind::Exact) ++bad;
    }
    chk.require(bad == 0, std::to_string(bad) + "/100 constructed pseudo-metrics rejected");

    bad = 0;
    std::uniform_int_distribution<int> sign(0, 3);
    for (int i = 0; i < 500; ++i) {
        oracle::RawExpr raw = oracle::random_raw(rng);
        SignContext ctx;
        for (int k = 0; k < raw.nvars; ++k) ctx.set(oracle::var_name(k), static_cast<Sign>(sign(rng)));
        AbsPolyExpr once = normalize(oracle::build(raw), ctx);
        if (!(normalize(once, ctx) == once)) ++bad;
    }
    chk.require(bad == 0, std::to_string(bad) + "/500 normalize idempotence failures");

    bad = 0;
    testgen::DocGen gen(8002);
    for (int i = 0; i < 200; ++i) {
        dsl::Document d = gen.make();
        std::string printed = dsl::print(d);
        try {
            dsl::Document back = dsl::parse(printed);
            if (!(back == d) || dsl::print(back) != printed) ++bad;
        } catch (const Error&) {
            ++bad;
        }
    }
    chk.require(bad == 0, std::to_string(bad) + "/200 documents do not round-trip");

    bad = 0;
    for (int i = 0; i < 50; ++i) {
        PseudoBundle B = random_bundle(rng);
        bool ok = structurally_equal(quotient_bundle(B, SubBundleSpec::zero(B)), B) &&
                  structurally_equal(sub_bundle(B, SubBundleSpec::full(B)), B) &&
                  quotient_bundle(B, SubBundleSpec::full(B)).only_chart().fibre_dim == 0 &&
                  sub_bundle(B, SubBundleSpec::zero(B)).only_chart().fibre_dim == 0;
        if (!ok) ++bad;
    }
    chk.require(bad == 0, std::to_string(bad) + "/50 sub/quotient identity failures");
    chk.note("100 + 100 + 500 + 200 + 50 cases");
}

void dual_metric_round_trip(Check& chk) {
    std::mt19937_64 rng(9001);
    std::uniform_int_distribution<int> dim(1, 3), cf(-3, 3), pc(1, 5);
    int bad = 0;
    for (int i = 0; i < 20; ++i) {
        size_t n = dim(rng);
        QMatrix A(n, n);
        do {
            for (size_t r = 0; r < n; ++r)
                for (size_t c = 0; c < n; ++c) A(r, c) = cf(rng);
        } while (!inverse(A));
        SosCertificate cert;
        for (size_t k = 0; k < n; ++k) {
            Functional f{std::vector<RatAbsExpr>(n)};
            for (size_t j = 0; j < n; ++j) f.coeffs[j] = RatAbsExpr(A(k, j));
            cert.push_back({RatAbsExpr(Rational(pc(rng))), f});
        }
        ExprMatrix G = sos_matrix(cert, n);
        PseudoBundle B = std_line("u", n);
        DualMetric once = dual_metric(B, BundleMetric::uniform("g", "u", G, cert));
        DualMetric twice = dual_metric(once.bundle, once.metric);
        bool same = true;
        for (const auto& c : B.live_cells()) same = same && metric_on_home(twice.bundle, twice.metric, c) == G;
        if (!same) ++bad;
    }
    chk.require(bad == 0, std::to_string(bad) + "/20 round trips differ");
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* title;
        std::function<void(Check&)> run;
    };
    std::vector<Criterion> all = {
        {1, "dual dimensions of generated and standard spaces", dual_dimensions},
        {2, "(u, u|v|) has no pseudo-metric, certificate replays", example_5_2_nonexistence},
        {3, "(u, 0, |v|) gets the pseudo-metric e2 x e2 with exact PSD", example_5_1_existence},
        {4, "Moebius and annulus metrics glue both ways and coincide", moebius_annulus},
        {5, "tensor product commutes with gluing", tensor_commutativity},
        {6, "dual necessary condition", dual_necessary},
        {7, "symbolic smoothness agrees with the finite-difference oracle", smoothness_oracle},
        {8, "property suites", property_suites},
        {9, "dual metric applied twice is the identity", dual_metric_round_trip},
    };
    int failed = 0;
    for (const auto& c : all) {
        Check chk;
        try {
            c.run(chk);
        } catch (const std::exception& e) {
            chk.require(false, std::string("exception: ") + e.what());
        }
        bool ok = chk.failures.empty();
        failed += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title;
        for (const auto& n : chk.notes) std::cout << " [" << n << "]";
        std::cout << "\n";
        for (const auto& f : chk.failures) std::cout << "    " << f << "\n";
    }
    std::cout << (all.size() - failed) << "/" << all.size() << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
