#pragma once

// Description language: lexer, recursive-descent parser, canonical printer, runtime and JSON report.

#include <cctype>
#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pblab/glue.hpp"
#include "pblab/metric.hpp"

namespace pblab::dsl {

using Json = nlohmann::ordered_json;

struct Pos {
    size_t line = 1, col = 1;
    std::string str() const { return std::to_string(line) + ":" + std::to_string(col); }
};

inline Error error_at(const Pos& p, ErrorKind k, const std::string& msg) { return Error(k, p.str() + ": " + msg); }

// ---- lexer ----

enum class Tok { Word, Int, Sym, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    Pos pos;
};

inline const std::set<std::string>& compound_words() {
    static const std::set<std::string> w{"check-metric",  "induce-metric", "dual-metric",  "commute-tensor",
                                         "commute-sum",   "dual-necessary", "glue-sections"};
    return w;
}

inline std::vector<Token> lex(const std::string& src) {
    std::vector<Token> out;
    size_t i = 0, n = src.size();
    Pos p;
    auto advance = [&](size_t k) {
        for (; k > 0; --k, ++i) {
            if (src[i] == '\n') {
                ++p.line;
                p.col = 1;
            } else {
                ++p.col;
            }
        }
    };
    auto word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    while (i < n) {
        char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance(1);
            continue;
        }
        if (c == '#') {
            while (i < n && src[i] != '\n') advance(1);
            continue;
        }
        Token t{Tok::Sym, "", p};
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            size_t j = i;
            while (j < n && word_char(src[j])) ++j;
            std::string w = src.substr(i, j - i);
            if (j + 1 < n && src[j] == '-' && std::isalpha(static_cast<unsigned char>(src[j + 1]))) {
                size_t k = j + 1;
                while (k < n && word_char(src[k])) ++k;
                std::string joined = w + "-" + src.substr(j + 1, k - j - 1);
                if (compound_words().count(joined)) {
                    w = joined;
                    j = k;
                }
            }
            t.kind = Tok::Word;
            t.text = w;
            advance(j - i);
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            size_t j = i;
            while (j < n && std::isdigit(static_cast<unsigned char>(src[j]))) ++j;
            t.kind = Tok::Int;
            t.text = src.substr(i, j - i);
            advance(j - i);
        } else if (c == '-' && i + 1 < n && src[i + 1] == '>') {
            t.text = "->";
            advance(2);
        } else if (std::string("()[]{},:=~+-*/^").find(c) != std::string::npos) {
            t.text = std::string(1, c);
            advance(1);
        } else {
            throw error_at(p, ErrorKind::ParseError, std::string("unexpected character '") + c + "'");
        }
        out.push_back(std::move(t));
    }
    out.push_back({Tok::End, "", p});
    return out;
}

// ---- syntax tree ----

struct Generator {
    std::vector<Var> vars;
    std::vector<RatAbsExpr> comps;                 // bundles: the base coordinate is not stored
    std::optional<std::vector<Cell>> support;      // bundles only
    friend bool operator==(const Generator&, const Generator&) = default;
};

struct SpaceDecl {
    std::string name;
    size_t dim = 0;
    std::vector<Generator> gens;
    Pos pos;
    friend bool operator==(const SpaceDecl& a, const SpaceDecl& b) {
        return a.name == b.name && a.dim == b.dim && a.gens == b.gens;
    }
};

struct BundleDecl {
    std::string name;
    Var base;
    std::vector<Cell> cells;
    size_t fibre = 0;
    std::vector<Generator> gens;
    Pos pos;
    friend bool operator==(const BundleDecl& a, const BundleDecl& b) {
        return a.name == b.name && a.base == b.base && a.cells == b.cells && a.fibre == b.fibre && a.gens == b.gens;
    }
};

struct GlueDecl {
    std::string name, b1, b2;
    std::vector<Cell> on;
    RatAbsExpr f;
    std::optional<RatAbsExpr> inv;
    std::vector<std::pair<Cell, ExprMatrix>> lift;
    Pos pos;
    friend bool operator==(const GlueDecl& a, const GlueDecl& b) {
        return a.name == b.name && a.b1 == b.b1 && a.b2 == b.b2 && a.on == b.on && a.f == b.f && a.inv == b.inv &&
               a.lift == b.lift;
    }
};

inline bool same_sos(const std::optional<SosCertificate>& a, const std::optional<SosCertificate>& b) {
    if (a.has_value() != b.has_value()) return false;
    if (!a) return true;
    if (a->size() != b->size()) return false;
    for (size_t i = 0; i < a->size(); ++i)
        if (!((*a)[i].coeff == (*b)[i].coeff) || !((*a)[i].functional == (*b)[i].functional)) return false;
    return true;
}

struct PieceDecl {
    std::optional<Cell> cell;  // nullopt: the bare form, every cell
    ExprMatrix matrix;
    std::optional<SosCertificate> sos;
    friend bool operator==(const PieceDecl& a, const PieceDecl& b) {
        return a.cell == b.cell && a.matrix == b.matrix && same_sos(a.sos, b.sos);
    }
};

struct MetricDecl {
    std::string name, target;
    std::vector<PieceDecl> pieces;
    Pos pos;
    friend bool operator==(const MetricDecl& a, const MetricDecl& b) {
        return a.name == b.name && a.target == b.target && a.pieces == b.pieces;
    }
};

struct SectionDecl {
    std::string name, target;
    std::vector<std::pair<std::optional<Cell>, std::vector<RatAbsExpr>>> pieces;
    Pos pos;
    friend bool operator==(const SectionDecl& a, const SectionDecl& b) {
        return a.name == b.name && a.target == b.target && a.pieces == b.pieces;
    }
};

struct Command {
    std::string verb;
    std::vector<std::string> args;
    Pos pos;
    friend bool operator==(const Command& a, const Command& b) { return a.verb == b.verb && a.args == b.args; }
};

using Decl = std::variant<SpaceDecl, BundleDecl, GlueDecl, MetricDecl, SectionDecl, Command>;

struct Document {
    std::vector<Decl> decls;
    friend bool operator==(const Document&, const Document&) = default;
};

// Argument kinds per command verb: s space, b bundle, x space or bundle, G gluing, m metric, c section.
inline const std::map<std::string, std::string>& command_signatures() {
    static const std::map<std::string, std::string> sig{
        {"dual", "x"},         {"profile", "b"},         {"glue", "G"},           {"check-metric", "m"},
        {"induce-metric", "Gmm"}, {"exists", "x"},       {"dual-metric", "m"},    {"commute-tensor", "GG"},
        {"commute-sum", "GG"}, {"dual-necessary", "G"},  {"switch", "G"},         {"glue-sections", "Gcc"},
        {"pairing", "m"},      {"report", ""}};
    return sig;
}

// ---- parser ----

class Parser {
public:
    explicit Parser(const std::string& text) : toks_(lex(text)) {}

    Document document() {
        Document d;
        while (peek().kind != Tok::End) d.decls.push_back(declaration());
        return d;
    }

    RatAbsExpr expression() { return sum(); }

private:
    std::vector<Token> toks_;
    size_t at_ = 0;

    const Token& peek(size_t k = 0) const { return toks_[std::min(at_ + k, toks_.size() - 1)]; }
    const Token& take() { return toks_[at_ < toks_.size() - 1 ? at_++ : at_]; }
    bool is_sym(const std::string& s, size_t k = 0) const { return peek(k).kind == Tok::Sym && peek(k).text == s; }
    bool is_word(const std::string& w, size_t k = 0) const { return peek(k).kind == Tok::Word && peek(k).text == w; }
    bool accept(const std::string& s) {
        if (!is_sym(s)) return false;
        take();
        return true;
    }
    [[noreturn]] void fail(const std::string& what) const {
        const Token& t = peek();
        throw error_at(t.pos, ErrorKind::ParseError,
                       "expected " + what + ", found " + (t.kind == Tok::End ? std::string("end of input") : "'" + t.text + "'"));
    }
    void expect(const std::string& s) {
        if (!accept(s)) fail("'" + s + "'");
    }
    void keyword(const std::string& w) {
        if (!is_word(w)) fail("'" + w + "'");
        take();
    }
    std::string word(const std::string& what) {
        if (peek().kind != Tok::Word) fail(what);
        return take().text;
    }
    Var variable() {
        const Token& t = peek();
        std::string w = word("a variable");
        bool ok = std::islower(static_cast<unsigned char>(w[0]));
        for (char c : w) ok = ok && (std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)));
        if (!ok || w == "abs" || w == "inf") throw error_at(t.pos, ErrorKind::ParseError, "'" + w + "' is not a variable name");
        return w;
    }
    size_t integer(const std::string& what) {
        if (peek().kind != Tok::Int) fail(what);
        return std::stoul(take().text);
    }
    Rational rational() {
        bool neg = accept("-");
        if (peek().kind != Tok::Int) fail("a number");
        Rational q(take().text);
        if (accept("/")) {
            if (peek().kind != Tok::Int) fail("a denominator");
            const Token& t = take();
            Rational d(t.text);
            if (d == 0) throw error_at(t.pos, ErrorKind::DivisionByZero, "zero denominator");
            q /= d;
        }
        q.canonicalize();
        return neg ? Rational(-q) : q;
    }

    // expressions
    RatAbsExpr sum() {
        RatAbsExpr e = product();
        while (true) {
            if (accept("+")) e = e + product();
            else if (accept("-")) e = e - product();
            else return e;
        }
    }
    RatAbsExpr product() {
        RatAbsExpr e = unary();
        while (true) {
            if (accept("*")) {
                e = e * unary();
            } else if (is_sym("/")) {
                Pos p = take().pos;
                RatAbsExpr d = unary();
                if (d.is_zero()) throw error_at(p, ErrorKind::DivisionByZero, "division by zero");
                try {
                    e = e / d;
                } catch (const Error& err) {
                    throw error_at(p, err.kind(), err.message());
                }
            } else {
                return e;
            }
        }
    }
    RatAbsExpr unary() {
        if (accept("-")) return RatAbsExpr(Rational(0)) - unary();
        return power();
    }
    RatAbsExpr power() {
        RatAbsExpr base = atom();
        if (accept("^")) {
            size_t k = integer("an exponent");
            RatAbsExpr out(Rational(1));
            for (size_t i = 0; i < k; ++i) out = out * base;
            return out;
        }
        return base;
    }
    RatAbsExpr atom() {
        const Token& t = peek();
        if (t.kind == Tok::Int) return RatAbsExpr(Rational(take().text));
        if (accept("(")) {
            RatAbsExpr e = sum();
            expect(")");
            return e;
        }
        if (t.kind == Tok::Word && t.text == "abs") {
            Pos p = take().pos;
            expect("(");
            RatAbsExpr inner = sum();
            expect(")");
            auto vs = inner.variables();
            if (vs.size() != 1 || !(inner == RatAbsExpr::variable(*vs.begin())))
                throw error_at(p, ErrorKind::SubstitutionOutOfClass, "abs applies to a single variable, got abs(" + inner.str() + ")");
            return RatAbsExpr::abs_variable(*vs.begin());
        }
        if (t.kind == Tok::Word) return RatAbsExpr::variable(variable());
        fail("an expression");
    }

    std::vector<RatAbsExpr> tuple() {
        std::vector<RatAbsExpr> out;
        expect("(");
        if (!is_sym(")")) {
            out.push_back(expression());
            while (accept(",")) out.push_back(expression());
        }
        expect(")");
        return out;
    }

    // cells: [chart:] {q} | (lo, hi)
    Bound bound() {
        if (is_word("inf")) {
            take();
            return Bound::pos_inf();
        }
        if (is_sym("-") && is_word("inf", 1)) {
            take();
            take();
            return Bound::neg_inf();
        }
        if (accept("+")) {
            keyword("inf");
            return Bound::pos_inf();
        }
        return Bound::finite(rational());
    }
    bool at_cell() const {
        return is_sym("{") || is_sym("(") || (peek().kind == Tok::Word && is_sym(":", 1));
    }
    Cell cell() {
        std::string chart;
        if (peek().kind == Tok::Word && is_sym(":", 1)) {
            chart = take().text;
            take();
        }
        Pos p = peek().pos;
        if (accept("{")) {
            Rational q = rational();
            expect("}");
            return Cell::at(chart, q);
        }
        expect("(");
        Bound lo = bound();
        expect(",");
        Bound hi = bound();
        expect(")");
        try {
            return Cell::interval(chart, lo, hi);
        } catch (const Error& e) {
            throw error_at(p, ErrorKind::ParseError, e.message());
        }
    }
    std::vector<Cell> cell_list() {
        std::vector<Cell> out;
        expect("[");
        if (!is_sym("]")) {
            out.push_back(cell());
            while (accept(",")) out.push_back(cell());
        }
        expect("]");
        return out;
    }

    ExprMatrix matrix() {
        Pos p = peek().pos;
        expect("[");
        std::vector<std::vector<RatAbsExpr>> rows;
        if (!is_sym("]")) {
            do {
                expect("[");
                std::vector<RatAbsExpr> row;
                if (!is_sym("]")) {
                    row.push_back(expression());
                    while (accept(",")) row.push_back(expression());
                }
                expect("]");
                rows.push_back(std::move(row));
            } while (accept(","));
        }
        expect("]");
        size_t cols = rows.empty() ? 0 : rows[0].size();
        for (const auto& r : rows)
            if (r.size() != cols) throw error_at(p, ErrorKind::DimensionMismatch, "ragged matrix");
        return ExprMatrix::from_rows(rows, cols);
    }

    Generator generator(const std::optional<Var>& base) {
        Generator g;
        bool bundle = base.has_value();
        expect("(");
        g.vars.push_back(variable());
        while (accept(",")) g.vars.push_back(variable());
        expect(")");
        expect("->");
        Pos p = peek().pos;
        g.comps = tuple();
        if (bundle) {
            if (g.vars[0] != *base || g.comps.empty() || !(g.comps[0] == RatAbsExpr::variable(*base)))
                throw error_at(p, ErrorKind::ShapeMismatch, "a bundle generator has the form (" + *base + ", ...) -> (" + *base + ", ...)");
            g.comps.erase(g.comps.begin());
            g.vars.erase(g.vars.begin());
            if (is_word("on")) {
                take();
                g.support = cell_list();
            }
        }
        return g;
    }
    std::vector<Generator> generators(const std::optional<Var>& base) {
        std::vector<Generator> out;
        keyword("gens");
        expect("[");
        if (!is_sym("]")) {
            out.push_back(generator(base));
            while (accept(",")) out.push_back(generator(base));
        }
        expect("]");
        return out;
    }
    std::optional<SosCertificate> sos() {
        if (!is_word("sos")) return std::nullopt;
        take();
        SosCertificate cert;
        expect("[");
        if (!is_sym("]")) {
            do {
                RatAbsExpr c = expression();
                expect(":");
                cert.push_back({c, Functional{tuple()}});
            } while (accept(","));
        }
        expect("]");
        return cert;
    }

    Decl declaration() {
        const Token& t = peek();
        Pos pos = t.pos;
        if (t.kind != Tok::Word) fail("a declaration or command");
        std::string head = take().text;
        if (head == "space") {
            SpaceDecl d;
            d.pos = pos;
            d.name = word("a name");
            keyword("dim");
            d.dim = integer("a dimension");
            d.gens = generators(std::nullopt);
            return d;
        }
        if (head == "bundle") {
            BundleDecl d;
            d.pos = pos;
            d.name = word("a name");
            keyword("base");
            d.base = variable();
            if (is_word("cells")) {
                take();
                d.cells = cell_list();
            } else {
                d.cells = standard_cells("");
            }
            keyword("fibre");
            d.fibre = integer("a fibre dimension");
            d.gens = generators(d.base);
            return d;
        }
        if (head == "glue" && is_sym("=", 1)) {
            GlueDecl d;
            d.pos = pos;
            d.name = word("a name");
            expect("=");
            d.b1 = word("a bundle name");
            expect("~");
            d.b2 = word("a bundle name");
            keyword("on");
            d.on = cell_list();
            keyword("via");
            keyword("f");
            expect("=");
            d.f = expression();
            if (is_word("inv")) {
                take();
                d.inv = expression();
            }
            if (is_word("lift")) {
                take();
                expect("[");
                if (!is_sym("]")) {
                    do {
                        Cell c = cell();
                        expect(":");
                        d.lift.push_back({c, matrix()});
                    } while (accept(","));
                }
                expect("]");
            }
            return d;
        }
        if (head == "metric") {
            MetricDecl d;
            d.pos = pos;
            d.name = word("a name");
            keyword("on");
            d.target = word("a bundle or space name");
            if (is_sym("[") && (is_sym("[", 1) || is_sym("]", 1))) {
                ExprMatrix m = matrix();
                d.pieces.push_back({std::nullopt, m, sos()});
                return d;
            }
            expect("[");
            if (!is_sym("]")) {
                do {
                    Cell c = cell();
                    expect(":");
                    ExprMatrix m = matrix();
                    d.pieces.push_back({c, m, sos()});
                } while (accept(","));
            }
            expect("]");
            return d;
        }
        if (head == "section") {
            SectionDecl d;
            d.pos = pos;
            d.name = word("a name");
            keyword("on");
            d.target = word("a bundle name");
            if (is_sym("(")) {
                d.pieces.push_back({std::nullopt, tuple()});
                return d;
            }
            expect("[");
            if (!is_sym("]")) {
                do {
                    Cell c = cell();
                    expect(":");
                    d.pieces.push_back({c, tuple()});
                } while (accept(","));
            }
            expect("]");
            return d;
        }
        auto sig = command_signatures().find(head);
        if (sig == command_signatures().end())
            throw error_at(pos, ErrorKind::ParseError, "unknown declaration or command '" + head + "'");
        Command c{head, {}, pos};
        for (size_t i = 0; i < sig->second.size(); ++i) c.args.push_back(word("a name"));
        return c;
    }
};

// ---- canonical printer ----

inline std::string print_cell(const Cell& c) { return c.chart.empty() ? c.range_str() : c.str(); }

inline std::string print_cells(const std::vector<Cell>& cs) {
    std::string s = "[";
    for (size_t i = 0; i < cs.size(); ++i) s += (i ? ", " : "") + print_cell(cs[i]);
    return s + "]";
}

inline std::string print_tuple(const std::vector<RatAbsExpr>& v) {
    std::string s = "(";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i].str();
    return s + ")";
}

inline std::string print_matrix(const ExprMatrix& m) {
    std::string s = "[";
    for (size_t r = 0; r < m.rows(); ++r) {
        s += r ? ", [" : "[";
        for (size_t c = 0; c < m.cols(); ++c) s += (c ? ", " : "") + m(r, c).str();
        s += "]";
    }
    return s + "]";
}

inline std::string print_sos(const std::optional<SosCertificate>& cert) {
    if (!cert) return "";
    std::string s = " sos [";
    for (size_t i = 0; i < cert->size(); ++i) s += (i ? ", " : "") + (*cert)[i].coeff.str() + ": " + print_tuple((*cert)[i].functional.coeffs);
    return s + "]";
}

inline std::string print_generator(const Generator& g, const std::optional<Var>& base) {
    std::vector<Var> vars = g.vars;
    std::vector<RatAbsExpr> comps = g.comps;
    if (base) {
        vars.insert(vars.begin(), *base);
        comps.insert(comps.begin(), RatAbsExpr::variable(*base));
    }
    std::string s = "(";
    for (size_t i = 0; i < vars.size(); ++i) s += (i ? ", " : "") + vars[i];
    s += ") -> " + print_tuple(comps);
    if (g.support) s += " on " + print_cells(*g.support);
    return s;
}

inline std::string print_generators(const std::vector<Generator>& gs, const std::optional<Var>& base) {
    if (gs.empty()) return "gens []";
    std::string s = "gens [\n";
    for (size_t i = 0; i < gs.size(); ++i) s += "  " + print_generator(gs[i], base) + (i + 1 < gs.size() ? ",\n" : "\n");
    return s + "]";
}

inline std::string print(const Decl& d) {
    return std::visit(
        [](const auto& x) -> std::string {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, SpaceDecl>) {
                return "space " + x.name + " dim " + std::to_string(x.dim) + " " + print_generators(x.gens, std::nullopt);
            } else if constexpr (std::is_same_v<T, BundleDecl>) {
                return "bundle " + x.name + " base " + x.base + " cells " + print_cells(x.cells) + " fibre " +
                       std::to_string(x.fibre) + " " + print_generators(x.gens, x.base);
            } else if constexpr (std::is_same_v<T, GlueDecl>) {
                std::string s = "glue " + x.name + " = " + x.b1 + " ~ " + x.b2 + " on " + print_cells(x.on) + "\n  via f = " + x.f.str();
                if (x.inv) s += " inv " + x.inv->str();
                if (!x.lift.empty()) {
                    s += "\n  lift [";
                    for (size_t i = 0; i < x.lift.size(); ++i)
                        s += (i ? ", " : "") + print_cell(x.lift[i].first) + ": " + print_matrix(x.lift[i].second);
                    s += "]";
                }
                return s;
            } else if constexpr (std::is_same_v<T, MetricDecl>) {
                std::string s = "metric " + x.name + " on " + x.target + " ";
                if (x.pieces.size() == 1 && !x.pieces[0].cell)
                    return s + print_matrix(x.pieces[0].matrix) + print_sos(x.pieces[0].sos);
                s += "[";
                for (size_t i = 0; i < x.pieces.size(); ++i)
                    s += std::string(i ? ",\n  " : "\n  ") + print_cell(*x.pieces[i].cell) + ": " + print_matrix(x.pieces[i].matrix) +
                         print_sos(x.pieces[i].sos);
                return s + "\n]";
            } else if constexpr (std::is_same_v<T, SectionDecl>) {
                std::string s = "section " + x.name + " on " + x.target + " ";
                if (x.pieces.size() == 1 && !x.pieces[0].first) return s + print_tuple(x.pieces[0].second);
                s += "[";
                for (size_t i = 0; i < x.pieces.size(); ++i)
                    s += (i ? ", " : "") + print_cell(*x.pieces[i].first) + ": " + print_tuple(x.pieces[i].second);
                return s + "]";
            } else {
                std::string s = x.verb;
                for (const auto& a : x.args) s += " " + a;
                return s;
            }
        },
        d);
}

inline std::string print(const Document& doc) {
    std::string out;
    for (const auto& d : doc.decls) out += print(d) + "\n";
    return out;
}

inline Pos position(const Decl& d) {
    return std::visit([](const auto& x) { return x.pos; }, d);
}

// ---- static checks: names, references, shapes ----

namespace detail {

struct Symbol {
    char kind;                                  // s, b, G, m, c
    std::map<std::string, size_t> fibres;       // chart id -> fibre dimension (bundles, gluings)
    size_t dim = 0;                             // spaces
    bool glued = false;
    std::string target;                         // metrics and sections
};

inline const char* kind_name(char k) {
    switch (k) {
    case 's': return "space";
    case 'b': return "bundle";
    case 'G': return "gluing";
    case 'm': return "metric";
    case 'c': return "section";
    }
    return "name";
}

class Checker {
public:
    void run(Document& doc) {
        for (auto& d : doc.decls) std::visit([&](auto& x) { check(x); }, d);
    }

private:
    std::map<std::string, Symbol> syms_;

    void define(const std::string& name, const Pos& pos, Symbol s) {
        if (syms_.count(name)) throw error_at(pos, ErrorKind::ParseError, "'" + name + "' is already declared");
        syms_[name] = std::move(s);
    }
    const Symbol& resolve(const std::string& name, const Pos& pos, const std::string& kinds) const {
        auto it = syms_.find(name);
        if (it == syms_.end()) throw error_at(pos, ErrorKind::UnresolvedReference, "'" + name + "' is not declared before use");
        if (kinds.find(it->second.kind) == std::string::npos) {
            std::string want;
            for (char k : kinds) want += (want.empty() ? "" : " or ") + std::string(kind_name(k));
            throw error_at(pos, ErrorKind::UnresolvedReference, "'" + name + "' is a " + kind_name(it->second.kind) + ", expected a " + want);
        }
        return it->second;
    }
    static void dims(const Pos& pos, size_t got, size_t want, const std::string& what) {
        if (got != want)
            throw error_at(pos, ErrorKind::DimensionMismatch,
                           what + " has " + std::to_string(got) + " entries, expected " + std::to_string(want));
    }
    // A cell's chart: explicit prefix if it names a chart of the symbol, else the only chart.
    static std::string chart_of(const Cell& c, const Symbol& s, const Pos& pos) {
        if (!c.chart.empty()) {
            if (!s.fibres.count(c.chart)) throw error_at(pos, ErrorKind::UnresolvedReference, "no chart '" + c.chart + "'");
            return c.chart;
        }
        if (s.fibres.size() != 1) throw error_at(pos, ErrorKind::ParseError, "cell " + c.range_str() + " needs a chart prefix");
        return s.fibres.begin()->first;
    }

    void check(SpaceDecl& d) {
        for (const auto& g : d.gens) dims(d.pos, g.comps.size(), d.dim, "generator");
        Symbol s{'s', {}, d.dim, false, {}};
        define(d.name, d.pos, s);
    }
    void check(BundleDecl& d) {
        for (auto& c : d.cells) {
            if (!c.chart.empty() && c.chart != d.base) throw error_at(d.pos, ErrorKind::UnresolvedReference, "no chart '" + c.chart + "'");
            c.chart = "";
        }
        for (auto& g : d.gens) {
            dims(d.pos, g.comps.size(), d.fibre, "generator");
            if (g.support)
                for (auto& c : *g.support) c.chart = "";
        }
        Symbol s{'b', {{d.base, d.fibre}}, 0, false, {}};
        define(d.name, d.pos, s);
    }
    void check(GlueDecl& d) {
        const Symbol& a = resolve(d.b1, d.pos, "b");
        const Symbol& b = resolve(d.b2, d.pos, "b");
        if (a.glued || b.glued) throw error_at(d.pos, ErrorKind::BaseMismatch, "gluing factors must be unglued bundles");
        auto [c1, n1] = *a.fibres.begin();
        auto [c2, n2] = *b.fibres.begin();
        Symbol one{'b', {{c1, n1}}, 0, false, {}};
        for (auto& c : d.on) {
            chart_of(c, one, d.pos);
            c.chart = "";
        }
        if (d.lift.empty() && !d.on.empty() && (n1 || n2))
            throw error_at(d.pos, ErrorKind::DimensionMismatch, "a lift is required when fibres are nonzero");
        for (auto& [c, m] : d.lift) {
            chart_of(c, one, d.pos);
            c.chart = "";
            if (m.rows() == 0 && n2 == 0) m = ExprMatrix(0, n1);  // [] carries no column count
            if (m.rows() != n2 || m.cols() != n1)
                throw error_at(d.pos, ErrorKind::DimensionMismatch,
                               "lift over " + c.range_str() + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                   ", expected " + std::to_string(n2) + "x" + std::to_string(n1));
        }
        std::string src = c1 == c2 ? c1 + "1" : c1;
        Symbol s{'G', {{src, n1}, {c2, n2}}, 0, true, {}};
        define(d.name, d.pos, s);
    }
    void check(MetricDecl& d) {
        const Symbol& t = resolve(d.target, d.pos, "sbG");
        for (auto& p : d.pieces) {
            size_t n = t.kind == 's' ? t.dim : 0;
            if (t.kind == 's' && p.cell) throw error_at(d.pos, ErrorKind::ParseError, "a metric on a space takes a single matrix");
            if (t.kind != 's') {
                if (p.cell) {
                    std::string ch = chart_of(*p.cell, t, d.pos);
                    n = t.fibres.at(ch);
                    if (t.fibres.size() == 1) p.cell->chart = "";
                } else {
                    std::set<size_t> ns;
                    for (const auto& [ch, k] : t.fibres) ns.insert(k);
                    if (ns.size() != 1) throw error_at(d.pos, ErrorKind::DimensionMismatch, "charts have different fibre dimensions");
                    n = *ns.begin();
                }
            }
            if (p.matrix.rows() != n || p.matrix.cols() != n)
                throw error_at(d.pos, ErrorKind::DimensionMismatch,
                               "metric matrix is " + std::to_string(p.matrix.rows()) + "x" + std::to_string(p.matrix.cols()) +
                                   ", fibre dimension is " + std::to_string(n));
            if (p.sos)
                for (const auto& term : *p.sos) dims(d.pos, term.functional.coeffs.size(), n, "sos functional");
        }
        Symbol s{'m', {}, 0, false, d.target};
        define(d.name, d.pos, s);
    }
    void check(SectionDecl& d) {
        const Symbol& t = resolve(d.target, d.pos, "bG");
        for (auto& [c, v] : d.pieces) {
            size_t n;
            if (c) {
                std::string ch = chart_of(*c, t, d.pos);
                n = t.fibres.at(ch);
                if (t.fibres.size() == 1) c->chart = "";
            } else {
                if (t.fibres.size() != 1) throw error_at(d.pos, ErrorKind::ParseError, "a section on a glued bundle needs cells");
                n = t.fibres.begin()->second;
            }
            dims(d.pos, v.size(), n, "section value");
        }
        Symbol s{'c', {}, 0, false, d.target};
        define(d.name, d.pos, s);
    }
    void check(Command& c) {
        const std::string& sig = command_signatures().at(c.verb);
        for (size_t i = 0; i < sig.size(); ++i) {
            std::string kinds = sig[i] == 'x' ? "sb" : sig[i] == 'b' ? "bG" : std::string(1, sig[i]);
            if (c.verb == "dual" || c.verb == "exists") kinds = "sbG";
            resolve(c.args[i], c.pos, kinds);
        }
    }
};

}  // namespace detail

// Parses and checks references and shapes.
inline Document parse(const std::string& text) {
    Parser p(text);
    Document d = p.document();
    detail::Checker().run(d);
    return d;
}

inline RatAbsExpr parse_expression(const std::string& text) {
    Parser p(text + " ");
    return p.expression();
}

// ---- JSON views ----

inline Json to_json(const std::vector<RatAbsExpr>& v) {
    Json a = Json::array();
    for (const auto& e : v) a.push_back(e.str());
    return a;
}

inline Json to_json(const ExprMatrix& m) {
    Json a = Json::array();
    for (size_t r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c).str());
        a.push_back(row);
    }
    return a;
}

inline Json to_json(const SosCertificate& cert) {
    Json a = Json::array();
    for (const auto& t : cert) a.push_back({{"coeff", t.coeff.str()}, {"functional", to_json(t.functional.coeffs)}});
    return a;
}

inline Json to_json(const BundleMetric& g) {
    Json pieces = Json::array();
    for (const auto& p : g.pieces) {
        Json j{{"cell", p.cell.str()}, {"matrix", to_json(p.matrix)}};
        if (p.sos) j["sos"] = to_json(*p.sos);
        pieces.push_back(j);
    }
    return {{"name", g.name}, {"pieces", pieces}};
}

inline Json to_json(const Profile& p) {
    Json o = Json::object();
    for (const auto& [c, d] : p) o[c.str()] = d;
    return o;
}

inline Json to_json(const PsdResult& r) {
    Json j{{"kind", r.name()}, {"samples", r.samples}};
    if (!r.witness.empty()) {
        Json w = Json::array();
        for (const auto& q : r.witness) w.push_back(q.get_str());
        j["witness"] = w;
    }
    return j;
}

inline Json to_json(const MetricVerdict& v) {
    Json asym = Json::array();
    for (const auto& c : v.asymmetric_cells) asym.push_back(c.str());
    Json ranks = Json::array();
    for (const auto& r : v.ranks)
        ranks.push_back({{"cell", r.cell.str()}, {"rank", r.rank}, {"required", r.required}, {"constant", r.constant}});
    Json j{{"pass", v.pass()},   {"symmetric", v.symmetric}, {"asymmetric_cells", asym}, {"smooth", v.smooth},
           {"probe_pairs", v.probe_pairs}, {"witness", nullptr}, {"psd", to_json(v.psd)}, {"rank_ok", v.rank_ok()},
           {"ranks", ranks}};
    if (!v.psd_cell.empty()) j["psd"]["cell"] = v.psd_cell;
    if (v.witness) j["witness"] = {{"p", v.witness->p}, {"q", v.witness->q}, {"where", v.witness->where}, {"reason", v.witness->reason}};
    return j;
}

inline Json to_json(const VsVerdict& v) {
    return {{"pass", v.pass()}, {"symmetric", v.symmetric}, {"smooth", v.smooth}, {"psd", to_json(v.psd)},
            {"rank", v.rank},   {"dual_dim", v.dual_dim},   {"rank_ok", v.rank_ok}};
}

inline Json rationals(const std::vector<Rational>& v) {
    Json a = Json::array();
    for (const auto& q : v) a.push_back(q.get_str());
    return a;
}

inline Json to_json(const NonexistenceCertificate& c) {
    Json unknowns = Json::array();
    for (const auto& [i, j] : c.unknowns) unknowns.push_back("g" + std::to_string(i + 1) + std::to_string(j + 1));
    Json forced = Json::array();
    for (const auto& f : c.forced)
        forced.push_back({{"cell", f.cell.str()}, {"functional", rationals(f.functional)}, {"probe_p", f.probe_p}, {"probe_q", f.probe_q}});
    Json transfers = Json::array();
    for (const auto& t : c.transfers)
        transfers.push_back({{"from", t.from.str()},
                             {"to", t.to.str()},
                             {"functional", rationals(t.functional)},
                             {"probe_p", t.probe_p},
                             {"probe_q", t.probe_q}});
    return {{"point", c.point.str()}, {"required_rank", c.required_rank}, {"max_rank", c.max_rank}, {"required", to_json(c.required)},
            {"unknowns", unknowns},  {"forced", forced},                   {"transfers", transfers}};
}

inline Json bundle_summary(const PseudoBundle& B) {
    Json charts = Json::array();
    for (const auto& ch : B.charts()) {
        Json cells = Json::array();
        for (const auto& c : ch.cells) cells.push_back(c.str());
        charts.push_back({{"id", ch.id}, {"var", ch.var}, {"fibre_dim", ch.fibre_dim}, {"cells", cells}});
    }
    Json gens = Json::array();
    for (const auto& g : B.generators()) {
        Json j{{"chart", g.chart}, {"plot", g.str()}};
        if (g.support) {
            Json s = Json::array();
            for (const auto& c : *g.support) s.push_back(c.str());
            j["support"] = s;
        }
        gens.push_back(j);
    }
    Json live = Json::array();
    for (const auto& c : B.live_cells()) live.push_back(c.str());
    return {{"name", B.name()}, {"charts", charts}, {"generators", gens}, {"live_cells", live}, {"dual_dims", to_json(dual_dim_profile(B))}};
}

// ---- runtime ----

// A space viewed as a bundle over a line with one cell, so bundle-level commands apply to it.
inline PseudoBundle space_as_bundle(const std::string& name, const GeneratedVS& V) {
    std::set<Var> taken;
    for (const auto& g : V.generators()) taken.insert(g.domain_vars.begin(), g.domain_vars.end());
    Var x = fresh_var("x", taken);
    std::vector<TotalGenerator> gens;
    for (const auto& g : V.generators()) gens.push_back({x, x, g.domain_vars, g.components, std::nullopt, ""});
    return PseudoBundle(name, {Chart{x, x, V.dim(), {Cell::whole(x)}}}, gens);
}

struct Report {
    Json json;
    int exit_code = 0;
};

class Runtime {
public:
    explicit Runtime(std::uint64_t seed) : seed_(seed) {}

    Report run(const Document& doc) {
        Report rep;
        rep.json = {{"seed", seed_}, {"results", Json::array()}};
        for (const auto& d : doc.decls) {
            try {
                std::visit([&](const auto& x) { declare(x, rep.json["results"]); }, d);
            } catch (const Error& e) {
                rep.json["error"] = {{"kind", to_string(e.kind())}, {"message", e.message()}, {"at", position(d).str()},
                                     {"statement", first_line(print(d))}};
                rep.exit_code = 2;
                return rep;
            }
        }
        return rep;
    }

private:
    struct GlueEntry {
        std::string b1, b2;
        BundleGluing G;
        GluedBundle glued;
    };
    struct MetricEntry {
        std::string target;
        BundleMetric metric;
        std::optional<SosCertificate> space_cert;  // spaces: the single piece's certificate
    };
    struct SectionEntry {
        std::string target;
        PiecewiseSection section;
    };

    std::uint64_t seed_;
    std::map<std::string, GeneratedVS> spaces_;
    std::map<std::string, PseudoBundle> bundles_;  // declared bundles, glued results and spaces as bundles
    std::map<std::string, GlueEntry> gluings_;
    std::map<std::string, MetricEntry> metrics_;
    std::map<std::string, SectionEntry> sections_;
    std::vector<std::pair<std::string, std::string>> order_;  // (name, kind) for report

    static std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

    const PseudoBundle& bundle(const std::string& name) const { return bundles_.at(name); }
    Cell place(Cell c, const PseudoBundle& B) const {
        if (c.chart.empty()) c.chart = B.only_chart().id;
        return c;
    }

    void declare(const SpaceDecl& d, Json&) {
        std::vector<GeneratorPlot> gens;
        for (const auto& g : d.gens) gens.push_back({g.vars, g.comps});
        GeneratedVS V(d.dim, gens, d.name);
        spaces_.emplace(d.name, V);
        bundles_.emplace(d.name, space_as_bundle(d.name, V));
        order_.push_back({d.name, "space"});
    }
    void declare(const BundleDecl& d, Json&) {
        std::vector<Cell> cells;
        for (auto c : d.cells) cells.push_back((c.chart = d.base, c));
        std::vector<TotalGenerator> gens;
        for (size_t i = 0; i < d.gens.size(); ++i) {
            const Generator& g = d.gens[i];
            std::optional<std::vector<Cell>> support;
            if (g.support) {
                support.emplace();
                for (auto c : *g.support) support->push_back((c.chart = d.base, c));
            }
            gens.push_back({d.base, d.base, g.vars, g.comps, support, "g" + std::to_string(i + 1)});
        }
        bundles_.emplace(d.name, PseudoBundle(d.name, {Chart{d.base, d.base, d.fibre, cells}}, gens));
        order_.push_back({d.name, "bundle"});
    }
    void declare(const GlueDecl& d, Json&) {
        const PseudoBundle &B1 = bundle(d.b1), &B2 = bundle(d.b2);
        const Chart &c1 = B1.only_chart(), &c2 = B2.only_chart();
        BundleGluing G;
        G.base = {c1.id, c2.id, {}, d.f, d.inv};
        for (const auto& c : d.on) G.base.Y.push_back(place(c, B1));
        if (d.lift.empty())
            for (const auto& y : G.base.Y) G.lift.push_back({y, ExprMatrix(c2.fibre_dim, c1.fibre_dim)});
        for (const auto& [c, m] : d.lift) G.lift.push_back({place(c, B1), m});
        GluedBundle GB = glue_bundles(B1, B2, G);
        GB.bundle.set_name(d.name);
        bundles_.emplace(d.name, GB.bundle);
        gluings_.emplace(d.name, GlueEntry{d.b1, d.b2, G, GB});
        order_.push_back({d.name, "gluing"});
    }
    void declare(const MetricDecl& d, Json&) {
        const PseudoBundle& B = bundle(d.target);
        MetricEntry e{d.target, {d.name, {}}, std::nullopt};
        for (const auto& p : d.pieces) {
            if (p.cell) {
                e.metric.pieces.push_back({place(*p.cell, B), p.matrix, p.sos});
            } else {
                for (const auto& ch : B.charts()) e.metric.pieces.push_back({Cell::whole(ch.id), p.matrix, p.sos});
                e.space_cert = p.sos;
            }
        }
        metrics_.emplace(d.name, e);
        order_.push_back({d.name, "metric"});
    }
    void declare(const SectionDecl& d, Json&) {
        const PseudoBundle& B = bundle(d.target);
        SectionEntry e{d.target, {}};
        for (const auto& [c, v] : d.pieces) {
            if (c) {
                e.section.pieces.push_back({place(*c, B), v});
            } else {
                for (const auto& ch : B.charts()) e.section.pieces.push_back({Cell::whole(ch.id), v});
            }
        }
        sections_.emplace(d.name, e);
        order_.push_back({d.name, "section"});
    }

    void declare(const Command& c, Json& results) {
        std::string echo = first_line(print(Decl(c)));
        Json out{{"command", echo}};
        const auto& a = c.args;
        if (c.verb == "dual") {
            dual(a[0], out);
        } else if (c.verb == "profile") {
            const PseudoBundle& B = bundle(a[0]);
            out["bundle"] = bundle_summary(B);
            out["profile"] = to_json(dual_dim_profile(B));
        } else if (c.verb == "glue") {
            glue(a[0], out);
        } else if (c.verb == "check-metric") {
            check_metric(a[0], out);
        } else if (c.verb == "induce-metric") {
            induce(a[0], a[1], a[2], out);
        } else if (c.verb == "exists") {
            exists(a[0], out);
        } else if (c.verb == "dual-metric") {
            const MetricEntry& m = metrics_.at(a[0]);
            DualMetric D = dual_metric(bundle(m.target), m.metric, seed_);
            out["dual_bundle"] = bundle_summary(D.bundle);
            out["metric"] = to_json(D.metric);
            out["verdict"] = to_json(is_pseudometric(D.bundle, D.metric, seed_));
        } else if (c.verb == "commute-tensor" || c.verb == "commute-sum") {
            const GlueEntry &g = gluings_.at(a[0]), &h = gluings_.at(a[1]);
            CommutativityReport r = c.verb == "commute-tensor"
                                        ? tensor_glue_commutativity_check(bundle(g.b1), bundle(h.b1), bundle(g.b2), bundle(h.b2), g.G, h.G)
                                        : sum_glue_commutativity_check(bundle(g.b1), bundle(h.b1), bundle(g.b2), bundle(h.b2), g.G, h.G);
            Json cells = Json::array();
            for (const auto& ca : r.cells)
                cells.push_back({{"cell", ca.cell.str()}, {"lhs_dual", ca.lhs_dual}, {"rhs_dual", ca.rhs_dual}, {"agree", ca.agree}});
            Json lifts = Json::array();
            for (const auto& [cell, m] : r.lifts) lifts.push_back({{"cell", cell.str()}, {"matrix", to_json(m)}});
            out["agree"] = r.agree;
            out["lifts_identity"] = r.lifts_identity;
            out["cells"] = cells;
            out["lifts"] = lifts;
        } else if (c.verb == "dual-necessary") {
            const GlueEntry& g = gluings_.at(a[0]);
            DualNecessaryReport r = check_dual_necessary(bundle(g.b1), bundle(g.b2), g.G);
            Json cells = Json::array();
            for (const auto& dc : r.cells)
                cells.push_back({{"cell", dc.cell.str()}, {"dual1", dc.dual1}, {"dual2", dc.dual2}, {"iso", dc.iso}});
            out["holds"] = r.holds;
            out["cells"] = cells;
        } else if (c.verb == "switch") {
            switch_cmd(a[0], out);
        } else if (c.verb == "glue-sections") {
            const GlueEntry& g = gluings_.at(a[0]);
            const SectionEntry &s1 = sections_.at(a[1]), &s2 = sections_.at(a[2]);
            if (s1.target != g.b1 || s2.target != g.b2)
                throw Error(ErrorKind::BaseMismatch, "sections must live on " + g.b1 + " and " + g.b2);
            std::string from = bundle(g.b1).only_chart().id;
            bool ok = check_sections_compatible(pblab::detail::rename_chart(s1.section, from, g.glued.res.source.id), s2.section, g.glued);
            out["compatible"] = ok;
            if (ok) {
                PiecewiseSection s = glue_sections(s1.section, s2.section, g.glued, from);
                Json pieces = Json::array();
                for (const auto& [cell, v] : s.pieces) pieces.push_back({{"cell", cell.str()}, {"value", to_json(v)}});
                out["section"] = pieces;
            }
        } else if (c.verb == "pairing") {
            const MetricEntry& m = metrics_.at(a[0]);
            PairingMap P = pairing_map(bundle(m.target), m.metric);
            Json cells = Json::array();
            for (const auto& pc : P.cells) {
                Json kernel = Json::array();
                for (const auto& k : pc.kernel) kernel.push_back(to_json(k));
                cells.push_back({{"cell", pc.cell.str()}, {"matrix", to_json(pc.matrix)}, {"rank", pc.rank}, {"kernel", kernel}});
            }
            out["cells"] = cells;
            out["rank_warning"] = P.rank_warning;
        } else if (c.verb == "report") {
            Json decls = Json::array();
            for (const auto& [name, kind] : order_) {
                Json j{{"name", name}, {"kind", kind}};
                if (kind == "space") {
                    j["dim"] = spaces_.at(name).dim();
                    j["dual_dim"] = dual_basis(spaces_.at(name)).size();
                } else if (kind == "bundle" || kind == "gluing") {
                    j["dual_dims"] = to_json(dual_dim_profile(bundle(name)));
                } else if (kind == "metric") {
                    j["on"] = metrics_.at(name).target;
                } else {
                    j["on"] = sections_.at(name).target;
                }
                decls.push_back(j);
            }
            out["declarations"] = decls;
        }
        results.push_back(out);
    }

    void dual(const std::string& name, Json& out) {
        if (auto it = spaces_.find(name); it != spaces_.end()) {
            auto basis = dual_basis(it->second);
            Json b = Json::array();
            for (const auto& f : basis) b.push_back(to_json(f.coeffs));
            out["kind"] = "space";
            out["dim"] = it->second.dim();
            out["dual_dim"] = basis.size();
            out["basis"] = b;
            return;
        }
        const PseudoBundle& B = bundle(name);
        DualBundleView v = dual_bundle(B);
        Json bases = Json::object();
        for (const auto& [c, fs] : v.bases) {
            Json b = Json::array();
            for (const auto& f : fs) b.push_back(to_json(f.coeffs));
            bases[c.str()] = b;
        }
        out["kind"] = "bundle";
        out["profile"] = to_json(v.dims());
        out["bases"] = bases;
        std::set<size_t> dims;
        for (const auto& [c, d] : v.dims()) dims.insert(d);
        out["constant_dual_dim"] = dims.size() <= 1;
    }

    void glue(const std::string& name, Json& out) {
        const GlueEntry& g = gluings_.at(name);
        const GluedBundle& GB = g.glued;
        Json pieces = Json::array();
        for (const auto& p : GB.res.pieces) {
            Json j{{"source", p.source.str()}, {"target", p.target.str()}, {"f", p.f.str()}};
            if (p.f_inverse) j["f_inverse"] = p.f_inverse->str();
            pieces.push_back(j);
        }
        Json cells = Json::array();
        Profile prof = dual_dim_profile(GB.bundle);
        for (const auto& c : GB.bundle.live_cells())
            cells.push_back({{"cell", c.str()},
                             {"region", to_string(GB.region(c))},
                             {"fibre_dim", GB.bundle.chart(c.chart).fibre_dim},
                             {"dual_dim", prof.at(c)}});
        out["bundle"] = bundle_summary(GB.bundle);
        out["pieces"] = pieces;
        out["cells"] = cells;
    }

    void check_metric(const std::string& name, Json& out) {
        const MetricEntry& m = metrics_.at(name);
        for (const auto& p : m.metric.pieces)
            if (!is_symmetric(p.matrix)) throw Error(ErrorKind::NotSymmetric, "metric " + name + " is not symmetric over " + p.cell.str());
        if (auto it = spaces_.find(m.target); it != spaces_.end()) {
            out["kind"] = "space";
            out["verdict"] = to_json(is_pseudometric_vs(it->second, {m.metric.pieces.at(0).matrix}, m.space_cert, seed_));
            return;
        }
        out["kind"] = "bundle";
        out["verdict"] = to_json(is_pseudometric(bundle(m.target), m.metric, seed_));
    }

    void induce(const std::string& gname, const std::string& a, const std::string& b, Json& out) {
        const GlueEntry& g = gluings_.at(gname);
        const MetricEntry &g1 = metrics_.at(a), &g2 = metrics_.at(b);
        if (g1.target != g.b1 || g2.target != g.b2)
            throw Error(ErrorKind::BaseMismatch, "metrics must live on " + g.b1 + " and " + g.b2);
        const PseudoBundle &B1 = bundle(g.b1), &B2 = bundle(g.b2);
        bool compatible = compat_check(B1, B2, g1.metric, g2.metric, g.G);
        out["compatible"] = compatible;
        if (!compatible) return;
        GluedMetric gm = glue_metrics(B1, B2, g1.metric, g2.metric, g.G);
        out["metric"] = to_json(gm.metric);
        out["verdict"] = to_json(is_pseudometric(gm.glued.bundle, gm.metric, seed_));
        Json comm;
        try {
            GluedMetric cm = glue_metrics_commutative(B1, B2, g1.metric, g2.metric, g.G);
            comm = {{"available", true},
                    {"metric", to_json(cm.metric)},
                    {"verdict", to_json(is_pseudometric(cm.glued.bundle, cm.metric, seed_))},
                    {"coincide", metrics_coincide(gm.glued.bundle, gm.metric, cm.metric)}};
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NecessaryConditionFails) throw;
            comm = {{"available", false}, {"reason", e.message()}};
        }
        out["commutative"] = comm;
    }

    void exists(const std::string& name, Json& out) {
        const PseudoBundle& B = bundle(name);
        ExistenceResult r = existence_check(B, seed_);
        out["result"] = r.name();
        out["profile"] = to_json(dual_dim_profile(B));
        if (r.metric) out["metric"] = to_json(*r.metric);
        if (r.verdict) out["verdict"] = to_json(*r.verdict);
        if (r.certificate) {
            out["certificate"] = to_json(*r.certificate);
            out["certificate"]["replayed"] = replay(B, *r.certificate);
        }
    }

    void switch_cmd(const std::string& name, Json& out) {
        const GlueEntry& g = gluings_.at(name);
        const Resolution& R = g.glued.res;
        SwitchMap s = switch_map(g.glued.space());
        BaseGluing back = switched(R, g.G.base);
        Json sw{{"source_chart", back.source_chart}, {"target_chart", back.target_chart}, {"f", back.f.str()}};
        if (back.f_inverse) sw["f_inverse"] = back.f_inverse->str();
        Json ys = Json::array();
        for (const auto& y : back.Y) ys.push_back(y.str());
        sw["Y"] = ys;
        Json samples = Json::array();
        bool involutive = true;
        for (const auto* ch : {&R.source, &R.target})
            for (long k : {-2L, -1L, 0L, 1L, 2L}) {
                ChartPoint p{ch->id, Rational(k)};
                if (!ch->locate(p.x)) continue;
                ChartPoint q = s(p), r = s.inverse()(q);
                ChartPoint canon = s.canonical(p);
                involutive = involutive && r == canon;
                samples.push_back({{"point", p.chart + ":" + p.x.get_str()},
                                   {"image", q.chart + ":" + q.x.get_str()},
                                   {"region", to_string(s.region(p))},
                                   {"region_after", to_string(s.region_after(p))}});
            }
        out["switched"] = sw;
        out["samples"] = samples;
        out["involutive"] = involutive;
    }
};

inline Report run(const Document& doc, std::uint64_t seed = 1) { return Runtime(seed).run(doc); }

// Parse errors and class errors raised while reading are usage errors (exit 1).
inline Report run_text(const std::string& text, std::uint64_t seed = 1) {
    Document doc;
    try {
        doc = parse(text);
    } catch (const Error& e) {
        Report r;
        r.json = {{"seed", seed}, {"results", Json::array()}, {"error", {{"kind", to_string(e.kind())}, {"message", e.message()}}}};
        r.exit_code = 1;
        return r;
    }
    return run(doc, seed);
}

}  // namespace pblab::dsl
