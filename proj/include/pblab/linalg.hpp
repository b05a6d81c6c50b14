#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pblab/error.hpp"
#include "pblab/rational.hpp"
#include "pblab/symexpr.hpp"

namespace pblab {

template <class T>
struct FieldTraits;

template <>
struct FieldTraits<Rational> {
    static Rational zero() { return 0; }
    static Rational one() { return 1; }
    static bool is_zero(const Rational& a) { return sgn(a) == 0; }
};

template <>
struct FieldTraits<RatAbsExpr> {
    static RatAbsExpr zero() { return RatAbsExpr(); }
    static RatAbsExpr one() { return RatAbsExpr(Rational(1)); }
    static bool is_zero(const RatAbsExpr& a) { return a.is_zero(); }
};

template <class T>
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, FieldTraits<T>::zero()) {}
    Matrix(size_t rows, size_t cols, const T& fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(size_t n) {
        Matrix m(n, n);
        for (size_t i = 0; i < n; ++i) m(i, i) = FieldTraits<T>::one();
        return m;
    }
    static Matrix from_rows(const std::vector<std::vector<T>>& rows, size_t cols) {
        Matrix m(rows.size(), cols);
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != cols) throw Error(ErrorKind::ShapeMismatch, "ragged matrix rows");
            for (size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
        }
        return m;
    }
    static Matrix column(const std::vector<T>& v) { return from_rows(std::vector<std::vector<T>>{v}, v.size()).transpose(); }

    size_t rows() const { return rows_; }
    size_t cols() const { return cols_; }
    T& operator()(size_t i, size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(size_t i, size_t j) const { return data_[i * cols_ + j]; }

    std::vector<T> row(size_t i) const { return std::vector<T>(data_.begin() + i * cols_, data_.begin() + (i + 1) * cols_); }
    std::vector<T> col(size_t j) const {
        std::vector<T> out;
        for (size_t i = 0; i < rows_; ++i) out.push_back((*this)(i, j));
        return out;
    }
    std::vector<std::vector<T>> row_list() const {
        std::vector<std::vector<T>> out;
        for (size_t i = 0; i < rows_; ++i) out.push_back(row(i));
        return out;
    }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (size_t i = 0; i < rows_; ++i)
            for (size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
        return t;
    }

    bool is_square() const { return rows_ == cols_; }
    bool is_zero() const {
        for (const auto& v : data_)
            if (!FieldTraits<T>::is_zero(v)) return false;
        return true;
    }

    template <class F>
    Matrix map(F&& f) const {
        Matrix out(rows_, cols_);
        for (size_t i = 0; i < data_.size(); ++i) out.data_[i] = f(data_[i]);
        return out;
    }

    friend Matrix operator*(const Matrix& a, const Matrix& b) {
        if (a.cols_ != b.rows_) throw Error(ErrorKind::ShapeMismatch, "matrix product shape");
        Matrix out(a.rows_, b.cols_);
        for (size_t i = 0; i < a.rows_; ++i)
            for (size_t k = 0; k < a.cols_; ++k) {
                if (FieldTraits<T>::is_zero(a(i, k))) continue;
                for (size_t j = 0; j < b.cols_; ++j) out(i, j) += a(i, k) * b(k, j);
            }
        return out;
    }
    friend Matrix operator+(const Matrix& a, const Matrix& b) {
        if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw Error(ErrorKind::ShapeMismatch, "matrix sum shape");
        Matrix out = a;
        for (size_t i = 0; i < out.data_.size(); ++i) out.data_[i] += b.data_[i];
        return out;
    }
    friend Matrix operator-(const Matrix& a, const Matrix& b) {
        if (a.rows_ != b.rows_ || a.cols_ != b.cols_) throw Error(ErrorKind::ShapeMismatch, "matrix difference shape");
        Matrix out = a;
        for (size_t i = 0; i < out.data_.size(); ++i) out.data_[i] -= b.data_[i];
        return out;
    }
    friend Matrix operator*(const T& s, const Matrix& a) {
        return a.map([&](const T& v) { return s * v; });
    }
    friend bool operator==(const Matrix& a, const Matrix& b) {
        if (a.rows_ != b.rows_ || a.cols_ != b.cols_) return false;
        for (size_t i = 0; i < a.data_.size(); ++i)
            if (!(a.data_[i] == b.data_[i])) return false;
        return true;
    }

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<T> data_;
};

template <class T>
struct Echelon {
    Matrix<T> reduced;
    std::vector<size_t> pivots;
};

// Gauss-Jordan with the first nonzero entry of each column as pivot.
template <class T>
Echelon<T> rref(Matrix<T> m) {
    std::vector<size_t> pivots;
    size_t r = 0;
    for (size_t c = 0; c < m.cols() && r < m.rows(); ++c) {
        size_t p = r;
        while (p < m.rows() && FieldTraits<T>::is_zero(m(p, c))) ++p;
        if (p == m.rows()) continue;
        if (p != r)
            for (size_t j = 0; j < m.cols(); ++j) std::swap(m(p, j), m(r, j));
        T inv = FieldTraits<T>::one() / m(r, c);
        for (size_t j = c; j < m.cols(); ++j) m(r, j) = m(r, j) * inv;
        for (size_t i = 0; i < m.rows(); ++i) {
            if (i == r || FieldTraits<T>::is_zero(m(i, c))) continue;
            T f = m(i, c);
            for (size_t j = c; j < m.cols(); ++j) m(i, j) = m(i, j) - f * m(r, j);
        }
        pivots.push_back(c);
        ++r;
    }
    return {std::move(m), std::move(pivots)};
}

template <class T>
size_t rank(const Matrix<T>& m) {
    return rref(m).pivots.size();
}

// One basis vector per free column: 1 there, minus the reduced entries at pivot columns.
template <class T>
std::vector<std::vector<T>> nullspace(const Matrix<T>& m) {
    Echelon<T> e = rref(m);
    std::vector<bool> is_pivot(m.cols(), false);
    for (size_t p : e.pivots) is_pivot[p] = true;
    std::vector<std::vector<T>> basis;
    for (size_t f = 0; f < m.cols(); ++f) {
        if (is_pivot[f]) continue;
        std::vector<T> v(m.cols(), FieldTraits<T>::zero());
        v[f] = FieldTraits<T>::one();
        for (size_t i = 0; i < e.pivots.size(); ++i) v[e.pivots[i]] = -e.reduced(i, f);
        basis.push_back(std::move(v));
    }
    return basis;
}

template <class T>
std::optional<Matrix<T>> inverse(const Matrix<T>& m) {
    if (!m.is_square()) throw Error(ErrorKind::ShapeMismatch, "inverse of a non-square matrix");
    size_t n = m.rows();
    Matrix<T> aug(n, 2 * n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) aug(i, j) = m(i, j);
        aug(i, n + i) = FieldTraits<T>::one();
    }
    Echelon<T> e = rref(aug);
    if (e.pivots.size() < n || (n > 0 && e.pivots[n - 1] != n - 1)) return std::nullopt;
    Matrix<T> out(n, n);
    for (size_t i = 0; i < n; ++i)
        for (size_t j = 0; j < n; ++j) out(i, j) = e.reduced(i, n + j);
    return out;
}

template <class T>
T determinant(Matrix<T> m) {
    if (!m.is_square()) throw Error(ErrorKind::ShapeMismatch, "determinant of a non-square matrix");
    size_t n = m.rows();
    T det = FieldTraits<T>::one();
    for (size_t c = 0; c < n; ++c) {
        size_t p = c;
        while (p < n && FieldTraits<T>::is_zero(m(p, c))) ++p;
        if (p == n) return FieldTraits<T>::zero();
        if (p != c) {
            for (size_t j = 0; j < n; ++j) std::swap(m(p, j), m(c, j));
            det = -det;
        }
        det = det * m(c, c);
        T inv = FieldTraits<T>::one() / m(c, c);
        for (size_t i = c + 1; i < n; ++i) {
            if (FieldTraits<T>::is_zero(m(i, c))) continue;
            T f = m(i, c) * inv;
            for (size_t j = c; j < n; ++j) m(i, j) = m(i, j) - f * m(c, j);
        }
    }
    return det;
}

template <class T>
Matrix<T> kronecker(const Matrix<T>& a, const Matrix<T>& b) {
    Matrix<T> out(a.rows() * b.rows(), a.cols() * b.cols());
    for (size_t i = 0; i < a.rows(); ++i)
        for (size_t j = 0; j < a.cols(); ++j)
            for (size_t k = 0; k < b.rows(); ++k)
                for (size_t l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
    return out;
}

// Stacks vectors as rows.
template <class T>
Matrix<T> rows_matrix(const std::vector<std::vector<T>>& vectors, size_t dim) {
    return Matrix<T>::from_rows(vectors, dim);
}

template <class T>
bool same_span(const std::vector<std::vector<T>>& a, const std::vector<std::vector<T>>& b, size_t dim) {
    size_t ra = rank(rows_matrix(a, dim));
    size_t rb = rank(rows_matrix(b, dim));
    if (ra != rb) return false;
    std::vector<std::vector<T>> both = a;
    both.insert(both.end(), b.begin(), b.end());
    return rank(rows_matrix(both, dim)) == ra;
}

// span(a) contained in span(b)
template <class T>
bool span_contains(const std::vector<std::vector<T>>& b, const std::vector<std::vector<T>>& a, size_t dim) {
    std::vector<std::vector<T>> both = b;
    both.insert(both.end(), a.begin(), a.end());
    return rank(rows_matrix(both, dim)) == rank(rows_matrix(b, dim));
}

template <class T>
bool is_symmetric(const Matrix<T>& m) {
    if (!m.is_square()) return false;
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = i + 1; j < m.cols(); ++j)
            if (!(m(i, j) == m(j, i))) return false;
    return true;
}

using QMatrix = Matrix<Rational>;
using ExprMatrix = Matrix<RatAbsExpr>;

inline ExprMatrix to_expr(const QMatrix& m) {
    ExprMatrix out(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = 0; j < m.cols(); ++j) out(i, j) = RatAbsExpr(m(i, j));
    return out;
}

inline ExprMatrix normalize(const ExprMatrix& m, const SignContext& ctx) {
    return m.map([&](const RatAbsExpr& e) { return normalize(e, ctx); });
}

inline std::vector<RatAbsExpr> normalize_row(std::vector<RatAbsExpr> row, const SignContext& ctx) {
    for (auto& e : row) e = normalize(e, ctx);
    return row;
}

inline ExprMatrix substitute(const ExprMatrix& m, const std::map<Var, RatAbsExpr>& sigma, const SignContext& ctx = {}) {
    return m.map([&](const RatAbsExpr& e) { return substitute(e, sigma, ctx); });
}

inline QMatrix eval_at(const ExprMatrix& m, const std::map<Var, Rational>& point) {
    QMatrix out(m.rows(), m.cols());
    for (size_t i = 0; i < m.rows(); ++i)
        for (size_t j = 0; j < m.cols(); ++j) out(i, j) = eval_at(m(i, j), point);
    return out;
}

inline std::vector<std::vector<std::string>> to_strings(const ExprMatrix& m) {
    std::vector<std::vector<std::string>> out;
    for (size_t i = 0; i < m.rows(); ++i) {
        std::vector<std::string> r;
        for (size_t j = 0; j < m.cols(); ++j) r.push_back(m(i, j).str());
        out.push_back(std::move(r));
    }
    return out;
}

// Coefficients of det(tI + M) = sum_k E_k t^(n-k) via Faddeev-LeVerrier; E_k are the sums of
// k-by-k principal minors. A symmetric matrix is PSD iff every E_k >= 0.
inline std::vector<Rational> principal_minor_sums(const QMatrix& m) {
    size_t n = m.rows();
    std::vector<Rational> c(n + 1, Rational(0));
    c[0] = 1;
    QMatrix mk(n, n);
    for (size_t k = 1; k <= n; ++k) {
        QMatrix next = m * mk;
        for (size_t i = 0; i < n; ++i) next(i, i) += c[k - 1];
        QMatrix prod = m * next;
        Rational tr = 0;
        for (size_t i = 0; i < n; ++i) tr += prod(i, i);
        c[k] = -tr / static_cast<long>(k);
        mk = std::move(next);
    }
    for (size_t k = 1; k <= n; k += 2) c[k] = -c[k];
    return c;
}

inline bool is_psd(const QMatrix& m) {
    for (const auto& s : principal_minor_sums(m))
        if (sgn(s) < 0) return false;
    return true;
}

}  // namespace pblab
