#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace adpipe {

/// Dense row-major tensor. Rank is dynamic but almost everything in this
/// library is a matrix [rows x cols] or a vector [n].
template <class T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != data.size())
            throw std::invalid_argument("tensor: shape does not match data length");
    }

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::size_t r, std::size_t c) { return Tensor({r, c}); }
    static Tensor zeros(std::size_t n) { return Tensor({n}); }

    static Tensor full(std::size_t r, std::size_t c, T v) {
        Tensor t({r, c});
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    /// 2-D literal, e.g. Tensor<double>::matrix({{1,0},{0,1}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        Tensor t;
        t.shape = {rows.size(), rows.size() ? rows.begin()->size() : 0};
        for (const auto& r : rows) {
            if (r.size() != t.shape[1]) throw std::invalid_argument("tensor: ragged matrix literal");
            t.data.insert(t.data.end(), r.begin(), r.end());
        }
        return t;
    }

    static Tensor vector(std::initializer_list<T> v) { return Tensor({v.size()}, std::vector<T>(v)); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        if (rank() != 2) throw std::invalid_argument("tensor: rows() on non-matrix");
        return shape[0];
    }
    std::size_t cols() const {
        if (rank() != 2) throw std::invalid_argument("tensor: cols() on non-matrix");
        return shape[1];
    }

    T& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    const T& at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    const T* row_ptr(std::size_t i) const { return data.data() + i * shape[1]; }
    T* row_ptr(std::size_t i) { return data.data() + i * shape[1]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Raised when a training step or loss evaluation produces non-finite values.
struct NumericalError : std::runtime_error {
    std::string where;
    explicit NumericalError(const std::string& w)
        : std::runtime_error("non-finite value in '" + w + "'"), where(w) {}
};

struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

namespace kernels {

template <class T>
void check_matrix(const Tensor<T>& t, const char* name) {
    if (t.rank() != 2) throw ShapeError(std::string(name) + ": expected a matrix, got " + t.shape_str());
}

/// C = A * B, [m x k] * [k x n].
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix(a, "matmul lhs");
    check_matrix(b, "matmul rhs");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.row_ptr(i);
        T* crow = c.row_ptr(i);
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b.row_ptr(p);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

/// C = A * B^T, [m x k] * [n x k]^T.
template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix(a, "matmul_nt lhs");
    check_matrix(b, "matmul_nt rhs");
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.row_ptr(i);
        T* crow = c.row_ptr(i);
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b.row_ptr(j);
            T s = 0;
            for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
    return c;
}

/// C = A^T * B, [k x m]^T * [k x n].
template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    check_matrix(a, "matmul_tn lhs");
    check_matrix(b, "matmul_tn rhs");
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: inner dimensions disagree " + a.shape_str() + " vs " + b.shape_str());
    const std::size_t m = a.cols(), k = a.rows(), n = b.cols();
    Tensor<T> c({m, n});
    for (std::size_t p = 0; p < k; ++p) {
        const T* arow = a.row_ptr(p);
        const T* brow = b.row_ptr(p);
        for (std::size_t i = 0; i < m; ++i) {
            const T av = arow[i];
            if (av == T(0)) continue;
            T* crow = c.row_ptr(i);
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    check_matrix(a, "transpose");
    Tensor<T> out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

/// Row-wise softmax with temperature, stabilized by the per-row max.
template <class T>
Tensor<T> softmax_rows(const Tensor<T>& logits, T temperature) {
    check_matrix(logits, "softmax_rows");
    if (!(temperature > T(0))) throw std::invalid_argument("softmax_rows: temperature must be positive");
    if (!logits.all_finite()) throw std::invalid_argument("softmax_rows: non-finite input");
    Tensor<T> out({logits.rows(), logits.cols()});
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const T* in = logits.row_ptr(i);
        T* o = out.row_ptr(i);
        T mx = in[0];
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            o[j] = std::exp((in[j] - mx) / temperature);
            sum += o[j];
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) o[j] /= sum;
    }
    return out;
}

/// softmax(Q K^T / sqrt(d)) V.
template <class T>
Tensor<T> scaled_attention(const Tensor<T>& query, const Tensor<T>& key, const Tensor<T>& value) {
    check_matrix(query, "scaled_attention query");
    check_matrix(key, "scaled_attention key");
    check_matrix(value, "scaled_attention value");
    if (query.cols() != key.cols())
        throw ShapeError("scaled_attention: query/key widths disagree");
    if (key.rows() != value.rows())
        throw ShapeError("scaled_attention: key/value row counts disagree");
    Tensor<T> scores = matmul_nt(query, key);
    const T scale = T(1) / std::sqrt(static_cast<T>(query.cols()));
    for (T& v : scores.data) v *= scale;
    return matmul(softmax_rows(scores, T(1)), value);
}

/// Rows scaled to unit L2 norm. Rows shorter than eps are divided by eps
/// instead, so degenerate inputs stay finite.
template <class T>
Tensor<T> l2_normalize_rows(const Tensor<T>& x, T eps = T(1e-12)) {
    check_matrix(x, "l2_normalize_rows");
    Tensor<T> out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        T* row = out.row_ptr(i);
        T s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += row[j] * row[j];
        const T norm = std::max(std::sqrt(s), eps);
        for (std::size_t j = 0; j < x.cols(); ++j) row[j] /= norm;
    }
    return out;
}

template <class T>
Tensor<T> mean_rows(const Tensor<T>& x) {
    check_matrix(x, "mean_rows");
    if (x.rows() == 0) throw std::invalid_argument("mean_rows: empty matrix");
    Tensor<T> out({1, x.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] /= static_cast<T>(x.rows());
    return out;
}

template <class T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace kernels
}  // namespace adpipe
