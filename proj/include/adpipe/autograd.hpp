#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adpipe/tensor.hpp"

namespace adpipe::ag {

/// Reverse-mode tape over Tensor<T>. Nodes are appended in evaluation order,
/// so walking the tape backwards is a valid reverse topological order. The
/// op set is exactly what the losses in this library need; it is not a
/// general autodiff system.
template <class T>
class Tape {
public:
    using VarId = std::size_t;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    VarId constant(Tensor<T> v) { return push(std::move(v), false); }
    VarId leaf(Tensor<T> v) { return push(std::move(v), true); }

    const Tensor<T>& value(VarId id) const { return nodes_[id].value; }
    const Tensor<T>& grad(VarId id) const { return nodes_[id].grad; }
    bool needs_grad(VarId id) const { return nodes_[id].needs_grad; }

    T scalar(VarId id) const {
        if (nodes_[id].value.numel() != 1) throw ShapeError("scalar: variable is not a scalar");
        return nodes_[id].value.data[0];
    }

    // ---- elementwise ----

    VarId add(VarId a, VarId b) {
        require_same_shape(a, b, "add");
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += value(b).data[i];
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
            t.accumulate(a, g);
            t.accumulate(b, g);
        });
    }

    VarId sub(VarId a, VarId b) {
        require_same_shape(a, b, "sub");
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= value(b).data[i];
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
            t.accumulate(a, g);
            Tensor<T> neg = g;
            for (T& v : neg.data) v = -v;
            t.accumulate(b, neg);
        });
    }

    VarId mul(VarId a, VarId b) {
        require_same_shape(a, b, "mul");
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= value(b).data[i];
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
            Tensor<T> da = g, db = g;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                da.data[i] *= t.value(b).data[i];
                db.data[i] *= t.value(a).data[i];
            }
            t.accumulate(a, da);
            t.accumulate(b, db);
        });
    }

    VarId scale(VarId a, T c) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v *= c;
        return push_op(std::move(out), {a}, [a, c](Tape& t, const Tensor<T>& g) {
            Tensor<T> da = g;
            for (T& v : da.data) v *= c;
            t.accumulate(a, da);
        });
    }

    /// a + c*b.
    VarId add_scaled(VarId a, VarId b, T c) {
        require_same_shape(a, b, "add_scaled");
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += c * value(b).data[i];
        return push_op(std::move(out), {a, b}, [a, b, c](Tape& t, const Tensor<T>& g) {
            t.accumulate(a, g);
            Tensor<T> db = g;
            for (T& v : db.data) v *= c;
            t.accumulate(b, db);
        });
    }

    /// Elementwise addition of a constant tensor (e.g. an attention mask).
    VarId add_const(VarId a, const Tensor<T>& c) {
        if (!value(a).same_shape(c)) throw ShapeError("add_const: shape mismatch");
        Tensor<T> out = value(a);
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += c.data[i];
        return push_op(std::move(out), {a},
                       [a](Tape& t, const Tensor<T>& g) { t.accumulate(a, g); });
    }

    VarId gelu(VarId a) {
        Tensor<T> out = value(a);
        for (T& v : out.data) v = T(0.5) * v * (T(1) + std::erf(v / T(kSqrt2)));
        return push_op(std::move(out), {a}, [a](Tape& t, const Tensor<T>& g) {
            Tensor<T> da = g;
            for (std::size_t i = 0; i < g.numel(); ++i) {
                const T x = t.value(a).data[i];
                const T d = T(0.5) * (T(1) + std::erf(x / T(kSqrt2))) +
                            x * std::exp(T(-0.5) * x * x) * T(kInvSqrt2Pi);
                da.data[i] = g.data[i] * d;
            }
            t.accumulate(a, da);
        });
    }

    // ---- matrix products ----

    VarId matmul(VarId a, VarId b) {
        Tensor<T> out = kernels::matmul(value(a), value(b));
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
            if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(g, t.value(b)));
            if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(t.value(a), g));
        });
    }

    /// a * b^T.
    VarId matmul_nt(VarId a, VarId b) {
        Tensor<T> out = kernels::matmul_nt(value(a), value(b));
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
            if (t.needs_grad(a)) t.accumulate(a, kernels::matmul(g, t.value(b)));
            if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(g, t.value(a)));
        });
    }

    /// a^T * b.
    VarId matmul_tn(VarId a, VarId b) {
        Tensor<T> out = kernels::matmul_tn(value(a), value(b));
        return push_op(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
            if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(t.value(b), g));
            if (t.needs_grad(b)) t.accumulate(b, kernels::matmul(t.value(a), g));
        });
    }

    VarId transpose(VarId a) {
        Tensor<T> out = kernels::transpose(value(a));
        return push_op(std::move(out), {a}, [a](Tape& t, const Tensor<T>& g) {
            t.accumulate(a, kernels::transpose(g));
        });
    }

    /// Adds a rank-1 bias [cols] to every row of m.
    VarId add_bias(VarId m, VarId bias) {
        const Tensor<T>& mv = value(m);
        const Tensor<T>& bv = value(bias);
        kernels::check_matrix(mv, "add_bias");
        if (bv.rank() != 1 || bv.numel() != mv.cols())
            throw ShapeError("add_bias: bias length does not match column count");
        Tensor<T> out = mv;
        for (std::size_t i = 0; i < mv.rows(); ++i)
            for (std::size_t j = 0; j < mv.cols(); ++j) out.at(i, j) += bv[j];
        return push_op(std::move(out), {m, bias}, [m, bias](Tape& t, const Tensor<T>& g) {
            t.accumulate(m, g);
            if (t.needs_grad(bias)) {
                Tensor<T> db({g.cols()});
                for (std::size_t i = 0; i < g.rows(); ++i)
                    for (std::size_t j = 0; j < g.cols(); ++j) db[j] += g.at(i, j);
                t.accumulate(bias, db);
            }
        });
    }

    // ---- normalizations ----

    VarId softmax_rows(VarId a, T temperature) {
        Tensor<T> out = kernels::softmax_rows(value(a), temperature);
        return push_op(std::move(out), {a}, [a, temperature](Tape& t, const Tensor<T>& g, VarId self) {
            const Tensor<T>& y = t.value(self);
            Tensor<T> da = g;
            for (std::size_t i = 0; i < y.rows(); ++i) {
                T inner = 0;
                for (std::size_t j = 0; j < y.cols(); ++j) inner += g.at(i, j) * y.at(i, j);
                for (std::size_t j = 0; j < y.cols(); ++j)
                    da.at(i, j) = y.at(i, j) * (g.at(i, j) - inner) / temperature;
            }
            t.accumulate(a, da);
        });
    }

    VarId l2_normalize_rows(VarId a, T eps = T(1e-12)) {
        const Tensor<T>& x = value(a);
        kernels::check_matrix(x, "l2_normalize_rows");
        Tensor<T> out = kernels::l2_normalize_rows(x, eps);
        return push_op(std::move(out), {a}, [a, eps](Tape& t, const Tensor<T>& g, VarId self) {
            const Tensor<T>& x = t.value(a);
            const Tensor<T>& y = t.value(self);
            Tensor<T> da = g;
            for (std::size_t i = 0; i < x.rows(); ++i) {
                T s = 0;
                for (std::size_t j = 0; j < x.cols(); ++j) s += x.at(i, j) * x.at(i, j);
                const T norm = std::sqrt(s);
                if (norm > eps) {
                    T gy = 0;
                    for (std::size_t j = 0; j < x.cols(); ++j) gy += g.at(i, j) * y.at(i, j);
                    for (std::size_t j = 0; j < x.cols(); ++j)
                        da.at(i, j) = (g.at(i, j) - y.at(i, j) * gy) / norm;
                } else {
                    for (std::size_t j = 0; j < x.cols(); ++j) da.at(i, j) = g.at(i, j) / eps;
                }
            }
            t.accumulate(a, da);
        });
    }

    /// Per-row layer normalization with learned gain/bias (both rank-1).
    VarId layer_norm_rows(VarId a, VarId gain, VarId bias, T eps = T(1e-5)) {
        const Tensor<T>& x = value(a);
        kernels::check_matrix(x, "layer_norm_rows");
        const std::size_t d = x.cols();
        if (value(gain).numel() != d || value(bias).numel() != d)
            throw ShapeError("layer_norm_rows: gain/bias length mismatch");
        Tensor<T> out({x.rows(), d});
        for (std::size_t i = 0; i < x.rows(); ++i) {
            T mu = 0, var = 0;
            for (std::size_t j = 0; j < d; ++j) mu += x.at(i, j);
            mu /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
                const T c = x.at(i, j) - mu;
                var += c * c;
            }
            var /= static_cast<T>(d);
            const T inv = T(1) / std::sqrt(var + eps);
            for (std::size_t j = 0; j < d; ++j)
                out.at(i, j) = (x.at(i, j) - mu) * inv * value(gain)[j] + value(bias)[j];
        }
        return push_op(std::move(out), {a, gain, bias}, [a, gain, bias, eps](Tape& t, const Tensor<T>& g) {
            const Tensor<T>& x = t.value(a);
            const Tensor<T>& gn = t.value(gain);
            const std::size_t d = x.cols();
            Tensor<T> da({x.rows(), d});
            Tensor<T> dgain({d}), dbias({d});
            for (std::size_t i = 0; i < x.rows(); ++i) {
                T mu = 0, var = 0;
                for (std::size_t j = 0; j < d; ++j) mu += x.at(i, j);
                mu /= static_cast<T>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const T c = x.at(i, j) - mu;
                    var += c * c;
                }
                var /= static_cast<T>(d);
                const T inv = T(1) / std::sqrt(var + eps);
                // dxhat, then the two reduction terms of the standard formula
                T sum_dxhat = 0, sum_dxhat_xhat = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const T xhat = (x.at(i, j) - mu) * inv;
                    const T dxhat = g.at(i, j) * gn[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    dgain[j] += g.at(i, j) * xhat;
                    dbias[j] += g.at(i, j);
                }
                for (std::size_t j = 0; j < d; ++j) {
                    const T xhat = (x.at(i, j) - mu) * inv;
                    const T dxhat = g.at(i, j) * gn[j];
                    da.at(i, j) = inv * (dxhat - (sum_dxhat + xhat * sum_dxhat_xhat) / static_cast<T>(d));
                }
            }
            t.accumulate(a, da);
            t.accumulate(gain, dgain);
            t.accumulate(bias, dbias);
        });
    }

    // ---- reductions and reshaping ----

    VarId mean_rows(VarId a) {
        Tensor<T> out = kernels::mean_rows(value(a));
        const std::size_t n = value(a).rows();
        return push_op(std::move(out), {a}, [a, n](Tape& t, const Tensor<T>& g) {
            Tensor<T> da({n, g.cols()});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) da.at(i, j) = g.at(0, j) / static_cast<T>(n);
            t.accumulate(a, da);
        });
    }

    /// Column sums of a matrix, as a [1 x cols] row.
    VarId col_sums(VarId a) {
        const Tensor<T>& x = value(a);
        kernels::check_matrix(x, "col_sums");
        Tensor<T> out({1, x.cols()});
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
        const std::size_t n = x.rows();
        return push_op(std::move(out), {a}, [a, n](Tape& t, const Tensor<T>& g) {
            Tensor<T> da({n, g.cols()});
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) da.at(i, j) = g.at(0, j);
            t.accumulate(a, da);
        });
    }

    VarId sum_all(VarId a) {
        T s = 0;
        for (T v : value(a).data) s += v;
        Tensor<T> out({1});
        out[0] = s;
        return push_op(std::move(out), {a}, [a](Tape& t, const Tensor<T>& g) {
            Tensor<T> da = t.value(a);
            for (T& v : da.data) v = g.data[0];
            t.accumulate(a, da);
        });
    }

    /// Divide row k of a [K x C] by (s_k + eps), with s a [1 x K] row.
    VarId div_rows(VarId a, VarId s, T eps = T(0)) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& sv = value(s);
        kernels::check_matrix(av, "div_rows");
        if (sv.rank() != 2 || sv.rows() != 1 || sv.cols() != av.rows())
            throw ShapeError("div_rows: divisor must be [1 x rows]");
        Tensor<T> out = av;
        for (std::size_t k = 0; k < av.rows(); ++k) {
            const T den = sv[k] + eps;
            for (std::size_t c = 0; c < av.cols(); ++c) out.at(k, c) /= den;
        }
        return push_op(std::move(out), {a, s}, [a, s, eps](Tape& t, const Tensor<T>& g) {
            const Tensor<T>& av = t.value(a);
            const Tensor<T>& sv = t.value(s);
            Tensor<T> da = g;
            Tensor<T> ds({1, sv.cols()});
            for (std::size_t k = 0; k < av.rows(); ++k) {
                const T den = sv[k] + eps;
                T acc = 0;
                for (std::size_t c = 0; c < av.cols(); ++c) {
                    da.at(k, c) = g.at(k, c) / den;
                    acc += g.at(k, c) * av.at(k, c);
                }
                ds[k] = -acc / (den * den);
            }
            t.accumulate(a, da);
            t.accumulate(s, ds);
        });
    }

    VarId slice_rows(VarId a, std::size_t start, std::size_t count) {
        const Tensor<T>& x = value(a);
        kernels::check_matrix(x, "slice_rows");
        if (start + count > x.rows()) throw ShapeError("slice_rows: out of range");
        Tensor<T> out({count, x.cols()});
        std::copy(x.row_ptr(start), x.row_ptr(start) + count * x.cols(), out.data.begin());
        return push_op(std::move(out), {a}, [a, start](Tape& t, const Tensor<T>& g) {
            const Tensor<T>& x = t.value(a);
            Tensor<T> da({x.rows(), x.cols()});
            std::copy(g.data.begin(), g.data.end(), da.row_ptr(start));
            t.accumulate(a, da);
        });
    }

    VarId slice_cols(VarId a, std::size_t start, std::size_t count) {
        const Tensor<T>& x = value(a);
        kernels::check_matrix(x, "slice_cols");
        if (start + count > x.cols()) throw ShapeError("slice_cols: out of range");
        Tensor<T> out({x.rows(), count});
        for (std::size_t i = 0; i < x.rows(); ++i)
            std::copy(x.row_ptr(i) + start, x.row_ptr(i) + start + count, out.row_ptr(i));
        return push_op(std::move(out), {a}, [a, start](Tape& t, const Tensor<T>& g) {
            const Tensor<T>& x = t.value(a);
            Tensor<T> da({x.rows(), x.cols()});
            for (std::size_t i = 0; i < x.rows(); ++i)
                std::copy(g.row_ptr(i), g.row_ptr(i) + g.cols(), da.row_ptr(i) + start);
            t.accumulate(a, da);
        });
    }

    VarId concat_rows(const std::vector<VarId>& parts) {
        if (parts.empty()) throw ShapeError("concat_rows: no parts");
        const std::size_t cols = value(parts[0]).cols();
        std::size_t rows = 0;
        for (VarId p : parts) {
            kernels::check_matrix(value(p), "concat_rows");
            if (value(p).cols() != cols) throw ShapeError("concat_rows: column mismatch");
            rows += value(p).rows();
        }
        Tensor<T> out({rows, cols});
        std::size_t r = 0;
        for (VarId p : parts) {
            std::copy(value(p).data.begin(), value(p).data.end(), out.row_ptr(r));
            r += value(p).rows();
        }
        return push_op(std::move(out), parts, [parts](Tape& t, const Tensor<T>& g) {
            std::size_t r = 0;
            for (VarId p : parts) {
                const std::size_t pr = t.value(p).rows();
                if (t.needs_grad(p)) {
                    Tensor<T> dp({pr, g.cols()});
                    std::copy(g.row_ptr(r), g.row_ptr(r) + pr * g.cols(), dp.data.begin());
                    t.accumulate(p, dp);
                }
                r += pr;
            }
        });
    }

    VarId concat_cols(const std::vector<VarId>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols: no parts");
        const std::size_t rows = value(parts[0]).rows();
        std::size_t cols = 0;
        for (VarId p : parts) {
            kernels::check_matrix(value(p), "concat_cols");
            if (value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
            cols += value(p).cols();
        }
        Tensor<T> out({rows, cols});
        std::size_t c = 0;
        for (VarId p : parts) {
            const Tensor<T>& pv = value(p);
            for (std::size_t i = 0; i < rows; ++i)
                std::copy(pv.row_ptr(i), pv.row_ptr(i) + pv.cols(), out.row_ptr(i) + c);
            c += pv.cols();
        }
        return push_op(std::move(out), parts, [parts](Tape& t, const Tensor<T>& g) {
            std::size_t c = 0;
            for (VarId p : parts) {
                const std::size_t pc = t.value(p).cols();
                if (t.needs_grad(p)) {
                    Tensor<T> dp({g.rows(), pc});
                    for (std::size_t i = 0; i < g.rows(); ++i)
                        std::copy(g.row_ptr(i) + c, g.row_ptr(i) + c + pc, dp.row_ptr(i));
                    t.accumulate(p, dp);
                }
                c += pc;
            }
        });
    }

    /// Rows of `table` selected by index (embedding lookup). Gradients
    /// scatter-add back into the table.
    VarId gather_rows(VarId table, std::vector<int> ids) {
        const Tensor<T>& tv = value(table);
        kernels::check_matrix(tv, "gather_rows");
        Tensor<T> out({ids.size(), tv.cols()});
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows())
                throw ShapeError("gather_rows: index out of range");
            std::copy(tv.row_ptr(static_cast<std::size_t>(ids[i])),
                      tv.row_ptr(static_cast<std::size_t>(ids[i])) + tv.cols(), out.row_ptr(i));
        }
        return push_op(std::move(out), {table},
                       [table, ids = std::move(ids)](Tape& t, const Tensor<T>& g) {
                           const Tensor<T>& tv = t.value(table);
                           Tensor<T> dt({tv.rows(), tv.cols()});
                           for (std::size_t i = 0; i < ids.size(); ++i) {
                               T* dst = dt.row_ptr(static_cast<std::size_t>(ids[i]));
                               for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += g.at(i, j);
                           }
                           t.accumulate(table, dt);
                       });
    }

    // ---- losses ----

    /// Weighted sum of row-wise cross-entropies: sum_i w_i * (lse(x_i) - x_i[t_i]).
    VarId cross_entropy_sum(VarId logits, std::vector<int> targets, std::vector<T> weights) {
        const Tensor<T>& x = value(logits);
        kernels::check_matrix(x, "cross_entropy_sum");
        if (targets.size() != x.rows() || weights.size() != x.rows())
            throw ShapeError("cross_entropy_sum: targets/weights length mismatch");
        T total = 0;
        for (std::size_t i = 0; i < x.rows(); ++i) {
            if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= x.cols())
                throw ShapeError("cross_entropy_sum: target index out of range");
            total += weights[i] * (row_lse(x, i) - x.at(i, static_cast<std::size_t>(targets[i])));
        }
        Tensor<T> out({1});
        out[0] = total;
        return push_op(std::move(out), {logits},
                       [logits, targets = std::move(targets), weights = std::move(weights)](
                           Tape& t, const Tensor<T>& g) {
                           const Tensor<T>& x = t.value(logits);
                           Tensor<T> dx({x.rows(), x.cols()});
                           for (std::size_t i = 0; i < x.rows(); ++i) {
                               if (weights[i] == T(0)) continue;
                               const T lse = row_lse(x, i);
                               const T w = weights[i] * g.data[0];
                               for (std::size_t j = 0; j < x.cols(); ++j)
                                   dx.at(i, j) = w * std::exp(x.at(i, j) - lse);
                               dx.at(i, static_cast<std::size_t>(targets[i])) -= w;
                           }
                           t.accumulate(logits, dx);
                       });
    }

    /// log(sum(exp(all entries))), stabilized.
    VarId logsumexp_all(VarId a) {
        const Tensor<T>& x = value(a);
        if (x.numel() == 0) throw ShapeError("logsumexp_all: empty input");
        T mx = x.data[0];
        for (T v : x.data) mx = std::max(mx, v);
        T s = 0;
        for (T v : x.data) s += std::exp(v - mx);
        Tensor<T> out({1});
        out[0] = mx + std::log(s);
        return push_op(std::move(out), {a}, [a](Tape& t, const Tensor<T>& g, VarId self) {
            const Tensor<T>& x = t.value(a);
            const T lse = t.value(self).data[0];
            Tensor<T> da = x;
            for (std::size_t i = 0; i < x.numel(); ++i)
                da.data[i] = g.data[0] * std::exp(x.data[i] - lse);
            t.accumulate(a, da);
        });
    }

    // ---- backward ----

    /// Populates gradients of every contributing node with respect to `loss`
    /// (which must be scalar). Leaf gradients are then readable via grad().
    void backward(VarId loss) {
        if (nodes_[loss].value.numel() != 1)
            throw ShapeError("backward: loss must be scalar");
        for (Node& n : nodes_) n.grad = Tensor<T>();
        nodes_[loss].grad = Tensor<T>({1});
        nodes_[loss].grad[0] = T(1);
        nodes_[loss].grad.shape = nodes_[loss].value.shape;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.numel() == 0 || !n.backprop) continue;
            n.backprop(*this, n.grad, static_cast<VarId>(i));
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    static constexpr long double kSqrt2 = 1.41421356237309504880L;
    static constexpr long double kInvSqrt2Pi = 0.39894228040143267794L;

    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool needs_grad = false;
        std::function<void(Tape&, const Tensor<T>&, VarId)> backprop;
    };

    std::vector<Node> nodes_;

    static T row_lse(const Tensor<T>& x, std::size_t i) {
        const T* row = x.row_ptr(i);
        T mx = row[0];
        for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, row[j]);
        T s = 0;
        for (std::size_t j = 0; j < x.cols(); ++j) s += std::exp(row[j] - mx);
        return mx + std::log(s);
    }

    VarId push(Tensor<T> v, bool needs_grad) {
        Node n;
        n.value = std::move(v);
        n.needs_grad = needs_grad;
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    template <class Fn>
    VarId push_op(Tensor<T> out, const std::vector<VarId>& parents, Fn&& fn) {
        bool needs = false;
        for (VarId p : parents) needs = needs || nodes_[p].needs_grad;
        Node n;
        n.value = std::move(out);
        n.needs_grad = needs;
        if (needs) {
            if constexpr (std::is_invocable_v<Fn, Tape&, const Tensor<T>&, VarId>) {
                n.backprop = std::forward<Fn>(fn);
            } else {
                n.backprop = [fn = std::forward<Fn>(fn)](Tape& t, const Tensor<T>& g, VarId) {
                    fn(t, g);
                };
            }
        }
        nodes_.push_back(std::move(n));
        return nodes_.size() - 1;
    }

    void require_same_shape(VarId a, VarId b, const char* op) {
        if (!value(a).same_shape(value(b)))
            throw ShapeError(std::string(op) + ": shape mismatch " + value(a).shape_str() + " vs " +
                             value(b).shape_str());
    }

    void accumulate(VarId id, const Tensor<T>& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.numel() == 0) {
            n.grad = g;
            n.grad.shape = n.value.shape;
        } else {
            for (std::size_t i = 0; i < g.numel(); ++i) n.grad.data[i] += g.data[i];
        }
    }
};

}  // namespace adpipe::ag
