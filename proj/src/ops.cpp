#include "mtca/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace mtca::ops {

namespace {

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() < 1 || t.rank() > 2) {
        throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
    }
}

bool row_valid(const RowMask& mask, std::size_t r) { return mask.empty() || mask[r]; }

void check_mask(const RowMask& mask, std::size_t rows, const char* op) {
    if (!mask.empty() && mask.size() != rows) {
        throw DimensionError(std::string(op) + ": mask length " + std::to_string(mask.size()) +
                             " does not match " + std::to_string(rows) + " rows");
    }
}

}  // namespace

Var matmul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
    if (bv.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()));
    }
    Tensor out({n, m}, 0.0);
    const double* A = av.values().data();
    const double* B = bv.values().data();
    double* C = out.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = B + p * m;
            double* crow = C + i * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record("matmul", std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
        const double* G = t.grad_at(self).values().data();
        const double* A = t.value_at(ia).values().data();
        const double* B = t.value_at(ib).values().data();
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const auto rows = [](auto n_) { return static_cast<Eigen::Index>(n_); };
        const Eigen::Map<const RowMajor> g(G, rows(n), rows(m));
        if (auto ga = t.grad_buffer(ia); !ga.empty()) {
            Eigen::Map<RowMajor>(ga.data(), rows(n), rows(k)).noalias() +=
                g * Eigen::Map<const RowMajor>(B, rows(k), rows(m)).transpose();
        }
        if (auto gb = t.grad_buffer(ib); !gb.empty()) {
            Eigen::Map<RowMajor>(gb.data(), rows(k), rows(m)).noalias() +=
                Eigen::Map<const RowMajor>(A, rows(n), rows(k)).transpose() * g;
        }
    });
}

Var matmul_nt(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_matrix(av, "matmul_nt");
    require_matrix(bv, "matmul_nt");
    const std::size_t n = av.rows(), k = av.cols(), m = bv.rows();
    if (bv.cols() != k) {
        throw DimensionError("matmul_nt: inner dimensions differ, " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()) + "^T");
    }
    Tensor out({n, m}, 0.0);
    const double* A = av.values().data();
    const double* B = bv.values().data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += A[i * k + p] * B[j * k + p];
            out(i, j) = acc;
        }
    }
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record("matmul_nt", std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::size_t self) {
        const double* G = t.grad_at(self).values().data();
        const double* A = t.value_at(ia).values().data();
        const double* B = t.value_at(ib).values().data();
        using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        const auto rows = [](auto n_) { return static_cast<Eigen::Index>(n_); };
        const Eigen::Map<const RowMajor> g(G, rows(n), rows(m));
        if (auto ga = t.grad_buffer(ia); !ga.empty()) {
            Eigen::Map<RowMajor>(ga.data(), rows(n), rows(k)).noalias() +=
                g * Eigen::Map<const RowMajor>(B, rows(m), rows(k));
        }
        if (auto gb = t.grad_buffer(ib); !gb.empty()) {
            Eigen::Map<RowMajor>(gb.data(), rows(m), rows(k)).noalias() +=
                g.transpose() * Eigen::Map<const RowMajor>(A, rows(n), rows(k));
        }
    });
}

Var add(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) {
        throw DimensionError("add: shapes differ, " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record("add", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        for (auto id : {ia, ib}) {
            if (auto buf = t.grad_buffer(id); !buf.empty()) {
                for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
            }
        }
    });
}

Var add_row(Var a, Var row) {
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    require_matrix(av, "add_row");
    const std::size_t n = av.rows(), m = av.cols();
    if (rv.size() != m) {
        throw DimensionError("add_row: row of size " + std::to_string(rv.size()) + " for " + std::to_string(m) +
                             " columns");
    }
    Tensor out = av;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out(i, j) += rv[j];
    const std::size_t ia = a.id(), ir = row.id();
    return a.tape().record("add_row", std::move(out), {a, row}, [ia, ir, n, m](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        if (auto ga = t.grad_buffer(ia); !ga.empty()) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
        }
        if (auto gr = t.grad_buffer(ir); !gr.empty()) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) gr[j] += g[i * m + j];
        }
    });
}

Var mul(Var a, Var b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (!av.same_shape(bv)) {
        throw DimensionError("mul: shapes differ, " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    }
    Tensor out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    const std::size_t ia = a.id(), ib = b.id();
    return a.tape().record("mul", std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        const auto& A = t.value_at(ia);
        const auto& B = t.value_at(ib);
        if (auto ga = t.grad_buffer(ia); !ga.empty()) {
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * B[i];
        }
        if (auto gb = t.grad_buffer(ib); !gb.empty()) {
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * A[i];
        }
    });
}

Var scale(Var a, double factor) {
    Tensor out = a.value();
    for (auto& v : out.values()) v *= factor;
    const std::size_t ia = a.id();
    return a.tape().record("scale", std::move(out), {a}, [ia, factor](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        auto ga = t.grad_buffer(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += factor * g[i];
    });
}

Var sum(Var a) {
    double total = 0.0;
    for (double v : a.value().values()) total += v;
    const std::size_t ia = a.id();
    return a.tape().record("sum", Tensor::scalar(total), {a}, [ia](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0];
        for (auto& v : t.grad_buffer(ia)) v += g;
    });
}

Var softmax(Var x, int axis) {
    const Tensor& xv = x.value();
    require_matrix(xv, "softmax");
    const std::size_t n = xv.rows(), m = xv.cols();
    if (axis < 0) axis += 2;
    if (axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
    // Normalize along `axis` by walking lines of `len` elements with `stride`.
    const std::size_t lines = axis == 1 ? n : m;
    const std::size_t len = axis == 1 ? m : n;
    const std::size_t stride = axis == 1 ? 1 : m;
    auto start_of = [axis, m](std::size_t line) { return axis == 1 ? line * m : line; };

    Tensor out(xv.shape(), 0.0);
    for (std::size_t l = 0; l < lines; ++l) {
        const std::size_t s = start_of(l);
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < len; ++i) peak = std::max(peak, xv[s + i * stride]);
        double z = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            const double e = std::exp(xv[s + i * stride] - peak);
            out[s + i * stride] = e;
            z += e;
        }
        for (std::size_t i = 0; i < len; ++i) out[s + i * stride] /= z;
    }
    const std::size_t ix = x.id();
    return x.tape().record("softmax", std::move(out), {x},
                           [ix, lines, len, stride, start_of](Tape& t, std::size_t self) {
                               const auto& g = t.grad_at(self);
                               const auto& y = t.value_at(self);
                               auto gx = t.grad_buffer(ix);
                               for (std::size_t l = 0; l < lines; ++l) {
                                   const std::size_t s = start_of(l);
                                   double dot = 0.0;
                                   for (std::size_t i = 0; i < len; ++i) dot += g[s + i * stride] * y[s + i * stride];
                                   for (std::size_t i = 0; i < len; ++i) {
                                       const std::size_t k = s + i * stride;
                                       gx[k] += y[k] * (g[k] - dot);
                                   }
                               }
                           });
}

Var attention_weights(Var scores, const RowMask& key_valid, const RowMask& query_valid,
                      const std::vector<bool>& selected) {
    const Tensor& sv = scores.value();
    require_matrix(sv, "attention_weights");
    const std::size_t n = sv.rows(), m = sv.cols();
    check_mask(key_valid, m, "attention_weights");
    check_mask(query_valid, n, "attention_weights");
    if (selected.size() != n) throw DimensionError("attention_weights: selection length mismatch");
    std::size_t valid_keys = 0;
    for (std::size_t j = 0; j < m; ++j) valid_keys += row_valid(key_valid, j);
    if (valid_keys == 0) throw DimensionError("attention: all key positions are masked");

    Tensor out({n, m}, 0.0);
    const double uniform = 1.0 / static_cast<double>(valid_keys);
    for (std::size_t i = 0; i < n; ++i) {
        if (!row_valid(query_valid, i)) continue;
        if (!selected[i]) {
            for (std::size_t j = 0; j < m; ++j)
                if (row_valid(key_valid, j)) out(i, j) = uniform;
            continue;
        }
        double peak = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < m; ++j)
            if (row_valid(key_valid, j)) peak = std::max(peak, sv(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (!row_valid(key_valid, j)) continue;
            out(i, j) = std::exp(sv(i, j) - peak);
            z += out(i, j);
        }
        for (std::size_t j = 0; j < m; ++j) out(i, j) /= z;
    }
    const std::size_t is = scores.id();
    std::vector<bool> active(n);
    for (std::size_t i = 0; i < n; ++i) active[i] = selected[i] && row_valid(query_valid, i);
    return scores.tape().record("attention_weights", std::move(out), {scores},
                                [is, n, m, active](Tape& t, std::size_t self) {
                                    const auto& g = t.grad_at(self);
                                    const auto& y = t.value_at(self);
                                    auto gs = t.grad_buffer(is);
                                    for (std::size_t i = 0; i < n; ++i) {
                                        if (!active[i]) continue;
                                        double dot = 0.0;
                                        for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
                                        for (std::size_t j = 0; j < m; ++j)
                                            gs[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
                                    }
                                });
}

Var conv1d(Var x, Var kernel, std::size_t padding) {
    const Tensor& xv = x.value();
    const Tensor& kv = kernel.value();
    require_matrix(xv, "conv1d");
    if (kv.rank() != 3) throw DimensionError("conv1d: kernel must be [width, c_in, c_out]");
    const std::size_t width = kv.shape()[0], cin = kv.shape()[1], cout = kv.shape()[2];
    if (width % 2 == 0) throw DimensionError("conv1d: kernel width must be odd, got " + std::to_string(width));
    const std::size_t n = xv.rows();
    if (xv.cols() != cin) {
        throw DimensionError("conv1d: input has " + std::to_string(xv.cols()) + " channels, kernel expects " +
                             std::to_string(cin));
    }
    if (n + 2 * padding < width) throw DimensionError("conv1d: input shorter than kernel");
    const std::size_t out_len = n + 2 * padding - width + 1;

    Tensor out({out_len, cout}, 0.0);
    const double* X = xv.values().data();
    const double* K = kv.values().data();
    double* Y = out.values().data();
    for (std::size_t t = 0; t < out_len; ++t) {
        for (std::size_t k = 0; k < width; ++k) {
            const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(padding);
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
            for (std::size_t c = 0; c < cin; ++c) {
                const double xval = X[src * cin + c];
                if (xval == 0.0) continue;
                const double* krow = K + (k * cin + c) * cout;
                double* yrow = Y + t * cout;
                for (std::size_t o = 0; o < cout; ++o) yrow[o] += xval * krow[o];
            }
        }
    }
    const std::size_t ix = x.id(), ik = kernel.id();
    return x.tape().record(
        "conv1d", std::move(out), {x, kernel},
        [ix, ik, n, cin, cout, width, padding, out_len](Tape& t, std::size_t self) {
            const double* G = t.grad_at(self).values().data();
            const double* X = t.value_at(ix).values().data();
            const double* K = t.value_at(ik).values().data();
            auto gx = t.grad_buffer(ix);
            auto gk = t.grad_buffer(ik);
            for (std::size_t tt = 0; tt < out_len; ++tt) {
                const double* grow = G + tt * cout;
                for (std::size_t k = 0; k < width; ++k) {
                    const std::ptrdiff_t src =
                        static_cast<std::ptrdiff_t>(tt + k) - static_cast<std::ptrdiff_t>(padding);
                    if (src < 0 || src >= static_cast<std::ptrdiff_t>(n)) continue;
                    for (std::size_t c = 0; c < cin; ++c) {
                        const double* krow = K + (k * cin + c) * cout;
                        if (!gx.empty()) {
                            double acc = 0.0;
                            for (std::size_t o = 0; o < cout; ++o) acc += grow[o] * krow[o];
                            gx[src * cin + c] += acc;
                        }
                        if (!gk.empty()) {
                            const double xval = X[src * cin + c];
                            double* gkrow = gk.data() + (k * cin + c) * cout;
                            for (std::size_t o = 0; o < cout; ++o) gkrow[o] += xval * grow[o];
                        }
                    }
                }
            }
        });
}

PoolResult maxpool1d(Var x, const RowMask& valid) {
    const Tensor& xv = x.value();
    require_matrix(xv, "maxpool1d");
    const std::size_t n = xv.rows(), m = xv.cols();
    check_mask(valid, n, "maxpool1d");
    const std::size_t out_len = (n + 1) / 2;
    Tensor out({out_len, m}, 0.0);
    std::vector<std::ptrdiff_t> source(out_len * m, -1);
    RowMask out_valid(out_len, false);
    for (std::size_t r = 0; r < out_len; ++r) {
        const std::size_t a = 2 * r, b = 2 * r + 1;
        const bool va = row_valid(valid, a);
        const bool vb = b < n && row_valid(valid, b);
        out_valid[r] = va || vb;
        if (!out_valid[r]) continue;
        for (std::size_t c = 0; c < m; ++c) {
            std::size_t pick = va ? a : b;
            if (va && vb && xv(b, c) > xv(a, c)) pick = b;
            out(r, c) = xv(pick, c);
            source[r * m + c] = static_cast<std::ptrdiff_t>(pick * m + c);
        }
    }
    const std::size_t ix = x.id();
    Var pooled = x.tape().record("maxpool1d", std::move(out), {x}, [ix, source](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < source.size(); ++i) {
            if (source[i] >= 0) gx[static_cast<std::size_t>(source[i])] += g[i];
        }
    });
    return {pooled, std::move(out_valid)};
}

Var pelu(Var x, Var slope) {
    const Tensor& xv = x.value();
    if (slope.value().size() != 1) throw DimensionError("pelu: slope must be a single value");
    const double a = slope.value()[0];
    Tensor out = xv;
    for (auto& v : out.values())
        if (!(v > 0.0)) v *= a;
    const std::size_t ix = x.id(), ia = slope.id();
    return x.tape().record("pelu", std::move(out), {x, slope}, [ix, ia](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        const auto& X = t.value_at(ix);
        const double a = t.value_at(ia)[0];
        if (auto gx = t.grad_buffer(ix); !gx.empty()) {
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += X[i] > 0.0 ? g[i] : a * g[i];
        }
        if (auto ga = t.grad_buffer(ia); !ga.empty()) {
            double acc = 0.0;
            for (std::size_t i = 0; i < X.size(); ++i)
                if (!(X[i] > 0.0)) acc += X[i] * g[i];
            ga[0] += acc;
        }
    });
}

Var dropout(Var x, double rate, Rng& rng, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.value().size());
    for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    const std::size_t ix = x.id();
    return x.tape().record("dropout", std::move(out), {x}, [ix, mask = std::move(mask)](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
    });
}

Var slice_cols(Var x, std::size_t start, std::size_t count) {
    const Tensor& xv = x.value();
    require_matrix(xv, "slice_cols");
    const std::size_t n = xv.rows(), m = xv.cols();
    if (count == 0 || start + count > m) throw DimensionError("slice_cols: column range out of bounds");
    Tensor out({n, count}, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = xv(i, start + j);
    const std::size_t ix = x.id();
    return x.tape().record("slice_cols", std::move(out), {x}, [ix, n, m, start, count](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j) gx[i * m + start + j] += g[i * count + j];
    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t n = parts.front().value().rows();
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        if (p.value().rows() != n) throw DimensionError("concat_cols: row counts differ");
        widths.push_back(p.value().cols());
        total += widths.back();
    }
    Tensor out({n, total}, 0.0);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& pv = parts[k].value();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j) out(i, offset + j) = pv(i, j);
        offset += widths[k];
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts) ids.push_back(p.id());
    return parts.front().tape().record(
        "concat_cols", std::move(out), parts, [ids, widths, n, total](Tape& t, std::size_t self) {
            const auto& g = t.grad_at(self);
            std::size_t offset = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (auto gp = t.grad_buffer(ids[k]); !gp.empty()) {
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * total + offset + j];
                }
                offset += widths[k];
            }
        });
}

Var mask_rows(Var x, const RowMask& valid) {
    const Tensor& xv = x.value();
    require_matrix(xv, "mask_rows");
    check_mask(valid, xv.rows(), "mask_rows");
    if (valid.empty() || std::all_of(valid.begin(), valid.end(), [](bool b) { return b; })) return x;
    const std::size_t m = xv.cols();
    Tensor out = xv;
    for (std::size_t i = 0; i < xv.rows(); ++i)
        if (!valid[i])
            for (std::size_t j = 0; j < m; ++j) out(i, j) = 0.0;
    const std::size_t ix = x.id();
    return x.tape().record("mask_rows", std::move(out), {x}, [ix, valid, m](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < valid.size(); ++i)
            if (valid[i])
                for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[i * m + j];
    });
}

Var mean_rows(Var x, const RowMask& valid) {
    const Tensor& xv = x.value();
    require_matrix(xv, "mean_rows");
    const std::size_t n = xv.rows(), m = xv.cols();
    check_mask(valid, n, "mean_rows");
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) count += row_valid(valid, i);
    if (count == 0) throw DimensionError("mean_rows: all rows are masked");
    const double inv = 1.0 / static_cast<double>(count);
    Tensor out({1, m}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!row_valid(valid, i)) continue;
        for (std::size_t j = 0; j < m; ++j) out[j] += xv(i, j);
    }
    for (auto& v : out.values()) v *= inv;
    const std::size_t ix = x.id();
    return x.tape().record("mean_rows", std::move(out), {x}, [ix, valid, n, m, inv](Tape& t, std::size_t self) {
        const auto& g = t.grad_at(self);
        auto gx = t.grad_buffer(ix);
        for (std::size_t i = 0; i < n; ++i) {
            if (!row_valid(valid, i)) continue;
            for (std::size_t j = 0; j < m; ++j) gx[i * m + j] += g[j] * inv;
        }
    });
}

Var cross_entropy(Var q, std::span<const double> target) {
    const Tensor& qv = q.value();
    if (qv.size() != target.size()) throw DimensionError("cross_entropy: distribution sizes differ");
    double loss = 0.0;
    for (std::size_t c = 0; c < target.size(); ++c) {
        if (target[c] != 0.0) loss -= target[c] * std::log(std::max(qv[c], kProbabilityFloor));
    }
    std::vector<double> p(target.begin(), target.end());
    const std::size_t iq = q.id();
    return q.tape().record("cross_entropy", Tensor::scalar(loss), {q}, [iq, p = std::move(p)](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0];
        const auto& Q = t.value_at(iq);
        auto gq = t.grad_buffer(iq);
        for (std::size_t c = 0; c < p.size(); ++c) {
            if (Q[c] > kProbabilityFloor) gq[c] -= g * p[c] / Q[c];
        }
    });
}

Var kl_divergence(Var p, Var q) {
    const Tensor& pv = p.value();
    const Tensor& qv = q.value();
    if (!pv.same_shape(qv)) throw DimensionError("kl_divergence: distribution shapes differ");
    double total = 0.0;
    for (std::size_t c = 0; c < pv.size(); ++c) {
        const double pc = std::max(pv[c], kProbabilityFloor);
        const double qc = std::max(qv[c], kProbabilityFloor);
        total += pv[c] * (std::log(pc) - std::log(qc));
    }
    const std::size_t ip = p.id(), iq = q.id();
    return p.tape().record("kl_divergence", Tensor::scalar(total), {p, q}, [ip, iq](Tape& t, std::size_t self) {
        const double g = t.grad_at(self)[0];
        const auto& P = t.value_at(ip);
        const auto& Q = t.value_at(iq);
        if (auto gp = t.grad_buffer(ip); !gp.empty()) {
            for (std::size_t c = 0; c < gp.size(); ++c) {
                const double pc = std::max(P[c], kProbabilityFloor);
                const double qc = std::max(Q[c], kProbabilityFloor);
                gp[c] += g * (std::log(pc) - std::log(qc) + (P[c] > kProbabilityFloor ? 1.0 : 0.0));
            }
        }
        if (auto gq = t.grad_buffer(iq); !gq.empty()) {
            for (std::size_t c = 0; c < gq.size(); ++c)
                if (Q[c] > kProbabilityFloor) gq[c] -= g * P[c] / Q[c];
        }
    });
}

}  // namespace mtca::ops
