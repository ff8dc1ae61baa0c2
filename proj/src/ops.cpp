#include "dualprior/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <utility>

#include "dualprior/error.hpp"

namespace dualprior {

namespace {

using detail::TensorImpl;
using BackwardFn = std::function<void(const TensorImpl&)>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

void check_finite(const std::vector<double>& values, const char* op) {
    if (!debug_checks_enabled()) return;
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
    check_finite(data, op);
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    if (any && grad_enabled()) {
        auto node = std::make_shared<detail::TapeNode>();
        node->op = op;
        for (const auto& t : inputs) node->inputs.push_back(t.impl());
        node->backward = std::move(fn);
        impl->requires_grad = true;
        impl->node = std::move(node);
    }
    return Tensor(std::move(impl));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
    if (a.rank() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
    }
}

}  // namespace

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
    const bool scalar_b = b.numel() == 1 && a.shape() != b.shape();
    if (!scalar_b) require_same_shape(a, b, "elementwise");
    const auto n = a.numel();
    const auto& av = a.impl()->data;
    const auto& bv = b.impl()->data;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double y = bv[scalar_b ? 0 : i];
        switch (op) {
            case ElementwiseOp::kAdd: out[i] = av[i] + y; break;
            case ElementwiseOp::kSub: out[i] = av[i] - y; break;
            case ElementwiseOp::kMul: out[i] = av[i] * y; break;
        }
    }
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    return make_result("elementwise", a.shape(), std::move(out), {a, b}, [ai, bi, op, scalar_b](const TensorImpl& o) {
        const auto& g = o.grad;
        const auto n = g.size();
        if (ai->requires_grad) {
            auto& ga = ai->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                ga[i] += op == ElementwiseOp::kMul ? g[i] * bi->data[scalar_b ? 0 : i] : g[i];
            }
        }
        if (bi->requires_grad) {
            auto& gb = bi->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                double d = g[i];
                if (op == ElementwiseOp::kSub) d = -d;
                if (op == ElementwiseOp::kMul) d *= ai->data[i];
                gb[scalar_b ? 0 : i] += d;
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kAdd, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kSub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::kMul, a, b); }

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v += s;
    TensorImpl* ai = a.impl().get();
    return make_result("add_scalar", a.shape(), std::move(out), {a}, [ai](const TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    TensorImpl* ai = a.impl().get();
    return make_result("scale", a.shape(), std::move(out), {a}, [ai, s](const TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * o.grad[i];
    });
}

Tensor silu(const Tensor& a) {
    const auto& av = a.impl()->data;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / (1.0 + std::exp(-av[i]));
    TensorImpl* ai = a.impl().get();
    return make_result("silu", a.shape(), std::move(out), {a}, [ai](const TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double x = ai->data[i];
            const double s = 1.0 / (1.0 + std::exp(-x));
            ga[i] += o.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    const auto& av = a.impl()->data;
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
    TensorImpl* ai = a.impl().get();
    auto values = out;
    return make_result("sigmoid", a.shape(), std::move(out), {a}, [ai, values = std::move(values)](const TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * values[i] * (1.0 - values[i]);
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    TensorImpl* ai = a.impl().get();
    return make_result("sum", {}, {acc}, {a}, [ai](const TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (auto& g : ga) g += o.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    const auto n = a.numel();
    if (n == 0) throw ShapeError("mse of empty tensors");
    const auto& av = a.impl()->data;
    const auto& bv = b.impl()->data;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = av[i] - bv[i];
        acc += d * d;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    return make_result("mse", {}, {acc * inv_n}, {a, b}, [ai, bi, inv_n](const TensorImpl& o) {
        const double g = 2.0 * inv_n * o.grad[0];
        const auto n = ai->data.size();
        if (ai->requires_grad) {
            auto& ga = ai->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) ga[i] += g * (ai->data[i] - bi->data[i]);
        }
        if (bi->requires_grad) {
            auto& gb = bi->grad_buffer();
            for (std::size_t i = 0; i < n; ++i) gb[i] -= g * (ai->data[i] - bi->data[i]);
        }
    });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    require_same_shape(logits, targets, "bce_with_logits");
    const auto n = logits.numel();
    const auto& x = logits.impl()->data;
    const auto& y = targets.impl()->data;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += std::max(x[i], 0.0) - x[i] * y[i] + std::log1p(std::exp(-std::abs(x[i])));
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    TensorImpl* li = logits.impl().get();
    TensorImpl* ti = targets.impl().get();
    return make_result("bce_with_logits", {}, {acc * inv_n}, {logits}, [li, ti, inv_n](const TensorImpl& o) {
        auto& g = li->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-li->data[i]));
            g[i] += o.grad[0] * inv_n * (s - ti->data[i]);
        }
    });
}

Tensor stop_gradient(const Tensor& a) { return Tensor::from_data(a.shape(), a.impl()->data, false); }

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
    }
    TensorImpl* ai = a.impl().get();
    return make_result("reshape", std::move(shape), a.impl()->data, {a}, [ai](const TensorImpl& o) {
        auto& ga = ai->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const auto n = a.dim(0), d = a.dim(1), k = b.dim(1);
    if (b.dim(0) != d) throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(n * k);
    MapMatrix(out.data(), n, k).noalias() =
        ConstMapMatrix(a.impl()->data.data(), n, d) * ConstMapMatrix(b.impl()->data.data(), d, k);
    TensorImpl* ai = a.impl().get();
    TensorImpl* bi = b.impl().get();
    return make_result("matmul", {n, k}, std::move(out), {a, b}, [ai, bi, n, d, k](const TensorImpl& o) {
        ConstMapMatrix g(o.grad.data(), n, k);
        if (ai->requires_grad) {
            MapMatrix(ai->grad_buffer().data(), n, d).noalias() += g * ConstMapMatrix(bi->data.data(), d, k).transpose();
        }
        if (bi->requires_grad) {
            MapMatrix(bi->grad_buffer().data(), d, k).noalias() += ConstMapMatrix(ai->data.data(), n, d).transpose() * g;
        }
    });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 2, "add_row_bias");
    const auto n = x.dim(0), k = x.dim(1);
    if (bias.numel() != k) throw ShapeError("add_row_bias: bias " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] += bias[j];
    TensorImpl* xi = x.impl().get();
    TensorImpl* bi = bias.impl().get();
    return make_result("add_row_bias", x.shape(), std::move(out), {x, bias}, [xi, bi, n, k](const TensorImpl& o) {
        if (xi->requires_grad) {
            auto& gx = xi->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            auto& gb = bi->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < k; ++j) gb[j] += o.grad[i * k + j];
        }
    });
}

namespace {

struct ConvGeometry {
    std::size_t n, c, h, w, k, kh, kw, stride, pad, oh, ow;
    std::size_t col_rows() const { return c * kh * kw; }
    std::size_t col_cols() const { return oh * ow; }
};

void im2col(const double* x, const ConvGeometry& g, double* col) {
    const auto cols = g.col_cols();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                            ix < static_cast<std::ptrdiff_t>(g.w);
                        row[oy * g.ow + ox] = inside ? x[(ci * g.h + iy) * g.w + ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const ConvGeometry& g, double* x) {
    const auto cols = g.col_cols();
    for (std::size_t ci = 0; ci < g.c; ++ci) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    for (std::size_t ox = 0; ox < g.ow; ++ox) {
                        const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
                        x[(ci * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t padding) {
    require_rank(x, 4, "conv2d");
    require_rank(w, 4, "conv2d");
    if (stride == 0) throw ShapeError("conv2d: stride must be positive");
    ConvGeometry g{};
    g.n = x.dim(0);
    g.c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.k = w.dim(0);
    g.kh = w.dim(2);
    g.kw = w.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (w.dim(1) != g.c) {
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) + " kernel " + shape_str(w.shape()));
    }
    if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

    const auto rows = g.col_rows(), cols = g.col_cols();
    const bool keep_cols = w.requires_grad();
    std::vector<double> saved_cols(keep_cols ? g.n * rows * cols : 0);
    std::vector<double> scratch(keep_cols ? 0 : rows * cols);
    std::vector<double> out(g.n * g.k * cols);
    ConstMapMatrix wm(w.impl()->data.data(), g.k, rows);
    for (std::size_t i = 0; i < g.n; ++i) {
        double* col = keep_cols ? saved_cols.data() + i * rows * cols : scratch.data();
        im2col(x.impl()->data.data() + i * g.c * g.h * g.w, g, col);
        MapMatrix(out.data() + i * g.k * cols, g.k, cols).noalias() = wm * ConstMapMatrix(col, rows, cols);
    }

    TensorImpl* xi = x.impl().get();
    TensorImpl* wi = w.impl().get();
    return make_result("conv2d", {g.n, g.k, g.oh, g.ow}, std::move(out), {x, w},
                       [xi, wi, g, saved_cols = std::move(saved_cols)](const TensorImpl& o) {
                           const auto rows = g.col_rows(), cols = g.col_cols();
                           ConstMapMatrix wm(wi->data.data(), g.k, rows);
                           std::vector<double> dcol(xi->requires_grad ? rows * cols : 0);
                           for (std::size_t i = 0; i < g.n; ++i) {
                               ConstMapMatrix gy(o.grad.data() + i * g.k * cols, g.k, cols);
                               if (wi->requires_grad) {
                                   MapMatrix(wi->grad_buffer().data(), g.k, rows).noalias() +=
                                       gy * ConstMapMatrix(saved_cols.data() + i * rows * cols, rows, cols).transpose();
                               }
                               if (xi->requires_grad) {
                                   MapMatrix(dcol.data(), rows, cols).noalias() = wm.transpose() * gy;
                                   col2im_add(dcol.data(), g, xi->grad_buffer().data() + i * g.c * g.h * g.w);
                               }
                           }
                       });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
    require_rank(x, 4, "add_channel_bias");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (bias.numel() != c) throw ShapeError("add_channel_bias: bias " + shape_str(bias.shape()) + " for " + shape_str(x.shape()));
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* p = out.data() + (i * c + ch) * hw;
            for (std::size_t j = 0; j < hw; ++j) p[j] += bias[ch];
        }
    TensorImpl* xi = x.impl().get();
    TensorImpl* bi = bias.impl().get();
    return make_result("add_channel_bias", x.shape(), std::move(out), {x, bias}, [xi, bi, n, c, hw](const TensorImpl& o) {
        if (xi->requires_grad) {
            auto& gx = xi->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
        }
        if (bi->requires_grad) {
            auto& gb = bi->grad_buffer();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* p = o.grad.data() + (i * c + ch) * hw;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < hw; ++j) acc += p[j];
                    gb[ch] += acc;
                }
        }
    });
}

Tensor add_sample_channel_bias(const Tensor& x, const Tensor& e) {
    require_rank(x, 4, "add_sample_channel_bias");
    const auto n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (e.shape() != Shape{n, c}) {
        throw ShapeError("add_sample_channel_bias: offsets " + shape_str(e.shape()) + " for " + shape_str(x.shape()));
    }
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < n * c; ++i) {
        double* p = out.data() + i * hw;
        for (std::size_t j = 0; j < hw; ++j) p[j] += e[i];
    }
    TensorImpl* xi = x.impl().get();
    TensorImpl* ei = e.impl().get();
    return make_result("add_sample_channel_bias", x.shape(), std::move(out), {x, e}, [xi, ei, n, c, hw](const TensorImpl& o) {
        if (xi->requires_grad) {
            auto& gx = xi->grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
        }
        if (ei->requires_grad) {
            auto& ge = ei->grad_buffer();
            for (std::size_t i = 0; i < n * c; ++i) {
                const double* p = o.grad.data() + i * hw;
                double acc = 0.0;
                for (std::size_t j = 0; j < hw; ++j) acc += p[j];
                ge[i] += acc;
            }
        }
    });
}

Tensor space_to_depth(const Tensor& x, std::size_t f) {
    require_rank(x, 4, "space_to_depth");
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (f == 0 || h % f || w % f) throw ShapeError("space_to_depth: " + shape_str(x.shape()) + " not divisible");
    const auto oh = h / f, ow = w / f, oc = c * f * f;
    // src index for every output element; the op is a permutation.
    std::vector<std::size_t> src(x.numel());
    std::size_t idx = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t dy = 0; dy < f; ++dy)
                for (std::size_t dx = 0; dx < f; ++dx)
                    for (std::size_t y = 0; y < oh; ++y)
                        for (std::size_t xx = 0; xx < ow; ++xx)
                            src[idx++] = ((i * c + ch) * h + y * f + dy) * w + xx * f + dx;
    std::vector<double> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = x[src[i]];
    TensorImpl* xi = x.impl().get();
    return make_result("space_to_depth", {n, oc, oh, ow}, std::move(out), {x}, [xi, src = std::move(src)](const TensorImpl& o) {
        auto& gx = xi->grad_buffer();
        for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += o.grad[i];
    });
}

Tensor upsample_nearest(const Tensor& x, std::size_t f) {
    require_rank(x, 4, "upsample_nearest");
    const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const auto oh = h * f, ow = w * f;
    std::vector<double> out(n * c * oh * ow);
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = x[(p * h + y / f) * w + xx / f];
    TensorImpl* xi = x.impl().get();
    return make_result("upsample_nearest", {n, c, oh, ow}, std::move(out), {x}, [xi, n, c, h, w, f](const TensorImpl& o) {
        auto& gx = xi->grad_buffer();
        const auto oh = h * f, ow = w * f;
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx) gx[(p * h + y / f) * w + xx / f] += o.grad[(p * oh + y) * ow + xx];
    });
}

Tensor scale_per_sample(const Tensor& x, std::span<const double> coeffs) {
    if (x.rank() == 0 || x.dim(0) != coeffs.size()) {
        throw ShapeError("scale_per_sample: " + std::to_string(coeffs.size()) + " coefficients for " + shape_str(x.shape()));
    }
    const auto per = x.numel() / coeffs.size();
    std::vector<double> c(coeffs.begin(), coeffs.end());
    std::vector<double> out(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i / per];
    TensorImpl* xi = x.impl().get();
    return make_result("scale_per_sample", x.shape(), std::move(out), {x}, [xi, per, c = std::move(c)](const TensorImpl& o) {
        auto& gx = xi->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c[i / per] * o.grad[i];
    });
}

Tensor select_samples(const Tensor& x, std::span<const std::size_t> indices) {
    if (x.rank() == 0) throw ShapeError("select_samples on a scalar");
    const auto n = x.dim(0);
    const auto per = x.numel() / n;
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    std::vector<double> out(idx.size() * per);
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] >= n) throw ShapeError("select_samples: index out of range");
        std::copy_n(x.data().begin() + idx[j] * per, per, out.begin() + j * per);
    }
    Shape shape = x.shape();
    shape[0] = idx.size();
    TensorImpl* xi = x.impl().get();
    return make_result("select_samples", std::move(shape), std::move(out), {x}, [xi, per, idx = std::move(idx)](const TensorImpl& o) {
        auto& gx = xi->grad_buffer();
        for (std::size_t j = 0; j < idx.size(); ++j)
            for (std::size_t e = 0; e < per; ++e) gx[idx[j] * per + e] += o.grad[j * per + e];
    });
}

}  // namespace dualprior
