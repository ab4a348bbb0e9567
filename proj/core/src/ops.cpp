#include "daft/ops.hpp"

#include <algorithm>
#include <cmath>

#include "eigen_support.hpp"

namespace daft {

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
    }
}

template <typename T>
void accumulate(detail::Node<T>& into, const std::vector<T>& g) {
    into.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) into.grad[i] += g[i];
}

// Elementwise unary op with dy/dx expressed from input x and output y.
template <typename T, typename Fwd, typename Bwd>
Tensor<T> unary_op(const char* op, const Tensor<T>& a, Fwd fwd, Bwd bwd) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v = fwd(v);
    return detail::make_node<T>(op, a.shape(), std::move(out), {a.node_ptr()},
                                [bwd](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (!in.requires_grad) return;
                                    in.ensure_grad();
                                    for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                        in.grad[i] += self.grad[i] * bwd(in.data[i], self.data[i]);
                                    }
                                });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("add", a, b);
    std::vector<T> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return detail::make_node<T>("add", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](detail::Node<T>& self) {
                                    for (int k = 0; k < 2; ++k) {
                                        auto& in = *self.inputs[k];
                                        if (in.requires_grad) accumulate(in, self.grad);
                                    }
                                });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("sub", a, b);
    std::vector<T> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return detail::make_node<T>("sub", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](detail::Node<T>& self) {
                                    auto& a_in = *self.inputs[0];
                                    auto& b_in = *self.inputs[1];
                                    if (a_in.requires_grad) accumulate(a_in, self.grad);
                                    if (b_in.requires_grad) {
                                        b_in.ensure_grad();
                                        for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                            b_in.grad[i] -= self.grad[i];
                                        }
                                    }
                                });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape("mul", a, b);
    std::vector<T> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_node<T>("mul", a.shape(), std::move(out), {a.node_ptr(), b.node_ptr()},
                                [](detail::Node<T>& self) {
                                    auto& a_in = *self.inputs[0];
                                    auto& b_in = *self.inputs[1];
                                    if (a_in.requires_grad) {
                                        a_in.ensure_grad();
                                        for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                            a_in.grad[i] += self.grad[i] * b_in.data[i];
                                        }
                                    }
                                    if (b_in.requires_grad) {
                                        b_in.ensure_grad();
                                        for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                            b_in.grad[i] += self.grad[i] * a_in.data[i];
                                        }
                                    }
                                });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return unary_op<T>(
        "neg", a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return unary_op<T>(
        "add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    return unary_op<T>(
        "mul_scalar", a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary_op<T>(
        "relu", a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary_op<T>(
        "sigmoid", a,
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& a) {
    return unary_op<T>(
        "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a) {
    return unary_op<T>(
        "exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& a) {
    for (const T v : a.data()) {
        if (!(v > T(0))) {
            throw ValueError("log: input must be strictly positive, got " +
                             std::to_string(static_cast<double>(v)));
        }
    }
    return unary_op<T>(
        "log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (const T v : a.data()) acc += v;
    return detail::make_node<T>("sum", {}, {acc}, {a.node_ptr()}, [](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        in.ensure_grad();
        const T g = self.grad[0];
        for (auto& v : in.grad) v += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const T scale = T(1) / static_cast<T>(a.numel());
    T acc = 0;
    for (const T v : a.data()) acc += v;
    return detail::make_node<T>("mean", {}, {acc * scale}, {a.node_ptr()},
                                [scale](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (!in.requires_grad) return;
                                    in.ensure_grad();
                                    const T g = self.grad[0] * scale;
                                    for (auto& v : in.grad) v += g;
                                });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
    }
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(static_cast<std::size_t>(m * n));
    {
        detail::CMapRM<T> A(a.data().data(), m, k);
        detail::CMapRM<T> B(b.data().data(), k, n);
        detail::MapRM<T> C(out.data(), m, n);
        C.noalias() = A * B;
    }
    return detail::make_node<T>(
        "matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
        [m, k, n](detail::Node<T>& self) {
            auto& a_in = *self.inputs[0];
            auto& b_in = *self.inputs[1];
            detail::CMapRM<T> G(self.grad.data(), m, n);
            detail::CMapRM<T> A(a_in.data.data(), m, k);
            detail::CMapRM<T> B(b_in.data.data(), k, n);
            if (a_in.requires_grad) {
                a_in.ensure_grad();
                detail::MapRM<T>(a_in.grad.data(), m, k).noalias() += G * B.transpose();
            }
            if (b_in.requires_grad) {
                b_in.ensure_grad();
                detail::MapRM<T>(b_in.grad.data(), k, n).noalias() += A.transpose() * G;
            }
        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    if (x.ndim() != 2 || weight.ndim() != 2 || x.dim(1) != weight.dim(1)) {
        throw ShapeError("linear: input " + shape_to_string(x.shape()) +
                         " incompatible with weight " + shape_to_string(weight.shape()));
    }
    const auto n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    const bool with_bias = bias.defined();
    if (with_bias && (bias.ndim() != 1 || bias.dim(0) != out_dim)) {
        throw ShapeError("linear: bias shape " + shape_to_string(bias.shape()) +
                         " does not match output dim " + std::to_string(out_dim));
    }
    std::vector<T> out(static_cast<std::size_t>(n * out_dim));
    {
        detail::CMapRM<T> X(x.data().data(), n, in);
        detail::CMapRM<T> W(weight.data().data(), out_dim, in);
        detail::MapRM<T> Y(out.data(), n, out_dim);
        Y.noalias() = X * W.transpose();
        if (with_bias) {
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data().data(), out_dim);
            Y.rowwise() += b.transpose();
        }
    }
    std::vector<std::shared_ptr<detail::Node<T>>> inputs{x.node_ptr(), weight.node_ptr()};
    if (with_bias) inputs.push_back(bias.node_ptr());
    return detail::make_node<T>(
        "linear", {n, out_dim}, std::move(out), std::move(inputs),
        [n, in, out_dim](detail::Node<T>& self) {
            auto& x_in = *self.inputs[0];
            auto& w_in = *self.inputs[1];
            detail::CMapRM<T> G(self.grad.data(), n, out_dim);
            detail::CMapRM<T> X(x_in.data.data(), n, in);
            detail::CMapRM<T> W(w_in.data.data(), out_dim, in);
            if (x_in.requires_grad) {
                x_in.ensure_grad();
                detail::MapRM<T>(x_in.grad.data(), n, in).noalias() += G * W;
            }
            if (w_in.requires_grad) {
                w_in.ensure_grad();
                detail::MapRM<T>(w_in.grad.data(), out_dim, in).noalias() += G.transpose() * X;
            }
            if (self.inputs.size() == 3 && self.inputs[2]->requires_grad) {
                auto& b_in = *self.inputs[2];
                b_in.ensure_grad();
                Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(b_in.grad.data(), out_dim);
                db.noalias() += G.colwise().sum().transpose();
            }
        });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
    if (shape_numel(new_shape) != a.numel()) {
        throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                         shape_to_string(new_shape));
    }
    std::vector<T> out(a.data().begin(), a.data().end());
    return detail::make_node<T>("reshape", std::move(new_shape), std::move(out), {a.node_ptr()},
                                [](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (in.requires_grad) accumulate(in, self.grad);
                                });
}

template <typename T>
Tensor<T> concat_lastdim(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
    const Shape& base = parts[0].shape();
    if (base.empty()) throw ShapeError("concat_lastdim: inputs must have rank >= 1");
    std::int64_t total_last = 0;
    for (const auto& p : parts) {
        if (p.ndim() != base.size()) {
            throw ShapeError("concat_lastdim: rank mismatch " + shape_to_string(base) + " vs " +
                             shape_to_string(p.shape()));
        }
        for (std::size_t d = 0; d + 1 < base.size(); ++d) {
            if (p.shape()[d] != base[d]) {
                throw ShapeError("concat_lastdim: leading dims differ, " + shape_to_string(base) +
                                 " vs " + shape_to_string(p.shape()));
            }
        }
        total_last += p.shape().back();
    }
    Shape out_shape = base;
    out_shape.back() = total_last;
    const std::int64_t rows = shape_numel(out_shape) / total_last;

    std::vector<T> out(static_cast<std::size_t>(rows * total_last));
    std::vector<std::int64_t> widths(parts.size());
    std::vector<std::shared_ptr<detail::Node<T>>> inputs;
    inputs.reserve(parts.size());
    {
        std::int64_t offset = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::int64_t w = parts[p].shape().back();
            widths[p] = w;
            const T* src = parts[p].data().data();
            for (std::int64_t r = 0; r < rows; ++r) {
                std::copy_n(src + r * w, w, out.data() + r * total_last + offset);
            }
            offset += w;
            inputs.push_back(parts[p].node_ptr());
        }
    }
    return detail::make_node<T>(
        "concat_lastdim", std::move(out_shape), std::move(out), std::move(inputs),
        [widths, rows, total_last](detail::Node<T>& self) {
            std::int64_t offset = 0;
            for (std::size_t p = 0; p < self.inputs.size(); ++p) {
                auto& in = *self.inputs[p];
                const std::int64_t w = widths[p];
                if (in.requires_grad) {
                    in.ensure_grad();
                    for (std::int64_t r = 0; r < rows; ++r) {
                        const T* g = self.grad.data() + r * total_last + offset;
                        T* dst = in.grad.data() + r * w;
                        for (std::int64_t i = 0; i < w; ++i) dst[i] += g[i];
                    }
                }
                offset += w;
            }
        });
}

template <typename T>
Tensor<T> narrow_lastdim(const Tensor<T>& a, std::int64_t start, std::int64_t length) {
    if (a.shape().empty()) throw ShapeError("narrow_lastdim: input must have rank >= 1");
    const std::int64_t last = a.shape().back();
    if (start < 0 || length <= 0 || start + length > last) {
        throw ShapeError("narrow_lastdim: slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for " +
                         shape_to_string(a.shape()));
    }
    Shape out_shape = a.shape();
    out_shape.back() = length;
    const std::int64_t rows = a.numel() / last;
    std::vector<T> out(static_cast<std::size_t>(rows * length));
    for (std::int64_t r = 0; r < rows; ++r) {
        std::copy_n(a.data().data() + r * last + start, length, out.data() + r * length);
    }
    return detail::make_node<T>("narrow_lastdim", std::move(out_shape), std::move(out),
                                {a.node_ptr()}, [start, length, rows, last](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (!in.requires_grad) return;
                                    in.ensure_grad();
                                    for (std::int64_t r = 0; r < rows; ++r) {
                                        const T* g = self.grad.data() + r * length;
                                        T* dst = in.grad.data() + r * last + start;
                                        for (std::int64_t i = 0; i < length; ++i) dst[i] += g[i];
                                    }
                                });
}

template <typename T>
Tensor<T> broadcast_channelwise(const Tensor<T>& values, const Shape& target_shape) {
    if (values.ndim() != 2 || target_shape.size() != 5 || values.dim(0) != target_shape[0] ||
        values.dim(1) != target_shape[1]) {
        throw ShapeError("broadcast_channelwise: values " + shape_to_string(values.shape()) +
                         " incompatible with target " + shape_to_string(target_shape));
    }
    const std::int64_t nc = values.numel();
    const std::int64_t spatial = target_shape[2] * target_shape[3] * target_shape[4];
    std::vector<T> out(static_cast<std::size_t>(nc * spatial));
    for (std::int64_t i = 0; i < nc; ++i) {
        std::fill_n(out.data() + i * spatial, spatial, values.data()[i]);
    }
    Shape shape = target_shape;
    return detail::make_node<T>("broadcast_channelwise", std::move(shape), std::move(out),
                                {values.node_ptr()}, [nc, spatial](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (!in.requires_grad) return;
                                    in.ensure_grad();
                                    for (std::int64_t i = 0; i < nc; ++i) {
                                        const T* g = self.grad.data() + i * spatial;
                                        T acc = 0;
                                        for (std::int64_t s = 0; s < spatial; ++s) acc += g[s];
                                        in.grad[i] += acc;
                                    }
                                });
}

template <typename T>
Tensor<T> broadcast_channelwise(const Tensor<T>& values, const Tensor<T>& target) {
    return broadcast_channelwise(values, target.shape());
}

template <typename T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
    if (logits.ndim() != 2) {
        throw ShapeError("log_softmax_rows: expected [N x K], got " +
                         shape_to_string(logits.shape()));
    }
    const auto n = logits.dim(0), k = logits.dim(1);
    std::vector<T> out(static_cast<std::size_t>(n * k));
    for (std::int64_t r = 0; r < n; ++r) {
        const T* row = logits.data().data() + r * k;
        T mx = row[0];
        for (std::int64_t i = 1; i < k; ++i) mx = std::max(mx, row[i]);
        T lse = 0;
        for (std::int64_t i = 0; i < k; ++i) lse += std::exp(row[i] - mx);
        lse = std::log(lse) + mx;
        for (std::int64_t i = 0; i < k; ++i) out[r * k + i] = row[i] - lse;
    }
    return detail::make_node<T>("log_softmax_rows", {n, k}, std::move(out), {logits.node_ptr()},
                                [n, k](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (!in.requires_grad) return;
                                    in.ensure_grad();
                                    for (std::int64_t r = 0; r < n; ++r) {
                                        const T* g = self.grad.data() + r * k;
                                        const T* y = self.data.data() + r * k;
                                        T gsum = 0;
                                        for (std::int64_t i = 0; i < k; ++i) gsum += g[i];
                                        T* dst = in.grad.data() + r * k;
                                        for (std::int64_t i = 0; i < k; ++i) {
                                            dst[i] += g[i] - std::exp(y[i]) * gsum;
                                        }
                                    }
                                });
}

#define DAFT_INSTANTIATE_OPS(T)                                                              \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> neg(const Tensor<T>&);                                                \
    template Tensor<T> add_scalar(const Tensor<T>&, T);                                      \
    template Tensor<T> mul_scalar(const Tensor<T>&, T);                                      \
    template Tensor<T> relu(const Tensor<T>&);                                               \
    template Tensor<T> sigmoid(const Tensor<T>&);                                            \
    template Tensor<T> tanh_op(const Tensor<T>&);                                            \
    template Tensor<T> exp_op(const Tensor<T>&);                                             \
    template Tensor<T> log_op(const Tensor<T>&);                                             \
    template Tensor<T> sum(const Tensor<T>&);                                                \
    template Tensor<T> mean(const Tensor<T>&);                                               \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                           \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                     \
    template Tensor<T> concat_lastdim(const std::vector<Tensor<T>>&);                        \
    template Tensor<T> narrow_lastdim(const Tensor<T>&, std::int64_t, std::int64_t);         \
    template Tensor<T> broadcast_channelwise(const Tensor<T>&, const Shape&);                \
    template Tensor<T> broadcast_channelwise(const Tensor<T>&, const Tensor<T>&);            \
    template Tensor<T> log_softmax_rows(const Tensor<T>&);

DAFT_INSTANTIATE_OPS(float)
DAFT_INSTANTIATE_OPS(double)

#undef DAFT_INSTANTIATE_OPS

}  // namespace daft
