#include <algorithm>
#include <memory>

#include "daft/ops.hpp"
#include "eigen_support.hpp"

namespace daft {

namespace {

struct ConvDims {
    std::int64_t n, c_in, d, h, w;
    std::int64_t c_out, k, stride, padding;
    std::int64_t od, oh, ow;
    std::int64_t in_spatial() const { return d * h * w; }
    std::int64_t out_spatial() const { return od * oh * ow; }
    std::int64_t kernel_rows() const { return c_in * k * k * k; }
};

// Unfold one image [C_in x D x H x W] into a [C_in*k^3 x od*oh*ow] matrix.
template <typename T>
void vol2col(const T* img, const ConvDims& cd, T* col) {
    const std::int64_t out_hw = cd.oh * cd.ow;
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < cd.c_in; ++ci) {
        const T* chan = img + ci * cd.in_spatial();
        for (std::int64_t kd = 0; kd < cd.k; ++kd)
            for (std::int64_t kh = 0; kh < cd.k; ++kh)
                for (std::int64_t kw = 0; kw < cd.k; ++kw, ++row) {
                    T* dst = col + row * cd.out_spatial();
                    for (std::int64_t od = 0; od < cd.od; ++od) {
                        const std::int64_t id = od * cd.stride + kd - cd.padding;
                        T* dplane = dst + od * out_hw;
                        if (id < 0 || id >= cd.d) {
                            std::fill_n(dplane, out_hw, T(0));
                            continue;
                        }
                        for (std::int64_t oh = 0; oh < cd.oh; ++oh) {
                            const std::int64_t ih = oh * cd.stride + kh - cd.padding;
                            T* drow = dplane + oh * cd.ow;
                            if (ih < 0 || ih >= cd.h) {
                                std::fill_n(drow, cd.ow, T(0));
                                continue;
                            }
                            const T* srow = chan + (id * cd.h + ih) * cd.w;
                            if (cd.stride == 1) {
                                const std::int64_t lo = std::max<std::int64_t>(0, cd.padding - kw);
                                const std::int64_t hi =
                                    std::min<std::int64_t>(cd.ow, cd.w - kw + cd.padding);
                                std::fill_n(drow, std::min(lo, cd.ow), T(0));
                                if (hi > lo) std::copy_n(srow + lo + kw - cd.padding, hi - lo, drow + lo);
                                if (hi < cd.ow) std::fill_n(drow + std::max(hi, std::int64_t(0)),
                                                            cd.ow - std::max(hi, std::int64_t(0)), T(0));
                            } else {
                                for (std::int64_t ow = 0; ow < cd.ow; ++ow) {
                                    const std::int64_t iw = ow * cd.stride + kw - cd.padding;
                                    drow[ow] = (iw >= 0 && iw < cd.w) ? srow[iw] : T(0);
                                }
                            }
                        }
                    }
                }
    }
}

// Scatter-add the unfolded gradient back onto one image's grad buffer.
template <typename T>
void col2vol(const T* col, const ConvDims& cd, T* img_grad) {
    std::int64_t row = 0;
    for (std::int64_t ci = 0; ci < cd.c_in; ++ci) {
        T* chan = img_grad + ci * cd.in_spatial();
        for (std::int64_t kd = 0; kd < cd.k; ++kd)
            for (std::int64_t kh = 0; kh < cd.k; ++kh)
                for (std::int64_t kw = 0; kw < cd.k; ++kw, ++row) {
                    const T* src = col + row * cd.out_spatial();
                    for (std::int64_t od = 0; od < cd.od; ++od) {
                        const std::int64_t id = od * cd.stride + kd - cd.padding;
                        if (id < 0 || id >= cd.d) continue;
                        for (std::int64_t oh = 0; oh < cd.oh; ++oh) {
                            const std::int64_t ih = oh * cd.stride + kh - cd.padding;
                            if (ih < 0 || ih >= cd.h) continue;
                            const T* srow = src + (od * cd.oh + oh) * cd.ow;
                            T* drow = chan + (id * cd.h + ih) * cd.w;
                            for (std::int64_t ow = 0; ow < cd.ow; ++ow) {
                                const std::int64_t iw = ow * cd.stride + kw - cd.padding;
                                if (iw >= 0 && iw < cd.w) drow[iw] += srow[ow];
                            }
                        }
                    }
                }
    }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::int64_t stride, std::int64_t padding) {
    if (input.ndim() != 5) {
        throw ShapeError("conv3d: input must be [N x C x D x H x W], got " +
                         shape_to_string(input.shape()));
    }
    if (weight.ndim() != 5 || weight.dim(2) != weight.dim(3) || weight.dim(2) != weight.dim(4)) {
        throw ShapeError("conv3d: weight must be [C_out x C_in x k x k x k], got " +
                         shape_to_string(weight.shape()));
    }
    if (input.dim(1) != weight.dim(1)) {
        throw ShapeError("conv3d: input channel count of " + shape_to_string(input.shape()) +
                         " does not match weight " + shape_to_string(weight.shape()));
    }
    ConvDims cd;
    cd.n = input.dim(0);
    cd.c_in = input.dim(1);
    cd.d = input.dim(2);
    cd.h = input.dim(3);
    cd.w = input.dim(4);
    cd.c_out = weight.dim(0);
    cd.k = weight.dim(2);
    cd.stride = stride;
    cd.padding = padding;
    if (cd.k < 1 || stride < 1 || padding < 0) {
        throw ShapeError("conv3d: require k >= 1, stride >= 1, padding >= 0");
    }
    for (std::int64_t dim : {cd.d, cd.h, cd.w}) {
        if (dim + 2 * padding < cd.k) {
            throw ShapeError("conv3d: spatial extent " + std::to_string(dim) + " plus padding " +
                             std::to_string(padding) + " is smaller than kernel " +
                             std::to_string(cd.k));
        }
    }
    cd.od = (cd.d + 2 * padding - cd.k) / stride + 1;
    cd.oh = (cd.h + 2 * padding - cd.k) / stride + 1;
    cd.ow = (cd.w + 2 * padding - cd.k) / stride + 1;

    const bool with_bias = bias.defined();
    if (with_bias && (bias.ndim() != 1 || bias.dim(0) != cd.c_out)) {
        throw ShapeError("conv3d: bias shape " + shape_to_string(bias.shape()) +
                         " does not match C_out " + std::to_string(cd.c_out));
    }

    std::vector<std::shared_ptr<detail::Node<T>>> inputs{input.node_ptr(), weight.node_ptr()};
    if (with_bias) inputs.push_back(bias.node_ptr());
    const bool need_grad = detail::any_requires_grad(inputs);

    const std::int64_t kr = cd.kernel_rows();
    const std::int64_t os = cd.out_spatial();
    std::vector<T> out(static_cast<std::size_t>(cd.n * cd.c_out * os));
    // The unfolded inputs are kept for the backward pass when a gradient is
    // required; inference drops them immediately.
    auto cols = std::make_shared<std::vector<T>>(
        static_cast<std::size_t>((need_grad ? cd.n : 1) * kr * os));

    detail::CMapRM<T> wmat(weight.data().data(), cd.c_out, kr);
    for (std::int64_t n = 0; n < cd.n; ++n) {
        T* col = cols->data() + (need_grad ? n : 0) * kr * os;
        vol2col(input.data().data() + n * cd.c_in * cd.in_spatial(), cd, col);
        detail::MapRM<T> out_n(out.data() + n * cd.c_out * os, cd.c_out, os);
        out_n.noalias() = wmat * detail::CMapRM<T>(col, kr, os);
        if (with_bias) {
            Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias.data().data(), cd.c_out);
            out_n.colwise() += b;
        }
    }

    return detail::make_node<T>(
        "conv3d", {cd.n, cd.c_out, cd.od, cd.oh, cd.ow}, std::move(out), std::move(inputs),
        [cd, cols](detail::Node<T>& self) {
            auto& in = *self.inputs[0];
            auto& w = *self.inputs[1];
            const std::int64_t kr = cd.kernel_rows();
            const std::int64_t os = cd.out_spatial();
            detail::CMapRM<T> wmat(w.data.data(), cd.c_out, kr);
            std::vector<T> dcol(static_cast<std::size_t>(kr * os));
            if (in.requires_grad) in.ensure_grad();
            if (w.requires_grad) w.ensure_grad();
            const bool with_bias = self.inputs.size() == 3;
            if (with_bias && self.inputs[2]->requires_grad) self.inputs[2]->ensure_grad();
            for (std::int64_t n = 0; n < cd.n; ++n) {
                detail::CMapRM<T> dout_n(self.grad.data() + n * cd.c_out * os, cd.c_out, os);
                detail::CMapRM<T> col_n(cols->data() + n * kr * os, kr, os);
                if (w.requires_grad) {
                    detail::MapRM<T>(w.grad.data(), cd.c_out, kr).noalias() +=
                        dout_n * col_n.transpose();
                }
                if (with_bias && self.inputs[2]->requires_grad) {
                    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(self.inputs[2]->grad.data(),
                                                                       cd.c_out);
                    db.noalias() += dout_n.rowwise().sum();
                }
                if (in.requires_grad) {
                    detail::MapRM<T>(dcol.data(), kr, os).noalias() = wmat.transpose() * dout_n;
                    col2vol(dcol.data(), cd, in.grad.data() + n * cd.c_in * cd.in_spatial());
                }
            }
        });
}

template <typename T>
Tensor<T> global_avg_pool3d(const Tensor<T>& input) {
    if (input.ndim() != 5) {
        throw ShapeError("global_avg_pool3d: input must be [N x C x D x H x W], got " +
                         shape_to_string(input.shape()));
    }
    const std::int64_t n = input.dim(0), c = input.dim(1);
    const std::int64_t spatial = input.dim(2) * input.dim(3) * input.dim(4);
    const T scale = T(1) / static_cast<T>(spatial);
    std::vector<T> out(static_cast<std::size_t>(n * c));
    for (std::int64_t i = 0; i < n * c; ++i) {
        const T* src = input.data().data() + i * spatial;
        T acc = 0;
        for (std::int64_t s = 0; s < spatial; ++s) acc += src[s];
        out[static_cast<std::size_t>(i)] = acc * scale;
    }
    return detail::make_node<T>("global_avg_pool3d", {n, c}, std::move(out), {input.node_ptr()},
                                [spatial, scale](detail::Node<T>& self) {
                                    auto& in = *self.inputs[0];
                                    if (!in.requires_grad) return;
                                    in.ensure_grad();
                                    const std::int64_t nc = self.numel();
                                    for (std::int64_t i = 0; i < nc; ++i) {
                                        const T g = self.grad[static_cast<std::size_t>(i)] * scale;
                                        T* dst = in.grad.data() + i * spatial;
                                        for (std::int64_t s = 0; s < spatial; ++s) dst[s] += g;
                                    }
                                });
}

template Tensor<float> conv3d(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                              std::int64_t, std::int64_t);
template Tensor<double> conv3d(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                               std::int64_t, std::int64_t);
template Tensor<float> global_avg_pool3d(const Tensor<float>&);
template Tensor<double> global_avg_pool3d(const Tensor<double>&);

}  // namespace daft
