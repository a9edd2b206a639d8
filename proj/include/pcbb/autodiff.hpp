#ifndef PCBB_AUTODIFF_HPP
#define PCBB_AUTODIFF_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pcbb/errors.hpp"
#include "pcbb/tensor.hpp"

namespace pcbb::nn {

enum class LayerKind { Conv3d, ConvTranspose3d, Linear };

// Parameters of one layer. Weight layouts:
//   conv3d:          [C_out, C_in, k, k, k]
//   convtranspose3d: [C_in, C_out, k, k, k]
//   linear:          [M, N]
struct LayerParams {
    LayerKind kind = LayerKind::Linear;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t padding = 0;
    Tensor weight;
    Tensor bias;
};

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
    if (in + 2 * p < k) {
        throw ShapeError("conv3d: spatial dim " + std::to_string(in) +
                         " too small for kernel " + std::to_string(k));
    }
    return (in + 2 * p - k) / s + 1;
}

inline std::size_t convt_out_dim(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
    std::size_t grown = (in - 1) * s + k;
    if (grown < 2 * p) throw ShapeError("convtranspose3d: padding exceeds output extent");
    return grown - 2 * p;
}

namespace detail {

inline void check_conv_input(const Tensor& in, const LayerParams& p, const char* what) {
    if (in.shape().size() != 4 || in.shape()[0] != p.in_channels) {
        throw ShapeError(std::string(what) + ": input shape " +
                         Tensor::shape_string(in.shape()) + " incompatible with " +
                         std::to_string(p.in_channels) + " input channels");
    }
}

}  // namespace detail

// ---- conv3d primitives (cross-correlation, no flip) ----

inline Tensor conv3d_forward(const Tensor& in, const LayerParams& p) {
    detail::check_conv_input(in, p, "conv3d");
    const std::size_t Ci = p.in_channels, Co = p.out_channels, k = p.kernel;
    const std::size_t D = in.shape()[1], H = in.shape()[2], W = in.shape()[3];
    const std::size_t Do = conv_out_dim(D, k, p.stride, p.padding);
    const std::size_t Ho = conv_out_dim(H, k, p.stride, p.padding);
    const std::size_t Wo = conv_out_dim(W, k, p.stride, p.padding);
    Tensor out({Co, Do, Ho, Wo});
    const long pad = static_cast<long>(p.padding);
    const long s = static_cast<long>(p.stride);
    for (std::size_t co = 0; co < Co; ++co) {
        const double b = p.bias[co];
        for (std::size_t od = 0; od < Do; ++od)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    double acc = b;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        const double* inp = in.data() + ci * D * H * W;
                        const double* wp =
                            p.weight.data() + ((co * Ci + ci) * k * k * k);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            long id = static_cast<long>(od) * s - pad + static_cast<long>(kz);
                            if (id < 0 || id >= static_cast<long>(D)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long ih = static_cast<long>(oh) * s - pad + static_cast<long>(ky);
                                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long iw = static_cast<long>(ow) * s - pad +
                                              static_cast<long>(kx);
                                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                    acc += inp[(static_cast<std::size_t>(id) * H +
                                                static_cast<std::size_t>(ih)) * W +
                                               static_cast<std::size_t>(iw)] *
                                           wp[(kz * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    out[((co * Do + od) * Ho + oh) * Wo + ow] = acc;
                }
    }
    return out;
}

inline Tensor conv3d_backward_input(const Tensor& gout, const LayerParams& p,
                                    const std::vector<std::size_t>& in_shape) {
    const std::size_t Ci = p.in_channels, Co = p.out_channels, k = p.kernel;
    const std::size_t D = in_shape[1], H = in_shape[2], W = in_shape[3];
    const std::size_t Do = gout.shape()[1], Ho = gout.shape()[2], Wo = gout.shape()[3];
    Tensor gin(in_shape);
    const long pad = static_cast<long>(p.padding);
    const long s = static_cast<long>(p.stride);
    for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t od = 0; od < Do; ++od)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const double g = gout[((co * Do + od) * Ho + oh) * Wo + ow];
                    if (g == 0.0) continue;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        double* gip = gin.data() + ci * D * H * W;
                        const double* wp = p.weight.data() + ((co * Ci + ci) * k * k * k);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            long id = static_cast<long>(od) * s - pad + static_cast<long>(kz);
                            if (id < 0 || id >= static_cast<long>(D)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long ih = static_cast<long>(oh) * s - pad + static_cast<long>(ky);
                                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long iw = static_cast<long>(ow) * s - pad +
                                              static_cast<long>(kx);
                                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                    gip[(static_cast<std::size_t>(id) * H +
                                         static_cast<std::size_t>(ih)) * W +
                                        static_cast<std::size_t>(iw)] +=
                                        g * wp[(kz * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                }
    return gin;
}

inline std::pair<Tensor, Tensor> conv3d_backward_params(const Tensor& in, const Tensor& gout,
                                                        const LayerParams& p) {
    const std::size_t Ci = p.in_channels, Co = p.out_channels, k = p.kernel;
    const std::size_t D = in.shape()[1], H = in.shape()[2], W = in.shape()[3];
    const std::size_t Do = gout.shape()[1], Ho = gout.shape()[2], Wo = gout.shape()[3];
    Tensor gw(p.weight.shape());
    Tensor gb(p.bias.shape());
    const long pad = static_cast<long>(p.padding);
    const long s = static_cast<long>(p.stride);
    for (std::size_t co = 0; co < Co; ++co)
        for (std::size_t od = 0; od < Do; ++od)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const double g = gout[((co * Do + od) * Ho + oh) * Wo + ow];
                    gb[co] += g;
                    if (g == 0.0) continue;
                    for (std::size_t ci = 0; ci < Ci; ++ci) {
                        const double* inp = in.data() + ci * D * H * W;
                        double* gwp = gw.data() + ((co * Ci + ci) * k * k * k);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            long id = static_cast<long>(od) * s - pad + static_cast<long>(kz);
                            if (id < 0 || id >= static_cast<long>(D)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long ih = static_cast<long>(oh) * s - pad + static_cast<long>(ky);
                                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long iw = static_cast<long>(ow) * s - pad +
                                              static_cast<long>(kx);
                                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                    gwp[(kz * k + ky) * k + kx] +=
                                        g * inp[(static_cast<std::size_t>(id) * H +
                                                 static_cast<std::size_t>(ih)) * W +
                                                static_cast<std::size_t>(iw)];
                                }
                            }
                        }
                    }
                }
    return {std::move(gw), std::move(gb)};
}

// ---- transposed conv, the adjoint of conv3d with the same geometry ----

inline Tensor conv_transpose3d_forward(const Tensor& in, const LayerParams& p) {
    detail::check_conv_input(in, p, "convtranspose3d");
    const std::size_t Ci = p.in_channels, Co = p.out_channels, k = p.kernel;
    const std::size_t D = in.shape()[1], H = in.shape()[2], W = in.shape()[3];
    const std::size_t Do = convt_out_dim(D, k, p.stride, p.padding);
    const std::size_t Ho = convt_out_dim(H, k, p.stride, p.padding);
    const std::size_t Wo = convt_out_dim(W, k, p.stride, p.padding);
    Tensor out({Co, Do, Ho, Wo});
    for (std::size_t co = 0; co < Co; ++co) {
        double* op = out.data() + co * Do * Ho * Wo;
        const double b = p.bias[co];
        for (std::size_t i = 0; i < Do * Ho * Wo; ++i) op[i] = b;
    }
    const long pad = static_cast<long>(p.padding);
    const long s = static_cast<long>(p.stride);
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t id = 0; id < D; ++id)
            for (std::size_t ih = 0; ih < H; ++ih)
                for (std::size_t iw = 0; iw < W; ++iw) {
                    const double v = in[((ci * D + id) * H + ih) * W + iw];
                    if (v == 0.0) continue;
                    for (std::size_t co = 0; co < Co; ++co) {
                        double* op = out.data() + co * Do * Ho * Wo;
                        const double* wp = p.weight.data() + ((ci * Co + co) * k * k * k);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            long od = static_cast<long>(id) * s - pad + static_cast<long>(kz);
                            if (od < 0 || od >= static_cast<long>(Do)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long oh = static_cast<long>(ih) * s - pad + static_cast<long>(ky);
                                if (oh < 0 || oh >= static_cast<long>(Ho)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long ow = static_cast<long>(iw) * s - pad +
                                              static_cast<long>(kx);
                                    if (ow < 0 || ow >= static_cast<long>(Wo)) continue;
                                    op[(static_cast<std::size_t>(od) * Ho +
                                        static_cast<std::size_t>(oh)) * Wo +
                                       static_cast<std::size_t>(ow)] +=
                                        v * wp[(kz * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                }
    return out;
}

inline Tensor conv_transpose3d_backward_input(const Tensor& gout, const LayerParams& p,
                                              const std::vector<std::size_t>& in_shape) {
    // Gather: the adjoint of the scatter above is a plain correlation.
    const std::size_t Ci = p.in_channels, Co = p.out_channels, k = p.kernel;
    const std::size_t D = in_shape[1], H = in_shape[2], W = in_shape[3];
    const std::size_t Do = gout.shape()[1], Ho = gout.shape()[2], Wo = gout.shape()[3];
    Tensor gin(in_shape);
    const long pad = static_cast<long>(p.padding);
    const long s = static_cast<long>(p.stride);
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t id = 0; id < D; ++id)
            for (std::size_t ih = 0; ih < H; ++ih)
                for (std::size_t iw = 0; iw < W; ++iw) {
                    double acc = 0.0;
                    for (std::size_t co = 0; co < Co; ++co) {
                        const double* gp = gout.data() + co * Do * Ho * Wo;
                        const double* wp = p.weight.data() + ((ci * Co + co) * k * k * k);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            long od = static_cast<long>(id) * s - pad + static_cast<long>(kz);
                            if (od < 0 || od >= static_cast<long>(Do)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long oh = static_cast<long>(ih) * s - pad + static_cast<long>(ky);
                                if (oh < 0 || oh >= static_cast<long>(Ho)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long ow = static_cast<long>(iw) * s - pad +
                                              static_cast<long>(kx);
                                    if (ow < 0 || ow >= static_cast<long>(Wo)) continue;
                                    acc += gp[(static_cast<std::size_t>(od) * Ho +
                                               static_cast<std::size_t>(oh)) * Wo +
                                              static_cast<std::size_t>(ow)] *
                                           wp[(kz * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    gin[((ci * D + id) * H + ih) * W + iw] = acc;
                }
    return gin;
}

inline std::pair<Tensor, Tensor> conv_transpose3d_backward_params(const Tensor& in,
                                                                  const Tensor& gout,
                                                                  const LayerParams& p) {
    const std::size_t Ci = p.in_channels, Co = p.out_channels, k = p.kernel;
    const std::size_t D = in.shape()[1], H = in.shape()[2], W = in.shape()[3];
    const std::size_t Do = gout.shape()[1], Ho = gout.shape()[2], Wo = gout.shape()[3];
    Tensor gw(p.weight.shape());
    Tensor gb(p.bias.shape());
    for (std::size_t co = 0; co < Co; ++co) {
        const double* gp = gout.data() + co * Do * Ho * Wo;
        double acc = 0.0;
        for (std::size_t i = 0; i < Do * Ho * Wo; ++i) acc += gp[i];
        gb[co] = acc;
    }
    const long pad = static_cast<long>(p.padding);
    const long s = static_cast<long>(p.stride);
    for (std::size_t ci = 0; ci < Ci; ++ci)
        for (std::size_t id = 0; id < D; ++id)
            for (std::size_t ih = 0; ih < H; ++ih)
                for (std::size_t iw = 0; iw < W; ++iw) {
                    const double v = in[((ci * D + id) * H + ih) * W + iw];
                    if (v == 0.0) continue;
                    for (std::size_t co = 0; co < Co; ++co) {
                        const double* gp = gout.data() + co * Do * Ho * Wo;
                        double* gwp = gw.data() + ((ci * Co + co) * k * k * k);
                        for (std::size_t kz = 0; kz < k; ++kz) {
                            long od = static_cast<long>(id) * s - pad + static_cast<long>(kz);
                            if (od < 0 || od >= static_cast<long>(Do)) continue;
                            for (std::size_t ky = 0; ky < k; ++ky) {
                                long oh = static_cast<long>(ih) * s - pad + static_cast<long>(ky);
                                if (oh < 0 || oh >= static_cast<long>(Ho)) continue;
                                for (std::size_t kx = 0; kx < k; ++kx) {
                                    long ow = static_cast<long>(iw) * s - pad +
                                              static_cast<long>(kx);
                                    if (ow < 0 || ow >= static_cast<long>(Wo)) continue;
                                    gwp[(kz * k + ky) * k + kx] +=
                                        v * gp[(static_cast<std::size_t>(od) * Ho +
                                                static_cast<std::size_t>(oh)) * Wo +
                                               static_cast<std::size_t>(ow)];
                                }
                            }
                        }
                    }
                }
    return {std::move(gw), std::move(gb)};
}

// ---- reverse-mode tape ----

// Records one forward composition; backward() walks the tape once in
// reverse and is then done with it.
class Graph {
public:
    using NodeId = std::size_t;

    NodeId input(Tensor value) {
        nodes_.push_back(Node{std::move(value), Tensor{}, {}, nullptr});
        return nodes_.size() - 1;
    }

    const Tensor& value(NodeId id) const { return nodes_.at(id).value; }

    const Tensor& grad(NodeId id) const {
        if (!ran_backward_) throw StateError("gradient read before backward()");
        return nodes_.at(id).grad;
    }

    NodeId conv3d(NodeId x, NodeId w, NodeId b, std::size_t in_ch, std::size_t out_ch,
                  std::size_t kernel, std::size_t stride, std::size_t padding) {
        LayerParams p{LayerKind::Conv3d, in_ch, out_ch, kernel, stride, padding,
                      nodes_[w].value, nodes_[b].value};
        Tensor out = conv3d_forward(nodes_[x].value, p);
        return emit(std::move(out), {x, w, b},
                    [in_ch, out_ch, kernel, stride, padding](Graph& g, const Node& n) {
                        LayerParams q{LayerKind::Conv3d, in_ch, out_ch, kernel,
                                      stride, padding, g.nodes_[n.parents[1]].value,
                                      g.nodes_[n.parents[2]].value};
                        const Tensor& in = g.nodes_[n.parents[0]].value;
                        g.accum(n.parents[0],
                                conv3d_backward_input(n.grad, q, in.shape()));
                        auto [gw, gb] = conv3d_backward_params(in, n.grad, q);
                        g.accum(n.parents[1], std::move(gw));
                        g.accum(n.parents[2], std::move(gb));
                    });
    }

    NodeId conv_transpose3d(NodeId x, NodeId w, NodeId b, std::size_t in_ch,
                            std::size_t out_ch, std::size_t kernel, std::size_t stride,
                            std::size_t padding) {
        LayerParams p{LayerKind::ConvTranspose3d, in_ch, out_ch, kernel, stride, padding,
                      nodes_[w].value, nodes_[b].value};
        Tensor out = conv_transpose3d_forward(nodes_[x].value, p);
        return emit(std::move(out), {x, w, b},
                    [in_ch, out_ch, kernel, stride, padding](Graph& g, const Node& n) {
                        LayerParams q{LayerKind::ConvTranspose3d, in_ch, out_ch, kernel,
                                      stride, padding, g.nodes_[n.parents[1]].value,
                                      g.nodes_[n.parents[2]].value};
                        const Tensor& in = g.nodes_[n.parents[0]].value;
                        g.accum(n.parents[0],
                                conv_transpose3d_backward_input(n.grad, q, in.shape()));
                        auto [gw, gb] = conv_transpose3d_backward_params(in, n.grad, q);
                        g.accum(n.parents[1], std::move(gw));
                        g.accum(n.parents[2], std::move(gb));
                    });
    }

    NodeId linear(NodeId x, NodeId w, NodeId b) {
        const Tensor& in = nodes_[x].value;
        const Tensor& wt = nodes_[w].value;
        const Tensor& bt = nodes_[b].value;
        const std::size_t M = wt.shape()[0], N = wt.shape()[1];
        if (in.size() != N) {
            throw ShapeError("linear: input " + Tensor::shape_string(in.shape()) +
                             " vs weight " + Tensor::shape_string(wt.shape()));
        }
        Tensor out({M});
        for (std::size_t m = 0; m < M; ++m) {
            double acc = bt[m];
            const double* row = wt.data() + m * N;
            for (std::size_t n = 0; n < N; ++n) acc += row[n] * in[n];
            out[m] = acc;
        }
        return emit(std::move(out), {x, w, b}, [M, N](Graph& g, const Node& n) {
            const Tensor& in = g.nodes_[n.parents[0]].value;
            const Tensor& wt = g.nodes_[n.parents[1]].value;
            Tensor gx(in.shape());
            Tensor gw(wt.shape());
            Tensor gb({M});
            for (std::size_t m = 0; m < M; ++m) {
                const double go = n.grad[m];
                gb[m] = go;
                const double* row = wt.data() + m * N;
                double* gwrow = gw.data() + m * N;
                for (std::size_t j = 0; j < N; ++j) {
                    gx[j] += go * row[j];
                    gwrow[j] = go * in[j];
                }
            }
            g.accum(n.parents[0], std::move(gx));
            g.accum(n.parents[1], std::move(gw));
            g.accum(n.parents[2], std::move(gb));
        });
    }

    NodeId relu(NodeId x) {
        Tensor out = nodes_[x].value;
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i] < 0.0) out[i] = 0.0;
        return emit(std::move(out), {x}, [](Graph& g, const Node& n) {
            const Tensor& in = g.nodes_[n.parents[0]].value;
            Tensor gx(in.shape());
            for (std::size_t i = 0; i < gx.size(); ++i)
                gx[i] = in[i] > 0.0 ? n.grad[i] : 0.0;
            g.accum(n.parents[0], std::move(gx));
        });
    }

    NodeId sigmoid(NodeId x) {
        Tensor out = nodes_[x].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(out[i]);
        return emit(std::move(out), {x}, [](Graph& g, const Node& n) {
            Tensor gx(n.value.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) {
                const double y = n.value[i];
                gx[i] = n.grad[i] * y * (1.0 - y);
            }
            g.accum(n.parents[0], std::move(gx));
        });
    }

    NodeId reshape(NodeId x, std::vector<std::size_t> shape) {
        Tensor out = nodes_[x].value.reshaped(shape);
        return emit(std::move(out), {x}, [](Graph& g, const Node& n) {
            g.accum(n.parents[0],
                    n.grad.reshaped(g.nodes_[n.parents[0]].value.shape()));
        });
    }

    NodeId add(NodeId a, NodeId b) {
        Tensor out = nodes_[a].value;
        out.add_in_place(nodes_[b].value);
        return emit(std::move(out), {a, b}, [](Graph& g, const Node& n) {
            g.accum(n.parents[0], n.grad);
            g.accum(n.parents[1], n.grad);
        });
    }

    NodeId mul(NodeId a, NodeId b) {
        const Tensor& av = nodes_[a].value;
        const Tensor& bv = nodes_[b].value;
        if (!av.same_shape(bv)) {
            throw ShapeError("mul: " + Tensor::shape_string(av.shape()) + " vs " +
                             Tensor::shape_string(bv.shape()));
        }
        Tensor out(av.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        return emit(std::move(out), {a, b}, [](Graph& g, const Node& n) {
            const Tensor& av = g.nodes_[n.parents[0]].value;
            const Tensor& bv = g.nodes_[n.parents[1]].value;
            Tensor ga(av.shape());
            Tensor gb(bv.shape());
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] = n.grad[i] * bv[i];
                gb[i] = n.grad[i] * av[i];
            }
            g.accum(n.parents[0], std::move(ga));
            g.accum(n.parents[1], std::move(gb));
        });
    }

    NodeId scale(NodeId x, double c) {
        Tensor out = nodes_[x].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
        return emit(std::move(out), {x}, [c](Graph& g, const Node& n) {
            Tensor gx = n.grad;
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= c;
            g.accum(n.parents[0], std::move(gx));
        });
    }

    NodeId exp(NodeId x) {
        Tensor out = nodes_[x].value;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
        return emit(std::move(out), {x}, [](Graph& g, const Node& n) {
            Tensor gx(n.value.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = n.grad[i] * n.value[i];
            g.accum(n.parents[0], std::move(gx));
        });
    }

    NodeId sum(NodeId x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < nodes_[x].value.size(); ++i) acc += nodes_[x].value[i];
        return emit(Tensor({1}, {acc}), {x}, [](Graph& g, const Node& n) {
            Tensor gx(g.nodes_[n.parents[0]].value.shape(), n.grad[0]);
            g.accum(n.parents[0], std::move(gx));
        });
    }

    // a - b, elementwise.
    NodeId sub(NodeId a, NodeId b) { return add(a, scale(b, -1.0)); }

    // Sum over elements of x*t - softplus(t): the Bernoulli log-likelihood of
    // binary targets under sigmoid(t), evaluated without forming log(1-p).
    NodeId bernoulli_loglik(NodeId logits, const Tensor& targets) {
        const Tensor& t = nodes_[logits].value;
        if (!t.same_shape(targets)) {
            throw ShapeError("bernoulli_loglik: logits " + Tensor::shape_string(t.shape()) +
                             " vs targets " + Tensor::shape_string(targets.shape()));
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < t.size(); ++i)
            acc += targets[i] * t[i] - softplus(t[i]);
        Tensor tcopy = targets;
        return emit(Tensor({1}, {acc}), {logits},
                    [tcopy = std::move(tcopy)](Graph& g, const Node& n) {
                        const Tensor& t = g.nodes_[n.parents[0]].value;
                        Tensor gx(t.shape());
                        for (std::size_t i = 0; i < gx.size(); ++i)
                            gx[i] = n.grad[0] * (tcopy[i] - stable_sigmoid(t[i]));
                        g.accum(n.parents[0], std::move(gx));
                    });
    }

    // KL(N(mu, exp(logvar)) || N(0, I)) in closed form.
    NodeId gaussian_kl(NodeId mu, NodeId logvar) {
        const Tensor& m = nodes_[mu].value;
        const Tensor& lv = nodes_[logvar].value;
        if (!m.same_shape(lv)) {
            throw ShapeError("gaussian_kl: mu " + Tensor::shape_string(m.shape()) +
                             " vs logvar " + Tensor::shape_string(lv.shape()));
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < m.size(); ++i)
            acc += 0.5 * (m[i] * m[i] + std::exp(lv[i]) - 1.0 - lv[i]);
        return emit(Tensor({1}, {acc}), {mu, logvar}, [](Graph& g, const Node& n) {
            const Tensor& m = g.nodes_[n.parents[0]].value;
            const Tensor& lv = g.nodes_[n.parents[1]].value;
            Tensor gm(m.shape());
            Tensor glv(lv.shape());
            for (std::size_t i = 0; i < m.size(); ++i) {
                gm[i] = n.grad[0] * m[i];
                glv[i] = n.grad[0] * 0.5 * (std::exp(lv[i]) - 1.0);
            }
            g.accum(n.parents[0], std::move(gm));
            g.accum(n.parents[1], std::move(glv));
        });
    }

    // Reverse sweep from a scalar output node; gradients are then readable
    // via grad().
    void backward(NodeId output) {
        if (nodes_.empty()) throw StateError("backward() before any forward pass");
        if (nodes_.at(output).value.size() != 1) {
            throw StateError("backward() requires a scalar output node");
        }
        for (Node& n : nodes_) n.grad = Tensor(n.value.shape());
        nodes_[output].grad[0] = 1.0;
        ran_backward_ = true;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].backprop) nodes_[i].backprop(*this, nodes_[i]);
        }
    }

    static double stable_sigmoid(double x) {
        if (x >= 0.0) {
            double e = std::exp(-x);
            return 1.0 / (1.0 + e);
        }
        double e = std::exp(x);
        return e / (1.0 + e);
    }

    static double softplus(double x) {
        if (x > 30.0) return x;
        if (x < -30.0) return std::exp(x);
        return std::log1p(std::exp(x));
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<NodeId> parents;
        std::function<void(Graph&, const Node&)> backprop;
    };

    NodeId emit(Tensor value, std::vector<NodeId> parents,
                std::function<void(Graph&, const Node&)> backprop) {
        nodes_.push_back(Node{std::move(value), Tensor{}, std::move(parents),
                              std::move(backprop)});
        return nodes_.size() - 1;
    }

    void accum(NodeId id, Tensor g) {
        if (nodes_[id].grad.size() == 0) {
            nodes_[id].grad = std::move(g);
        } else {
            nodes_[id].grad.add_in_place(g);
        }
    }

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// ---- standalone elementwise activations (inference path) ----

enum class Activation { Relu, Sigmoid };

inline Tensor activation(const Tensor& in, Activation kind) {
    Tensor out = in;
    switch (kind) {
        case Activation::Relu:
            for (std::size_t i = 0; i < out.size(); ++i)
                if (out[i] < 0.0) out[i] = 0.0;
            break;
        case Activation::Sigmoid:
            for (std::size_t i = 0; i < out.size(); ++i)
                out[i] = Graph::stable_sigmoid(out[i]);
            break;
    }
    return out;
}

inline Tensor linear_forward(const Tensor& in, const LayerParams& p) {
    const std::size_t M = p.weight.shape()[0], N = p.weight.shape()[1];
    if (in.size() != N) {
        throw ShapeError("linear: input " + Tensor::shape_string(in.shape()) +
                         " vs weight " + Tensor::shape_string(p.weight.shape()));
    }
    Tensor out({M});
    for (std::size_t m = 0; m < M; ++m) {
        double acc = p.bias[m];
        const double* row = p.weight.data() + m * N;
        for (std::size_t n = 0; n < N; ++n) acc += row[n] * in[n];
        out[m] = acc;
    }
    return out;
}

// ---- Adam ----

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    long step = 0;
};

inline void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
                      AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam_step: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
    }
    if (state.m.empty()) {
        for (Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = grads[i];
        if (!p.same_shape(g)) {
            throw ShapeError("adam_step: param " + Tensor::shape_string(p.shape()) +
                             " vs grad " + Tensor::shape_string(g.shape()));
        }
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

}  // namespace pcbb::nn

#endif  // PCBB_AUTODIFF_HPP
