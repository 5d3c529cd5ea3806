#include "fitpath/tape.hpp"

#include <Eigen/Core>
#include <cassert>
#include <cmath>
#include <cstring>
#include <limits>

#include "fitpath/compression.hpp"
#include "fitpath/errors.hpp"

namespace fitpath {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Gathers one sample's conv patches into cols[(c*kh+i)*kw+j, oh*OW+ow].
// Out-of-bounds (padding) entries are zero.
void im2col(const double* x, std::int64_t C, std::int64_t H, std::int64_t W,
            std::int64_t kh, std::int64_t kw, int stride, int pad,
            std::int64_t OH, std::int64_t OW, double* cols) {
    const std::int64_t patch = kh * kw;
    for (std::int64_t c = 0; c < C; ++c) {
        const double* plane = x + c * H * W;
        for (std::int64_t i = 0; i < kh; ++i) {
            for (std::int64_t j = 0; j < kw; ++j) {
                double* row = cols + ((c * patch + i * kw + j) * OH * OW);
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                    const std::int64_t h = oh * stride - pad + i;
                    if (h < 0 || h >= H) {
                        std::memset(row + oh * OW, 0, sizeof(double) * static_cast<size_t>(OW));
                        continue;
                    }
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        const std::int64_t w = ow * stride - pad + j;
                        row[oh * OW + ow] = (w < 0 || w >= W) ? 0.0 : plane[h * W + w];
                    }
                }
            }
        }
    }
}

// Scatter-add of col gradients back onto the input plane.
void col2im_add(const double* cols, std::int64_t C, std::int64_t H, std::int64_t W,
                std::int64_t kh, std::int64_t kw, int stride, int pad,
                std::int64_t OH, std::int64_t OW, double* dx) {
    const std::int64_t patch = kh * kw;
    for (std::int64_t c = 0; c < C; ++c) {
        double* plane = dx + c * H * W;
        for (std::int64_t i = 0; i < kh; ++i) {
            for (std::int64_t j = 0; j < kw; ++j) {
                const double* row = cols + ((c * patch + i * kw + j) * OH * OW);
                for (std::int64_t oh = 0; oh < OH; ++oh) {
                    const std::int64_t h = oh * stride - pad + i;
                    if (h < 0 || h >= H) continue;
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        const std::int64_t w = ow * stride - pad + j;
                        if (w < 0 || w >= W) continue;
                        plane[h * W + w] += row[oh * OW + ow];
                    }
                }
            }
        }
    }
}

}  // namespace

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Sum: return "sum";
        case Op::Relu: return "relu";
        case Op::MatMul: return "matmul";
        case Op::BiasAdd: return "bias_add";
        case Op::Conv2d: return "conv2d";
        case Op::MaxPool2d: return "maxpool2d";
        case Op::Flatten: return "flatten";
        case Op::SoftmaxXent: return "softmax_xent";
        case Op::FakeQuantWeights: return "fake_quant_weights";
        case Op::FakeQuantActs: return "fake_quant_acts";
    }
    return "?";
}

int Tape::push(Node n) {
    if (consumed_) throw std::logic_error("tape: reuse after backward");
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

int Tape::add(int a, int b) {
    const auto& ta = node(a).value;
    const auto& tb = node(b).value;
    if (!ta.same_shape(tb)) {
        throw ShapeError(std::string("add: shape mismatch ") + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
    }
    Node n;
    n.op = Op::Add;
    n.in0 = a; n.in1 = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] + tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

int Tape::sub(int a, int b) {
    const auto& ta = node(a).value;
    const auto& tb = node(b).value;
    if (!ta.same_shape(tb)) {
        throw ShapeError(std::string("sub: shape mismatch ") + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
    }
    Node n;
    n.op = Op::Sub;
    n.in0 = a; n.in1 = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] - tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

int Tape::mul(int a, int b) {
    const auto& ta = node(a).value;
    const auto& tb = node(b).value;
    if (!ta.same_shape(tb)) {
        throw ShapeError(std::string("mul: shape mismatch ") + shape_str(ta.shape()) + " vs " +
                         shape_str(tb.shape()));
    }
    Node n;
    n.op = Op::Mul;
    n.in0 = a; n.in1 = b;
    n.requires_grad = node(a).requires_grad || node(b).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * tb[i];
    n.value = std::move(out);
    return push(std::move(n));
}

int Tape::scale(int a, double c) {
    const auto& ta = node(a).value;
    Node n;
    n.op = Op::Scale;
    n.in0 = a;
    n.scalar = c;
    n.requires_grad = node(a).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] * c;
    n.value = std::move(out);
    return push(std::move(n));
}

int Tape::sum(int a) {
    Node n;
    n.op = Op::Sum;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    n.value = Tensor::scalar(node(a).value.sum());
    return push(std::move(n));
}

int Tape::relu(int a) {
    const auto& ta = node(a).value;
    Node n;
    n.op = Op::Relu;
    n.in0 = a;
    n.requires_grad = node(a).requires_grad;
    Tensor out(ta.shape());
    for (std::int64_t i = 0; i < ta.numel(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
    n.value = std::move(out);
    return push(std::move(n));
}

int Tape::matmul(int x, int w) {
    const auto& tx = node(x).value;
    const auto& tw = node(w).value;
    if (tx.rank() != 2 || tw.rank() != 2 || tx.extent(1) != tw.extent(0)) {
        throw ShapeError(std::string("matmul: incompatible shapes ") + shape_str(tx.shape()) +
                         " x " + shape_str(tw.shape()));
    }
    const auto N = tx.extent(0), in = tx.extent(1), out = tw.extent(1);
    Node n;
    n.op = Op::MatMul;
    n.in0 = x; n.in1 = w;
    n.requires_grad = node(x).requires_grad || node(w).requires_grad;
    Tensor y({N, out});
    MutMap(y.data().data(), N, out).noalias() =
        ConstMap(tx.data().data(), N, in) * ConstMap(tw.data().data(), in, out);
    n.value = std::move(y);
    return push(std::move(n));
}

int Tape::bias_add(int x, int b) {
    const auto& tx = node(x).value;
    const auto& tb = node(b).value;
    const bool ok = tb.rank() == 1 &&
                    ((tx.rank() == 2 && tx.extent(1) == tb.extent(0)) ||
                     (tx.rank() == 4 && tx.extent(1) == tb.extent(0)));
    if (!ok) {
        throw ShapeError(std::string("bias_add: cannot broadcast ") + shape_str(tb.shape()) +
                         " onto " + shape_str(tx.shape()));
    }
    Node n;
    n.op = Op::BiasAdd;
    n.in0 = x; n.in1 = b;
    n.requires_grad = node(x).requires_grad || node(b).requires_grad;
    Tensor out(tx.shape());
    if (tx.rank() == 2) {
        const auto N = tx.extent(0), F = tx.extent(1);
        for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t f = 0; f < F; ++f) out[i * F + f] = tx[i * F + f] + tb[f];
    } else {
        const auto N = tx.extent(0), C = tx.extent(1), HW = tx.extent(2) * tx.extent(3);
        for (std::int64_t i = 0; i < N; ++i)
            for (std::int64_t c = 0; c < C; ++c) {
                const auto base = (i * C + c) * HW;
                for (std::int64_t p = 0; p < HW; ++p) out[base + p] = tx[base + p] + tb[c];
            }
    }
    n.value = std::move(out);
    return push(std::move(n));
}

int Tape::conv2d(int x, int w, int stride, int pad) {
    const auto& tx = node(x).value;
    const auto& tw = node(w).value;
    if (tx.rank() != 4 || tw.rank() != 4 || tx.extent(1) != tw.extent(1)) {
        throw ShapeError(std::string("conv2d: incompatible shapes ") + shape_str(tx.shape()) +
                         " * " + shape_str(tw.shape()));
    }
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    const auto N = tx.extent(0), C = tx.extent(1), H = tx.extent(2), W = tx.extent(3);
    const auto K = tw.extent(0), kh = tw.extent(2), kw = tw.extent(3);
    const auto OH = (H + 2 * pad - kh) / stride + 1;
    const auto OW = (W + 2 * pad - kw) / stride + 1;
    if (OH <= 0 || OW <= 0 || (H + 2 * pad - kh) % stride != 0 || (W + 2 * pad - kw) % stride != 0) {
        throw ShapeError("conv2d: kernel " + shape_str(tw.shape()) + " does not tile input " +
                         shape_str(tx.shape()) + " with stride " + std::to_string(stride) +
                         " pad " + std::to_string(pad));
    }
    Node n;
    n.op = Op::Conv2d;
    n.in0 = x; n.in1 = w;
    n.stride = stride; n.pad = pad;
    n.requires_grad = node(x).requires_grad || node(w).requires_grad;

    Tensor y({N, K, OH, OW});
    const std::int64_t CKK = C * kh * kw, P = OH * OW;
    std::vector<double> cols(static_cast<size_t>(CKK * P));
    ConstMap wmat(tw.data().data(), K, CKK);
    for (std::int64_t s = 0; s < N; ++s) {
        im2col(tx.data().data() + s * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, cols.data());
        MutMap(y.data().data() + s * K * P, K, P).noalias() =
            wmat * ConstMap(cols.data(), CKK, P);
    }
    n.value = std::move(y);
    return push(std::move(n));
}

int Tape::maxpool2d(int x, int k, int stride) {
    const auto& tx = node(x).value;
    if (tx.rank() != 4) {
        throw ShapeError(std::string("maxpool2d: expected rank-4 input, got ") + shape_str(tx.shape()));
    }
    const auto N = tx.extent(0), C = tx.extent(1), H = tx.extent(2), W = tx.extent(3);
    if ((H - k) % stride != 0 || (W - k) % stride != 0 || H < k || W < k) {
        throw ShapeError("maxpool2d: window " + std::to_string(k) + "/" + std::to_string(stride) +
                         " does not tile input " + shape_str(tx.shape()));
    }
    const auto OH = (H - k) / stride + 1, OW = (W - k) / stride + 1;
    Node n;
    n.op = Op::MaxPool2d;
    n.in0 = x;
    n.kernel = k; n.stride = stride;
    n.requires_grad = node(x).requires_grad;
    Tensor y({N, C, OH, OW});
    n.argmax.resize(static_cast<size_t>(N * C * OH * OW));
    std::int64_t o = 0;
    for (std::int64_t s = 0; s < N; ++s)
        for (std::int64_t c = 0; c < C; ++c) {
            const auto plane = (s * C + c) * H * W;
            for (std::int64_t oh = 0; oh < OH; ++oh)
                for (std::int64_t ow = 0; ow < OW; ++ow, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::int64_t best_idx = -1;
                    for (std::int64_t i = 0; i < k; ++i)
                        for (std::int64_t j = 0; j < k; ++j) {
                            const auto idx = plane + (oh * stride + i) * W + (ow * stride + j);
                            if (tx[idx] > best) { best = tx[idx]; best_idx = idx; }
                        }
                    y[o] = best;
                    assert(best_idx >= 0 && best_idx <= std::numeric_limits<std::int32_t>::max());
                    n.argmax[static_cast<size_t>(o)] = static_cast<std::int32_t>(best_idx);
                }
        }
    n.value = std::move(y);
    return push(std::move(n));
}

int Tape::flatten(int x) {
    const auto& tx = node(x).value;
    if (tx.rank() < 2) {
        throw ShapeError(std::string("flatten: expected rank >= 2, got ") + shape_str(tx.shape()));
    }
    Node n;
    n.op = Op::Flatten;
    n.in0 = x;
    n.requires_grad = node(x).requires_grad;
    n.value = tx.reshaped({tx.extent(0), tx.numel() / tx.extent(0)});
    return push(std::move(n));
}

int Tape::softmax_xent(int logits, std::vector<int> labels) {
    const auto& tl = node(logits).value;
    if (tl.rank() != 2 || tl.extent(0) != static_cast<std::int64_t>(labels.size())) {
        throw ShapeError("softmax_xent: logits " + shape_str(tl.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const auto N = tl.extent(0), K = tl.extent(1);
    for (int y : labels) {
        if (y < 0 || y >= K)
            throw ShapeError("softmax_xent: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(K) + ")");
    }
    Node n;
    n.op = Op::SoftmaxXent;
    n.in0 = logits;
    n.labels = std::move(labels);
    n.requires_grad = node(logits).requires_grad;
    Tensor probs({N, K});
    double loss = 0.0;
    for (std::int64_t i = 0; i < N; ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (std::int64_t k = 0; k < K; ++k) m = std::max(m, tl[i * K + k]);
        double z = 0.0;
        for (std::int64_t k = 0; k < K; ++k) z += std::exp(tl[i * K + k] - m);
        const double logz = std::log(z);
        for (std::int64_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(tl[i * K + k] - m - logz);
        loss -= tl[i * K + n.labels[static_cast<size_t>(i)]] - m - logz;
    }
    n.saved = std::move(probs);
    n.value = Tensor::scalar(loss / static_cast<double>(N));
    return push(std::move(n));
}

int Tape::fake_quant_weights(int w, int bits, std::shared_ptr<const KeepMask> mask) {
    const auto& tw = node(w).value;
    if (mask && static_cast<std::int64_t>(mask->size()) != tw.numel()) {
        throw ShapeError("fake_quant_weights: mask size " + std::to_string(mask->size()) +
                         " vs tensor " + shape_str(tw.shape()));
    }
    Node n;
    n.op = Op::FakeQuantWeights;
    n.in0 = w;
    n.bits = bits;
    n.mask = std::move(mask);
    n.requires_grad = node(w).requires_grad;
    Tensor masked = n.mask ? apply_keep_mask(tw, *n.mask) : tw;
    if (bits >= 32) {
        n.value = std::move(masked);
        n.scalar = 0.0;
    } else {
        n.scalar = weight_quant_scale(masked, bits);
        n.value = quantize_weights(masked, bits);
    }
    return push(std::move(n));
}

int Tape::fake_quant_acts(int x, int bits, double calib_max, bool signed_grid) {
    const auto& tx = node(x).value;
    Node n;
    n.op = Op::FakeQuantActs;
    n.in0 = x;
    n.bits = bits;
    n.scalar = calib_max;
    n.signed_grid = signed_grid;
    n.requires_grad = node(x).requires_grad;
    if (bits >= 32) {
        n.value = tx;
    } else {
        n.value = signed_grid ? quantize_acts_signed(tx, bits, calib_max)
                              : quantize_acts(tx, bits, calib_max);
    }
    return push(std::move(n));
}

const Tensor& Tape::value(int id) const { return node(id).value; }

std::vector<Tensor> Tape::backward(int loss, std::span<const int> wrt) {
    if (nodes_.empty()) throw std::logic_error("backward: empty tape");
    const auto& ln = node(loss);
    if (ln.value.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.value.shape()));
    }
    std::vector<Tensor> grads(nodes_.size());
    std::vector<std::uint8_t> has(nodes_.size(), 0);
    std::vector<std::uint8_t> keep(nodes_.size(), 0);
    for (int id : wrt) keep[static_cast<size_t>(id)] = 1;
    auto grad_of = [&](int id) -> Tensor& {
        if (!has[static_cast<size_t>(id)]) {
            grads[static_cast<size_t>(id)] = Tensor(node(id).value.shape());
            has[static_cast<size_t>(id)] = 1;
        }
        return grads[static_cast<size_t>(id)];
    };
    grad_of(loss)[0] = 1.0;

    for (int id = loss; id >= 0; --id) {
        const Node& n = node(id);
        if (!has[static_cast<size_t>(id)] || !n.requires_grad || n.op == Op::Leaf) continue;
        const Tensor& g = grads[static_cast<size_t>(id)];
        switch (n.op) {
            case Op::Add: {
                if (node(n.in0).requires_grad) {
                    Tensor& d = grad_of(n.in0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
                }
                if (node(n.in1).requires_grad) {
                    Tensor& d = grad_of(n.in1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                if (node(n.in0).requires_grad) {
                    Tensor& d = grad_of(n.in0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
                }
                if (node(n.in1).requires_grad) {
                    Tensor& d = grad_of(n.in1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = node(n.in0).value;
                const Tensor& b = node(n.in1).value;
                if (node(n.in0).requires_grad) {
                    Tensor& d = grad_of(n.in0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * b[i];
                }
                if (node(n.in1).requires_grad) {
                    Tensor& d = grad_of(n.in1);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * a[i];
                }
                break;
            }
            case Op::Scale: {
                Tensor& d = grad_of(n.in0);
                for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * n.scalar;
                break;
            }
            case Op::Sum: {
                Tensor& d = grad_of(n.in0);
                for (std::int64_t i = 0; i < d.numel(); ++i) d[i] += g[0];
                break;
            }
            case Op::Relu: {
                const Tensor& x = node(n.in0).value;
                Tensor& d = grad_of(n.in0);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    if (x[i] > 0.0) d[i] += g[i];
                break;
            }
            case Op::MatMul: {
                const Tensor& x = node(n.in0).value;
                const Tensor& w = node(n.in1).value;
                const auto N = x.extent(0), in = x.extent(1), out = w.extent(1);
                ConstMap gm(g.data().data(), N, out);
                if (node(n.in0).requires_grad) {
                    MutMap(grad_of(n.in0).data().data(), N, in).noalias() +=
                        gm * ConstMap(w.data().data(), in, out).transpose();
                }
                if (node(n.in1).requires_grad) {
                    MutMap(grad_of(n.in1).data().data(), in, out).noalias() +=
                        ConstMap(x.data().data(), N, in).transpose() * gm;
                }
                break;
            }
            case Op::BiasAdd: {
                const Tensor& x = node(n.in0).value;
                if (node(n.in0).requires_grad) {
                    Tensor& d = grad_of(n.in0);
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
                }
                if (node(n.in1).requires_grad) {
                    Tensor& db = grad_of(n.in1);
                    if (x.rank() == 2) {
                        const auto N = x.extent(0), F = x.extent(1);
                        for (std::int64_t i = 0; i < N; ++i)
                            for (std::int64_t f = 0; f < F; ++f) db[f] += g[i * F + f];
                    } else {
                        const auto N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
                        for (std::int64_t i = 0; i < N; ++i)
                            for (std::int64_t c = 0; c < C; ++c) {
                                const auto base = (i * C + c) * HW;
                                double acc = 0.0;
                                for (std::int64_t p = 0; p < HW; ++p) acc += g[base + p];
                                db[c] += acc;
                            }
                    }
                }
                break;
            }
            case Op::Conv2d: {
                const Tensor& x = node(n.in0).value;
                const Tensor& w = node(n.in1).value;
                const auto N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
                const auto K = w.extent(0), kh = w.extent(2), kw = w.extent(3);
                const auto OH = (H + 2 * n.pad - kh) / n.stride + 1;
                const auto OW = (W + 2 * n.pad - kw) / n.stride + 1;
                const std::int64_t CKK = C * kh * kw, P = OH * OW;
                std::vector<double> cols(static_cast<size_t>(CKK * P));
                std::vector<double> dcols(static_cast<size_t>(CKK * P));
                ConstMap wmat(w.data().data(), K, CKK);
                const bool need_dx = node(n.in0).requires_grad;
                const bool need_dw = node(n.in1).requires_grad;
                Tensor* dx = need_dx ? &grad_of(n.in0) : nullptr;
                Tensor* dw = need_dw ? &grad_of(n.in1) : nullptr;
                for (std::int64_t s = 0; s < N; ++s) {
                    ConstMap gm(g.data().data() + s * K * P, K, P);
                    if (need_dw) {
                        im2col(x.data().data() + s * C * H * W, C, H, W, kh, kw, n.stride, n.pad,
                               OH, OW, cols.data());
                        MutMap(dw->data().data(), K, CKK).noalias() +=
                            gm * ConstMap(cols.data(), CKK, P).transpose();
                    }
                    if (need_dx) {
                        MutMap(dcols.data(), CKK, P).noalias() = wmat.transpose() * gm;
                        col2im_add(dcols.data(), C, H, W, kh, kw, n.stride, n.pad, OH, OW,
                                   dx->data().data() + s * C * H * W);
                    }
                }
                break;
            }
            case Op::MaxPool2d: {
                Tensor& d = grad_of(n.in0);
                for (std::int64_t i = 0; i < g.numel(); ++i)
                    d[n.argmax[static_cast<size_t>(i)]] += g[i];
                break;
            }
            case Op::Flatten: {
                Tensor& d = grad_of(n.in0);
                for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
                break;
            }
            case Op::SoftmaxXent: {
                const Tensor& p = n.saved;
                const auto N = p.extent(0), K = p.extent(1);
                const double go = g[0] / static_cast<double>(N);
                Tensor& d = grad_of(n.in0);
                for (std::int64_t i = 0; i < N; ++i) {
                    for (std::int64_t k = 0; k < K; ++k) d[i * K + k] += go * p[i * K + k];
                    d[i * K + n.labels[static_cast<size_t>(i)]] -= go;
                }
                break;
            }
            case Op::FakeQuantWeights: {
                const Tensor& w = node(n.in0).value;
                Tensor masked = n.mask ? apply_keep_mask(w, *n.mask) : w;
                Tensor d = ste_backward(g, masked, n.mask.get(), n.scalar, n.bits);
                Tensor& acc = grad_of(n.in0);
                for (std::int64_t i = 0; i < d.numel(); ++i) acc[i] += d[i];
                break;
            }
            case Op::FakeQuantActs: {
                const Tensor& x = node(n.in0).value;
                Tensor& d = grad_of(n.in0);
                if (n.bits >= 32) {
                    for (std::int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
                } else if (n.signed_grid) {
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        if (std::fabs(x[i]) <= n.scalar) d[i] += g[i];
                } else {
                    for (std::int64_t i = 0; i < g.numel(); ++i)
                        if (x[i] >= 0.0 && x[i] <= n.scalar) d[i] += g[i];
                }
                break;
            }
            case Op::Leaf:
                break;
        }
        // This node's gradient is no longer needed; free it eagerly so big
        // batched activations do not pile up during the sweep.
        if (id != loss && !keep[static_cast<size_t>(id)]) {
            grads[static_cast<size_t>(id)] = Tensor();
            has[static_cast<size_t>(id)] = 0;
        }
    }

    std::vector<Tensor> out;
    out.reserve(wrt.size());
    for (int id : wrt) {
        if (has[static_cast<size_t>(id)] && grads[static_cast<size_t>(id)].numel() > 0) {
            out.push_back(std::move(grads[static_cast<size_t>(id)]));
        } else {
            out.push_back(Tensor(node(id).value.shape()));
        }
    }
    nodes_.clear();
    consumed_ = true;
    return out;
}

Tensor ste_backward(const Tensor& grad_out, const Tensor& latent, const KeepMask* mask,
                    double scale, int bits) {
    if (!grad_out.same_shape(latent)) {
        throw ShapeError("ste_backward: grad " + shape_str(grad_out.shape()) + " vs latent " +
                         shape_str(latent.shape()));
    }
    Tensor d(latent.shape());
    const double qmax = signed_qmax(bits);
    const double limit = scale * qmax;
    for (std::int64_t i = 0; i < latent.numel(); ++i) {
        if (mask && !(*mask)[static_cast<size_t>(i)]) continue;
        if (bits >= 32 || std::fabs(latent[i]) <= limit) d[i] = grad_out[i];
    }
    return d;
}

Tensor fake_quant_frozen(const Tensor& t, double scale, int bits) {
    if (bits >= 32) return t;
    const double qmax = signed_qmax(bits);
    Tensor out(t.shape());
    if (scale <= 0.0) return out;
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        double q = std::round(t[i] / scale);
        q = std::min(std::max(q, -qmax), qmax);
        out[i] = q * scale;
    }
    return out;
}

}  // namespace fitpath
