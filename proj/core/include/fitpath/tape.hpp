#ifndef FITPATH_TAPE_HPP
#define FITPATH_TAPE_HPP

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fitpath/tensor.hpp"

namespace fitpath {

// Reverse-mode autodiff over a flat tape of tensor ops. Nodes are appended
// in execution order, so the tape is already a topological order of the DAG
// and backward() is a single reverse sweep that visits each node once.
//
// A tape is confined to one execution context; distinct samples may be
// differentiated concurrently by giving each its own Tape.

enum class Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    Sum,
    Relu,
    MatMul,
    BiasAdd,
    Conv2d,
    MaxPool2d,
    Flatten,
    SoftmaxXent,
    FakeQuantWeights,
    FakeQuantActs,
};

const char* op_name(Op op);

class Tape {
public:
    int leaf(Tensor value, bool requires_grad = false);

    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int scale(int a, double c);
    int sum(int a);
    int relu(int a);
    // x:[N,in] w:[in,out] -> [N,out]
    int matmul(int x, int w);
    // x:[N,F]+[F] or x:[N,C,H,W]+[C] (per-channel)
    int bias_add(int x, int b);
    // x:[N,C,H,W] w:[K,C,kh,kw] -> [N,K,OH,OW]
    int conv2d(int x, int w, int stride, int pad);
    int maxpool2d(int x, int k, int stride);
    // [N,...] -> [N,prod]
    int flatten(int x);
    // logits:[N,K], labels in [0,K) -> scalar mean NLL
    int softmax_xent(int logits, std::vector<int> labels);

    // Symmetric max-abs fake quantizer over the masked weight tensor with
    // straight-through backward. bits >= 32 bypasses the grid but still
    // applies the mask. mask may be null (dense).
    int fake_quant_weights(int w, int bits, std::shared_ptr<const KeepMask> mask);
    // Uniform activation fake quantizer with frozen calibration scale.
    // unsigned grid for non-negative tensors, signed symmetric otherwise.
    int fake_quant_acts(int x, int bits, double calib_max, bool signed_grid);

    const Tensor& value(int id) const;
    size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }

    // Reverse sweep from a scalar loss. Returns dLoss/d(node) for every id in
    // `wrt`, in order. The tape is consumed: node storage is released and the
    // tape must not be reused afterwards.
    std::vector<Tensor> backward(int loss, std::span<const int> wrt);

private:
    struct Node {
        Op op = Op::Leaf;
        int in0 = -1, in1 = -1;
        Tensor value;
        bool requires_grad = false;
        // op-specific attributes
        int stride = 0, pad = 0, kernel = 0;
        double scalar = 0.0;              // Scale constant / quant scale
        int bits = 32;
        bool signed_grid = false;
        std::shared_ptr<const KeepMask> mask;
        std::vector<int> labels;          // SoftmaxXent
        std::vector<std::int32_t> argmax; // MaxPool2d routing
        Tensor saved;                     // SoftmaxXent probs
    };

    int push(Node n);
    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// Pure straight-through estimator for the symmetric weight quantizer with a
// given (frozen) scale: gradients pass where |latent| <= scale * qmax and the
// keep mask is set, and are zero elsewhere.
Tensor ste_backward(const Tensor& grad_out, const Tensor& latent, const KeepMask* mask,
                    double scale, int bits);

// Frozen-scale fake-quant forward used by the STE finite-difference checks:
// clamp(round(t/s), -qmax, qmax) * s.
Tensor fake_quant_frozen(const Tensor& t, double scale, int bits);

}  // namespace fitpath

#endif
