#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <memory>

#include "fitpath/compression.hpp"
#include "fitpath/errors.hpp"
#include "fitpath/model.hpp"
#include "fitpath/tape.hpp"

using namespace fitpath;

namespace {

// Central finite differences of a scalar-valued function of one tensor.
Tensor fd_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5) {
    Tensor g(x.shape());
    Tensor xp = x;
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + eps;
        const double up = f(xp);
        xp[i] = orig - eps;
        const double dn = f(xp);
        xp[i] = orig;
        g[i] = (up - dn) / (2.0 * eps);
    }
    return g;
}

double max_rel_err(const Tensor& a, const Tensor& b) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-8});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

Tensor random_in(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng = make_rng(seed);
    return Tensor::uniform(std::move(shape), rng, lo, hi);
}

// Avoids the relu/maxpool kinks at 0 so the FD secant is valid.
Tensor random_off_kink(Shape shape, std::uint64_t seed) {
    Tensor t = random_in(std::move(shape), seed);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (std::fabs(t[i]) < 0.05) t[i] = t[i] < 0 ? t[i] - 0.1 : t[i] + 0.1;
    }
    return t;
}

// Analytic gradient of `build`'s scalar output w.r.t. its tensor argument.
Tensor analytic_grad(const std::function<int(Tape&, int)>& build, const Tensor& x) {
    Tape tape;
    const int leaf = tape.leaf(x, true);
    const int loss = build(tape, leaf);
    const int ids[] = {leaf};
    return tape.backward(loss, ids)[0];
}

void check_op_grad(const std::function<int(Tape&, int)>& build, const Tensor& x,
                   double tol = 1e-4) {
    Tensor ag = analytic_grad(build, x);
    Tensor fg = fd_grad(
        [&](const Tensor& xv) {
            Tape tape;
            const int loss = build(tape, tape.leaf(xv, false));
            return tape.value(loss)[0];
        },
        x);
    CHECK(max_rel_err(ag, fg) <= tol);
}

}  // namespace

TEST_CASE("forward op examples") {
    Tape tape;
    // relu([-1, 0, 2]) -> [0, 0, 2]
    const int r = tape.relu(tape.leaf(Tensor::vec({-1, 0, 2})));
    CHECK(tape.value(r)[0] == 0);
    CHECK(tape.value(r)[1] == 0);
    CHECK(tape.value(r)[2] == 2);

    // matmul(I2, [[3,4],[5,6]]) -> [[3,4],[5,6]]
    const int m = tape.matmul(tape.leaf(Tensor({2, 2}, {1, 0, 0, 1})),
                              tape.leaf(Tensor({2, 2}, {3, 4, 5, 6})));
    CHECK(tape.value(m)[0] == 3);
    CHECK(tape.value(m)[1] == 4);
    CHECK(tape.value(m)[2] == 5);
    CHECK(tape.value(m)[3] == 6);

    // conv2d(3x3 ones, 2x2 ones kernel, stride 1, no pad) -> 2x2 of 4
    const int c = tape.conv2d(tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0)),
                              tape.leaf(Tensor::full({1, 1, 2, 2}, 1.0)), 1, 0);
    CHECK(tape.value(c).shape() == Shape{1, 1, 2, 2});
    for (std::int64_t i = 0; i < 4; ++i) CHECK(tape.value(c)[i] == 4.0);
}

TEST_CASE("shape errors name the op and dims") {
    Tape tape;
    const int a = tape.leaf(Tensor({2, 3}));
    const int b = tape.leaf(Tensor({4, 2}));
    CHECK_THROWS_WITH_AS(tape.matmul(a, b),
                         doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_AS(tape.add(a, b), ShapeError);
    CHECK_THROWS_AS(tape.conv2d(a, b, 1, 0), ShapeError);
}

TEST_CASE("power rule: d(w^2)/dw = 2w") {
    Tape tape;
    const int w = tape.leaf(Tensor::scalar(3.0), true);
    const int loss = tape.mul(w, w);
    const int ids[] = {w};
    const Tensor g = tape.backward(loss, ids)[0];
    CHECK(g[0] == doctest::Approx(6.0));
}

TEST_CASE("masked weights receive zero gradient") {
    auto mask = std::make_shared<KeepMask>(KeepMask{1, 0, 1});
    Tape tape;
    const int w = tape.leaf(Tensor::vec({0.5, -0.7, 0.2}), true);
    const int wm = tape.fake_quant_weights(w, 32, mask);
    const int loss = tape.sum(tape.mul(wm, wm));
    const int ids[] = {w};
    const Tensor g = tape.backward(loss, ids)[0];
    CHECK(g[0] == doctest::Approx(1.0));
    CHECK(g[1] == 0.0);
    CHECK(g[2] == doctest::Approx(0.4));
}

TEST_CASE("backward requires a scalar loss and a non-empty tape") {
    Tape tape;
    CHECK_THROWS(std::ignore = tape.backward(0, {}));
    const int v = tape.leaf(Tensor::vec({1, 2}), true);
    const int ids[] = {v};
    CHECK_THROWS_AS(std::ignore = tape.backward(v, ids), ShapeError);
}

TEST_CASE("gradient check: elementwise and reduction ops") {
    const Tensor x = random_in({3, 4}, 11);
    const Tensor other = random_in({3, 4}, 12);

    check_op_grad([&](Tape& t, int v) { return t.sum(t.add(v, t.leaf(other))); }, x);
    check_op_grad([&](Tape& t, int v) { return t.sum(t.sub(t.leaf(other), v)); }, x);
    check_op_grad([&](Tape& t, int v) { return t.sum(t.mul(v, t.leaf(other))); }, x);
    check_op_grad([&](Tape& t, int v) { return t.sum(t.mul(v, v)); }, x);
    check_op_grad([&](Tape& t, int v) { return t.sum(t.scale(v, -2.5)); }, x);
    check_op_grad([&](Tape& t, int v) { return t.sum(t.relu(v)); }, random_off_kink({5, 7}, 13));
}

TEST_CASE("gradient check: matmul and bias_add") {
    const Tensor x = random_in({4, 3}, 21);
    const Tensor w = random_in({3, 5}, 22);
    const Tensor b = random_in({5}, 23);

    // w.r.t. the left operand; square so the loss is nonlinear in x
    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.bias_add(t.matmul(v, t.leaf(w)), t.leaf(b));
            return t.sum(t.mul(y, y));
        },
        x);
    // w.r.t. the weights
    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.bias_add(t.matmul(t.leaf(x), v), t.leaf(b));
            return t.sum(t.mul(y, y));
        },
        w);
    // w.r.t. the bias
    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.bias_add(t.matmul(t.leaf(x), t.leaf(w)), v);
            return t.sum(t.mul(y, y));
        },
        b);
}

TEST_CASE("gradient check: conv2d, per-channel bias, maxpool, flatten") {
    const Tensor x = random_off_kink({2, 2, 6, 6}, 31);
    const Tensor w = random_in({3, 2, 3, 3}, 32);
    const Tensor b = random_in({3}, 33);

    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.bias_add(t.conv2d(v, t.leaf(w), 1, 1), t.leaf(b));
            return t.sum(t.mul(y, y));
        },
        x);
    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.bias_add(t.conv2d(t.leaf(x), v, 2, 0), t.leaf(b));
            return t.sum(t.mul(y, y));
        },
        w);
    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.bias_add(t.conv2d(t.leaf(x), t.leaf(w), 1, 0), v);
            return t.sum(t.mul(y, y));
        },
        b);
    check_op_grad(
        [&](Tape& t, int v) {
            const int y = t.flatten(t.maxpool2d(v, 2, 2));
            return t.sum(t.mul(y, y));
        },
        x);
}

TEST_CASE("gradient check: softmax cross-entropy") {
    const Tensor logits = random_in({5, 4}, 41, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 1, 2, 3};
    check_op_grad([&](Tape& t, int v) { return t.softmax_xent(v, labels); }, logits);
}

TEST_CASE("gradient check: activation fake-quant STE inside clamp range") {
    // Within the clamp range the STE treats the rounding as identity, so the
    // gradient equals the FD secant taken across at least one grid step.
    const double calib = 1.0;
    const int bits = 3;
    Tensor x = Tensor::vec({0.11, 0.52, 0.93, 0.31});
    Tape tape;
    const int leaf = tape.leaf(x, true);
    const int q = tape.fake_quant_acts(leaf, bits, calib, false);
    const int loss = tape.sum(q);
    const int ids[] = {leaf};
    const Tensor g = tape.backward(loss, ids)[0];
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(g[i] == 1.0);

    // Outside the range the gradient is clamped to zero.
    Tensor far = Tensor::vec({1.7, -0.4});
    Tape t2;
    const int l2 = t2.leaf(far, true);
    const int q2 = t2.fake_quant_acts(l2, bits, calib, false);
    const int loss2 = t2.sum(q2);
    const int ids2[] = {l2};
    const Tensor g2 = t2.backward(loss2, ids2)[0];
    CHECK(g2[0] == 0.0);
    CHECK(g2[1] == 0.0);
}

TEST_CASE("per-sample gradients match the single-sample oracle") {
    Model model = build_mlp({6, 5, 3}, 99);
    Rng rng = make_rng(7);
    const Tensor batch = Tensor::uniform({4, 6}, rng, -1.0, 1.0);
    const std::vector<int> labels{0, 2, 1, 1};

    const auto per_sample = model.per_sample_grads(batch, labels);
    REQUIRE(per_sample.size() == 4);

    for (size_t i = 0; i < 4; ++i) {
        const auto single =
            model.loss_and_grads(slice_sample(batch, static_cast<std::int64_t>(i)),
                                 {labels[i]});
        for (const auto& [name, g] : single.grads) {
            const Tensor& got = per_sample[i].at(name);
            for (std::int64_t k = 0; k < g.numel(); ++k) {
                CHECK(std::fabs(got[k] - g[k]) <= 1e-10);
            }
        }
    }
}

TEST_CASE("mean of per-sample gradients equals the batch gradient") {
    Model model = build_mlp({6, 5, 3}, 99);
    Rng rng = make_rng(8);
    const Tensor batch = Tensor::uniform({8, 6}, rng, -1.0, 1.0);
    std::vector<int> labels;
    for (int i = 0; i < 8; ++i) labels.push_back(i % 3);

    const auto per_sample = model.per_sample_grads(batch, labels);
    const auto batched = model.loss_and_grads(batch, labels);
    for (const auto& [name, g] : batched.grads) {
        Tensor mean(g.shape());
        for (const auto& m : per_sample) {
            const Tensor& gi = m.at(name);
            for (std::int64_t k = 0; k < g.numel(); ++k) mean[k] += gi[k];
        }
        for (std::int64_t k = 0; k < g.numel(); ++k) {
            CHECK(std::fabs(mean[k] / 8.0 - g[k]) <= 1e-10);
        }
    }
}

TEST_CASE("end-to-end network gradient check against finite differences") {
    // Random small conv net; perturb one weight tensor at a time.
    Model model = build_lenet(5);
    // shrink: use the MLP for speed but with a conv layer via direct graph
    Model mlp = build_mlp({8, 6, 4}, 5);
    Rng rng = make_rng(17);
    const Tensor x = Tensor::uniform({3, 8}, rng, -1.0, 1.0);
    const std::vector<int> y{0, 3, 2};

    auto loss_with = [&](const std::string& pname, const Tensor& value) {
        Model m = mlp;
        m.set_param(pname, value);
        Tape tape;
        const int logits = m.forward(tape, x);
        return tape.value(tape.softmax_xent(logits, y))[0];
    };
    const auto analytic = mlp.loss_and_grads(x, y);
    for (const auto& pname : {"fc1.weight", "fc2.weight", "fc1.bias", "fc2.bias"}) {
        const Tensor fd = fd_grad([&](const Tensor& v) { return loss_with(pname, v); },
                                  mlp.param(pname));
        CHECK(max_rel_err(analytic.grads.at(pname), fd) <= 1e-4);
    }
}

TEST_CASE("determinism: same seed gives bit-identical forward and gradients") {
    Model a = build_mlp({6, 5, 3}, 42);
    Model b = build_mlp({6, 5, 3}, 42);
    Rng rng = make_rng(3);
    const Tensor x = Tensor::uniform({4, 6}, rng, -1.0, 1.0);
    const std::vector<int> y{0, 1, 2, 0};
    const auto ga = a.loss_and_grads(x, y);
    const auto gb = b.loss_and_grads(x, y);
    CHECK(ga.loss == gb.loss);
    for (const auto& [name, g] : ga.grads) CHECK(bit_equal(g, gb.grads.at(name)));
}
