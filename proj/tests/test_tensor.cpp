#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "nanocontrol/adamw.hpp"
#include "nanocontrol/ops.hpp"
#include "nanocontrol/rng.hpp"
#include "nanocontrol/tensor.hpp"
#include "testutil.hpp"

using namespace nanocontrol;

TEST_CASE("matmul identity and projector") {
    auto I = Tensor<float>::from({2, 2}, {1, 0, 0, 1});
    auto A = Tensor<float>::from({2, 2}, {1, 2, 3, 4});
    auto y = matmul(I, A);
    for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == A.data()[i]);  // exact

    auto P = Tensor<float>::from({2, 2}, {1, 0, 0, 0});
    auto B = Tensor<float>::from({2, 2}, {5, 6, 7, 8});
    auto z = matmul(P, B);
    CHECK(z.data()[0] == 5);
    CHECK(z.data()[1] == 6);
    CHECK(z.data()[2] == 0);
    CHECK(z.data()[3] == 0);
}

TEST_CASE("matmul identity is exact on random input") {
    Rng rng(7);
    auto I = Tensor<float>::zeros({8, 8});
    for (int i = 0; i < 8; ++i) I.data()[i * 8 + i] = 1.0f;
    auto X = Tensor<float>::randn({8, 8}, rng);
    auto y = matmul(I, X);
    for (int i = 0; i < 64; ++i) CHECK(y.data()[i] == X.data()[i]);
}

TEST_CASE("matmul shape mismatch names both shapes") {
    auto a = Tensor<float>::zeros({2, 3});
    auto b = Tensor<float>::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("[4x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradients match finite differences for all transpose flags") {
    Rng rng(42);
    for (bool ta : {false, true}) {
        for (bool tb : {false, true}) {
            auto A = Tensor<double>::randn({4, 4}, rng).set_requires_grad(true);
            auto B = Tensor<double>::randn({4, 4}, rng).set_requires_grad(true);
            auto loss_fn = [&]() { return sum_all(matmul(A, B, ta, tb)); };
            double worst = testutil::fd_worst_rel_err({A, B}, loss_fn);
            CAPTURE(ta);
            CAPTURE(tb);
            CHECK(worst < 1e-6);
        }
    }
}

TEST_CASE("softmax rows: uniform, saturation, closed form") {
    auto u = softmax_rows(Tensor<float>::from({1, 4}, {0, 0, 0, 0}));
    for (int i = 0; i < 4; ++i) CHECK(u.data()[i] == doctest::Approx(0.25).epsilon(1e-6));

    auto s = softmax_rows(Tensor<float>::from({1, 2}, {1000.0f, 0.0f}));
    CHECK(s.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(s.data()[1] == doctest::Approx(0.0).epsilon(1e-6));

    auto c = softmax_rows(Tensor<double>::from({1, 2}, {std::log(2.0), 0.0}));
    CHECK(c.data()[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(c.data()[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("softmax rows sum to one with entries in [0,1]") {
    Rng rng(3);
    auto x = Tensor<float>::randn({16, 9}, rng, 5.0f);
    auto y = softmax_rows(x);
    for (int i = 0; i < 16; ++i) {
        float s = 0;
        for (int j = 0; j < 9; ++j) {
            float v = y.data()[i * 9 + j];
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            s += v;
        }
        CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
    }
}

TEST_CASE("softmax backward matches finite differences") {
    Rng rng(11);
    auto x = Tensor<double>::randn({3, 5}, rng).set_requires_grad(true);
    auto w = Tensor<double>::randn({3, 5}, rng);
    auto loss_fn = [&]() { return sum_all(mul(softmax_rows(x), w)); };
    CHECK(testutil::fd_worst_rel_err({x}, loss_fn) < 1e-6);
}

TEST_CASE("layer_norm handles constant rows and fixed points") {
    auto gamma = Tensor<float>::full({4}, 1.0f);
    auto beta = Tensor<float>::zeros({4});
    auto c = layer_norm(Tensor<float>::full({1, 4}, 3.0f), gamma, beta);
    for (int i = 0; i < 4; ++i) CHECK(c.data()[i] == doctest::Approx(0.0f));

    auto g2 = Tensor<float>::full({2}, 1.0f);
    auto b2 = Tensor<float>::zeros({2});
    auto fp = layer_norm(Tensor<float>::from({1, 2}, {1.0f, -1.0f}), g2, b2);
    CHECK(fp.data()[0] == doctest::Approx(1.0f).epsilon(1e-4));
    CHECK(fp.data()[1] == doctest::Approx(-1.0f).epsilon(1e-4));
}

TEST_CASE("layer_norm output statistics") {
    Rng rng(5);
    auto x = Tensor<double>::randn({1, 64}, rng, 3.0);
    auto gamma = Tensor<double>::full({64}, 1.0);
    auto beta = Tensor<double>::zeros({64});
    auto y = layer_norm(x, gamma, beta);
    double mu = 0, var = 0;
    for (int j = 0; j < 64; ++j) mu += y.data()[j];
    mu /= 64;
    for (int j = 0; j < 64; ++j) var += (y.data()[j] - mu) * (y.data()[j] - mu);
    var /= 64;
    CHECK(std::fabs(mu) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-4);
}

TEST_CASE("layer_norm rejects empty last dim") {
    auto x = Tensor<float>::zeros({3, 0});
    CHECK_THROWS_AS((void)layer_norm(x), ShapeError);
}

TEST_CASE("layer_norm backward matches finite differences") {
    Rng rng(13);
    auto x = Tensor<double>::randn({3, 6}, rng).set_requires_grad(true);
    auto gamma = Tensor<double>::randn({6}, rng, 0.5).set_requires_grad(true);
    auto beta = Tensor<double>::randn({6}, rng, 0.5).set_requires_grad(true);
    auto w = Tensor<double>::randn({3, 6}, rng);
    auto loss_fn = [&]() { return sum_all(mul(layer_norm(x, gamma, beta), w)); };
    CHECK(testutil::fd_worst_rel_err({x, gamma, beta}, loss_fn) < 1e-5);
}

TEST_CASE("elementwise, broadcast and slicing backward match finite differences") {
    Rng rng(17);
    auto x = Tensor<double>::randn({4, 6}, rng).set_requires_grad(true);
    auto v = Tensor<double>::randn({6}, rng).set_requires_grad(true);
    auto w = Tensor<double>::randn({4, 3}, rng);
    auto loss_fn = [&]() {
        auto h = add_rowvec(mul_rowvec(silu(x), v), v);
        auto g = gelu(slice_cols(h, 1, 4));
        return sum_all(mul(g, w));
    };
    CHECK(testutil::fd_worst_rel_err({x, v}, loss_fn) < 1e-6);
}

TEST_CASE("concat and slice backward match finite differences") {
    Rng rng(19);
    auto a = Tensor<double>::randn({2, 4}, rng).set_requires_grad(true);
    auto b = Tensor<double>::randn({3, 4}, rng).set_requires_grad(true);
    auto w = Tensor<double>::randn({2, 8}, rng);
    auto loss_fn = [&]() {
        auto c = concat_rows(a, b);                  // [5x4]
        auto s = slice_rows(c, 1, 3);                // [2x4]
        auto cc = concat_cols<double>({s, scale(s, 2.0)});  // [2x8]
        return sum_all(mul(cc, w));
    };
    CHECK(testutil::fd_worst_rel_err({a, b}, loss_fn) < 1e-6);
}

TEST_CASE("backward: sum gives ones, half square gives identity") {
    auto p = Tensor<float>::from({2, 2}, {1, -2, 3, 0.5f}).set_requires_grad(true);
    {
        Tape<float> tape;
        auto loss = sum_all(p);
        tape.backward(loss);
    }
    for (int i = 0; i < 4; ++i) CHECK(p.grad_data()[i] == 1.0f);

    p.zero_grad();
    {
        Tape<float> tape;
        auto loss = scale(sum_all(mul(p, p)), 0.5f);
        tape.backward(loss);
    }
    for (int i = 0; i < 4; ++i) CHECK(p.grad_data()[i] == p.data()[i]);
}

TEST_CASE("backward rejects non-scalar loss") {
    auto p = Tensor<float>::from({2}, {1, 2}).set_requires_grad(true);
    Tape<float> tape;
    auto y = mul(p, p);
    CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("gradients accumulate across two backward passes") {
    auto p = Tensor<float>::from({2}, {1, 2}).set_requires_grad(true);
    for (int it = 0; it < 2; ++it) {
        Tape<float> tape;
        tape.backward(sum_all(p));
    }
    CHECK(p.grad_data()[0] == 2.0f);
    CHECK(p.grad_data()[1] == 2.0f);
}

TEST_CASE("non-finite results surface as NumericsError") {
    auto a = Tensor<float>::full({1, 1}, 1e30f);
    auto b = Tensor<float>::full({1, 1}, 1e30f);
    CHECK_THROWS_AS((void)mul(a, b), NumericsError);
}

TEST_CASE("adamw: zero gradient and zero decay leave parameters unchanged") {
    auto p = Tensor<float>::from({3}, {1, 2, 3}).set_requires_grad(true);
    AdamW<float>::Hyper h;
    h.weight_decay = 0;
    AdamW<float> opt({{"p", p}}, h);
    opt.zero_grad();
    opt.step();
    CHECK(p.data()[0] == 1.0f);
    CHECK(p.data()[1] == 2.0f);
    CHECK(p.data()[2] == 3.0f);
}

TEST_CASE("adamw: first bias-corrected step moves by about lr") {
    auto p = Tensor<double>::from({1}, {1.0}).set_requires_grad(true);
    AdamW<double>::Hyper h;
    h.lr = 0.1;
    h.weight_decay = 0;
    AdamW<double> opt({{"p", p}}, h);
    p.impl()->ensure_grad();
    p.grad_data()[0] = 1.0;
    opt.step();
    CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("adamw: decay-only path shrinks by (1 - lr*wd) per step") {
    auto p = Tensor<double>::from({1}, {2.0}).set_requires_grad(true);
    AdamW<double>::Hyper h;
    h.lr = 1e-4;
    h.weight_decay = 0.01;
    AdamW<double> opt({{"p", p}}, h);
    double expect = 2.0;
    for (int i = 0; i < 3; ++i) {
        opt.zero_grad();
        opt.step();
        expect *= 1.0 - h.lr * h.weight_decay;
        CHECK(p.data()[0] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("adamw: missing gradient names the parameter") {
    auto p = Tensor<float>::from({1}, {1.0f}).set_requires_grad(true);
    AdamW<float> opt({{"weights.q", p}}, {});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("weights.q"), ContractError);
}

TEST_CASE("rng is deterministic and splits are stable") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    Rng c = Rng(42).split(1), d = Rng(42).split(2);
    CHECK(c.next_u64() != d.next_u64());
    // Box-Muller draws are reproducible bit for bit.
    Rng e(7), f(7);
    for (int i = 0; i < 10; ++i) CHECK(e.normal() == f.normal());
}

TEST_CASE("tape scoping: no tape means no recording") {
    auto p = Tensor<float>::from({2}, {1, 2}).set_requires_grad(true);
    auto y = mul(p, p);
    CHECK_FALSE(y.requires_grad());
}
