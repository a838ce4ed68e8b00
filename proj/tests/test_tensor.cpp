#include <cmath>

#include "doctest.h"
#include "nik/adam.hpp"
#include "nik/grad_check.hpp"
#include "nik/ops.hpp"
#include "nik/rng.hpp"
#include "nik/tensor.hpp"

using namespace nik;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& x : t.data()) x = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.shape() == Shape{2, 3});
    CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ContractViolation);
    CHECK_THROWS_AS(t.item(), ContractViolation);
    CHECK(Tensor::scalar(5.0).item() == 5.0);
    CHECK(t.all_finite());
    t.data()[0] = std::nan("");
    CHECK(!t.all_finite());
}

TEST_CASE("matmul identity and hand oracle") {
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor out = matmul(a, eye);
    CHECK(out.data() == std::vector<double>{1, 2, 3, 4});

    // Brute-force triple-loop oracle on a random batched case.
    Rng rng(7);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({4, 5}, rng);
    Tensor y = matmul(x, w);
    REQUIRE(y.shape() == Shape{2, 3, 5});
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j) {
                double acc = 0;
                for (int k = 0; k < 4; ++k)
                    acc += x.data()[(b * 3 + i) * 4 + k] * w.data()[k * 5 + j];
                CHECK(y.data()[(b * 3 + i) * 5 + j] == doctest::Approx(acc).epsilon(1e-12));
            }

    CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ContractViolation);
}

TEST_CASE("matmul associativity 64-bit") {
    Rng rng(21);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 6}, rng);
    Tensor c = random_tensor({6, 3}, rng);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    for (size_t i = 0; i < left.data().size(); ++i)
        CHECK(left.data()[i] ==
              doctest::Approx(right.data()[i]).epsilon(1e-10).scale(std::abs(left.data()[i]) + 1));
}

TEST_CASE("softmax symmetry and row sums") {
    Tensor x = Tensor::from_data({3}, {0, 0, 0});
    Tensor y = softmax(x, 0);
    for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Rng rng(3);
    Tensor z = random_tensor({4, 7}, rng, -5, 5);
    Tensor s = softmax(z, 1);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) sum += s.data()[r * 7 + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("mean matches direct arithmetic") {
    Tensor x = Tensor::from_data({4}, {1, 2, 3, 6});
    CHECK(mean(x).item() == doctest::Approx(3.0));
}

TEST_CASE("backward: sum gives ones, disconnected gives zero") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}).set_requires_grad(true);
    Tensor p = Tensor::from_data({2}, {5, 5}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor root = sum(x);
        tape.backward(root);
    }
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
    CHECK(p.grad() == std::vector<double>{0, 0});
}

TEST_CASE("backward: mean of squares hand-check") {
    // d/dx mean(x^2) = 2x/n; x = [1,2] -> [1, 2]
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    {
        TapeScope scope(tape);
        tape.backward(mean(square(x)));
    }
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("backward accumulates: second pass doubles gradients") {
    Tensor x = Tensor::from_data({2}, {3, -1}).set_requires_grad(true);
    Tape tape;
    Tensor root;
    {
        TapeScope scope(tape);
        root = mean(square(x));
    }
    tape.backward(root);
    const auto once = x.grad();
    tape.backward(root);
    for (size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * once[i]));
}

TEST_CASE("backward requires scalar root produced on the tape") {
    Tensor x = Tensor::from_data({2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    Tensor vec, scalar_off_tape;
    {
        TapeScope scope(tape);
        vec = square(x);
    }
    scalar_off_tape = Tensor::scalar(1.0);
    CHECK_THROWS_AS(tape.backward(vec), ContractViolation);
    CHECK_THROWS_AS(tape.backward(scalar_off_tape), ContractViolation);
}

TEST_CASE("domain validation") {
    CHECK_THROWS_AS(sqrt_(Tensor::from_data({1}, {-0.5})), ContractViolation);
    CHECK_THROWS_AS(log_(Tensor::from_data({1}, {0.0})), ContractViolation);
    CHECK_THROWS_AS(acos_(Tensor::from_data({1}, {1.5})), ContractViolation);
    CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), ContractViolation);
}

TEST_CASE("structure ops shape the data correctly") {
    Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(transpose_last(x).data() == std::vector<double>{1, 4, 2, 5, 3, 6});
    CHECK(reshape(x, {3, 2}).shape() == Shape{3, 2});
    CHECK(slice(x, 1, 1, 2).data() == std::vector<double>{2, 3, 5, 6});
    Tensor c = concat<double>({x, x}, 0);
    CHECK(c.shape() == Shape{4, 3});
    Tensor r = repeat_axis(Tensor::from_data({1, 2}, {7, 8}), 0, 3);
    CHECK(r.data() == std::vector<double>{7, 8, 7, 8, 7, 8});
    CHECK(sum_axis(x, 0).data() == std::vector<double>{5, 7, 9});
    CHECK(mean_axis(x, 1).data() == std::vector<double>{2, 5});
}

TEST_CASE("grad_check covers the whole op suite") {
    Rng rng(11);
    const double tol = 1e-4;

    auto check_unary = [&](const char* name, auto op, double lo, double hi) {
        Tensor x = random_tensor({3, 4}, rng, lo, hi);
        const double err = grad_check<double>([&] { return mean(op(x)); }, {x});
        INFO(name);
        CHECK(err < tol);
    };
    check_unary("square", [](const Tensor& t) { return square(t); }, -2, 2);
    check_unary("sqrt", [](const Tensor& t) { return sqrt_(t); }, 0.2, 3);
    check_unary("exp", [](const Tensor& t) { return exp_(t); }, -2, 2);
    check_unary("log", [](const Tensor& t) { return log_(t); }, 0.2, 3);
    check_unary("acos", [](const Tensor& t) { return acos_(t); }, -0.9, 0.9);
    check_unary("gelu", [](const Tensor& t) { return gelu(t); }, -2, 2);
    check_unary("neg", [](const Tensor& t) { return neg(t); }, -2, 2);
    check_unary("clamp", [](const Tensor& t) { return clamp(t, -0.5, 0.5); }, -2, 2);
    check_unary("add_scalar", [](const Tensor& t) { return add_scalar(t, 1.7); }, -2, 2);
    check_unary("mul_scalar", [](const Tensor& t) { return mul_scalar(t, -0.6); }, -2, 2);
    check_unary("transpose_last", [](const Tensor& t) { return transpose_last(t); }, -2, 2);
    check_unary("reshape", [](const Tensor& t) { return reshape(t, {2, 6}); }, -2, 2);
    check_unary("slice", [](const Tensor& t) { return slice(t, 1, 1, 2); }, -2, 2);
    check_unary("softmax", [](const Tensor& t) { return slice(softmax(t, 1), 1, 0, 2); }, -2, 2);
    check_unary("sum_axis", [](const Tensor& t) { return sum_axis(t, 0); }, -2, 2);
    check_unary("mean_axis", [](const Tensor& t) { return mean_axis(t, 1); }, -2, 2);
    check_unary("repeat_axis",
                [](const Tensor& t) { return repeat_axis(reshape(t, {3, 1, 4}), 1, 5); }, -2, 2);

    SUBCASE("binary ops") {
        Tensor a = random_tensor({2, 5}, rng);
        Tensor b = random_tensor({2, 5}, rng, 0.5, 2.0);
        CHECK(grad_check<double>([&] { return mean(add(a, b)); }, {a, b}) < tol);
        CHECK(grad_check<double>([&] { return mean(sub(a, b)); }, {a, b}) < tol);
        CHECK(grad_check<double>([&] { return mean(mul(a, b)); }, {a, b}) < tol);
        CHECK(grad_check<double>([&] { return mean(divide(a, b)); }, {a, b}) < tol);
        CHECK(grad_check<double>([&] { return mean(concat<double>({a, b}, 1)); }, {a, b}) < tol);
    }
    SUBCASE("matmul and linear") {
        Tensor x = random_tensor({2, 3, 4}, rng);
        Tensor w = random_tensor({4, 5}, rng);
        Tensor b = random_tensor({5}, rng);
        Tensor y = random_tensor({2, 4, 3}, rng);
        CHECK(grad_check<double>([&] { return mean(matmul(x, w)); }, {x, w}) < tol);
        CHECK(grad_check<double>([&] { return mean(matmul(x, y)); }, {x, y}) < tol);
        CHECK(grad_check<double>([&] { return mean(linear(x, w, b)); }, {x, w, b}) < tol);
        CHECK(grad_check<double>([&] { return mean(add_bias(matmul(x, w), b)); }, {b}) < tol);
    }
    SUBCASE("prefix scaling") {
        Tensor x = random_tensor({3, 4}, rng);
        Tensor s = random_tensor({3}, rng, 0.5, 2.0);
        CHECK(grad_check<double>([&] { return mean(mul_prefix(x, s)); }, {x, s}) < tol);
        CHECK(grad_check<double>([&] { return mean(div_prefix(x, s)); }, {x, s}) < tol);
    }
    SUBCASE("reductions") {
        // Exact linear gradients: with a power-of-two step and representable
        // inputs the central difference has no rounding error at all.
        const double h = 0x1.0p-20;
        Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 6});
        CHECK(grad_check<double>([&] { return sum(x); }, {x}, h) < 1e-10);
        CHECK(grad_check<double>([&] { return mean(x); }, {x}, h) < 1e-10);
        Tensor y = random_tensor({4, 3}, rng);
        CHECK(grad_check<double>([&] { return sum(y); }, {y}) < tol);
        CHECK(grad_check<double>([&] { return mean(y); }, {y}) < tol);
    }
    SUBCASE("layer_norm") {
        Tensor x = random_tensor({3, 6}, rng);
        Tensor gamma = random_tensor({6}, rng, 0.5, 1.5);
        Tensor beta = random_tensor({6}, rng);
        CHECK(grad_check<double>([&] { return mean(layer_norm(x, gamma, beta)); },
                                 {x, gamma, beta}) < tol);
    }
}

TEST_CASE("adam: zero gradient leaves parameters, first step is -lr sign") {
    Tensor p = Tensor::from_data({2}, {1.0, -2.0});
    AdamT<double> opt({p});
    p.grad();  // allocate zeros
    opt.step(0.1);
    CHECK(p.data() == std::vector<double>{1.0, -2.0});
    CHECK(opt.step_count() == 1);

    // First step with nonzero g: bias correction gives m_hat = g and
    // v_hat = g^2, so the update is -lr * sign(g) up to eps.
    Tensor q = Tensor::from_data({1}, {0.5});
    AdamT<double> opt2({q});
    q.grad()[0] = 0.37;
    opt2.step(0.01);
    CHECK(q.data()[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));

    // Same repeated gradient never grows the step size.
    Tensor r = Tensor::from_data({1}, {0.0});
    AdamT<double> opt3({r});
    r.grad()[0] = 1.0;
    opt3.step(0.01);
    const double first = std::abs(r.data()[0]);
    const double before = r.data()[0];
    r.zero_grad();
    r.grad()[0] = 1.0;
    opt3.step(0.01);
    CHECK(std::abs(r.data()[0] - before) <= first + 1e-12);
}

TEST_CASE("grad_check rejects non-scalar f") {
    Tensor x = Tensor::from_data({2}, {1, 2});
    CHECK_THROWS_AS(grad_check<double>([&] { return square(x); }, {x}), ContractViolation);
}

TEST_CASE("float precision core works end to end") {
    TensorT<float> x = TensorT<float>::from_data({2, 2}, {1, 2, 3, 4}).set_requires_grad(true);
    TapeT<float> tape;
    TensorT<float> loss;
    {
        TapeScopeT<float> scope(tape);
        loss = mean(square(x));
    }
    tape.backward(loss);
    CHECK(x.grad()[3] == doctest::Approx(2.0f));
}
