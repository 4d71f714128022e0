// Adam update semantics against the textbook formulas, and the warm-up /
// cosine-annealing schedule against values worked out by hand.

#include "mmg/errors.hpp"
#include "mmg/optim.hpp"
#include "mmg/rng.hpp"
#include "mmg/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace mmg;

namespace {

// Plants a gradient on a leaf through the tape (backward of g^T p picks
// up exactly g).
void set_grad(Tensor& p, const Matrix& g) {
    p.zero_grad();
    Tensor gt = Tensor::matrix(g);
    backward(sum(p * gt));
}

} // namespace

TEST_CASE("adam fixed point at zero gradient") {
    std::vector<Tensor> params{Tensor::matrix(Matrix::Ones(2, 3) * 0.5, true)};
    const Matrix before = params[0].value();
    AdamState state;
    adam_step(params, state, 1e-3);
    adam_step(params, state, 1e-3);
    CHECK(params[0].value() == before);
    CHECK(state.step_count == 2);
}

TEST_CASE("first step moves by minus lr on a unit gradient") {
    std::vector<Tensor> params{Tensor::scalar(0.25, true)};
    set_grad(params[0], Matrix::Ones(1, 1));
    AdamState state;
    adam_step(params, state, 1e-3);
    // m-hat = v-hat = 1 at step one, so the step is lr/(1 + eps).
    CHECK(std::abs(params[0].value()(0, 0) - (0.25 - 1e-3)) < 1e-10);
}

TEST_CASE("repeated identical gradients never grow the step") {
    std::vector<Tensor> params{Tensor::scalar(0.0, true)};
    AdamState state;
    double prev = params[0].value()(0, 0);
    double prev_step = 1e9;
    for (int i = 0; i < 5; ++i) {
        set_grad(params[0], Matrix::Ones(1, 1) * 0.7);
        adam_step(params, state, 1e-3);
        const double cur = params[0].value()(0, 0);
        CHECK(std::abs(cur - prev) <= prev_step + 1e-9);
        prev_step = std::abs(cur - prev);
        prev = cur;
    }
}

TEST_CASE("moment buffers follow the update formulas") {
    Rng rng(42);
    Matrix p0(2, 2);
    p0 << 0.3, -0.1, 0.7, 0.2;
    std::vector<Tensor> params{Tensor::matrix(p0, true)};
    AdamState state;

    // Reference state tracked alongside, straight from the definitions.
    Matrix p = p0;
    Matrix m = Matrix::Zero(2, 2), v = Matrix::Zero(2, 2);
    const double lr = 3e-3;
    for (int step = 1; step <= 6; ++step) {
        Matrix g(2, 2);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) g(r, c) = rng.uniform(-1, 1);
        set_grad(params[0], g);
        adam_step(params, state, lr);

        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g.cwiseProduct(g).eval();
        const double bc1 = 1.0 - std::pow(0.9, step);
        const double bc2 = 1.0 - std::pow(0.999, step);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c)
                p(r, c) -= lr * (m(r, c) / bc1) /
                           (std::sqrt(v(r, c) / bc2) + 1e-8);

        CHECK((params[0].value() - p).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((state.first_moment[0] - m).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((state.second_moment[0] - v).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("adam rejects drifting shapes and negative rates") {
    std::vector<Tensor> params{Tensor::matrix(Matrix::Ones(2, 2), true)};
    AdamState state;
    adam_step(params, state, 1e-3);
    CHECK_THROWS_AS(adam_step(params, state, -1.0), Error);
    params[0].leaf_value().resize(3, 3);
    CHECK_THROWS_AS(adam_step(params, state, 1e-3), ShapeError);
    std::vector<Tensor> two{Tensor::scalar(0, true), Tensor::scalar(0, true)};
    CHECK_THROWS_AS(adam_step(two, state, 1e-3), ShapeError);
}

TEST_CASE("learning-rate schedule") {
    const LrSchedule s{1e-4, 5, 50};

    SUBCASE("linear warm-up values") {
        // base * (1 + e*(w-1)/w) / w for e < w.
        const double expect[5] = {0.20, 0.36, 0.52, 0.68, 0.84};
        for (int e = 0; e < 5; ++e)
            CHECK(lr_at(s, e) == doctest::Approx(expect[e] * 1e-4).epsilon(1e-12));
    }
    SUBCASE("warm-up ends exactly at the base rate") {
        CHECK(lr_at(s, 5) == 1e-4);
    }
    SUBCASE("cosine midpoint halves the base rate") {
        const LrSchedule mid{1e-4, 5, 15};
        CHECK(lr_at(mid, 10) == doctest::Approx(0.5e-4).epsilon(1e-12));
    }
    SUBCASE("final epoch is small but positive") {
        const double last = lr_at(s, 49);
        const double pi = std::acos(-1.0);
        const double expect =
            1e-4 * 0.5 * (1.0 + std::cos(pi * 44.0 / 45.0));
        CHECK(last == doctest::Approx(expect).epsilon(1e-12));
        CHECK(last > 0.0);
        CHECK(last < 1e-5);
    }
    SUBCASE("non-increasing after warm-up") {
        for (int e = 6; e < 50; ++e) CHECK(lr_at(s, e) <= lr_at(s, e - 1));
    }
    SUBCASE("out-of-range inputs are configuration errors") {
        CHECK_THROWS_AS(lr_at(s, -1), ConfigError);
        CHECK_THROWS_AS(lr_at(s, 50), ConfigError);
        CHECK_THROWS_AS(lr_at({1e-4, 50, 50}, 0), ConfigError);
        CHECK_THROWS_AS(lr_at({1e-4, -1, 50}, 0), ConfigError);
    }
    SUBCASE("a zero base rate is legal and stays zero") {
        const LrSchedule zero{0.0, 0, 3};
        for (int e = 0; e < 3; ++e) CHECK(lr_at(zero, e) == 0.0);
    }
}
