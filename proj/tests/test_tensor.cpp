#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <map>

#include "edgi/gradcheck.hpp"
#include "edgi/tensor.hpp"

using namespace edgi;

using Tf = Tensor<float>;
using Td = Tensor<double>;

namespace {

// Naive same-length convolution oracle, independent of the im2col path.
std::vector<double> conv_oracle(const std::vector<double>& x, Dim c_in, Dim t,
                                const std::vector<double>& k, Dim c_out, Dim kk, bool circular) {
    std::vector<double> out(static_cast<size_t>(c_out * t), 0.0);
    Dim half = (kk - 1) / 2;
    for (Dim co = 0; co < c_out; ++co)
        for (Dim to = 0; to < t; ++to) {
            double acc = 0.0;
            for (Dim ci = 0; ci < c_in; ++ci)
                for (Dim kj = 0; kj < kk; ++kj) {
                    Dim ti = to + kj - half;
                    double xv;
                    if (circular)
                        xv = x[static_cast<size_t>(ci * t + ((ti % t) + t) % t)];
                    else
                        xv = (ti >= 0 && ti < t) ? x[static_cast<size_t>(ci * t + ti)] : 0.0;
                    acc += k[static_cast<size_t>((co * c_in + ci) * kk + kj)] * xv;
                }
            out[static_cast<size_t>(co * t + to)] = acc;
        }
    return out;
}

}  // namespace

TEST_CASE("add produces elementwise sums") {
    auto a = Tf::from({2}, {1.0f, 2.0f});
    auto b = Tf::from({2}, {3.0f, 4.0f});
    auto c = add(a, b);
    CHECK(c.value()[0] == 4.0f);
    CHECK(c.value()[1] == 6.0f);
}

TEST_CASE("softmax over a single-element axis yields 1") {
    auto a = Tf::from({3, 1}, {0.3f, -2.0f, 7.0f});
    auto s = softmax(a, 1);
    for (float v : s.value()) CHECK(v == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("matmul with the 2x2 identity is the identity map") {
    auto eye = Tf::from({2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
    Rng rng(7);
    auto x = Tf::randn({2, 5}, rng);
    auto y = matmul(eye, x);
    for (size_t i = 0; i < x.value().size(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("matmul matches a naive triple loop on batched shapes") {
    Rng rng(11);
    auto a = Td::randn({3, 4, 6}, rng);
    auto b = Td::randn({3, 6, 2}, rng);
    auto c = matmul(a, b);
    for (Dim bi = 0; bi < 3; ++bi)
        for (Dim i = 0; i < 4; ++i)
            for (Dim j = 0; j < 2; ++j) {
                double acc = 0.0;
                for (Dim k = 0; k < 6; ++k)
                    acc += a.value()[static_cast<size_t>((bi * 4 + i) * 6 + k)] *
                           b.value()[static_cast<size_t>((bi * 6 + k) * 2 + j)];
                CHECK(c.value()[static_cast<size_t>((bi * 4 + i) * 2 + j)] ==
                      doctest::Approx(acc).epsilon(1e-12));
            }
}

TEST_CASE("matmul rejects mismatched inner extents") {
    auto a = Tf::zeros({2, 3});
    auto b = Tf::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
}

TEST_CASE("broadcast add rejects incompatible shapes with both named") {
    auto a = Tf::zeros({2, 3});
    auto b = Tf::zeros({4});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
}

TEST_CASE("conv1d with a centered delta kernel is the identity") {
    Rng rng(3);
    auto x = Tf::randn({1, 7}, rng);
    auto k = Tf::from({1, 1, 3}, {0.0f, 1.0f, 0.0f});
    auto y = conv1d(x, k);
    for (size_t i = 0; i < x.value().size(); ++i) CHECK(y.value()[i] == x.value()[i]);
}

TEST_CASE("conv1d ones kernel over ones input matches the naive oracle") {
    auto x = Td::from({1, 5}, {1, 1, 1, 1, 1});
    auto k = Td::from({1, 1, 3}, {1, 1, 1});
    auto y = conv1d(x, k, PadMode::kZero);
    auto expect = conv_oracle(x.value(), 1, 5, k.value(), 1, 3, false);
    std::vector<double> frozen{2, 3, 3, 3, 2};
    for (size_t i = 0; i < 5; ++i) {
        CHECK(y.value()[i] == doctest::Approx(expect[i]).epsilon(1e-14));
        CHECK(y.value()[i] == doctest::Approx(frozen[i]).epsilon(1e-14));
    }
}

TEST_CASE("conv1d random shapes match the naive oracle at both paddings") {
    Rng rng(21);
    for (bool circular : {false, true}) {
        auto x = Td::randn({3, 9}, rng);
        auto k = Td::randn({2, 3, 5}, rng);
        auto y = conv1d(x, k, circular ? PadMode::kCircular : PadMode::kZero);
        auto expect = conv_oracle(x.value(), 3, 9, k.value(), 2, 5, circular);
        for (size_t i = 0; i < expect.size(); ++i)
            CHECK(y.value()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv1d circular padding commutes with cyclic shifts bit-exactly") {
    Rng rng(5);
    Dim t = 8;
    auto x = Tf::randn({2, t}, rng);
    auto k = Tf::randn({2, 2, 5}, rng);
    auto y = conv1d(x, k, PadMode::kCircular);
    // shift input by one step
    std::vector<float> xs(x.value().size());
    for (Dim c = 0; c < 2; ++c)
        for (Dim i = 0; i < t; ++i)
            xs[static_cast<size_t>(c * t + (i + 1) % t)] = x.value()[static_cast<size_t>(c * t + i)];
    auto y2 = conv1d(Tf::from({2, t}, xs), k, PadMode::kCircular);
    for (Dim c = 0; c < 2; ++c)
        for (Dim i = 0; i < t; ++i)
            CHECK(y2.value()[static_cast<size_t>(c * t + (i + 1) % t)] ==
                  y.value()[static_cast<size_t>(c * t + i)]);
}

TEST_CASE("conv1d rejects even kernels") {
    auto x = Tf::zeros({1, 6});
    auto k = Tf::zeros({1, 1, 4});
    CHECK_THROWS_AS(conv1d(x, k), std::invalid_argument);
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    auto x = Td::from({1}, {3.0}, true);
    auto loss = mul(x, x);
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("backward of a constant function gives zero gradients") {
    auto x = Td::from({4}, {1, 2, 3, 4}, true);
    auto loss = sum_all(scale(x, 0.0));
    backward(loss);
    for (double g : x.grad()) CHECK(g == 0.0);
}

TEST_CASE("backward rejects non-scalar losses") {
    auto x = Td::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(add(x, x)), std::invalid_argument);
}

TEST_CASE("broadcast backward reduces over broadcast axes") {
    auto a = Td::from({2, 2}, {1, 2, 3, 4}, true);
    auto b = Td::from({2}, {10, 20}, true);
    auto loss = sum_all(mul(a, b));
    backward(loss);
    CHECK(a.grad()[0] == 10.0);
    CHECK(a.grad()[1] == 20.0);
    CHECK(a.grad()[2] == 10.0);
    CHECK(a.grad()[3] == 20.0);
    CHECK(b.grad()[0] == doctest::Approx(4.0));   // 1 + 3
    CHECK(b.grad()[1] == doctest::Approx(6.0));   // 2 + 4
}

TEST_CASE("two-layer MLP gradients match central differences at 64-bit") {
    Rng rng(99);
    auto x = Td::randn({4, 3}, rng);
    auto w1 = Td::randn({3, 8}, rng, 0.5, true);
    auto w2 = Td::randn({8, 2}, rng, 0.5, true);
    auto b1 = Td::randn({8}, rng, 0.1, true);
    auto target = Td::randn({4, 2}, rng);
    auto f = [&]() {
        auto h = relu(add(matmul(x, w1), b1));
        auto y = matmul(h, w2);
        return mean_all(square(sub(y, target)));
    };
    double err = finite_difference_check<double>(f, {w1, w2, b1}, 1e-5);
    CHECK(err <= 1e-6);
}

TEST_CASE("quadratic form passes the finite-difference check to 1e-8") {
    Rng rng(17);
    auto x = Td::randn({5}, rng, 1.0, true);
    auto f = [&]() { return sum_all(square(x)); };
    CHECK(finite_difference_check<double>(f, {x}, 1e-5) <= 1e-8);
}

TEST_CASE("a corrupted gradient is flagged with relative error near 1/3") {
    Rng rng(23);
    auto x = Td::randn({4}, rng, 1.0, true);
    auto f = [&]() { return sum_all(square(x)); };
    auto loss = f();
    backward(loss);
    std::vector<std::vector<double>> corrupted{x.grad()};
    for (auto& g : corrupted[0]) g *= 2.0;
    double err = fd_error_against<double>(f, {x}, corrupted, 1e-5);
    CHECK(err == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
}

TEST_CASE("every differentiable op passes finite-difference checks on random shapes") {
    Rng rng(1234);
    // unary and reduction ops over a shared random input
    auto x = Td::randn({3, 4, 5}, rng, 1.0, true);
    auto positive = Td::from({6}, {0.5, 1.1, 2.0, 0.2, 3.3, 0.9}, true);
    auto ones = Td::full({6}, 1.0);
    // fixed weights per case so f stays deterministic across FD evaluations
    auto make_case = [&rng](std::function<Tensor<double>()> op) {
        auto w = Td::randn(op().shape(), rng);
        return std::function<Tensor<double>()>([op, w]() { return sum_all(mul(op(), w)); });
    };
    std::vector<std::pair<const char*, std::function<Tensor<double>()>>> cases;
    cases.emplace_back("relu", make_case([&] { return relu(x); }));
    cases.emplace_back("mish", make_case([&] { return mish(x); }));
    cases.emplace_back("sqrt", make_case([&] { return sqrt_op(positive); }));
    cases.emplace_back("softmax", make_case([&] { return softmax(x, 1); }));
    cases.emplace_back("sum", make_case([&] { return sum(x, 2); }));
    cases.emplace_back("mean", make_case([&] { return mean(x, 0); }));
    cases.emplace_back("max", make_case([&] { return max_reduce(x, 1); }));
    cases.emplace_back("min", make_case([&] { return min_reduce(x, 1); }));
    cases.emplace_back("mean_all", [&] { return mean_all(mul(x, x)); });
    cases.emplace_back("reshape", make_case([&] { return reshape(x, {4, 15}); }));
    cases.emplace_back("permute", make_case([&] { return permute(x, {2, 0, 1}); }));
    cases.emplace_back("slice", make_case([&] { return slice(x, 1, 1, 2); }));
    cases.emplace_back("concat", make_case([&] { return concat<double>({x, x}, 2); }));
    cases.emplace_back("upsample", make_case([&] { return upsample_last(x, 2); }));
    cases.emplace_back("div", make_case([&] { return div(ones, positive); }));
    for (auto& [name, f] : cases) {
        INFO("op: " << name);
        CHECK(finite_difference_check<double>(f, {x, positive}, 1e-5, 40) <= 1e-6);
    }
}

TEST_CASE("matmul conv and triu gradients pass finite differences") {
    Rng rng(555);
    auto a = Td::randn({2, 3, 4}, rng, 1.0, true);
    auto b = Td::randn({2, 4, 3}, rng, 1.0, true);
    auto w = Td::randn({4, 3}, rng, 1.0, true);
    auto kx = Td::randn({2, 6}, rng, 1.0, true);
    auto kw = Td::randn({3, 2, 5}, rng, 0.5, true);
    Rng wrng(556);
    // fixed weights per output shape so every loss stays deterministic
    std::map<std::string, Tensor<double>> weights;
    auto weighted = [&](Tensor<double> t) {
        auto key = shape_str(t.shape());
        auto it = weights.find(key);
        if (it == weights.end()) it = weights.emplace(key, Td::randn(t.shape(), wrng)).first;
        return sum_all(mul(t, it->second));
    };
    auto f_mm = [&]() { return weighted(matmul(a, b)); };
    CHECK(finite_difference_check<double>(f_mm, {a, b}, 1e-5) <= 1e-6);
    auto f_shared = [&]() { return weighted(matmul(a, w)); };
    CHECK(finite_difference_check<double>(f_shared, {a, w}, 1e-5) <= 1e-6);
    auto f_conv = [&]() { return weighted(conv1d(kx, kw, PadMode::kZero)); };
    CHECK(finite_difference_check<double>(f_conv, {kx, kw}, 1e-5) <= 1e-6);
    auto f_conv_c = [&]() { return weighted(conv1d(kx, kw, PadMode::kCircular)); };
    CHECK(finite_difference_check<double>(f_conv_c, {kx, kw}, 1e-5) <= 1e-6);
    auto f_strided = [&]() {
        return weighted(conv1d_strided(kx, Td::from({1, 2, 4}, std::vector<double>(8, 0.3), false),
                                       2, 1, PadMode::kZero));
    };
    CHECK(finite_difference_check<double>(f_strided, {kx}, 1e-5) <= 1e-6);
    auto g = Td::randn({2, 4, 4}, rng, 1.0, true);
    auto f_triu = [&]() { return weighted(triu_vec(g)); };
    CHECK(finite_difference_check<double>(f_triu, {g}, 1e-5) <= 1e-6);
}

TEST_CASE("strided downsampling halves the time axis") {
    Rng rng(8);
    auto x = Tf::randn({3, 2, 8}, rng);
    auto k = Tf::randn({5, 2, 4}, rng);
    auto y = conv1d_strided(x, k, 2, 1, PadMode::kZero);
    CHECK(y.shape() == Shape{3, 5, 4});
}

TEST_CASE("graph evaluation is deterministic for identical seeds") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto x = Tf::randn({4, 6}, rng, 1.0, true);
        auto w = Tf::randn({6, 6}, rng, 0.3, true);
        auto y = mean_all(square(matmul(mish(x), w)));
        backward(y);
        std::vector<float> out = y.value();
        out.insert(out.end(), w.grad().begin(), w.grad().end());
        return out;
    };
    auto r1 = run(42);
    auto r2 = run(42);
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(float)) == 0);
}

TEST_CASE("leaf invariants hold") {
    auto x = Tf::leaf({2, 3}, true);
    CHECK(x.node()->is_leaf());
    CHECK(x.numel() == 6);
    auto y = add(x, x);
    CHECK(!y.node()->is_leaf());
    backward(sum_all(y));
    CHECK(x.grad().size() == 6);
}
