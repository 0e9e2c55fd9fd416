#include <doctest.h>

#include <cmath>
#include <vector>

#include "bionic/grad_check.hpp"
#include "bionic/ops.hpp"
#include "bionic/optim.hpp"
#include "bionic/rng.hpp"
#include "bionic/tensor.hpp"

using namespace bionic;

namespace {

Tensor64 rand_tensor(Shape shape, RngStream& rng, double lo = 0.1, double hi = 0.9,
                     bool requires_grad = true) {
    auto t = Tensor64::zeros(std::move(shape), requires_grad);
    for (auto& v : t.node()->value) v = rng.uniform(lo, hi);
    return t;
}

// Differentiable sum-of-entries, used to turn any op output into a scalar
// loss for gradient checks.
Tensor64 cross_entropy_free_sum(const Tensor64& t) {
    const int n = static_cast<int>(t.numel());
    auto flat = reshape(t, {1, n});
    auto w = Tensor64::full({1, n}, 1.0);
    auto b = Tensor64::zeros({1});
    return reshape(linear(flat, w, b), {1});
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the input") {
    auto x = Tensor64::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto k = Tensor64::full({1, 1, 1, 1}, 1.0);
    auto b = Tensor64::zeros({1});
    auto y = conv2d(x, k, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 3, 3});
    for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d hand convolution 2x2 all-ones kernel") {
    auto x = Tensor64::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto k = Tensor64::full({1, 1, 2, 2}, 1.0);
    auto b = Tensor64::zeros({1});
    auto y = conv2d(x, k, b, 1, 0);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(10.0));
}

TEST_CASE("conv2d output geometry and shape errors") {
    RngStream rng(1, 1);
    auto x = rand_tensor({2, 3, 7, 9}, rng);
    auto k = rand_tensor({4, 3, 3, 3}, rng);
    auto b = Tensor64::zeros({4});
    auto y = conv2d(x, k, b, 2, 1);
    CHECK(y.shape() == Shape{2, 4, (7 + 2 - 3) / 2 + 1, (9 + 2 - 3) / 2 + 1});

    auto bad_k = rand_tensor({4, 2, 3, 3}, rng);
    CHECK_THROWS_WITH_AS(conv2d(x, bad_k, b, 1, 0),
                         doctest::Contains("channels"), Error);
}

TEST_CASE("conv2d gradients match central finite differences") {
    RngStream rng(2, 1);
    auto x = rand_tensor({2, 2, 5, 5}, rng);
    auto k = rand_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    auto b = rand_tensor({3}, rng, -0.1, 0.1);
    auto fn = [&] { return cross_entropy_free_sum(conv2d(x, k, b, 2, 1)); };
    auto report = grad_check(fn, {{"input", x}, {"kernel", k}, {"bias", b}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("avg_pool2d constants, hand mean, identity window") {
    auto c = Tensor64::full({1, 1, 4, 4}, 3.25);
    auto y = avg_pool2d(c, 3, 1, 1);
    for (auto v : y.values()) CHECK(v == doctest::Approx(3.25));

    auto x = Tensor64::from({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(avg_pool2d(x, 2, 2, 0).item() == doctest::Approx(2.5));

    auto id = avg_pool2d(x, 1, 1, 0);
    for (int i = 0; i < 4; ++i) CHECK(id.data()[i] == doctest::Approx(x.data()[i]));

    CHECK_THROWS_AS(avg_pool2d(x, 5, 1, 0), Error);
}

TEST_CASE("avg_pool2d excludes padding from the divisor") {
    // Corner window at pad 1 covers only 4 real cells of a constant image.
    auto c = Tensor64::full({1, 1, 3, 3}, 2.0);
    auto y = avg_pool2d(c, 3, 1, 1);
    CHECK(y.data()[0] == doctest::Approx(2.0));  // would be 8/9*2 with pad counted
}

TEST_CASE("avg_pool2d gradient check") {
    RngStream rng(3, 1);
    auto x = rand_tensor({2, 2, 5, 5}, rng);
    auto fn = [&] { return cross_entropy_free_sum(avg_pool2d(x, 3, 2, 1)); };
    auto report = grad_check(fn, {{"input", x}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("max_pool2d picks maxima and routes ties to the first index") {
    auto x = Tensor64::from({1, 1, 2, 2}, {1, 2, 3, 4});
    CHECK(max_pool2d(x, 2, 2).item() == doctest::Approx(4.0));

    auto eq = Tensor64::full({1, 1, 2, 2}, 1.0, true);
    auto y = max_pool2d(eq, 2, 2);
    cross_entropy_free_sum(y).backward();
    auto g = eq.grad();
    CHECK(g[0] == doctest::Approx(1.0));
    CHECK(g[1] == doctest::Approx(0.0));
    CHECK(g[2] == doctest::Approx(0.0));
    CHECK(g[3] == doctest::Approx(0.0));
}

TEST_CASE("max_pool2d gradient check away from ties") {
    RngStream rng(4, 1);
    auto x = rand_tensor({2, 3, 6, 6}, rng);
    auto fn = [&] { return cross_entropy_free_sum(max_pool2d(x, 2, 2)); };
    auto report = grad_check(fn, {{"input", x}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("linear identity weight") {
    auto x = Tensor64::from({1, 3}, {4, 5, 6});
    auto w = Tensor64::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    auto b = Tensor64::zeros({3});
    auto y = linear(x, w, b);
    for (int i = 0; i < 3; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("masked linear: hand masked matmul and exact-zero gradients") {
    auto x = Tensor64::from({1, 2}, {2, 3});
    auto w = Tensor64::from({2, 2}, {1, 1, 1, 1}, true);
    auto m = Tensor64::from({2, 2}, {1, 0, 0, 1});
    auto b = Tensor64::zeros({2});
    auto y = linear(x, w, b, &m);
    CHECK(y.data()[0] == doctest::Approx(2.0));
    CHECK(y.data()[1] == doctest::Approx(3.0));

    cross_entropy_free_sum(y).backward();
    auto g = w.grad();
    CHECK(g[0] == 2.0);
    CHECK(g[1] == 0.0);  // exactly zero, not just small
    CHECK(g[2] == 0.0);
    CHECK(g[3] == 3.0);
}

TEST_CASE("masked linear: masked weight values cannot leak into the output") {
    auto x = Tensor64::from({1, 2}, {1, 1});
    auto w = Tensor64::from({1, 2}, {5, 1000}, true);
    auto m = Tensor64::from({1, 2}, {1, 0});
    auto b = Tensor64::zeros({1});
    CHECK(linear(x, w, b, &m).item() == doctest::Approx(5.0));
}

TEST_CASE("linear dim mismatch errors name the offending dims") {
    auto x = Tensor64::zeros({1, 3});
    auto w = Tensor64::zeros({2, 4});
    auto b = Tensor64::zeros({2});
    CHECK_THROWS_WITH_AS(linear(x, w, b), doctest::Contains("3"), Error);
}

TEST_CASE("linear gradient check is tight (linear map => only roundoff)") {
    RngStream rng(5, 1);
    auto x = rand_tensor({3, 4}, rng, -1.0, 1.0);
    auto w = rand_tensor({5, 4}, rng, -1.0, 1.0);
    auto b = rand_tensor({5}, rng, -1.0, 1.0);
    auto fn = [&] { return cross_entropy_free_sum(linear(x, w, b)); };
    auto report = grad_check(fn, {{"x", x}, {"w", w}, {"b", b}});
    INFO(report.summary());
    CHECK(report.ok(1e-6));
}

TEST_CASE("relu and sigmoid point values") {
    auto x = Tensor64::from({3}, {-1.0, 0.0, 2.0});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.0);
    CHECK(y.data()[2] == 2.0);
    CHECK(sigmoid(Tensor64::zeros({1})).item() == doctest::Approx(0.5));
}

TEST_CASE("softmax of all-zeros over 7 classes is uniform") {
    auto y = softmax(Tensor64::zeros({1, 7}));
    for (auto v : y.values()) CHECK(v == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("softmax rows sum to one under extreme logits") {
    auto x = Tensor64::from({2, 3}, {1000.0, 999.0, -1000.0, -5.0, 0.0, 5.0});
    auto y = softmax(x);
    for (int r = 0; r < 2; ++r) {
        double s = 0.0;
        for (int j = 0; j < 3; ++j) s += y.data()[r * 3 + j];
        CHECK(std::abs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("softmax gradient check") {
    RngStream rng(6, 1);
    auto x = rand_tensor({3, 5}, rng, -1.0, 1.0);
    auto w = rand_tensor({1, 15}, rng, -1.0, 1.0, false);
    auto b0 = Tensor64::zeros({1});
    auto fn = [&] {
        auto y = reshape(softmax(x), {1, 15});
        return reshape(linear(y, w, b0), {1});
    };
    auto report = grad_check(fn, {{"x", x}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("layer_norm hand normalization") {
    auto x = Tensor64::from({1, 3}, {1, 2, 3});
    auto g = Tensor64::full({3}, 1.0);
    auto b = Tensor64::zeros({3});
    auto y = layer_norm(x, g, b);
    CHECK(y.data()[0] == doctest::Approx(-1.2247).epsilon(1e-3));
    CHECK(y.data()[1] == doctest::Approx(0.0).epsilon(1e-3));
    CHECK(y.data()[2] == doctest::Approx(1.2247).epsilon(1e-3));
}

TEST_CASE("layer_norm maps a constant row to zeros") {
    auto x = Tensor64::full({2, 4}, 7.5);
    auto g = Tensor64::full({4}, 1.0);
    auto b = Tensor64::zeros({4});
    auto y = layer_norm(x, g, b);
    for (auto v : y.values()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("layer_norm pre-affine output is standardized per sample") {
    RngStream rng(7, 1);
    auto x = rand_tensor({4, 16}, rng, -2.0, 2.0, false);
    auto g = Tensor64::full({16}, 1.0);
    auto b = Tensor64::zeros({16});
    auto y = layer_norm(x, g, b);
    for (int r = 0; r < 4; ++r) {
        double mu = 0.0, var = 0.0;
        for (int j = 0; j < 16; ++j) mu += y.data()[r * 16 + j];
        mu /= 16.0;
        for (int j = 0; j < 16; ++j) {
            const double d = y.data()[r * 16 + j] - mu;
            var += d * d;
        }
        var /= 16.0;
        CHECK(std::abs(mu) <= 1e-5);
        CHECK(std::abs(var - 1.0) <= 1e-4);
    }
}

TEST_CASE("layer_norm gradient check") {
    RngStream rng(8, 1);
    auto x = rand_tensor({3, 6}, rng, -1.0, 1.0);
    auto g = rand_tensor({6}, rng, 0.5, 1.5);
    auto b = rand_tensor({6}, rng, -0.2, 0.2);
    auto fn = [&] { return cross_entropy_free_sum(layer_norm(x, g, b)); };
    auto report = grad_check(fn, {{"x", x}, {"gain", g}, {"bias", b}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("cross_entropy of uniform logits is ln C") {
    auto z = Tensor64::zeros({3, 7});
    std::vector<int> labels{0, 3, 6};
    std::vector<double> w(7, 1.0);
    for (double s : {0.0, 0.1, 0.5}) {
        CHECK(cross_entropy(z, labels, w, s).item() == doctest::Approx(std::log(7.0)));
    }
}

TEST_CASE("cross_entropy approaches zero for confident correct logits") {
    auto z = Tensor64::zeros({1, 7});
    z.data()[2] = 200.0;
    std::vector<int> labels{2};
    std::vector<double> w(7, 1.0);
    CHECK(cross_entropy(z, labels, w, 0.0).item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross_entropy matches a brute-force evaluation on a hand instance") {
    auto z = Tensor64::from({2, 3}, {0.2, -0.4, 1.1, -0.3, 0.9, 0.05}, true);
    std::vector<int> labels{2, 0};
    std::vector<double> cw{1.5, 0.5, 1.0};
    const double smoothing = 0.1;

    // Independent evaluation of the definition.
    double expected = 0.0, wsum = 0.0;
    for (int b = 0; b < 2; ++b) {
        double mx = -1e30;
        for (int j = 0; j < 3; ++j) mx = std::max(mx, z.data()[b * 3 + j]);
        double sum = 0.0;
        for (int j = 0; j < 3; ++j) sum += std::exp(z.data()[b * 3 + j] - mx);
        double row = 0.0;
        for (int j = 0; j < 3; ++j) {
            const double logp = z.data()[b * 3 + j] - mx - std::log(sum);
            const double t = smoothing / 3.0 + (j == labels[b] ? 1.0 - smoothing : 0.0);
            row -= t * logp;
        }
        expected += cw[static_cast<std::size_t>(labels[b])] * row;
        wsum += cw[static_cast<std::size_t>(labels[b])];
    }
    expected /= wsum;

    CHECK(cross_entropy(z, labels, cw, smoothing).item() == doctest::Approx(expected).epsilon(1e-12));

    auto fn = [&] { return cross_entropy(z, labels, cw, smoothing); };
    auto report = grad_check(fn, {{"logits", z}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
    auto z = Tensor64::zeros({1, 3});
    std::vector<double> w(3, 1.0);
    CHECK_THROWS_AS(cross_entropy(z, {3}, w, 0.0), Error);
    CHECK_THROWS_AS(cross_entropy(z, {-1}, w, 0.0), Error);
}

TEST_CASE("adam first step matches the closed form") {
    Parameter<double> p;
    p.name = "w";
    p.value = Tensor64::from({1}, {1.0}, true);
    p.value.ensure_grad();
    p.value.grad_mutable()[0] = 1.0;
    AdamConfig<double> cfg;
    cfg.lr = 6e-4;
    Adam<double> opt({&p}, cfg);
    opt.step();
    const double expected = 1.0 - 6e-4 * 1.0 / (1.0 + cfg.eps);
    CHECK(p.value.data()[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("adam with zero grad and zero weight decay leaves values unchanged") {
    Parameter<double> p;
    p.value = Tensor64::from({3}, {1.0, -2.0, 0.5}, true);
    Adam<double> opt({&p}, {});
    for (int i = 0; i < 5; ++i) opt.step();
    CHECK(p.value.data()[0] == 1.0);
    CHECK(p.value.data()[1] == -2.0);
    CHECK(p.value.data()[2] == 0.5);
}

TEST_CASE("masked entries stay exactly zero through 100 decayed adam steps") {
    RngStream rng(9, 1);
    Parameter<double> p;
    p.value = Tensor64::from({4, 4}, std::vector<double>(16, 0.3), true);
    p.mask = Tensor64::from({4, 4}, {1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1, 1});
    p.apply_mask_to_value();
    AdamConfig<double> cfg;
    cfg.weight_decay = 1e-4;
    Adam<double> opt({&p}, cfg);
    for (int it = 0; it < 100; ++it) {
        p.value.zero_grad();
        p.value.ensure_grad();
        auto g = p.value.grad_mutable();
        for (auto& v : g) v = rng.uniform(-1.0, 1.0);
        p.apply_mask_to_grad();
        opt.step();
    }
    for (int i = 0; i < 16; ++i) {
        if (p.mask.data()[i] == 0.0) CHECK(p.value.data()[i] == 0.0);
    }
}

TEST_CASE("gaussian_noise: sigma zero, statistics, determinism") {
    RngStream rng(10, bionic::streams::kNoise);
    auto z = gaussian_noise<float>({4, 4}, 0.0f, rng);
    for (auto v : z.values()) CHECK(v == 0.0f);

    RngStream rng2(10, bionic::streams::kNoise);
    auto big = gaussian_noise<float>({1000000}, 0.06f, rng2);
    double sum = 0.0, sq = 0.0;
    for (float v : big.values()) {
        sum += v;
        sq += static_cast<double>(v) * v;
    }
    const double mean = sum / 1e6;
    const double std_dev = std::sqrt(sq / 1e6 - mean * mean);
    CHECK(std_dev >= 0.0595);
    CHECK(std_dev <= 0.0605);

    RngStream a(123, 4), b(123, 4);
    auto n1 = gaussian_noise<float>({16}, 1.0f, a);
    auto n2 = gaussian_noise<float>({16}, 1.0f, b);
    for (int i = 0; i < 16; ++i) CHECK(n1.data()[i] == n2.data()[i]);
}

TEST_CASE("relu finite differences hold once inputs avoid the kink") {
    RngStream rng(11, 1);
    auto x = rand_tensor({2, 8}, rng, 0.05, 1.0);  // all strictly positive side
    for (std::int64_t i = 0; i < x.numel(); ++i) {
        if (i % 2 == 0) x.data()[i] = -x.data()[i];  // strictly negative side
    }
    auto fn = [&] { return cross_entropy_free_sum(relu(x)); };
    auto report = grad_check(fn, {{"x", x}});
    INFO(report.summary());
    CHECK(report.ok(1e-6));
}

TEST_CASE("elementwise composite gradient check (add, axpy, mul, sigmoid)") {
    RngStream rng(12, 1);
    auto a = rand_tensor({2, 5}, rng, -1.0, 1.0);
    auto b = rand_tensor({2, 5}, rng, -1.0, 1.0);
    auto fn = [&] {
        auto h = axpy(mul(sigmoid(a), b), add(a, b), -0.3);
        return cross_entropy_free_sum(h);
    };
    auto report = grad_check(fn, {{"a", a}, {"b", b}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("attention helper ops gradient check") {
    RngStream rng(13, 1);
    auto x = rand_tensor({2, 4, 3, 3}, rng, -1.0, 1.0);
    auto s = rand_tensor({2, 4}, rng, 0.1, 0.9);
    auto m = rand_tensor({2, 1, 3, 3}, rng, 0.1, 0.9);
    auto fn = [&] {
        auto y = scale_spatial(scale_channels(x, s), m);
        auto stats = channel_mean_max(y);
        auto pooled = global_avg_pool(stats);
        return cross_entropy_free_sum(pooled);
    };
    auto report = grad_check(fn, {{"x", x}, {"s", s}, {"m", m}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("scale_columns and inhibition_scale gradient check") {
    RngStream rng(14, 1);
    auto x = rand_tensor({3, 4}, rng, -1.0, 1.0);
    auto alpha = rand_tensor({1}, rng, -0.5, 0.5);
    std::vector<double> coeff{0.0, 0.4, 0.8, 1.0};
    auto fn = [&] {
        auto s = inhibition_scale(alpha, coeff);
        return cross_entropy_free_sum(scale_columns(x, s));
    };
    auto report = grad_check(fn, {{"x", x}, {"alpha", alpha}});
    INFO(report.summary());
    CHECK(report.ok(1e-4));
}

TEST_CASE("inhibition_scale values match the closed form") {
    auto alpha = Tensor64::zeros({1});  // sigmoid(0) = 0.5
    std::vector<double> coeff{0.0, 0.5, 1.0};
    auto s = inhibition_scale(alpha, coeff);
    CHECK(s.data()[0] == doctest::Approx(1.0));
    CHECK(s.data()[1] == doctest::Approx(0.75));
    CHECK(s.data()[2] == doctest::Approx(0.5));
}

TEST_CASE("eval-mode forwards build no graph under NoGradGuard") {
    auto x = Tensor64::from({1, 2}, {1.0, 2.0});
    auto w = Tensor64::from({2, 2}, {1, 0, 0, 1}, true);
    auto b = Tensor64::zeros({2});
    {
        NoGradGuard guard;
        auto y = linear(x, w, b);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.node()->parents.empty());
    }
    auto y2 = linear(x, w, b);
    CHECK(y2.requires_grad());
}

TEST_CASE("single-thread determinism: identical graphs give identical bits") {
    auto run = [] {
        RngStream rng(77, 1);
        auto x = Tensor32::zeros({4, 8});
        for (auto& v : x.node()->value) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        auto w = Tensor32::zeros({3, 8}, true);
        for (auto& v : w.node()->value) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        auto b = Tensor32::zeros({3}, true);
        std::vector<int> labels{0, 1, 2, 1};
        std::vector<float> cw(3, 1.0f);
        auto loss = cross_entropy(linear(x, w, b), labels, cw, 0.1f);
        loss.backward();
        return std::make_pair(loss.item(), std::vector<float>(w.grad().begin(), w.grad().end()));
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    CHECK(l1 == l2);
    CHECK(g1 == g2);
}
