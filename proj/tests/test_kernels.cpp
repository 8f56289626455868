#include "doctest.h"

#include <random>

#include "uld/kernels.hpp"

using namespace uld;

namespace {

template <typename T>
Tensor<T> random_tensor(const std::vector<int>& shape, std::mt19937_64& rng, double lo = -1,
                        double hi = 1) {
    Tensor<T> t(shape);
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(d(rng));
    return t;
}

struct ParallelGuard {
    bool prev;
    explicit ParallelGuard(bool on) : prev(kernels::parallel_enabled()) {
        kernels::set_parallel(on);
    }
    ~ParallelGuard() { kernels::set_parallel(prev); }
};

}  // namespace

TEST_CASE("gemm matches the serial reference bitwise") {
    std::mt19937_64 rng(1);
    for (auto [m, n, k] : {std::tuple{3, 5, 4}, {16, 240, 27}, {8, 1030, 144}, {33, 77, 91}}) {
        auto a = random_tensor<double>({m, k}, rng);
        auto b = random_tensor<double>({k, n}, rng);
        Tensor<double> c_ref({m, n}), c_par({m, n});
        kernels::ref::gemm(m, n, k, a.data(), b.data(), c_ref.data(), false);
        {
            ParallelGuard g(true);
            kernels::gemm(m, n, k, a.data(), b.data(), c_par.data(), false);
        }
        for (int64_t i = 0; i < c_ref.size(); ++i) CHECK(c_ref[i] == c_par[i]);

        // serial path of the blocked kernel agrees too
        Tensor<double> c_ser({m, n});
        {
            ParallelGuard g(false);
            kernels::gemm(m, n, k, a.data(), b.data(), c_ser.data(), false);
        }
        for (int64_t i = 0; i < c_ref.size(); ++i) CHECK(c_ref[i] == c_ser[i]);
    }
}

TEST_CASE("gemm_nt and gemm_tn match transposed reference products") {
    std::mt19937_64 rng(2);
    const int M = 7, K2 = 13, N = 101;
    auto a = random_tensor<double>({M, N}, rng);
    auto b = random_tensor<double>({K2, N}, rng);
    Tensor<double> c({M, K2});
    kernels::gemm_nt(M, K2, N, a.data(), b.data(), c.data(), false);
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < K2; ++j) {
            double s = 0;
            for (int n = 0; n < N; ++n) s += a[i * N + n] * b[j * N + n];
            CHECK(c[i * K2 + j] == doctest::Approx(s).epsilon(1e-12));
        }

    auto w = random_tensor<double>({M, K2}, rng);
    Tensor<double> d({K2, N});
    kernels::gemm_tn(K2, N, M, w.data(), a.data(), d.data(), false);
    for (int i = 0; i < K2; ++i)
        for (int j = 0; j < N; ++j) {
            double s = 0;
            for (int m = 0; m < M; ++m) s += w[m * K2 + i] * a[m * N + j];
            CHECK(d[i * N + j] == doctest::Approx(s).epsilon(1e-12));
        }
}

TEST_CASE("conv2d forward equals the naive reference") {
    std::mt19937_64 rng(3);
    for (auto [stride, pad] : {std::pair{1, 1}, {2, 1}, {1, 0}}) {
        auto x = random_tensor<double>({2, 3, 9, 11}, rng);
        auto w = random_tensor<double>({4, 3, 3, 3}, rng);
        auto b = random_tensor<double>({4}, rng);
        Tensor<double> y_fast, y_ref;
        kernels::conv2d_forward(x, w, b, stride, pad, y_fast);
        kernels::ref::conv2d_naive(x, w, b, stride, pad, y_ref);
        REQUIRE(y_fast.shape() == y_ref.shape());
        for (int64_t i = 0; i < y_fast.size(); ++i)
            CHECK(y_fast[i] == doctest::Approx(y_ref[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv2d parallel output is bitwise equal to serial") {
    std::mt19937_64 rng(4);
    auto x = random_tensor<double>({3, 8, 33, 33}, rng);
    auto w = random_tensor<double>({16, 8, 3, 3}, rng);
    auto b = random_tensor<double>({16}, rng);
    Tensor<double> y_par, y_ser;
    {
        ParallelGuard g(true);
        kernels::conv2d_forward(x, w, b, 1, 1, y_par);
    }
    {
        ParallelGuard g(false);
        kernels::conv2d_forward(x, w, b, 1, 1, y_ser);
    }
    for (int64_t i = 0; i < y_par.size(); ++i) CHECK(y_par[i] == y_ser[i]);
}

TEST_CASE("conv2d backward matches finite differences on a tiny case") {
    std::mt19937_64 rng(5);
    auto x = random_tensor<double>({1, 2, 5, 5}, rng);
    auto w = random_tensor<double>({3, 2, 3, 3}, rng);
    auto b = random_tensor<double>({3}, rng);
    Tensor<double> y;
    kernels::conv2d_forward(x, w, b, 1, 1, y);
    // loss = sum(y^2)/2, so dY = y
    Tensor<double> dx(x.shape()), dw(w.shape()), db(b.shape());
    kernels::conv2d_backward(x, w, y, 1, 1, &dx, &dw, &db);

    auto loss = [&](const Tensor<double>& xx, const Tensor<double>& ww, const Tensor<double>& bb) {
        Tensor<double> yy;
        kernels::conv2d_forward(xx, ww, bb, 1, 1, yy);
        double s = 0;
        for (int64_t i = 0; i < yy.size(); ++i) s += yy[i] * yy[i];
        return 0.5 * s;
    };
    const double h = 1e-6;
    std::uniform_int_distribution<int64_t> pick_x(0, x.size() - 1), pick_w(0, w.size() - 1);
    for (int t = 0; t < 10; ++t) {
        int64_t i = pick_x(rng);
        Tensor<double> xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fd = (loss(xp, w, b) - loss(xm, w, b)) / (2 * h);
        CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-5));

        int64_t j = pick_w(rng);
        Tensor<double> wp = w, wm = w;
        wp[j] += h;
        wm[j] -= h;
        const double fdw = (loss(x, wp, b) - loss(x, wm, b)) / (2 * h);
        CHECK(dw[j] == doctest::Approx(fdw).epsilon(1e-5));
    }
}

TEST_CASE("warp kernel: parallel equals serial, reflect101 in range") {
    std::mt19937_64 rng(6);
    auto img = random_tensor<double>({3, 40, 40}, rng, 0, 1);
    const std::array<double, 6> inv{3.7, 0.93, -0.21, -2.1, 0.21, 0.93};
    Tensor<double> a, b;
    {
        ParallelGuard g(true);
        kernels::warp_affine_bilinear(img, inv, a);
    }
    kernels::ref::warp_affine_bilinear(img, inv, b);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    CHECK(kernels::reflect101(-1, 5) == 1);
    CHECK(kernels::reflect101(5, 5) == 3);
    CHECK(kernels::reflect101(8, 5) == 0);
    CHECK(kernels::reflect101(0, 1) == 0);
}

TEST_CASE("maxpool/upsample/instance-norm round shapes and basic values") {
    std::mt19937_64 rng(7);
    auto x = random_tensor<double>({2, 3, 8, 8}, rng);
    Tensor<double> y;
    std::vector<int32_t> arg;
    kernels::maxpool2x2_forward(x, y, arg);
    CHECK(y.shape() == std::vector<int>{2, 3, 4, 4});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c)
            for (int oh = 0; oh < 4; ++oh)
                for (int ow = 0; ow < 4; ++ow) {
                    double mx = -1e300;
                    for (int dh = 0; dh < 2; ++dh)
                        for (int dw = 0; dw < 2; ++dw)
                            mx = std::max(mx, x.at(n, c, 2 * oh + dh, 2 * ow + dw));
                    CHECK(y.at(n, c, oh, ow) == mx);
                }

    Tensor<double> up;
    kernels::upsample2x_forward(y, up);
    CHECK(up.shape() == std::vector<int>{2, 3, 8, 8});
    CHECK(up.at(0, 0, 3, 5) == y.at(0, 0, 1, 2));

    Tensor<double> gamma({3}), beta({3}), out, mean, inv_std;
    gamma.fill(1.0);
    kernels::instance_norm_forward(x, gamma, beta, 1e-5, out, mean, inv_std);
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double mu = 0;
            for (int h = 0; h < 8; ++h)
                for (int w = 0; w < 8; ++w) mu += out.at(n, c, h, w);
            CHECK(mu / 64.0 == doctest::Approx(0.0).epsilon(1e-10));
        }
}
