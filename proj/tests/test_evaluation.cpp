#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "uld/evaluation.hpp"

using namespace uld;

namespace {

// Independent oracle: dense normal equations (X^T X + lambda I) W = X^T Y
// solved by Gaussian elimination with partial pivoting. Kept free of any
// code path shared with fit_linear_regressor.
Tensor<double> normal_equations_oracle(const Tensor<double>& pred, const Tensor<double>& gt,
                                       double lambda, bool bias) {
    const int n = pred.dim(0), k = pred.dim(1), m = gt.dim(1);
    const int p = k + (bias ? 1 : 0);
    auto X = [&](int r, int c) -> double {
        return c < k ? pred[static_cast<int64_t>(r) * k + c] : 1.0;
    };
    std::vector<std::vector<double>> a(static_cast<size_t>(p),
                                       std::vector<double>(static_cast<size_t>(p + m), 0.0));
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j < p; ++j) {
            double s = 0;
            for (int r = 0; r < n; ++r) s += X(r, i) * X(r, j);
            a[i][j] = s + (i == j ? lambda : 0.0);
        }
        for (int c = 0; c < m; ++c) {
            double s = 0;
            for (int r = 0; r < n; ++r) s += X(r, i) * gt[static_cast<int64_t>(r) * m + c];
            a[i][p + c] = s;
        }
    }
    for (int col = 0; col < p; ++col) {
        int piv = col;
        for (int r = col + 1; r < p; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        const double d = a[col][col];
        for (int c = col; c < p + m; ++c) a[col][c] /= d;
        for (int r = 0; r < p; ++r) {
            if (r == col) continue;
            const double f = a[r][col];
            for (int c = col; c < p + m; ++c) a[r][c] -= f * a[col][c];
        }
    }
    Tensor<double> w({p, m});
    for (int i = 0; i < p; ++i)
        for (int c = 0; c < m; ++c) w[static_cast<int64_t>(i) * m + c] = a[i][p + c];
    return w;
}

Tensor<double> random_matrix(int r, int c, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    Tensor<double> t({r, c});
    std::uniform_real_distribution<double> d(lo, hi);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
    return t;
}

double train_residual(const RegressorWeights& reg, const Tensor<double>& pred,
                      const Tensor<double>& gt) {
    const Tensor<double> out = apply_regressor(reg, pred);
    double s = 0;
    for (int64_t i = 0; i < out.size(); ++i) s += (out[i] - gt[i]) * (out[i] - gt[i]);
    return s;
}

}  // namespace

TEST_CASE("regressor: realizable target fits exactly with lambda = 0") {
    std::mt19937_64 rng(1);
    const Tensor<double> pred = random_matrix(40, 8, rng);
    Tensor<double> gt({40, 4});
    for (int r = 0; r < 40; ++r)
        for (int c = 0; c < 4; ++c) gt[static_cast<int64_t>(r) * 4 + c] = pred[static_cast<int64_t>(r) * 8 + c];
    RegressorOptions opt;
    opt.ridge = 0;
    const RegressorWeights reg = fit_linear_regressor(pred, gt, opt);
    CHECK(train_residual(reg, pred, gt) < 1e-18);
}

TEST_CASE("regressor equals the normal-equations oracle on well-conditioned designs") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 30 + static_cast<int>(rng() % 40);
        const int k = 4 + static_cast<int>(rng() % 8);
        const int m = 2 + static_cast<int>(rng() % 6);
        const Tensor<double> pred = random_matrix(n, k, rng);
        const Tensor<double> gt = random_matrix(n, m, rng);
        RegressorOptions opt;
        opt.ridge = 0;
        const RegressorWeights reg = fit_linear_regressor(pred, gt, opt);
        const Tensor<double> oracle = normal_equations_oracle(pred, gt, 0.0, opt.bias);
        REQUIRE(reg.w.shape() == oracle.shape());
        for (int64_t i = 0; i < oracle.size(); ++i)
            CHECK(std::abs(reg.w[i] - oracle[i]) < 1e-6);
    }
}

TEST_CASE("regressor: n=1 gives a minimal-norm exact interpolant") {
    std::mt19937_64 rng(3);
    const Tensor<double> pred = random_matrix(1, 20, rng);
    const Tensor<double> gt = random_matrix(1, 10, rng);
    const RegressorWeights reg = fit_linear_regressor(pred, gt, {});  // auto -> 1e-6 stabilizer
    CHECK(train_residual(reg, pred, gt) < 1e-8);

    RegressorOptions strict;
    strict.ridge = 0;  // exact minimal-norm route
    const RegressorWeights reg0 = fit_linear_regressor(pred, gt, strict);
    CHECK(train_residual(reg0, pred, gt) < 1e-18);
}

TEST_CASE("regressor: training residual is non-decreasing in lambda") {
    std::mt19937_64 rng(4);
    const Tensor<double> pred = random_matrix(50, 6, rng);
    const Tensor<double> gt = random_matrix(50, 4, rng);
    double prev = -1;
    for (double lam : {0.0, 1e-4, 1e-2, 1.0, 100.0}) {
        RegressorOptions opt;
        opt.ridge = lam;
        const double res = train_residual(fit_linear_regressor(pred, gt, opt), pred, gt);
        CHECK(res >= prev - 1e-12);
        prev = res;
    }
}

TEST_CASE("regressor: errors and json round trip") {
    Tensor<double> empty({0, 4});
    Tensor<double> gt({0, 2});
    CHECK_THROWS_AS(fit_linear_regressor(empty, gt, {}), InputError);

    std::mt19937_64 rng(5);
    const Tensor<double> pred = random_matrix(12, 4, rng);
    const Tensor<double> g = random_matrix(12, 2, rng);
    const RegressorWeights reg = fit_linear_regressor(pred, g, {});
    const std::string path =
        (std::filesystem::temp_directory_path() / "uld_reg_test.json").string();
    reg.save_json(path);
    const RegressorWeights back = RegressorWeights::load_json(path);
    CHECK(back.bias == reg.bias);
    for (int64_t i = 0; i < reg.w.size(); ++i)
        CHECK(back.w[i] == doctest::Approx(reg.w[i]).epsilon(1e-15));
    std::filesystem::remove(path);
}

TEST_CASE("nme: identity, exact displacement, similarity invariance, exclusions") {
    std::mt19937_64 rng(6);
    const int n = 20, m = 5;
    Tensor<double> gt({n, 2 * m});
    for (int64_t i = 0; i < gt.size(); ++i) gt[i] = std::uniform_real_distribution<double>(10, 90)(rng);

    CHECK(compute_nme(gt, gt).nme_percent == 0.0);

    // displace every point by exactly 0.05 x inter-ocular distance
    Tensor<double> pred = gt;
    for (int i = 0; i < n; ++i) {
        double* row = &gt[static_cast<int64_t>(i) * 2 * m];
        const double iod = std::hypot(row[0] - row[2], row[1] - row[3]);
        const double ang = std::uniform_real_distribution<double>(0, 6.28)(rng);
        for (int k = 0; k < m; ++k) {
            pred[static_cast<int64_t>(i) * 2 * m + 2 * k] += 0.05 * iod * std::cos(ang);
            pred[static_cast<int64_t>(i) * 2 * m + 2 * k + 1] += 0.05 * iod * std::sin(ang);
        }
    }
    CHECK(std::abs(compute_nme(pred, gt).nme_percent - 5.0) < 1e-9);

    // joint similarity transform leaves the ratio unchanged
    Tensor<double> pred_t = pred, gt_t = gt;
    const double s = 1.7, th = 0.6, txx = 11, tyy = -4;
    auto xform = [&](const Tensor<double>& src, Tensor<double>& dst, int i, int k) {
        const double x = src[(static_cast<int64_t>(i) * 2 * m) + 2 * k];
        const double y = src[(static_cast<int64_t>(i) * 2 * m) + 2 * k + 1];
        dst[(static_cast<int64_t>(i) * 2 * m) + 2 * k] =
            s * (std::cos(th) * x - std::sin(th) * y) + txx;
        dst[(static_cast<int64_t>(i) * 2 * m) + 2 * k + 1] =
            s * (std::sin(th) * x + std::cos(th) * y) + tyy;
    };
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < m; ++k) {
            xform(pred, pred_t, i, k);
            xform(gt, gt_t, i, k);
        }
    CHECK(std::abs(compute_nme(pred_t, gt_t).nme_percent -
                   compute_nme(pred, gt).nme_percent) < 1e-9);

    // zero inter-ocular distance: image excluded with a warning
    Tensor<double> gt_bad = gt;
    for (int c = 0; c < 2; ++c)
        gt_bad[static_cast<int64_t>(0) * 2 * m + 2 + c] = gt_bad[static_cast<int64_t>(0) * 2 * m + c];
    const EvalReport rep = compute_nme(pred, gt_bad);
    CHECK(rep.excluded == 1);
    CHECK(rep.per_image.size() == static_cast<size_t>(n - 1));
}

TEST_CASE("sweep: n = all equals the full fit; more supervision helps on linear data") {
    std::mt19937_64 rng(7);
    const int n_train = 300, n_test = 100, k = 6, m = 4;
    // gt is a fixed linear function of pred plus noise
    const Tensor<double> w_true = random_matrix(k, m, rng);
    auto make = [&](int rows) {
        Tensor<double> pred = random_matrix(rows, k, rng, 0, 50);
        Tensor<double> gt({rows, m});
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < m; ++c) {
                double s = 20.0;
                for (int j = 0; j < k; ++j)
                    s += pred[static_cast<int64_t>(r) * k + j] * w_true[static_cast<int64_t>(j) * m + c];
                gt[static_cast<int64_t>(r) * m + c] =
                    s + std::normal_distribution<double>(0, 0.5)(rng);
            }
        return std::pair{pred, gt};
    };
    auto [ptr, gtr] = make(n_train);
    auto [pte, gte] = make(n_test);

    const auto rows = limited_supervision_sweep(ptr, gtr, pte, gte, {1, 10, 100, n_train},
                                                {1, 2, 3}, {});
    REQUIRE(rows.size() == 4);
    // n = all: every seed picks the same full set, so std = 0 and the mean
    // equals a direct full fit
    const RegressorWeights full = fit_linear_regressor(ptr, gtr, {});
    const double full_nme = compute_nme(apply_regressor(full, pte), gte).nme_percent;
    CHECK(rows[3].std_nme == 0.0);
    CHECK(rows[3].mean_nme == doctest::Approx(full_nme).epsilon(1e-12));
    // ordering: n=100 at least as good as n=1 on average
    CHECK(rows[2].mean_nme <= rows[0].mean_nme + 1e-9);

    CHECK_THROWS_AS(
        limited_supervision_sweep(ptr, gtr, pte, gte, {n_train + 1}, {1}, {}), InputError);
}
