#include "uld/evaluation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "json.hpp"
#include "uld/common.hpp"

namespace uld {

namespace {

Eigen::MatrixXd to_eigen(const Tensor<double>& t) {
    if (t.ndim() != 2) throw InputError("expected 2-D matrix, got " + shape_str(t));
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (int r = 0; r < t.dim(0); ++r)
        for (int c = 0; c < t.dim(1); ++c) m(r, c) = t[static_cast<int64_t>(r) * t.dim(1) + c];
    return m;
}

Tensor<double> from_eigen(const Eigen::MatrixXd& m) {
    Tensor<double> t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) t[static_cast<int64_t>(r) * m.cols() + c] = m(r, c);
    return t;
}

Eigen::MatrixXd design_matrix(const Tensor<double>& pred, bool bias) {
    Eigen::MatrixXd x = to_eigen(pred);
    if (!bias) return x;
    Eigen::MatrixXd xb(x.rows(), x.cols() + 1);
    xb << x, Eigen::VectorXd::Ones(x.rows());
    return xb;
}

}  // namespace

RegressorWeights fit_linear_regressor(const Tensor<double>& pred, const Tensor<double>& gt,
                                      const RegressorOptions& opt) {
    if (pred.ndim() != 2 || gt.ndim() != 2 || pred.dim(0) != gt.dim(0))
        throw InputError("fit_linear_regressor: pred/gt row mismatch");
    const int n = pred.dim(0);
    if (n < 1) throw InputError("fit_linear_regressor: no training rows");
    if (!pred.all_finite() || !gt.all_finite())
        throw NumericError("fit_linear_regressor: non-finite inputs");

    const Eigen::MatrixXd x = design_matrix(pred, opt.bias);
    const Eigen::MatrixXd y = to_eigen(gt);
    const int p = static_cast<int>(x.cols());
    double lambda = opt.ridge;
    if (lambda < 0) lambda = (n >= p) ? 0.0 : 1e-6;

    RegressorWeights out;
    out.bias = opt.bias;
    out.ridge_used = lambda;
    if (lambda == 0.0) {
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
        if (cod.rank() < p)
            log::info("fit_linear_regressor: rank-deficient design (rank " +
                      std::to_string(cod.rank()) + " of " + std::to_string(p) +
                      "), using minimal-norm solution");
        out.w = from_eigen(cod.solve(y));
    } else {
        Eigen::MatrixXd a = x.transpose() * x;
        a.diagonal().array() += lambda;
        out.w = from_eigen(a.ldlt().solve(x.transpose() * y));
    }
    return out;
}

Tensor<double> apply_regressor(const RegressorWeights& reg, const Tensor<double>& pred) {
    const Eigen::MatrixXd x = design_matrix(pred, reg.bias);
    if (x.cols() != to_eigen(reg.w).rows())
        throw InputError("apply_regressor: feature count mismatch");
    return from_eigen(x * to_eigen(reg.w));
}

EvalReport compute_nme(const Tensor<double>& pred, const Tensor<double>& gt,
                       std::pair<int, int> interocular_pair) {
    if (pred.ndim() != 2 || gt.ndim() != 2 || !pred.same_shape(gt))
        throw InputError("compute_nme: pred/gt shape mismatch");
    if (gt.dim(1) % 2 != 0) throw InputError("compute_nme: odd coordinate count");
    const int n = gt.dim(0), m = gt.dim(1) / 2;
    const auto [li, ri] = interocular_pair;
    if (li < 0 || ri < 0 || li >= m || ri >= m || li == ri)
        throw ConfigError("compute_nme: bad inter-ocular point indices");

    EvalReport rep;
    double total = 0;
    for (int i = 0; i < n; ++i) {
        const double* pr = &pred[static_cast<int64_t>(i) * 2 * m];
        const double* gr = &gt[static_cast<int64_t>(i) * 2 * m];
        const double iod = std::hypot(gr[2 * li] - gr[2 * ri], gr[2 * li + 1] - gr[2 * ri + 1]);
        if (iod <= 0) {
            log::warn("compute_nme: zero inter-ocular distance, excluding image " +
                      std::to_string(i));
            ++rep.excluded;
            continue;
        }
        double err = 0;
        for (int k = 0; k < m; ++k)
            err += std::hypot(pr[2 * k] - gr[2 * k], pr[2 * k + 1] - gr[2 * k + 1]);
        err /= m;
        rep.per_image.push_back(err / iod);
        total += err / iod;
    }
    if (rep.per_image.empty()) throw InputError("compute_nme: no valid images");
    rep.nme_percent = 100.0 * total / static_cast<double>(rep.per_image.size());
    return rep;
}

std::vector<SweepRow> limited_supervision_sweep(const Tensor<double>& pred_train,
                                                const Tensor<double>& gt_train,
                                                const Tensor<double>& pred_test,
                                                const Tensor<double>& gt_test,
                                                const std::vector<int>& ns,
                                                const std::vector<uint64_t>& seeds,
                                                const RegressorOptions& opt,
                                                std::pair<int, int> interocular_pair) {
    const int total = pred_train.dim(0);
    const int cols_p = pred_train.dim(1), cols_g = gt_train.dim(1);
    std::vector<SweepRow> rows;
    for (int n : ns) {
        if (n < 1 || n > total)
            throw InputError("sweep: n=" + std::to_string(n) + " exceeds available rows (" +
                             std::to_string(total) + ")");
        std::vector<double> nmes;
        for (uint64_t seed : seeds) {
            std::vector<int> idx(static_cast<size_t>(total));
            std::iota(idx.begin(), idx.end(), 0);
            std::mt19937_64 rng(seed);
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(static_cast<size_t>(n));
            std::sort(idx.begin(), idx.end());  // n = total degenerates to the full fit exactly
            Tensor<double> sp({n, cols_p}), sg({n, cols_g});
            for (int i = 0; i < n; ++i) {
                for (int c = 0; c < cols_p; ++c)
                    sp[static_cast<int64_t>(i) * cols_p + c] =
                        pred_train[static_cast<int64_t>(idx[i]) * cols_p + c];
                for (int c = 0; c < cols_g; ++c)
                    sg[static_cast<int64_t>(i) * cols_g + c] =
                        gt_train[static_cast<int64_t>(idx[i]) * cols_g + c];
            }
            const RegressorWeights reg = fit_linear_regressor(sp, sg, opt);
            nmes.push_back(
                compute_nme(apply_regressor(reg, pred_test), gt_test, interocular_pair)
                    .nme_percent);
        }
        SweepRow row;
        row.n = n;
        for (double v : nmes) row.mean_nme += v;
        row.mean_nme /= static_cast<double>(nmes.size());
        if (nmes.size() > 1) {
            double ss = 0;
            for (double v : nmes) ss += (v - row.mean_nme) * (v - row.mean_nme);
            row.std_nme = std::sqrt(ss / static_cast<double>(nmes.size() - 1));
        }
        rows.push_back(row);
    }
    return rows;
}

std::pair<Tensor<double>, Tensor<double>> join_landmark_tables(const LandmarkTable& a,
                                                               const LandmarkTable& b) {
    std::map<std::string, size_t> bidx;
    for (size_t i = 0; i < b.ids.size(); ++i) bidx[b.ids[i]] = i;
    std::vector<std::pair<size_t, size_t>> pairs;
    for (size_t i = 0; i < a.ids.size(); ++i) {
        auto it = bidx.find(a.ids[i]);
        if (it != bidx.end()) pairs.emplace_back(i, it->second);
    }
    if (pairs.empty()) throw InputError("no shared image ids between landmark tables");
    const int ka = a.points_per_image(), kb = b.points_per_image();
    Tensor<double> ma({static_cast<int>(pairs.size()), 2 * ka});
    Tensor<double> mb({static_cast<int>(pairs.size()), 2 * kb});
    for (size_t r = 0; r < pairs.size(); ++r) {
        const auto& pa = a.points[pairs[r].first];
        const auto& pb = b.points[pairs[r].second];
        if (static_cast<int>(pa.size()) != ka || static_cast<int>(pb.size()) != kb)
            throw InputError("inconsistent point count for image id " + a.ids[pairs[r].first]);
        for (int k = 0; k < ka; ++k) {
            ma[(static_cast<int64_t>(r) * 2 * ka) + 2 * k] = pa[k].x;
            ma[(static_cast<int64_t>(r) * 2 * ka) + 2 * k + 1] = pa[k].y;
        }
        for (int k = 0; k < kb; ++k) {
            mb[(static_cast<int64_t>(r) * 2 * kb) + 2 * k] = pb[k].x;
            mb[(static_cast<int64_t>(r) * 2 * kb) + 2 * k + 1] = pb[k].y;
        }
    }
    return {std::move(ma), std::move(mb)};
}

Tensor<double> landmarks_to_matrix(const LandmarkTable& t) {
    const int k = t.points_per_image();
    Tensor<double> m({static_cast<int>(t.ids.size()), 2 * k});
    for (size_t r = 0; r < t.ids.size(); ++r) {
        if (static_cast<int>(t.points[r].size()) != k)
            throw InputError("inconsistent point count for image id " + t.ids[r]);
        for (int j = 0; j < k; ++j) {
            m[(static_cast<int64_t>(r) * 2 * k) + 2 * j] = t.points[r][j].x;
            m[(static_cast<int64_t>(r) * 2 * k) + 2 * j + 1] = t.points[r][j].y;
        }
    }
    return m;
}

void RegressorWeights::save_json(const std::string& path) const {
    nlohmann::json j;
    j["rows"] = w.dim(0);
    j["cols"] = w.dim(1);
    j["bias"] = bias;
    j["ridge_used"] = ridge_used;
    j["weights"] = w.vec();
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << j.dump(2) << "\n";
}

RegressorWeights RegressorWeights::load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": invalid JSON: " + e.what());
    }
    RegressorWeights out;
    out.bias = j.at("bias").get<bool>();
    out.ridge_used = j.value("ridge_used", 0.0);
    const int rows = j.at("rows").get<int>(), cols = j.at("cols").get<int>();
    std::vector<double> v = j.at("weights").get<std::vector<double>>();
    out.w = Tensor<double>({rows, cols}, std::move(v));
    return out;
}

}  // namespace uld
