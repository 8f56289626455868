#pragma once

// Supervised linear probe over frozen detections: ridge / minimal-norm least
// squares from 2K predicted coordinates (+bias) to 2M annotated coordinates,
// inter-ocular-normalized MSE, and the varying-supervision sweep.

#include <string>
#include <utility>
#include <vector>

#include "uld/data.hpp"
#include "uld/tensor.hpp"

namespace uld {

struct RegressorOptions {
    double ridge = -1.0;  // < 0: 0 when n >= #coeffs, else 1e-6 stabilizer
    bool bias = true;
};

struct RegressorWeights {
    Tensor<double> w;  // {p, 2M} where p = 2K (+1 with bias)
    bool bias = true;
    double ridge_used = 0.0;

    void save_json(const std::string& path) const;
    static RegressorWeights load_json(const std::string& path);
};

/// Closed-form minimizer of ||X w - gt||^2 + ridge ||w||^2 where X is pred
/// plus an optional all-ones column. ridge = 0 with a rank-deficient design
/// falls back to the minimal-norm solution (logged).
RegressorWeights fit_linear_regressor(const Tensor<double>& pred, const Tensor<double>& gt,
                                      const RegressorOptions& opt = {});

Tensor<double> apply_regressor(const RegressorWeights& reg, const Tensor<double>& pred);

struct EvalReport {
    double nme_percent = 0;
    std::vector<double> per_image;  // normalized mean error per kept image
    int n_train_used = 0;
    int excluded = 0;  // images dropped for zero inter-ocular distance
};

/// Mean point error over M points, divided per image by the distance between
/// the two designated ground-truth eye points; reported as 100 x mean.
EvalReport compute_nme(const Tensor<double>& pred, const Tensor<double>& gt,
                       std::pair<int, int> interocular_pair = {0, 1});

struct SweepRow {
    int n = 0;
    double mean_nme = 0;
    double std_nme = 0;
};

std::vector<SweepRow> limited_supervision_sweep(const Tensor<double>& pred_train,
                                                const Tensor<double>& gt_train,
                                                const Tensor<double>& pred_test,
                                                const Tensor<double>& gt_test,
                                                const std::vector<int>& ns,
                                                const std::vector<uint64_t>& seeds,
                                                const RegressorOptions& opt = {},
                                                std::pair<int, int> interocular_pair = {0, 1});

/// Row-align two landmark tables on shared image ids (first table's order);
/// returns flattened {n, 2K} matrices (x0,y0,x1,y1,...).
std::pair<Tensor<double>, Tensor<double>> join_landmark_tables(const LandmarkTable& a,
                                                               const LandmarkTable& b);

/// Flatten one table into {n, 2K}, in table order.
Tensor<double> landmarks_to_matrix(const LandmarkTable& t);

}  // namespace uld
