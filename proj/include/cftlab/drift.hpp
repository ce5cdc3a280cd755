#pragma once

#include <string>
#include <vector>

#include "cftlab/corpus.hpp"
#include "cftlab/engine.hpp"

namespace cftlab::drift {

// Dense symmetric matrix stored row-major, dim x dim.
struct SymMat {
    int dim = 0;
    std::vector<double> m;

    SymMat() = default;
    explicit SymMat(int d) : dim(d), m(static_cast<size_t>(d) * d, 0.0) {}
    double& at(int r, int c) { return m[static_cast<size_t>(r) * dim + c]; }
    double at(int r, int c) const { return m[static_cast<size_t>(r) * dim + c]; }
};

struct ActivationSummary {
    std::string model_id;
    std::string prompt_set_id;
    int n_layers = 0;
    int d = 0;
    int n_prompts = 0;
    std::vector<double> mean_activations;  // l x d, row per layer
    std::vector<SymMat> per_layer_cov;     // d x d per layer, over prompts, 1/(n-1)
};

enum class PositionPooling { mean, last_token };

ActivationSummary capture(const engine::Checkpoint& model, const corpus::Dataset& prompts,
                          PositionPooling pooling = PositionPooling::mean);

// Covariance of the l x d mean-activation matrix over its layer rows:
// center rows by the column mean, then (1/(l-1)) X^T X.
SymMat global_cov(const ActivationSummary& summary);

enum class MatrixNorm { frobenius, spectral };

struct DriftReport {
    std::string id_a, id_b;
    std::string prompt_set_id;
    double global_cov_diff = 0.0;
    std::vector<double> per_layer_diff;
};

DriftReport drift_norms(const ActivationSummary& a, const ActivationSummary& b,
                        MatrixNorm norm = MatrixNorm::frobenius);

struct ProjectedPoint {
    std::string model_id;
    int layer = 0;
    double x = 0.0, y = 0.0;
};

// Deterministic PCA of the pooled mean-activation rows onto the top two
// principal components. Sign convention: the first nonzero loading of each
// component is positive. Rank-1 input zeroes the second axis.
std::vector<ProjectedPoint> project2d(const std::vector<ActivationSummary>& summaries);

// Jacobi eigendecomposition of a symmetric matrix; eigenvalues descending,
// eigenvectors[i] is the vector for eigenvalue i.
void sym_eigen(const SymMat& a, std::vector<double>& eigenvalues,
               std::vector<std::vector<double>>& eigenvectors);

void write_drift_csv(const DriftReport& r, const std::string& path);
void write_drift_svg(const std::vector<DriftReport>& reports, const std::string& path);
void write_projection_csv(const std::vector<ProjectedPoint>& pts, const std::string& path);

}  // namespace cftlab::drift
