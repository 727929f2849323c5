#pragma once

#include "censor/numerics.hpp"

#include <string>

namespace censor {

enum class ScoreKind { ssge, stein, tikhonov, nu_method };

std::string score_kind_name(ScoreKind k);
ScoreKind score_kind_from_name(const std::string& name);

struct ScoreConfig {
    ScoreKind kind = ScoreKind::stein;
    double score_reg = 1e-3;  // estimator regularization gamma
    LengthScalePolicy lengthscale = LengthScalePolicy::Median();
    int ssge_j = 0;      // 0 = keep all eigenvalues above 1e-8 * lambda_max
    int nu_iters = 100;  // cap on nu-method iterations

    void validate() const;
    std::string str() const;
};

// Fitted estimator of grad_z log q(z), evaluable at arbitrary K-dim queries.
//
// All four estimators reduce to one evaluation form
//     s(q) = k(q, Z) * coef + h_coef * h(q),
// where h(q) = (1/T) sum_j grad_{z_j} k(q, z_j) and Z are the training samples.
// Writing L for the empirical kernel operator (L f)(q) = (1/T) sum_j k(q,z_j) f(z_j),
// the score solves L s = -h; the estimators differ in how they regularize the
// inverse:
//   stein     u = (L + gamma I)^{-1} h solved at the training points
//             (equivalently -(K + T gamma I)^{-1} b on row-summed kernel
//             gradients b), evaluated off-sample through the identity
//             s(q) = -(1/gamma) (h(q) - (L u)(q)).
//   tikhonov  same normal equations; off-sample by kernel ridge regression of
//             the fitted training scores with ridge T*gamma.
//   nu_method accelerated Landweber iteration on L u = h (nu = 1), run for
//             min(nu_iters, ceil(gamma^{-1/2})) steps; iterates stay in
//             span{h} + span{k(., z_j)} so evaluation is closed-form.
//   ssge      spectral expansion in Nystrom eigenfunctions of K, truncated at
//             ssge_j (or at the 1e-8 * lambda_max threshold); collapses to
//             coef = -V diag(1/lambda^2) V^T b.
struct FittedScore {
    Mat z;             // T x K training samples
    ScoreConfig cfg;
    double sigma = 0.0;         // fixed/median policies
    Vec beta;                   // perplexity policy, per training point
    double perp_target = 0.0;   // effective perplexity target used
    Mat coef;                   // T x K kernel-expansion coefficients
    double h_coef = 0.0;        // weight on the direct h(q) term
    double max_train_norm = 0.0;

    int dim() const { return static_cast<int>(z.cols()); }
};

struct ScoreEval {
    Mat scores;                     // U x K
    int extrapolation_warnings = 0; // queries with norm > 10 * max training norm
};

FittedScore fit_score(const Mat& samples, const ScoreConfig& cfg);

ScoreEval score_at(const FittedScore& f, const Mat& queries);

// Per-sample cotangents c_i = -(1/T) s(z_i); backpropagating c_i through the
// encoder yields the entropy gradient of the latent batch.
Mat entropy_grad_cotangents(const Mat& samples, const ScoreConfig& cfg);

}  // namespace censor
