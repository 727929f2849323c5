#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace censor {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// How RBF length scales are chosen for a batch. Kernel convention everywhere:
// k(a,b) = exp(-||a-b||^2 / (2 sigma^2)); the median heuristic returns sigma as
// the median of unsquared pairwise Euclidean distances.
struct LengthScalePolicy {
    enum class Kind { fixed, median, perplexity };
    Kind kind = Kind::median;
    double sigma = 1.0;        // fixed
    double perplexity = 8.0;   // perplexity target

    static LengthScalePolicy Fixed(double sigma);
    static LengthScalePolicy Median() { return LengthScalePolicy{Kind::median, 1.0, 8.0}; }
    static LengthScalePolicy Perplexity(double target);
    std::string str() const;
};

// out[i][j] = ||A.row(i) - B.row(j)||^2, clamped at 0 against rounding.
Mat pairwise_sq_dists(const Mat& A, const Mat& B);

// Median of the T(T-1)/2 distinct-pair Euclidean distances (unsquared).
double median_heuristic(const Mat& points);

// Elementwise exp(-d2 / (2 sigma^2)).
Mat rbf_kernel(const Mat& d2, double sigma);

struct PerplexityKernel {
    Vec beta;   // per-point inverse squared length scales
    Mat ksym;   // symmetrized kernel, unit diagonal
};

// Per-point beta_i found by binary search so the neighbor distribution
// p(j|i) ~ exp(-beta_i d2_ij) has the target perplexity (tolerance 1e-5, at
// most 100 bisection steps after bracketing). Ksym_ij = exp(-d2_ij (b_i+b_j)/2).
PerplexityKernel perplexity_kernel(const Mat& points, double target);

// Binary search for a single point against a set of squared distances to its
// neighbors (zero-distance entries excluded). Used for out-of-sample queries.
double perplexity_beta(const std::vector<double>& sq_dists, double target);

// Linear-interpolation quantile: h = q*(n-1), interpolate between order stats.
double quantile(std::vector<double> values, double q);

// Solve (K + eta I) X = B for symmetric PSD K.
Mat solve_ridge(const Mat& K, double eta, const Mat& B);

struct TopEig {
    Vec values;   // descending
    Mat vectors;  // T x J, column m pairs with values[m]
};

// Top-J eigenpairs of a symmetric matrix.
TopEig sym_eig_topj(const Mat& K, int j);

}  // namespace censor
