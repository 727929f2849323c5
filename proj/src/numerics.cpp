#include "censor/numerics.hpp"

#include "censor/error.hpp"

#include <algorithm>
#include <cmath>

namespace censor {

LengthScalePolicy LengthScalePolicy::Fixed(double sigma) {
    if (!(sigma > 0.0)) throw ConfigError("fixed length scale must be positive");
    return LengthScalePolicy{Kind::fixed, sigma, 8.0};
}

LengthScalePolicy LengthScalePolicy::Perplexity(double target) {
    // target <= 0 selects the automatic batch-adaptive target (half the batch).
    if (target > 0.0 && !(target > 1.0)) throw ConfigError("perplexity target must exceed 1");
    return LengthScalePolicy{Kind::perplexity, 1.0, target};
}

std::string LengthScalePolicy::str() const {
    switch (kind) {
        case Kind::fixed: return "fixed(" + std::to_string(sigma) + ")";
        case Kind::median: return "median";
        case Kind::perplexity:
            return perplexity > 0.0 ? "perplexity(" + std::to_string(perplexity) + ")"
                                    : "perplexity(auto)";
    }
    return "?";
}

Mat pairwise_sq_dists(const Mat& A, const Mat& B) {
    if (A.cols() != B.cols()) throw NumericError("pairwise_sq_dists: dimension mismatch");
    const Vec a2 = A.rowwise().squaredNorm();
    const Vec b2 = B.rowwise().squaredNorm();
    Mat d2 = (-2.0 * A * B.transpose());
    d2.colwise() += a2;
    d2.rowwise() += b2.transpose();
    return d2.cwiseMax(0.0);
}

double median_heuristic(const Mat& points) {
    const Eigen::Index t = points.rows();
    if (t < 2) throw NumericError("median_heuristic: need at least 2 points");
    std::vector<double> dists;
    dists.reserve(static_cast<std::size_t>(t) * (t - 1) / 2);
    for (Eigen::Index i = 0; i < t; ++i)
        for (Eigen::Index j = i + 1; j < t; ++j)
            dists.push_back((points.row(i) - points.row(j)).norm());
    const double med = quantile(std::move(dists), 0.5);
    if (!(med > 0.0)) throw NumericError("median_heuristic: degenerate batch");
    return med;
}

Mat rbf_kernel(const Mat& d2, double sigma) {
    if (!(sigma > 0.0)) throw NumericError("rbf_kernel: sigma must be positive");
    return (-d2 / (2.0 * sigma * sigma)).array().exp();
}

namespace {

// Perplexity exp(H) of p(j) ~ exp(-beta d2_j), computed in a shifted log-space.
double neighbor_perplexity(const std::vector<double>& sq_dists, double beta) {
    double dmin = sq_dists[0];
    for (const double d : sq_dists) dmin = std::min(dmin, d);
    double z = 0.0, wd = 0.0;
    for (const double d : sq_dists) {
        const double w = std::exp(-beta * (d - dmin));
        z += w;
        wd += w * (d - dmin);
    }
    const double entropy = std::log(z) + beta * wd / z;  // nats
    return std::exp(entropy);
}

}  // namespace

double perplexity_beta(const std::vector<double>& sq_dists, double target) {
    constexpr double kTol = 1e-5;
    constexpr int kBracketSteps = 50;
    constexpr int kBisectSteps = 100;

    double beta = 1.0;
    double perp = neighbor_perplexity(sq_dists, beta);
    if (std::abs(perp - target) <= kTol) return beta;

    // Perplexity decreases with beta: bracket by doubling/halving.
    double lo = beta, hi = beta;
    if (perp > target) {
        for (int i = 0; i < kBracketSteps; ++i) {
            hi *= 2.0;
            perp = neighbor_perplexity(sq_dists, hi);
            if (std::abs(perp - target) <= kTol) return hi;
            if (perp < target) break;
            lo = hi;
        }
    } else {
        for (int i = 0; i < kBracketSteps; ++i) {
            lo *= 0.5;
            perp = neighbor_perplexity(sq_dists, lo);
            if (std::abs(perp - target) <= kTol) return lo;
            if (perp > target) break;
            hi = lo;
        }
    }

    for (int i = 0; i < kBisectSteps; ++i) {
        beta = 0.5 * (lo + hi);
        perp = neighbor_perplexity(sq_dists, beta);
        if (std::abs(perp - target) <= kTol) break;
        if (perp > target) lo = beta; else hi = beta;
    }
    return beta;
}

PerplexityKernel perplexity_kernel(const Mat& points, double target) {
    const Eigen::Index t = points.rows();
    if (t < 2) throw NumericError("perplexity_kernel: need at least 2 points");
    if (!(target > 1.0) || !(target < static_cast<double>(t)))
        throw ConfigError("perplexity_kernel: target must lie in (1, T)");

    const Mat d2 = pairwise_sq_dists(points, points);
    PerplexityKernel out;
    out.beta.resize(t);
    std::vector<double> row(static_cast<std::size_t>(t) - 1);
    for (Eigen::Index i = 0; i < t; ++i) {
        std::size_t n = 0;
        for (Eigen::Index j = 0; j < t; ++j)
            if (j != i) row[n++] = d2(i, j);
        out.beta[i] = perplexity_beta(row, target);
    }
    out.ksym.resize(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
        out.ksym(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < t; ++j) {
            const double k = std::exp(-d2(i, j) * 0.5 * (out.beta[i] + out.beta[j]));
            out.ksym(i, j) = k;
            out.ksym(j, i) = k;
        }
    }
    return out;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw NumericError("quantile: empty input");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile: q must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double h = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(h));
    if (lo == hi) return values[lo];
    const double frac = h - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Mat solve_ridge(const Mat& K, double eta, const Mat& B) {
    if (K.rows() != K.cols()) throw NumericError("solve_ridge: K not square");
    if (!(eta > 0.0)) throw NumericError("solve_ridge: eta must be positive");
    const double tol = 1e-8 * std::max(1.0, K.cwiseAbs().maxCoeff());
    if ((K - K.transpose()).cwiseAbs().maxCoeff() > tol)
        throw NumericError("solve_ridge: asymmetric K");
    Mat reg = K;
    reg.diagonal().array() += eta;
    return reg.ldlt().solve(B);
}

TopEig sym_eig_topj(const Mat& K, int j) {
    const Eigen::Index t = K.rows();
    if (j < 1 || j > t) throw NumericError("sym_eig_topj: J out of range");
    Eigen::SelfAdjointEigenSolver<Mat> solver(K);
    if (solver.info() != Eigen::Success) throw NumericError("sym_eig_topj: eigensolver failed");
    // Eigen returns ascending order; take the tail reversed.
    TopEig out;
    out.values.resize(j);
    out.vectors.resize(t, j);
    for (int m = 0; m < j; ++m) {
        out.values[m] = solver.eigenvalues()[t - 1 - m];
        out.vectors.col(m) = solver.eigenvectors().col(t - 1 - m);
    }
    return out;
}

}  // namespace censor
