#include "censor/score.hpp"

#include "censor/error.hpp"

#include <cmath>

namespace censor {

std::string score_kind_name(ScoreKind k) {
    switch (k) {
        case ScoreKind::ssge: return "ssge";
        case ScoreKind::stein: return "stein";
        case ScoreKind::tikhonov: return "tikhonov";
        case ScoreKind::nu_method: return "nu_method";
    }
    return "?";
}

ScoreKind score_kind_from_name(const std::string& name) {
    if (name == "ssge") return ScoreKind::ssge;
    if (name == "stein") return ScoreKind::stein;
    if (name == "tikhonov") return ScoreKind::tikhonov;
    if (name == "nu_method") return ScoreKind::nu_method;
    throw ConfigError("unknown score estimator: " + name);
}

void ScoreConfig::validate() const {
    if (!(score_reg > 0.0)) throw ConfigError("score_reg must be positive");
    if (nu_iters < 1) throw ConfigError("nu_iters must be >= 1");
    if (ssge_j < 0) throw ConfigError("ssge_j must be >= 0");
}

std::string ScoreConfig::str() const {
    return score_kind_name(kind) + "|gamma=" + std::to_string(score_reg) + "|ls=" + lengthscale.str();
}

namespace {

// Pair scale g such that grad_a k(a,b) = -g (a-b) k(a,b).
// Fixed/median: g = 1/sigma^2. Perplexity: g_ij = beta_i + beta_j.

struct TrainKernel {
    Mat k;  // T x T gram
    Mat b;  // T x K row-summed kernel gradients: b_i = sum_j g_ij k_ij (z_i - z_j)
};

Mat weighted_rowsum_diff(const Mat& w, const Mat& z_left, const Mat& z_right) {
    // rows: sum_j w_ij (z_left_i - z_right_j)
    return w.rowwise().sum().asDiagonal() * z_left - w * z_right;
}

TrainKernel build_train_kernel(FittedScore& f) {
    const Mat& z = f.z;
    const Eigen::Index t = z.rows();
    TrainKernel tk;
    if (f.cfg.lengthscale.kind == LengthScalePolicy::Kind::perplexity) {
        // Auto target (<= 0) means half the batch; explicit targets are
        // clamped below the batch size so small subsets stay usable.
        const double requested = f.cfg.lengthscale.perplexity > 0.0
                                     ? f.cfg.lengthscale.perplexity
                                     : static_cast<double>(t) / 2.0;
        f.perp_target = std::min(requested, std::max(1.5, static_cast<double>(t) - 1.0));
        auto pk = perplexity_kernel(z, f.perp_target);
        f.beta = pk.beta;
        tk.k = std::move(pk.ksym);
        Mat w(t, t);
        for (Eigen::Index i = 0; i < t; ++i)
            for (Eigen::Index j = 0; j < t; ++j) w(i, j) = (f.beta[i] + f.beta[j]) * tk.k(i, j);
        tk.b = weighted_rowsum_diff(w, z, z);
    } else {
        f.sigma = f.cfg.lengthscale.kind == LengthScalePolicy::Kind::fixed
                      ? f.cfg.lengthscale.sigma
                      : median_heuristic(z);
        const Mat d2 = pairwise_sq_dists(z, z);
        if (!(d2.maxCoeff() > 0.0)) throw NumericError("fit_score: degenerate batch");
        tk.k = rbf_kernel(d2, f.sigma);
        const double g = 1.0 / (f.sigma * f.sigma);
        tk.b = weighted_rowsum_diff(g * tk.k, z, z);
    }
    return tk;
}

void fit_nu_method(FittedScore& f, const TrainKernel& tk, const Mat& h_train) {
    constexpr double nu = 1.0;
    const double t_count = static_cast<double>(f.z.rows());
    const int iters = std::min(f.cfg.nu_iters,
                               static_cast<int>(std::ceil(1.0 / std::sqrt(f.cfg.score_reg))));

    // u_t = c_t h + k(., Z) A_t; one gram product per iteration keeps the
    // training values U_t in sync with the expansion.
    const double omega1 = (4.0 * nu + 2.0) / (4.0 * nu + 1.0);
    double c_prev2 = 0.0, c_prev = omega1;
    Mat a_prev2 = Mat::Zero(f.z.rows(), f.z.cols());
    Mat a_prev = a_prev2;
    Mat u_vals = c_prev * h_train;
    for (int step = 2; step <= iters; ++step) {
        const double tt = static_cast<double>(step);
        const double mu = (tt - 1.0) * (2.0 * tt - 3.0) * (2.0 * tt + 2.0 * nu - 1.0) /
                          ((tt + 2.0 * nu - 1.0) * (2.0 * tt + 4.0 * nu - 1.0) * (2.0 * tt + 2.0 * nu - 3.0));
        const double omega = 4.0 * (2.0 * tt + 2.0 * nu - 1.0) * (tt + nu - 1.0) /
                             ((tt + 2.0 * nu - 1.0) * (2.0 * tt + 4.0 * nu - 1.0));
        const double c_next = c_prev + mu * (c_prev - c_prev2) + omega;
        Mat a_next = a_prev + mu * (a_prev - a_prev2) - (omega / t_count) * u_vals;
        c_prev2 = c_prev;
        c_prev = c_next;
        a_prev2 = std::move(a_prev);
        a_prev = std::move(a_next);
        u_vals = c_prev * h_train + tk.k * a_prev;
    }
    f.coef = -a_prev;
    f.h_coef = -c_prev;
}

void fit_ssge(FittedScore& f, const TrainKernel& tk) {
    const Eigen::Index t = f.z.rows();
    const TopEig eig = sym_eig_topj(tk.k, static_cast<int>(t));
    const double lambda_max = std::max(eig.values[0], 0.0);
    const double threshold = 1e-8 * lambda_max;
    // Auto-truncation keeps the leading eigenpairs carrying 99% of the
    // positive spectral mass; the 1/lambda^2 expansion amplifies anything in
    // the noise-dominated tail.
    double total_energy = 0.0;
    for (Eigen::Index i = 0; i < t; ++i) total_energy += std::max(eig.values[i], 0.0);
    const int j_cap = f.cfg.ssge_j > 0 ? f.cfg.ssge_j : static_cast<int>(t);
    int j = 0;
    double energy = 0.0;
    while (j < static_cast<int>(t) && j < j_cap && eig.values[j] > threshold) {
        energy += eig.values[j];
        ++j;
        if (f.cfg.ssge_j <= 0 && energy >= 0.99 * total_energy) break;
    }
    if (j == 0) throw NumericError("fit_score: kernel matrix has no usable spectrum");
    const Mat vj = eig.vectors.leftCols(j);
    const Vec inv_sq = eig.values.head(j).array().square().inverse();
    f.coef = -vj * (inv_sq.asDiagonal() * (vj.transpose() * tk.b));
    f.h_coef = 0.0;
}

}  // namespace

FittedScore fit_score(const Mat& samples, const ScoreConfig& cfg) {
    cfg.validate();
    if (samples.rows() < 2) throw NumericError("fit_score: need at least 2 samples");
    if (samples.cols() < 1) throw NumericError("fit_score: need at least 1 dimension");

    FittedScore f;
    f.z = samples;
    f.cfg = cfg;
    f.max_train_norm = samples.rowwise().norm().maxCoeff();

    const TrainKernel tk = build_train_kernel(f);
    const double t_count = static_cast<double>(samples.rows());
    const Mat h_train = tk.b / t_count;
    const double gamma = cfg.score_reg;

    switch (cfg.kind) {
        case ScoreKind::stein: {
            const Mat u = solve_ridge(tk.k / t_count, gamma, h_train);
            f.coef = u / (t_count * gamma);
            f.h_coef = -1.0 / gamma;
            break;
        }
        case ScoreKind::tikhonov: {
            const Mat u = solve_ridge(tk.k / t_count, gamma, h_train);
            f.coef = solve_ridge(tk.k, t_count * gamma, Mat(-u));
            f.h_coef = 0.0;
            break;
        }
        case ScoreKind::nu_method:
            fit_nu_method(f, tk, h_train);
            break;
        case ScoreKind::ssge:
            fit_ssge(f, tk);
            break;
    }
    return f;
}

ScoreEval score_at(const FittedScore& f, const Mat& queries) {
    if (queries.cols() != f.z.cols()) throw NumericError("score_at: dimension mismatch");
    const Eigen::Index u_count = queries.rows();
    const Eigen::Index t = f.z.rows();
    const Mat d2 = pairwise_sq_dists(queries, f.z);

    Mat kq(u_count, t);
    Mat w(u_count, t);  // g_uj * k_uj, the gradient-scale weights
    if (f.cfg.lengthscale.kind == LengthScalePolicy::Kind::perplexity) {
        std::vector<double> row;
        for (Eigen::Index q = 0; q < u_count; ++q) {
            row.clear();
            for (Eigen::Index j = 0; j < t; ++j)
                if (d2(q, j) > 0.0) row.push_back(d2(q, j));
            // A query that coincides with a training point reproduces that
            // point's neighbor distribution exactly.
            const double beta_q = row.empty() ? f.beta.mean() : perplexity_beta(row, f.perp_target);
            for (Eigen::Index j = 0; j < t; ++j) {
                const double g = beta_q + f.beta[j];
                kq(q, j) = std::exp(-d2(q, j) * 0.5 * g);
                w(q, j) = g * kq(q, j);
            }
        }
    } else {
        kq = rbf_kernel(d2, f.sigma);
        w = kq / (f.sigma * f.sigma);
    }

    ScoreEval out;
    out.scores = kq * f.coef;
    if (f.h_coef != 0.0) {
        const Mat h = weighted_rowsum_diff(w, queries, f.z) / static_cast<double>(t);
        out.scores += f.h_coef * h;
    }
    if (!out.scores.allFinite()) throw NumericError("score_at: non-finite score");

    const double limit = 10.0 * f.max_train_norm;
    for (Eigen::Index q = 0; q < u_count; ++q)
        if (queries.row(q).norm() > limit) ++out.extrapolation_warnings;
    return out;
}

Mat entropy_grad_cotangents(const Mat& samples, const ScoreConfig& cfg) {
    const FittedScore f = fit_score(samples, cfg);
    const ScoreEval eval = score_at(f, samples);
    return -eval.scores / static_cast<double>(samples.rows());
}

}  // namespace censor
