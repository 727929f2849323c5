#include "censor/divergence.hpp"

#include "censor/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace censor {

std::string censor_mode_name(CensorMode m) {
    switch (m) {
        case CensorMode::marginal: return "marginal";
        case CensorMode::conditional: return "conditional";
        case CensorMode::complementary: return "complementary";
    }
    return "?";
}

CensorMode censor_mode_from_name(const std::string& name) {
    if (name == "marginal") return CensorMode::marginal;
    if (name == "conditional") return CensorMode::conditional;
    if (name == "complementary") return CensorMode::complementary;
    throw ConfigError("unknown censoring mode: " + name);
}

int latent_half_split(int k) {
    if (k < 2) throw ConfigError("complementary mode needs a latent dimension >= 2");
    return (k + 1) / 2;
}

void PairPolicy::validate(int m_subjects) const {
    if (kind == Kind::bernoulli) {
        if (!(b >= 0.0 && b <= 1.0)) throw ConfigError("bernoulli pair probability must lie in [0,1]");
    } else {
        if (d < 1 || d > m_subjects) throw ConfigError("clique size must lie in {1..M}");
    }
}

std::string PairPolicy::str() const {
    if (kind == Kind::bernoulli) return "bernoulli(" + std::to_string(b) + ")";
    return "clique(" + std::to_string(d) + ")";
}

double mmd_sq_unbiased(const Mat& x, const Mat& y, double sigma) {
    const Eigen::Index n = x.rows();
    const Eigen::Index u = y.rows();
    if (n < 2 || u < 2) throw NumericError("mmd_sq_unbiased: subset too small");
    const Mat kxx = rbf_kernel(pairwise_sq_dists(x, x), sigma);
    const Mat kyy = rbf_kernel(pairwise_sq_dists(y, y), sigma);
    const Mat kxy = rbf_kernel(pairwise_sq_dists(x, y), sigma);
    const double t1 = (kxx.sum() - kxx.trace()) / static_cast<double>(n * (n - 1));
    const double t2 = (kyy.sum() - kyy.trace()) / static_cast<double>(u * (u - 1));
    const double t3 = 2.0 * kxy.sum() / static_cast<double>(n * u);
    return t1 + t2 - t3;
}

namespace {

// Gram over one latent block plus the entrywise gradient scales gk_ij with
// grad_{z_i} k_ij = -gk_ij (z_i - z_j).
struct BatchGram {
    Mat k;
    Mat gk;
};

BatchGram batch_gram(const Mat& z, const LengthScalePolicy& policy) {
    BatchGram g;
    if (policy.kind == LengthScalePolicy::Kind::perplexity) {
        const Eigen::Index n = z.rows();
        const double requested =
            policy.perplexity > 0.0 ? policy.perplexity : static_cast<double>(n) / 2.0;
        const double target = std::min(requested, std::max(1.5, static_cast<double>(n) - 1.0));
        auto pk = perplexity_kernel(z, target);
        g.k = std::move(pk.ksym);
        g.gk.resize(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) g.gk(i, j) = (pk.beta[i] + pk.beta[j]) * g.k(i, j);
    } else {
        const double sigma =
            policy.kind == LengthScalePolicy::Kind::fixed ? policy.sigma : median_heuristic(z);
        g.k = rbf_kernel(pairwise_sq_dists(z, z), sigma);
        g.gk = g.k / (sigma * sigma);
    }
    return g;
}

// Accumulates one unbiased MMD term over index subsets of a shared gram; the
// per-entry coefficients land in coef for a single gradient pass at the end.
class MmdAccumulator {
public:
    explicit MmdAccumulator(const BatchGram& gram, bool want_grad)
        : gram_(gram), coef_(want_grad ? Mat::Zero(gram.k.rows(), gram.k.cols()) : Mat()) {}

    bool term(const std::vector<int>& set_i, const std::vector<int>& set_j, double weight) {
        if (set_i.size() < 2 || set_j.size() < 2) return false;
        const double ni = static_cast<double>(set_i.size());
        const double nj = static_cast<double>(set_j.size());
        const double ci = weight / (ni * (ni - 1.0));
        const double cj = weight / (nj * (nj - 1.0));
        const double cx = -2.0 * weight / (ni * nj);
        double val = 0.0;
        for (const int a : set_i)
            for (const int b : set_i)
                if (a != b) val += ci * gram_.k(a, b);
        for (const int a : set_j)
            for (const int b : set_j)
                if (a != b) val += cj * gram_.k(a, b);
        for (const int a : set_i)
            for (const int b : set_j) val += cx * gram_.k(a, b);
        total_ += val;
        if (coef_.size() > 0) {
            for (const int a : set_i)
                for (const int b : set_i)
                    if (a != b) coef_(a, b) += ci;
            for (const int a : set_j)
                for (const int b : set_j)
                    if (a != b) coef_(a, b) += cj;
            for (const int a : set_i)
                for (const int b : set_j) coef_(a, b) += cx;
        }
        return true;
    }

    double total() const { return total_; }

    void rescale(double factor) {
        total_ *= factor;
        if (coef_.size() > 0) coef_ *= factor;
    }

    // d(total)/dz for the block this gram was built on.
    Mat gradient(const Mat& z) const {
        const Eigen::Index n = z.rows();
        Mat s(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j)
                s(i, j) = (coef_(i, j) + coef_(j, i)) * gram_.gk(i, j);
        return s * z - s.rowwise().sum().asDiagonal() * z;
    }

private:
    const BatchGram& gram_;
    Mat coef_;
    double total_ = 0.0;
};

std::vector<std::vector<int>> group_by(const std::vector<int>& labels, int count) {
    std::vector<std::vector<int>> groups(count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= count) throw DataError("label out of range");
        groups[labels[i]].push_back(static_cast<int>(i));
    }
    return groups;
}

std::vector<int> all_indices(Eigen::Index n) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

std::vector<int> intersect_sorted(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<int> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

}  // namespace

MmdPenaltyResult mmd_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                             int m_subjects, int c_classes, CensorMode mode,
                             const LengthScalePolicy& lengthscale, Mat* grad_out) {
    const Eigen::Index n = z.rows();
    if (n < 2) throw NumericError("mmd_penalty: need at least 2 samples");
    if (static_cast<Eigen::Index>(s.size()) != n) throw DataError("mmd_penalty: subject label count mismatch");
    const auto by_subject = group_by(s, m_subjects);

    MmdPenaltyResult res;
    const bool want_grad = grad_out != nullptr;

    if (mode == CensorMode::complementary) {
        const int k1 = latent_half_split(static_cast<int>(z.cols()));
        const Mat z1 = z.leftCols(k1);
        const Mat z2 = z.rightCols(z.cols() - k1);
        const BatchGram g1 = batch_gram(z1, lengthscale);
        const BatchGram g2 = batch_gram(z2, lengthscale);
        MmdAccumulator acc1(g1, want_grad), acc2(g2, want_grad);
        const auto full = all_indices(n);
        for (int m = 0; m < m_subjects; ++m) {
            const bool ok1 = acc1.term(full, by_subject[m], 1.0);
            const bool ok2 = acc2.term(full, by_subject[m], 1.0);
            if (ok1 && ok2) ++res.terms_computed; else ++res.terms_skipped;
        }
        if (res.terms_computed == 0) throw NumericError("mmd_penalty: no computable terms");
        res.complementary = true;
        res.penalty_z1 = acc1.total();
        res.penalty_z2 = acc2.total();
        res.penalty = res.penalty_z1 - res.penalty_z2;
        if (want_grad) {
            grad_out->setZero(n, z.cols());
            grad_out->leftCols(k1) = acc1.gradient(z1);
            grad_out->rightCols(z.cols() - k1) = -acc2.gradient(z2);
        }
        return res;
    }

    const BatchGram gram = batch_gram(z, lengthscale);
    MmdAccumulator acc(gram, want_grad);
    if (mode == CensorMode::marginal) {
        const auto full = all_indices(n);
        for (int m = 0; m < m_subjects; ++m) {
            if (acc.term(full, by_subject[m], 1.0)) ++res.terms_computed; else ++res.terms_skipped;
        }
    } else {
        if (static_cast<Eigen::Index>(y.size()) != n)
            throw DataError("mmd_penalty: conditional mode requires class labels");
        const auto by_class = group_by(y, c_classes);
        for (int c = 0; c < c_classes; ++c) {
            for (int m = 0; m < m_subjects; ++m) {
                const auto cell = intersect_sorted(by_class[c], by_subject[m]);
                if (acc.term(by_class[c], cell, 1.0)) ++res.terms_computed; else ++res.terms_skipped;
            }
        }
    }
    if (res.terms_computed == 0) throw NumericError("mmd_penalty: no computable terms");
    res.penalty = acc.total();
    if (want_grad) *grad_out = acc.gradient(z);
    return res;
}

std::vector<std::pair<int, int>> select_pairs(int m_subjects, const PairPolicy& policy, Rng& rng) {
    if (m_subjects < 2) throw ConfigError("select_pairs: need at least 2 subjects");
    policy.validate(m_subjects);
    std::vector<std::pair<int, int>> pairs;
    if (policy.kind == PairPolicy::Kind::bernoulli) {
        for (int r = 0; r < m_subjects; ++r)
            for (int t = 0; t < m_subjects; ++t)
                if (t != r && rng.uniform() <= policy.b) pairs.emplace_back(r, t);
    } else {
        std::vector<int> perm(m_subjects);
        std::iota(perm.begin(), perm.end(), 0);
        rng.shuffle(perm);
        perm.resize(policy.d);
        for (const int r : perm)
            for (const int t : perm)
                if (t != r) pairs.emplace_back(r, t);
    }
    return pairs;
}

MmdPenaltyResult pairmmd_penalty_with_pairs(const Mat& z, const std::vector<int>& s,
                                            const std::vector<int>& y, int m_subjects, int c_classes,
                                            CensorMode mode,
                                            const std::vector<std::pair<int, int>>& pairs,
                                            const LengthScalePolicy& lengthscale, bool average_terms,
                                            Mat* grad_out) {
    const Eigen::Index n = z.rows();
    MmdPenaltyResult res;
    res.complementary = mode == CensorMode::complementary;
    if (grad_out) grad_out->setZero(n, z.cols());
    if (pairs.empty()) return res;

    if (n < 2) throw NumericError("pairmmd_penalty: need at least 2 samples");
    if (static_cast<Eigen::Index>(s.size()) != n)
        throw DataError("pairmmd_penalty: subject label count mismatch");
    const auto by_subject = group_by(s, m_subjects);
    const bool want_grad = grad_out != nullptr;

    if (mode == CensorMode::complementary) {
        const int k1 = latent_half_split(static_cast<int>(z.cols()));
        const Mat z1 = z.leftCols(k1);
        const Mat z2 = z.rightCols(z.cols() - k1);
        const BatchGram g1 = batch_gram(z1, lengthscale);
        const BatchGram g2 = batch_gram(z2, lengthscale);
        MmdAccumulator acc1(g1, want_grad), acc2(g2, want_grad);
        for (const auto& [r, t] : pairs) {
            const bool ok1 = acc1.term(by_subject[r], by_subject[t], 1.0);
            acc2.term(by_subject[r], by_subject[t], 1.0);
            if (ok1) ++res.terms_computed; else ++res.terms_skipped;
        }
        if (res.terms_computed == 0) throw NumericError("pairmmd_penalty: no computable terms");
        if (average_terms) {
            const double inv = 1.0 / res.terms_computed;
            acc1.rescale(inv);
            acc2.rescale(inv);
        }
        res.penalty_z1 = acc1.total();
        res.penalty_z2 = acc2.total();
        res.penalty = res.penalty_z1 - res.penalty_z2;
        if (want_grad) {
            grad_out->leftCols(k1) = acc1.gradient(z1);
            grad_out->rightCols(z.cols() - k1) = -acc2.gradient(z2);
        }
        return res;
    }

    const BatchGram gram = batch_gram(z, lengthscale);
    MmdAccumulator acc(gram, want_grad);
    if (mode == CensorMode::marginal) {
        for (const auto& [r, t] : pairs) {
            if (acc.term(by_subject[r], by_subject[t], 1.0)) ++res.terms_computed;
            else ++res.terms_skipped;
        }
    } else {
        if (static_cast<Eigen::Index>(y.size()) != n)
            throw DataError("pairmmd_penalty: conditional mode requires class labels");
        const auto by_class = group_by(y, c_classes);
        for (int c = 0; c < c_classes; ++c) {
            for (const auto& [r, t] : pairs) {
                const auto cell_r = intersect_sorted(by_class[c], by_subject[r]);
                const auto cell_t = intersect_sorted(by_class[c], by_subject[t]);
                if (acc.term(cell_r, cell_t, 1.0)) ++res.terms_computed;
                else ++res.terms_skipped;
            }
        }
    }
    if (res.terms_computed == 0) throw NumericError("pairmmd_penalty: no computable terms");
    if (average_terms) acc.rescale(1.0 / res.terms_computed);
    res.penalty = acc.total();
    if (want_grad) *grad_out = acc.gradient(z);
    return res;
}

MmdPenaltyResult pairmmd_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                                 int m_subjects, int c_classes, CensorMode mode,
                                 const PairPolicy& policy, const LengthScalePolicy& lengthscale,
                                 Rng& rng, bool average_terms, Mat* grad_out) {
    const auto pairs = select_pairs(m_subjects, policy, rng);
    return pairmmd_penalty_with_pairs(z, s, y, m_subjects, c_classes, mode, pairs, lengthscale,
                                      average_terms, grad_out);
}

}  // namespace censor
