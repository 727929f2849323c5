#pragma once

#include "censor/numerics.hpp"
#include "censor/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace censor {

enum class CensorMode { marginal, conditional, complementary };

std::string censor_mode_name(CensorMode m);
CensorMode censor_mode_from_name(const std::string& name);

// Splits latent columns into halves: first ceil(K/2) coordinates and the rest.
int latent_half_split(int k);

// Subset selection for pairwise MMD terms.
struct PairPolicy {
    enum class Kind { bernoulli, clique };
    Kind kind = Kind::bernoulli;
    double b = 0.5;  // bernoulli inclusion probability
    int d = 2;       // clique size

    void validate(int m_subjects) const;
    std::string str() const;
};

struct MmdPenaltyResult {
    double penalty = 0.0;     // marginal/conditional, or penalty_z1 - penalty_z2
    double penalty_z1 = 0.0;  // complementary halves
    double penalty_z2 = 0.0;
    bool complementary = false;
    int terms_computed = 0;
    int terms_skipped = 0;  // undersized subsets
};

// Unbiased squared-MMD estimate between two sample batches under an RBF kernel:
// within-batch sums exclude the diagonal, so both batches need >= 2 points.
// May be negative.
double mmd_sq_unbiased(const Mat& x, const Mat& y, double sigma);

// Full-batch-vs-subject-subset MMD penalty. The kernel length scale is
// resolved once per call from the whole batch (per half in complementary
// mode); undersized subsets are skipped and counted. If grad_out is non-null
// it receives d(penalty)/dz for the applied scalar (z1 minus z2 in
// complementary mode), with the length scale treated as a constant.
MmdPenaltyResult mmd_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                             int m_subjects, int c_classes, CensorMode mode,
                             const LengthScalePolicy& lengthscale, Mat* grad_out = nullptr);

// Ordered subject pairs (r, t), r != t, drawn fresh from the rng stream.
std::vector<std::pair<int, int>> select_pairs(int m_subjects, const PairPolicy& policy, Rng& rng);

MmdPenaltyResult pairmmd_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                                 int m_subjects, int c_classes, CensorMode mode,
                                 const PairPolicy& policy, const LengthScalePolicy& lengthscale,
                                 Rng& rng, bool average_terms = false, Mat* grad_out = nullptr);

// Same computation with an explicit pair set (the policy-based overload
// delegates here after selection).
MmdPenaltyResult pairmmd_penalty_with_pairs(const Mat& z, const std::vector<int>& s,
                                            const std::vector<int>& y, int m_subjects, int c_classes,
                                            CensorMode mode,
                                            const std::vector<std::pair<int, int>>& pairs,
                                            const LengthScalePolicy& lengthscale,
                                            bool average_terms = false, Mat* grad_out = nullptr);

}  // namespace censor
