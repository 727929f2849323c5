#pragma once

#include "censor/divergence.hpp"
#include "censor/neural.hpp"
#include "censor/score.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace censor {

enum class CensorMethod { none, adversarial, mige, mmd, pairmmd, began };

std::string censor_method_name(CensorMethod m);
CensorMethod censor_method_from_name(const std::string& name);

// Which penalty engine runs, in which mode, and its knobs. lambda is applied
// by the trainer; engines return unscaled outputs.
struct CensorConfig {
    CensorMethod method = CensorMethod::none;
    CensorMode mode = CensorMode::marginal;
    double lambda = 0.0;
    ScoreConfig score;                 // mige
    PairPolicy pair;                   // pairmmd
    bool average_pairs = false;        // pairmmd: average instead of summing terms
    LengthScalePolicy mmd_lengthscale = LengthScalePolicy::Median();  // mmd/pairmmd
    double began_beta = 0.001;         // control step size
    double began_diversity = 0.5;      // control diversity, in (0,1]
    int adv_steps = 5;                 // auxiliary updates per encoder update

    void validate() const;
    std::string key() const;  // canonical id used for seeds and reports
};

// BEGAN control trade-off state; k2 is used only in complementary mode.
struct BeganControl {
    double k1 = 0.0;
    double k2 = 0.0;
};

struct PenaltyOutput {
    // Scalar encoder penalty, absent for MIGE (a gradient-only method). In
    // complementary mode this is the applied combination; the raw halves are
    // reported separately.
    std::optional<double> penalty;
    std::optional<double> penalty_z1;
    std::optional<double> penalty_z2;
    // d(applied penalty)/dz for scalar engines, or the MIGE cotangents. The
    // trainer injects lambda * latent_cotangents into the encoder backward.
    Mat latent_cotangents;
    std::map<std::string, double> aux_losses;
    std::optional<double> k1_next;
    std::optional<double> k2_next;
    int terms_computed = 0;
    int terms_skipped = 0;
};

// Adversary cross-entropy penalty (Adv). Marginal: penalty = -L_CE with L_CE
// the batch-mean adversary cross entropy. Conditional: per-sample terms are
// weighted by inverse class counts (uniform class prior) and the adversary
// sees the latent concatenated with a one-hot class label. Complementary:
// two separate adversaries on the two latent halves; the encoder penalty is
// L_CE(z2) - L_CE(z1).
PenaltyOutput adversarial_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                                  int m_subjects, int c_classes, CensorMode mode,
                                  const ParamStore& adversary, const ParamStore* adversary2 = nullptr);

// Score-function-based MI gradient (MIGE). Returns latent cotangents only.
// Marginal: c_i = -(1/N) s_full(z_i) + 1/(M |S_m|) s_m(z_i). Conditional uses
// the 1/|S_c| and 1/(M |S_c|) weightings on class / class-subject fits.
// Complementary applies the marginal form per half with the sign flipped on
// the second half. Subsets with < 2 points or degenerate geometry are skipped
// and counted.
PenaltyOutput mige_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                           int m_subjects, int c_classes, CensorMode mode, const ScoreConfig& score);

// Autoencoder-discriminator divergence (BEGAN). The autoencoder loss of a set
// is the mean absolute reconstruction error per coordinate. Returns the
// encoder penalty, the discriminator objective (aux), and the next control
// trade-off(s), clipped to [0,1].
PenaltyOutput began_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                            int m_subjects, int c_classes, CensorMode mode, const ParamStore& disc,
                            const ParamStore* disc2, const BeganControl& control, double beta,
                            double gamma_div);

double began_control_update(double k, double beta, double gamma_div, double loss_full,
                            double loss_subject);

// Auxiliary-model architecture and optimizer settings used by the engines.
struct AuxSpec {
    std::vector<int> adversary_hidden{32};
    std::vector<int> disc_hidden{16};
    double lr = 1e-3;
    double weight_decay = 0.01;
};

// Stateful adapter the trainer drives: phase (a) updates auxiliary models on a
// detached latent batch, phase (b) evaluates the penalty with auxiliaries
// frozen and advances any control state.
class CensorEngine {
public:
    virtual ~CensorEngine() = default;
    virtual bool has_aux() const { return false; }
    virtual void aux_update(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                            int epoch) {
        (void)z; (void)s; (void)y; (void)epoch;
    }
    virtual PenaltyOutput penalty(const Mat& z, const std::vector<int>& s,
                                  const std::vector<int>& y) = 0;
    virtual std::vector<std::pair<std::string, const ModelBundle*>> aux_models() const { return {}; }
    virtual std::vector<double> control_values() const { return {}; }
};

std::unique_ptr<CensorEngine> make_engine(const CensorConfig& cfg, int latent_dim, int m_subjects,
                                          int c_classes, const AuxSpec& aux, std::uint64_t seed);

}  // namespace censor
