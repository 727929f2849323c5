#include "censor/censoring.hpp"

#include "censor/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace censor {

namespace {

constexpr double kProbFloor = 1e-12;

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::vector<std::vector<int>> group_by(const std::vector<int>& labels, int count,
                                       const char* what) {
    std::vector<std::vector<int>> groups(count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= count)
            throw DataError(std::string("unknown ") + what + " label");
        groups[labels[i]].push_back(static_cast<int>(i));
    }
    return groups;
}

Mat one_hot(const std::vector<int>& labels, int count) {
    Mat oh = Mat::Zero(labels.size(), count);
    for (std::size_t i = 0; i < labels.size(); ++i) oh(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    return oh;
}

}  // namespace

std::string censor_method_name(CensorMethod m) {
    switch (m) {
        case CensorMethod::none: return "baseline";
        case CensorMethod::adversarial: return "adversarial";
        case CensorMethod::mige: return "mige";
        case CensorMethod::mmd: return "mmd";
        case CensorMethod::pairmmd: return "pairmmd";
        case CensorMethod::began: return "began";
    }
    return "?";
}

CensorMethod censor_method_from_name(const std::string& name) {
    if (name == "baseline" || name == "none") return CensorMethod::none;
    if (name == "adversarial") return CensorMethod::adversarial;
    if (name == "mige") return CensorMethod::mige;
    if (name == "mmd") return CensorMethod::mmd;
    if (name == "pairmmd") return CensorMethod::pairmmd;
    if (name == "began") return CensorMethod::began;
    throw ConfigError("unknown censoring method: " + name);
}

void CensorConfig::validate() const {
    if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
    if (adv_steps < 1) throw ConfigError("adv_steps must be >= 1");
    if (!(began_diversity > 0.0 && began_diversity <= 1.0))
        throw ConfigError("began_diversity must lie in (0,1]");
    if (method == CensorMethod::mige) score.validate();
}

std::string CensorConfig::key() const {
    if (method == CensorMethod::none || lambda == 0.0) return "baseline";
    std::string k = censor_method_name(method) + "|" + censor_mode_name(mode) +
                    "|lam=" + fmt_g(lambda);
    switch (method) {
        case CensorMethod::mige:
            k += "|score=" + score_kind_name(score.kind) + "|gamma=" + fmt_g(score.score_reg) +
                 "|ls=" + score.lengthscale.str();
            break;
        case CensorMethod::pairmmd:
            k += "|pair=" + pair.str();
            if (average_pairs) k += "|avg";
            break;
        case CensorMethod::began:
            k += "|beta=" + fmt_g(began_beta) + "|gdiv=" + fmt_g(began_diversity);
            break;
        default:
            break;
    }
    return k;
}

// ---------------------------------------------------------------------------
// Adversarial censoring

namespace {

// Mean (or per-sample-weighted) cross entropy of adversary predictions against
// subject labels, plus the gradient of that loss with respect to the adversary
// INPUT. Parameter gradients accumulate into a scratch copy and are discarded.
struct AdvEval {
    double ce = 0.0;
    Mat input_grad;
};

AdvEval adversary_ce(const ParamStore& adversary, const Mat& input, const std::vector<int>& s,
                     const Vec& sample_weights) {
    ParamStore scratch = adversary;
    scratch.zero_grads();
    const ForwardResult fr = forward(scratch, input);
    const Eigen::Index n = input.rows();
    const int m_out = scratch.spec.output();
    AdvEval out;
    Mat cot = Mat::Zero(n, m_out);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (s[i] < 0 || s[i] >= m_out) throw DataError("adversarial_penalty: unknown subject label");
        const double p = std::max(fr.out(i, s[i]), kProbFloor);
        out.ce += sample_weights[i] * (-std::log(p));
        cot(i, s[i]) = -sample_weights[i] / p;
    }
    out.input_grad = backward(scratch, fr.tape, cot);
    return out;
}

}  // namespace

PenaltyOutput adversarial_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                                  int m_subjects, int c_classes, CensorMode mode,
                                  const ParamStore& adversary, const ParamStore* adversary2) {
    const Eigen::Index n = z.rows();
    if (n < 1) throw DataError("adversarial_penalty: empty batch");
    if (static_cast<Eigen::Index>(s.size()) != n)
        throw DataError("adversarial_penalty: subject label count mismatch");
    if (adversary.spec.output() != m_subjects)
        throw ConfigError("adversarial_penalty: adversary output width != M");

    PenaltyOutput out;
    if (mode == CensorMode::marginal) {
        if (adversary.spec.input != z.cols())
            throw ConfigError("adversarial_penalty: adversary input width mismatch");
        const Vec w = Vec::Constant(n, 1.0 / static_cast<double>(n));
        const AdvEval eval = adversary_ce(adversary, z, s, w);
        out.penalty = -eval.ce;
        out.latent_cotangents = -eval.input_grad;
        out.aux_losses["adversary_ce"] = eval.ce;
        out.terms_computed = static_cast<int>(n);
    } else if (mode == CensorMode::conditional) {
        if (static_cast<Eigen::Index>(y.size()) != n)
            throw DataError("adversarial_penalty: conditional mode requires class labels");
        if (adversary.spec.input != z.cols() + c_classes)
            throw ConfigError("adversarial_penalty: conditional adversary expects latent + one-hot class");
        const auto by_class = group_by(y, c_classes, "class");
        Vec w(n);
        for (Eigen::Index i = 0; i < n; ++i)
            w[i] = 1.0 / static_cast<double>(by_class[y[i]].size());
        Mat input(n, z.cols() + c_classes);
        input << z, one_hot(y, c_classes);
        const AdvEval eval = adversary_ce(adversary, input, s, w);
        out.penalty = -eval.ce;
        out.latent_cotangents = -eval.input_grad.leftCols(z.cols());
        out.aux_losses["adversary_ce"] = eval.ce;
        out.terms_computed = static_cast<int>(n);
    } else {
        if (adversary2 == nullptr)
            throw ConfigError("adversarial_penalty: complementary mode needs two adversaries");
        const int k1 = latent_half_split(static_cast<int>(z.cols()));
        const int k2 = static_cast<int>(z.cols()) - k1;
        if (adversary.spec.input != k1 || adversary2->spec.input != k2)
            throw ConfigError("adversarial_penalty: half-latent adversary width mismatch");
        const Vec w = Vec::Constant(n, 1.0 / static_cast<double>(n));
        const AdvEval e1 = adversary_ce(adversary, z.leftCols(k1), s, w);
        const AdvEval e2 = adversary_ce(*adversary2, z.rightCols(k2), s, w);
        // Encoder minimizes L_CE(z2) - L_CE(z1): censor the first half,
        // saturate the second.
        out.penalty = e2.ce - e1.ce;
        out.penalty_z1 = e1.ce;
        out.penalty_z2 = e2.ce;
        out.latent_cotangents.setZero(n, z.cols());
        out.latent_cotangents.leftCols(k1) = -e1.input_grad;
        out.latent_cotangents.rightCols(k2) = e2.input_grad;
        out.aux_losses["adversary_ce_z1"] = e1.ce;
        out.aux_losses["adversary_ce_z2"] = e2.ce;
        out.terms_computed = static_cast<int>(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// MIGE censoring

namespace {

bool subset_fittable(const Mat& z, const std::vector<int>& rows) {
    if (rows.size() < 2) return false;
    // Degenerate geometry (all points identical, or a zero median) is skipped
    // rather than aborting the batch.
    double maxd = 0.0;
    for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t b = a + 1; b < rows.size(); ++b)
            maxd = std::max(maxd, (z.row(rows[a]) - z.row(rows[b])).squaredNorm());
    return maxd > 0.0;
}

Mat take_rows(const Mat& z, const std::vector<int>& rows) {
    Mat out(rows.size(), z.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = z.row(rows[i]);
    return out;
}

// Adds weight * (per-sample entropy cotangents of the subset fit) into the
// given latent block columns. Returns false if the subset was skipped.
bool add_subset_entropy_term(Mat& cot, const Mat& z_block, Eigen::Index col0,
                             const std::vector<int>& rows, double weight, const ScoreConfig& cfg) {
    if (!subset_fittable(z_block, rows)) return false;
    Mat sub = take_rows(z_block, rows);
    Mat term;
    try {
        term = entropy_grad_cotangents(sub, cfg);
    } catch (const NumericError&) {
        return false;
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
        cot.block(rows[i], col0, 1, z_block.cols()) += weight * term.row(static_cast<Eigen::Index>(i));
    return true;
}

}  // namespace

PenaltyOutput mige_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                           int m_subjects, int c_classes, CensorMode mode,
                           const ScoreConfig& score) {
    score.validate();
    const Eigen::Index n = z.rows();
    if (n < 2) throw NumericError("mige_penalty: need at least 2 samples");
    if (static_cast<Eigen::Index>(s.size()) != n)
        throw DataError("mige_penalty: subject label count mismatch");
    const auto by_subject = group_by(s, m_subjects, "subject");
    const double inv_m = 1.0 / static_cast<double>(m_subjects);

    PenaltyOutput out;
    out.latent_cotangents.setZero(n, z.cols());
    std::vector<int> full(n);
    for (Eigen::Index i = 0; i < n; ++i) full[i] = static_cast<int>(i);

    if (mode == CensorMode::marginal) {
        // grad I(z;s) = grad H(z) - grad H(z|s)
        if (!add_subset_entropy_term(out.latent_cotangents, z, 0, full, 1.0, score))
            throw NumericError("mige_penalty: degenerate batch");
        for (int m = 0; m < m_subjects; ++m) {
            if (add_subset_entropy_term(out.latent_cotangents, z, 0, by_subject[m], -inv_m, score))
                ++out.terms_computed;
            else
                ++out.terms_skipped;
        }
        if (out.terms_computed == 0) throw NumericError("mige_penalty: no computable terms");
    } else if (mode == CensorMode::conditional) {
        if (static_cast<Eigen::Index>(y.size()) != n)
            throw DataError("mige_penalty: conditional mode requires class labels");
        const auto by_class = group_by(y, c_classes, "class");
        for (int c = 0; c < c_classes; ++c) {
            const auto& rows_c = by_class[c];
            if (rows_c.empty()) continue;
            const double w_class = 1.0 / static_cast<double>(rows_c.size());
            if (add_subset_entropy_term(out.latent_cotangents, z, 0, rows_c, w_class, score))
                ++out.terms_computed;
            else
                ++out.terms_skipped;
            for (int m = 0; m < m_subjects; ++m) {
                std::vector<int> cell;
                for (const int i : rows_c)
                    if (s[i] == m) cell.push_back(i);
                if (cell.empty()) continue;
                const double w_cell = -inv_m * w_class;
                if (add_subset_entropy_term(out.latent_cotangents, z, 0, cell, w_cell, score))
                    ++out.terms_computed;
                else
                    ++out.terms_skipped;
            }
        }
        if (out.terms_computed == 0) throw NumericError("mige_penalty: no computable terms");
    } else {
        const int k1 = latent_half_split(static_cast<int>(z.cols()));
        const int k2 = static_cast<int>(z.cols()) - k1;
        const Mat z1 = z.leftCols(k1);
        const Mat z2 = z.rightCols(k2);
        // Minimize I(z1;s), maximize I(z2;s): the z2 terms enter sign-flipped.
        if (!add_subset_entropy_term(out.latent_cotangents, z1, 0, full, 1.0, score))
            throw NumericError("mige_penalty: degenerate batch");
        if (!add_subset_entropy_term(out.latent_cotangents, z2, k1, full, -1.0, score))
            throw NumericError("mige_penalty: degenerate batch");
        for (int m = 0; m < m_subjects; ++m) {
            const bool ok1 =
                add_subset_entropy_term(out.latent_cotangents, z1, 0, by_subject[m], -inv_m, score);
            const bool ok2 =
                add_subset_entropy_term(out.latent_cotangents, z2, k1, by_subject[m], inv_m, score);
            if (ok1 || ok2) ++out.terms_computed;
            else ++out.terms_skipped;
        }
        if (out.terms_computed == 0) throw NumericError("mige_penalty: no computable terms");
    }
    return out;
}

// ---------------------------------------------------------------------------
// BEGAN discriminator censoring

double began_control_update(double k, double beta, double gamma_div, double loss_full,
                            double loss_subject) {
    return std::clamp(k + beta * (gamma_div * loss_full - loss_subject), 0.0, 1.0);
}

namespace {

// One discriminator pass over a latent block. The autoencoder loss of an index
// set is the mean |z - D(z)| per coordinate; per-sample weights collect the
// 1/M subject scaling so one backward pass serves all terms.
struct BeganBlock {
    double loss_full = 0.0;     // L over the whole block (or summed class terms)
    double loss_subject = 0.0;  // subject-conditional terms, 1/M scaled
    Mat enc_grad;               // d(encoder-side term)/dz for this block
    int computed = 0;
    int skipped = 0;
};

BeganBlock began_block(const ParamStore& disc, const Mat& z,
                       const std::vector<std::vector<int>>& class_sets,
                       const std::vector<int>& s, int m_subjects, double enc_full_coeff,
                       double enc_subject_coeff) {
    const Eigen::Index n = z.rows();
    const Eigen::Index width = z.cols();
    if (disc.spec.input != width || disc.spec.output() != width)
        throw ConfigError("began_penalty: discriminator width mismatch");

    ParamStore scratch = disc;
    scratch.zero_grads();
    const ForwardResult fr = forward(scratch, z);
    const Mat resid = z - fr.out;
    const Mat sgn = resid.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });

    BeganBlock out;
    const double denom = static_cast<double>(width);
    Vec w_full = Vec::Zero(n);
    Vec w_subj = Vec::Zero(n);
    for (const auto& rows : class_sets) {
        if (rows.empty()) continue;
        const double wf = 1.0 / (static_cast<double>(rows.size()) * denom);
        for (const int i : rows) w_full[i] += wf;
        std::vector<std::vector<int>> cells(m_subjects);
        for (const int i : rows) cells[s[i]].push_back(i);
        for (int m = 0; m < m_subjects; ++m) {
            if (cells[m].empty()) {
                ++out.skipped;
                continue;
            }
            const double ws =
                1.0 / (static_cast<double>(m_subjects) * cells[m].size() * denom);
            for (const int i : cells[m]) w_subj[i] += ws;
            ++out.computed;
        }
    }
    const Vec abs_rows = resid.cwiseAbs().rowwise().sum();
    out.loss_full = w_full.dot(abs_rows);
    out.loss_subject = w_subj.dot(abs_rows);

    // Encoder-side term: enc_full_coeff * loss_full + enc_subject_coeff * loss_subject.
    const Vec w_enc = enc_full_coeff * w_full + enc_subject_coeff * w_subj;
    const Mat direct = w_enc.asDiagonal() * sgn;
    out.enc_grad = direct + backward(scratch, fr.tape, -direct);
    return out;
}

}  // namespace

PenaltyOutput began_penalty(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                            int m_subjects, int c_classes, CensorMode mode, const ParamStore& disc,
                            const ParamStore* disc2, const BeganControl& control, double beta,
                            double gamma_div) {
    const Eigen::Index n = z.rows();
    if (n < 1) throw DataError("began_penalty: empty batch");
    if (static_cast<Eigen::Index>(s.size()) != n)
        throw DataError("began_penalty: subject label count mismatch");
    for (const int si : s)
        if (si < 0 || si >= m_subjects) throw DataError("began_penalty: unknown subject label");

    std::vector<int> full(n);
    for (Eigen::Index i = 0; i < n; ++i) full[i] = static_cast<int>(i);

    PenaltyOutput out;
    if (mode == CensorMode::complementary) {
        if (disc2 == nullptr)
            throw ConfigError("began_penalty: complementary mode needs two discriminators");
        const int k1 = latent_half_split(static_cast<int>(z.cols()));
        const int k2 = static_cast<int>(z.cols()) - k1;
        const BeganBlock b1 =
            began_block(disc, z.leftCols(k1), {full}, s, m_subjects, 0.0, 1.0);
        const BeganBlock b2 = began_block(*disc2, z.rightCols(k2), {full}, s, m_subjects, 1.0,
                                          -control.k2);
        // L_Enc = L(z1|s) + (L(z2) - k2 L(z2|s))
        out.penalty = b1.loss_subject + (b2.loss_full - control.k2 * b2.loss_subject);
        out.penalty_z1 = b1.loss_subject;
        out.penalty_z2 = b2.loss_full - control.k2 * b2.loss_subject;
        out.latent_cotangents.setZero(n, z.cols());
        out.latent_cotangents.leftCols(k1) = b1.enc_grad;
        out.latent_cotangents.rightCols(k2) = b2.enc_grad;
        out.aux_losses["disc_loss"] = (b1.loss_full - control.k1 * b1.loss_subject) +
                                      (b2.loss_full - control.k2 * b2.loss_subject);
        out.aux_losses["ae_full_z1"] = b1.loss_full;
        out.aux_losses["ae_subject_z1"] = b1.loss_subject;
        out.aux_losses["ae_full_z2"] = b2.loss_full;
        out.aux_losses["ae_subject_z2"] = b2.loss_subject;
        out.k1_next = began_control_update(control.k1, beta, gamma_div, b1.loss_full, b1.loss_subject);
        out.k2_next = began_control_update(control.k2, beta, gamma_div, b2.loss_full, b2.loss_subject);
        out.terms_computed = b1.computed + b2.computed;
        out.terms_skipped = b1.skipped + b2.skipped;
        return out;
    }

    std::vector<std::vector<int>> class_sets;
    if (mode == CensorMode::marginal) {
        class_sets.push_back(full);
    } else {
        if (static_cast<Eigen::Index>(y.size()) != n)
            throw DataError("began_penalty: conditional mode requires class labels");
        class_sets = group_by(y, c_classes, "class");
    }
    const BeganBlock b = began_block(disc, z, class_sets, s, m_subjects, 0.0, 1.0);
    out.penalty = b.loss_subject;  // L_Enc
    out.latent_cotangents = b.enc_grad;
    out.aux_losses["disc_loss"] = b.loss_full - control.k1 * b.loss_subject;
    out.aux_losses["ae_full"] = b.loss_full;
    out.aux_losses["ae_subject"] = b.loss_subject;
    out.k1_next = began_control_update(control.k1, beta, gamma_div, b.loss_full, b.loss_subject);
    out.terms_computed = b.computed;
    out.terms_skipped = b.skipped;
    return out;
}

// ---------------------------------------------------------------------------
// Trainer-facing engines

namespace {

class AdversarialEngine final : public CensorEngine {
public:
    AdversarialEngine(const CensorConfig& cfg, int latent_dim, int m_subjects, int c_classes,
                      const AuxSpec& aux, std::uint64_t seed)
        : cfg_(cfg), m_subjects_(m_subjects), c_classes_(c_classes) {
        Rng rng(mix_seed(seed, "adversary"));
        if (cfg.mode == CensorMode::complementary) {
            const int k1 = latent_half_split(latent_dim);
            adv_ = ModelBundle::make(
                NetSpec::mlp(k1, aux.adversary_hidden, m_subjects, Activation::softmax), rng,
                aux.lr, aux.weight_decay);
            adv2_ = ModelBundle::make(
                NetSpec::mlp(latent_dim - k1, aux.adversary_hidden, m_subjects, Activation::softmax),
                rng, aux.lr, aux.weight_decay);
        } else {
            const int in = cfg.mode == CensorMode::conditional ? latent_dim + c_classes : latent_dim;
            adv_ = ModelBundle::make(
                NetSpec::mlp(in, aux.adversary_hidden, m_subjects, Activation::softmax), rng, aux.lr,
                aux.weight_decay);
        }
    }

    bool has_aux() const override { return true; }

    void aux_update(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                    int epoch) override {
        if (cfg_.mode == CensorMode::complementary) {
            const int k1 = latent_half_split(static_cast<int>(z.cols()));
            train_one(adv_, z.leftCols(k1), s, epoch);
            train_one(adv2_, z.rightCols(z.cols() - k1), s, epoch);
        } else if (cfg_.mode == CensorMode::conditional) {
            Mat input(z.rows(), z.cols() + c_classes_);
            input << z, one_hot(y, c_classes_);
            train_one(adv_, input, s, epoch);
        } else {
            train_one(adv_, z, s, epoch);
        }
    }

    PenaltyOutput penalty(const Mat& z, const std::vector<int>& s,
                          const std::vector<int>& y) override {
        return adversarial_penalty(z, s, y, m_subjects_, c_classes_, cfg_.mode, adv_.params,
                                   cfg_.mode == CensorMode::complementary ? &adv2_.params : nullptr);
    }

    std::vector<std::pair<std::string, const ModelBundle*>> aux_models() const override {
        if (cfg_.mode == CensorMode::complementary)
            return {{"adversary_z1", &adv_}, {"adversary_z2", &adv2_}};
        return {{"adversary", &adv_}};
    }

private:
    // Plain batch-mean subject cross entropy for the adversary's own objective.
    void train_one(ModelBundle& model, const Mat& input, const std::vector<int>& s, int epoch) {
        model.params.zero_grads();
        const ForwardResult fr = forward(model.params, input);
        const Eigen::Index n = input.rows();
        Mat cot = Mat::Zero(n, model.params.spec.output());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = std::max(fr.out(i, s[i]), kProbFloor);
            cot(i, s[i]) = -1.0 / (p * static_cast<double>(n));
        }
        backward(model.params, fr.tape, cot);
        optim_step(model.params, model.opt, epoch);
    }

    CensorConfig cfg_;
    int m_subjects_;
    int c_classes_;
    ModelBundle adv_;
    ModelBundle adv2_;
};

class MigeEngine final : public CensorEngine {
public:
    MigeEngine(const CensorConfig& cfg, int m_subjects, int c_classes)
        : cfg_(cfg), m_subjects_(m_subjects), c_classes_(c_classes) {}

    PenaltyOutput penalty(const Mat& z, const std::vector<int>& s,
                          const std::vector<int>& y) override {
        return mige_penalty(z, s, y, m_subjects_, c_classes_, cfg_.mode, cfg_.score);
    }

private:
    CensorConfig cfg_;
    int m_subjects_;
    int c_classes_;
};

class MmdEngine final : public CensorEngine {
public:
    MmdEngine(const CensorConfig& cfg, int m_subjects, int c_classes)
        : cfg_(cfg), m_subjects_(m_subjects), c_classes_(c_classes) {}

    PenaltyOutput penalty(const Mat& z, const std::vector<int>& s,
                          const std::vector<int>& y) override {
        Mat grad;
        const MmdPenaltyResult r = mmd_penalty(z, s, y, m_subjects_, c_classes_, cfg_.mode,
                                               cfg_.mmd_lengthscale, &grad);
        PenaltyOutput out;
        out.penalty = r.penalty;
        if (r.complementary) {
            out.penalty_z1 = r.penalty_z1;
            out.penalty_z2 = r.penalty_z2;
        }
        out.latent_cotangents = std::move(grad);
        out.terms_computed = r.terms_computed;
        out.terms_skipped = r.terms_skipped;
        return out;
    }

private:
    CensorConfig cfg_;
    int m_subjects_;
    int c_classes_;
};

class PairMmdEngine final : public CensorEngine {
public:
    PairMmdEngine(const CensorConfig& cfg, int m_subjects, int c_classes, std::uint64_t seed)
        : cfg_(cfg), m_subjects_(m_subjects), c_classes_(c_classes),
          rng_(mix_seed(seed, "pairmmd")) {}

    PenaltyOutput penalty(const Mat& z, const std::vector<int>& s,
                          const std::vector<int>& y) override {
        Mat grad;
        const MmdPenaltyResult r =
            pairmmd_penalty(z, s, y, m_subjects_, c_classes_, cfg_.mode, cfg_.pair,
                            cfg_.mmd_lengthscale, rng_, cfg_.average_pairs, &grad);
        PenaltyOutput out;
        out.penalty = r.penalty;
        if (r.complementary) {
            out.penalty_z1 = r.penalty_z1;
            out.penalty_z2 = r.penalty_z2;
        }
        out.latent_cotangents = std::move(grad);
        out.terms_computed = r.terms_computed;
        out.terms_skipped = r.terms_skipped;
        return out;
    }

private:
    CensorConfig cfg_;
    int m_subjects_;
    int c_classes_;
    Rng rng_;
};

class BeganEngine final : public CensorEngine {
public:
    BeganEngine(const CensorConfig& cfg, int latent_dim, int m_subjects, int c_classes,
                const AuxSpec& aux, std::uint64_t seed)
        : cfg_(cfg), m_subjects_(m_subjects), c_classes_(c_classes) {
        Rng rng(mix_seed(seed, "discriminator"));
        if (cfg.mode == CensorMode::complementary) {
            const int k1 = latent_half_split(latent_dim);
            disc_ = ModelBundle::make(NetSpec::mlp(k1, aux.disc_hidden, k1), rng, aux.lr,
                                      aux.weight_decay);
            disc2_ = ModelBundle::make(
                NetSpec::mlp(latent_dim - k1, aux.disc_hidden, latent_dim - k1), rng, aux.lr,
                aux.weight_decay);
        } else {
            disc_ = ModelBundle::make(NetSpec::mlp(latent_dim, aux.disc_hidden, latent_dim), rng,
                                      aux.lr, aux.weight_decay);
        }
    }

    bool has_aux() const override { return true; }

    void aux_update(const Mat& z, const std::vector<int>& s, const std::vector<int>& y,
                    int epoch) override {
        if (cfg_.mode == CensorMode::complementary) {
            const int k1 = latent_half_split(static_cast<int>(z.cols()));
            disc_step(disc_, z.leftCols(k1), s, y, control_.k1, epoch);
            disc_step(disc2_, z.rightCols(z.cols() - k1), s, y, control_.k2, epoch);
        } else {
            disc_step(disc_, z, s, y, control_.k1, epoch);
        }
    }

    PenaltyOutput penalty(const Mat& z, const std::vector<int>& s,
                          const std::vector<int>& y) override {
        PenaltyOutput out = began_penalty(z, s, y, m_subjects_, c_classes_, cfg_.mode, disc_.params,
                                          cfg_.mode == CensorMode::complementary ? &disc2_.params
                                                                                 : nullptr,
                                          control_, cfg_.began_beta, cfg_.began_diversity);
        if (out.k1_next) control_.k1 = *out.k1_next;
        if (out.k2_next) control_.k2 = *out.k2_next;
        return out;
    }

    std::vector<std::pair<std::string, const ModelBundle*>> aux_models() const override {
        if (cfg_.mode == CensorMode::complementary)
            return {{"discriminator_z1", &disc_}, {"discriminator_z2", &disc2_}};
        return {{"discriminator", &disc_}};
    }

    std::vector<double> control_values() const override {
        if (cfg_.mode == CensorMode::complementary) return {control_.k1, control_.k2};
        return {control_.k1};
    }

private:
    // Minimize L_full - k * L_subject over the discriminator parameters with
    // the latent batch held constant.
    void disc_step(ModelBundle& model, const Mat& z, const std::vector<int>& s,
                   const std::vector<int>& y, double k, int epoch) {
        const Eigen::Index n = z.rows();
        const double denom = static_cast<double>(z.cols());
        std::vector<std::vector<int>> class_sets;
        if (cfg_.mode == CensorMode::conditional) {
            class_sets = group_by(y, c_classes_, "class");
        } else {
            std::vector<int> full(n);
            for (Eigen::Index i = 0; i < n; ++i) full[i] = static_cast<int>(i);
            class_sets.push_back(full);
        }
        Vec w(n);
        w.setZero();
        for (const auto& rows : class_sets) {
            if (rows.empty()) continue;
            const double wf = 1.0 / (static_cast<double>(rows.size()) * denom);
            std::vector<std::vector<int>> cells(m_subjects_);
            for (const int i : rows) cells[s[i]].push_back(i);
            for (const int i : rows) w[i] += wf;
            for (int m = 0; m < m_subjects_; ++m) {
                if (cells[m].empty()) continue;
                const double ws = k / (static_cast<double>(m_subjects_) * cells[m].size() * denom);
                for (const int i : cells[m]) w[i] -= ws;
            }
        }
        model.params.zero_grads();
        const ForwardResult fr = forward(model.params, z);
        const Mat sgn = (z - fr.out).unaryExpr([](double v) {
            return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        });
        const Mat cot = -(w.asDiagonal() * sgn);  // d(loss)/d(reconstruction)
        backward(model.params, fr.tape, cot);
        optim_step(model.params, model.opt, epoch);
    }

    CensorConfig cfg_;
    int m_subjects_;
    int c_classes_;
    ModelBundle disc_;
    ModelBundle disc2_;
    BeganControl control_;
};

}  // namespace

std::unique_ptr<CensorEngine> make_engine(const CensorConfig& cfg, int latent_dim, int m_subjects,
                                          int c_classes, const AuxSpec& aux, std::uint64_t seed) {
    cfg.validate();
    switch (cfg.method) {
        case CensorMethod::none:
            return nullptr;
        case CensorMethod::adversarial:
            return std::make_unique<AdversarialEngine>(cfg, latent_dim, m_subjects, c_classes, aux,
                                                       seed);
        case CensorMethod::mige:
            return std::make_unique<MigeEngine>(cfg, m_subjects, c_classes);
        case CensorMethod::mmd:
            return std::make_unique<MmdEngine>(cfg, m_subjects, c_classes);
        case CensorMethod::pairmmd:
            return std::make_unique<PairMmdEngine>(cfg, m_subjects, c_classes, seed);
        case CensorMethod::began:
            return std::make_unique<BeganEngine>(cfg, latent_dim, m_subjects, c_classes, aux, seed);
    }
    return nullptr;
}

}  // namespace censor
