#pragma once

#include "censor/censoring.hpp"
#include "censor/data.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace censor {

struct TrainConfig {
    int max_epochs = 500;
    int batch_size = 64;
    double lr = 1e-3;  // alpha_1; epoch t runs at alpha_1 / sqrt(t)
    double weight_decay = 0.01;
    int patience = 75;  // early halt; selection is still min validation loss
    bool stratified_batches = false;
    int latent_dim = 16;
    std::vector<int> encoder_hidden{64};
    AuxSpec aux;
    CensorConfig censor;
    std::uint64_t seed = 1;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;     // weighted CE, mean over batches
    double train_penalty = 0.0;  // applied scalar penalty, mean over batches
    double val_loss = 0.0;       // task weighted CE only
    double val_bacc = 0.0;
    std::map<std::string, double> aux_losses;  // batch means
    std::vector<double> control;               // BEGAN k value(s) at epoch end
};

struct TrainResult {
    ModelBundle encoder;
    ModelBundle classifier;
    std::vector<std::pair<std::string, ModelBundle>> aux_models;
    std::vector<EpochRecord> history;
    int best_epoch = 0;  // 1-based; argmin validation loss
    double best_val_loss = 0.0;
    double best_val_bacc = 0.0;
    std::vector<double> control_trace;     // k1 per training step (BEGAN)
    std::vector<double> control_trace_k2;  // complementary second control
    // Subject relabeling used during training: dense index -> original label.
    std::vector<int> subject_of_dense;
};

// Mean over classes (present in y_true) of per-class recall.
double balanced_accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// One regularized-ERM run, stepwise methods exposed so tests can drive and
// inspect single phases.
class Trainer {
public:
    Trainer(const TrialSet& train_set, const TrialSet& val_set, const TrainConfig& cfg);

    // Phase (a): adv_steps auxiliary updates on a detached latent batch.
    void aux_phase(const std::vector<int>& batch_rows, int epoch);
    // Phase (b): task loss + lambda * penalty, one optimizer step on
    // encoder and classifier. Returns the applied batch loss.
    double encoder_phase(const std::vector<int>& batch_rows, int epoch);

    std::vector<std::vector<int>> make_batches(int epoch);
    void run_epoch(int epoch);
    TrainResult run();

    std::pair<double, double> evaluate(const TrialSet& set) const;  // (loss, bacc)
    Mat encode(const Mat& x) const;
    std::vector<int> predict(const Mat& x) const;

    const ModelBundle& encoder() const { return encoder_; }
    const ModelBundle& classifier() const { return classifier_; }
    CensorEngine* engine() { return engine_.get(); }
    const std::vector<int>& dense_subjects() const { return s_dense_; }
    int effective_subjects() const { return m_eff_; }

private:
    void snapshot_best();

    TrialSet train_;
    TrialSet val_;
    TrainConfig cfg_;
    Vec class_w_;
    std::vector<int> s_dense_;          // per train row
    std::vector<int> subject_of_dense_;
    int m_eff_ = 0;
    ModelBundle encoder_;
    ModelBundle classifier_;
    std::unique_ptr<CensorEngine> engine_;
    Rng shuffle_rng_;

    std::vector<EpochRecord> history_;
    std::vector<double> control_trace_;
    std::vector<double> control_trace_k2_;
    int best_epoch_ = 0;
    double best_val_loss_ = 0.0;
    double best_val_bacc_ = 0.0;
    ModelBundle best_encoder_;
    ModelBundle best_classifier_;
    std::vector<std::pair<std::string, ModelBundle>> best_aux_;
    // Per-epoch accumulators.
    double epoch_loss_ = 0.0;
    double epoch_penalty_ = 0.0;
    std::map<std::string, double> epoch_aux_;
    int epoch_batches_ = 0;
};

TrainResult train(const TrialSet& train_set, const TrialSet& val_set, const TrainConfig& cfg);

// Fresh classifier on a seeded stratified 80/20 split of (latent, subject)
// pairs; returns held-out balanced accuracy, the residual-subject-information
// measure used by the censoring checks.
struct ProbeSpec {
    std::vector<int> hidden{32};
    int epochs = 150;
    int batch_size = 64;
    double lr = 1e-2;
    double weight_decay = 0.0;
};

double subject_probe(const Mat& latents, const std::vector<int>& s, const ProbeSpec& spec,
                     std::uint64_t seed);

}  // namespace censor
