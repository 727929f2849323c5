#pragma once

#include "censor/training.hpp"

#include <string>
#include <utility>
#include <vector>

namespace censor {

// The explored hyperparameter values. Score-estimator axes apply only to the
// MIGE method, the pair-policy axis only to pairmmd. "mige-default" is the
// MIGE implementation's stock estimator (SSGE); it enumerates to the same
// configuration as "ssge" and duplicates are dropped.
struct HyperGrid {
    std::vector<CensorMethod> methods{CensorMethod::adversarial, CensorMethod::mige,
                                      CensorMethod::mmd, CensorMethod::pairmmd,
                                      CensorMethod::began};
    std::vector<CensorMode> modes{CensorMode::marginal, CensorMode::conditional,
                                  CensorMode::complementary};
    std::vector<double> lambdas_adv{1.0, 0.3, 0.1, 0.03, 0.01};  // adv, mige, began
    std::vector<double> lambdas_mmd{1.0, 3.0, 10.0, 30.0, 100.0};  // mmd, pairmmd
    std::vector<std::string> score_estimators{"ssge", "mige-default", "nu_method", "tikhonov",
                                              "stein"};
    std::vector<double> score_regs{0.01, 0.001, 0.0001};
    std::vector<std::string> lengthscales{"median", "perplexity"};

    static HyperGrid full() { return {}; }
    // Desk-scale grid: first `lambdas_per_method` lambda values, marginal mode
    // only, MIGE pinned to one stein configuration, bernoulli pairs only.
    static HyperGrid reduced(int lambdas_per_method = 2);

    std::vector<CensorConfig> enumerate(int m_subjects) const;
};

struct TuneEntry {
    CensorConfig config;
    std::string key;
    double val_bacc = 0.0;
    double test_bacc = 0.0;
    int best_epoch = 0;
    double seconds = 0.0;
};

struct TuneResult {
    std::vector<TuneEntry> all;                                        // enumeration order
    std::vector<std::pair<std::string, std::vector<TuneEntry>>> top;   // per method, ranked
    int val_subject = 0;
    int test_subject = 0;
};

struct FoldRecord {
    int fold = 0;
    int val_subject = 0;
    int test_subject = 0;
    double val_bacc = 0.0;
    double test_bacc = 0.0;
    int best_epoch = 0;
    double seconds = 0.0;
};

struct CvEntry {
    CensorConfig config;
    std::string method;
    std::string key;
    std::vector<FoldRecord> folds;

    std::vector<double> val_accs() const;
    std::vector<double> test_accs() const;
};

struct CvReport {
    std::vector<CvEntry> entries;
    std::uint64_t seed = 0;
    int n_subjects = 0;
};

struct Selection {
    std::string method;
    std::string key;
    double q25_val = 0.0;
    CensorConfig config;
};

// One training run per grid config on the fixed (val, test) split; top_k
// configs per method ranked by validation balanced accuracy, ties broken by
// smaller lambda then enumeration order.
TuneResult tune(const TrialSet& ts, const HyperGrid& grid,
                std::pair<int, int> fixed_split, const TrainConfig& base, std::uint64_t seed,
                int top_k = 3, int workers = 1);

// Rotate the test subject through all M subjects (validation = next subject
// cyclically); a lambda = 0 baseline entry is always included.
CvReport cross_validate(const TrialSet& ts, const std::vector<CensorConfig>& configs,
                        const TrainConfig& base, std::uint64_t seed, int workers = 1);

// Entry whose `quantile` of validation accuracies is highest; ties prefer the
// baseline, then lexicographic (method, key) order.
Selection autotransfer_select(const CvReport& report, double quantile = 0.25);

// Writes folds.csv, summary.json (selection + quartiles + per-method-best
// view), and the two SVG panels (per-entry fold scores; accuracy vs test
// subject sorted by baseline).
void emit_report(const CvReport& report, const std::string& out_dir, double quantile = 0.25);

void save_cv_report(const std::string& path, const CvReport& report);
CvReport load_cv_report(const std::string& path);

struct AutoTransferOptions {
    HyperGrid grid;
    TrainConfig base;
    std::pair<int, int> tune_split{0, 1};  // (val, test)
    int top_k = 3;
    int workers = 1;
    double quantile = 0.25;
};

struct AutoTransferResult {
    TuneResult tuning;
    CvReport report;
    Selection selection;
};

// tune -> cross-validate the per-method finalists -> select -> emit.
AutoTransferResult autotransfer_run(const TrialSet& ts, const AutoTransferOptions& opts,
                                    std::uint64_t seed, const std::string& out_dir);

}  // namespace censor
