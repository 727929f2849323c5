#pragma once

#include "censor/numerics.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace censor {

// Labeled trials: one row of X per trial, flattened channel-major
// (feature index = channel * samples_per_channel + sample). Labels are dense
// 0-based internally; the original names live in the metadata maps.
struct TrialSet {
    Mat x;                   // N x D
    std::vector<int> y;      // task labels in [0, C)
    std::vector<int> s;      // subject labels in [0, M)
    int n_classes = 0;
    int n_subjects = 0;
    int channels = 1;
    int samples_per_channel = 0;
    std::vector<std::string> class_names;
    std::vector<std::string> subject_names;
    std::string source;

    Eigen::Index size() const { return x.rows(); }
    int dim() const { return static_cast<int>(x.cols()); }
    std::vector<int> class_counts() const;
    std::vector<int> subject_counts() const;
    void validate() const;
};

// Within each trial, standardize each channel to mean 0 and population std 1;
// constant channels map to zeros through a 1e-8 std floor. Labels untouched.
TrialSet zscore_trials(const TrialSet& ts);

// Synthetic subject-shift generator: x = g_m .* (t_c + o_m) + noise, with
// per-class templates t_c, per-subject offsets o_m and gains g_m drawn once
// per seed. label_skew tilts p(y|s) so class priors differ across subjects.
struct SynthConfig {
    int subjects = 6;
    int classes = 2;
    int channels = 8;
    int samples_per_channel = 8;
    int trials_per_subject = 200;
    double subject_offset_scale = 1.0;
    double subject_gain_scale = 0.1;
    double class_template_scale = 1.0;
    double noise_scale = 0.5;
    double label_skew = 0.0;  // in [0,1)
    std::uint64_t seed = 1;

    void validate() const;
};

TrialSet synth_generate(const SynthConfig& cfg);

// Delimited-text ingestion. The schema names the subject and label columns;
// remaining columns (or an explicit list) are features.
struct TableSchema {
    std::string subject_column = "subject";
    std::string label_column = "label";
    std::vector<std::string> feature_columns;  // empty = all remaining columns
    char delimiter = ',';
    int channels = 1;  // declared layout; samples_per_channel = D / channels
};

TrialSet load_table(const std::string& path, const TableSchema& schema);
void save_table(const std::string& path, const TrialSet& ts, char delimiter = ',');

// Versioned binary cache with checksum.
void save_cache(const std::string& path, const TrialSet& ts);
TrialSet load_cache(const std::string& path);

// Loads either a cache file (by magic) or a delimited table.
TrialSet load_any(const std::string& path, const TableSchema& schema);

struct LosoSplit {
    TrialSet train;
    TrialSet val;
    TrialSet test;
};

// Partition by subject label; val/test get exactly one subject each.
LosoSplit loso_split(const TrialSet& ts, int val_subject, int test_subject);

}  // namespace censor
