#include "censor/data.hpp"

#include "censor/error.hpp"
#include "censor/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace censor {

std::vector<int> TrialSet::class_counts() const {
    std::vector<int> counts(n_classes, 0);
    for (const int yi : y) ++counts[yi];
    return counts;
}

std::vector<int> TrialSet::subject_counts() const {
    std::vector<int> counts(n_subjects, 0);
    for (const int si : s) ++counts[si];
    return counts;
}

void TrialSet::validate() const {
    if (x.rows() < 1) throw DataError("TrialSet: empty");
    if (static_cast<Eigen::Index>(y.size()) != x.rows() ||
        static_cast<Eigen::Index>(s.size()) != x.rows())
        throw DataError("TrialSet: label count mismatch");
    if (channels < 1 || samples_per_channel < 1 ||
        channels * samples_per_channel != static_cast<int>(x.cols()))
        throw DataError("TrialSet: channel layout does not match feature dimension");
    for (const int yi : y)
        if (yi < 0 || yi >= n_classes) throw DataError("TrialSet: class label out of range");
    for (const int si : s)
        if (si < 0 || si >= n_subjects) throw DataError("TrialSet: subject label out of range");
    const auto sc = subject_counts();
    for (int m = 0; m < n_subjects; ++m)
        if (sc[m] == 0) throw DataError("TrialSet: subject " + std::to_string(m) + " has no trials");
}

TrialSet zscore_trials(const TrialSet& ts) {
    if (ts.samples_per_channel < 2)
        throw DataError("zscore_trials: need at least 2 samples per channel");
    TrialSet out = ts;
    const int sc = ts.samples_per_channel;
    for (Eigen::Index i = 0; i < ts.x.rows(); ++i) {
        for (int ch = 0; ch < ts.channels; ++ch) {
            auto seg = out.x.row(i).segment(static_cast<Eigen::Index>(ch) * sc, sc);
            const double mean = seg.mean();
            const double var = (seg.array() - mean).square().sum() / sc;  // population
            const double stdev = std::sqrt(var);
            seg = (seg.array() - mean) / std::max(stdev, 1e-8);
        }
    }
    return out;
}

void SynthConfig::validate() const {
    if (subjects < 1 || classes < 1 || channels < 1 || samples_per_channel < 1 ||
        trials_per_subject < 1)
        throw ConfigError("synth_generate: counts must be positive");
    if (subject_offset_scale < 0 || subject_gain_scale < 0 || class_template_scale < 0 ||
        noise_scale < 0)
        throw ConfigError("synth_generate: scales must be non-negative");
    if (!(label_skew >= 0.0 && label_skew < 1.0))
        throw ConfigError("synth_generate: label_skew must lie in [0,1)");
}

TrialSet synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    const int d = cfg.channels * cfg.samples_per_channel;
    const int n = cfg.subjects * cfg.trials_per_subject;

    Mat templates(cfg.classes, d);
    for (int c = 0; c < cfg.classes; ++c)
        for (int j = 0; j < d; ++j) templates(c, j) = cfg.class_template_scale * rng.gaussian();
    Mat offsets(cfg.subjects, d);
    Mat gains(cfg.subjects, d);
    for (int m = 0; m < cfg.subjects; ++m)
        for (int j = 0; j < d; ++j) {
            offsets(m, j) = cfg.subject_offset_scale * rng.gaussian();
            gains(m, j) = 1.0 + cfg.subject_gain_scale * rng.gaussian();
        }

    TrialSet ts;
    ts.x.resize(n, d);
    ts.y.resize(n);
    ts.s.resize(n);
    ts.n_classes = cfg.classes;
    ts.n_subjects = cfg.subjects;
    ts.channels = cfg.channels;
    ts.samples_per_channel = cfg.samples_per_channel;
    ts.source = "synthetic";
    for (int c = 0; c < cfg.classes; ++c) ts.class_names.push_back("c" + std::to_string(c));
    for (int m = 0; m < cfg.subjects; ++m) ts.subject_names.push_back("s" + std::to_string(m));

    int row = 0;
    for (int m = 0; m < cfg.subjects; ++m) {
        // Tilted class prior: subject m leans toward class (m mod C).
        const int favored = m % cfg.classes;
        std::vector<double> cumulative(cfg.classes);
        double acc = 0.0;
        for (int c = 0; c < cfg.classes; ++c) {
            double p = (1.0 - cfg.label_skew) / cfg.classes;
            if (c == favored) p += cfg.label_skew;
            acc += p;
            cumulative[c] = acc;
        }
        for (int t = 0; t < cfg.trials_per_subject; ++t, ++row) {
            const double u = rng.uniform();
            int c = 0;
            while (c + 1 < cfg.classes && u > cumulative[c]) ++c;
            ts.y[row] = c;
            ts.s[row] = m;
            for (int j = 0; j < d; ++j)
                ts.x(row, j) = gains(m, j) * (templates(c, j) + offsets(m, j)) +
                               cfg.noise_scale * rng.gaussian();
        }
    }
    ts.validate();
    return ts;
}

// ---------------------------------------------------------------------------
// Delimited-text tables

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, delim)) out.push_back(field);
    if (!line.empty() && line.back() == delim) out.push_back("");
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

TrialSet load_table(const std::string& path, const TableSchema& schema) {
    std::ifstream is(path);
    if (!is) throw DataError("load_table: cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw DataError("load_table: empty file " + path);

    const auto header = split_line(line, schema.delimiter);
    int subject_col = -1, label_col = -1;
    std::vector<int> feature_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name = trim(header[c]);
        if (name == schema.subject_column) subject_col = static_cast<int>(c);
        else if (name == schema.label_column) label_col = static_cast<int>(c);
    }
    if (subject_col < 0) throw DataError("load_table: missing subject column '" + schema.subject_column + "'");
    if (label_col < 0) throw DataError("load_table: missing label column '" + schema.label_column + "'");
    if (schema.feature_columns.empty()) {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (static_cast<int>(c) != subject_col && static_cast<int>(c) != label_col)
                feature_cols.push_back(static_cast<int>(c));
    } else {
        for (const auto& want : schema.feature_columns) {
            int found = -1;
            for (std::size_t c = 0; c < header.size(); ++c)
                if (trim(header[c]) == want) found = static_cast<int>(c);
            if (found < 0) throw DataError("load_table: missing feature column '" + want + "'");
            feature_cols.push_back(found);
        }
    }
    if (feature_cols.empty()) throw DataError("load_table: no feature columns");

    std::vector<std::vector<double>> rows;
    std::vector<std::string> subj_raw, label_raw;
    int line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_line(line, schema.delimiter);
        if (fields.size() != header.size())
            throw DataError("load_table: row " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
        subj_raw.push_back(trim(fields[subject_col]));
        label_raw.push_back(trim(fields[label_col]));
        std::vector<double> feats(feature_cols.size());
        for (std::size_t f = 0; f < feature_cols.size(); ++f) {
            const std::string cell = trim(fields[feature_cols[f]]);
            char* end = nullptr;
            feats[f] = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size())
                throw DataError("load_table: non-numeric feature at row " + std::to_string(line_no) +
                                ", column '" + trim(header[feature_cols[f]]) + "'");
        }
        rows.push_back(std::move(feats));
    }
    if (rows.empty()) throw DataError("load_table: no data rows in " + path);

    // Dense re-indexing in first-appearance order; the maps go to metadata.
    std::map<std::string, int> subj_map, label_map;
    TrialSet ts;
    ts.y.resize(rows.size());
    ts.s.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto [sit, snew] = subj_map.try_emplace(subj_raw[i], static_cast<int>(subj_map.size()));
        auto [lit, lnew] = label_map.try_emplace(label_raw[i], static_cast<int>(label_map.size()));
        if (snew) ts.subject_names.push_back(sit->first);
        if (lnew) ts.class_names.push_back(lit->first);
        ts.s[i] = sit->second;
        ts.y[i] = lit->second;
    }
    ts.n_subjects = static_cast<int>(subj_map.size());
    ts.n_classes = static_cast<int>(label_map.size());
    ts.x.resize(rows.size(), feature_cols.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t f = 0; f < feature_cols.size(); ++f) ts.x(i, f) = rows[i][f];
    const int d = static_cast<int>(feature_cols.size());
    if (schema.channels < 1 || d % schema.channels != 0)
        throw DataError("load_table: feature count " + std::to_string(d) +
                        " is not divisible by channels " + std::to_string(schema.channels));
    ts.channels = schema.channels;
    ts.samples_per_channel = d / schema.channels;
    ts.source = path;
    ts.validate();
    return ts;
}

void save_table(const std::string& path, const TrialSet& ts, char delimiter) {
    std::ofstream os(path);
    if (!os) throw DataError("save_table: cannot open " + path + " for writing");
    os << "subject" << delimiter << "label";
    for (int j = 0; j < ts.dim(); ++j) os << delimiter << "f" << j;
    os << "\n";
    char buf[40];
    for (Eigen::Index i = 0; i < ts.x.rows(); ++i) {
        os << ts.subject_names[ts.s[i]] << delimiter << ts.class_names[ts.y[i]];
        for (Eigen::Index j = 0; j < ts.x.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", ts.x(i, j));
            os << delimiter << buf;
        }
        os << "\n";
    }
    if (!os) throw DataError("save_table: write failed");
}

// ---------------------------------------------------------------------------
// Binary cache

namespace {

constexpr char kCacheMagic[8] = {'C', 'N', 'S', 'R', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kCacheVersion = 1;

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : bytes) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void put(std::string& buf, const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::string& buf, const std::string& s) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct CacheReader {
    const std::string& buf;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > buf.size()) throw DataError("cache: truncated");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        if (pos + n > buf.size()) throw DataError("cache: truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_cache(const std::string& path, const TrialSet& ts) {
    ts.validate();
    std::string buf;
    put<std::uint32_t>(buf, kCacheVersion);
    put<std::int64_t>(buf, ts.x.rows());
    put<std::int32_t>(buf, static_cast<std::int32_t>(ts.x.cols()));
    put<std::int32_t>(buf, ts.n_classes);
    put<std::int32_t>(buf, ts.n_subjects);
    put<std::int32_t>(buf, ts.channels);
    put<std::int32_t>(buf, ts.samples_per_channel);
    for (const int v : ts.y) put<std::int32_t>(buf, v);
    for (const int v : ts.s) put<std::int32_t>(buf, v);
    for (Eigen::Index i = 0; i < ts.x.rows(); ++i)
        for (Eigen::Index j = 0; j < ts.x.cols(); ++j) put<double>(buf, ts.x(i, j));
    for (const auto& name : ts.class_names) put_string(buf, name);
    for (const auto& name : ts.subject_names) put_string(buf, name);
    put_string(buf, ts.source);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("save_cache: cannot open " + path + " for writing");
    os.write(kCacheMagic, sizeof(kCacheMagic));
    const std::uint64_t checksum = fnv1a(buf);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    os.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!os) throw DataError("save_cache: write failed");
}

TrialSet load_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("load_cache: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCacheMagic, sizeof(kCacheMagic)) != 0)
        throw DataError("load_cache: bad magic in " + path);
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (rest.size() < sizeof(std::uint64_t)) throw DataError("load_cache: truncated");
    std::uint64_t checksum;
    std::memcpy(&checksum, rest.data() + rest.size() - sizeof(checksum), sizeof(checksum));
    rest.resize(rest.size() - sizeof(checksum));
    if (fnv1a(rest) != checksum) throw DataError("load_cache: checksum mismatch");

    CacheReader r{rest};
    if (r.get<std::uint32_t>() != kCacheVersion) throw DataError("load_cache: unsupported version");
    TrialSet ts;
    const auto n = r.get<std::int64_t>();
    const auto d = r.get<std::int32_t>();
    ts.n_classes = r.get<std::int32_t>();
    ts.n_subjects = r.get<std::int32_t>();
    ts.channels = r.get<std::int32_t>();
    ts.samples_per_channel = r.get<std::int32_t>();
    ts.y.resize(n);
    ts.s.resize(n);
    for (auto& v : ts.y) v = r.get<std::int32_t>();
    for (auto& v : ts.s) v = r.get<std::int32_t>();
    ts.x.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) ts.x(i, j) = r.get<double>();
    for (int c = 0; c < ts.n_classes; ++c) ts.class_names.push_back(r.get_string());
    for (int m = 0; m < ts.n_subjects; ++m) ts.subject_names.push_back(r.get_string());
    ts.source = r.get_string();
    ts.validate();
    return ts;
}

TrialSet load_any(const std::string& path, const TableSchema& schema) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    char magic[8] = {0};
    is.read(magic, sizeof(magic));
    is.close();
    if (std::memcmp(magic, kCacheMagic, sizeof(kCacheMagic)) == 0) return load_cache(path);
    return load_table(path, schema);
}

// ---------------------------------------------------------------------------

namespace {

TrialSet subset_rows(const TrialSet& ts, const std::vector<int>& rows) {
    TrialSet out = ts;
    out.x.resize(rows.size(), ts.x.cols());
    out.y.resize(rows.size());
    out.s.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.x.row(static_cast<Eigen::Index>(i)) = ts.x.row(rows[i]);
        out.y[i] = ts.y[rows[i]];
        out.s[i] = ts.s[rows[i]];
    }
    return out;
}

}  // namespace

LosoSplit loso_split(const TrialSet& ts, int val_subject, int test_subject) {
    if (val_subject == test_subject) throw ConfigError("loso_split: val and test subject must differ");
    if (val_subject < 0 || val_subject >= ts.n_subjects || test_subject < 0 ||
        test_subject >= ts.n_subjects)
        throw DataError("loso_split: subject not present");
    if (ts.n_subjects < 3) throw DataError("loso_split: no training subjects remain");
    std::vector<int> train_rows, val_rows, test_rows;
    for (Eigen::Index i = 0; i < ts.size(); ++i) {
        if (ts.s[i] == val_subject) val_rows.push_back(static_cast<int>(i));
        else if (ts.s[i] == test_subject) test_rows.push_back(static_cast<int>(i));
        else train_rows.push_back(static_cast<int>(i));
    }
    LosoSplit split;
    split.train = subset_rows(ts, train_rows);
    split.val = subset_rows(ts, val_rows);
    split.test = subset_rows(ts, test_rows);
    return split;
}

}  // namespace censor
