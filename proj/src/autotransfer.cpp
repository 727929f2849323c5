#include "censor/autotransfer.hpp"

#include "censor/error.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <thread>

namespace censor {

namespace {

void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || count <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= count) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min<int>(workers, static_cast<int>(count));
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

std::vector<int> predict_with(const ModelBundle& encoder, const ModelBundle& classifier,
                              const Mat& x) {
    const Mat probs = forward(classifier.params, forward(encoder.params, x).out).out;
    std::vector<int> out(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best;
        probs.row(i).maxCoeff(&best);
        out[i] = static_cast<int>(best);
    }
    return out;
}

struct RunOutcome {
    double val_bacc = 0.0;
    double test_bacc = 0.0;
    int best_epoch = 0;
    double seconds = 0.0;
};

RunOutcome run_one(const TrialSet& ts, const CensorConfig& censor_cfg, const TrainConfig& base,
                   int val_subject, int test_subject, std::uint64_t run_seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const LosoSplit split = loso_split(ts, val_subject, test_subject);
    TrainConfig cfg = base;
    cfg.censor = censor_cfg;
    cfg.seed = run_seed;
    const TrainResult res = train(split.train, split.val, cfg);
    RunOutcome out;
    out.val_bacc = res.best_val_bacc;
    out.best_epoch = res.best_epoch;
    out.test_bacc = balanced_accuracy(
        split.test.y, predict_with(res.encoder, res.classifier, split.test.x));
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

}  // namespace

HyperGrid HyperGrid::reduced(int lambdas_per_method) {
    HyperGrid g;
    g.modes = {CensorMode::marginal};
    if (lambdas_per_method < static_cast<int>(g.lambdas_adv.size()))
        g.lambdas_adv.resize(lambdas_per_method);
    if (lambdas_per_method < static_cast<int>(g.lambdas_mmd.size()))
        g.lambdas_mmd.resize(lambdas_per_method);
    g.score_estimators = {"stein"};
    g.score_regs = {0.001};
    g.lengthscales = {"median"};
    return g;
}

std::vector<CensorConfig> HyperGrid::enumerate(int m_subjects) const {
    std::vector<CensorConfig> configs;
    std::set<std::string> seen;
    auto push = [&](const CensorConfig& cfg) {
        if (seen.insert(cfg.key()).second) configs.push_back(cfg);
    };

    auto lengthscale_of = [](const std::string& name) {
        if (name == "median") return LengthScalePolicy::Median();
        if (name == "perplexity") return LengthScalePolicy::Perplexity(8.0);
        throw ConfigError("unknown length-scale policy in grid: " + name);
    };

    for (const CensorMethod method : methods) {
        const auto& lambdas =
            (method == CensorMethod::mmd || method == CensorMethod::pairmmd) ? lambdas_mmd
                                                                             : lambdas_adv;
        for (const CensorMode mode : modes) {
            for (const double lam : lambdas) {
                CensorConfig cfg;
                cfg.method = method;
                cfg.mode = mode;
                cfg.lambda = lam;
                switch (method) {
                    case CensorMethod::mige: {
                        for (const auto& est : score_estimators) {
                            if (est == "ssge" || est == "mige-default") {
                                // SSGE has no gamma knob; single median-scale entry.
                                cfg.score = ScoreConfig{};
                                cfg.score.kind = ScoreKind::ssge;
                                push(cfg);
                                continue;
                            }
                            for (const double gamma : score_regs) {
                                for (const auto& ls : lengthscales) {
                                    cfg.score = ScoreConfig{};
                                    cfg.score.kind = score_kind_from_name(est);
                                    cfg.score.score_reg = gamma;
                                    cfg.score.lengthscale = lengthscale_of(ls);
                                    push(cfg);
                                }
                            }
                        }
                        break;
                    }
                    case CensorMethod::pairmmd: {
                        cfg.pair = PairPolicy{PairPolicy::Kind::bernoulli, 0.5, 2};
                        push(cfg);
                        CensorConfig clique = cfg;
                        clique.pair =
                            PairPolicy{PairPolicy::Kind::clique, 0.5, std::min(4, m_subjects)};
                        push(clique);
                        break;
                    }
                    default:
                        push(cfg);
                        break;
                }
            }
        }
    }
    return configs;
}

std::vector<double> CvEntry::val_accs() const {
    std::vector<double> out;
    for (const auto& f : folds) out.push_back(f.val_bacc);
    return out;
}

std::vector<double> CvEntry::test_accs() const {
    std::vector<double> out;
    for (const auto& f : folds) out.push_back(f.test_bacc);
    return out;
}

TuneResult tune(const TrialSet& ts, const HyperGrid& grid, std::pair<int, int> fixed_split,
                const TrainConfig& base, std::uint64_t seed, int top_k, int workers) {
    if (ts.n_subjects < 3) throw DataError("tune: need at least 3 subjects");
    const auto configs = grid.enumerate(ts.n_subjects);
    if (configs.empty()) throw ConfigError("tune: empty grid");

    TuneResult result;
    result.val_subject = fixed_split.first;
    result.test_subject = fixed_split.second;
    result.all.resize(configs.size());
    parallel_for(configs.size(), workers, [&](std::size_t i) {
        TuneEntry e;
        e.config = configs[i];
        e.key = configs[i].key();
        const RunOutcome out = run_one(ts, configs[i], base, fixed_split.first, fixed_split.second,
                                       mix_seed(seed, "tune|" + e.key));
        e.val_bacc = out.val_bacc;
        e.test_bacc = out.test_bacc;
        e.best_epoch = out.best_epoch;
        e.seconds = out.seconds;
        result.all[i] = e;
    });

    // Rank per method: val accuracy desc, then smaller lambda, then enumeration order.
    std::map<std::string, std::vector<std::size_t>> per_method;
    for (std::size_t i = 0; i < result.all.size(); ++i)
        per_method[censor_method_name(result.all[i].config.method)].push_back(i);
    for (const CensorMethod m : grid.methods) {
        const std::string name = censor_method_name(m);
        auto it = per_method.find(name);
        if (it == per_method.end()) continue;
        auto& idx = it->second;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const TuneEntry& ea = result.all[a];
            const TuneEntry& eb = result.all[b];
            if (ea.val_bacc != eb.val_bacc) return ea.val_bacc > eb.val_bacc;
            if (ea.config.lambda != eb.config.lambda) return ea.config.lambda < eb.config.lambda;
            return a < b;
        });
        std::vector<TuneEntry> top;
        for (std::size_t i = 0; i < idx.size() && static_cast<int>(i) < top_k; ++i)
            top.push_back(result.all[idx[i]]);
        result.top.emplace_back(name, std::move(top));
    }
    return result;
}

CvReport cross_validate(const TrialSet& ts, const std::vector<CensorConfig>& configs,
                        const TrainConfig& base, std::uint64_t seed, int workers) {
    if (ts.n_subjects < 3) throw DataError("cross_validate: need at least 3 subjects");
    const int m = ts.n_subjects;

    CvReport report;
    report.seed = seed;
    report.n_subjects = m;

    // The lambda = 0 baseline is always present.
    std::vector<CensorConfig> all_configs;
    CensorConfig baseline;
    baseline.method = CensorMethod::none;
    baseline.lambda = 0.0;
    all_configs.push_back(baseline);
    std::set<std::string> seen{baseline.key()};
    for (const auto& cfg : configs)
        if (seen.insert(cfg.key()).second) all_configs.push_back(cfg);

    report.entries.resize(all_configs.size());
    for (std::size_t e = 0; e < all_configs.size(); ++e) {
        report.entries[e].config = all_configs[e];
        report.entries[e].method = censor_method_name(all_configs[e].method);
        report.entries[e].key = all_configs[e].key();
        report.entries[e].folds.resize(m);
    }

    struct Job {
        std::size_t entry;
        int fold;
    };
    std::vector<Job> jobs;
    for (std::size_t e = 0; e < all_configs.size(); ++e)
        for (int fold = 0; fold < m; ++fold) jobs.push_back({e, fold});

    parallel_for(jobs.size(), workers, [&](std::size_t j) {
        const auto [entry, fold] = jobs[j];
        const int test_subject = fold;
        const int val_subject = (fold + 1) % m;
        const std::uint64_t run_seed =
            mix_seed(seed, report.entries[entry].key, static_cast<std::uint64_t>(fold));
        const RunOutcome out =
            run_one(ts, all_configs[entry], base, val_subject, test_subject, run_seed);
        FoldRecord rec;
        rec.fold = fold;
        rec.val_subject = val_subject;
        rec.test_subject = test_subject;
        rec.val_bacc = out.val_bacc;
        rec.test_bacc = out.test_bacc;
        rec.best_epoch = out.best_epoch;
        rec.seconds = out.seconds;
        report.entries[entry].folds[fold] = rec;
    });
    return report;
}

Selection autotransfer_select(const CvReport& report, double q) {
    if (report.entries.empty()) throw ConfigError("autotransfer_select: empty report");
    const CvEntry* best = nullptr;
    double best_q = 0.0;
    for (const auto& entry : report.entries) {
        if (entry.folds.empty()) throw ConfigError("autotransfer_select: entry without folds");
        const double qv = quantile(entry.val_accs(), q);
        bool take = false;
        if (best == nullptr || qv > best_q) {
            take = true;
        } else if (qv == best_q) {
            // Ties prefer the baseline, then lexicographic (method, key).
            if (entry.key == "baseline" && best->key != "baseline") take = true;
            else if (best->key != "baseline" &&
                     std::tie(entry.method, entry.key) < std::tie(best->method, best->key))
                take = true;
        }
        if (take) {
            best = &entry;
            best_q = qv;
        }
    }
    Selection sel;
    sel.method = best->method;
    sel.key = best->key;
    sel.q25_val = best_q;
    sel.config = best->config;
    return sel;
}

AutoTransferResult autotransfer_run(const TrialSet& ts, const AutoTransferOptions& opts,
                                    std::uint64_t seed, const std::string& out_dir) {
    AutoTransferResult result;
    result.tuning = tune(ts, opts.grid, opts.tune_split, opts.base, seed, opts.top_k, opts.workers);
    std::vector<CensorConfig> finalists;
    for (const auto& [method, entries] : result.tuning.top)
        for (const auto& e : entries) finalists.push_back(e.config);
    result.report = cross_validate(ts, finalists, opts.base, seed, opts.workers);
    result.selection = autotransfer_select(result.report, opts.quantile);
    if (!out_dir.empty()) emit_report(result.report, out_dir, opts.quantile);
    return result;
}

}  // namespace censor
