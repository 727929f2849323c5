#include "censor/autotransfer.hpp"
#include "censor/error.hpp"
#include "censor/serialize.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace censor {

using nlohmann::json;

namespace {

json lengthscale_to_json(const LengthScalePolicy& p) {
    switch (p.kind) {
        case LengthScalePolicy::Kind::fixed: return {{"kind", "fixed"}, {"sigma", p.sigma}};
        case LengthScalePolicy::Kind::median: return {{"kind", "median"}};
        case LengthScalePolicy::Kind::perplexity:
            return {{"kind", "perplexity"}, {"target", p.perplexity}};
    }
    return {};
}

LengthScalePolicy lengthscale_from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "fixed") return LengthScalePolicy::Fixed(j.at("sigma").get<double>());
    if (kind == "median") return LengthScalePolicy::Median();
    if (kind == "perplexity") return LengthScalePolicy::Perplexity(j.at("target").get<double>());
    throw ConfigError("unknown length-scale kind: " + kind);
}

}  // namespace

json censor_config_to_json(const CensorConfig& cfg) {
    return {{"method", censor_method_name(cfg.method)},
            {"mode", censor_mode_name(cfg.mode)},
            {"lambda", cfg.lambda},
            {"score",
             {{"kind", score_kind_name(cfg.score.kind)},
              {"score_reg", cfg.score.score_reg},
              {"lengthscale", lengthscale_to_json(cfg.score.lengthscale)},
              {"ssge_j", cfg.score.ssge_j},
              {"nu_iters", cfg.score.nu_iters}}},
            {"pair",
             {{"kind", cfg.pair.kind == PairPolicy::Kind::bernoulli ? "bernoulli" : "clique"},
              {"b", cfg.pair.b},
              {"d", cfg.pair.d}}},
            {"average_pairs", cfg.average_pairs},
            {"mmd_lengthscale", lengthscale_to_json(cfg.mmd_lengthscale)},
            {"began_beta", cfg.began_beta},
            {"began_diversity", cfg.began_diversity},
            {"adv_steps", cfg.adv_steps}};
}

CensorConfig censor_config_from_json(const json& j) {
    CensorConfig cfg;
    cfg.method = censor_method_from_name(j.at("method").get<std::string>());
    cfg.mode = censor_mode_from_name(j.at("mode").get<std::string>());
    cfg.lambda = j.at("lambda").get<double>();
    const json& sc = j.at("score");
    cfg.score.kind = score_kind_from_name(sc.at("kind").get<std::string>());
    cfg.score.score_reg = sc.at("score_reg").get<double>();
    cfg.score.lengthscale = lengthscale_from_json(sc.at("lengthscale"));
    cfg.score.ssge_j = sc.at("ssge_j").get<int>();
    cfg.score.nu_iters = sc.at("nu_iters").get<int>();
    const json& pr = j.at("pair");
    cfg.pair.kind = pr.at("kind").get<std::string>() == "clique" ? PairPolicy::Kind::clique
                                                                 : PairPolicy::Kind::bernoulli;
    cfg.pair.b = pr.at("b").get<double>();
    cfg.pair.d = pr.at("d").get<int>();
    cfg.average_pairs = j.at("average_pairs").get<bool>();
    cfg.mmd_lengthscale = lengthscale_from_json(j.at("mmd_lengthscale"));
    cfg.began_beta = j.at("began_beta").get<double>();
    cfg.began_diversity = j.at("began_diversity").get<double>();
    cfg.adv_steps = j.at("adv_steps").get<int>();
    return cfg;
}

json epoch_record_to_json(const EpochRecord& rec) {
    json j = {{"epoch", rec.epoch},
              {"lr", rec.lr},
              {"train_loss", rec.train_loss},
              {"train_penalty", rec.train_penalty},
              {"val_loss", rec.val_loss},
              {"val_bacc", rec.val_bacc}};
    if (!rec.aux_losses.empty()) j["aux"] = rec.aux_losses;
    if (!rec.control.empty()) j["control"] = rec.control;
    return j;
}

namespace {

json report_to_json(const CvReport& report) {
    json entries = json::array();
    for (const auto& e : report.entries) {
        json folds = json::array();
        for (const auto& f : e.folds)
            folds.push_back({{"fold", f.fold},
                             {"val_subject", f.val_subject},
                             {"test_subject", f.test_subject},
                             {"val_bacc", f.val_bacc},
                             {"test_bacc", f.test_bacc},
                             {"best_epoch", f.best_epoch},
                             {"seconds", f.seconds}});
        entries.push_back({{"method", e.method},
                           {"key", e.key},
                           {"config", censor_config_to_json(e.config)},
                           {"folds", folds}});
    }
    return {{"seed", report.seed}, {"n_subjects", report.n_subjects}, {"entries", entries}};
}

CvReport report_from_json(const json& j) {
    CvReport report;
    report.seed = j.at("seed").get<std::uint64_t>();
    report.n_subjects = j.at("n_subjects").get<int>();
    for (const auto& je : j.at("entries")) {
        CvEntry e;
        e.method = je.at("method").get<std::string>();
        e.key = je.at("key").get<std::string>();
        e.config = censor_config_from_json(je.at("config"));
        for (const auto& jf : je.at("folds")) {
            FoldRecord f;
            f.fold = jf.at("fold").get<int>();
            f.val_subject = jf.at("val_subject").get<int>();
            f.test_subject = jf.at("test_subject").get<int>();
            f.val_bacc = jf.at("val_bacc").get<double>();
            f.test_bacc = jf.at("test_bacc").get<double>();
            f.best_epoch = jf.at("best_epoch").get<int>();
            f.seconds = jf.at("seconds").get<double>();
            e.folds.push_back(f);
        }
        report.entries.push_back(std::move(e));
    }
    return report;
}

// ---------------------------------------------------------------------------
// SVG rendering

const char* kPalette[] = {"#444444", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#e377c2", "#17becf", "#bcbd22"};

std::string color_of(std::size_t i) { return kPalette[i % (sizeof(kPalette) / sizeof(char*))]; }

struct SvgCanvas {
    std::ostringstream body;
    int width;
    int height;

    SvgCanvas(int w, int h) : width(w), height(h) {}

    void line(double x1, double y1, double x2, double y2, const std::string& color,
              double sw = 1.0) {
        body << "<line x1='" << x1 << "' y1='" << y1 << "' x2='" << x2 << "' y2='" << y2
             << "' stroke='" << color << "' stroke-width='" << sw << "'/>\n";
    }
    void circle(double x, double y, double r, const std::string& color) {
        body << "<circle cx='" << x << "' cy='" << y << "' r='" << r << "' fill='" << color
             << "' fill-opacity='0.75'/>\n";
    }
    void cross(double x, double y, double r, const std::string& color) {
        line(x - r, y - r, x + r, y + r, color, 2.0);
        line(x - r, y + r, x + r, y - r, color, 2.0);
    }
    void text(double x, double y, const std::string& s, int size = 11,
              const std::string& anchor = "start", const std::string& color = "#222") {
        body << "<text x='" << x << "' y='" << y << "' font-size='" << size
             << "' font-family='sans-serif' text-anchor='" << anchor << "' fill='" << color
             << "'>" << s << "</text>\n";
    }
    void polyline(const std::vector<std::pair<double, double>>& pts, const std::string& color) {
        body << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
        for (const auto& [x, y] : pts) body << x << "," << y << " ";
        body << "'/>\n";
    }

    void write(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw DataError("emit_report: cannot write " + path);
        os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
           << "' viewBox='0 0 " << width << " " << height << "'>\n"
           << "<rect width='100%' height='100%' fill='white'/>\n"
           << body.str() << "</svg>\n";
    }
};

std::string short_label(const CvEntry& e, std::size_t idx) {
    return std::to_string(idx) + ": " + e.key;
}

void draw_axes(SvgCanvas& svg, double left, double top, double w, double h) {
    for (int tick = 0; tick <= 4; ++tick) {
        const double acc = tick * 0.25;
        const double y = top + (1.0 - acc) * h;
        svg.line(left, y, left + w, y, tick == 0 ? "#222" : "#dddddd");
        std::ostringstream lab;
        lab << acc;
        svg.text(left - 6, y + 4, lab.str(), 10, "end");
    }
    svg.line(left, top, left, top + h, "#222");
}

void render_fold_scores(const CvReport& report, const std::string& path) {
    const std::size_t n = report.entries.size();
    const double left = 50, top = 20, plot_h = 300, col_w = 70;
    const double plot_w = std::max<double>(col_w * n, 120);
    const int legend_h = static_cast<int>(16 * n) + 30;
    SvgCanvas svg(static_cast<int>(left + plot_w + 30), static_cast<int>(top + plot_h + 50 + legend_h));
    draw_axes(svg, left, top, plot_w, plot_h);
    svg.text(left + plot_w / 2, top + plot_h + 35, "test balanced accuracy per fold", 12, "middle");
    for (std::size_t e = 0; e < n; ++e) {
        const double cx = left + col_w * (e + 0.5);
        const std::string color = color_of(e);
        double mean = 0.0;
        const auto& folds = report.entries[e].folds;
        for (std::size_t f = 0; f < folds.size(); ++f) {
            const double jitter = folds.size() > 1
                                      ? (static_cast<double>(f) / (folds.size() - 1) - 0.5) * 24.0
                                      : 0.0;
            const double y = top + (1.0 - folds[f].test_bacc) * plot_h;
            svg.circle(cx + jitter, y, 3.5, color);
            mean += folds[f].test_bacc;
        }
        mean /= std::max<std::size_t>(folds.size(), 1);
        svg.cross(cx, top + (1.0 - mean) * plot_h, 5, "#000000");
        svg.text(cx, top + plot_h + 16, std::to_string(e), 11, "middle");
    }
    double ly = top + plot_h + 60;
    for (std::size_t e = 0; e < n; ++e, ly += 16) {
        svg.circle(left + 6, ly - 4, 4, color_of(e));
        svg.text(left + 16, ly, short_label(report.entries[e], e), 11);
    }
    svg.write(path);
}

void render_subject_curves(const CvReport& report, const std::string& path) {
    // Sort test subjects by the baseline entry's accuracy.
    const CvEntry* baseline = nullptr;
    for (const auto& e : report.entries)
        if (e.key == "baseline") baseline = &e;
    const CvEntry& ref = baseline ? *baseline : report.entries.front();
    std::vector<std::size_t> order(ref.folds.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ref.folds[a].test_bacc < ref.folds[b].test_bacc;
    });

    const std::size_t n = report.entries.size();
    const std::size_t m = order.size();
    const double left = 50, top = 20, plot_h = 300;
    const double step = m > 1 ? 60.0 : 120.0;
    const double plot_w = std::max<double>(step * (m > 1 ? m - 1 : 1) + 40, 160);
    const int legend_h = static_cast<int>(16 * n) + 30;
    SvgCanvas svg(static_cast<int>(left + plot_w + 30), static_cast<int>(top + plot_h + 50 + legend_h));
    draw_axes(svg, left, top, plot_w, plot_h);
    svg.text(left + plot_w / 2, top + plot_h + 35,
             "accuracy vs test subject (sorted by baseline)", 12, "middle");
    for (std::size_t r = 0; r < m; ++r) {
        const double x = left + 20 + step * r;
        svg.text(x, top + plot_h + 16,
                 "s" + std::to_string(ref.folds[order[r]].test_subject), 10, "middle");
    }
    for (std::size_t e = 0; e < n; ++e) {
        const std::string color = color_of(e);
        std::vector<std::pair<double, double>> pts;
        for (std::size_t r = 0; r < m; ++r) {
            const double x = left + 20 + step * r;
            const double y = top + (1.0 - report.entries[e].folds[order[r]].test_bacc) * plot_h;
            pts.emplace_back(x, y);
            svg.circle(x, y, 2.5, color);
        }
        svg.polyline(pts, color);
    }
    double ly = top + plot_h + 60;
    for (std::size_t e = 0; e < n; ++e, ly += 16) {
        svg.circle(left + 6, ly - 4, 4, color_of(e));
        svg.text(left + 16, ly, short_label(report.entries[e], e), 11);
    }
    svg.write(path);
}

}  // namespace

void save_cv_report(const std::string& path, const CvReport& report) {
    std::ofstream os(path);
    if (!os) throw DataError("save_cv_report: cannot write " + path);
    os << report_to_json(report).dump(2) << "\n";
}

CvReport load_cv_report(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("load_cv_report: cannot open " + path);
    json j;
    try {
        is >> j;
        return report_from_json(j);
    } catch (const json::exception& ex) {
        throw DataError("load_cv_report: " + std::string(ex.what()));
    }
}

void emit_report(const CvReport& report, const std::string& out_dir, double q) {
    if (report.entries.empty()) throw ConfigError("emit_report: nothing to render");
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!std::filesystem::is_directory(out_dir))
        throw DataError("emit_report: cannot create directory " + out_dir);
    const auto in_dir = [&](const std::string& name) {
        return (std::filesystem::path(out_dir) / name).string();
    };

    {
        std::ofstream csv(in_dir("folds.csv"));
        if (!csv) throw DataError("emit_report: cannot write folds.csv");
        csv << "method,config,fold,val_subject,test_subject,val_bacc,test_bacc,best_epoch,seconds\n";
        for (const auto& e : report.entries)
            for (const auto& f : e.folds)
                csv << e.method << ",\"" << e.key << "\"," << f.fold << "," << f.val_subject << ","
                    << f.test_subject << "," << f.val_bacc << "," << f.test_bacc << ","
                    << f.best_epoch << "," << f.seconds << "\n";
    }

    const Selection sel = autotransfer_select(report, q);
    json summary;
    summary["seed"] = report.seed;
    summary["n_subjects"] = report.n_subjects;
    summary["quantile"] = q;
    summary["selection"] = {{"method", sel.method},
                            {"config", sel.key},
                            {"q25_val", sel.q25_val}};
    json entries = json::array();
    std::map<std::string, std::pair<double, std::string>> method_best;
    for (const auto& e : report.entries) {
        const auto val = e.val_accs();
        const auto test = e.test_accs();
        const double q_val = quantile(val, q);
        const double mean_test =
            std::accumulate(test.begin(), test.end(), 0.0) / static_cast<double>(test.size());
        entries.push_back({{"method", e.method},
                           {"config", e.key},
                           {"folds", e.folds.size()},
                           {"q25_val", q_val},
                           {"q25_test", quantile(test, q)},
                           {"mean_test", mean_test},
                           {"median_test", quantile(test, 0.5)}});
        auto it = method_best.find(e.method);
        if (it == method_best.end() || q_val > it->second.first)
            method_best[e.method] = {q_val, e.key};
    }
    summary["entries"] = entries;
    json best = json::object();
    for (const auto& [method, kv] : method_best)
        best[method] = {{"q25_val", kv.first}, {"config", kv.second}};
    summary["per_method_best"] = best;
    {
        std::ofstream js(in_dir("summary.json"));
        if (!js) throw DataError("emit_report: cannot write summary.json");
        js << summary.dump(2) << "\n";
    }

    render_fold_scores(report, in_dir("fold_scores.svg"));
    render_subject_curves(report, in_dir("subject_curves.svg"));
    save_cv_report(in_dir("cv_report.json"), report);
}

}  // namespace censor
