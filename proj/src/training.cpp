#include "censor/training.hpp"

#include "censor/error.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace censor {

void TrainConfig::validate() const {
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
    if (patience < 1) throw ConfigError("patience must be >= 1");
    censor.validate();
}

double balanced_accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    if (y_true.empty() || y_true.size() != y_pred.size())
        throw DataError("balanced_accuracy: empty or mismatched inputs");
    std::map<int, std::pair<int, int>> per_class;  // class -> (correct, total)
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        auto& [correct, total] = per_class[y_true[i]];
        ++total;
        if (y_pred[i] == y_true[i]) ++correct;
    }
    double sum = 0.0;
    for (const auto& [cls, ct] : per_class) sum += static_cast<double>(ct.first) / ct.second;
    return sum / static_cast<double>(per_class.size());
}

namespace {

std::vector<int> argmax_rows(const Mat& probs) {
    std::vector<int> out(probs.rows());
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        Eigen::Index best;
        probs.row(i).maxCoeff(&best);
        out[i] = static_cast<int>(best);
    }
    return out;
}

}  // namespace

Trainer::Trainer(const TrialSet& train_set, const TrialSet& val_set, const TrainConfig& cfg)
    : train_(train_set), val_(val_set), cfg_(cfg), shuffle_rng_(mix_seed(cfg.seed, "shuffle")) {
    cfg_.validate();
    if (train_.size() < 1 || val_.size() < 1) throw DataError("train: empty split");
    if (train_.dim() != val_.dim()) throw DataError("train: feature dimension mismatch");

    std::set<int> train_subjects(train_.s.begin(), train_.s.end());
    for (const int sv : val_.s)
        if (train_subjects.count(sv)) throw DataError("train: validation subject appears in training set");

    // Training subjects are relabeled densely so penalty engines and the
    // adversary see contiguous labels regardless of which fold this is.
    std::map<int, int> dense;
    for (const int si : train_.s)
        dense.try_emplace(si, static_cast<int>(dense.size()));
    m_eff_ = static_cast<int>(dense.size());
    subject_of_dense_.resize(m_eff_);
    for (const auto& [orig, idx] : dense) subject_of_dense_[idx] = orig;
    s_dense_.resize(train_.size());
    for (Eigen::Index i = 0; i < train_.size(); ++i) s_dense_[i] = dense[train_.s[i]];

    class_w_ = class_weights(train_.class_counts());

    Rng enc_rng(mix_seed(cfg_.seed, "encoder"));
    encoder_ = ModelBundle::make(NetSpec::mlp(train_.dim(), cfg_.encoder_hidden, cfg_.latent_dim),
                                 enc_rng, cfg_.lr, cfg_.weight_decay);
    Rng cls_rng(mix_seed(cfg_.seed, "classifier"));
    classifier_ = ModelBundle::make(
        NetSpec::mlp(cfg_.latent_dim, {}, train_.n_classes, Activation::softmax), cls_rng, cfg_.lr,
        cfg_.weight_decay);

    if (cfg_.censor.method != CensorMethod::none && cfg_.censor.lambda > 0.0) {
        AuxSpec aux = cfg_.aux;
        aux.lr = cfg_.lr;
        aux.weight_decay = cfg_.weight_decay;
        engine_ = make_engine(cfg_.censor, cfg_.latent_dim, m_eff_, train_.n_classes, aux, cfg_.seed);
    }
    best_encoder_ = encoder_;
    best_classifier_ = classifier_;
}

Mat Trainer::encode(const Mat& x) const { return forward(encoder_.params, x).out; }

std::vector<int> Trainer::predict(const Mat& x) const {
    return argmax_rows(forward(classifier_.params, encode(x)).out);
}

std::pair<double, double> Trainer::evaluate(const TrialSet& set) const {
    const Mat probs = forward(classifier_.params, encode(set.x)).out;
    const double loss = weighted_ce(probs, set.y, class_w_);
    const double bacc = balanced_accuracy(set.y, argmax_rows(probs));
    return {loss, bacc};
}

std::vector<std::vector<int>> Trainer::make_batches(int epoch) {
    (void)epoch;
    const Eigen::Index n = train_.size();
    std::vector<int> order;
    if (cfg_.stratified_batches) {
        // Round-robin over per-subject shuffled lists keeps every subject
        // represented in most batches.
        std::vector<std::vector<int>> per_subject(m_eff_);
        for (Eigen::Index i = 0; i < n; ++i) per_subject[s_dense_[i]].push_back(static_cast<int>(i));
        for (auto& rows : per_subject) shuffle_rng_.shuffle(rows);
        std::size_t remaining = static_cast<std::size_t>(n);
        std::vector<std::size_t> cursor(m_eff_, 0);
        while (remaining > 0) {
            for (int m = 0; m < m_eff_; ++m) {
                if (cursor[m] < per_subject[m].size()) {
                    order.push_back(per_subject[m][cursor[m]++]);
                    --remaining;
                }
            }
        }
    } else {
        order.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) order[i] = static_cast<int>(i);
        shuffle_rng_.shuffle(order);
    }
    std::vector<std::vector<int>> batches;
    for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
        if (end - start < 2) break;  // penalty terms need at least 2 samples
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

namespace {

struct BatchView {
    Mat x;
    std::vector<int> y;
    std::vector<int> s;
};

BatchView gather(const TrialSet& ts, const std::vector<int>& s_dense,
                 const std::vector<int>& rows) {
    BatchView b;
    b.x.resize(rows.size(), ts.x.cols());
    b.y.resize(rows.size());
    b.s.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        b.x.row(static_cast<Eigen::Index>(i)) = ts.x.row(rows[i]);
        b.y[i] = ts.y[rows[i]];
        b.s[i] = s_dense[rows[i]];
    }
    return b;
}

}  // namespace

void Trainer::aux_phase(const std::vector<int>& batch_rows, int epoch) {
    if (!engine_ || !engine_->has_aux()) return;
    const BatchView b = gather(train_, s_dense_, batch_rows);
    const Mat z = encode(b.x);  // encoder frozen; latents detached
    for (int step = 0; step < cfg_.censor.adv_steps; ++step)
        engine_->aux_update(z, b.s, b.y, epoch);
}

double Trainer::encoder_phase(const std::vector<int>& batch_rows, int epoch) {
    const BatchView b = gather(train_, s_dense_, batch_rows);

    encoder_.params.zero_grads();
    classifier_.params.zero_grads();
    const ForwardResult enc = forward(encoder_.params, b.x);
    const ForwardResult cls = forward(classifier_.params, enc.out);

    const double task_loss = weighted_ce(cls.out, b.y, class_w_);
    Mat z_grad = backward(classifier_.params, cls.tape, weighted_ce_grad(cls.out, b.y, class_w_));

    double applied_penalty = 0.0;
    if (engine_) {
        const PenaltyOutput p = engine_->penalty(enc.out, b.s, b.y);
        applied_penalty = p.penalty.value_or(0.0);
        z_grad += cfg_.censor.lambda * p.latent_cotangents;
        for (const auto& [name, v] : p.aux_losses) epoch_aux_[name] += v;
        const auto controls = engine_->control_values();
        if (!controls.empty()) {
            control_trace_.push_back(controls[0]);
            if (controls.size() > 1) control_trace_k2_.push_back(controls[1]);
        }
    }
    const double batch_loss = task_loss + cfg_.censor.lambda * applied_penalty;
    if (!std::isfinite(batch_loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << " batch " << epoch_batches_
            << " (task=" << task_loss << ", penalty=" << applied_penalty << ")";
        throw NumericError(msg.str());
    }

    backward(encoder_.params, enc.tape, z_grad);
    optim_step(encoder_.params, encoder_.opt, epoch);
    optim_step(classifier_.params, classifier_.opt, epoch);

    epoch_loss_ += task_loss;
    epoch_penalty_ += applied_penalty;
    ++epoch_batches_;
    return batch_loss;
}

void Trainer::snapshot_best() {
    best_encoder_ = encoder_;
    best_classifier_ = classifier_;
    best_aux_.clear();
    if (engine_)
        for (const auto& [name, model] : engine_->aux_models())
            best_aux_.emplace_back(name, *model);
}

void Trainer::run_epoch(int epoch) {
    epoch_loss_ = 0.0;
    epoch_penalty_ = 0.0;
    epoch_aux_.clear();
    epoch_batches_ = 0;
    for (const auto& batch : make_batches(epoch)) {
        aux_phase(batch, epoch);
        encoder_phase(batch, epoch);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = cfg_.lr / std::sqrt(static_cast<double>(epoch));
    const int nb = std::max(epoch_batches_, 1);
    rec.train_loss = epoch_loss_ / nb;
    rec.train_penalty = epoch_penalty_ / nb;
    for (const auto& [name, total] : epoch_aux_) rec.aux_losses[name] = total / nb;
    if (engine_) rec.control = engine_->control_values();
    const auto [val_loss, val_bacc] = evaluate(val_);
    rec.val_loss = val_loss;
    rec.val_bacc = val_bacc;
    history_.push_back(rec);

    if (best_epoch_ == 0 || val_loss < best_val_loss_) {
        best_epoch_ = epoch;
        best_val_loss_ = val_loss;
        best_val_bacc_ = val_bacc;
        snapshot_best();
    }
}

TrainResult Trainer::run() {
    for (int epoch = 1; epoch <= cfg_.max_epochs; ++epoch) {
        run_epoch(epoch);
        if (epoch - best_epoch_ >= cfg_.patience) break;
    }
    TrainResult res;
    res.encoder = best_encoder_;
    res.classifier = best_classifier_;
    res.aux_models = best_aux_;
    res.history = history_;
    res.best_epoch = best_epoch_;
    res.best_val_loss = best_val_loss_;
    res.best_val_bacc = best_val_bacc_;
    res.control_trace = control_trace_;
    res.control_trace_k2 = control_trace_k2_;
    res.subject_of_dense = subject_of_dense_;
    return res;
}

TrainResult train(const TrialSet& train_set, const TrialSet& val_set, const TrainConfig& cfg) {
    Trainer t(train_set, val_set, cfg);
    return t.run();
}

double subject_probe(const Mat& latents, const std::vector<int>& s, const ProbeSpec& spec,
                     std::uint64_t seed) {
    const Eigen::Index n = latents.rows();
    if (static_cast<Eigen::Index>(s.size()) != n) throw DataError("subject_probe: label count mismatch");
    int m = 0;
    for (const int si : s) m = std::max(m, si + 1);
    std::set<int> distinct(s.begin(), s.end());
    if (distinct.size() < 2) throw DataError("subject_probe: need at least 2 subjects");

    // Stratified 80/20 split per subject.
    Rng rng(mix_seed(seed, "probe-split"));
    std::vector<std::vector<int>> per_subject(m);
    for (Eigen::Index i = 0; i < n; ++i) per_subject[s[i]].push_back(static_cast<int>(i));
    std::vector<int> train_rows, hold_rows;
    for (auto& rows : per_subject) {
        rng.shuffle(rows);
        const std::size_t cut = rows.size() - rows.size() / 5;  // 80% train
        for (std::size_t i = 0; i < rows.size(); ++i)
            (i < cut ? train_rows : hold_rows).push_back(rows[i]);
    }
    if (hold_rows.empty()) throw DataError("subject_probe: holdout is empty");

    Mat x_train(train_rows.size(), latents.cols());
    std::vector<int> y_train(train_rows.size());
    std::vector<int> counts(m, 0);
    for (std::size_t i = 0; i < train_rows.size(); ++i) {
        x_train.row(static_cast<Eigen::Index>(i)) = latents.row(train_rows[i]);
        y_train[i] = s[train_rows[i]];
        ++counts[y_train[i]];
    }
    for (auto& c : counts) c = std::max(c, 1);  // absent subjects get weight but no samples
    const Vec w = class_weights(counts);

    Rng init_rng(mix_seed(seed, "probe-init"));
    ModelBundle probe = ModelBundle::make(
        NetSpec::mlp(static_cast<int>(latents.cols()), spec.hidden, m, Activation::softmax),
        init_rng, spec.lr, spec.weight_decay);

    Rng batch_rng(mix_seed(seed, "probe-shuffle"));
    std::vector<int> order(train_rows.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
        batch_rng.shuffle(order);
        for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
            const std::size_t end = std::min(order.size(), start + spec.batch_size);
            Mat xb(end - start, latents.cols());
            std::vector<int> yb(end - start);
            for (std::size_t i = start; i < end; ++i) {
                xb.row(static_cast<Eigen::Index>(i - start)) = x_train.row(order[i]);
                yb[i - start] = y_train[order[i]];
            }
            probe.params.zero_grads();
            const ForwardResult fr = forward(probe.params, xb);
            backward(probe.params, fr.tape, weighted_ce_grad(fr.out, yb, w));
            optim_step(probe.params, probe.opt, epoch);
        }
    }

    Mat x_hold(hold_rows.size(), latents.cols());
    std::vector<int> y_hold(hold_rows.size());
    for (std::size_t i = 0; i < hold_rows.size(); ++i) {
        x_hold.row(static_cast<Eigen::Index>(i)) = latents.row(hold_rows[i]);
        y_hold[i] = s[hold_rows[i]];
    }
    const Mat probs = forward(probe.params, x_hold).out;
    return balanced_accuracy(y_hold, argmax_rows(probs));
}

}  // namespace censor
