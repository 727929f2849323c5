#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "censor/error.hpp"
#include "censor/neural.hpp"
#include "censor/rng.hpp"

#include <cmath>
#include <sstream>

using namespace censor;

namespace {

Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
    return m;
}

void set_identity_layer(ParamStore& p, int layer, int width) {
    double* w = p.w(layer);
    for (int i = 0; i < width; ++i)
        for (int j = 0; j < width; ++j) w[i * width + j] = i == j ? 1.0 : 0.0;
    double* b = p.b(layer);
    for (int i = 0; i < width; ++i) b[i] = 0.0;
}

// Central finite difference of sum(cot .* f(x)) against backward, over every
// parameter and every input coordinate.
void gradcheck(const NetSpec& spec, ParamStore params, const Mat& x, const Mat& cot,
               double step = 1e-4, double tol = 1e-4) {
    params.zero_grads();
    const ForwardResult fr = forward(params, x);
    Mat x_grad = backward(params, fr.tape, cot);

    auto objective = [&](const ParamStore& p, const Mat& xs) {
        return (forward(p, xs).out.array() * cot.array()).sum();
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamStore plus = params;
        ParamStore minus = params;
        plus.values[i] += step;
        minus.values[i] -= step;
        const double fd = (objective(plus, x) - objective(minus, x)) / (2.0 * step);
        const double bp = params.grads[i];
        const double denom = std::max({1.0, std::abs(fd), std::abs(bp)});
        CHECK(std::abs(fd - bp) / denom <= tol);
    }
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            Mat plus = x;
            Mat minus = x;
            plus(r, c) += step;
            minus(r, c) -= step;
            const double fd = (objective(params, plus) - objective(params, minus)) / (2.0 * step);
            const double bp = x_grad(r, c);
            const double denom = std::max({1.0, std::abs(fd), std::abs(bp)});
            CHECK(std::abs(fd - bp) / denom <= tol);
        }
}

// Relu kinks break finite differences; resample until preactivations are clear
// of zero.
bool relu_safe(const ParamStore& params, const Mat& x, double margin) {
    Mat cur = x;
    int in = params.spec.input;
    for (int l = 0; l < params.spec.layer_count(); ++l) {
        const int out = params.spec.widths[l];
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
            params.w(l), out, in);
        Eigen::Map<const Vec> b(params.b(l), out);
        Mat z = cur * w.transpose();
        z.rowwise() += b.transpose();
        if (params.spec.acts[l] == Activation::relu && z.cwiseAbs().minCoeff() < margin)
            return false;
        cur = z;
        if (params.spec.acts[l] == Activation::relu) cur = cur.cwiseMax(0.0);
        if (params.spec.acts[l] == Activation::tanh) cur = cur.array().tanh().matrix();
        in = out;
    }
    return true;
}

}  // namespace

TEST_CASE("forward identity / relu / softmax basics") {
    Rng rng(1);
    NetSpec spec;
    spec.input = 2;
    spec.widths = {2};
    spec.acts = {Activation::identity};
    ParamStore p = ParamStore::init(spec, rng);
    set_identity_layer(p, 0, 2);
    Mat x(3, 2);
    x << 1, 2, -3, 4, 0, 0.5;
    CHECK((forward(p, x).out - x).cwiseAbs().maxCoeff() == 0.0);

    spec.acts = {Activation::relu};
    ParamStore pr = ParamStore::init(spec, rng);
    set_identity_layer(pr, 0, 2);
    Mat xr(1, 2);
    xr << -1.0, 2.0;
    const Mat out = forward(pr, xr).out;
    CHECK(out(0, 0) == 0.0);
    CHECK(out(0, 1) == 2.0);

    spec.widths = {4};
    spec.acts = {Activation::softmax};
    ParamStore ps = ParamStore::init(spec, rng);
    std::fill(ps.values.begin(), ps.values.end(), 0.0);
    const Mat probs = forward(ps, xr).out;
    for (int c = 0; c < 4; ++c) CHECK(probs(0, c) == doctest::Approx(0.25));

    Mat wrong(1, 3);
    wrong.setZero();
    CHECK_THROWS_AS(forward(ps, wrong), NumericError);
}

TEST_CASE("NetSpec validation") {
    NetSpec bad;
    bad.input = 2;
    bad.widths = {3, 4};
    bad.acts = {Activation::softmax, Activation::identity};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.widths = {};
    bad.acts = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("gradient oracle: random small nets, every activation") {
    Rng rng(42);
    const std::vector<std::vector<Activation>> layouts = {
        {Activation::identity},
        {Activation::tanh, Activation::identity},
        {Activation::relu, Activation::identity},
        {Activation::relu, Activation::tanh, Activation::identity},
        {Activation::tanh, Activation::softmax},
        {Activation::relu, Activation::softmax},
    };
    for (const auto& acts : layouts) {
        NetSpec spec;
        spec.input = 3;
        for (std::size_t l = 0; l < acts.size(); ++l) spec.widths.push_back(4 + (l % 2));
        spec.acts = acts;
        for (int rep = 0; rep < 2; ++rep) {
            ParamStore params = ParamStore::init(spec, rng);
            Mat x;
            do {
                x = random_mat(rng, 5, 3);
            } while (!relu_safe(params, x, 1e-3));
            const Mat cot = random_mat(rng, 5, spec.output());
            gradcheck(spec, params, x, cot);
        }
    }
}

TEST_CASE("backward linearity") {
    Rng rng(9);
    const NetSpec spec = NetSpec::mlp(4, {6}, 3, Activation::tanh);
    ParamStore params = ParamStore::init(spec, rng);
    const Mat x = random_mat(rng, 8, 4);

    params.zero_grads();
    const ForwardResult fr = forward(params, x);
    backward(params, fr.tape, Mat::Zero(8, 3));
    for (const double g : params.grads) CHECK(g == 0.0);

    // Sum of per-sample backward calls equals one batched call.
    const Mat cot = random_mat(rng, 8, 3);
    params.zero_grads();
    backward(params, fr.tape, cot);
    const std::vector<double> batched = params.grads;
    params.zero_grads();
    for (int i = 0; i < 8; ++i) {
        const ForwardResult fi = forward(params, Mat(x.row(i)));
        backward(params, fi.tape, Mat(cot.row(i)));
    }
    for (std::size_t k = 0; k < params.size(); ++k)
        CHECK(params.grads[k] == doctest::Approx(batched[k]).epsilon(1e-8));
}

TEST_CASE("class_weights") {
    const Vec w = class_weights({10, 30});
    CHECK(w[0] == doctest::Approx(0.75));
    CHECK(w[1] == doctest::Approx(0.25));

    const Vec balanced = class_weights({5, 5, 5});
    for (int k = 0; k < 3; ++k) CHECK(balanced[k] == doctest::Approx(1.0 / 3.0));

    // counts (1,99): raw weights (100, 100/99) normalize to exactly (0.99, 0.01).
    const Vec skew = class_weights({1, 99});
    CHECK(skew[0] == doctest::Approx(0.99).epsilon(1e-9));
    CHECK(skew[1] == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(skew.sum() == doctest::Approx(1.0));
    CHECK_THROWS_AS(class_weights({3, 0}), DataError);
}

TEST_CASE("weighted_ce") {
    Mat perfect(2, 2);
    perfect << 1, 0, 0, 1;
    Vec w(2);
    w << 0.5, 0.5;
    CHECK(weighted_ce(perfect, {0, 1}, w) == doctest::Approx(0.0));

    // Uniform predictions over a class-balanced batch give log C.
    const int c = 4;
    Mat uniform = Mat::Constant(4, c, 1.0 / c);
    Vec wsum(c);
    wsum << 0.4, 0.3, 0.2, 0.1;
    CHECK(weighted_ce(uniform, {0, 1, 2, 3}, wsum) == doctest::Approx(std::log(c)));

    Mat half(1, 2);
    half << 0.5, 0.5;
    Vec w75(2);
    w75 << 0.75, 0.25;
    CHECK(weighted_ce(half, {0}, w75) == doctest::Approx(1.5 * std::log(2.0)));

    // Uniform weights reduce to plain mean cross entropy.
    Rng rng(4);
    Mat logits = random_mat(rng, 6, 3);
    Mat probs(6, 3);
    for (int i = 0; i < 6; ++i) {
        Eigen::ArrayXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
        probs.row(i) = (e / e.sum()).matrix();
    }
    const std::vector<int> y = {0, 1, 2, 0, 1, 2};
    Vec uw = Vec::Constant(3, 1.0 / 3.0);
    double plain = 0.0;
    for (int i = 0; i < 6; ++i) plain += -std::log(probs(i, y[i]));
    plain /= 6.0;
    CHECK(weighted_ce(probs, y, uw) == doctest::Approx(plain));
}

TEST_CASE("weighted_ce_grad matches finite differences") {
    Rng rng(8);
    Mat probs(3, 3);
    probs << 0.2, 0.5, 0.3, 0.6, 0.2, 0.2, 0.25, 0.25, 0.5;
    const std::vector<int> y = {1, 0, 2};
    Vec w(3);
    w << 0.5, 0.3, 0.2;
    const Mat g = weighted_ce_grad(probs, y, w);
    const double step = 1e-7;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 3; ++c) {
            Mat plus = probs, minus = probs;
            plus(i, c) += step;
            minus(i, c) -= step;
            const double fd = (weighted_ce(plus, y, w) - weighted_ce(minus, y, w)) / (2 * step);
            CHECK(g(i, c) == doctest::Approx(fd).epsilon(1e-4));
        }
}

TEST_CASE("optimizer: schedule, fixed point, first step, decay") {
    NetSpec spec;
    spec.input = 1;
    spec.widths = {1};
    spec.acts = {Activation::identity};
    Rng rng(1);

    // Zero gradients, zero decay: parameters unchanged.
    {
        ParamStore p = ParamStore::init(spec, rng);
        OptimState opt = OptimState::init(p.size(), 1e-3, 0.0);
        const std::vector<double> before = p.values;
        p.zero_grads();
        optim_step(p, opt, 1);
        CHECK(p.values == before);
    }

    // Constant unit gradient: first step moves by ~ -alpha.
    {
        ParamStore p = ParamStore::init(spec, rng);
        OptimState opt = OptimState::init(p.size(), 1e-3, 0.0);
        const double before = p.values[0];
        p.zero_grads();
        p.grads[0] = 1.0;
        optim_step(p, opt, 1);
        CHECK(p.values[0] - before == doctest::Approx(-1e-3).epsilon(1e-6));
    }

    // Effective rate alpha_1 / sqrt(epoch): epoch 4 halves the step.
    {
        ParamStore p = ParamStore::init(spec, rng);
        OptimState opt = OptimState::init(p.size(), 1e-3, 0.0);
        const double before = p.values[0];
        p.zero_grads();
        p.grads[0] = 1.0;
        optim_step(p, opt, 4);
        CHECK(p.values[0] - before == doctest::Approx(-5e-4).epsilon(1e-6));
    }

    // Weight decay with zero gradients shrinks the norm monotonically.
    {
        ParamStore p = ParamStore::init(spec, rng);
        p.values[0] = 2.0;
        p.values[1] = -1.5;
        OptimState opt = OptimState::init(p.size(), 1e-2, 0.1);
        double prev = std::hypot(p.values[0], p.values[1]);
        for (int step = 0; step < 5; ++step) {
            p.zero_grads();
            optim_step(p, opt, 1);
            const double cur = std::hypot(p.values[0], p.values[1]);
            CHECK(cur < prev);
            prev = cur;
        }
    }

    // Non-finite gradient rejected.
    {
        ParamStore p = ParamStore::init(spec, rng);
        OptimState opt = OptimState::init(p.size(), 1e-3, 0.0);
        p.grads[0] = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(optim_step(p, opt, 1), NumericError);
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    Rng rng(33);
    ModelBundle enc = ModelBundle::make(NetSpec::mlp(6, {5}, 4), rng, 1e-3);
    ModelBundle cls = ModelBundle::make(NetSpec::mlp(4, {}, 3, Activation::softmax), rng, 1e-3);
    // Touch the optimizer so moments are nonzero.
    for (std::size_t i = 0; i < enc.params.size(); ++i) enc.params.grads[i] = 0.1 * (i % 7) - 0.2;
    optim_step(enc.params, enc.opt, 2);

    std::stringstream ss;
    save_checkpoint(ss, {{"encoder", &enc}, {"classifier", &cls}});
    const auto loaded = load_checkpoint(ss);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].first == "encoder");
    CHECK(loaded[0].second.params.values == enc.params.values);
    CHECK(loaded[0].second.opt.m == enc.opt.m);
    CHECK(loaded[0].second.opt.v == enc.opt.v);
    CHECK(loaded[0].second.opt.step == enc.opt.step);
    CHECK(loaded[0].second.params.spec.widths == enc.params.spec.widths);
    CHECK(loaded[1].second.params.values == cls.params.values);

    // Corruption is detected.
    std::string bytes = ss.str();
    bytes[bytes.size() / 2] ^= 0x40;
    std::stringstream corrupt(bytes);
    CHECK_THROWS_AS(load_checkpoint(corrupt), DataError);
}
