#include "censor/neural.hpp"

#include "censor/error.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace censor {

namespace {

using RowMajorMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstRowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr double kProbFloor = 1e-12;

}  // namespace

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::softmax: return "softmax";
    }
    return "?";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    if (name == "tanh") return Activation::tanh;
    if (name == "softmax") return Activation::softmax;
    throw ConfigError("unknown activation: " + name);
}

void NetSpec::validate() const {
    if (input <= 0) throw ConfigError("NetSpec: input width must be positive");
    if (widths.empty()) throw ConfigError("NetSpec: need at least one layer");
    if (widths.size() != acts.size()) throw ConfigError("NetSpec: one activation per layer");
    for (const int w : widths)
        if (w <= 0) throw ConfigError("NetSpec: layer widths must be positive");
    for (std::size_t l = 0; l + 1 < acts.size(); ++l)
        if (acts[l] == Activation::softmax)
            throw ConfigError("NetSpec: softmax only valid on the output layer");
}

NetSpec NetSpec::mlp(int input, const std::vector<int>& hidden, int output, Activation output_act) {
    NetSpec spec;
    spec.input = input;
    for (const int h : hidden) {
        spec.widths.push_back(h);
        spec.acts.push_back(Activation::relu);
    }
    spec.widths.push_back(output);
    spec.acts.push_back(output_act);
    spec.validate();
    return spec;
}

ParamStore ParamStore::init(const NetSpec& spec, Rng& rng) {
    spec.validate();
    ParamStore p;
    p.spec = spec;
    int in = spec.input;
    std::size_t total = 0;
    for (const int out : spec.widths) {
        p.offsets.push_back(total);
        total += static_cast<std::size_t>(out) * in + out;
        in = out;
    }
    p.values.resize(total);
    p.grads.assign(total, 0.0);
    in = spec.input;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int out = spec.widths[l];
        const double limit = std::sqrt(6.0 / (in + out));
        double* w = p.values.data() + p.offsets[l];
        for (int i = 0; i < out * in; ++i) w[i] = rng.uniform(-limit, limit);
        double* b = w + static_cast<std::size_t>(out) * in;
        for (int i = 0; i < out; ++i) b[i] = 0.0;
        in = out;
    }
    return p;
}

void ParamStore::zero_grads() { std::fill(grads.begin(), grads.end(), 0.0); }

double* ParamStore::w(int layer) { return values.data() + offsets[layer]; }
const double* ParamStore::w(int layer) const { return values.data() + offsets[layer]; }
double* ParamStore::b(int layer) {
    const int in = layer == 0 ? spec.input : spec.widths[layer - 1];
    return w(layer) + static_cast<std::size_t>(spec.widths[layer]) * in;
}
const double* ParamStore::b(int layer) const {
    const int in = layer == 0 ? spec.input : spec.widths[layer - 1];
    return w(layer) + static_cast<std::size_t>(spec.widths[layer]) * in;
}
double* ParamStore::gw(int layer) { return grads.data() + offsets[layer]; }
double* ParamStore::gb(int layer) {
    const int in = layer == 0 ? spec.input : spec.widths[layer - 1];
    return gw(layer) + static_cast<std::size_t>(spec.widths[layer]) * in;
}

namespace {

Mat apply_activation(Activation act, Mat z) {
    switch (act) {
        case Activation::identity:
            return z;
        case Activation::relu:
            return z.cwiseMax(0.0);
        case Activation::tanh:
            return z.array().tanh().matrix();
        case Activation::softmax: {
            for (Eigen::Index i = 0; i < z.rows(); ++i) {
                const double m = z.row(i).maxCoeff();
                Eigen::ArrayXd e = (z.row(i).array() - m).exp();
                z.row(i) = (e / e.sum()).matrix();
            }
            return z;
        }
    }
    return z;
}

}  // namespace

ForwardResult forward(const ParamStore& params, const Mat& x) {
    const NetSpec& spec = params.spec;
    if (x.cols() != spec.input) throw NumericError("forward: input width mismatch");
    ForwardResult res;
    res.tape.input = x;
    Mat cur = x;
    int in = spec.input;
    for (int l = 0; l < spec.layer_count(); ++l) {
        const int out = spec.widths[l];
        ConstRowMajorMap w(params.w(l), out, in);
        Eigen::Map<const Vec> b(params.b(l), out);
        Mat z = cur * w.transpose();
        z.rowwise() += b.transpose();
        cur = apply_activation(spec.acts[l], std::move(z));
        res.tape.post.push_back(cur);
        in = out;
    }
    res.out = res.tape.post.back();
    return res;
}

Mat backward(ParamStore& params, const Tape& tape, const Mat& cotangents) {
    const NetSpec& spec = params.spec;
    if (static_cast<int>(tape.post.size()) != spec.layer_count())
        throw NumericError("backward: tape does not match net");
    if (cotangents.rows() != tape.input.rows() || cotangents.cols() != spec.output())
        throw NumericError("backward: cotangent shape mismatch");

    Mat g = cotangents;
    for (int l = spec.layer_count() - 1; l >= 0; --l) {
        const Mat& post = tape.post[l];
        Mat dz;
        switch (spec.acts[l]) {
            case Activation::identity:
                dz = g;
                break;
            case Activation::relu:
                dz = (post.array() > 0.0).cast<double>() * g.array();
                break;
            case Activation::tanh:
                dz = (1.0 - post.array().square()) * g.array();
                break;
            case Activation::softmax: {
                // row: dz = p .* (g - <g, p>)
                dz.resize(g.rows(), g.cols());
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                    const double dot = g.row(i).dot(post.row(i));
                    dz.row(i) = post.row(i).array() * (g.row(i).array() - dot);
                }
                break;
            }
        }
        const int in = l == 0 ? spec.input : spec.widths[l - 1];
        const int out = spec.widths[l];
        const Mat& layer_in = l == 0 ? tape.input : tape.post[l - 1];
        RowMajorMap gw(params.gw(l), out, in);
        Eigen::Map<Vec> gb(params.gb(l), out);
        gw += dz.transpose() * layer_in;
        gb += dz.colwise().sum().transpose();
        ConstRowMajorMap w(params.w(l), out, in);
        g = dz * w;
    }
    return g;
}

Vec class_weights(const std::vector<int>& counts) {
    if (counts.empty()) throw DataError("class_weights: no classes");
    double total = 0.0;
    for (const int c : counts) {
        if (c < 1) throw DataError("class_weights: zero-count class");
        total += c;
    }
    Vec raw(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) raw[k] = total / counts[k];
    return raw / raw.sum();
}

double weighted_ce(const Mat& probs, const std::vector<int>& y, const Vec& w) {
    const Eigen::Index n = probs.rows();
    const Eigen::Index c = probs.cols();
    if (static_cast<Eigen::Index>(y.size()) != n) throw NumericError("weighted_ce: label count mismatch");
    if (w.size() != c) throw NumericError("weighted_ce: weight count mismatch");
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int yi = y[i];
        if (yi < 0 || yi >= c) throw DataError("weighted_ce: label out of range");
        const double p = std::max(probs(i, yi), kProbFloor);
        loss += static_cast<double>(c) * w[yi] * (-std::log(p));
    }
    return loss / static_cast<double>(n);
}

Mat weighted_ce_grad(const Mat& probs, const std::vector<int>& y, const Vec& w) {
    const Eigen::Index n = probs.rows();
    const Eigen::Index c = probs.cols();
    Mat g = Mat::Zero(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int yi = y[i];
        const double p = std::max(probs(i, yi), kProbFloor);
        g(i, yi) = -static_cast<double>(c) * w[yi] / (p * static_cast<double>(n));
    }
    return g;
}

OptimState OptimState::init(std::size_t n, double lr, double weight_decay) {
    OptimState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr;
    s.weight_decay = weight_decay;
    return s;
}

void optim_step(ParamStore& params, OptimState& opt, int epoch) {
    if (epoch < 1) throw ConfigError("optim_step: epoch must be >= 1");
    if (opt.m.size() != params.size()) throw NumericError("optim_step: state size mismatch");
    for (const double g : params.grads)
        if (!std::isfinite(g)) throw NumericError("optim_step: non-finite gradient");

    opt.step += 1;
    const double alpha = opt.lr / std::sqrt(static_cast<double>(epoch));
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = params.grads[i];
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * g;
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * g * g;
        const double mhat = opt.m[i] / bc1;
        const double vhat = opt.v[i] / bc2;
        params.values[i] -= alpha * (mhat / (std::sqrt(vhat) + opt.eps) + opt.weight_decay * params.values[i]);
    }
}

ModelBundle ModelBundle::make(const NetSpec& spec, Rng& rng, double lr, double weight_decay) {
    ModelBundle m;
    m.params = ParamStore::init(spec, rng);
    m.opt = OptimState::init(m.params.size(), lr, weight_decay);
    return m;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, sections, trailing FNV-1a checksum.

namespace {

constexpr char kMagic[8] = {'C', 'N', 'S', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

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

void put_doubles(std::string& buf, const std::vector<double>& v) {
    put<std::uint64_t>(buf, v.size());
    buf.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void put_string(std::string& buf, const std::string& s) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
    buf.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > buf.size()) throw DataError("checkpoint: truncated");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::vector<double> get_doubles() {
        const auto n = get<std::uint64_t>();
        if (pos + n * sizeof(double) > buf.size()) throw DataError("checkpoint: truncated");
        std::vector<double> v(n);
        std::memcpy(v.data(), buf.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        if (pos + n > buf.size()) throw DataError("checkpoint: truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_spec(std::string& buf, const NetSpec& spec) {
    put<std::int32_t>(buf, spec.input);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(spec.widths.size()));
    for (std::size_t l = 0; l < spec.widths.size(); ++l) {
        put<std::int32_t>(buf, spec.widths[l]);
        put<std::uint8_t>(buf, static_cast<std::uint8_t>(spec.acts[l]));
    }
}

NetSpec get_spec(Reader& r) {
    NetSpec spec;
    spec.input = r.get<std::int32_t>();
    const auto layers = r.get<std::uint32_t>();
    for (std::uint32_t l = 0; l < layers; ++l) {
        spec.widths.push_back(r.get<std::int32_t>());
        spec.acts.push_back(static_cast<Activation>(r.get<std::uint8_t>()));
    }
    spec.validate();
    return spec;
}

}  // namespace

void save_checkpoint(std::ostream& os,
                     const std::vector<std::pair<std::string, const ModelBundle*>>& models) {
    std::string buf;
    put<std::uint32_t>(buf, kVersion);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(models.size()));
    for (const auto& [name, model] : models) {
        put_string(buf, name);
        put_spec(buf, model->params.spec);
        put_doubles(buf, model->params.values);
        put_doubles(buf, model->opt.m);
        put_doubles(buf, model->opt.v);
        put<std::int64_t>(buf, model->opt.step);
        put<double>(buf, model->opt.lr);
        put<double>(buf, model->opt.beta1);
        put<double>(buf, model->opt.beta2);
        put<double>(buf, model->opt.eps);
        put<double>(buf, model->opt.weight_decay);
    }
    os.write(kMagic, sizeof(kMagic));
    const std::uint64_t checksum = fnv1a(buf);
    os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    os.write(reinterpret_cast<const char*>(&checksum), sizeof(checksum));
    if (!os) throw DataError("checkpoint: write failed");
}

std::vector<std::pair<std::string, ModelBundle>> load_checkpoint(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw DataError("checkpoint: bad magic");
    std::string rest((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (rest.size() < sizeof(std::uint64_t)) throw DataError("checkpoint: truncated");
    std::uint64_t checksum;
    std::memcpy(&checksum, rest.data() + rest.size() - sizeof(checksum), sizeof(checksum));
    rest.resize(rest.size() - sizeof(checksum));
    if (fnv1a(rest) != checksum) throw DataError("checkpoint: checksum mismatch");

    Reader r{rest};
    if (r.get<std::uint32_t>() != kVersion) throw DataError("checkpoint: unsupported version");
    const auto count = r.get<std::uint32_t>();
    std::vector<std::pair<std::string, ModelBundle>> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.get_string();
        ModelBundle m;
        const NetSpec spec = get_spec(r);
        m.params.spec = spec;
        int in = spec.input;
        std::size_t total = 0;
        for (const int w : spec.widths) {
            m.params.offsets.push_back(total);
            total += static_cast<std::size_t>(w) * in + w;
            in = w;
        }
        m.params.values = r.get_doubles();
        if (m.params.values.size() != total) throw DataError("checkpoint: parameter size mismatch");
        m.params.grads.assign(total, 0.0);
        m.opt.m = r.get_doubles();
        m.opt.v = r.get_doubles();
        m.opt.step = r.get<std::int64_t>();
        m.opt.lr = r.get<double>();
        m.opt.beta1 = r.get<double>();
        m.opt.beta2 = r.get<double>();
        m.opt.eps = r.get<double>();
        m.opt.weight_decay = r.get<double>();
        out.emplace_back(std::move(name), std::move(m));
    }
    return out;
}

void save_checkpoint_file(const std::string& path,
                          const std::vector<std::pair<std::string, const ModelBundle*>>& models) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("checkpoint: cannot open " + path + " for writing");
    save_checkpoint(os, models);
}

std::vector<std::pair<std::string, ModelBundle>> load_checkpoint_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint: cannot open " + path);
    return load_checkpoint(is);
}

}  // namespace censor
