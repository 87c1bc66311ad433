#pragma once

// Minimal fully-connected network engine: tanh hidden layers, inverted
// dropout on every layer input, sigmoid/softmax classification heads,
// backpropagation and AdaDelta. 64-bit scalars throughout; determinism over
// throughput.
//
// Dropout masks are not stored anywhere: a mask bit is a pure function of
// (plan seed, layer index, unit index), so forward and backward replay the
// same subnetwork and stochastic passes are schedulable in any order.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "serfiq/dataset.hpp"
#include "serfiq/rng.hpp"

namespace serfiq {

enum class OutputActivation { sigmoid, softmax, tanh };
enum class LossKind { bce, softmax_ce };

struct NetSpec {
    std::vector<std::size_t> layer_dims;  // [d0, d1, ..., dL]
    double dropout_prob = 0.5;
    OutputActivation output_activation = OutputActivation::sigmoid;
    std::uint64_t init_seed = 0;

    std::size_t layer_count() const { return layer_dims.size() - 1; }
    std::size_t input_dim() const { return layer_dims.front(); }
    std::size_t output_dim() const { return layer_dims.back(); }

    void validate() const {
        if (layer_dims.size() < 2)
            throw std::runtime_error("net spec needs at least one layer");
        for (std::size_t d : layer_dims)
            if (d == 0) throw std::runtime_error("zero layer dimension");
        if (dropout_prob < 0.0 || dropout_prob >= 1.0)
            throw std::runtime_error("dropout_prob must be in [0,1)");
    }
};

// Row-major (rows x cols) weight block for one layer.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct DenseNet {
    NetSpec spec;
    std::vector<Matrix> weights;              // weights[l]: d_{l+1} x d_l
    std::vector<std::vector<double>> biases;  // biases[l]: d_{l+1}

    std::size_t layer_count() const { return weights.size(); }
};

struct DropoutPlan {
    bool stochastic = false;
    std::uint64_t seed = 0;

    static DropoutPlan off() { return {}; }
    static DropoutPlan with_seed(std::uint64_t seed) { return {true, seed}; }
};

// All post-activation vectors of one forward pass; activations[0] is the
// input, activations[L] the output.
struct LayerActivations {
    std::vector<std::vector<double>> activations;
    DropoutPlan plan;

    const std::vector<double>& output() const { return activations.back(); }
    const std::vector<double>& penultimate() const {
        return activations[activations.size() - 2];
    }
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<std::vector<double>> biases;
};

inline DenseNet init_net(const NetSpec& spec) {
    spec.validate();
    DenseNet net;
    net.spec = spec;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t d_in = spec.layer_dims[l];
        const std::size_t d_out = spec.layer_dims[l + 1];
        Matrix w(d_out, d_in);
        const double bound = std::sqrt(6.0 / static_cast<double>(d_in + d_out));
        Rng rng(derive_seed(spec.init_seed, 0x696E6974 /* "init" */, l));
        for (double& x : w.data) x = bound * rng.uniform_signed_open();
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(d_out, 0.0);
    }
    return net;
}

namespace detail {

// Apply the layer-input dropout mask in place. Inverted dropout: survivors
// are rescaled by 1/(1-p) at mask time.
inline void apply_dropout(std::vector<double>& v, const DropoutPlan& plan,
                          std::size_t layer, double p_drop) {
    if (!plan.stochastic || p_drop == 0.0) return;
    const double keep = 1.0 - p_drop;
    const double scale = 1.0 / keep;
    for (std::size_t u = 0; u < v.size(); ++u)
        v[u] = mask_keep(plan.seed, layer, u, keep) ? v[u] * scale : 0.0;
}

inline void affine(const Matrix& w, const std::vector<double>& b,
                   const std::vector<double>& x, std::vector<double>& out) {
    out.assign(w.rows, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
        const double* row = w.data.data() + r * w.cols;
        double acc = b[r];
        for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
        out[r] = acc;
    }
}

inline void apply_output_activation(std::vector<double>& z, OutputActivation act) {
    if (act == OutputActivation::sigmoid) {
        for (double& v : z) v = 1.0 / (1.0 + std::exp(-v));
    } else if (act == OutputActivation::softmax) {
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
            v = std::exp(v - zmax);
            sum += v;
        }
        for (double& v : z) v /= sum;
    } else {
        for (double& v : z) v = std::tanh(v);
    }
}

}  // namespace detail

inline LayerActivations forward(const DenseNet& net, const std::vector<double>& x,
                                const DropoutPlan& plan) {
    if (x.size() != net.spec.input_dim())
        throw std::runtime_error("forward: input dim " + std::to_string(x.size()) +
                                 " != net input dim " +
                                 std::to_string(net.spec.input_dim()));
    LayerActivations acts;
    acts.plan = plan;
    acts.activations.reserve(net.layer_count() + 1);
    acts.activations.push_back(x);

    std::vector<double> z;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        std::vector<double> input = acts.activations.back();
        detail::apply_dropout(input, plan, l, net.spec.dropout_prob);
        detail::affine(net.weights[l], net.biases[l], input, z);
        if (l + 1 < net.layer_count()) {
            for (double& v : z) v = std::tanh(v);
        } else {
            detail::apply_output_activation(z, net.spec.output_activation);
        }
        acts.activations.push_back(z);
    }
    return acts;
}

// Deterministic activation of layer L-1 (the embedding layer of a trained
// classification head). A single-layer net returns the input itself.
inline std::vector<double> penultimate(const DenseNet& net,
                                       const std::vector<double>& x) {
    if (x.size() != net.spec.input_dim())
        throw std::runtime_error("penultimate: input dim mismatch");
    std::vector<double> a = x;
    std::vector<double> z;
    for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
        detail::affine(net.weights[l], net.biases[l], a, z);
        for (double& v : z) v = std::tanh(v);
        a = z;
    }
    return a;
}

struct LossResult {
    double loss = 0.0;
    std::vector<double> grad_preact;  // dL/dz at the output layer
};

// Mean per-class binary cross-entropy against a one-hot target, on sigmoid
// outputs. Probabilities are clamped to [1e-7, 1-1e-7] inside the logs; the
// gradient is the exact (p - t)/n of the unclamped loss.
inline LossResult bce_loss(const std::vector<double>& probs,
                           const std::vector<double>& target) {
    if (probs.size() != target.size())
        throw std::runtime_error("bce_loss: size mismatch");
    std::size_t ones = 0;
    for (double t : target) {
        if (t != 0.0 && t != 1.0)
            throw std::runtime_error("bce_loss: target is not one-hot");
        if (t == 1.0) ++ones;
    }
    if (ones != 1) throw std::runtime_error("bce_loss: target is not one-hot");

    constexpr double clamp = 1e-7;
    const double n = static_cast<double>(probs.size());
    LossResult res;
    res.grad_preact.resize(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
        const double p = std::min(1.0 - clamp, std::max(clamp, probs[k]));
        res.loss -= target[k] * std::log(p) + (1.0 - target[k]) * std::log(1.0 - p);
        res.grad_preact[k] = (probs[k] - target[k]) / n;
    }
    res.loss /= n;
    return res;
}

// Cross-entropy on softmax outputs; gradient w.r.t. logits is p - t.
inline LossResult softmax_ce_loss(const std::vector<double>& probs,
                                  const std::vector<double>& target) {
    if (probs.size() != target.size())
        throw std::runtime_error("softmax_ce_loss: size mismatch");
    constexpr double clamp = 1e-7;
    LossResult res;
    res.grad_preact.resize(probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) {
        if (target[k] == 1.0) res.loss -= std::log(std::max(clamp, probs[k]));
        res.grad_preact[k] = probs[k] - target[k];
    }
    return res;
}

inline LossResult compute_loss(LossKind kind, const std::vector<double>& probs,
                               const std::vector<double>& target) {
    return kind == LossKind::bce ? bce_loss(probs, target)
                                 : softmax_ce_loss(probs, target);
}

// Exact gradients for the subnetwork realized by the activations' dropout
// plan. grad_output is dL/dz at the output layer.
inline Gradients backward(const DenseNet& net, const LayerActivations& acts,
                          const std::vector<double>& grad_output) {
    const std::size_t L = net.layer_count();
    if (acts.activations.size() != L + 1)
        throw std::runtime_error("backward: activations do not match net depth");
    if (grad_output.size() != net.spec.output_dim())
        throw std::runtime_error("backward: loss gradient dim mismatch");

    Gradients g;
    g.weights.resize(L);
    g.biases.resize(L);

    const double p_drop = net.spec.dropout_prob;
    const double keep = 1.0 - p_drop;
    const double scale = 1.0 / keep;
    const bool stochastic = acts.plan.stochastic && p_drop > 0.0;

    std::vector<double> dz = grad_output;
    for (std::size_t l = L; l-- > 0;) {
        // Reconstruct the dropped input the layer actually saw.
        std::vector<double> input = acts.activations[l];
        if (stochastic) {
            for (std::size_t u = 0; u < input.size(); ++u)
                input[u] = mask_keep(acts.plan.seed, l, u, keep) ? input[u] * scale
                                                                 : 0.0;
        }
        Matrix& dw = g.weights[l];
        dw = Matrix(net.weights[l].rows, net.weights[l].cols);
        for (std::size_t r = 0; r < dw.rows; ++r) {
            const double d = dz[r];
            double* row = dw.data.data() + r * dw.cols;
            for (std::size_t c = 0; c < dw.cols; ++c) row[c] = d * input[c];
        }
        g.biases[l] = dz;

        if (l == 0) break;

        // dL/d(input of layer l) through the weights, then through the mask.
        std::vector<double> da(net.weights[l].cols, 0.0);
        for (std::size_t r = 0; r < net.weights[l].rows; ++r) {
            const double d = dz[r];
            const double* row = net.weights[l].data.data() + r * net.weights[l].cols;
            for (std::size_t c = 0; c < net.weights[l].cols; ++c) da[c] += d * row[c];
        }
        if (stochastic) {
            for (std::size_t u = 0; u < da.size(); ++u)
                da[u] = mask_keep(acts.plan.seed, l, u, keep) ? da[u] * scale : 0.0;
        }
        // Through tanh of the hidden layer below.
        const std::vector<double>& a = acts.activations[l];
        dz.assign(da.size(), 0.0);
        for (std::size_t u = 0; u < da.size(); ++u)
            dz[u] = da[u] * (1.0 - a[u] * a[u]);
    }
    return g;
}

// AdaDelta accumulators, one pair per parameter. The raw update rule has no
// learning rate; lr scales the applied update, framework-style.
struct AdaDeltaState {
    double rho = 0.95;
    double eps = 1e-6;
    double lr = 1.0;
    std::vector<Matrix> g2_weights, dx2_weights;
    std::vector<std::vector<double>> g2_biases, dx2_biases;

    static AdaDeltaState for_net(const DenseNet& net, double lr, double rho = 0.95,
                                 double eps = 1e-6) {
        AdaDeltaState st;
        st.rho = rho;
        st.eps = eps;
        st.lr = lr;
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            st.g2_weights.emplace_back(net.weights[l].rows, net.weights[l].cols);
            st.dx2_weights.emplace_back(net.weights[l].rows, net.weights[l].cols);
            st.g2_biases.emplace_back(net.biases[l].size(), 0.0);
            st.dx2_biases.emplace_back(net.biases[l].size(), 0.0);
        }
        return st;
    }
};

namespace detail {

inline void adadelta_update(double rho, double eps, double lr, double& param,
                            double g, double& eg2, double& edx2) {
    if (!std::isfinite(g)) throw std::runtime_error("adadelta: non-finite gradient");
    eg2 = rho * eg2 + (1.0 - rho) * g * g;
    const double dx = -std::sqrt(edx2 + eps) / std::sqrt(eg2 + eps) * g;
    edx2 = rho * edx2 + (1.0 - rho) * dx * dx;
    param += lr * dx;
}

}  // namespace detail

inline void adadelta_step(AdaDeltaState& state, DenseNet& net, const Gradients& grads) {
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        if (grads.weights[l].rows != net.weights[l].rows ||
            grads.weights[l].cols != net.weights[l].cols ||
            grads.biases[l].size() != net.biases[l].size())
            throw std::runtime_error("adadelta_step: gradient shape mismatch");
        auto& w = net.weights[l].data;
        const auto& gw = grads.weights[l].data;
        auto& eg2 = state.g2_weights[l].data;
        auto& edx2 = state.dx2_weights[l].data;
        for (std::size_t i = 0; i < w.size(); ++i)
            detail::adadelta_update(state.rho, state.eps, state.lr, w[i], gw[i],
                                    eg2[i], edx2[i]);
        auto& b = net.biases[l];
        const auto& gb = grads.biases[l];
        auto& beg2 = state.g2_biases[l];
        auto& bedx2 = state.dx2_biases[l];
        for (std::size_t i = 0; i < b.size(); ++i)
            detail::adadelta_update(state.rho, state.eps, state.lr, b[i], gb[i],
                                    beg2[i], bedx2[i]);
    }
}

struct TrainConfig {
    std::size_t batch_size = 1024;
    std::size_t epochs = 100;
    double lr = 0.1;
    double rho = 0.95;
    double eps = 1e-6;
    std::uint64_t shuffle_seed = 0;
    LossKind loss = LossKind::bce;
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;  // one entry per epoch
};

// Identity labels sorted lexicographically define the class indices.
inline std::vector<std::string> identity_labels(const EmbeddingDataset& ds) {
    std::vector<std::string> labels;
    labels.reserve(ds.identity_count());
    for (const auto& [identity, positions] : ds.identity_index())
        labels.push_back(identity);
    return labels;  // identity_index is an ordered map
}

inline TrainResult train(DenseNet& net, const EmbeddingDataset& ds,
                         const TrainConfig& cfg) {
    const std::size_t n_ids = ds.identity_count();
    if (net.spec.output_dim() != n_ids)
        throw std::runtime_error("train: net output dim " +
                                 std::to_string(net.spec.output_dim()) +
                                 " != identity count " + std::to_string(n_ids));
    if (net.spec.input_dim() != ds.dim())
        throw std::runtime_error("train: net input dim != embedding dim");
    const OutputActivation needed = cfg.loss == LossKind::bce
                                        ? OutputActivation::sigmoid
                                        : OutputActivation::softmax;
    if (net.spec.output_activation != needed)
        throw std::runtime_error("train: loss does not match the net's output head");

    const auto labels = identity_labels(ds);
    std::unordered_map<std::string, std::size_t> label_index;
    for (std::size_t i = 0; i < labels.size(); ++i) label_index[labels[i]] = i;

    std::vector<std::size_t> order(ds.size());
    std::iota(order.begin(), order.end(), 0);

    Gradients batch_grad;
    TrainResult result;
    result.epoch_mean_loss.reserve(cfg.epochs);

    std::vector<double> target(n_ids, 0.0);
    std::vector<double> input;

    AdaDeltaState state = AdaDeltaState::for_net(net, cfg.lr, cfg.rho, cfg.eps);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(derive_seed(cfg.shuffle_seed, 0x73687566 /* "shuf" */, epoch));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t seen = 0;

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const double inv_batch = 1.0 / static_cast<double>(end - start);

            batch_grad.weights.assign(net.layer_count(), Matrix());
            batch_grad.biases.assign(net.layer_count(), {});
            for (std::size_t l = 0; l < net.layer_count(); ++l) {
                batch_grad.weights[l] =
                    Matrix(net.weights[l].rows, net.weights[l].cols);
                batch_grad.biases[l].assign(net.biases[l].size(), 0.0);
            }

            for (std::size_t pos = start; pos < end; ++pos) {
                const EmbeddingRecord& rec = ds[order[pos]];
                input.assign(rec.vector.begin(), rec.vector.end());
                std::fill(target.begin(), target.end(), 0.0);
                target[label_index.at(rec.identity)] = 1.0;

                const DropoutPlan plan = DropoutPlan::with_seed(derive_seed(
                    cfg.shuffle_seed, 0x64726F70 /* "drop" */, epoch, pos));
                const LayerActivations acts = forward(net, input, plan);
                const LossResult loss = compute_loss(cfg.loss, acts.output(), target);
                epoch_loss += loss.loss;
                ++seen;

                const Gradients g = backward(net, acts, loss.grad_preact);
                for (std::size_t l = 0; l < net.layer_count(); ++l) {
                    const auto& gw = g.weights[l].data;
                    auto& bw = batch_grad.weights[l].data;
                    for (std::size_t i = 0; i < bw.size(); ++i)
                        bw[i] += gw[i] * inv_batch;
                    const auto& gb = g.biases[l];
                    auto& bb = batch_grad.biases[l];
                    for (std::size_t i = 0; i < bb.size(); ++i)
                        bb[i] += gb[i] * inv_batch;
                }
            }
            adadelta_step(state, net, batch_grad);
        }
        result.epoch_mean_loss.push_back(epoch_loss /
                                         static_cast<double>(seen ? seen : 1));
    }
    return result;
}

// Model file: text header describing the spec, then per layer the weight
// matrix (row-major) and bias vector as f64-LE blocks. Round-trips bit-exactly.
//
//   SERFIQNET 1
//   layer_dims 8 16 32 8 4
//   dropout_prob 0x1p-1
//   output_activation sigmoid
//   init_seed 42
//   END
//   <binary parameter blocks>

namespace detail {

inline void write_f64le(std::ostream& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    out.write(bytes, 8);
}

inline double read_f64le(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("unexpected end of model file");
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[i];
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
}

inline std::string format_hex_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::hex);
    return "0x" + std::string(buf, ptr);
}

inline double parse_hex_double(const std::string& s) {
    if (s.rfind("0x", 0) != 0)
        throw std::runtime_error("model file: expected hex float, got '" + s + "'");
    double v{};
    auto [ptr, ec] =
        std::from_chars(s.data() + 2, s.data() + s.size(), v, std::chars_format::hex);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw std::runtime_error("model file: bad hex float '" + s + "'");
    return v;
}

}  // namespace detail

inline void save_model(const DenseNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "SERFIQNET 1\n";
    out << "layer_dims";
    for (std::size_t d : net.spec.layer_dims) out << ' ' << d;
    out << "\n";
    out << "dropout_prob " << detail::format_hex_double(net.spec.dropout_prob) << "\n";
    const char* act = net.spec.output_activation == OutputActivation::sigmoid ? "sigmoid"
                      : net.spec.output_activation == OutputActivation::softmax
                          ? "softmax"
                          : "tanh";
    out << "output_activation " << act << "\n";
    out << "init_seed " << net.spec.init_seed << "\n";
    out << "END\n";
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        for (double v : net.weights[l].data) detail::write_f64le(out, v);
        for (double v : net.biases[l]) detail::write_f64le(out, v);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline DenseNet load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::string line;
    if (!std::getline(in, line) || line != "SERFIQNET 1")
        throw std::runtime_error(path + ": not a version-1 model file");

    NetSpec spec;
    spec.dropout_prob = -1.0;
    bool saw_end = false;
    while (std::getline(in, line)) {
        if (line == "END") {
            saw_end = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "layer_dims") {
            std::size_t d;
            while (ls >> d) spec.layer_dims.push_back(d);
        } else if (key == "dropout_prob") {
            std::string v;
            ls >> v;
            spec.dropout_prob = detail::parse_hex_double(v);
        } else if (key == "output_activation") {
            std::string v;
            ls >> v;
            if (v == "sigmoid")
                spec.output_activation = OutputActivation::sigmoid;
            else if (v == "softmax")
                spec.output_activation = OutputActivation::softmax;
            else if (v == "tanh")
                spec.output_activation = OutputActivation::tanh;
            else
                throw std::runtime_error(path + ": unknown output_activation " + v);
        } else if (key == "init_seed") {
            ls >> spec.init_seed;
        } else {
            throw std::runtime_error(path + ": unknown header key " + key);
        }
    }
    if (!saw_end) throw std::runtime_error(path + ": missing END marker");
    if (spec.dropout_prob < 0.0)
        throw std::runtime_error(path + ": missing dropout_prob");
    spec.validate();

    DenseNet net;
    net.spec = spec;
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        Matrix w(spec.layer_dims[l + 1], spec.layer_dims[l]);
        for (double& v : w.data) v = detail::read_f64le(in);
        net.weights.push_back(std::move(w));
        std::vector<double> b(spec.layer_dims[l + 1]);
        for (double& v : b) v = detail::read_f64le(in);
        net.biases.push_back(std::move(b));
    }
    return net;
}

}  // namespace serfiq
