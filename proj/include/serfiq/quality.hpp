#pragma once

// Stochastic embedding robustness quality. A probe is pushed through m
// dropout subnetworks of the model; the spread of the resulting embedding
// set maps to a score in (0,1] via
//
//   q(X) = 2 * sigmoid( -(2/m^2) * sum_{i<j} ||x_i - x_j|| )
//
// Per-pass and per-record seeds are derived from the master seed, so scores
// are independent of execution order and parallel schedule.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "serfiq/dataset.hpp"
#include "serfiq/net.hpp"
#include "serfiq/rng.hpp"

namespace serfiq {

struct StochasticEmbeddingSet {
    std::vector<std::vector<double>> vectors;
    std::uint64_t source_seed = 0;

    std::size_t size() const { return vectors.size(); }

    void validate() const {
        if (vectors.size() < 2)
            throw std::runtime_error("stochastic set needs m >= 2 embeddings");
        for (const auto& v : vectors) {
            if (v.size() != vectors.front().size())
                throw std::runtime_error("stochastic set has mixed dimensions");
            for (double x : v)
                if (!std::isfinite(x))
                    throw std::runtime_error("non-finite stochastic embedding");
        }
    }
};

enum class SerMode { on_top, same_model };

struct SerConfig {
    std::size_t m = 100;
    SerMode mode = SerMode::on_top;
    std::uint64_t master_seed = 0;
    // Experimental: L2-normalize each stochastic embedding before the
    // pairwise distances. Off by default; distances are taken on raw vectors.
    bool normalize_embeddings = false;

    void validate() const {
        if (m < 2) throw std::runtime_error("ser config needs m >= 2");
    }
};

// Mean pairwise euclidean distance with the 2/m^2 normalization (kept as-is,
// not the unbiased 2/(m(m-1))).
inline double mean_pairwise_distance(const StochasticEmbeddingSet& set) {
    set.validate();
    const std::size_t m = set.vectors.size();
    const std::size_t dim = set.vectors.front().size();
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = i + 1; j < m; ++j) {
            double d2 = 0.0;
            const double* a = set.vectors[i].data();
            const double* b = set.vectors[j].data();
            for (std::size_t k = 0; k < dim; ++k) {
                const double diff = a[k] - b[k];
                d2 += diff * diff;
            }
            sum += std::sqrt(d2);
        }
    }
    return 2.0 / (static_cast<double>(m) * static_cast<double>(m)) * sum;
}

// q = 2*sigmoid(-D), computed as 2*exp(-D)/(1+exp(-D)) so large spreads
// underflow gracefully instead of overflowing.
inline double ser_quality(const StochasticEmbeddingSet& set) {
    const double d = mean_pairwise_distance(set);
    const double e = std::exp(-d);
    return 2.0 * e / (1.0 + e);
}

inline std::uint64_t pass_seed(std::uint64_t master_seed, std::size_t pass) {
    return derive_seed(master_seed, 0x70617373 /* "pass" */, pass);
}

inline std::uint64_t record_seed(std::uint64_t master_seed,
                                 const std::string& image_id) {
    return derive_seed(master_seed, 0x72656364 /* "recd" */, hash_string(image_id));
}

// m full stochastic passes; the embedding is the layer L-1 activation with
// dropout applied to the input of every layer traversed.
inline StochasticEmbeddingSet stochastic_set_on_top(const DenseNet& net,
                                                    const std::vector<double>& embedding,
                                                    std::size_t m,
                                                    std::uint64_t master_seed) {
    if (embedding.size() != net.spec.input_dim())
        throw std::runtime_error("stochastic_set_on_top: input dim mismatch");
    if (m < 2) throw std::runtime_error("stochastic_set_on_top: m >= 2 required");

    StochasticEmbeddingSet set;
    set.source_seed = master_seed;
    set.vectors.reserve(m);
    std::vector<double> a, z;
    for (std::size_t i = 0; i < m; ++i) {
        const DropoutPlan plan = DropoutPlan::with_seed(pass_seed(master_seed, i));
        a = embedding;
        for (std::size_t l = 0; l + 1 < net.layer_count(); ++l) {
            detail::apply_dropout(a, plan, l, net.spec.dropout_prob);
            detail::affine(net.weights[l], net.biases[l], a, z);
            for (double& v : z) v = std::tanh(v);
            a = z;
        }
        set.vectors.push_back(a);
    }
    return set;
}

// One deterministic pass to the penultimate activation, then m stochastic
// applications of the final layer only.
inline StochasticEmbeddingSet stochastic_set_same_model(const DenseNet& net,
                                                        const std::vector<double>& input,
                                                        std::size_t m,
                                                        std::uint64_t master_seed) {
    if (net.layer_count() < 2)
        throw std::runtime_error("stochastic_set_same_model: net needs >= 2 layers");
    if (m < 2) throw std::runtime_error("stochastic_set_same_model: m >= 2 required");

    const std::vector<double> a = penultimate(net, input);
    const std::size_t last = net.layer_count() - 1;

    StochasticEmbeddingSet set;
    set.source_seed = master_seed;
    set.vectors.reserve(m);
    std::vector<double> dropped, z;
    for (std::size_t i = 0; i < m; ++i) {
        const DropoutPlan plan = DropoutPlan::with_seed(pass_seed(master_seed, i));
        dropped = a;
        detail::apply_dropout(dropped, plan, last, net.spec.dropout_prob);
        detail::affine(net.weights[last], net.biases[last], dropped, z);
        detail::apply_output_activation(z, net.spec.output_activation);
        set.vectors.push_back(z);
    }
    return set;
}

namespace detail {

inline void maybe_normalize(StochasticEmbeddingSet& set, bool enabled) {
    if (!enabled) return;
    for (auto& v : set.vectors) {
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        const double n = std::sqrt(n2);
        if (n > 0.0)
            for (double& x : v) x /= n;
    }
}

}  // namespace detail

inline double ser_fiq(const std::vector<double>& input, const DenseNet& net,
                      const SerConfig& cfg) {
    cfg.validate();
    StochasticEmbeddingSet set =
        cfg.mode == SerMode::on_top
            ? stochastic_set_on_top(net, input, cfg.m, cfg.master_seed)
            : stochastic_set_same_model(net, input, cfg.m, cfg.master_seed);
    detail::maybe_normalize(set, cfg.normalize_embeddings);
    return ser_quality(set);
}

// Scores every record. Per-record seeds come from (master_seed, image_id),
// so the table is identical for any record order and any thread count.
inline QualityTable score_dataset(const EmbeddingDataset& ds, const DenseNet& net,
                                  const SerConfig& cfg, unsigned n_threads = 1) {
    cfg.validate();
    const std::size_t n = ds.size();
    std::vector<double> scores(n);

    auto score_range = [&](std::size_t begin, std::size_t end) {
        std::vector<double> input;
        for (std::size_t i = begin; i < end; ++i) {
            const EmbeddingRecord& rec = ds[i];
            input.assign(rec.vector.begin(), rec.vector.end());
            SerConfig per = cfg;
            per.master_seed = record_seed(cfg.master_seed, rec.image_id);
            scores[i] = ser_fiq(input, net, per);
        }
    };

    if (n_threads <= 1 || n < 2) {
        score_range(0, n);
    } else {
        const unsigned workers = std::min<unsigned>(n_threads, static_cast<unsigned>(n));
        std::vector<std::thread> pool;
        pool.reserve(workers);
        const std::size_t chunk = (n + workers - 1) / workers;
        for (unsigned t = 0; t < workers; ++t) {
            const std::size_t begin = t * chunk;
            const std::size_t end = std::min(n, begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(score_range, begin, end);
        }
        for (auto& th : pool) th.join();
    }

    QualityTable table;
    for (std::size_t i = 0; i < n; ++i) table.entries.emplace(ds[i].image_id, scores[i]);
    return table;
}

}  // namespace serfiq
