#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "serfiq/quality.hpp"
#include "serfiq/synth.hpp"

using namespace serfiq;
using Catch::Matchers::WithinAbs;

namespace {

StochasticEmbeddingSet make_set(std::vector<std::vector<double>> vectors) {
    StochasticEmbeddingSet set;
    set.vectors = std::move(vectors);
    return set;
}

StochasticEmbeddingSet random_set(std::uint64_t seed, std::size_t m, std::size_t dim,
                                  double scale = 1.0) {
    Rng rng(seed);
    StochasticEmbeddingSet set;
    set.vectors.resize(m);
    for (auto& v : set.vectors) {
        v.resize(dim);
        for (double& x : v) x = scale * rng.gaussian();
    }
    return set;
}

// Independent reference: plain double loop, no reuse of the library kernel.
double naive_quality(const StochasticEmbeddingSet& set) {
    const std::size_t m = set.vectors.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (j <= i) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < set.vectors[i].size(); ++k)
                d2 += (set.vectors[i][k] - set.vectors[j][k]) *
                      (set.vectors[i][k] - set.vectors[j][k]);
            sum += std::sqrt(d2);
        }
    const double mean = 2.0 / (double(m) * double(m)) * sum;
    return 2.0 / (1.0 + std::exp(mean));
}

StochasticEmbeddingSet scale_about_mean(const StochasticEmbeddingSet& set, double c) {
    const std::size_t dim = set.vectors.front().size();
    std::vector<double> mean(dim, 0.0);
    for (const auto& v : set.vectors)
        for (std::size_t k = 0; k < dim; ++k) mean[k] += v[k];
    for (double& x : mean) x /= static_cast<double>(set.vectors.size());

    StochasticEmbeddingSet out = set;
    for (auto& v : out.vectors)
        for (std::size_t k = 0; k < dim; ++k) v[k] = mean[k] + c * (v[k] - mean[k]);
    return out;
}

DenseNet small_net(double p_drop, OutputActivation act = OutputActivation::sigmoid,
                   std::uint64_t seed = 7) {
    NetSpec spec;
    spec.layer_dims = {4, 6, 3, 2};
    spec.dropout_prob = p_drop;
    spec.output_activation = act;
    spec.init_seed = seed;
    return init_net(spec);
}

}  // namespace

TEST_CASE("mean_pairwise_distance: worked values") {
    CHECK(mean_pairwise_distance(make_set({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}})) == 0.0);

    CHECK_THAT(mean_pairwise_distance(make_set({{0.0, 0.0}, {2.0, 0.0}})),
               WithinAbs(1.0, 1e-15));

    // unit equilateral triangle: three pairwise distances of 1
    const double s3 = std::sqrt(3.0) / 2.0;
    CHECK_THAT(mean_pairwise_distance(
                   make_set({{0.0, 0.0}, {1.0, 0.0}, {0.5, s3}})),
               WithinAbs(2.0 / 3.0, 1e-15));
}

TEST_CASE("ser_quality: worked values from the quality formula") {
    CHECK(ser_quality(make_set({{3.0, -1.0}, {3.0, -1.0}})) == 1.0);

    CHECK_THAT(ser_quality(make_set({{0.0, 0.0}, {2.0, 0.0}})),
               WithinAbs(0.5378828427399902, 1e-12));  // 2/(1+e)

    const double s3 = std::sqrt(3.0) / 2.0;
    CHECK_THAT(ser_quality(make_set({{0.0, 0.0}, {1.0, 0.0}, {0.5, s3}})),
               WithinAbs(0.6784872624683657, 1e-12));  // 2/(1+e^(2/3))
}

TEST_CASE("ser_quality: range, identity at zero spread, spread monotonicity") {
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        Rng meta(seed);
        const std::size_t m = 2 + meta.below(6);
        const std::size_t dim = 1 + meta.below(8);
        const auto set = random_set(derive_seed(1000, seed), m, dim);
        const double q = ser_quality(set);
        CHECK(q > 0.0);
        CHECK(q <= 1.0);
        if (mean_pairwise_distance(set) > 0.0) {
            CHECK(q < 1.0);
            CHECK(ser_quality(scale_about_mean(set, 1.5)) < q);
        }
    }
}

TEST_CASE("ser_quality: permutation and isometry invariance") {
    const auto set = random_set(42, 6, 5);
    const double q = ser_quality(set);

    StochasticEmbeddingSet permuted = set;
    std::reverse(permuted.vectors.begin(), permuted.vectors.end());
    std::swap(permuted.vectors[0], permuted.vectors[2]);
    CHECK_THAT(ser_quality(permuted), WithinAbs(q, 1e-12));

    // rotate in the (0,1) plane and translate: distances unchanged
    const double angle = 0.77;
    StochasticEmbeddingSet moved = set;
    for (auto& v : moved.vectors) {
        const double x = v[0], y = v[1];
        v[0] = std::cos(angle) * x - std::sin(angle) * y + 4.2;
        v[1] = std::sin(angle) * x + std::cos(angle) * y - 1.3;
        for (std::size_t k = 2; k < v.size(); ++k) v[k] += 0.5;
    }
    CHECK_THAT(ser_quality(moved), WithinAbs(q, 1e-12));
}

TEST_CASE("ser_quality matches the naive double-loop reference") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto set = random_set(derive_seed(2000, seed), 2 + seed % 7, 4);
        CHECK_THAT(ser_quality(set), WithinAbs(naive_quality(set), 1e-12));
    }
}

TEST_CASE("stochastic set invariants are enforced") {
    CHECK_THROWS(mean_pairwise_distance(make_set({{1.0}})));
    CHECK_THROWS(mean_pairwise_distance(make_set({{1.0}, {1.0, 2.0}})));
    SerConfig cfg;
    cfg.m = 1;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("stochastic_set_on_top: p_d = 0 collapses to the deterministic embedding") {
    const DenseNet net = small_net(0.0);
    const std::vector<double> x{0.1, -0.3, 0.8, 0.2};
    const auto set = stochastic_set_on_top(net, x, 10, 77);
    const auto expected = penultimate(net, x);
    for (const auto& v : set.vectors) CHECK(v == expected);
    CHECK(ser_quality(set) == 1.0);
}

TEST_CASE("stochastic_set_on_top: deterministic and consistent with full forward") {
    const DenseNet net = small_net(0.5);
    const std::vector<double> x{0.4, 0.1, -0.2, 0.9};

    const auto a = stochastic_set_on_top(net, x, 8, 123);
    const auto b = stochastic_set_on_top(net, x, 8, 123);
    CHECK(a.vectors == b.vectors);

    const auto c = stochastic_set_on_top(net, x, 8, 124);
    CHECK(a.vectors != c.vectors);

    // pass i equals the penultimate activation of a full forward with the
    // same per-pass plan
    for (std::size_t i = 0; i < a.vectors.size(); ++i) {
        const auto acts =
            forward(net, x, DropoutPlan::with_seed(pass_seed(123, i)));
        CHECK(a.vectors[i] == acts.penultimate());
    }
}

TEST_CASE("stochastic_set_same_model: p_d = 0 reproduces the deterministic output") {
    const DenseNet net = small_net(0.0);
    const std::vector<double> x{0.5, -0.5, 0.25, 0.0};
    const auto set = stochastic_set_same_model(net, x, 6, 9);
    const auto expected = forward(net, x, DropoutPlan::off()).output();
    for (const auto& v : set.vectors) CHECK(v == expected);
}

TEST_CASE("stochastic_set_same_model: single hidden unit realizes exactly two outputs") {
    NetSpec spec;
    spec.layer_dims = {2, 1, 1};
    spec.dropout_prob = 0.5;
    spec.output_activation = OutputActivation::sigmoid;
    spec.init_seed = 3;
    DenseNet net = init_net(spec);
    net.weights[0].data = {0.7, -0.4};
    net.biases[0] = {0.1};
    net.weights[1].data = {1.3};
    net.biases[1] = {-0.2};

    const std::vector<double> x{0.6, 0.3};
    const double a = penultimate(net, x)[0];
    const double kept = 1.0 / (1.0 + std::exp(-(1.3 * (2.0 * a) - 0.2)));
    const double dropped = 1.0 / (1.0 + std::exp(-(-0.2)));

    const auto set = stochastic_set_same_model(net, x, 64, 31);
    bool saw_kept = false, saw_dropped = false;
    for (const auto& v : set.vectors) {
        REQUIRE(v.size() == 1);
        const bool is_kept = std::abs(v[0] - kept) < 1e-12;
        const bool is_dropped = std::abs(v[0] - dropped) < 1e-12;
        CHECK((is_kept || is_dropped));
        saw_kept = saw_kept || is_kept;
        saw_dropped = saw_dropped || is_dropped;
    }
    CHECK(saw_kept);
    CHECK(saw_dropped);

    const auto again = stochastic_set_same_model(net, x, 64, 31);
    CHECK(again.vectors == set.vectors);
}

TEST_CASE("stochastic_set_same_model needs at least two layers") {
    NetSpec spec;
    spec.layer_dims = {3, 2};
    spec.dropout_prob = 0.5;
    spec.init_seed = 1;
    const DenseNet net = init_net(spec);
    CHECK_THROWS(stochastic_set_same_model(net, {1.0, 0.0, 0.0}, 4, 0));
}

TEST_CASE("ser_fiq: p_d = 0 scores 1.0 in both modes") {
    const DenseNet net = small_net(0.0);
    const std::vector<double> x{0.2, 0.4, -0.6, 0.1};
    for (const auto mode : {SerMode::on_top, SerMode::same_model}) {
        SerConfig cfg;
        cfg.m = 10;
        cfg.mode = mode;
        cfg.master_seed = 5;
        CHECK(ser_fiq(x, net, cfg) == 1.0);
    }
}

TEST_CASE("score_dataset: empty in, empty out") {
    const EmbeddingDataset empty(4);
    SerConfig cfg;
    cfg.m = 4;
    CHECK(score_dataset(empty, small_net(0.5), cfg).entries.empty());
}

TEST_CASE("score_dataset: order- and schedule-independent") {
    const SynthResult synth = generate({3, 4, 4, 51, 0.0, 0.3, 52});
    const DenseNet net = small_net(0.5);

    SerConfig cfg;
    cfg.m = 16;

    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        cfg.master_seed = seed;
        const QualityTable sequential = score_dataset(synth.dataset, net, cfg, 1);
        const QualityTable parallel = score_dataset(synth.dataset, net, cfg, 4);
        CHECK(sequential.entries == parallel.entries);

        // permute the record order and rescore
        EmbeddingDataset permuted(synth.dataset.dim());
        for (std::size_t i = synth.dataset.size(); i-- > 0;)
            permuted.add(synth.dataset[i]);
        const QualityTable reordered = score_dataset(permuted, net, cfg, 1);
        CHECK(sequential.entries == reordered.entries);

        for (const auto& [id, q] : sequential.entries) {
            CHECK(q > 0.0);
            CHECK(q <= 1.0);
        }
    }
}
