#pragma once

// Synthetic identity clusters with controllable per-image degradation.
// Identity prototypes are unit vectors; each image is its prototype plus
// gaussian noise of a per-image magnitude sigma, renormalized. The ground
// truth quality of an image is -sigma: higher means cleaner, and only the
// rank matters downstream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "serfiq/dataset.hpp"
#include "serfiq/rng.hpp"

namespace serfiq {

struct SynthSpec {
    std::size_t n_identities = 10;
    std::size_t images_per_identity = 10;
    std::size_t dim = 64;
    std::uint64_t prototype_seed = 1;
    double noise_low = 0.0;
    double noise_high = 0.1;
    std::uint64_t noise_seed = 2;

    void validate() const {
        if (n_identities == 0 || images_per_identity == 0)
            throw std::runtime_error("synth: identity and image counts must be > 0");
        if (dim < 2) throw std::runtime_error("synth: dim must be >= 2");
        if (noise_low < 0.0 || noise_high < 0.0 || noise_low > noise_high)
            throw std::runtime_error("synth: need 0 <= noise_low <= noise_high");
    }
};

struct SynthResult {
    EmbeddingDataset dataset;
    QualityTable ground_truth;  // image_id -> -sigma
};

namespace detail {

inline std::string zero_pad(std::size_t value, std::size_t width) {
    std::string s = std::to_string(value);
    return s.size() >= width ? s : std::string(width - s.size(), '0') + s;
}

inline std::vector<double> unit_gaussian_vector(Rng& rng, std::size_t dim) {
    std::vector<double> v(dim);
    for (double& x : v) x = rng.gaussian();
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (n == 0.0) throw std::runtime_error("synth: degenerate zero prototype");
    for (double& x : v) x /= n;
    return v;
}

inline std::vector<float> to_float(const std::vector<double>& v) {
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
}

}  // namespace detail

inline SynthResult generate(const SynthSpec& spec) {
    spec.validate();
    const std::size_t id_width =
        std::max<std::size_t>(4, std::to_string(spec.n_identities - 1).size());
    const std::size_t im_width =
        std::max<std::size_t>(4, std::to_string(spec.images_per_identity - 1).size());

    SynthResult result;
    result.dataset = EmbeddingDataset(spec.dim);

    for (std::size_t i = 0; i < spec.n_identities; ++i) {
        Rng proto_rng(derive_seed(spec.prototype_seed, 0x70726F74 /* "prot" */, i));
        const std::vector<double> proto =
            detail::unit_gaussian_vector(proto_rng, spec.dim);
        const std::string identity = "id" + detail::zero_pad(i, id_width);

        for (std::size_t j = 0; j < spec.images_per_identity; ++j) {
            Rng img_rng(derive_seed(spec.noise_seed, 0x696D6167 /* "imag" */, i, j));
            const double sigma = img_rng.uniform_in(spec.noise_low, spec.noise_high);

            std::vector<double> v = proto;
            if (sigma > 0.0) {
                for (double& x : v) x += sigma * img_rng.gaussian();
                double n2 = 0.0;
                for (double x : v) n2 += x * x;
                const double n = std::sqrt(n2);
                if (n == 0.0) throw std::runtime_error("synth: degenerate image vector");
                for (double& x : v) x /= n;
            }

            EmbeddingRecord rec;
            rec.identity = identity;
            rec.image_id = identity + "_im" + detail::zero_pad(j, im_width);
            rec.vector = detail::to_float(v);
            result.ground_truth.entries.emplace(rec.image_id, -sigma);
            result.dataset.add(std::move(rec));
        }
    }
    return result;
}

// Re-noise the listed images with an additional sigma and renormalize;
// all other records are untouched. extra_sigma == 0 is the identity.
inline EmbeddingDataset degrade(const EmbeddingDataset& ds,
                                const std::vector<std::string>& image_ids,
                                double extra_sigma, std::uint64_t seed) {
    if (extra_sigma < 0.0) throw std::runtime_error("degrade: negative sigma");
    std::set<std::string> targets;
    for (const auto& id : image_ids) {
        if (!ds.contains(id)) throw std::runtime_error("degrade: unknown image_id " + id);
        targets.insert(id);
    }

    EmbeddingDataset out(ds.dim());
    for (const auto& rec : ds.records()) {
        if (extra_sigma == 0.0 || targets.count(rec.image_id) == 0) {
            out.add(rec);
            continue;
        }
        Rng rng(derive_seed(seed, 0x64656772 /* "degr" */, hash_string(rec.image_id)));
        std::vector<double> v(rec.vector.begin(), rec.vector.end());
        for (double& x : v) x += extra_sigma * rng.gaussian();
        double n2 = 0.0;
        for (double x : v) n2 += x * x;
        const double n = std::sqrt(n2);
        if (n == 0.0) throw std::runtime_error("degrade: degenerate vector");
        for (double& x : v) x /= n;

        EmbeddingRecord noisy = rec;
        noisy.vector = detail::to_float(v);
        out.add(std::move(noisy));
    }
    return out;
}

}  // namespace serfiq
