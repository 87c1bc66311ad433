#pragma once

// Verification scoring and the evaluation harness: cosine similarity over a
// pair protocol, FMR/FNMR/EER, FNMR at fixed FMR, and error-versus-reject
// curves over a quality table.
//
// Decision rule everywhere: a comparison is a match iff similarity >= threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "serfiq/dataset.hpp"

namespace serfiq {

template <typename T>
inline double cosine_similarity(const std::vector<T>& a, const std::vector<T>& b) {
    if (a.size() != b.size())
        throw std::runtime_error("cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]);
        const double y = static_cast<double>(b[i]);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0)
        throw std::runtime_error("cosine_similarity: zero vector");
    const double s = dot / (std::sqrt(na) * std::sqrt(nb));
    return std::min(1.0, std::max(-1.0, s));
}

struct ScoredPair {
    IdPair pair;
    double score = 0.0;
};

struct ScoreSet {
    std::vector<ScoredPair> genuine;
    std::vector<ScoredPair> impostor;

    std::vector<double> genuine_scores() const {
        std::vector<double> s;
        s.reserve(genuine.size());
        for (const auto& p : genuine) s.push_back(p.score);
        return s;
    }
    std::vector<double> impostor_scores() const {
        std::vector<double> s;
        s.reserve(impostor.size());
        for (const auto& p : impostor) s.push_back(p.score);
        return s;
    }
};

inline ScoreSet compute_scores(const EmbeddingDataset& ds, const PairProtocol& proto) {
    ScoreSet set;
    set.genuine.reserve(proto.genuine.size());
    set.impostor.reserve(proto.impostor.size());
    for (const auto& p : proto.genuine)
        set.genuine.push_back(
            {p, cosine_similarity(ds.by_id(p.first).vector, ds.by_id(p.second).vector)});
    for (const auto& p : proto.impostor)
        set.impostor.push_back(
            {p, cosine_similarity(ds.by_id(p.first).vector, ds.by_id(p.second).vector)});
    return set;
}

inline double fmr(const std::vector<double>& impostor_scores, double threshold) {
    if (impostor_scores.empty()) throw std::runtime_error("fmr: empty impostor scores");
    std::size_t matches = 0;
    for (double s : impostor_scores)
        if (s >= threshold) ++matches;
    return static_cast<double>(matches) / static_cast<double>(impostor_scores.size());
}

inline double fnmr(const std::vector<double>& genuine_scores, double threshold) {
    if (genuine_scores.empty()) throw std::runtime_error("fnmr: empty genuine scores");
    std::size_t non_matches = 0;
    for (double s : genuine_scores)
        if (s < threshold) ++non_matches;
    return static_cast<double>(non_matches) / static_cast<double>(genuine_scores.size());
}

struct FmrThreshold {
    double threshold = 0.0;
    double achieved_fmr = 0.0;  // can be below target when scores tie
};

// Decision threshold achieving at most floor(target*N) impostor matches.
// With impostor scores sorted descending and k = floor(target*N):
//   k = 0           -> just above the top score, FMR 0
//   s(k) > s(k+1)   -> midpoint, exactly k matches
//   s(k) = s(k+1)   -> smallest threshold above the whole tied tier; the
//                      achieved FMR (reported alongside) then undershoots.
inline FmrThreshold threshold_at_fmr(std::vector<double> impostor_scores,
                                     double target_fmr) {
    if (impostor_scores.empty())
        throw std::runtime_error("threshold_at_fmr: empty impostor scores");
    if (!(target_fmr > 0.0 && target_fmr < 1.0))
        throw std::runtime_error("threshold_at_fmr: target must be in (0,1)");

    std::sort(impostor_scores.begin(), impostor_scores.end(), std::greater<>());
    const std::size_t n = impostor_scores.size();
    const auto k =
        static_cast<std::size_t>(std::floor(target_fmr * static_cast<double>(n)));

    constexpr double delta = 1e-9;
    FmrThreshold result;
    if (k == 0) {
        result.threshold = impostor_scores.front() + delta;
    } else if (impostor_scores[k - 1] > impostor_scores[k]) {
        result.threshold = 0.5 * (impostor_scores[k - 1] + impostor_scores[k]);
    } else {
        // Tie across the cut: step above the tier.
        const double tier = impostor_scores[k - 1];
        double above = tier + delta;
        for (std::size_t i = k - 1; i-- > 0;) {
            if (impostor_scores[i] > tier) {
                above = 0.5 * (impostor_scores[i] + tier);
                break;
            }
        }
        result.threshold = above;
    }
    result.achieved_fmr = fmr(impostor_scores, result.threshold);
    return result;
}

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// Brute-force sweep over midpoints of consecutive distinct pooled scores
// plus sentinels; picks the threshold minimizing |FMR - FNMR| (lowest wins
// ties) and returns the mean of the two rates there.
inline EerResult eer(const std::vector<double>& genuine_scores,
                     const std::vector<double>& impostor_scores) {
    if (genuine_scores.empty() || impostor_scores.empty())
        throw std::runtime_error("eer: both score sides must be non-empty");

    std::vector<double> pooled;
    pooled.reserve(genuine_scores.size() + impostor_scores.size());
    pooled.insert(pooled.end(), genuine_scores.begin(), genuine_scores.end());
    pooled.insert(pooled.end(), impostor_scores.begin(), impostor_scores.end());
    std::sort(pooled.begin(), pooled.end());
    pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

    constexpr double delta = 1e-9;
    std::vector<double> candidates;
    candidates.reserve(pooled.size() + 1);
    candidates.push_back(pooled.front() - delta);
    for (std::size_t i = 0; i + 1 < pooled.size(); ++i)
        candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
    candidates.push_back(pooled.back() + delta);

    EerResult best;
    double best_diff = std::numeric_limits<double>::infinity();
    for (double t : candidates) {
        const double f = fmr(impostor_scores, t);
        const double fn = fnmr(genuine_scores, t);
        const double diff = std::abs(f - fn);
        if (diff < best_diff) {
            best_diff = diff;
            best.eer = 0.5 * (f + fn);
            best.threshold = t;
        }
    }
    return best;
}

inline EerResult eer(const ScoreSet& scores) {
    return eer(scores.genuine_scores(), scores.impostor_scores());
}

struct OperatingPoint {
    enum class Kind { eer, fnmr_at_fmr };
    Kind kind = Kind::eer;
    double target_fmr = 0.01;  // used by fnmr_at_fmr only

    static OperatingPoint at_eer() { return {Kind::eer, 0.0}; }
    static OperatingPoint at_fmr(double target) {
        return {Kind::fnmr_at_fmr, target};
    }
};

struct ErcPoint {
    double ratio = 0.0;
    double error = 0.0;
    std::optional<double> achieved_fmr;  // fnmr_at_fmr curves only
    std::size_t surviving_genuine = 0;
    std::size_t surviving_impostor = 0;
};

struct ErcCurve {
    OperatingPoint op;
    std::string label;
    std::vector<ErcPoint> points;
};

// Error on the surviving population as the lowest-quality images are
// removed. Images are ranked ascending by quality (ties by id); at ratio r
// the first ceil(r*N) are dropped and a pair survives iff both images do.
// For fnmr_at_fmr the decision threshold is frozen once on the full (r=0)
// impostor set; EER is recomputed per point. Points whose relevant surviving
// side is empty are omitted.
inline ErcCurve error_versus_reject(const ScoreSet& scores,
                                    const QualityTable& qualities,
                                    const std::vector<double>& ratios,
                                    const OperatingPoint& op,
                                    const std::string& label = "") {
    for (std::size_t i = 0; i < ratios.size(); ++i) {
        if (ratios[i] < 0.0 || ratios[i] >= 1.0)
            throw std::runtime_error("error_versus_reject: ratios must be in [0,1)");
        if (i > 0 && ratios[i] <= ratios[i - 1])
            throw std::runtime_error(
                "error_versus_reject: ratios must be strictly increasing");
    }

    std::set<std::string> id_set;
    for (const auto& p : scores.genuine) {
        id_set.insert(p.pair.first);
        id_set.insert(p.pair.second);
    }
    for (const auto& p : scores.impostor) {
        id_set.insert(p.pair.first);
        id_set.insert(p.pair.second);
    }

    // (quality, id) ascending; the front of this list is rejected first.
    std::vector<std::pair<double, std::string>> ranked;
    ranked.reserve(id_set.size());
    for (const auto& id : id_set) {
        auto it = qualities.entries.find(id);
        if (it == qualities.entries.end())
            throw std::runtime_error("error_versus_reject: no quality for image " + id);
        ranked.emplace_back(it->second, id);
    }
    std::sort(ranked.begin(), ranked.end());
    const std::size_t n_images = ranked.size();

    std::optional<FmrThreshold> fixed;
    if (op.kind == OperatingPoint::Kind::fnmr_at_fmr)
        fixed = threshold_at_fmr(scores.impostor_scores(), op.target_fmr);

    ErcCurve curve;
    curve.op = op;
    curve.label = label;

    for (double r : ratios) {
        const auto n_remove = static_cast<std::size_t>(
            std::ceil(r * static_cast<double>(n_images)));
        std::set<std::string> removed;
        for (std::size_t i = 0; i < n_remove && i < n_images; ++i)
            removed.insert(ranked[i].second);

        auto survives = [&](const IdPair& p) {
            return removed.count(p.first) == 0 && removed.count(p.second) == 0;
        };
        std::vector<double> surv_genuine, surv_impostor;
        for (const auto& p : scores.genuine)
            if (survives(p.pair)) surv_genuine.push_back(p.score);
        for (const auto& p : scores.impostor)
            if (survives(p.pair)) surv_impostor.push_back(p.score);

        ErcPoint point;
        point.ratio = r;
        point.surviving_genuine = surv_genuine.size();
        point.surviving_impostor = surv_impostor.size();
        if (op.kind == OperatingPoint::Kind::fnmr_at_fmr) {
            if (surv_genuine.empty()) continue;  // undefined point
            point.error = fnmr(surv_genuine, fixed->threshold);
            if (!surv_impostor.empty())
                point.achieved_fmr = fmr(surv_impostor, fixed->threshold);
        } else {
            if (surv_genuine.empty() || surv_impostor.empty()) continue;
            point.error = eer(surv_genuine, surv_impostor).eer;
        }
        curve.points.push_back(point);
    }
    return curve;
}

// Curve CSV: `rejection_ratio,error,achieved_fmr`; the third column is empty
// for EER curves.
inline void export_curve(const ErcCurve& curve, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "rejection_ratio,error,achieved_fmr\n";
    for (const auto& p : curve.points) {
        out << detail::format_double(p.ratio) << ',' << detail::format_double(p.error)
            << ',';
        if (p.achieved_fmr) out << detail::format_double(*p.achieved_fmr);
        out << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

struct HistogramBin {
    double low = 0.0;
    double high = 0.0;
    std::size_t count = 0;
};

// Equal-width bins over [0,1]; values outside clamp into the end bins and
// 1.0 lands in the last bin.
inline std::vector<HistogramBin> quality_histogram(const QualityTable& qualities,
                                                   std::size_t bins) {
    if (bins == 0) throw std::runtime_error("quality_histogram: bins must be > 0");
    std::vector<HistogramBin> hist(bins);
    const double width = 1.0 / static_cast<double>(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        hist[i].low = static_cast<double>(i) * width;
        hist[i].high = static_cast<double>(i + 1) * width;
    }
    for (const auto& [id, q] : qualities.entries) {
        auto idx = static_cast<std::ptrdiff_t>(std::floor(q / width));
        idx = std::max<std::ptrdiff_t>(0,
              std::min<std::ptrdiff_t>(idx, static_cast<std::ptrdiff_t>(bins) - 1));
        ++hist[static_cast<std::size_t>(idx)].count;
    }
    return hist;
}

inline void export_histogram(const QualityTable& qualities, std::size_t bins,
                             const std::string& path) {
    const auto hist = quality_histogram(qualities, bins);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "bin_low,bin_high,count\n";
    for (const auto& b : hist)
        out << detail::format_double(b.low) << ',' << detail::format_double(b.high)
            << ',' << b.count << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace serfiq
