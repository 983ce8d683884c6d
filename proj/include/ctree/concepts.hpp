#pragma once

// Concept Paths, separation scores and branching layers for counterfactual
// pairs.
//
// The spectral basis of a layer is the SVD of its value projection taken in
// output-major orientation (value_out_dim x d_model, the transpose of the
// bundle's d_model x value_out_dim storage). Its left singular vectors live in
// the same space as the captured value vectors, which keeps the projection
// well defined when value_out_dim != d_model (grouped-query models).

#include <ctree/capture.hpp>
#include <ctree/error.hpp>
#include <ctree/linalg.hpp>

#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace ctree::concepts {

using linalg::SvdResult;
using linalg::Vector;

enum class Mode { svd, raw };

inline std::string to_string(Mode m) { return m == Mode::svd ? "svd" : "raw"; }

inline Mode parse_mode(const std::string& s) {
    if (s == "svd") return Mode::svd;
    if (s == "raw") return Mode::raw;
    throw InvalidInput("unknown analysis mode '" + s + "' (expected svd or raw)");
}

inline constexpr std::size_t default_k = 10;
inline constexpr double default_tau_svd = 0.9;
inline constexpr double default_tau_raw = 0.99;

inline double default_tau(Mode m) { return m == Mode::svd ? default_tau_svd : default_tau_raw; }

struct AnalysisParams {
    std::size_t k = default_k;
    double tau = default_tau_svd;
    Mode mode = Mode::svd;

    void validate() const {
        if (k < 1) throw InvalidInput("analysis params: k must be at least 1");
        if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("analysis params: tau must lie in (0, 1]");
    }

    friend bool operator==(const AnalysisParams&, const AnalysisParams&) = default;
};

struct ConceptPath {
    std::size_t layer = 0;
    Vector coeffs;
};

struct PairAnalysis {
    std::string pair_label;
    std::vector<double> scores;
    std::optional<std::size_t> branching_layer;
    AnalysisParams params;
    std::vector<std::size_t> degenerate_layers;

    friend bool operator==(const PairAnalysis&, const PairAnalysis&) = default;
};

/// coeffs[i] = <v, u_i> * sigma_i over every left singular vector of the decomposition.
inline ConceptPath concept_path(std::span<const double> v, const SvdResult& decomp, std::size_t layer) {
    const auto& u = decomp.u;
    if (v.size() != u.rows()) {
        throw InvalidInput("concept_path: value vector length " + std::to_string(v.size()) +
                           " does not match singular vector length " + std::to_string(u.rows()));
    }
    ConceptPath p;
    p.layer = layer;
    p.coeffs.assign(decomp.sigma.size(), 0.0);
    for (std::size_t i = 0; i < decomp.sigma.size(); ++i) {
        double proj = 0.0;
        for (std::size_t r = 0; r < u.rows(); ++r) proj += v[r] * u(r, i);
        p.coeffs[i] = proj * decomp.sigma[i];
    }
    return p;
}

struct Separation {
    double score = 0.0;
    bool degenerate = false;
};

/// Cosine of independently top-k masked paths. A masked path with norm at or
/// below 1e-12 scores 0 and is flagged instead of throwing.
inline Separation separation_score(const ConceptPath& a, const ConceptPath& b, std::size_t k) {
    if (a.layer != b.layer) {
        throw InvalidInput("separation_score: layer mismatch (" + std::to_string(a.layer) + " vs " +
                           std::to_string(b.layer) + ")");
    }
    if (a.coeffs.size() != b.coeffs.size()) {
        throw InvalidInput("separation_score: path length mismatch (" + std::to_string(a.coeffs.size()) + " vs " +
                           std::to_string(b.coeffs.size()) + ")");
    }
    const Vector fa = linalg::topk_mask(a.coeffs, k);
    const Vector fb = linalg::topk_mask(b.coeffs, k);
    try {
        return {linalg::cosine(fa, fb), false};
    } catch (const DegenerateVector&) {
        return {0.0, true};
    }
}

/// First layer whose score is strictly below tau; nullopt means inseparable.
inline std::optional<std::size_t> branching_layer(std::span<const double> scores, double tau) {
    for (std::size_t l = 0; l < scores.size(); ++l) {
        if (scores[l] < tau) return l;
    }
    return std::nullopt;
}

/// Per-bundle analysis state: the bundle reference plus a lazily filled,
/// compute-once cache of per-layer decompositions. Safe to share across
/// threads.
class PairAnalyzer {
public:
    explicit PairAnalyzer(const capture::CaptureBundle& bundle)
        : bundle_(bundle),
          n_layers_(bundle.w_v.size()),
          once_(std::make_unique<std::once_flag[]>(n_layers_)),
          cache_(n_layers_) {}

    [[nodiscard]] const capture::CaptureBundle& bundle() const noexcept { return bundle_; }

    [[nodiscard]] const SvdResult& layer_svd(std::size_t layer) const {
        if (layer >= n_layers_) throw InvalidInput("layer " + std::to_string(layer) + " out of range");
        std::call_once(once_[layer], [&] { cache_[layer] = linalg::svd(bundle_.w_v[layer].transposed()); });
        return cache_[layer];
    }

    [[nodiscard]] ConceptPath path(const capture::InputTrace& t, std::size_t layer, Mode mode) const {
        if (layer >= t.v_last.size()) {
            throw InvalidInput("trace '" + t.label + "' has no layer " + std::to_string(layer));
        }
        const auto& v = t.v_last[layer];
        if (v.size() != bundle_.meta.value_out_dim) {
            throw InvalidInput("trace '" + t.label + "' layer " + std::to_string(layer) + " value vector length " +
                               std::to_string(v.size()) + " does not match meta value_out_dim " +
                               std::to_string(bundle_.meta.value_out_dim));
        }
        if (mode == Mode::raw) return ConceptPath{layer, v};
        return concept_path(v, layer_svd(layer), layer);
    }

    [[nodiscard]] PairAnalysis analyze(const std::string& original_label, const std::string& counterfactual_label,
                                       const AnalysisParams& params, std::string pair_label = {}) const {
        params.validate();
        const auto& a = bundle_.trace(original_label);
        const auto& b = bundle_.trace(counterfactual_label);
        const std::size_t L = bundle_.meta.n_layers;
        if (a.v_last.size() != L || b.v_last.size() != L || n_layers_ != L) {
            throw InvalidInput("analyze_pair: layer count disagrees with meta n_layers " + std::to_string(L));
        }

        PairAnalysis out;
        out.pair_label = pair_label.empty() ? original_label + "/" + counterfactual_label : std::move(pair_label);
        out.params = params;
        out.scores.resize(L);
        for (std::size_t l = 0; l < L; ++l) {
            const auto s = separation_score(path(a, l, params.mode), path(b, l, params.mode), params.k);
            out.scores[l] = s.score;
            if (s.degenerate) out.degenerate_layers.push_back(l);
        }
        out.branching_layer = branching_layer(out.scores, params.tau);
        return out;
    }

private:
    const capture::CaptureBundle& bundle_;
    std::size_t n_layers_;
    std::unique_ptr<std::once_flag[]> once_;
    mutable std::vector<SvdResult> cache_;
};

inline PairAnalysis analyze_pair(const capture::CaptureBundle& bundle, const std::string& original_label,
                                 const std::string& counterfactual_label, const AnalysisParams& params) {
    return PairAnalyzer(bundle).analyze(original_label, counterfactual_label, params);
}

} // namespace ctree::concepts
