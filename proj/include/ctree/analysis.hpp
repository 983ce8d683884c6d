#pragma once

// Layer-wise propagation diagnostics and the embedding-distance study.

#include <ctree/capture.hpp>
#include <ctree/error.hpp>
#include <ctree/linalg.hpp>
#include <ctree/stats.hpp>
#include <ctree/tree.hpp>

#include <charconv>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ctree::analysis {

struct LayerCurve {
    std::string name;
    std::vector<double> values;
    std::optional<std::vector<double>> std;  // set by aggregate_curves
    std::vector<std::size_t> degenerate_layers;

    friend bool operator==(const LayerCurve&, const LayerCurve&) = default;
};

inline constexpr double zero_norm = 1e-12;

/// cos(v_A[l], v_B[l]) per layer. Degenerate layers read 0 and are listed.
inline LayerCurve value_similarity_curve(const capture::CaptureBundle& b, const std::string& label_a,
                                         const std::string& label_b) {
    const auto& ta = b.trace(label_a);
    const auto& tb = b.trace(label_b);
    if (ta.v_last.size() != tb.v_last.size()) throw InvalidInput("value_similarity_curve: traces differ in layer count");
    LayerCurve c;
    c.name = label_a + "/" + label_b;
    c.values.resize(ta.v_last.size());
    for (std::size_t l = 0; l < ta.v_last.size(); ++l) {
        try {
            c.values[l] = linalg::cosine(ta.v_last[l], tb.v_last[l]);
        } catch (const DegenerateVector&) {
            c.values[l] = 0.0;
            c.degenerate_layers.push_back(l);
        }
    }
    return c;
}

/// cos(dH_l, dH_{l+1}) with dH_l = h_A[l] - h_B[l]; length L - 1. Entries
/// touching a zero difference read 0 and are listed as degenerate.
inline LayerCurve delta_h_alignment(const capture::CaptureBundle& b, const std::string& label_a,
                                    const std::string& label_b) {
    const auto& ta = b.trace(label_a);
    const auto& tb = b.trace(label_b);
    const std::size_t L = ta.h_last.size();
    if (tb.h_last.size() != L) throw InvalidInput("delta_h_alignment: traces differ in layer count");
    if (L < 2) throw InvalidInput("delta_h_alignment: need at least 2 layers, bundle has " + std::to_string(L));

    std::vector<linalg::Vector> deltas(L);
    for (std::size_t l = 0; l < L; ++l) {
        const auto& ha = ta.h_last[l];
        const auto& hb = tb.h_last[l];
        if (ha.size() != hb.size()) throw InvalidInput("delta_h_alignment: h vectors differ in length");
        deltas[l].resize(ha.size());
        for (std::size_t i = 0; i < ha.size(); ++i) deltas[l][i] = ha[i] - hb[i];
    }
    LayerCurve c;
    c.name = label_a + "/" + label_b;
    c.values.resize(L - 1);
    for (std::size_t l = 0; l + 1 < L; ++l) {
        try {
            c.values[l] = linalg::cosine(deltas[l], deltas[l + 1]);
        } catch (const DegenerateVector&) {
            c.values[l] = 0.0;
            c.degenerate_layers.push_back(l);
        }
    }
    return c;
}

/// Pointwise mean and population standard deviation (divide by N).
inline LayerCurve aggregate_curves(const std::vector<LayerCurve>& curves, std::string name = {}) {
    if (curves.empty()) throw InvalidInput("aggregate_curves: no curves given");
    const std::size_t n = curves.front().values.size();
    for (const auto& c : curves) {
        if (c.values.size() != n) {
            throw InvalidInput("aggregate_curves: curve '" + c.name + "' has length " + std::to_string(c.values.size()) +
                               ", expected " + std::to_string(n));
        }
    }
    const double count = static_cast<double>(curves.size());
    LayerCurve out;
    out.name = name.empty() ? curves.front().name : std::move(name);
    out.values.assign(n, 0.0);
    std::vector<double> sd(n, 0.0);
    std::set<std::size_t> degenerate;
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < n; ++i) out.values[i] += c.values[i];
        degenerate.insert(c.degenerate_layers.begin(), c.degenerate_layers.end());
    }
    for (double& v : out.values) v /= count;
    for (const auto& c : curves) {
        for (std::size_t i = 0; i < n; ++i) {
            const double d = c.values[i] - out.values[i];
            sd[i] += d * d;
        }
    }
    for (double& v : sd) v = std::sqrt(v / count);
    out.std = std::move(sd);
    out.degenerate_layers.assign(degenerate.begin(), degenerate.end());
    return out;
}

inline double pair_embedding_distance(const capture::CaptureBundle& b, const tree::ConceptPairSpec& pair) {
    const auto& o = b.trace(pair.original_trace_label);
    const auto& c = b.trace(pair.counterfactual_trace_label);
    if (!o.edited_token_embedding || !c.edited_token_embedding) {
        throw InvalidInput("pair '" + pair.label() + "': missing edited-token embeddings");
    }
    return linalg::l2(*o.edited_token_embedding, *c.edited_token_embedding);
}

struct CorrelationResult {
    double pearson_r = 0.0;
    double pearson_p = 1.0;
    double spearman_rho = 0.0;
    double spearman_p = 1.0;
    std::size_t n = 0;
};

inline CorrelationResult correlate(std::span<const double> xs, std::span<const double> ys) {
    const auto p = stats::pearson(xs, ys);
    const auto s = stats::spearman(xs, ys);
    return {p.coefficient, p.p_value, s.coefficient, s.p_value, xs.size()};
}

struct Sample {
    double distance = 0.0;
    std::optional<std::size_t> branching_layer;  // nullopt: inseparable, excluded
};

struct CorrelationCase {
    std::string name;
    std::vector<Sample> samples;
};

struct CorrelationRow {
    std::string name;
    std::size_t n = 0;         // samples used
    std::size_t excluded = 0;  // inseparable samples dropped
    std::optional<CorrelationResult> result;
    std::string note;  // why result is missing
};

namespace detail {

inline CorrelationRow make_row(std::string name, const std::vector<Sample>& samples) {
    CorrelationRow row;
    row.name = std::move(name);
    std::vector<double> xs, ys;
    for (const auto& s : samples) {
        if (!s.branching_layer) {
            ++row.excluded;
            continue;
        }
        xs.push_back(s.distance);
        ys.push_back(static_cast<double>(*s.branching_layer));
    }
    row.n = xs.size();
    if (row.n < 3) {
        row.note = "insufficient samples (n=" + std::to_string(row.n) + ", need 3)";
        return row;
    }
    try {
        row.result = correlate(xs, ys);
    } catch (const InvalidInput&) {
        row.note = "constant distance or branching layer";
    }
    return row;
}

} // namespace detail

/// One row per case plus a pooled "Overall" row.
inline std::vector<CorrelationRow> correlation_report(const std::vector<CorrelationCase>& cases) {
    std::vector<CorrelationRow> rows;
    std::vector<Sample> pooled;
    for (const auto& c : cases) {
        rows.push_back(detail::make_row(c.name, c.samples));
        pooled.insert(pooled.end(), c.samples.begin(), c.samples.end());
    }
    rows.push_back(detail::make_row("Overall", pooled));
    return rows;
}

inline std::string format_number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string curve_to_csv(const LayerCurve& c) {
    std::string out = "layer,value,std\n";
    for (std::size_t l = 0; l < c.values.size(); ++l) {
        out += std::to_string(l) + "," + format_number(c.values[l]) + ",";
        if (c.std) out += format_number((*c.std)[l]);
        out += "\n";
    }
    return out;
}

inline std::string correlation_to_csv(const std::vector<CorrelationRow>& rows) {
    std::string out = "case,pearson_r,pearson_p,spearman_rho,spearman_p,n\n";
    for (const auto& r : rows) {
        out += r.name + ",";
        if (r.result) {
            out += format_number(r.result->pearson_r) + "," + format_number(r.result->pearson_p) + "," +
                   format_number(r.result->spearman_rho) + "," + format_number(r.result->spearman_p) + ",";
        } else {
            out += "NA,NA,NA,NA,";
        }
        out += std::to_string(r.n) + "\n";
    }
    return out;
}

} // namespace ctree::analysis
