#pragma once

// A small seeded decoder-only transformer used to produce capture bundles
// without any external model. No training: weights come straight from the
// keyed splitmix64 stream.
//
// Per layer:
//   xn  = rmsnorm(x) * norm_scale
//   Q, K, V = xn Wq, xn Wk, xn Wv        (heads concatenated, d x d each)
//   A   = causal softmax(Q_h K_h^T / sqrt(d / n_heads)) per head
//   H   = x + concat_h(A_h V_h) Wo        (recorded as h_last)
//   x'  = H + relu(rmsnorm(H) * mlp_scale Wup) Wdown   (only with use_mlp)

#include <ctree/capture.hpp>
#include <ctree/error.hpp>
#include <ctree/linalg.hpp>
#include <ctree/rng.hpp>
#include <ctree/text.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ctree::toy {

using linalg::Matrix;
using linalg::Vector;

struct ToyConfig {
    std::size_t n_layers = 2;
    std::size_t d_model = 16;
    std::size_t n_heads = 2;
    std::size_t vocab_size = 32;
    std::uint64_t seed = 0;
    bool use_mlp = false;

    void validate() const {
        if (n_layers < 1) throw ConfigError("toy config: n_layers must be at least 1");
        if (d_model < 1) throw ConfigError("toy config: d_model must be at least 1");
        if (n_heads < 1) throw ConfigError("toy config: n_heads must be at least 1");
        if (d_model % n_heads != 0) {
            throw ConfigError("toy config: d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                              std::to_string(n_heads));
        }
        if (vocab_size < 2) throw ConfigError("toy config: vocab_size must be at least 2");
    }

    [[nodiscard]] std::size_t head_dim() const { return d_model / n_heads; }
    [[nodiscard]] std::size_t mlp_hidden() const { return 4 * d_model; }
};

struct LayerWeights {
    Matrix w_q, w_k, w_v, w_o;
    Vector norm_scale;
    // empty unless use_mlp
    Vector mlp_norm_scale;
    Matrix w_up, w_down;
};

struct ToyModel {
    ToyConfig config;
    Matrix embeddings;  // vocab_size x d_model
    std::vector<LayerWeights> layers;
};

inline constexpr double rms_eps = 1e-6;

inline Matrix seeded_matrix(std::uint64_t seed, const std::string& name, std::size_t rows, std::size_t cols,
                            double scale) {
    const rng::KeyedStream stream(seed, name);
    Matrix m(rows, cols);
    auto data = m.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = stream.uniform_pm1(i) * scale;
    return m;
}

/// Draws every weight uniformly in [-1, 1) * d_model^(-1/2); norm scales are ones.
inline ToyModel init_seeded(const ToyConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    ToyModel m;
    m.config = cfg;
    m.embeddings = seeded_matrix(cfg.seed, "embed", cfg.vocab_size, d, scale);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerWeights w;
        w.w_q = seeded_matrix(cfg.seed, p + "wq", d, d, scale);
        w.w_k = seeded_matrix(cfg.seed, p + "wk", d, d, scale);
        w.w_v = seeded_matrix(cfg.seed, p + "wv", d, d, scale);
        w.w_o = seeded_matrix(cfg.seed, p + "wo", d, d, scale);
        w.norm_scale.assign(d, 1.0);
        if (cfg.use_mlp) {
            w.mlp_norm_scale.assign(d, 1.0);
            w.w_up = seeded_matrix(cfg.seed, p + "wup", d, cfg.mlp_hidden(), scale);
            w.w_down = seeded_matrix(cfg.seed, p + "wdown", cfg.mlp_hidden(), d, scale);
        }
        m.layers.push_back(std::move(w));
    }
    return m;
}

inline Matrix rmsnorm_rows(const Matrix& x, std::span<const double> scale) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto row = x.row(r);
        double ss = 0.0;
        for (double v : row) ss += v * v;
        const double inv = 1.0 / std::sqrt(ss / static_cast<double>(row.size()) + rms_eps);
        for (std::size_t c = 0; c < row.size(); ++c) out(r, c) = row[c] * inv * scale[c];
    }
    return out;
}

/// Everything a forward pass exposes, beyond the capture trace itself.
struct ForwardDetail {
    capture::InputTrace trace;
    std::vector<std::vector<Matrix>> attention;  // [layer][head], n x n, row i = query position
    std::vector<Vector> layer_input_last;        // residual stream entering each layer, last row
    std::vector<Vector> attn_out_last;           // concat(A V) Wo, last row
};

inline ForwardDetail forward_detailed(const ToyModel& m, std::span<const std::size_t> tokens, const std::string& label,
                                      std::optional<std::size_t> edited_index = std::nullopt) {
    const auto& cfg = m.config;
    if (tokens.empty()) throw InvalidInput("forward: token sequence is empty");
    for (std::size_t t : tokens) {
        if (t >= cfg.vocab_size) {
            throw InvalidInput("forward: token id " + std::to_string(t) + " out of range for vocab size " +
                               std::to_string(cfg.vocab_size));
        }
    }
    if (edited_index && *edited_index >= tokens.size()) {
        throw InvalidInput("forward: edited index " + std::to_string(*edited_index) + " past end of sequence");
    }

    const std::size_t n = tokens.size();
    const std::size_t d = cfg.d_model;
    const std::size_t hd = cfg.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const auto e = m.embeddings.row(tokens[i]);
        std::copy(e.begin(), e.end(), x.row(i).begin());
    }

    ForwardDetail out;
    out.trace.label = label;
    out.trace.token_count = n;
    out.trace.edited_token_index = edited_index;
    if (edited_index) {
        const auto e = m.embeddings.row(tokens[*edited_index]);
        out.trace.edited_token_embedding = Vector(e.begin(), e.end());
    }

    for (const auto& w : m.layers) {
        const Matrix xn = rmsnorm_rows(x, w.norm_scale);
        const Matrix q = linalg::matmul(xn, w.w_q);
        const Matrix k = linalg::matmul(xn, w.w_k);
        const Matrix v = linalg::matmul(xn, w.w_v);

        Matrix mixed(n, d);
        std::vector<Matrix> probs_per_head;
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const std::size_t off = h * hd;
            Matrix probs(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                double mx = -INFINITY;
                for (std::size_t j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < hd; ++c) s += q(i, off + c) * k(j, off + c);
                    probs(i, j) = s * inv_sqrt_hd;
                    mx = std::max(mx, probs(i, j));
                }
                double z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    probs(i, j) = std::exp(probs(i, j) - mx);
                    z += probs(i, j);
                }
                for (std::size_t j = 0; j <= i; ++j) probs(i, j) /= z;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double p = probs(i, j);
                    for (std::size_t c = 0; c < hd; ++c) mixed(i, off + c) += p * v(j, off + c);
                }
            }
            probs_per_head.push_back(std::move(probs));
        }
        const Matrix attn = linalg::matmul(mixed, w.w_o);

        Matrix h_mat(n, d);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) h_mat(i, c) = x(i, c) + attn(i, c);

        const auto last_v = v.row(n - 1);
        const auto last_h = h_mat.row(n - 1);
        const auto last_x = x.row(n - 1);
        const auto last_a = attn.row(n - 1);
        out.trace.v_last.emplace_back(last_v.begin(), last_v.end());
        out.trace.h_last.emplace_back(last_h.begin(), last_h.end());
        out.layer_input_last.emplace_back(last_x.begin(), last_x.end());
        out.attn_out_last.emplace_back(last_a.begin(), last_a.end());
        out.attention.push_back(std::move(probs_per_head));

        if (cfg.use_mlp) {
            const Matrix hn = rmsnorm_rows(h_mat, w.mlp_norm_scale);
            Matrix up = linalg::matmul(hn, w.w_up);
            for (double& a : up.data()) a = std::max(a, 0.0);
            const Matrix down = linalg::matmul(up, w.w_down);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t c = 0; c < d; ++c) h_mat(i, c) += down(i, c);
        }
        x = std::move(h_mat);
    }
    return out;
}

inline capture::InputTrace forward_capture(const ToyModel& m, std::span<const std::size_t> tokens,
                                           const std::string& label,
                                           std::optional<std::size_t> edited_index = std::nullopt) {
    return forward_detailed(m, tokens, label, edited_index).trace;
}

struct ToyInput {
    std::string label;
    std::vector<std::size_t> tokens;
    std::optional<std::size_t> edited_index;
    std::string text;  // informational; ids joined by spaces when empty
};

inline std::string model_id(const ToyConfig& c) {
    return "toy-L" + std::to_string(c.n_layers) + "-d" + std::to_string(c.d_model) + "-h" + std::to_string(c.n_heads) +
           "-v" + std::to_string(c.vocab_size) + "-seed" + std::to_string(c.seed) + (c.use_mlp ? "-mlp" : "");
}

inline capture::CaptureBundle make_toy_bundle(const ToyModel& m, const std::vector<ToyInput>& inputs,
                                              capture::DType dtype = capture::DType::f64) {
    capture::CaptureBundle b;
    b.meta.model_id = model_id(m.config);
    b.meta.n_layers = m.config.n_layers;
    b.meta.d_model = m.config.d_model;
    b.meta.value_out_dim = m.config.d_model;
    b.meta.dtype = dtype;
    b.meta.notes = "toy decoder; W_V heads concatenated (" + std::to_string(m.config.n_heads) + " x " +
                   std::to_string(m.config.head_dim()) + "); h_last is the post-attention residual before the MLP";
    for (const auto& w : m.layers) b.w_v.push_back(w.w_v);
    for (const auto& in : inputs) {
        auto t = forward_capture(m, in.tokens, in.label, in.edited_index);
        if (in.text.empty()) {
            std::vector<std::string> ids;
            for (auto id : in.tokens) ids.push_back(std::to_string(id));
            t.text = text::join(ids, " ");
        } else {
            t.text = in.text;
        }
        b.add_trace(std::move(t));
    }
    return b;
}

/// Maps text to toy token ids: tokenized words and punctuation, each hashed
/// (FNV-1a) into the vocabulary.
inline std::vector<std::size_t> toy_token_ids(std::string_view s, std::size_t vocab_size) {
    std::vector<std::size_t> ids;
    for (const auto& t : text::tokenize(s)) ids.push_back(static_cast<std::size_t>(rng::fnv1a64(t.text) % vocab_size));
    return ids;
}

} // namespace ctree::toy
