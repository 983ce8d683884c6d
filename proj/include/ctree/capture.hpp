#pragma once

// Activation-capture bundles: the interchange format between whatever runs a
// model (the built-in toy transformer, or an external exporter) and the
// analysis code.
//
// On disk a bundle is a directory:
//
//   manifest.json            format "MCT1", meta fields, trace table, blob table
//   wv_<layer>.bin           value projection, d_model x value_out_dim
//   <trace>_v_<layer>.bin    last-token value vector, value_out_dim
//   <trace>_h_<layer>.bin    last-token post-attention residual, d_model
//   <trace>_emb.bin          input embedding of the edited token, d_model
//
// Blobs are headerless little-endian row-major arrays of f32 or f64.

#include <ctree/error.hpp>
#include <ctree/linalg.hpp>

#include <json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ctree::capture {

using linalg::Matrix;
using linalg::Vector;

inline constexpr const char* format_tag = "MCT1";

enum class DType { f32, f64 };

inline std::string to_string(DType d) { return d == DType::f32 ? "f32" : "f64"; }

inline DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "f64") return DType::f64;
    throw FormatError("unknown dtype '" + s + "'");
}

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

struct TraceMeta {
    std::string model_id;
    std::size_t n_layers = 0;
    std::size_t d_model = 0;
    std::size_t value_out_dim = 0;
    DType dtype = DType::f32;
    std::string notes;

    friend bool operator==(const TraceMeta&, const TraceMeta&) = default;
};

struct InputTrace {
    std::string label;
    std::string text;
    std::size_t token_count = 0;
    std::optional<std::size_t> edited_token_index;
    std::optional<Vector> edited_token_embedding;
    std::vector<Vector> v_last;  // per layer, value_out_dim
    std::vector<Vector> h_last;  // per layer, d_model

    friend bool operator==(const InputTrace&, const InputTrace&) = default;
};

struct CaptureBundle {
    TraceMeta meta;
    std::vector<Matrix> w_v;
    std::map<std::string, InputTrace> traces;

    [[nodiscard]] bool has_trace(const std::string& label) const { return traces.count(label) != 0; }

    [[nodiscard]] const InputTrace& trace(const std::string& label) const {
        const auto it = traces.find(label);
        if (it == traces.end()) throw NotFound("trace '" + label + "' not found in bundle");
        return it->second;
    }

    void add_trace(InputTrace t) {
        const std::string key = t.label;
        traces.insert_or_assign(key, std::move(t));
    }

    friend bool operator==(const CaptureBundle&, const CaptureBundle&) = default;
};

struct Violation {
    std::string location;
    std::string message;
};

inline std::string describe(const Violation& v) { return v.location + ": " + v.message; }

// Labels become file name prefixes.
inline bool is_valid_label(const std::string& label) {
    if (label.empty() || label == "." || label == "..") return false;
    for (unsigned char c : label) {
        if (c == '/' || c == '\\' || c < 0x20 || c == 0x7f) return false;
    }
    return true;
}

inline std::vector<Violation> validate_bundle(const CaptureBundle& b) {
    std::vector<Violation> out;
    const auto& m = b.meta;
    auto add = [&](std::string loc, std::string msg) { out.push_back({std::move(loc), std::move(msg)}); };

    if (m.n_layers < 1) add("meta.n_layers", "must be at least 1");
    if (m.d_model < 1) add("meta.d_model", "must be at least 1");
    if (m.value_out_dim < 1) add("meta.value_out_dim", "must be at least 1");

    if (b.w_v.size() != m.n_layers) {
        add("w_v", "has " + std::to_string(b.w_v.size()) + " layers, meta declares " + std::to_string(m.n_layers));
    }
    for (std::size_t l = 0; l < b.w_v.size(); ++l) {
        const auto& w = b.w_v[l];
        const std::string loc = "w_v[" + std::to_string(l) + "]";
        if (w.rows() != m.d_model || w.cols() != m.value_out_dim) {
            add(loc, "shape " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) + ", expected " +
                         std::to_string(m.d_model) + "x" + std::to_string(m.value_out_dim));
        }
        if (!w.all_finite()) add(loc, "contains non-finite values");
    }

    auto check_vectors = [&](const std::string& prefix, const std::vector<Vector>& vs, std::size_t len) {
        if (vs.size() != m.n_layers) {
            add(prefix, "has " + std::to_string(vs.size()) + " layers, meta declares " + std::to_string(m.n_layers));
        }
        for (std::size_t l = 0; l < vs.size(); ++l) {
            const std::string loc = prefix + "[" + std::to_string(l) + "]";
            if (vs[l].size() != len) {
                add(loc, "length " + std::to_string(vs[l].size()) + ", expected " + std::to_string(len));
            }
            if (!linalg::all_finite(vs[l])) add(loc, "contains non-finite values");
        }
    };

    for (const auto& [key, t] : b.traces) {
        const std::string loc = "trace '" + key + "'";
        if (key != t.label) add(loc, "label field '" + t.label + "' differs from its key");
        if (!is_valid_label(key)) add(loc, "label is empty or contains path separators or control characters");
        if (t.edited_token_index && *t.edited_token_index >= t.token_count) {
            add(loc + ".edited_token_index", "index " + std::to_string(*t.edited_token_index) +
                                                 " is not below token_count " + std::to_string(t.token_count));
        }
        if (t.edited_token_embedding) {
            if (t.edited_token_embedding->size() != m.d_model) {
                add(loc + ".edited_token_embedding", "length " + std::to_string(t.edited_token_embedding->size()) +
                                                         ", expected " + std::to_string(m.d_model));
            }
            if (!linalg::all_finite(*t.edited_token_embedding)) {
                add(loc + ".edited_token_embedding", "contains non-finite values");
            }
        }
        check_vectors(loc + ".v_last", t.v_last, m.value_out_dim);
        check_vectors(loc + ".h_last", t.h_last, m.d_model);
    }
    return out;
}

namespace detail {

template <class UInt>
inline UInt to_little(UInt x) {
    if constexpr (std::endian::native == std::endian::big) {
        UInt r = 0;
        for (std::size_t i = 0; i < sizeof(UInt); ++i) {
            r = static_cast<UInt>((r << 8) | (x & 0xFF));
            x >>= 8;
        }
        return r;
    } else {
        return x;
    }
}

inline std::string encode(std::span<const double> values, DType dtype) {
    std::string bytes;
    bytes.resize(values.size() * dtype_size(dtype));
    char* p = bytes.data();
    for (double v : values) {
        if (dtype == DType::f32) {
            const auto bits = to_little(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
            std::memcpy(p, &bits, 4);
            p += 4;
        } else {
            const auto bits = to_little(std::bit_cast<std::uint64_t>(v));
            std::memcpy(p, &bits, 8);
            p += 8;
        }
    }
    return bytes;
}

inline std::vector<double> decode(const std::string& bytes, DType dtype) {
    const std::size_t width = dtype_size(dtype);
    std::vector<double> out(bytes.size() / width);
    const char* p = bytes.data();
    for (auto& v : out) {
        if (dtype == DType::f32) {
            std::uint32_t bits;
            std::memcpy(&bits, p, 4);
            v = static_cast<double>(std::bit_cast<float>(to_little(bits)));
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, p, 8);
            v = std::bit_cast<double>(to_little(bits));
        }
        p += width;
    }
    return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("failed writing '" + path.string() + "'");
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct BlobSpec {
    std::string file;
    DType dtype;
    std::vector<std::size_t> shape;
};

inline std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto s : shape) n *= s;
    return n;
}

inline std::string v_blob(const std::string& label, std::size_t l) { return label + "_v_" + std::to_string(l); }
inline std::string h_blob(const std::string& label, std::size_t l) { return label + "_h_" + std::to_string(l); }
inline std::string emb_blob(const std::string& label) { return label + "_emb"; }
inline std::string wv_blob(std::size_t l) { return "wv_" + std::to_string(l); }

} // namespace detail

/// Writes the bundle directory, creating it if needed. The bundle is validated
/// first and nothing is written if it has violations.
inline void write_bundle(const CaptureBundle& b, const std::filesystem::path& dir) {
    const auto violations = validate_bundle(b);
    if (!violations.empty()) {
        throw InvalidInput("refusing to write invalid bundle (" + std::to_string(violations.size()) +
                           " violations), first: " + describe(violations.front()));
    }
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

    const DType dt = b.meta.dtype;
    nlohmann::ordered_json blobs = nlohmann::ordered_json::object();
    auto put = [&](const std::string& name, std::span<const double> values, std::vector<std::size_t> shape) {
        const std::string file = name + ".bin";
        detail::write_file(dir / file, detail::encode(values, dt));
        blobs[name] = {{"file", file}, {"dtype", to_string(dt)}, {"shape", shape}};
    };

    for (std::size_t l = 0; l < b.w_v.size(); ++l) {
        put(detail::wv_blob(l), b.w_v[l].data(), {b.w_v[l].rows(), b.w_v[l].cols()});
    }
    nlohmann::ordered_json traces = nlohmann::ordered_json::array();
    for (const auto& [label, t] : b.traces) {
        nlohmann::ordered_json jt = {{"label", label}, {"text", t.text}, {"token_count", t.token_count}};
        jt["edited_token_index"] = t.edited_token_index ? nlohmann::ordered_json(*t.edited_token_index) : nullptr;
        traces.push_back(std::move(jt));
        for (std::size_t l = 0; l < t.v_last.size(); ++l) put(detail::v_blob(label, l), t.v_last[l], {t.v_last[l].size()});
        for (std::size_t l = 0; l < t.h_last.size(); ++l) put(detail::h_blob(label, l), t.h_last[l], {t.h_last[l].size()});
        if (t.edited_token_embedding) {
            put(detail::emb_blob(label), *t.edited_token_embedding, {t.edited_token_embedding->size()});
        }
    }

    nlohmann::ordered_json manifest;
    manifest["format"] = format_tag;
    manifest["model_id"] = b.meta.model_id;
    manifest["n_layers"] = b.meta.n_layers;
    manifest["d_model"] = b.meta.d_model;
    manifest["value_out_dim"] = b.meta.value_out_dim;
    manifest["dtype"] = to_string(b.meta.dtype);
    manifest["notes"] = b.meta.notes;
    manifest["traces"] = std::move(traces);
    manifest["blobs"] = std::move(blobs);
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

/// Loads a bundle without checking it against its own meta. Structural
/// problems in the files themselves (missing manifest, unknown format, blob
/// size mismatch) still throw; shape disagreements with meta are left for
/// validate_bundle to report.
inline CaptureBundle read_bundle_unvalidated(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path)) throw IoError("missing manifest: '" + manifest_path.string() + "'");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(detail::read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest is not valid JSON: " + std::string(e.what()));
    }

    try {
        const std::string fmt = manifest.at("format").get<std::string>();
        if (fmt != format_tag) throw UnsupportedVersion("unsupported bundle format '" + fmt + "' (expected MCT1)");

        CaptureBundle b;
        b.meta.model_id = manifest.at("model_id").get<std::string>();
        b.meta.n_layers = manifest.at("n_layers").get<std::size_t>();
        b.meta.d_model = manifest.at("d_model").get<std::size_t>();
        b.meta.value_out_dim = manifest.at("value_out_dim").get<std::size_t>();
        b.meta.dtype = parse_dtype(manifest.at("dtype").get<std::string>());
        b.meta.notes = manifest.value("notes", std::string{});

        std::map<std::string, detail::BlobSpec> table;
        for (const auto& [name, spec] : manifest.at("blobs").items()) {
            table[name] = {spec.at("file").get<std::string>(), parse_dtype(spec.at("dtype").get<std::string>()),
                           spec.at("shape").get<std::vector<std::size_t>>()};
        }

        auto load = [&](const std::string& name) -> std::pair<std::vector<double>, std::vector<std::size_t>> {
            const auto it = table.find(name);
            if (it == table.end()) throw FormatError("blob '" + name + "' missing from manifest blob table");
            const auto& spec = it->second;
            // blob files must sit directly inside the bundle directory
            if (!is_valid_label(spec.file)) throw FormatError("blob '" + name + "' has invalid file name '" + spec.file + "'");
            const auto path = dir / spec.file;
            if (!std::filesystem::exists(path)) throw IoError("blob '" + name + "' file missing: '" + path.string() + "'");
            const std::string bytes = detail::read_file(path);
            const std::size_t expected = detail::element_count(spec.shape) * dtype_size(spec.dtype);
            if (bytes.size() != expected) {
                throw FormatError("blob '" + name + "' shape mismatch: file has " + std::to_string(bytes.size()) +
                                  " bytes, manifest shape and dtype require " + std::to_string(expected));
            }
            return {detail::decode(bytes, spec.dtype), spec.shape};
        };
        auto load_vector = [&](const std::string& name) {
            auto [values, shape] = load(name);
            if (shape.size() != 1) throw FormatError("blob '" + name + "' must be rank 1");
            return Vector(std::move(values));
        };

        for (std::size_t l = 0; l < b.meta.n_layers; ++l) {
            auto [values, shape] = load(detail::wv_blob(l));
            if (shape.size() != 2) throw FormatError("blob '" + detail::wv_blob(l) + "' must be rank 2");
            b.w_v.emplace_back(shape[0], shape[1], std::move(values));
        }

        for (const auto& jt : manifest.at("traces")) {
            InputTrace t;
            t.label = jt.at("label").get<std::string>();
            t.text = jt.value("text", std::string{});
            t.token_count = jt.at("token_count").get<std::size_t>();
            if (jt.contains("edited_token_index") && !jt["edited_token_index"].is_null()) {
                t.edited_token_index = jt["edited_token_index"].get<std::size_t>();
            }
            for (std::size_t l = 0; l < b.meta.n_layers; ++l) {
                t.v_last.push_back(load_vector(detail::v_blob(t.label, l)));
                t.h_last.push_back(load_vector(detail::h_blob(t.label, l)));
            }
            if (table.count(detail::emb_blob(t.label))) t.edited_token_embedding = load_vector(detail::emb_blob(t.label));
            if (b.traces.count(t.label)) throw FormatError("duplicate trace label '" + t.label + "'");
            b.add_trace(std::move(t));
        }
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest: " + std::string(e.what()));
    }
}

/// Loads and fully validates a bundle; any violation is a FormatError.
inline CaptureBundle read_bundle(const std::filesystem::path& dir) {
    CaptureBundle b = read_bundle_unvalidated(dir);
    const auto violations = validate_bundle(b);
    if (!violations.empty()) {
        throw FormatError("bundle '" + dir.string() + "' has " + std::to_string(violations.size()) +
                          " violations, first: " + describe(violations.front()));
    }
    return b;
}

} // namespace ctree::capture
