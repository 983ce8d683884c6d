#pragma once

// Concept Tree assembly and serialization.
//
// The tree is a chain: the root holds every pair undifferentiated at layer 0;
// each branch node at layer l splits off the pairs whose branching layer is l
// (siblings when several share it) and records how many remain unbranched.
// Pairs that never branch end in the terminal inseparable set.

#include <ctree/concepts.hpp>
#include <ctree/error.hpp>

#include <json.hpp>

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace ctree::tree {

struct ConceptPairSpec {
    std::string original_token;
    std::string counterfactual_token;
    std::string original_trace_label;
    std::string counterfactual_trace_label;
    std::optional<std::size_t> edited_token_index;

    [[nodiscard]] std::string label() const { return original_token + "/" + counterfactual_token; }

    friend bool operator==(const ConceptPairSpec&, const ConceptPairSpec&) = default;
};

struct BranchNode {
    std::size_t layer = 0;
    std::vector<std::string> branched;
    std::size_t remaining = 0;

    friend bool operator==(const BranchNode&, const BranchNode&) = default;
};

struct ConceptTree {
    std::size_t total = 0;  // root remaining count
    std::vector<BranchNode> branches;
    std::vector<std::string> inseparable;

    friend bool operator==(const ConceptTree&, const ConceptTree&) = default;
};

inline ConceptTree build_tree(const std::vector<concepts::PairAnalysis>& analyses) {
    if (analyses.empty()) throw InvalidInput("build_tree: no pair analyses given");
    const std::size_t L = analyses.front().scores.size();
    std::map<std::size_t, std::vector<std::string>> groups;
    ConceptTree t;
    t.total = analyses.size();
    for (const auto& a : analyses) {
        if (a.scores.size() != L) {
            throw InvalidInput("build_tree: pair '" + a.pair_label + "' has " + std::to_string(a.scores.size()) +
                               " layers, expected " + std::to_string(L));
        }
        if (a.branching_layer) {
            groups[*a.branching_layer].push_back(a.pair_label);
        } else {
            t.inseparable.push_back(a.pair_label);
        }
    }
    std::size_t remaining = t.total;
    for (auto& [layer, labels] : groups) {
        std::sort(labels.begin(), labels.end());
        remaining -= labels.size();
        t.branches.push_back({layer, std::move(labels), remaining});
    }
    std::sort(t.inseparable.begin(), t.inseparable.end());
    return t;
}

inline nlohmann::ordered_json tree_to_json_value(const ConceptTree& t) {
    nlohmann::ordered_json j;
    j["root"] = {{"layer", 0}, {"remaining", t.total}};
    auto branches = nlohmann::ordered_json::array();
    for (const auto& b : t.branches) {
        branches.push_back({{"layer", b.layer}, {"pairs", b.branched}, {"remaining", b.remaining}});
    }
    j["branches"] = std::move(branches);
    j["inseparable"] = t.inseparable;
    return j;
}

inline std::string tree_to_json(const ConceptTree& t) { return tree_to_json_value(t).dump(2); }

inline ConceptTree tree_from_json(const nlohmann::json& j) {
    try {
        ConceptTree t;
        t.total = j.at("root").at("remaining").get<std::size_t>();
        for (const auto& b : j.at("branches")) {
            t.branches.push_back({b.at("layer").get<std::size_t>(), b.at("pairs").get<std::vector<std::string>>(),
                                  b.at("remaining").get<std::size_t>()});
        }
        t.inseparable = j.at("inseparable").get<std::vector<std::string>>();
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed concept tree JSON: " + std::string(e.what()));
    }
}

inline ConceptTree tree_from_json(const std::string& s) {
    try {
        return tree_from_json(nlohmann::json::parse(s));
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("concept tree is not valid JSON: " + std::string(e.what()));
    }
}

namespace detail {

inline std::string dot_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    out += '"';
    return out;
}

} // namespace detail

/// Graphviz digraph: root -> L<layer> chain, one leaf per pair, and an
/// "inseparable" cluster for pairs that never branch.
inline std::string tree_to_dot(const ConceptTree& t) {
    std::ostringstream o;
    o << "digraph concept_tree {\n";
    o << "  rankdir=TB;\n";
    o << "  node [shape=box];\n";
    o << "  root [label=" << detail::dot_quote("root (n=" + std::to_string(t.total) + ")") << "];\n";
    std::string prev = "root";
    std::size_t leaf = 0;
    for (const auto& b : t.branches) {
        const std::string id = "L" + std::to_string(b.layer);
        o << "  " << id << " [label="
          << detail::dot_quote("layer " + std::to_string(b.layer) + " (n=" + std::to_string(b.remaining) + ")")
          << "];\n";
        o << "  " << prev << " -> " << id << ";\n";
        for (const auto& p : b.branched) {
            const std::string lid = "leaf" + std::to_string(leaf++);
            o << "  " << lid << " [shape=ellipse, label=" << detail::dot_quote(p) << "];\n";
            o << "  " << id << " -> " << lid << ";\n";
        }
        prev = id;
    }
    o << "  subgraph cluster_inseparable {\n";
    o << "    label=\"inseparable\";\n";
    o << "    style=dashed;\n";
    if (t.inseparable.empty()) o << "    none [shape=plaintext, label=\"(none)\"];\n";
    std::vector<std::string> ids;
    for (const auto& p : t.inseparable) {
        const std::string lid = "leaf" + std::to_string(leaf++);
        o << "    " << lid << " [shape=ellipse, label=" << detail::dot_quote(p) << "];\n";
        ids.push_back(lid);
    }
    o << "  }\n";
    for (const auto& id : ids) o << "  " << prev << " -> " << id << " [style=dashed];\n";
    o << "}\n";
    return o.str();
}

} // namespace ctree::tree
