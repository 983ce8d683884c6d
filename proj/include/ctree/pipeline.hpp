#pragma once

// Automated concept extraction:
//   1. an LLM picks salient tokens from a base text,
//   2. the LLM proposes a counterfactual for each token,
//   3. every base/counterfactual pair is analyzed on captured activations,
//   4. the results are assembled into a Concept Tree and a report.
//
// The chat model is reached through the ChatClient contract (system + user
// message in, one completion out). HttpChatClient in pipeline_http.hpp talks
// to any chat-completion endpoint; MockChatClient replays scripted replies.

#include <ctree/capture.hpp>
#include <ctree/concepts.hpp>
#include <ctree/error.hpp>
#include <ctree/parallel.hpp>
#include <ctree/text.hpp>
#include <ctree/toymodel.hpp>
#include <ctree/tree.hpp>

#include <json.hpp>

#include <deque>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ctree::pipeline {

struct ChatMessage {
    std::string role;
    std::string content;

    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
};

inline nlohmann::ordered_json request_to_json(const ChatRequest& r) {
    nlohmann::ordered_json j;
    j["model"] = r.model;
    auto msgs = nlohmann::ordered_json::array();
    for (const auto& m : r.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    j["messages"] = std::move(msgs);
    j["temperature"] = r.temperature;
    return j;
}

/// First choice's message content from a chat-completion response body.
inline std::string completion_text(const std::string& body) {
    try {
        const auto j = nlohmann::json::parse(body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("unexpected chat-completion response: " + std::string(e.what()));
    }
}

class ChatClient {
public:
    virtual ~ChatClient() = default;
    [[nodiscard]] virtual std::string model_name() const = 0;
    virtual std::string complete(const ChatRequest& request) = 0;
};

class MockChatClient final : public ChatClient {
public:
    explicit MockChatClient(std::vector<std::string> replies, std::string model = "mock")
        : replies_(replies.begin(), replies.end()), model_(std::move(model)) {}

    [[nodiscard]] std::string model_name() const override { return model_; }

    std::string complete(const ChatRequest& request) override {
        requests_.push_back(request);
        if (replies_.empty()) throw TransportError("mock endpoint: no scripted reply left");
        std::string r = std::move(replies_.front());
        replies_.pop_front();
        return r;
    }

    [[nodiscard]] const std::vector<ChatRequest>& requests() const noexcept { return requests_; }

private:
    std::deque<std::string> replies_;
    std::string model_;
    std::vector<ChatRequest> requests_;
};

// Prompt templates. These are byte-stable: golden tests compare the exact
// request text, including the "Sentense:" field label.
inline constexpr const char* system_prompt = "You are a concept analyst.";

inline constexpr const char* identification_instruction =
    "Given the following text, identify a group of impactful tokens that defines the core sentiment or concept. "
    "The token should be a good candidate for a counterfactual analysis. Focus on adjectives, nouns, or verbs "
    "that, if changed, would fundamentally alter the meaning. Output the tokens, separate each token with ' ':";

inline constexpr const char* counterfactual_instruction =
    "In the context of the following sentence, what are the most meaningful counterfactuals for the following "
    "tokens? Output each pair that separates the original token and the counterfactual token with a '/' and "
    "separate each pair with a ' ':";

inline std::string identification_prompt(const std::string& base_text) {
    return std::string("Instruction: ") + identification_instruction + "\nText: " + base_text;
}

inline std::string counterfactual_prompt(const std::string& base_text, const std::vector<std::string>& tokens) {
    return std::string("Instruction: ") + counterfactual_instruction + "\nSentence: Sentense: " + base_text +
           " Tokens: " + text::join(tokens, " ");
}

inline ChatRequest make_request(const ChatClient& client, std::string user_content) {
    return ChatRequest{client.model_name(), {{"system", system_prompt}, {"user", std::move(user_content)}}, 0.0};
}

enum class Stage { identify, generate, analyze };

inline std::string to_string(Stage s) {
    switch (s) {
    case Stage::identify: return "identify";
    case Stage::generate: return "generate";
    case Stage::analyze: return "analyze";
    }
    return "?";
}

struct Warning {
    Stage stage;
    std::optional<std::string> pair;  // set when a concrete pair was excluded
    std::string message;
};

namespace detail {

inline std::string trim_punct(std::string s) {
    constexpr std::string_view punct = ",.;:!?\"()[]{}`*";
    auto strip = [&](char c) { return punct.find(c) != std::string_view::npos; };
    while (!s.empty() && strip(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && strip(s[i])) ++i;
    return s.substr(i);
}

} // namespace detail

struct Identification {
    std::vector<std::string> tokens;
    std::vector<Warning> warnings;
};

/// Stage 1. Tokens must occur as whole words (case-sensitive) in the text;
/// others are dropped with a warning.
inline Identification identify_concepts(const std::string& base_text, ChatClient& client) {
    if (base_text.empty()) throw InvalidInput("identify_concepts: base text is empty");
    const std::string reply = client.complete(make_request(client, identification_prompt(base_text)));
    const auto items = text::split_whitespace(reply);
    if (items.empty()) throw ParseError("identify_concepts: empty reply from discovery model");

    const auto words = text::tokenize(base_text);
    Identification out;
    std::set<std::string> seen;
    for (const auto& raw : items) {
        const std::string tok = detail::trim_punct(raw);
        if (tok.empty()) continue;
        if (text::find_word(words, tok) < 0) {
            out.warnings.push_back({Stage::identify, std::nullopt, "token '" + tok + "' does not occur in the text"});
            continue;
        }
        if (!seen.insert(tok).second) {
            out.warnings.push_back({Stage::identify, std::nullopt, "duplicate token '" + tok + "' ignored"});
            continue;
        }
        out.tokens.push_back(tok);
    }
    if (out.tokens.empty()) throw ParseError("identify_concepts: no reply token occurs in the text");
    return out;
}

inline constexpr const char* base_trace_label = "base";

struct Generation {
    std::vector<tree::ConceptPairSpec> pairs;
    std::vector<Warning> warnings;
};

/// Stage 2. Items are `orig/cf`, split on the first '/'. The base trace is
/// labeled "base" and counterfactual traces "cf<i>" in reply order.
inline Generation generate_counterfactuals(const std::string& base_text, const std::vector<std::string>& tokens,
                                           ChatClient& client) {
    if (tokens.empty()) throw InvalidInput("generate_counterfactuals: no tokens to generate counterfactuals for");
    const std::string reply = client.complete(make_request(client, counterfactual_prompt(base_text, tokens)));
    const std::set<std::string> requested(tokens.begin(), tokens.end());
    const auto words = text::tokenize(base_text);

    Generation out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& raw : text::split_whitespace(reply)) {
        const std::string item = detail::trim_punct(raw);
        if (item.empty()) continue;
        const auto slash = item.find('/');
        if (slash == std::string::npos) {
            out.warnings.push_back({Stage::generate, std::nullopt, "item '" + item + "' has no '/' separator, skipped"});
            continue;
        }
        const std::string orig = item.substr(0, slash);
        const std::string cf = item.substr(slash + 1);
        if (orig.empty() || cf.empty()) {
            out.warnings.push_back({Stage::generate, std::nullopt, "item '" + item + "' has an empty side, skipped"});
            continue;
        }
        if (!requested.count(orig)) {
            out.warnings.push_back(
                {Stage::generate, std::nullopt, "item '" + item + "': '" + orig + "' was not a requested token, dropped"});
            continue;
        }
        if (orig == cf) {
            out.warnings.push_back({Stage::generate, std::nullopt, "item '" + item + "' does not change the token, skipped"});
            continue;
        }
        if (!seen.emplace(orig, cf).second) {
            out.warnings.push_back({Stage::generate, std::nullopt, "duplicate pair '" + item + "' removed"});
            continue;
        }
        const auto idx = text::find_word(words, orig);
        tree::ConceptPairSpec p;
        p.original_token = orig;
        p.counterfactual_token = cf;
        p.original_trace_label = base_trace_label;
        p.counterfactual_trace_label = "cf" + std::to_string(out.pairs.size());
        if (idx >= 0) p.edited_token_index = static_cast<std::size_t>(idx);
        out.pairs.push_back(std::move(p));
    }
    if (out.pairs.empty()) throw ParseError("generate_counterfactuals: reply contained no usable orig/cf pairs");
    return out;
}

struct TextRequest {
    std::string label;
    std::string text;
    std::optional<std::size_t> edited_index;
};

/// Supplies activations for texts. Texts it cannot cover are simply absent
/// from the returned bundle.
class CaptureSource {
public:
    virtual ~CaptureSource() = default;
    virtual capture::CaptureBundle capture(const std::vector<TextRequest>& requests) = 0;
};

/// Runs the built-in toy transformer, mapping words to ids by hashing.
class ToyCaptureSource final : public CaptureSource {
public:
    explicit ToyCaptureSource(toy::ToyModel model) : model_(std::move(model)) {}

    capture::CaptureBundle capture(const std::vector<TextRequest>& requests) override {
        std::vector<toy::ToyInput> inputs;
        for (const auto& r : requests) {
            inputs.push_back({r.label, toy::toy_token_ids(r.text, model_.config.vocab_size), r.edited_index, r.text});
        }
        return toy::make_toy_bundle(model_, inputs);
    }

    [[nodiscard]] const toy::ToyModel& model() const noexcept { return model_; }

private:
    toy::ToyModel model_;
};

/// Serves traces from a pre-exported bundle, matched by exact text.
class BundleCaptureSource final : public CaptureSource {
public:
    explicit BundleCaptureSource(capture::CaptureBundle bundle) : bundle_(std::move(bundle)) {}

    capture::CaptureBundle capture(const std::vector<TextRequest>& requests) override {
        capture::CaptureBundle out;
        out.meta = bundle_.meta;
        out.w_v = bundle_.w_v;
        for (const auto& r : requests) {
            for (const auto& [label, t] : bundle_.traces) {
                if (t.text != r.text) continue;
                auto copy = t;
                copy.label = r.label;
                out.add_trace(std::move(copy));
                break;
            }
        }
        return out;
    }

private:
    capture::CaptureBundle bundle_;
};

struct PipelineReport {
    std::string base_text;
    std::vector<std::string> identified_tokens;
    std::vector<tree::ConceptPairSpec> pairs;
    std::vector<concepts::PairAnalysis> analyses;
    tree::ConceptTree tree;
    std::vector<Warning> warnings;
    concepts::AnalysisParams params;

    [[nodiscard]] std::size_t pair_warning_count() const {
        std::size_t n = 0;
        for (const auto& w : warnings) n += w.pair.has_value();
        return n;
    }
};

inline PipelineReport run_pipeline(const std::string& base_text, ChatClient& client, CaptureSource& source,
                                   const concepts::AnalysisParams& params, std::size_t jobs = 1) {
    params.validate();
    PipelineReport report;
    report.base_text = base_text;
    report.params = params;

    auto ident = identify_concepts(base_text, client);
    report.identified_tokens = ident.tokens;
    report.warnings = std::move(ident.warnings);

    auto gen = generate_counterfactuals(base_text, ident.tokens, client);
    report.pairs = gen.pairs;
    report.warnings.insert(report.warnings.end(), gen.warnings.begin(), gen.warnings.end());

    const auto words = text::tokenize(base_text);
    std::vector<TextRequest> requests{{base_trace_label, base_text, std::nullopt}};
    for (const auto& p : report.pairs) {
        const auto idx = text::find_word(words, p.original_token);
        if (idx < 0) continue;
        requests.push_back({p.counterfactual_trace_label,
                            text::replace_token(base_text, words, static_cast<std::size_t>(idx), p.counterfactual_token),
                            p.edited_token_index});
    }

    const auto bundle = source.capture(requests);
    if (!bundle.has_trace(base_trace_label)) throw NotFound("capture source has no trace for the base text");

    std::vector<const tree::ConceptPairSpec*> usable;
    for (const auto& p : report.pairs) {
        if (bundle.has_trace(p.counterfactual_trace_label)) {
            usable.push_back(&p);
        } else {
            report.warnings.push_back({Stage::analyze, p.label(), "capture source has no trace for the counterfactual text"});
        }
    }
    if (usable.empty()) throw InvalidInput("pipeline: no usable pairs to analyze");

    const concepts::PairAnalyzer analyzer(bundle);
    report.analyses = parallel_map<concepts::PairAnalysis>(usable.size(), jobs, [&](std::size_t i) {
        const auto& p = *usable[i];
        return analyzer.analyze(p.original_trace_label, p.counterfactual_trace_label, params, p.label());
    });
    report.tree = tree::build_tree(report.analyses);
    return report;
}

inline nlohmann::ordered_json params_to_json(const concepts::AnalysisParams& p) {
    return {{"k", p.k}, {"tau", p.tau}, {"mode", concepts::to_string(p.mode)}};
}

inline nlohmann::ordered_json pair_spec_to_json(const tree::ConceptPairSpec& p) {
    nlohmann::ordered_json j;
    j["pair"] = p.label();
    j["original_token"] = p.original_token;
    j["counterfactual_token"] = p.counterfactual_token;
    j["original_trace"] = p.original_trace_label;
    j["counterfactual_trace"] = p.counterfactual_trace_label;
    j["edited_token_index"] = p.edited_token_index ? nlohmann::ordered_json(*p.edited_token_index) : nullptr;
    return j;
}

inline nlohmann::ordered_json analysis_to_json(const concepts::PairAnalysis& a) {
    nlohmann::ordered_json j;
    j["pair"] = a.pair_label;
    j["scores"] = a.scores;
    j["branching_layer"] = a.branching_layer ? nlohmann::ordered_json(*a.branching_layer) : nullptr;
    j["degenerate_layers"] = a.degenerate_layers;
    return j;
}

inline nlohmann::ordered_json report_to_json(const PipelineReport& r) {
    nlohmann::ordered_json j;
    j["params"] = params_to_json(r.params);
    j["base_text"] = r.base_text;
    j["identified_tokens"] = r.identified_tokens;
    auto pairs = nlohmann::ordered_json::array();
    for (const auto& p : r.pairs) pairs.push_back(pair_spec_to_json(p));
    j["pairs"] = std::move(pairs);
    auto analyses = nlohmann::ordered_json::array();
    for (const auto& a : r.analyses) analyses.push_back(analysis_to_json(a));
    j["analyses"] = std::move(analyses);
    j["tree"] = tree::tree_to_json_value(r.tree);
    auto warnings = nlohmann::ordered_json::array();
    for (const auto& w : r.warnings) {
        nlohmann::ordered_json jw = {{"stage", to_string(w.stage)}};
        jw["pair"] = w.pair ? nlohmann::ordered_json(*w.pair) : nullptr;
        jw["message"] = w.message;
        warnings.push_back(std::move(jw));
    }
    j["warnings"] = std::move(warnings);
    return j;
}

} // namespace ctree::pipeline
