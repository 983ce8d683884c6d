#pragma once

// The checked-in fixture bundle (tests/data/fixture_bundle) is this toy
// configuration run on one base sentence and four single-word edits.
// make_fixtures rewrites it; test_capture checks the files still match.

#include <ctree/ctree.hpp>

#include <string>
#include <vector>

namespace fixture {

inline constexpr const char* base_text = "the mayor made rides free for everyone";

struct Edit {
    const char* original;
    const char* counterfactual;
};

inline const std::vector<Edit>& edits() {
    static const std::vector<Edit> e{{"mayor", "citizen"}, {"free", "expensive"}, {"everyone", "students"},
                                     {"rides", "walks"}};
    return e;
}

inline ctree::toy::ToyConfig config() { return {2, 4, 2, 32, 2024, false}; }

inline ctree::capture::CaptureBundle make_bundle() {
    const auto model = ctree::toy::init_seeded(config());
    const auto words = ctree::text::tokenize(base_text);
    std::vector<ctree::toy::ToyInput> inputs{{"base", ctree::toy::toy_token_ids(base_text, 32), std::nullopt, base_text}};
    for (const auto& e : edits()) {
        const auto idx = static_cast<std::size_t>(ctree::text::find_word(words, e.original));
        const auto text = ctree::text::replace_token(base_text, words, idx, e.counterfactual);
        inputs.push_back({e.counterfactual, ctree::toy::toy_token_ids(text, 32), idx, text});
    }
    return ctree::toy::make_toy_bundle(model, inputs, ctree::capture::DType::f64);
}

// Inline CLI pair arguments for the four edits, e.g. "mayor/citizen@1".
inline std::vector<std::string> pair_args() {
    const auto words = ctree::text::tokenize(base_text);
    std::vector<std::string> out;
    for (const auto& e : edits()) {
        out.push_back(std::string(e.original) + "/" + e.counterfactual + "@" +
                      std::to_string(ctree::text::find_word(words, e.original)));
    }
    return out;
}

} // namespace fixture
