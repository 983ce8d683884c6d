// Regenerates the generated test data (fixture_bundle, toy_golden.json).
// Usage: make_fixtures <data dir>
#include "fixture.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixtures <data dir>\n";
        return 2;
    }
    const std::filesystem::path dir = std::filesystem::path(argv[1]) / "fixture_bundle";
    std::filesystem::remove_all(dir);
    ctree::capture::write_bundle(fixture::make_bundle(), dir);
    std::cout << "wrote " << dir.string() << "\n";

    // golden toy forward pass: L=4, d=16, vocab=32, seed 42
    const auto model = ctree::toy::init_seeded({4, 16, 2, 32, 42, false});
    const std::vector<std::size_t> tokens{3, 17, 9, 30, 1, 22};
    const auto t = ctree::toy::forward_capture(model, tokens, "golden");
    nlohmann::ordered_json g;
    g["config"] = {{"n_layers", 4}, {"d_model", 16}, {"n_heads", 2}, {"vocab_size", 32}, {"seed", 42}};
    g["tokens"] = tokens;
    g["v_last"] = t.v_last;
    g["h_last"] = t.h_last;
    std::ofstream(std::filesystem::path(argv[1]) / "toy_golden.json") << g.dump(2) << "\n";
    return 0;
}
