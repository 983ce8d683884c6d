// Acceptance gate: one PASS/FAIL line per primary criterion. Exits nonzero
// if any criterion fails.

#include "concept_oracle.hpp"
#include "support.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <chrono>
#include <functional>
#include <iostream>
#include <map>

using namespace testing_support;
using ctree::concepts::AnalysisParams;
using ctree::concepts::Mode;
using ctree::linalg::Matrix;
using ctree::linalg::Vector;
using nlohmann::json;

namespace {

// Collects failure messages; keeps the first few for the report.
class Failures {
public:
    void check(bool ok, const std::string& what) {
        if (ok) return;
        ++count_;
        if (shown_.size() < 3) shown_.push_back(what);
    }
    [[nodiscard]] bool ok() const { return count_ == 0; }
    [[nodiscard]] std::string summary() const {
        std::string s = std::to_string(count_) + " failed check(s)";
        for (const auto& m : shown_) s += "; " + m;
        return s;
    }

private:
    std::size_t count_ = 0;
    std::vector<std::string> shown_;
};

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

double frobenius(const Matrix& m) {
    double s = 0.0;
    for (double x : m.data()) s += x * x;
    return std::sqrt(s);
}

// max |Q^T Q - I| over the columns of q
double column_orthonormality(const Matrix& q) {
    double worst = 0.0;
    for (std::size_t i = 0; i < q.cols(); ++i) {
        for (std::size_t j = 0; j < q.cols(); ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < q.rows(); ++r) s += q(r, i) * q(r, j);
            worst = std::max(worst, std::abs(s - (i == j ? 1.0 : 0.0)));
        }
    }
    return worst;
}

ctree::capture::CaptureBundle random_bundle(std::mt19937_64& rng, std::size_t L, std::size_t d, std::size_t out) {
    std::vector<Matrix> w;
    for (std::size_t l = 0; l < L; ++l) w.push_back(random_matrix(rng, d, out));
    auto b = hand_bundle(std::move(w));
    for (const char* name : {"t0", "t1"}) {
        std::vector<Vector> v, h;
        for (std::size_t l = 0; l < L; ++l) {
            v.push_back(random_vector(rng, out));
            h.push_back(random_vector(rng, d));
        }
        b.add_trace(hand_trace(name, v, h));
    }
    return b;
}

ctree::concepts::PairAnalysis labeled(const std::string& name, std::optional<std::size_t> layer) {
    ctree::concepts::PairAnalysis a;
    a.pair_label = name;
    a.scores.assign(8, 1.0);
    if (layer) a.scores[*layer] = 0.0;
    a.branching_layer = layer;
    return a;
}

void svd_correctness(Failures& f) {
    std::mt19937_64 rng(20240601);
    for (int i = 0; i < 200; ++i) {
        const std::size_t rows = 1 + rng() % 64;
        const std::size_t cols = i % 10 == 0 ? rows : 1 + rng() % 64;
        const std::size_t p = std::min(rows, cols);
        const bool deficient = i % 4 == 1 && p > 1;
        const Matrix m = deficient ? random_low_rank(rng, rows, cols, 1 + rng() % (p - 1)) : random_matrix(rng, rows, cols);
        const auto s = ctree::linalg::svd(m);
        const Matrix r = s.reconstruct();
        double err = 0.0;
        for (std::size_t j = 0; j < m.data().size(); ++j) err += (r.data()[j] - m.data()[j]) * (r.data()[j] - m.data()[j]);
        err = std::sqrt(err);
        const std::string tag = std::to_string(rows) + "x" + std::to_string(cols);
        f.check(err <= 1e-8 * frobenius(m), tag + " reconstruction " + num(err));
        f.check(column_orthonormality(s.u) <= 1e-8, tag + " U orthonormality " + num(column_orthonormality(s.u)));
        const Matrix v = s.vt.transposed();
        f.check(column_orthonormality(v) <= 1e-8, tag + " V orthonormality " + num(column_orthonormality(v)));
    }
}

void concept_path_oracle(Failures& f) {
    std::mt19937_64 rng(8080);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t d = 1 + rng() % 6;
        const std::size_t out = trial % 3 == 0 ? 1 + rng() % d : d;
        const std::size_t L = 1 + rng() % 4;
        const auto b = random_bundle(rng, L, d, out);
        const std::size_t p = std::min(d, out);
        for (Mode m : {Mode::svd, Mode::raw}) {
            for (std::size_t k : {std::size_t{1}, std::size_t{2}, p}) {
                const auto a = ctree::concepts::analyze_pair(b, "t0", "t1", {k, 0.9, m});
                const auto ref = oracle::scores(b, "t0", "t1", k, m == Mode::raw);
                f.check(a.scores.size() == ref.size(), "layer count");
                for (std::size_t l = 0; l < ref.size() && l < a.scores.size(); ++l) {
                    f.check(std::abs(a.scores[l] - ref[l]) <= 1e-9,
                            "d=" + std::to_string(d) + " k=" + std::to_string(k) + " layer " + std::to_string(l) + ": " +
                                num(a.scores[l]) + " vs " + num(ref[l]));
                }
            }
        }
    }
}

void branching_semantics(Failures& f) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> s(1 + rng() % 40);
        for (double& x : s) x = u(rng);
        // sometimes force an inseparable array
        if (trial % 5 == 0)
            for (double& x : s) x = std::abs(x) * 0.05 + 0.95;
        double t1 = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        double t2 = std::uniform_real_distribution<double>(0.01, 1.0)(rng);
        if (t1 > t2) std::swap(t1, t2);
        for (double tau : {t1, t2}) {
            const auto l = ctree::concepts::branching_layer(s, tau);
            std::optional<std::size_t> expected;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (s[i] < tau) {
                    expected = i;
                    break;
                }
            }
            f.check(l == expected, "trial " + std::to_string(trial) + ": wrong branching layer");
        }
        const auto l1 = ctree::concepts::branching_layer(s, t1);
        const auto l2 = ctree::concepts::branching_layer(s, t2);
        f.check(!l1 || (l2 && *l2 <= *l1), "trial " + std::to_string(trial) + ": raising tau delayed a branch");
    }
}

void sign_scale_invariance(Failures& f) {
    std::mt19937_64 rng(99);
    const auto b = random_bundle(rng, 3, 6, 6);
    const ctree::concepts::PairAnalyzer an(b);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t k = 1 + rng() % 6;
        for (std::size_t l = 0; l < 3; ++l) {
            auto dec = an.layer_svd(l);
            for (std::size_t c = 0; c < dec.u.cols(); ++c) {
                if (rng() & 1) continue;
                for (std::size_t r = 0; r < dec.u.rows(); ++r) dec.u(r, c) = -dec.u(r, c);
                for (std::size_t r = 0; r < dec.vt.cols(); ++r) dec.vt(c, r) = -dec.vt(c, r);
            }
            const double ref = ctree::concepts::separation_score(an.path(b.trace("t0"), l, Mode::svd),
                                                                 an.path(b.trace("t1"), l, Mode::svd), k)
                                   .score;
            const double flipped = ctree::concepts::separation_score(
                                       ctree::concepts::concept_path(b.trace("t0").v_last[l], dec, l),
                                       ctree::concepts::concept_path(b.trace("t1").v_last[l], dec, l), k)
                                       .score;
            f.check(std::abs(flipped - ref) <= 1e-12, "sign flip changed s_" + std::to_string(l));
        }
    }
    for (Mode m : {Mode::svd, Mode::raw}) {
        const auto base = ctree::concepts::analyze_pair(b, "t0", "t1", {3, 0.9, m});
        for (int trial = 0; trial < 100; ++trial) {
            auto scaled = b;
            const std::string which = rng() & 1 ? "t0" : "t1";
            const double c = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
            for (auto& v : scaled.traces.at(which).v_last)
                for (double& x : v) x *= c;
            const auto s = ctree::concepts::analyze_pair(scaled, "t0", "t1", {3, 0.9, m});
            for (std::size_t l = 0; l < 3; ++l) {
                f.check(std::abs(s.scores[l] - base.scores[l]) <= 1e-12, "rescaling by " + num(c) + " changed s_" +
                                                                             std::to_string(l));
            }
        }
    }
}

void defaults_honored(Failures& f) {
    const std::vector<std::string> base{"tree", "--bundle", (data_dir() / "fixture_bundle").string(), "--pairs",
                                        "mayor/citizen@1"};
    auto r = run_cli(base);
    f.check(r.status == 0, "tree exited " + std::to_string(r.status) + ": " + r.err);
    if (r.status == 0) {
        const auto p = json::parse(r.out)["params"];
        f.check(p["k"] == 10, "k default is " + p["k"].dump());
        f.check(p["tau"] == 0.9, "tau default is " + p["tau"].dump());
    }
    auto raw = base;
    raw.insert(raw.end(), {"--mode", "raw"});
    r = run_cli(raw);
    f.check(r.status == 0, "raw tree exited " + std::to_string(r.status));
    if (r.status == 0) {
        const auto p = json::parse(r.out)["params"];
        f.check(p["tau"] == 0.99, "raw tau default is " + p["tau"].dump());
    }
}

void tree_construction(Failures& f) {
    using ctree::tree::BranchNode;
    std::vector<ctree::concepts::PairAnalysis> in{labeled("P1", 2), labeled("P2", 2), labeled("P3", 5),
                                                  labeled("P4", std::nullopt)};
    const auto t = ctree::tree::build_tree(in);
    f.check(t.total == 4, "root n != 4");
    f.check(t.branches == std::vector<BranchNode>{{2, {"P1", "P2"}, 2}, {5, {"P3"}, 1}}, "branch chain differs");
    f.check(t.inseparable == std::vector<std::string>{"P4"}, "inseparable differs");
    auto cmp = [](const auto& a, const auto& b) { return a.pair_label < b.pair_label; };
    std::sort(in.begin(), in.end(), cmp);
    do {
        f.check(ctree::tree::build_tree(in) == t, "permutation changed the tree");
    } while (std::next_permutation(in.begin(), in.end(), cmp));
    f.check(ctree::tree::tree_from_json(ctree::tree::tree_to_json(t)) == t, "JSON round trip differs");
}

void toy_end_to_end(Failures& f) {
    ScratchDir dir("acceptance");
    const std::vector<std::string> args{"--layers", "6", "--dim", "32", "--seed", "7", "--jobs", "1"};
    std::map<std::string, std::string> runs[2];
    for (int i = 0; i < 2; ++i) {
        const auto out = dir / ("run" + std::to_string(i));
        std::vector<std::string> cmd{"toy-demo", "--out", out.string()};
        cmd.insert(cmd.end(), args.begin(), args.end());
        const auto t0 = std::chrono::steady_clock::now();
        const auto r = run_cli(cmd);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        f.check(r.status == 0, "toy-demo exited " + std::to_string(r.status) + ": " + r.err);
        f.check(secs < 10.0, "toy-demo took " + num(secs) + " s");
        if (r.status != 0) return;
        for (const auto& e : fs::recursive_directory_iterator(out)) {
            if (e.is_regular_file()) runs[i][fs::relative(e.path(), out).string()] = slurp(e.path());
        }
    }
    f.check(runs[0] == runs[1], "re-run output is not bit-identical");

    const auto out = dir / "run0";
    const auto bundle = ctree::capture::read_bundle_unvalidated(out / "bundle");
    const auto violations = ctree::capture::validate_bundle(bundle);
    f.check(violations.empty(), std::to_string(violations.size()) + " bundle violations");
    f.check(bundle.meta.n_layers == 6 && bundle.meta.d_model == 32, "bundle shape");

    const auto tree = json::parse(slurp(out / "tree.json"));
    f.check(!tree["pairs"].empty(), "no pairs analyzed");
    std::vector<ctree::concepts::PairAnalysis> analyses;
    for (const auto& p : tree["pairs"]) {
        f.check(p["scores"].size() == 6, "curve length");
        for (const auto& s : p["scores"]) {
            const double v = s.get<double>();
            f.check(std::isfinite(v) && v >= -1.0 && v <= 1.0, "score out of range: " + num(v));
        }
        ctree::concepts::PairAnalysis a;
        a.pair_label = p["pair"];
        a.scores = p["scores"].get<std::vector<double>>();
        if (!p["branching_layer"].is_null()) a.branching_layer = p["branching_layer"].get<std::size_t>();
        f.check(a.branching_layer == ctree::concepts::branching_layer(a.scores, 0.9), "branching layer inconsistent");
        analyses.push_back(a);
    }
    for (const auto& e : fs::directory_iterator(out)) {
        const auto name = e.path().filename().string();
        if (name.rfind("value_similarity", 0) != 0 && name.rfind("delta_h", 0) != 0) continue;
        std::istringstream in(slurp(e.path()));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto a = line.find(',');
            const auto b = line.find(',', a + 1);
            const double v = std::stod(line.substr(a + 1, b - a - 1));
            f.check(v >= -1.0 && v <= 1.0, name + " value out of range");
        }
    }
    try {
        const auto t = ctree::tree::tree_from_json(tree["tree"]);
        f.check(t == ctree::tree::build_tree(analyses), "tree does not match the pair results");
        std::size_t covered = t.inseparable.size();
        for (const auto& b : t.branches) covered += b.branched.size();
        f.check(covered == t.total && t.total == analyses.size(), "tree does not cover every pair once");
    } catch (const std::exception& e) {
        f.check(false, std::string("malformed tree: ") + e.what());
    }
}

double boost_two_sided_p(double r, std::size_t n) {
    const double df = static_cast<double>(n) - 2.0;
    const boost::math::students_t dist(df);
    return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r * std::sqrt(df / (1.0 - r * r)))));
}

void statistics(Failures& f) {
    using namespace ctree::stats;
    const std::vector<double> x{1, 2, 3, 4, 5};
    const std::vector<double> up{2, 4, 6, 8, 10}, down{5, 4, 3, 2, 1}, cube{1, 8, 27, 64, 125};
    f.check(pearson(x, up).coefficient == 1.0, "pearson +1");
    f.check(pearson(x, down).coefficient == -1.0, "pearson -1");
    f.check(spearman(x, cube).coefficient == 1.0, "spearman +1");
    f.check(spearman(x, down).coefficient == -1.0, "spearman -1");

    const auto r = pearson(x, std::vector<double>{2, 1, 4, 3, 5});
    f.check(std::abs(r.coefficient - 0.8) <= 1e-6, "n=5 r = " + num(r.coefficient));
    f.check(std::abs(r.p_value - boost_two_sided_p(0.8, 5)) <= 1e-6, "n=5 p = " + num(r.p_value));
    f.check(std::abs(r.p_value - 0.104) <= 5e-4, "n=5 p not near 0.104");

    const std::vector<double> tx{1, 2, 2, 3}, ty{1, 3, 2, 4};
    f.check(average_ranks(tx) == std::vector<double>{1, 2.5, 2.5, 4}, "tie ranks");
    const double hand = 4.5 / std::sqrt(4.5 * 5.0);
    f.check(std::abs(spearman(tx, ty).coefficient - hand) <= 1e-12, "tie rho " + num(spearman(tx, ty).coefficient));
}

void pipeline_prompts(Failures& f) {
    using namespace ctree::pipeline;
    const std::string text = "The city mayor decided to make bus rides free for everyone. How will most people in the "
                             "city probably feel happy about this decision?";
    MockChatClient client({"mayor free everyone happy", "mayor/citizen free/expensive everyone/students happy/angry"});
    const auto id = identify_concepts(text, client);
    const auto gen = generate_counterfactuals(text, id.tokens, client);
    f.check(client.requests().size() == 2, "request count");
    if (client.requests().size() == 2) {
        f.check(client.requests()[0].messages.back().content == slurp(data_dir() / "prompts" / "identification.txt"),
                "identification prompt bytes differ");
        f.check(client.requests()[1].messages.back().content == slurp(data_dir() / "prompts" / "counterfactual.txt"),
                "counterfactual prompt bytes differ");
    }
    f.check(id.tokens == std::vector<std::string>{"mayor", "free", "everyone", "happy"}, "identified tokens");
    std::vector<std::string> labels;
    for (const auto& p : gen.pairs) labels.push_back(p.label());
    f.check(labels == std::vector<std::string>{"mayor/citizen", "free/expensive", "everyone/students", "happy/angry"},
            "generated pairs");
    f.check(id.warnings.empty() && gen.warnings.empty(), "unexpected warnings");
}

void degenerate_inputs(Failures& f) {
    using ctree::concepts::analyze_pair;
    std::mt19937_64 rng(5);
    try {
        // zero vector at one layer: score 0, flagged
        auto b = random_bundle(rng, 3, 4, 4);
        std::fill(b.traces.at("t1").v_last[1].begin(), b.traces.at("t1").v_last[1].end(), 0.0);
        for (Mode m : {Mode::svd, Mode::raw}) {
            const auto a = analyze_pair(b, "t0", "t1", {10, ctree::concepts::default_tau(m), m});
            f.check(a.scores[1] == 0.0, "zero vector score");
            f.check(a.degenerate_layers == std::vector<std::size_t>{1}, "zero vector not flagged");
            f.check(a.branching_layer && *a.branching_layer <= 1, "degenerate layer is not a crossing");
        }

        // k > p keeps every component
        const auto c = random_bundle(rng, 2, 4, 3);
        f.check(analyze_pair(c, "t0", "t1", {50, 0.9, Mode::svd}).scores ==
                    analyze_pair(c, "t0", "t1", {3, 0.9, Mode::svd}).scores,
                "k > p differs from k = p");

        // single-layer bundle: analysis and tree work, delta-h refuses
        const auto one = random_bundle(rng, 1, 4, 4);
        const auto a1 = analyze_pair(one, "t0", "t1", {});
        f.check(a1.scores.size() == 1, "single-layer curve length");
        f.check(ctree::tree::build_tree({a1}).total == 1, "single-layer tree");
        bool refused = false;
        try {
            (void)ctree::analysis::delta_h_alignment(one, "t0", "t1");
        } catch (const ctree::InvalidInput&) {
            refused = true;
        }
        f.check(refused, "delta-h on one layer did not raise InvalidInput");

        // self-pair: all ones, inseparable even at tau = 1
        for (Mode m : {Mode::svd, Mode::raw}) {
            const auto s = analyze_pair(b, "t0", "t0", {10, 1.0, m});
            f.check(s.scores == std::vector<double>(3, 1.0), "self-pair scores are not exactly 1");
            f.check(!s.branching_layer, "self-pair branched");
        }

        // all-zero trace against itself: every layer degenerate
        auto z = random_bundle(rng, 2, 3, 3);
        for (auto& v : z.traces.at("t0").v_last) std::fill(v.begin(), v.end(), 0.0);
        const auto zz = analyze_pair(z, "t0", "t0", {});
        f.check(zz.degenerate_layers.size() == 2, "all-zero self-pair not flagged");
    } catch (const std::exception& e) {
        f.check(false, std::string("unexpected exception: ") + e.what());
    }
}

struct Criterion {
    std::string name;
    std::function<void(Failures&)> run;
    double limit_seconds;  // 0 for no limit
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"svd_correctness", svd_correctness, 30.0},
        {"concept_path_oracle", concept_path_oracle, 10.0},
        {"branching_semantics", branching_semantics, 5.0},
        {"sign_scale_invariance", sign_scale_invariance, 0.0},
        {"defaults_honored", defaults_honored, 0.0},
        {"tree_construction", tree_construction, 0.0},
        {"toy_end_to_end", toy_end_to_end, 0.0},
        {"statistics", statistics, 0.0},
        {"pipeline_prompts", pipeline_prompts, 0.0},
        {"degenerate_inputs", degenerate_inputs, 0.0},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Failures f;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.run(f);
        } catch (const std::exception& e) {
            f.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.limit_seconds > 0.0) f.check(secs < c.limit_seconds, "over the " + num(c.limit_seconds) + " s limit");
        char timing[32];
        std::snprintf(timing, sizeof timing, "%.3f s", secs);
        if (f.ok()) {
            std::cout << "PASS " << c.name << " (" << timing << ")\n";
        } else {
            ++failed;
            std::cout << "FAIL " << c.name << " (" << timing << "): " << f.summary() << "\n";
        }
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
              << " criteria passed\n";
    return failed == 0 ? 0 : 1;
}
