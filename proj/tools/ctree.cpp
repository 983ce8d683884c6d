// ctree: command-line front end for concept-tree analysis.
//
//   ctree toy-demo     seeded toy transformer, end to end
//   ctree tree         Concept Tree for pairs in a capture bundle
//   ctree diagnostics  value-similarity / delta-H alignment curves
//   ctree correlate    embedding distance vs branching layer statistics
//   ctree validate     check a capture bundle
//   ctree pipeline     LLM-driven concept discovery + analysis

#include <ctree/ctree.hpp>
#include <ctree/pipeline_http.hpp>

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

struct AnalysisFlags {
    std::size_t k = ctree::concepts::default_k;
    std::optional<double> tau;
    std::string mode = "svd";
    std::size_t jobs = 1;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--k", k, "top-k components kept per Concept Path")->capture_default_str();
        cmd->add_option("--tau", tau, "separation threshold (default 0.9 for svd, 0.99 for raw)");
        cmd->add_option("--mode", mode, "concept path mode")->check(CLI::IsMember({"svd", "raw"}))->capture_default_str();
        cmd->add_option("--jobs", jobs, "parallel pair analyses")->capture_default_str();
    }

    [[nodiscard]] ctree::concepts::AnalysisParams params() const {
        ctree::concepts::AnalysisParams p;
        p.k = k;
        p.mode = ctree::concepts::parse_mode(mode);
        p.tau = tau.value_or(ctree::concepts::default_tau(p.mode));
        p.validate();
        return p;
    }
};

void write_output(const std::string& path, const std::string& data) {
    if (path.empty() || path == "-") {
        std::cout << data;
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ctree::IoError("cannot open '" + path + "' for writing");
    f << data;
    if (!f) throw ctree::IoError("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ctree::IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// `orig/cf@index`; the original trace is --base, the counterfactual trace is
// labeled by the counterfactual token.
ctree::tree::ConceptPairSpec parse_inline_pair(const std::string& s, const std::string& base) {
    std::string body = s;
    std::optional<std::size_t> index;
    if (const auto at = s.rfind('@'); at != std::string::npos) {
        body = s.substr(0, at);
        const std::string idx = s.substr(at + 1);
        try {
            std::size_t used = 0;
            index = std::stoul(idx, &used);
            if (used != idx.size()) throw std::invalid_argument(idx);
        } catch (const std::exception&) {
            throw ctree::InvalidInput("pair '" + s + "': index '" + idx + "' is not a non-negative integer");
        }
    }
    const auto slash = body.find('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == body.size()) {
        throw ctree::InvalidInput("pair '" + s + "' is not of the form orig/cf@index");
    }
    ctree::tree::ConceptPairSpec p;
    p.original_token = body.substr(0, slash);
    p.counterfactual_token = body.substr(slash + 1);
    p.original_trace_label = base;
    p.counterfactual_trace_label = p.counterfactual_token;
    p.edited_token_index = index;
    return p;
}

std::vector<ctree::tree::ConceptPairSpec> parse_pairs_file(const std::string& path, const std::string& base) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ctree::ParseError("pairs file '" + path + "' is not valid JSON: " + e.what());
    }
    if (j.is_object()) j = j.at("pairs");
    std::vector<ctree::tree::ConceptPairSpec> out;
    try {
        for (const auto& e : j) {
            ctree::tree::ConceptPairSpec p;
            p.original_token = e.at("original_token").get<std::string>();
            p.counterfactual_token = e.at("counterfactual_token").get<std::string>();
            p.original_trace_label = e.value("original_trace", base);
            p.counterfactual_trace_label = e.value("counterfactual_trace", p.counterfactual_token);
            if (e.contains("edited_token_index") && !e["edited_token_index"].is_null()) {
                p.edited_token_index = e["edited_token_index"].get<std::size_t>();
            }
            out.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ctree::ParseError("pairs file '" + path + "': " + e.what());
    }
    return out;
}

std::vector<ctree::tree::ConceptPairSpec> parse_pairs(const std::vector<std::string>& args, const std::string& base) {
    std::vector<ctree::tree::ConceptPairSpec> out;
    for (const auto& a : args) {
        if (a.size() > 5 && a.ends_with(".json")) {
            auto more = parse_pairs_file(a, base);
            out.insert(out.end(), more.begin(), more.end());
        } else {
            out.push_back(parse_inline_pair(a, base));
        }
    }
    if (out.empty()) throw ctree::InvalidInput("no pairs given (use --pairs orig/cf@index or a pairs JSON file)");
    return out;
}

void check_pairs(const ctree::capture::CaptureBundle& b, const std::vector<ctree::tree::ConceptPairSpec>& pairs) {
    for (const auto& p : pairs) {
        for (const auto* label : {&p.original_trace_label, &p.counterfactual_trace_label}) {
            if (!b.has_trace(*label)) {
                throw ctree::NotFound("pair '" + p.label() + "': unknown trace label '" + *label + "'");
            }
        }
    }
}

ordered_json pairs_json(const std::vector<ctree::tree::ConceptPairSpec>& pairs) {
    auto j = ordered_json::array();
    for (const auto& p : pairs) {
        ordered_json e;
        e["original_token"] = p.original_token;
        e["counterfactual_token"] = p.counterfactual_token;
        e["original_trace"] = p.original_trace_label;
        e["counterfactual_trace"] = p.counterfactual_trace_label;
        e["edited_token_index"] = p.edited_token_index ? ordered_json(*p.edited_token_index) : nullptr;
        j.push_back(std::move(e));
    }
    return j;
}

struct TreeRun {
    std::vector<ctree::concepts::PairAnalysis> analyses;
    ctree::tree::ConceptTree tree;
    ordered_json json;
};

TreeRun run_tree(const ctree::capture::CaptureBundle& b, const std::vector<ctree::tree::ConceptPairSpec>& pairs,
                 const ctree::concepts::AnalysisParams& params, std::size_t jobs) {
    check_pairs(b, pairs);
    const ctree::concepts::PairAnalyzer analyzer(b);
    TreeRun run;
    run.analyses = ctree::parallel_map<ctree::concepts::PairAnalysis>(pairs.size(), jobs, [&](std::size_t i) {
        return analyzer.analyze(pairs[i].original_trace_label, pairs[i].counterfactual_trace_label, params,
                                pairs[i].label());
    });
    run.tree = ctree::tree::build_tree(run.analyses);

    ordered_json& j = run.json;
    j["params"] = ctree::pipeline::params_to_json(params);
    j["model_id"] = b.meta.model_id;
    j["n_layers"] = b.meta.n_layers;
    j["tree"] = ctree::tree::tree_to_json_value(run.tree);
    auto jp = ordered_json::array();
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        auto e = ctree::pipeline::pair_spec_to_json(pairs[i]);
        const auto a = ctree::pipeline::analysis_to_json(run.analyses[i]);
        for (auto it = a.begin(); it != a.end(); ++it) {
            if (it.key() != "pair") e[it.key()] = it.value();
        }
        std::optional<double> dist;
        try {
            dist = ctree::analysis::pair_embedding_distance(b, pairs[i]);
        } catch (const ctree::InvalidInput&) {
        }
        e["embedding_distance"] = dist ? ordered_json(*dist) : nullptr;
        jp.push_back(std::move(e));
    }
    j["pairs"] = std::move(jp);
    return run;
}

std::string scores_csv(const std::vector<ctree::concepts::PairAnalysis>& analyses) {
    std::string out = "pair,layer,value\n";
    for (const auto& a : analyses) {
        for (std::size_t l = 0; l < a.scores.size(); ++l) {
            out += a.pair_label + "," + std::to_string(l) + "," + ctree::analysis::format_number(a.scores[l]) + "\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------

struct ToyFlags {
    std::uint64_t seed = 7;
    std::size_t layers = 6;
    std::size_t dim = 32;
    std::size_t heads = 4;
    std::size_t vocab = 64;
    bool mlp = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--seed", seed, "toy model seed")->capture_default_str();
        cmd->add_option("--layers", layers, "toy model layers")->capture_default_str();
        cmd->add_option("--dim", dim, "toy model width")->capture_default_str();
        cmd->add_option("--heads", heads, "toy model attention heads")->capture_default_str();
        cmd->add_option("--vocab", vocab, "toy model vocabulary size")->capture_default_str();
        cmd->add_flag("--mlp", mlp, "add an MLP block after attention");
    }

    [[nodiscard]] ctree::toy::ToyConfig config() const {
        ctree::toy::ToyConfig c{layers, dim, heads, vocab, seed, mlp};
        c.validate();
        return c;
    }
};

int cmd_toy_demo(const ToyFlags& toy, const AnalysisFlags& af, const std::string& dtype, const std::string& out_dir) {
    const auto params = af.params();
    const auto model = ctree::toy::init_seeded(toy.config());

    const std::string base_text = "the city mayor made bus rides free for everyone";
    const std::vector<std::pair<std::string, std::string>> edits{{"free", "expensive"}, {"mayor", "citizen"}};
    const auto words = ctree::text::tokenize(base_text);

    std::vector<ctree::toy::ToyInput> inputs;
    std::vector<ctree::tree::ConceptPairSpec> pairs;
    for (const auto& [orig, cf] : edits) {
        const auto idx = static_cast<std::size_t>(ctree::text::find_word(words, orig));
        const std::string cf_text = ctree::text::replace_token(base_text, words, idx, cf);
        inputs.push_back({"base_" + orig, ctree::toy::toy_token_ids(base_text, toy.vocab), idx, base_text});
        inputs.push_back({cf, ctree::toy::toy_token_ids(cf_text, toy.vocab), idx, cf_text});
        pairs.push_back({orig, cf, "base_" + orig, cf, idx});
    }
    const auto bundle = ctree::toy::make_toy_bundle(model, inputs, ctree::capture::parse_dtype(dtype));

    const fs::path dir(out_dir);
    ctree::capture::write_bundle(bundle, dir / "bundle");
    // analyze what was written, so the demo exercises the on-disk round trip
    const auto loaded = ctree::capture::read_bundle(dir / "bundle");

    write_output((dir / "pairs.json").string(), pairs_json(pairs).dump(2) + "\n");
    const auto run = run_tree(loaded, pairs, params, af.jobs);
    write_output((dir / "tree.json").string(), run.json.dump(2) + "\n");
    write_output((dir / "tree.dot").string(), ctree::tree::tree_to_dot(run.tree));
    write_output((dir / "scores.csv").string(), scores_csv(run.analyses));

    std::vector<ctree::analysis::LayerCurve> value_curves, delta_curves;
    for (const auto& p : pairs) {
        auto vc = ctree::analysis::value_similarity_curve(loaded, p.original_trace_label, p.counterfactual_trace_label);
        write_output((dir / ("value_similarity_" + p.counterfactual_token + ".csv")).string(),
                     ctree::analysis::curve_to_csv(vc));
        value_curves.push_back(std::move(vc));
        if (loaded.meta.n_layers >= 2) {
            auto dc = ctree::analysis::delta_h_alignment(loaded, p.original_trace_label, p.counterfactual_trace_label);
            write_output((dir / ("delta_h_" + p.counterfactual_token + ".csv")).string(),
                         ctree::analysis::curve_to_csv(dc));
            delta_curves.push_back(std::move(dc));
        }
    }
    write_output((dir / "value_similarity.csv").string(),
                 ctree::analysis::curve_to_csv(ctree::analysis::aggregate_curves(value_curves, "mean")));
    if (!delta_curves.empty()) {
        write_output((dir / "delta_h_alignment.csv").string(),
                     ctree::analysis::curve_to_csv(ctree::analysis::aggregate_curves(delta_curves, "mean")));
    } else {
        std::cerr << "note: single-layer model, delta-H alignment skipped\n";
    }
    std::cout << "toy demo written to " << dir.string() << "\n";
    return 0;
}

int cmd_tree(const std::string& bundle_path, const std::vector<std::string>& pair_args, const std::string& base,
             const AnalysisFlags& af, const std::string& format, const std::string& out) {
    const auto params = af.params();
    const auto bundle = ctree::capture::read_bundle(bundle_path);
    const auto pairs = parse_pairs(pair_args, base);
    const auto run = run_tree(bundle, pairs, params, af.jobs);
    if (format == "json") {
        write_output(out, run.json.dump(2) + "\n");
    } else if (format == "dot") {
        write_output(out, ctree::tree::tree_to_dot(run.tree));
    } else {
        write_output(out, scores_csv(run.analyses));
    }
    return 0;
}

int cmd_diagnostics(const std::string& bundle_path, const std::vector<std::string>& pair_args, const std::string& base,
                    const std::string& metric, const std::string& format, const std::string& out) {
    const auto bundle = ctree::capture::read_bundle(bundle_path);
    const auto pairs = parse_pairs(pair_args, base);
    check_pairs(bundle, pairs);
    std::vector<ctree::analysis::LayerCurve> curves;
    for (const auto& p : pairs) {
        curves.push_back(metric == "value" ? ctree::analysis::value_similarity_curve(bundle, p.original_trace_label,
                                                                                     p.counterfactual_trace_label)
                                           : ctree::analysis::delta_h_alignment(bundle, p.original_trace_label,
                                                                                p.counterfactual_trace_label));
    }
    const auto curve = curves.size() == 1 ? curves.front() : ctree::analysis::aggregate_curves(curves, "mean");
    for (auto l : curve.degenerate_layers) std::cerr << "note: layer " << l << " degenerate (zero-norm vector)\n";
    if (format == "csv") {
        write_output(out, ctree::analysis::curve_to_csv(curve));
    } else {
        ordered_json j;
        j["metric"] = metric;
        j["name"] = curve.name;
        j["values"] = curve.values;
        j["std"] = curve.std ? ordered_json(*curve.std) : nullptr;
        j["degenerate_layers"] = curve.degenerate_layers;
        write_output(out, j.dump(2) + "\n");
    }
    return 0;
}

ctree::analysis::CorrelationCase load_case(const std::string& arg) {
    ctree::analysis::CorrelationCase c;
    std::string path = arg;
    if (const auto eq = arg.find('='); eq != std::string::npos) {
        c.name = arg.substr(0, eq);
        path = arg.substr(eq + 1);
    } else {
        c.name = fs::path(arg).stem().string();
    }
    const std::string body = read_text(path);
    if (path.ends_with(".json")) {
        try {
            const auto j = nlohmann::json::parse(body);
            for (const auto& p : j.at("pairs")) {
                if (p.at("embedding_distance").is_null()) continue;
                ctree::analysis::Sample s;
                s.distance = p["embedding_distance"].get<double>();
                if (!p.at("branching_layer").is_null()) s.branching_layer = p["branching_layer"].get<std::size_t>();
                c.samples.push_back(s);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ctree::ParseError("case file '" + path + "': " + e.what());
        }
        return c;
    }
    std::istringstream in(body);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (lineno == 1 && line.rfind("distance", 0) == 0) continue;
        const auto comma = line.find(',');
        const std::string dist = line.substr(0, comma);
        const std::string layer = comma == std::string::npos ? "" : line.substr(comma + 1);
        ctree::analysis::Sample s;
        try {
            s.distance = std::stod(dist);
            if (!layer.empty() && layer != "NA" && layer != "none") s.branching_layer = std::stoul(layer);
        } catch (const std::exception&) {
            throw ctree::ParseError("case file '" + path + "' line " + std::to_string(lineno) + ": cannot parse '" +
                                    line + "'");
        }
        c.samples.push_back(s);
    }
    return c;
}

int cmd_correlate(const std::vector<std::string>& case_args, const std::string& out) {
    std::vector<ctree::analysis::CorrelationCase> cases;
    for (const auto& a : case_args) cases.push_back(load_case(a));
    const auto rows = ctree::analysis::correlation_report(cases);
    for (const auto& r : rows) {
        if (r.excluded) std::cerr << "note: case " << r.name << ": " << r.excluded << " inseparable pairs excluded\n";
        if (!r.result) std::cerr << "note: case " << r.name << ": " << r.note << "\n";
    }
    write_output(out, ctree::analysis::correlation_to_csv(rows));
    return 0;
}

int cmd_validate(const std::string& bundle_path) {
    const auto bundle = ctree::capture::read_bundle_unvalidated(bundle_path);
    const auto violations = ctree::capture::validate_bundle(bundle);
    for (const auto& v : violations) std::cout << ctree::capture::describe(v) << "\n";
    std::cout << violations.size() << " violations\n";
    return violations.empty() ? 0 : 1;
}

struct PipelineFlags {
    std::string text;
    std::string endpoint;
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "CTREE_LLM_API_KEY";
    std::string mock_endpoint;
    std::string bundle;
    double timeout = 60.0;
    int retries = 3;
};

int cmd_pipeline(const PipelineFlags& pf, const ToyFlags& toy, const AnalysisFlags& af, const std::string& out) {
    const auto params = af.params();
    std::unique_ptr<ctree::pipeline::ChatClient> client;
    if (!pf.mock_endpoint.empty()) {
        const auto j = nlohmann::json::parse(read_text(pf.mock_endpoint));
        const auto& replies = j.is_object() ? j.at("replies") : j;
        client = std::make_unique<ctree::pipeline::MockChatClient>(replies.get<std::vector<std::string>>());
    } else {
        if (pf.endpoint.empty()) throw ctree::ConfigError("pipeline needs --endpoint or --mock-endpoint");
        client = std::make_unique<ctree::pipeline::HttpChatClient>(
            ctree::pipeline::LlmEndpointConfig{pf.endpoint, pf.model, pf.api_key_env, pf.timeout, pf.retries});
    }
    std::unique_ptr<ctree::pipeline::CaptureSource> source;
    if (!pf.bundle.empty()) {
        source = std::make_unique<ctree::pipeline::BundleCaptureSource>(ctree::capture::read_bundle(pf.bundle));
    } else {
        source = std::make_unique<ctree::pipeline::ToyCaptureSource>(ctree::toy::init_seeded(toy.config()));
    }
    const auto report = ctree::pipeline::run_pipeline(pf.text, *client, *source, params, af.jobs);
    for (const auto& w : report.warnings) {
        std::cerr << "warning [" << ctree::pipeline::to_string(w.stage) << "]";
        if (w.pair) std::cerr << " " << *w.pair;
        std::cerr << ": " << w.message << "\n";
    }
    write_output(out, ctree::pipeline::report_to_json(report).dump(2) + "\n");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-tree analysis of transformer value-projection spectra"};
    app.require_subcommand(1);

    AnalysisFlags af;
    ToyFlags toy;
    std::string bundle, base = "base", format = "json", out, dtype = "f64", metric = "value";
    std::vector<std::string> pairs, cases;
    PipelineFlags pf;

    auto* demo = app.add_subcommand("toy-demo", "build a seeded toy bundle and run the full analysis");
    toy.add_to(demo);
    af.add_to(demo);
    demo->add_option("--dtype", dtype, "on-disk dtype for the bundle")->check(CLI::IsMember({"f32", "f64"}))->capture_default_str();
    demo->add_option("--out", out, "output directory")->required();

    auto* tree_cmd = app.add_subcommand("tree", "build a Concept Tree for counterfactual pairs");
    tree_cmd->add_option("--bundle", bundle, "capture bundle directory")->required();
    tree_cmd->add_option("--pairs", pairs, "orig/cf@index or a pairs JSON file (repeatable)")->required();
    tree_cmd->add_option("--base", base, "trace label of the base text for inline pairs")->capture_default_str();
    af.add_to(tree_cmd);
    tree_cmd->add_option("--format", format, "output format")->check(CLI::IsMember({"json", "dot", "csv"}))->capture_default_str();
    tree_cmd->add_option("--out", out, "output file (default: stdout)");

    auto* diag = app.add_subcommand("diagnostics", "per-layer propagation curves for one or more pairs");
    diag->add_option("--bundle", bundle, "capture bundle directory")->required();
    diag->add_option("--pairs", pairs, "orig/cf@index or a pairs JSON file (repeatable)")->required();
    diag->add_option("--base", base, "trace label of the base text for inline pairs")->capture_default_str();
    diag->add_option("--metric", metric, "value: cos(v_A, v_B); delta-h: cos(dH_l, dH_l+1)")
        ->check(CLI::IsMember({"value", "delta-h"}))
        ->capture_default_str();
    std::string diag_format = "csv";
    diag->add_option("--format", diag_format, "output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
    diag->add_option("--out", out, "output file (default: stdout)");

    auto* corr = app.add_subcommand("correlate", "correlate embedding distance with branching layer");
    corr->add_option("cases", cases, "case files: CSV (distance,branching_layer) or tree JSON; name=path to rename")
        ->required();
    corr->add_option("--out", out, "output file (default: stdout)");

    auto* val = app.add_subcommand("validate", "check a capture bundle against its manifest");
    val->add_option("--bundle", bundle, "capture bundle directory")->required();

    auto* pipe = app.add_subcommand("pipeline", "LLM concept discovery followed by tree construction");
    pipe->add_option("--text", pf.text, "base text")->required();
    pipe->add_option("--endpoint", pf.endpoint, "chat-completion base URL, e.g. https://host/v1");
    pipe->add_option("--model", pf.model, "chat model name")->capture_default_str();
    pipe->add_option("--api-key-env", pf.api_key_env, "environment variable holding the API key")->capture_default_str();
    pipe->add_option("--mock-endpoint", pf.mock_endpoint, "JSON file of scripted replies instead of a live endpoint");
    pipe->add_option("--timeout", pf.timeout, "request timeout in seconds")->capture_default_str();
    pipe->add_option("--retries", pf.retries, "retries per request")->capture_default_str();
    pipe->add_option("--bundle", pf.bundle, "pre-exported bundle whose trace texts cover the inputs (default: toy model)");
    toy.add_to(pipe);
    af.add_to(pipe);
    pipe->add_option("--out", out, "report file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*demo) return cmd_toy_demo(toy, af, dtype, out);
        if (*tree_cmd) return cmd_tree(bundle, pairs, base, af, format, out);
        if (*diag) return cmd_diagnostics(bundle, pairs, base, metric, diag_format, out);
        if (*corr) return cmd_correlate(cases, out);
        if (*val) return cmd_validate(bundle);
        if (*pipe) return cmd_pipeline(pf, toy, af, out);
    } catch (const ctree::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
