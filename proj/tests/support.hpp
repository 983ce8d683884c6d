#pragma once

// Shared helpers for the test binaries: seeded random data, scratch
// directories, file access and a CLI runner.

#include <ctree/ctree.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace testing_support {

namespace fs = std::filesystem;
using ctree::linalg::Matrix;
using ctree::linalg::Vector;

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& x : m.data()) x = dist(rng);
    return m;
}

inline Vector random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Vector v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

// rows x cols with rank at most r, as a product of random factors.
inline Matrix random_low_rank(std::mt19937_64& rng, std::size_t rows, std::size_t cols, std::size_t r) {
    return ctree::linalg::matmul(random_matrix(rng, rows, r), random_matrix(rng, r, cols));
}

// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static std::mt19937_64 rng(std::random_device{}());
        path_ = fs::temp_directory_path() / ("ctree_" + tag + "_" + std::to_string(rng()));
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    [[nodiscard]] const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void spit(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << s;
}

inline fs::path data_dir() { return fs::path(CTREE_TEST_DATA); }

struct RunResult {
    int status = -1;
    std::string out;
    std::string err;
};

inline std::string shell_quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) {
        if (c == '\'') {
            q += "'\\''";
        } else {
            q += c;
        }
    }
    return q + "'";
}

// Runs the ctree binary with the given arguments; stdout and stderr are
// captured separately through temp files.
inline RunResult run_cli(const std::vector<std::string>& args) {
    ScratchDir tmp("run");
    std::string cmd = shell_quote(CTREE_CLI);
    for (const auto& a : args) cmd += " " + shell_quote(a);
    cmd += " >" + shell_quote((tmp / "out").string()) + " 2>" + shell_quote((tmp / "err").string());
    const int raw = std::system(cmd.c_str());
    RunResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(tmp / "out");
    r.err = slurp(tmp / "err");
    return r;
}

// Bundle with hand-set weights and traces; every trace gets the same h_last
// unless overwritten.
inline ctree::capture::CaptureBundle hand_bundle(std::vector<Matrix> w_v) {
    ctree::capture::CaptureBundle b;
    b.meta.model_id = "hand";
    b.meta.n_layers = w_v.size();
    b.meta.d_model = w_v.front().rows();
    b.meta.value_out_dim = w_v.front().cols();
    b.meta.dtype = ctree::capture::DType::f64;
    b.w_v = std::move(w_v);
    return b;
}

inline ctree::capture::InputTrace hand_trace(const std::string& label, std::vector<Vector> v_last,
                                             std::vector<Vector> h_last) {
    ctree::capture::InputTrace t;
    t.label = label;
    t.text = label;
    t.token_count = 1;
    t.v_last = std::move(v_last);
    t.h_last = std::move(h_last);
    return t;
}

} // namespace testing_support
