#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <json.hpp>

#include "gfnlab/cli.hpp"
#include "gfnlab/util.hpp"

namespace fs = std::filesystem;
using gfn::read_file;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    int code = gfn::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("gfnlab_cli_" + std::to_string(std::rand()) + "_" +
                                            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

std::string golden(const std::string& name) { return read_file(std::string(GFNLAB_GOLDEN_DIR) + "/" + name); }

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST_CASE("sensitivity summary and report") {
    TempDir tmp;
    auto r = run({"sensitivity", "--graph", "tree:g=2,h=2", "--delta", "1", "--F", "1", "--split", "equal", "--out",
                  tmp / "r.csv"});
    CHECK(r.code == 0);
    CHECK(r.out.find("tv=0.250000 lower=0.250000 upper=0.375000 contained=true") != std::string::npos);
    CHECK(read_file(tmp / "r.csv") == golden("sensitivity_tree22.csv"));

    auto d = run({"sensitivity", "--graph", "tree:g=2,h=3", "--edge", "root:0", "--delta", "1.0", "--split",
                  "dirichlet:alpha=1", "--reps", "1000", "--seed", "7", "--out", tmp / "d.csv"});
    CHECK(d.code == 0);
    CHECK(read_file(tmp / "d.csv") == golden("sensitivity_dirichlet.csv"));

    auto c = run({"sensitivity", "--graph", "tree:g=2,h=2", "--split", "concentrated:leaf=3"});
    CHECK(c.out.find("tv=0.375000") != std::string::npos);
}

TEST_CASE("graph build round trip") {
    TempDir tmp;
    auto a = run({"graph", "build", "--kind", "tree", "--g", "2", "--h", "2", "--out", tmp / "t.json", "--dot",
                  tmp / "t.dot"});
    CHECK(a.code == 0);
    CHECK(a.out == "states=7 edges=6 terminals=4 depth=2\n");
    CHECK(read_file(tmp / "t.json") == golden("tree22.json"));
    CHECK(read_file(tmp / "t.dot") == golden("tree22.dot"));
    auto b = run({"graph", "build", "--in", tmp / "t.json", "--out", tmp / "u.json"});
    CHECK(b.code == 0);
    CHECK(read_file(tmp / "u.json") == read_file(tmp / "t.json"));

    CHECK(run({"graph", "build", "--kind", "set", "--d", "4", "--S", "2"}).out.rfind("states=11 ", 0) == 0);
    CHECK(run({"graph", "build", "--kind", "tree", "--g", "2"}).code == 2);
    CHECK(run({"graph", "build", "--kind", "cube"}).code == 2);
    CHECK(run({"graph", "build", "--in", tmp / "missing.json"}).code != 0);

    gfn::write_file_atomic(tmp / "cyc.json",
                           R"({"initial":0,"states":[{"id":0,"terminal":false},{"id":1,"terminal":false},{"id":2,"terminal":false},{"id":3,"terminal":true}],"edges":[[0,1],[1,2],[2,1],[2,3]]})");
    auto cyc = run({"graph", "build", "--in", tmp / "cyc.json"});
    CHECK(cyc.code == 2);
    CHECK(cyc.err.find("acycl") != std::string::npos);
}

TEST_CASE("usage errors exit 2") {
    auto r = run({"train", "--graph", "tree:g=2,h=2", "--bogus", "1"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--bogus") != std::string::npos);
    CHECK(r.err.find("Usage:") != std::string::npos);
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"train"}).code == 2);
    CHECK(run({"train", "--graph", "tree:g=2,h=2", "--loss", "xx"}).code == 2);
    CHECK(run({"train", "--graph", "tree:g=2,h=2", "--epochs", "-3"}).code == 2);
    CHECK(run({"sensitivity", "--graph", "tree:g=2,h=2", "--edge", "5-6"}).code == 2);
    CHECK(run({"stream", "--graph", "set:d=4,S=2"}).code == 2);
    CHECK(run({"diagnose", "fcs"}).code == 2);
    CHECK(run({"wl", "demo", "--target", "other", "--seeds", "1"}).code == 2);
    CHECK(run({"--threads", "0", "explore", "--graph", "tree:g=2,h=2"}).code == 2);
}

TEST_CASE("runtime errors exit 1") {
    auto r = run({"sensitivity", "--graph", "tree:g=2,h=2", "--out", "/nonexistent-dir/x/report.csv"});
    CHECK(r.code == 1);
    CHECK(r.err.rfind("error: ", 0) == 0);
}

TEST_CASE("version and help") {
    auto v = run({"--version"});
    CHECK(v.code == 0);
    CHECK(v.out.rfind("gfnlab ", 0) == 0);
    CHECK(v.out == gfn::cli::version_string() + "\n");
    auto h = run({"--help"});
    CHECK(h.code == 0);
    CHECK(h.out.find("sensitivity") != std::string::npos);
}

TEST_CASE("capacity guard from the environment") {
    ::setenv("GFNLAB_CAPACITY", "10", 1);
    auto r = run({"sensitivity", "--graph", "tree:g=2,h=4"});
    ::unsetenv("GFNLAB_CAPACITY");
    CHECK(r.code == 2);
    CHECK(r.err.find("capacity") != std::string::npos);
    CHECK(run({"sensitivity", "--graph", "tree:g=2,h=4"}).code == 0);
}

TEST_CASE("config files mirror flags") {
    TempDir tmp;
    gfn::write_file_atomic(tmp / "c.json", R"({"graph": "tree:g=2,h=2", "delta": 1, "split": "concentrated:leaf=3"})");
    auto a = run({"sensitivity", "--config", tmp / "c.json"});
    CHECK(a.code == 0);
    CHECK(a.out.find("tv=0.375000") != std::string::npos);
    // Flags take precedence.
    auto b = run({"sensitivity", "--config", tmp / "c.json", "--split", "equal"});
    CHECK(b.out.find("tv=0.250000") != std::string::npos);

    gfn::write_file_atomic(tmp / "bad.json", R"({"graph": "tree:g=2,h=2", "epochs": 5})");
    auto bad = run({"sensitivity", "--config", tmp / "bad.json"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("unknown config key 'epochs'") != std::string::npos);

    gfn::write_file_atomic(tmp / "arr.json", R"([1, 2])");
    CHECK(run({"sensitivity", "--config", tmp / "arr.json"}).code == 2);
    gfn::write_file_atomic(tmp / "broken.json", "{");
    CHECK(run({"sensitivity", "--config", tmp / "broken.json"}).code == 2);

    gfn::write_file_atomic(tmp / "chunks.json", R"({"graph": "set:d=4,S=2", "epochs-per-chunk": 20, "synthetic": 1})");
    CHECK(run({"stream", "--config", tmp / "chunks.json"}).code == 0);
}

TEST_CASE("train outputs are reproducible") {
    TempDir tmp;
    std::vector<std::string> args{"train", "--graph", "set:d=5,S=3", "--target", "product:seed=1,alpha=1.0", "--loss",
                                  "db", "--epochs", "60", "--eval-every", "20", "--lr", "1e-2", "--seed", "4"};
    auto with = [&](const std::string& tag) {
        auto a = args;
        for (std::string f : {"trace", "snapshot", "dist"}) {
            a.push_back("--" + f);
            a.push_back(tmp / (tag + f));
        }
        return a;
    };
    auto r1 = run(with("a"));
    auto r2 = run(with("b"));
    CHECK(r1.code == 0);
    CHECK(r1.out == r2.out);
    for (std::string f : {"trace", "snapshot", "dist"}) CHECK(read_file(tmp / ("a" + f)) == read_file(tmp / ("b" + f)));
    std::string trace = read_file(tmp / "atrace");
    CHECK(first_line(trace) == "epoch,loss,tv,fcs_mean");
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 5);  // header + epochs 0, 19, 39, 59
    CHECK(first_line(read_file(tmp / "adist")) == "terminal_id,p_model,p_target,abs_diff");
    auto snap = nlohmann::json::parse(read_file(tmp / "asnapshot"));
    CHECK(snap["graph"] == "set:d=5,S=3");

    // The snapshot feeds the FCS diagnostic.
    auto f = run({"diagnose", "fcs", "--policy", tmp / "asnapshot", "--target", "product:seed=1,alpha=1.0", "-B", "4",
                  "-m", "200", "--confidence", "0.05", "--out", tmp / "f.json"});
    CHECK(f.code == 0);
    CHECK(f.out.rfind("B=4 m=200 mean=", 0) == 0);
    auto rep = nlohmann::json::parse(read_file(tmp / "f.json"));
    for (auto key : {"B", "m", "mode", "errors", "subsets", "mean", "confidence", "pac_bound"}) CHECK(rep.contains(key));
    CHECK(rep["errors"].size() == 200);
    double mean = rep["mean"];
    double pac = rep["pac_bound"];
    CHECK(pac == doctest::Approx(mean + std::sqrt(std::log(20.0) / 400.0)));

    auto imp = run({"diagnose", "fcs", "--policy", tmp / "asnapshot", "-B", "3", "-m", "20", "--mode", "importance:k=16",
                    "--out", tmp / "i.json"});
    CHECK(imp.code == 0);
    auto irep = nlohmann::json::parse(read_file(tmp / "i.json"));
    CHECK(irep["mode"] == "importance");
    CHECK(irep.contains("estimator_std_error"));
    CHECK(run({"diagnose", "fcs", "--policy", tmp / "asnapshot", "--mode", "fancy"}).code == 2);
}

TEST_CASE("stream with chunk files and audit") {
    TempDir tmp;
    gfn::write_file_atomic(tmp / "c1.json", R"({"t": 1, "loglik": {"3": -1.0, "4": 0.5, "5": 0.0, "6": -0.2}})");
    gfn::write_file_atomic(tmp / "c2.json", R"({"t": 2, "loglik": {"3": 0.3, "4": -0.5, "5": 0.1, "6": 0.0}})");
    std::vector<std::string> args{"stream", "--graph", "tree:g=2,h=2", "--chunks", tmp / "c1.json", tmp / "c2.json",
                                  "--update", "sb", "--epochs-per-chunk", "400", "--seed", "2", "--audit"};
    auto a1 = args, a2 = args;
    a1.push_back(tmp / "a1.csv");
    a2.push_back(tmp / "a2.csv");
    auto r = run(a1);
    CHECK(r.code == 0);
    CHECK(r.out.rfind("chunks=2 tv=", 0) == 0);
    CHECK(r.out.find("audits_hold=") != std::string::npos);
    run(a2);
    std::string audit = read_file(tmp / "a1.csv");
    CHECK(audit == read_file(tmp / "a2.csv"));
    CHECK(first_line(audit) == first_line(golden("audit_header.csv")));
    CHECK(std::count(audit.begin(), audit.end(), '\n') == 3);

    auto kl = run({"stream", "--graph", "tree:g=2,h=2", "--chunks", tmp / "c1.json", "--update", "kl:k=4",
                   "--epochs-per-chunk", "50", "--trace", tmp / "tr.csv"});
    CHECK(kl.code == 0);
    CHECK(first_line(read_file(tmp / "tr.csv")) == "chunk,epoch,loss,tv,fcs_mean");

    gfn::write_file_atomic(tmp / "short.json", R"({"t": 1, "loglik": {"3": -1.0}})");
    CHECK(run({"stream", "--graph", "tree:g=2,h=2", "--chunks", tmp / "short.json"}).code == 2);
    CHECK(run({"stream", "--graph", "tree:g=2,h=2", "--chunks", tmp / "c1.json", "--update", "kl:k=1"}).code == 2);
}

TEST_CASE("wl demo and explore outputs") {
    TempDir tmp;
    auto w = run({"wl", "demo", "--target", "homo", "--seeds", "2", "--epochs", "200", "--out", tmp / "wl.csv"});
    CHECK(w.code == 0);
    CHECK(w.out.rfind("target=homo floor=0.000000 ", 0) == 0);
    std::string csv = read_file(tmp / "wl.csv");
    CHECK(first_line(csv) == "mode,seed,final_tv,floor");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
    CHECK(csv.find("\ntied,0,") != std::string::npos);
    CHECK(csv.find("\nuntied,1,") != std::string::npos);

    auto e = run({"explore", "--graph", "tree:g=3,h=4", "--trials", "200", "--seed", "1", "--out", tmp / "cov.csv"});
    CHECK(e.code == 0);
    CHECK(e.out.find("violations=0") != std::string::npos);
    CHECK(read_file(tmp / "cov.csv") == golden("coverage_tree34.csv"));
    auto t4 = run({"--threads", "4", "explore", "--graph", "tree:g=3,h=4", "--trials", "200", "--seed", "1", "--out",
                   tmp / "cov4.csv"});
    CHECK(read_file(tmp / "cov4.csv") == golden("coverage_tree34.csv"));
}

TEST_CASE("binary exit codes") {
    std::string bin = GFNLAB_BINARY;
    CHECK(std::system((bin + " --version > /dev/null").c_str()) == 0);
    int code = std::system((bin + " train --no-such-flag > /dev/null 2>&1").c_str());
    CHECK(WEXITSTATUS(code) == 2);
    code = std::system((bin + " sensitivity --graph tree:g=2,h=2 | grep -q 'contained=true'").c_str());
    CHECK(WEXITSTATUS(code) == 0);
}
