#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "homog/scenario.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace homog;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kScenarios = SCENARIO_DIR;

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("homog_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json load(const std::string& name) { return json::parse(slurp(kScenarios + "/" + name + ".json")); }

void write(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

std::string config_error(const json& j) {
    try {
        Scenario::from_json(j);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConfigInvalid);
        return e.what();
    }
    return "";
}

struct Shell {
    int code;
    std::string out;
};

Shell cli(const std::string& args, const fs::path& cache) {
    fs::path log = cache.parent_path() / "cli.log";
    std::string cmd = "HOMOG_CACHE_DIR=" + cache.string() + " " + HOMOG_CLI + " " + args + " > " + log.string() +
                      " 2>&1";
    int st = std::system(cmd.c_str());
    return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, slurp(log)};
}

json small_twoscale() {
    json j = load("twoscale_balance");
    j["discretization"]["steps"] = 3;
    j["discretization"]["macro_n"] = 8;
    j["discretization"]["micro_n"] = 16;
    j["discretization"]["cell_n"] = 16;
    return j;
}

} // namespace

TEST_CASE("bundled scenarios parse and round-trip") {
    for (const char* n :
         {"null_motion", "radial_disk", "drift_ellipse", "cell_disk", "twoscale_balance", "theorem4_sweep",
          "full_pipeline"}) {
        Scenario s = Scenario::load(kScenarios + "/" + n + ".json");
        CHECK(s.name == n);
        json a = s.to_json();
        CHECK(Scenario::from_json(a).to_json() == a);
    }
}

TEST_CASE("schema violations name the offending field") {
    json base = load("radial_disk");
    json j = base;
    j["geometry"]["radus"] = 0.2;
    CHECK(config_error(j).find("geometry.radus: unknown key") != std::string::npos);
    j = base;
    j["geometry"]["eps"] = {0.25, 0.25};
    CHECK(config_error(j).find("geometry.eps[1]") != std::string::npos);
    j = base;
    j["tolerances"] = {{"ledger", -1e-8}};
    CHECK(config_error(j).find("tolerances.ledger: must be positive") != std::string::npos);
    j = base;
    j["experiment"] = "sweep";
    CHECK(config_error(j).find("experiment") != std::string::npos);
    j = base;
    j.erase("name");
    CHECK(config_error(j).find("name: required") != std::string::npos);
    j = base;
    j["discretization"]["steps"] = 2.5;
    CHECK(config_error(j).find("discretization.steps: expected an integer") != std::string::npos);
    j = base;
    j["physics"] = {{"theta1", {{"constnt", 1.0}}}};
    CHECK(config_error(j).find("physics.theta1.constnt: unknown key") != std::string::npos);
    j = base;
    j["velocity"]["speed"] = 1.0;
    CHECK(config_error(j).find("velocity.speed: unknown key") != std::string::npos);
    j = load("theorem4_sweep");
    j["geometry"]["eps"] = {0.25, 0.125};
    CHECK(config_error(j).find("geometry.eps") != std::string::npos);
}

TEST_CASE("null motion passes every certificate with zero heights") {
    fs::path dir = temp_dir("null");
    RunOptions opt;
    opt.out_dir = dir.string();
    ScenarioResult r = run_scenario_file(kScenarios + "/null_motion.json", opt);
    CHECK(r.pass());
    json rep = json::parse(slurp(dir / "reports/hanzawa.json"));
    for (const auto& [k, v] : rep.items()) {
        CHECK(v["certificate"]["max_residual"].get<double>() == 0.0);
        CHECK(v["hanzawa"]["max_fd_error"].get<double>() < 1e-10);
    }
    VerifyReport v = verify_artifacts(dir.string());
    CHECK(v.ok());
    CHECK(v.certificates_passed);
}

TEST_CASE("radial disk reproduces the closed-form heights") {
    fs::path dir = temp_dir("radial");
    RunOptions opt;
    opt.out_dir = dir.string();
    ScenarioResult r = run_scenario_file(kScenarios + "/radial_disk.json", opt);
    CHECK(r.pass());
    // heights eps A t on the snapshot
    json desc = json::parse(slurp(dir / "snapshots/height_eps0.125.json"));
    std::string bin = slurp(dir / "snapshots/height_eps0.125.bin");
    auto shape = desc["shape"].get<std::vector<std::size_t>>();
    REQUIRE(bin.size() == shape[0] * shape[1] * sizeof(double));
    const double* h = reinterpret_cast<const double*>(bin.data());
    auto times = desc["times"].get<std::vector<double>>();
    double err = 0.0;
    for (std::size_t k = 0; k < shape[0]; ++k)
        for (std::size_t i = 0; i < shape[1]; ++i) err = std::max(err, std::fabs(h[k * shape[1] + i] - 0.125 * 0.05 * times[k]));
    CHECK(err < 1e-8);
    CHECK(r.find("hanzawa.eps0.125.estimate")->value == doctest::Approx(0.4).epsilon(1e-6));
}

TEST_CASE("identical config gives byte-identical artifacts") {
    fs::path a = temp_dir("det_a"), b = temp_dir("det_b");
    json j = load("radial_disk");
    j["experiment"] = "motion";
    fs::path cfg = a.parent_path() / "homog_cli_det.json";
    write(cfg, j);
    RunOptions oa, ob;
    oa.out_dir = a.string();
    ob.out_dir = b.string();
    run_scenario_file(cfg.string(), oa);
    run_scenario_file(cfg.string(), ob);
    int n = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        fs::path rel = fs::relative(e.path(), a);
        CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
        ++n;
    }
    CHECK(n > 3);
    json m = json::parse(slurp(a / "manifest.json"));
    CHECK(m["files"].size() == static_cast<std::size_t>(n - 1));
    CHECK(m["config_sha256"] == sha256_hex(slurp(cfg)));
    CHECK(m["seed"] == 11);
}

TEST_CASE("command line exit codes") {
    fs::path root = temp_dir("exit");
    fs::path cache = root / "cache";
    json bad = load("radial_disk");
    bad["geometry"]["radus"] = 0.2;
    write(root / "bad.json", bad);
    Shell s = cli("run " + (root / "bad.json").string(), cache);
    CHECK(s.code == 3);
    CHECK(s.out.find("geometry.radus") != std::string::npos);
    CHECK(cli("run " + (root / "missing.json").string(), cache).code == 3);

    s = cli("run " + kScenarios + "/null_motion.json --out " + (root / "null").string(), cache);
    CHECK(s.code == 0);
    CHECK(cli("verify " + (root / "null").string(), cache).code == 0);
    {
        std::ofstream f(root / "null/reports/hanzawa.json", std::ios::app);
        f << " ";
    }
    s = cli("verify " + (root / "null").string(), cache);
    CHECK(s.code == 2);
    CHECK(s.out.find("hash mismatch reports/hanzawa.json") != std::string::npos);

    // an unattainable tolerance fails, keeping the partial outputs
    json strict = load("radial_disk");
    strict["tolerances"] = {{"fd_jacobian", 1e-14}};
    write(root / "strict.json", strict);
    s = cli("run " + (root / "strict.json").string() + " --out " + (root / "strict").string(), cache);
    CHECK(s.code == 2);
    CHECK(fs::exists(root / "strict/manifest.json"));
    CHECK(fs::exists(root / "strict/reports/hanzawa.json"));
    CHECK(cli("verify " + (root / "strict").string(), cache).code == 2);
}

TEST_CASE("cache list, prewarm, rerun and purge") {
    fs::path root = temp_dir("cache");
    fs::path cache = root / "cache";
    Shell s = cli("cache list", cache);
    CHECK(s.code == 0);
    CHECK(s.out == "key,mesh_n,kappa_00,kappa_11\n");

    write(root / "ts.json", small_twoscale());
    s = cli("cache prewarm " + (root / "ts.json").string(), cache);
    CHECK(s.code == 0);
    CHECK(s.out.find("cell solves: 0") == std::string::npos);
    s = cli("run " + (root / "ts.json").string() + " --out " + (root / "out").string() + " --quiet", cache);
    CHECK(s.code == 0);
    CHECK(s.out.find("cell solves: 0,") != std::string::npos);

    // a corrupted entry is quarantined and solved again
    CellCache cc(cache.string());
    auto entries = cc.list();
    REQUIRE(!entries.empty());
    {
        std::fstream f(cache / entries[0].key / "correctors.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(64);
        char c = 0x33;
        f.write(&c, 1);
    }
    s = cli("run " + (root / "ts.json").string() + " --out " + (root / "out2").string() + " --quiet", cache);
    CHECK(s.code == 0);
    CHECK(s.out.find("cell solves: 1,") != std::string::npos);
    CHECK(fs::exists(cache / "quarantine"));
    // the cached and re-solved runs agree byte for byte
    CHECK(slurp(root / "out/tables/twoscale_ledger.csv") == slurp(root / "out2/tables/twoscale_ledger.csv"));

    s = cli("cache purge", cache);
    CHECK(s.code == 0);
    CHECK(cli("cache purge", cache).out == "removed 0 entries\n");
    CHECK(cli("cache list", cache).out == "key,mesh_n,kappa_00,kappa_11\n");
}
