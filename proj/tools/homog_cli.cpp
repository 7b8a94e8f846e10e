#include "homog/scenario.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

using namespace homog;

namespace {

constexpr int kPass = 0;
constexpr int kCertificateFailed = 2;
constexpr int kConfigError = 3;

int run(const std::string& config, const std::string& out, bool quiet) {
    CellCache cache(CellCache::default_root());
    RunOptions opt;
    opt.out_dir = out;
    opt.cache = &cache;
    opt.verbose = !quiet;
    ScenarioResult r = run_scenario_file(config, opt);
    int failed = 0;
    for (const auto& c : r.certificates) failed += !c.pass;
    std::printf("cell solves: %d, cache hits: %d\n", r.cell_solves, r.cache_hits);
    std::printf("%s: %zu certificates, %d failed\n", r.dir.c_str(), r.certificates.size(), failed);
    return r.pass() ? kPass : kCertificateFailed;
}

int verify(const std::string& dir) {
    VerifyReport v = verify_artifacts(dir);
    for (const auto& f : v.missing) std::printf("missing %s\n", f.c_str());
    for (const auto& f : v.mismatched) std::printf("hash mismatch %s\n", f.c_str());
    std::printf("%d files checked, certificates %s\n", v.files, v.certificates_passed ? "passed" : "failed");
    return v.ok() && v.certificates_passed ? kPass : kCertificateFailed;
}

int cache_cmd(const std::string& action, const std::string& config) {
    CellCache cache(CellCache::default_root());
    if (action == "list") {
        auto entries = cache.list();
        std::printf("key,mesh_n,kappa_00,kappa_11\n");
        for (const auto& e : entries) {
            const auto& k = e.info.contains("kappa") ? e.info["kappa"] : nlohmann::json::array();
            std::printf("%s,%s,%s,%s\n", e.key.c_str(), e.info.value("mesh_n", nlohmann::json()).dump().c_str(),
                        k.size() > 0 && k[0].size() > 0 ? k[0][0].dump().c_str() : "",
                        k.size() > 1 && k[1].size() > 1 ? k[1][1].dump().c_str() : "");
        }
        return kPass;
    }
    if (action == "purge") {
        std::printf("removed %d entries\n", cache.purge());
        return kPass;
    }
    if (config.empty()) throw Error(ErrorKind::ConfigInvalid, "cache prewarm: a config path is required");
    int solves = prewarm_cache(Scenario::load(config), cache);
    std::printf("cell solves: %d\n", solves);
    return kPass;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-scale heat conduction with evolving microstructure"};
    app.require_subcommand(1);

    std::string config, out, dir, action, cache_config;
    bool quiet = false;
    auto* run_cmd = app.add_subcommand("run", "run a scenario and write its artifacts");
    run_cmd->add_option("config", config, "scenario JSON")->required();
    run_cmd->add_option("--out", out, "output directory");
    run_cmd->add_flag("--quiet", quiet, "only print the summary");
    auto* verify_cmd = app.add_subcommand("verify", "recompute the manifest hashes of an artifact directory");
    verify_cmd->add_option("dir", dir, "artifact directory")->required();
    auto* cache = app.add_subcommand("cache", "effective-tensor cache (root from HOMOG_CACHE_DIR)");
    cache->add_option("action", action, "list, purge or prewarm")
        ->required()
        ->check(CLI::IsMember({"list", "purge", "prewarm"}));
    cache->add_option("config", cache_config, "scenario JSON for prewarm");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kConfigError;
    }

    try {
        if (*run_cmd) return run(config, out, quiet);
        if (*verify_cmd) return verify(dir);
        return cache_cmd(action, cache_config);
    } catch (const Error& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return e.kind() == ErrorKind::ConfigInvalid ? kConfigError : kCertificateFailed;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kCertificateFailed;
    }
}
