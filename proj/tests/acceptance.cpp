#include "homog/scenario.hpp"
#include "homog/unfolding.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

using namespace homog;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::string kScenarios = SCENARIO_DIR;
fs::path g_root;
CellCache* g_cache = nullptr;

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

json report(const ScenarioResult& r, const std::string& stage) {
    return json::parse(slurp(fs::path(r.dir) / "reports" / (stage + ".json")));
}

// runs a bundled scenario, optionally as another experiment or with a patch
ScenarioResult run(const std::string& name, const std::string& experiment, const std::string& out,
                   const json& patch = json::object()) {
    std::string raw = slurp(kScenarios + "/" + name + ".json");
    json j = json::parse(raw);
    if (!experiment.empty()) j["experiment"] = experiment;
    j.merge_patch(patch);
    Scenario sc = Scenario::from_json(j);
    RunOptions opt;
    opt.out_dir = (g_root / out).string();
    opt.cache = g_cache;
    return run_scenario(sc, j.dump(), opt);
}

double value(const ScenarioResult& r, const std::string& cert, bool& found) {
    const Certificate* c = r.find(cert);
    if (!c) {
        found = false;
        return 0.0;
    }
    return c->value;
}

struct Check {
    bool pass = true;
    std::string detail;
    void le(const std::string& what, double v, double tol) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s%s=%.3g<=%.3g", detail.empty() ? "" : " ", what.c_str(), v, tol);
        detail += buf;
        if (!(v <= tol)) pass = false;
    }
    void gt(const std::string& what, double v, double tol) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s%s=%.3g>%.3g", detail.empty() ? "" : " ", what.c_str(), v, tol);
        detail += buf;
        if (!(v > tol)) pass = false;
    }
    void require(const std::string& what, bool ok) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : " ") + what;
        }
    }
};

int g_failed = 0;

void criterion(int id, const std::string& title, double budget_s, const std::function<void(Check&)>& body) {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    try {
        body(c);
    } catch (const std::exception& e) {
        c.pass = false;
        c.detail += std::string(" error: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    c.le("time_s", secs, budget_s);
    std::printf("%s %d %s: %s\n", c.pass ? "PASS" : "FAIL", id, title.c_str(), c.detail.c_str());
    std::fflush(stdout);
    if (!c.pass) ++g_failed;
}

std::vector<std::pair<std::string, std::string>> artifact_files(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).string(), slurp(e.path()));
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

int main(int argc, char** argv) {
    g_root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "homog_acceptance";
    fs::remove_all(g_root);
    fs::create_directories(g_root);
    CellCache cache((g_root / "cache").string());
    g_cache = &cache;

    criterion(1, "motion envelope on radial_disk", 30.0, [](Check& c) {
        ScenarioResult r = run("radial_disk", "motion", "c1");
        bool found = true;
        double v = value(r, "motion.eps0.125.envelope", found);
        c.require("missing envelope certificate", found);
        c.le("violation", v, 1e-6);
        json rep = report(r, "motion");
        c.gt("lv", rep["eps0.125"]["audit"]["l_v_measured"].get<double>(), 0.0);
    });

    criterion(2, "Weingarten bound for disk and ellipse cells", 5.0, [](Check& c) {
        auto disk = std::make_shared<ImplicitSurfaceCell>(make_disk(pad(0.5, 0.5), 0.25, 2));
        auto ell = std::make_shared<ImplicitSurfaceCell>(make_ellipse(pad(0.5, 0.5), pad(0.3, 0.2), 2));
        for (auto cell : {disk, ell})
            for (double eps : {0.25, 0.125}) {
                PeriodicDomain dom = tile(cell, eps, pad(0, 0), pad(1, 1));
                double sup = 0.0;
                for (const auto& s : dom.surface_samples(256))
                    sup = std::max(sup, spectral_norm(dom.weingarten(s.point), 2));
                double excess = sup - 1.0 / (2.0 * eps * cell->a());
                c.le(std::string(cell == disk ? "disk" : "ellipse") + "@" + std::to_string(eps).substr(0, 5) +
                         ".excess",
                     excess, 1e-8);
            }
    });

    ScenarioResult hz_disk, hz_ell;
    criterion(3, "height certificates on radial_disk and drift_ellipse", 60.0, [&](Check& c) {
        hz_disk = run("radial_disk", "hanzawa", "c3_disk");
        hz_ell = run("drift_ellipse", "hanzawa", "c3_ellipse");
        int n = 0;
        for (const ScenarioResult* r : {&hz_disk, &hz_ell}) {
            const json rep = report(*r, "hanzawa");
            for (const auto& [k, v] : rep.items()) {
                const json& cert = v["certificate"];
                c.require(k + " horizon incomplete", v["failure"].get<std::string>().empty());
                c.le(k + ".residual", cert["max_residual"].get<double>(), 1e-10);
                c.le(k + ".slope", cert["max_slope"].get<double>(), -1.0 / 3.0);
                c.le(k + ".h_excess", v["h_bound_excess"].get<double>(), 1e-8);
                c.le(k + ".estimate", cert["height_estimate"].get<double>(), 0.5);
                ++n;
            }
        }
        c.require("fewer than two scenarios", n >= 2);
    });

    criterion(4, "Hanzawa bounds on 10^4 tube points", 30.0, [&](Check& c) {
        int n = 0;
        for (const ScenarioResult* r : {&hz_disk, &hz_ell}) {
            const json rep = report(*r, "hanzawa");
            for (const auto& [k, v] : rep.items()) {
                const json& h = v["hanzawa"];
                c.require(k + " sample count", h["samples"].get<int>() >= 10000);
                c.le(k + ".ds", h["sup_ds"].get<double>(), 2.0);
                c.le(k + ".ds_inv", h["sup_ds_inverse"].get<double>(), 2.0);
                c.gt(k + ".det", h["min_det"].get<double>(), 0.0);
                c.le(k + ".fd", h["max_fd_error"].get<double>(), 1e-5);
                ++n;
            }
        }
        c.require("no Hanzawa reports", n > 0);
    });

    criterion(5, "unfolding identities", 10.0, [&](Check& c) {
        // identities only; the moving transformation is criterion 6
        ScenarioResult r = run("drift_ellipse", "unfold", "c5", {{"velocity", {{"family", "zero"}}}});
        json rep = report(r, "unfold");
        double vol = 0, surf = 0, geo = 0;
        for (const auto& [k, v] : rep.items()) {
            if (k == "ds_distances") continue;
            vol = std::max(vol, v["volume_identity"]["relative_error"].get<double>());
            surf = std::max(surf, v["surface_identity"]["relative_error"].get<double>());
            for (const char* f : {"normal", "lambda", "weingarten", "projection", "projection_jacobian"})
                geo = std::max(geo, v["geometric_identities"][f].get<double>());
        }
        c.le("volume", vol, 1e-12);
        c.le("surface", surf, 1e-12);
        c.le("geometric", geo, 1e-10);
    });

    criterion(6, "unfolded Ds distances strictly decreasing", 300.0, [&](Check& c) {
        ScenarioResult r = run("drift_ellipse", "unfold", "c6");
        json tab = report(r, "unfold")["ds_distances"];
        std::vector<double> d;
        for (const auto& row : tab["rows"])
            if (row["successive"].get<bool>()) d.push_back(row["distance"].get<double>());
        c.require("fewer than two successive distances", d.size() >= 2);
        for (std::size_t i = 0; i < d.size(); ++i) {
            c.gt("d" + std::to_string(i), d[i], i + 1 < d.size() ? d[i + 1] : 0.0);
        }
    });

    criterion(7, "effective tensor", 120.0, [](Check& c) {
        ScenarioResult r = run("cell_disk", "", "c7");
        json rep = report(r, "cell");
        double dev = 0.0;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j)
                dev = std::max(dev, std::fabs(rep["empty"]["kappa"][i][j].get<double>() - (i == j ? 1.0 : 0.0)));
        c.le("empty", dev, 1e-10);
        const json& k = rep["tensor"]["kappa"];
        c.le("asym", std::fabs(k[0][1].get<double>() - k[1][0].get<double>()), 1e-8);
        auto lv = rep["levels"]["kappa_00"].get<std::vector<double>>();
        c.le("mesh_change", std::fabs(lv[2] - lv[1]) / lv[2], 0.01);
        c.require("no Richardson value", rep.contains("richardson"));
        char buf[96];
        std::snprintf(buf, sizeof buf, " richardson=%.6f rayleigh=%.6f", rep["richardson"].get<double>(),
                      rep["rayleigh"].get<double>());
        c.detail += buf;
    });

    criterion(8, "two-scale enthalpy ledger and latent heat", 300.0, [](Check& c) {
        ScenarioResult r = run("twoscale_balance", "", "c8");
        json rep = report(r, "twoscale");
        c.require("fewer than 100 steps", rep["steps"].get<int>() >= 100);
        c.le("ledger", rep["max_ledger_residual"].get<double>(), 1e-8);
        c.le("latent", rep["max_latent_error"].get<double>(), 1e-6);
    });

    criterion(9, "eps-problem converges to the homogenized problem", 900.0, [](Check& c) {
        ScenarioResult r = run("theorem4_sweep", "", "c9");
        json rep = report(r, "eps_sweep");
        const auto& rows = rep["errors"]["rows"];
        c.require("fewer than three eps", rows.size() >= 3);
        for (std::size_t i = 1; i < rows.size(); ++i) {
            c.le("r1_" + std::to_string(i), rows[i]["ratio_phase1"].get<double>(), 0.8);
            c.le("r2_" + std::to_string(i), rows[i]["ratio_phase2"].get<double>(), 0.8);
        }
        double lowest = 1e300;
        for (std::size_t i = 1; i < rep["control"]["rows"].size(); ++i) {
            const auto& row = rep["control"]["rows"][i];
            lowest = std::min({lowest, row["ratio_phase1"].get<double>(), row["ratio_phase2"].get<double>()});
        }
        c.gt("control_min_ratio", lowest, 0.8);
    });

    criterion(10, "full_pipeline runs are byte-identical", 900.0, [](Check& c) {
        ScenarioResult a = run("full_pipeline", "", "c10_a");
        ScenarioResult b = run("full_pipeline", "", "c10_b");
        auto fa = artifact_files(a.dir), fb = artifact_files(b.dir);
        c.require("file lists differ", fa.size() == fb.size());
        int differ = 0, compared = 0;
        for (std::size_t i = 0; i < std::min(fa.size(), fb.size()); ++i) {
            if (fa[i].first != fb[i].first || fa[i].second != fb[i].second) ++differ;
            ++compared;
        }
        c.le("differing_files", differ, 0);
        c.gt("files", compared, 10);
        c.require("pipeline certificates failed", a.pass());
    });

    return g_failed == 0 ? 0 : 1;
}
