#pragma once

#include "homog/eps_solver.hpp"
#include "homog/twoscale.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace homog {

struct GeometrySpec {
    // disk | ellipse | blob | empty
    std::string shape = "disk";
    int dim = 2;
    Vec center = pad(0.5, 0.5);
    double radius = 0.25;
    Vec semi_axes = pad(0.3, 0.2);
    double r0 = 0.25;
    std::vector<FourierMode> modes;
    // <= 0 selects reach / 2
    double tube_width = -1.0;
    // strictly decreasing
    std::vector<double> eps{0.125};
    Vec lo = Vec::Zero();
    Vec hi = pad(1, 1);

    std::shared_ptr<const ImplicitSurfaceCell> make_cell() const;
};

struct PhysicsSpec {
    double kappa1 = 1.0;
    double kappa2 = 1.0;
    double latent = 1.0;
    ProfileSpec f1, f2, theta1, theta2;
};

struct DiscretizationSpec {
    double dt = 0.05;
    int steps = 4;
    int motion_substeps = 2;
    int surface_samples = 32;
    int seed_offsets = 4;
    int max_cells = 16;
    int height_samples = 32;
    int hanzawa_points = 10000;
    int unfold_micro_n = 8;
    int macro_n = 16;
    int micro_n = 16;
    // cell tensors of the two-scale and sweep stages
    int cell_n = 32;
    CellScheme cell_scheme = CellScheme::Q1;
    // base mesh of the cell stage, which always uses the Q1 scheme
    int cell_check_n = 32;
    int geometry_samples = 48;
    int eps_m = 16;
    int identity_samples = 400;
    bool cache = false;
};

struct ToleranceSpec {
    double envelope = 1e-6;
    double weingarten = 1e-8;
    double height_residual = 1e-10;
    double height_bound = 1e-8;
    double fd_jacobian = 1e-5;
    double unfold_integral = 1e-12;
    double unfold_geometry = 1e-10;
    double kappa_empty = 1e-10;
    double symmetry = 1e-8;
    double mesh_change = 0.01;
    double ledger = 1e-8;
    double latent = 1e-6;
    double ratio = 0.8;
};

struct Scenario {
    std::string name;
    // motion | hanzawa | unfold | cell | twoscale | eps_sweep | full_pipeline
    std::string experiment;
    std::uint64_t seed = 1;
    std::string output;
    GeometrySpec geometry;
    VelocitySpec velocity;
    PhysicsSpec physics;
    DiscretizationSpec disc;
    ToleranceSpec tol;
    // > 0: negative control of the sweep with kappa1 scaled by this factor
    double control_kappa1_factor = 0.0;

    // throws ConfigInvalid with the path of the offending field
    static Scenario from_json(const nlohmann::json& j);
    static Scenario load(const std::string& path, std::string* raw = nullptr);
    nlohmann::json to_json() const;
    double t_end() const { return disc.dt * disc.steps; }
};

struct Certificate {
    std::string name;
    double value = 0.0;
    double tol = 0.0;
    bool pass = false;
    nlohmann::json to_json() const;
};

struct ScenarioResult {
    std::string dir;
    std::vector<Certificate> certificates;
    // cache statistics; logged, never written to the artifacts
    int cell_solves = 0;
    int cache_hits = 0;
    bool pass() const;
    const Certificate* find(const std::string& name) const;
};

struct RunOptions {
    // empty: scenario output field, else runs/<name>
    std::string out_dir;
    // null unless the scenario enables the cache
    CellCache* cache = nullptr;
    // progress lines on stdout
    bool verbose = false;
};

// Runs the stages of the experiment and writes reports, tables, snapshots and
// manifest.json into the output directory. Stage errors become failed
// certificates; outputs written so far are kept.
ScenarioResult run_scenario(const Scenario& sc, const std::string& config_text, const RunOptions& opt);
ScenarioResult run_scenario_file(const std::string& config_path, const RunOptions& opt);

struct VerifyReport {
    int files = 0;
    std::vector<std::string> mismatched;
    std::vector<std::string> missing;
    bool certificates_passed = false;
    bool ok() const { return mismatched.empty() && missing.empty(); }
};

// Recomputes the hashes listed in <dir>/manifest.json.
VerifyReport verify_artifacts(const std::string& dir);

// Solves and stores every effective tensor the two-scale stage will request.
int prewarm_cache(const Scenario& sc, CellCache& cache);

} // namespace homog
