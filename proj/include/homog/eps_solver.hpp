#pragma once

#include "homog/hanzawa.hpp"
#include "homog/twoscale.hpp"

#include <json.hpp>

#include <memory>
#include <string>
#include <vector>

namespace homog {

// Heat conduction in the eps-periodic medium: conductivity kappa1 in the
// matrix and eps^2 kappa2 in the inclusions, Stefan source L eps v on Gamma_eps.
// With a Hanzawa map the problem is solved on the reference geometry.
struct EpsProblem {
    std::shared_ptr<const PeriodicDomain> dom;
    // computational box; lo == hi selects the box of dom
    Vec lo = Vec::Zero();
    Vec hi = Vec::Zero();
    // null: static geometry
    std::shared_ptr<const HanzawaMap> map;
    std::shared_ptr<const VelocityField> velocity;
    double kappa1 = 1.0;
    double kappa2 = 1.0;
    double latent = 1.0;
    ProfileSpec f1, f2, theta1, theta2;
};

// Coefficients of the fixed-domain form
//   d/dt (J u) - div(J u F^-1 ds/dt) - div(kappa A grad u) = J f
// with F = Ds, J = det F, A = J F^-1 F^-T.
struct PullbackCoefficients {
    double J = 1.0;
    Mat F = Mat::Identity();
    Mat F_inv = Mat::Identity();
    Mat A = Mat::Identity();
    Vec w = Vec::Zero();
};

// Tiling of [lo, hi] in which every cell of the box carries an inclusion.
std::shared_ptr<const PeriodicDomain> covering_domain(std::shared_ptr<const ImplicitSurfaceCell> cell, double eps,
                                                      const Vec& lo, const Vec& hi);

// throws BoundViolated when |Ds| > 2 or |Ds^-1| > 2
PullbackCoefficients assemble_pullback(const EpsProblem& p, double t, const Vec& x);

struct EpsConfig {
    // grid points per cell and direction
    int m = 16;
    double dt = 0.01;
    int steps = 10;
    // interface quadrature points per cell
    int surface_samples = 64;
};

struct EpsLedgerRow {
    int step = 0;
    double t = 0.0;
    double energy = 0.0;
    double sources = 0.0;
    double latent = 0.0;
    // int over Gamma_eps(t) of the surface element
    double interface_measure = 0.0;
    double residual = 0.0;
    double solver_residual = 0.0;
};

// Cell-centred finite volumes with h = eps / m. Faces carry the series
// conductance of the phases met along the segment between the two nodes.
class EpsSolver {
public:
    EpsSolver(EpsProblem problem, EpsConfig cfg);

    const EpsProblem& problem() const { return pb_; }
    const EpsConfig& config() const { return cfg_; }
    int dim() const { return d_; }
    double h() const { return h_; }
    int nodes() const { return static_cast<int>(theta_.size()); }
    Vec node_point(int i) const;
    double time() const { return t_; }
    const std::vector<double>& theta() const { return theta_; }
    const std::vector<double>& jacobian() const { return jac_; }
    // phase volumes of each node's control volume (reference geometry)
    const std::vector<double>& phase1_volume() const { return vol1_; }
    const std::vector<double>& phase2_volume() const { return vol2_; }

    double energy() const;
    // int_0^t kappa_eps |grad theta|^2 accumulated so far
    double dissipation() const { return dissipation_; }
    // sup_t |theta|^2_L2 + int kappa_eps |grad theta|^2
    double energy_quantity() const { return energy_quantity_; }

    EpsLedgerRow step();

    // per cell of dom.cells(): averages of 1_{phase i} theta over the cell
    void cell_averages(std::vector<double>& phase1, std::vector<double>& phase2) const;
    std::vector<Vec> cell_centers() const;

private:
    int flat(const std::array<int, 3>& ijk) const;

    EpsProblem pb_;
    EpsConfig cfg_;
    int d_ = 2;
    Vec lo_ = Vec::Zero(), hi_ = Vec::Zero();
    double h_ = 0.0;
    std::array<int, 3> n_{1, 1, 1};
    double t_ = 0.0;
    int step_ = 0;
    std::vector<double> theta_, jac_, vol1_, vol2_;
    // position in dom.cells() or -1
    std::vector<int> cell_of_node_;
    // faces: node pair, axis, inverse series resistance per unit A_nn
    struct Face {
        int p, q, axis;
        double resist;
    };
    std::vector<Face> faces_;
    // interface quadrature on the reference geometry
    std::vector<SurfaceSample> gamma_;
    std::vector<int> gamma_node_;
    double dissipation_ = 0.0;
    double energy_quantity_ = 0.0;
};

struct EpsRun {
    double eps = 0.0;
    std::vector<double> times;
    std::vector<Vec> centers;
    // [time][cell]
    std::vector<std::vector<double>> phase1, phase2;
    std::vector<EpsLedgerRow> ledger;
    double energy_quantity = 0.0;
    std::string failure;
    bool ok() const { return failure.empty(); }
};

EpsRun run_eps(EpsSolver& solver);

// The limit densities |Y1| theta and int_{Y2} theta2 sampled at the cell
// centres of dom, in the layout of an eps run.
EpsRun sample_homogenized(const TwoScaleSolver& ts, const TwoScaleRun& run, const PeriodicDomain& dom);

struct ErrorRow {
    double eps = 0.0;
    double err_phase1 = 0.0;
    double err_phase2 = 0.0;
    // err(eps_i) / err(eps_{i-1}); 0 on the first row
    double ratio_phase1 = 0.0;
    double ratio_phase2 = 0.0;
    double energy_quantity = 0.0;
};

struct ErrorTable {
    std::vector<ErrorRow> rows;
    bool decreasing_phase1 = false;
    bool decreasing_phase2 = false;
    double max_ratio() const;
    nlohmann::json to_json() const;
    void write_csv(const std::string& path) const;
};

// L2(S x Omega) distances between eps cell averages and the limit densities.
// Needs at least three eps values in strictly decreasing order and identical
// time grids; throws GridMismatch otherwise.
ErrorTable compare_to_homogenized(const std::vector<EpsRun>& runs, const TwoScaleSolver& ts, const TwoScaleRun& tr);

} // namespace homog
