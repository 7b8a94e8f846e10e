#pragma once

#include "homog/cell.hpp"
#include "homog/motion.hpp"

#include <Eigen/SparseCholesky>
#include <json.hpp>

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace homog {

// c + a cos(k pi (x_0 - lo_0) / (hi_0 - lo_0)); constant on the cell.
struct ProfileSpec {
    double constant = 0.0;
    double amplitude = 0.0;
    int mode = 1;
    double eval(const Vec& x, const Vec& lo, const Vec& hi) const;
    nlohmann::json to_json() const;
    static ProfileSpec from_json(const nlohmann::json& j, const std::string& path);
};

// Spatial part 1 + beta prod sin(2 pi (x_i - lo_i) / L_i) of the macro modulation.
double macro_space_factor(const VelocitySpec& spec, const Vec& lo, const Vec& hi, int dim, const Vec& x);

// The limit interface velocity A M(t,x) w(y) separates in time, so the cell
// geometry at (t,x) is an autonomous flow of w evaluated at the pseudo-time
// S(t,x) = A (1 + beta P(x)) (t + tau t^2 / 2). The flow is traced once per
// sign with the motion module at eps = 1.
class MicroGeometry {
public:
    MicroGeometry(std::shared_ptr<const ImplicitSurfaceCell> cell, const VelocitySpec& spec, double s_max, int samples,
                  double ds = 0.0, double min_radius = 0.02);

    static double pseudo_time(const VelocitySpec& spec, const Vec& lo, const Vec& hi, double t, const Vec& x);

    double s_max() const { return s_max_; }
    const ImplicitSurfaceCell& cell() const { return *cell_; }
    // throws MinRadiusReached or InclusionEscape
    std::shared_ptr<const StarInclusion> at(double S) const;
    // interface points at pseudo-time S
    std::vector<Vec> points(double S) const;
    // sup of the interface displacement relative to the tube width a
    double displacement_ratio(double S) const;
    // w(y) for unit amplitude: micro modulation times the tube cutoff
    double unit_velocity(const Vec& y) const;

private:
    struct Branch {
        std::shared_ptr<const Motion> motion;
        // traj[sample][k]
        std::vector<std::vector<MotionPoint>> traj;
    };
    const Branch& branch(int sign) const;

    std::shared_ptr<const ImplicitSurfaceCell> cell_;
    VelocitySpec spec_;
    double s_max_, ds_, min_radius_;
    std::vector<Vec> seeds_;
    std::shared_ptr<const PeriodicDomain> dom_;
    std::shared_ptr<const VelocityField> unit_;
    mutable std::mutex mu_;
    mutable std::unique_ptr<Branch> plus_, minus_;
    mutable std::map<double, std::shared_ptr<const StarInclusion>> memo_;
};

// Implicit Euler for d/dt theta2 - kappa2 Lap theta2 = f2 in the inclusion on
// the cell-centred m x m grid, theta2 = g on Gamma. Faces cut by Gamma use
// the Dirichlet value at the crossing. Linear in g: theta2 = u0 + g u1.
class MicroHeat {
public:
    MicroHeat(std::shared_ptr<const Inclusion> inc, int m, double dt, double kappa2);

    int m() const { return m_; }
    int unknowns() const { return n_; }
    // grid node -> unknown index or -1
    const std::vector<int>& index() const { return idx_; }
    Vec node(int i) const;
    const Inclusion& inclusion() const { return *inc_; }
    // exact |Y2|
    double volume() const { return vol_; }
    // phase-2 volume inside the control volume of each grid node (sums to |Y2|)
    const std::vector<double>& fractions() const { return frac_; }

    struct Response {
        std::vector<double> u0;
        double a0 = 0.0;
        double residual = 0.0;
    };
    // old and f are full-grid values; old must be finite on the unknowns
    Response solve(const std::vector<double>& old, const std::vector<double>& f) const;
    const std::vector<double>& u1() const { return u1_; }
    double a1() const { return a1_; }
    // full-grid theta2 (NaN outside) for the boundary value g
    std::vector<double> combine(const Response& r, double g) const;
    // int_{Y2} theta2: unknowns weighted by their phase-2 volume, g elsewhere
    double mass(const std::vector<double>& full, double g) const;
    // grad theta2 at y by bilinear interpolation with g outside
    Vec gradient(const std::vector<double>& full, double g, const Vec& y) const;

private:
    using Factor = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;

    std::shared_ptr<const Inclusion> inc_;
    int m_, n_ = 0;
    double h_, dt_, k2_, vol_ = 0.0;
    std::vector<int> idx_, node_of_;
    std::vector<double> frac_;
    Eigen::VectorXd bnd_;
    Eigen::SparseMatrix<double> a_;
    std::shared_ptr<Factor> ldlt_;
    std::vector<double> u1_;
    double a1_ = 0.0;
};

enum class Coupling { Monolithic, Staggered };

struct TwoScaleConfig {
    std::shared_ptr<const ImplicitSurfaceCell> cell;
    VelocitySpec velocity;
    Vec lo = Vec::Zero();
    Vec hi = Vec::Ones();
    int macro_n = 16;
    int micro_n = 32;
    int cell_n = 32;
    CellScheme cell_scheme = CellScheme::Q1;
    int geometry_samples = 48;
    double dt = 0.01;
    int steps = 10;
    double kappa1 = 1.0;
    double kappa2 = 1.0;
    double latent = 1.0;
    ProfileSpec f1, f2, theta1, theta2;
    Coupling coupling = Coupling::Monolithic;
    // recompute kappa^h once the interface moved this far
    double refresh_tol = 1e-3;
    double min_radius = 0.02;
    CellCache* cache = nullptr;
};

struct MicroNode {
    double S = 0.0;
    std::shared_ptr<const Inclusion> inclusion;
    std::vector<double> theta2;
    double y2 = 0.0;
    double m2 = 0.0;
    double perimeter = 0.0;
    double v_gamma = 0.0;
    Mat kappa = Mat::Zero();
    std::shared_ptr<const Inclusion> kappa_geometry;
};

struct TwoScaleState {
    double t = 0.0;
    int step = 0;
    std::vector<double> theta;
    std::vector<MicroNode> micro;
};

struct LedgerRow {
    int step = 0;
    double t = 0.0;
    double mean_theta = 0.0;
    double enthalpy = 0.0;
    double sources = 0.0;
    double latent = 0.0;
    // L dt int of v over Gamma, trapezoid in time
    double latent_expected = 0.0;
    double interface_flux = 0.0;
    double residual = 0.0;
    double interface_mean = 0.0;
    double kappa_trace_mean = 0.0;
    double y2_mean = 0.0;
    int cell_solves = 0;
    double solver_residual = 0.0;
};

class TwoScaleSolver {
public:
    explicit TwoScaleSolver(TwoScaleConfig cfg);

    const TwoScaleConfig& config() const { return cfg_; }
    const TwoScaleState& state() const { return st_; }
    int macro_nodes() const { return static_cast<int>(x_.size()); }
    const Vec& macro_point(int i) const { return x_[i]; }
    const std::vector<double>& weights() const { return w_; }
    double enthalpy() const;
    int cell_solves() const { return cell_solves_; }

    // geometry -> tensor -> micro -> macro
    LedgerRow step();
    // Q1 interpolation of a vertex field
    double interpolate(const std::vector<double>& f, const Vec& x) const;
    // |Y1| theta and int_{Y2} theta2 at the vertices
    std::vector<double> phase1_density() const;
    std::vector<double> phase2_density() const;

    // evolve_micro_geometry: cells at time t; throws on guarded stops
    void evolve_micro_geometry(double t);
    // implicit Euler macro step with the given mass diagonal and right-hand side
    std::vector<double> step_macro(const std::vector<double>& mass, const std::vector<double>& rhs, double* res) const;

private:
    void refresh_tensors();
    std::shared_ptr<const MicroHeat> micro_system(const std::shared_ptr<const Inclusion>& inc);

    TwoScaleConfig cfg_;
    int nx_ = 0, ny_ = 0;
    double hx_ = 0.0, hy_ = 0.0;
    std::vector<Vec> x_;
    std::vector<double> w_;
    std::unique_ptr<MicroGeometry> geo_;
    TwoScaleState st_;
    int cell_solves_ = 0;
    std::map<const Inclusion*, std::shared_ptr<const MicroHeat>> systems_;
    // int_Gamma w dsigma per geometry
    std::map<const Inclusion*, double> unit_flux_;
};

struct TwoScaleRun {
    std::vector<LedgerRow> ledger;
    // phase densities at every step (including t = 0)
    std::vector<double> times;
    std::vector<std::vector<double>> phase1, phase2;
    std::string failure;
    ErrorKind failure_kind = ErrorKind::CertificateFailed;
    bool ok() const { return failure.empty(); }
};

// runs cfg.steps steps; stops at the first error and keeps the partial series
TwoScaleRun run_two_scale(TwoScaleSolver& solver);

void write_ledger_csv(const std::string& path, const std::vector<LedgerRow>& rows);

} // namespace homog
