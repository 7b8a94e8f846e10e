#pragma once

#include "homog/geometry.hpp"

#include <json.hpp>

#include <atomic>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace homog {

// Inclusion Y^(2) inside the unit cell; phi < 0 inside.
class Inclusion {
public:
    virtual ~Inclusion() = default;
    virtual int dim() const = 0;
    virtual bool empty() const = 0;
    virtual double phi(const Vec& y) const = 0;
    virtual std::vector<SurfaceSample> surface_samples(int n) const = 0;
    // |Y^(2)|
    virtual double volume() const = 0;
    // int over Y^(2); star-shaped polar quadrature in 2D
    virtual double integrate_inside(const std::function<double(const Vec&)>& f) const = 0;
    // content key of the geometry
    virtual std::string key() const = 0;
};

class ShapeInclusion final : public Inclusion {
public:
    explicit ShapeInclusion(std::shared_ptr<const ImplicitSurfaceCell> cell) : cell_(std::move(cell)) {}
    int dim() const override { return cell_->dim(); }
    bool empty() const override { return cell_->empty(); }
    double phi(const Vec& y) const override { return cell_->shape().phi(y); }
    std::vector<SurfaceSample> surface_samples(int n) const override { return cell_->surface_samples(n); }
    double volume() const override;
    double integrate_inside(const std::function<double(const Vec&)>& f) const override;
    std::string key() const override;
    const ImplicitSurfaceCell& cell() const { return *cell_; }

private:
    std::shared_ptr<const ImplicitSurfaceCell> cell_;
};

// 2D inclusion {c + rho (cos t, sin t) : rho < R(t)} with R a trigonometric
// polynomial given by its values at m equispaced angles.
class StarInclusion final : public Inclusion {
public:
    StarInclusion(const Vec& center, std::vector<double> radii);
    // least-squares-free fit through points with arbitrary (distinct) angles
    static StarInclusion through_points(const Vec& center, const std::vector<Vec>& points);

    int dim() const override { return 2; }
    bool empty() const override { return false; }
    double phi(const Vec& y) const override;
    std::vector<SurfaceSample> surface_samples(int n) const override;
    double volume() const override;
    double integrate_inside(const std::function<double(const Vec&)>& f) const override;
    std::string key() const override;

    const Vec& center() const { return c_; }
    const std::vector<double>& radii() const { return r_; }
    double radius(double t, double* dr = nullptr) const;
    double min_radius() const;
    double max_radius() const;
    // boundary point and outward unit normal at angle t
    Vec point(double t) const;
    Vec normal(double t) const;
    // smallest distance from the boundary to the cell faces
    double clearance() const;

private:
    Vec c_;
    std::vector<double> r_;
    std::vector<double> coef_;
};

// Q1: conforming elements with sub-cell quadrature of the phase indicator.
// FiniteVolume: cell-centred five-point scheme, faces cut by the inclusion
// carry no flux; matches the discretization of the eps-resolved solver.
enum class CellScheme { Q1, FiniteVolume };

const char* to_string(CellScheme s);
CellScheme cell_scheme_from_string(const std::string& s);

// Fractions of the segment p -> q that lie in {phi < 0}, split at sign
// changes located by bisection; returns (length fraction outside, inside).
std::pair<double, double> segment_split(const std::function<double(const Vec&)>& phi, const Vec& p, const Vec& q,
                                        int probes = 8);
// first s in (0, 1] with a sign change of phi along p + s (q - p)
double first_crossing(const std::function<double(const Vec&)>& phi, const Vec& p, const Vec& q, int probes = 8);

struct CellState {
    std::shared_ptr<const Inclusion> inclusion;
    CellScheme scheme = CellScheme::Q1;
    double y1 = 1.0;
    double y2 = 0.0;
    int mesh_n = 32;
    nlohmann::json to_json() const;
};

// checks that the inclusion lies strictly inside the cell
CellState make_cell_state(std::shared_ptr<const Inclusion> inc, int mesh_n, CellScheme scheme = CellScheme::Q1);

// Finite-volume cell problem on the n^d cell-centred grid.
class CellFV {
public:
    CellFV(const Inclusion& inc, int n);
    int dim() const { return d_; }
    int n() const { return n_; }
    // volume of the phase-1 nodes
    double y1() const { return y1_; }
    std::vector<double> solve(int j, double* residual = nullptr) const;
    // sum over faces normal to e_i of c (dtau / h + delta_ij) h^d
    double flux(const std::vector<double>& tau, int j, int i) const;
    double energy(const std::vector<double>& tau, int j) const;

private:
    int neighbor(int node, int k) const;
    int d_, n_, nn_;
    double h_, y1_ = 0.0;
    std::vector<char> phase1_;
    // open[node * d + k]: face between node and node + e_k carries flux
    std::vector<char> open_;
};

// Q1 elements on the periodic n^d grid; element integrals over Y^(1) use
// 2^d Gauss points on each of sub^d subcells with the phase indicator.
class CellDiscretization {
public:
    CellDiscretization(const Inclusion& inc, int n, int sub = 4);
    int dim() const { return d_; }
    int n() const { return n_; }
    int nodes() const { return nn_; }
    double y1() const { return y1_; }
    // solves for the corrector tau_j; residual is |K tau - b|_inf / |b|_inf
    std::vector<double> solve(int j, double* residual = nullptr) const;
    // kappa1 int_{Y1} (grad tau_j + e_j) . e_i
    double flux(const std::vector<double>& tau, int j, int i) const;
    // int_{Y1} |grad tau_j + e_j|^2
    double energy(const std::vector<double>& tau, int j) const;
    // int_{Y1} tau
    double mean(const std::vector<double>& tau) const;
    // tau at a point (periodic Q1 interpolation)
    double eval(const std::vector<double>& tau, const Vec& y) const;

private:
    struct Element {
        std::vector<double> k;  // 2^d x 2^d stiffness over Y1
        std::vector<double> g;  // 2^d x d: int grad N_a . e_i over Y1
        std::vector<double> m;  // 2^d: int N_a over Y1
        double vol = 0.0;
    };
    int node_of(const std::array<int, 3>& idx) const;
    std::array<int, 3> element_node(int e, int a) const;

    int d_, n_, nn_, ne_, corners_;
    double y1_ = 0.0;
    std::vector<Element> el_;
};

struct EffectiveTensor {
    Mat kappa = Mat::Zero();
    int dim = 2;
    int mesh_n = 0;
    double kappa1 = 1.0;
    double y1 = 1.0;
    double residual = 0.0;
    std::vector<std::vector<double>> correctors;
    // relative change against the half-resolution mesh, negative if not computed
    double error_estimate = -1.0;
    std::string key;
    nlohmann::json to_json() const;
};

std::vector<double> solve_cell_problem(const CellState& cs, int j, double* residual = nullptr);
// throws MeshTooCoarse if estimate is set and the half-mesh change exceeds 5%
EffectiveTensor effective_tensor(const CellState& cs, double kappa1, bool estimate = false);

struct EffectiveSources {
    double f_h = 0.0;
    double theta_h = 0.0;
};

// cell integrals over Y^(1)
EffectiveSources effective_sources(const std::function<double(const Vec&)>& f1,
                                   const std::function<double(const Vec&)>& theta1_init, const CellState& cs);

struct InterfaceSource {
    double latent = 0.0;
    double flux = 0.0;
    // latent - flux: the heat released into the matrix phase
    double total = 0.0;
};

// L int_Gamma v and kappa2 int_Gamma grad theta2 . n over the given samples
InterfaceSource interface_source(const std::vector<SurfaceSample>& gamma, const std::function<double(const Vec&)>& v,
                                 const std::function<Vec(const Vec&)>& grad_theta2, double latent, double kappa2);

// Tensor cache: <root>/<sha256>/tensor.json and correctors.bin.
class CellCache {
public:
    explicit CellCache(std::string root);
    static std::string default_root();

    const std::string& root() const { return root_; }
    std::string key(const CellState& cs, double kappa1) const;
    // cache hit or a fresh solve that is then stored
    EffectiveTensor get(const CellState& cs, double kappa1);
    bool load(const std::string& key, EffectiveTensor& out);
    void store(const std::string& key, const EffectiveTensor& t);

    struct Entry {
        std::string key;
        nlohmann::json info;
    };
    std::vector<Entry> list() const;
    // returns the number of removed entries
    int purge();

    int solves() const { return solves_.load(); }
    int hits() const { return hits_.load(); }
    int quarantined() const { return quarantined_.load(); }

private:
    void quarantine(const std::string& key);

    std::string root_;
    std::mutex mu_;
    std::atomic<int> solves_{0}, hits_{0}, quarantined_{0};
};

// Rayleigh's formula for a square array of insulating disks with area fraction f
double rayleigh_square_array(double f);

} // namespace homog
