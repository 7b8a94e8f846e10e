#pragma once

#include "homog/geometry.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace homog {

class HeightProvider;

// Writes `components` values of the field at x.
using FieldFn = std::function<void(const Vec& x, double* out)>;
// g(x, y) on Omega x Y
using TwoScaleFn = std::function<void(const Vec& x, const Vec& y, double* out)>;

// x = eps (k + frac), frac in [0,1)^d
std::pair<Index, Vec> int_frac(const Vec& x, double eps, int dim);

// Vertex values on a uniform grid over a box, evaluated by multilinear
// interpolation.
struct GridField {
    int dim = 2;
    int components = 1;
    Vec lo = Vec::Zero();
    Vec hi = Vec::Ones();
    std::array<int, 3> n{1, 1, 1};
    std::vector<double> values;

    static GridField sample(const FieldFn& f, int components, int dim, const Vec& lo, const Vec& hi, int n);
    double spacing(int i) const { return (hi(i) - lo(i)) / n[i]; }
    void eval(const Vec& x, double* out) const;
    FieldFn fn() const;
};

// T_eps f on the cells of the tiling, sampled at the midpoints of an m^d grid
// on Y. Values are stored [cell][micro point][component].
struct UnfoldedField {
    double eps = 0.0;
    int dim = 2;
    int micro_n = 0;
    int components = 1;
    std::vector<Index> cells;
    std::vector<double> values;

    int micro_count() const;
    Vec micro_point(int j) const;
    double at(std::size_t cell, int j, int c = 0) const {
        return values[(cell * micro_count() + j) * components + c];
    }
    // int_{Omega x Y} T_eps f, midpoint rule in y
    double integral(int c = 0) const;
};

UnfoldedField unfold_volume(const FieldFn& f, int components, const PeriodicDomain& dom, int micro_n);
// throws ResolutionTooCoarse if the grid is coarser than eps / micro_n
UnfoldedField unfold_volume(const GridField& f, const PeriodicDomain& dom, int micro_n);

struct UnfoldedSurface {
    double eps = 0.0;
    int dim = 2;
    int components = 1;
    std::vector<Index> cells;
    std::vector<SurfaceSample> samples;
    std::vector<double> values;
    // int_{Omega x Gamma} T_eps f_b
    double integral(int c = 0) const;
};

UnfoldedSurface unfold_surface(const FieldFn& fb, int components, const PeriodicDomain& dom, int n_samples);

// F_eps g(x) = g(x, {x / eps})
FieldFn fold(const TwoScaleFn& g, double eps, int dim, int components);

// midpoint integral of f over the tiled cells with m^d points per cell
double cell_integral(const FieldFn& f, const PeriodicDomain& dom, int micro_n, int c = 0);

struct IdentityReport {
    int samples = 0;
    double normal = 0.0;
    double lambda = 0.0;
    double weingarten = 0.0;
    double projection = 0.0;
    double projection_jacobian = 0.0;
    double max() const;
    bool pass(double tol = 1e-10) const { return max() <= tol; }
    nlohmann::json to_json() const;
};

// Residuals of the unfolded normal, Lambda, Weingarten map, projection and DP
// against the cell operators at random samples.
IdentityReport check_geometric_identities(const PeriodicDomain& dom, int n_samples, std::uint64_t seed);

struct DistanceRow {
    double eps_n = 0.0;
    double eps_m = 0.0;
    double distance = 0.0;
    bool successive = false;
    // successive rows: strictly below the previous successive distance
    bool monotone = true;
};

struct DistanceTable {
    std::vector<DistanceRow> rows;
    std::vector<double> to_reference;
    bool successive_decreasing = true;
    nlohmann::json to_json() const;
    void write_csv(const std::string& path) const;
};

// Pairwise L2(Omega x Y) distances of unfolded fields over the region tiled at
// the coarsest eps. Lattices must be nested and share micro grid and
// components (GridMismatch otherwise).
DistanceTable two_scale_distance(const std::vector<UnfoldedField>& fields, const TwoScaleFn* reference = nullptr);

struct TraceCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double l2_sq = 0.0;
    double grad_sq = 0.0;
    bool ok = true;
    nlohmann::json to_json() const;
};

// u returns the value and writes the gradient
using GradFieldFn = std::function<double(const Vec& x, Vec& grad)>;

// eps |u|^2_{L2(Gamma_eps(t))} <= 4 c_tr (|u|^2_{L2(Omega)} + eps^2 |grad u|^2_{L2(Omega)});
// Gamma_eps(t) = {gamma + h n} when heights are given, Gamma_eps otherwise.
TraceCheck scaled_trace_norm(const GradFieldFn& u, const PeriodicDomain& dom, double c_tr, int grid_n,
                             int surface_n, const HeightProvider* heights = nullptr, double t = 0.0);

} // namespace homog
