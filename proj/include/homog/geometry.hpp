#pragma once

#include "homog/common.hpp"

#include <json.hpp>

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace homog {

// Implicit description of the inclusion Y^(2) = {phi < 0} inside Y = (0,1)^d.
class Shape {
public:
    virtual ~Shape() = default;
    virtual int dim() const = 0;
    virtual double phi(const Vec& y) const = 0;
    virtual Vec grad(const Vec& y) const = 0;
    virtual Mat hess(const Vec& y) const = 0;
    virtual Vec center() const = 0;
    // lower bound on the reach of {phi = 0}
    virtual double reach() const = 0;
    virtual nlohmann::json describe() const = 0;
};

struct FourierMode {
    int k = 0;
    double amp = 0.0;
    double phase = 0.0;
};

std::shared_ptr<const Shape> make_disk(const Vec& center, double radius, int dim);
std::shared_ptr<const Shape> make_ellipse(const Vec& center, const Vec& semi_axes, int dim);
// 2D star-shaped blob |y - c| = r0 (1 + sum amp cos(k theta + phase))
std::shared_ptr<const Shape> make_blob(const Vec& center, double r0, std::vector<FourierMode> modes);
// Y^(2) empty: phi > 0 everywhere
std::shared_ptr<const Shape> make_empty(int dim);

struct TubePoint {
    Vec gamma;
    Vec normal;
    double d = 0.0;
};

struct SurfaceSample {
    Vec point;
    Vec normal;
    double weight = 0.0;
    // polar angle about the shape center (2D only)
    double param = 0.0;
};

class ImplicitSurfaceCell {
public:
    // tube_width <= 0 selects reach / 2
    explicit ImplicitSurfaceCell(std::shared_ptr<const Shape> shape, double tube_width = -1.0);

    int dim() const { return shape_->dim(); }
    double a() const { return a_; }
    double reach() const { return reach_; }
    bool empty() const { return empty_; }
    const Shape& shape() const { return *shape_; }
    std::shared_ptr<const Shape> shape_ptr() const { return shape_; }
    // dist(Gamma, boundary of Y)
    double clearance() const { return clearance_; }

    bool in_inclusion(const Vec& y) const { return shape_->phi(y) < 0.0; }

    bool try_tube_coords(const Vec& y, TubePoint& out) const;
    TubePoint tube_coords(const Vec& y) const;
    double signed_distance(const Vec& y) const { return tube_coords(y).d; }
    Vec project(const Vec& y) const { return tube_coords(y).gamma; }

    Vec normal(const Vec& gamma) const;
    Mat weingarten(const Vec& gamma) const;
    // eigenvalues of the shape operator grad_Gamma n (positive for convex shapes)
    std::vector<double> principal_curvatures(const Vec& gamma) const;

    Vec lambda_map(const Vec& gamma, double s) const;
    std::pair<Vec, double> lambda_inverse(const Vec& x) const;

    std::vector<SurfaceSample> surface_samples(int n) const;
    // doubles n until the measure changes by less than tol (relative)
    std::vector<SurfaceSample> surface_samples_auto(double tol = 1e-6) const;
    double surface_measure() const;

private:
    std::shared_ptr<const Shape> shape_;
    double reach_ = 0.0;
    double a_ = 0.0;
    double clearance_ = 0.0;
    bool empty_ = false;
};

// Writes point, normal and weight columns.
void write_surface_csv(const std::string& path, const std::vector<SurfaceSample>& samples, int dim);

struct Rational {
    std::int64_t num = 0;
    std::int64_t den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    static Rational from_double(double x, std::int64_t max_den = 1000000000);
};

using Index = std::array<int, 3>;

class PeriodicDomain {
public:
    PeriodicDomain(std::shared_ptr<const ImplicitSurfaceCell> cell, double eps, const Vec& lo, const Vec& hi);

    int dim() const { return cell_->dim(); }
    double eps() const { return eps_; }
    const Rational& eps_exact() const { return eps_rat_; }
    const ImplicitSurfaceCell& cell() const { return *cell_; }
    std::shared_ptr<const ImplicitSurfaceCell> cell_ptr() const { return cell_; }
    const Vec& lo() const { return lo_; }
    const Vec& hi() const { return hi_; }
    const std::vector<Index>& cells() const { return cells_; }
    const Index& kmin() const { return kmin_; }
    const Index& kmax() const { return kmax_; }
    double tube_halfwidth() const { return eps_ * cell_->a(); }

    Index cell_of(const Vec& x) const;
    bool contains(const Index& k) const;
    Vec origin(const Index& k) const;
    // {x / eps} relative to the cell k
    Vec local(const Vec& x, const Index& k) const;

    bool in_inclusion(const Vec& x) const;

    // tube operators of Gamma_eps, evaluated directly in physical coordinates
    bool try_tube_coords(const Vec& x, TubePoint& out) const;
    TubePoint tube_coords(const Vec& x) const;
    double signed_distance(const Vec& x) const { return tube_coords(x).d; }
    Vec project(const Vec& x) const { return tube_coords(x).gamma; }
    Vec normal(const Vec& gamma) const;
    Mat weingarten(const Vec& gamma) const;
    Vec lambda_map(const Vec& gamma, double r) const;
    // DP_Gamma_eps(x) = (I - d L)^{-1} (I - n n^T)
    Mat projection_jacobian(const Vec& x) const;

    std::vector<SurfaceSample> surface_samples(int n) const;
    // scales cell samples into every cell of the tiling
    std::vector<SurfaceSample> scale_samples(const std::vector<SurfaceSample>& cell_samples) const;
    // dist(boundary of Omega, Gamma_eps) estimated from cell samples
    double boundary_distance(int n = 256) const;

private:
    std::shared_ptr<const ImplicitSurfaceCell> cell_;
    double eps_;
    Rational eps_rat_;
    Vec lo_, hi_;
    Index kmin_{0, 0, 0}, kmax_{-1, -1, -1};
    std::vector<Index> cells_;
};

PeriodicDomain tile(std::shared_ptr<const ImplicitSurfaceCell> cell, double eps, const Vec& lo, const Vec& hi);

// Gauss-Legendre nodes and weights on [-1, 1]
void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w);

} // namespace homog
