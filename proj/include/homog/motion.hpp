#pragma once

#include "homog/cutoff.hpp"
#include "homog/geometry.hpp"

#include <json.hpp>

#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace homog {

// family: "zero", "tube" (supported in the tube of Gamma_eps) or "uniform"
// (constant everywhere, violates the support assumption).
// tube: v = A eps^p (1 + tau t)(1 + beta prod sin(2 pi (x_i - lo_i) / L_i))
//            (1 + mu sin(2 pi y_1) sin(2 pi y_2)) chi(|d| / (eps a)),  y = x / eps
struct VelocitySpec {
    std::string family = "zero";
    double amplitude = 0.0;
    double eps_power = 0.0;
    double modulation = 0.0;
    double time_rate = 0.0;
    double micro_modulation = 0.0;

    nlohmann::json to_json() const;
    static VelocitySpec from_json(const nlohmann::json& j);
};

class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual void eval(double t, const Vec& x, double& v, Vec& grad, Mat& hess) const = 0;
    virtual double time_derivative(double t, const Vec& x) const = 0;
    virtual bool tube_supported() const = 0;

    double value(double t, const Vec& x) const;
    Vec grad(double t, const Vec& x) const;
    Mat hess(double t, const Vec& x) const;
};

std::shared_ptr<const VelocityField> make_velocity(const VelocitySpec& spec,
                                                   std::shared_ptr<const PeriodicDomain> dom);

// Macro modulation (1 + tau t)(1 + beta prod sin(...)) over the box, without
// the eps scaling; the interface velocity of the limit problem is A times this.
double macro_modulation(const VelocitySpec& spec, const PeriodicDomain& dom, double t, const Vec& x);

struct AuditReport {
    double lv_measured = 0.0;
    // sup |v| + |dv/dt| + |grad v|
    double lv_w1inf = 0.0;
    double sup_v = 0.0;
    double sup_dt = 0.0;
    double sup_grad = 0.0;
    double sup_hess_scaled = 0.0;
    double sup_third_scaled = 0.0;
    double sup_outside = 0.0;
    int samples = 0;
    bool support_ok = true;
    bool bounded_ok = true;
    bool a1_ok = true;
    nlohmann::json to_json() const;
};

AuditReport audit_assumptions(const VelocityField& v, const PeriodicDomain& dom, double t_end, int density = 32,
                              double lv_cap = std::numeric_limits<double>::infinity());

// sup |v| over tube samples, used for the step-size rule
double sup_velocity(const VelocityField& v, const PeriodicDomain& dom, double t_end, int density = 16);

struct MotionPoint {
    Vec y = Vec::Zero();
    Vec z = Vec::Zero();
    Mat dy = Mat::Identity();
    Mat dz = Mat::Zero();
    bool moving = false;
};

// B(z) = D(z / |z|)
Mat unit_jacobian(const Vec& z, int d);

// Characteristic system dy = -eps z/|z| v(t,y), dz = eps |z| grad v(t,y) with
// the Jacobians Dy, Dz, integrated by RK4 with a fixed internal step.
class Motion {
public:
    Motion(std::shared_ptr<const PeriodicDomain> dom, std::shared_ptr<const VelocityField> v, double t_end,
           double dt_out, int substeps = 1);

    const PeriodicDomain& domain() const { return *dom_; }
    std::shared_ptr<const PeriodicDomain> domain_ptr() const { return dom_; }
    const VelocityField& velocity() const { return *v_; }
    double eps() const { return dom_->eps(); }
    double t_end() const { return t_end_; }
    double dt_out() const { return dt_out_; }
    double step() const { return h_; }
    int n_times() const { return n_out_ + 1; }
    double time(int k) const { return k * dt_out_; }
    double sup_v() const { return sup_v_; }

    // initial data; returns false (identity motion) outside the tube
    bool initial(const Vec& x, MotionPoint& p) const;
    MotionPoint at(const Vec& x, double t) const;
    // values at every output time
    std::vector<MotionPoint> trace(const Vec& x) const;
    // right-hand side of the augmented system
    void rhs(double t, const MotionPoint& p, MotionPoint& dp) const;
    // solves y(t, x0) = x by Newton on the propagated Jacobian
    Vec invert(double t, const Vec& x, const Vec& guess, MotionPoint* at_root = nullptr) const;
    Vec invert(double t, const Vec& x) const { return invert(t, x, x); }

private:
    void rk4(double t, double h, MotionPoint& p) const;

    std::shared_ptr<const PeriodicDomain> dom_;
    std::shared_ptr<const VelocityField> v_;
    double t_end_, dt_out_, h_;
    int n_out_, substeps_;
    double sup_v_;
};

struct MotionState {
    std::vector<double> times;
    std::vector<Vec> seeds;
    std::vector<char> on_interface;
    // traj[seed][time]
    std::vector<std::vector<MotionPoint>> traj;
    double eps = 0.0;
    double lv = 0.0;
    int dim = 2;
};

// Interface samples of every cell plus offset seeds across the tube; at most
// max_cells cells (evenly strided) are seeded.
void default_seeds(const PeriodicDomain& dom, int n_surface, int n_offsets, int max_cells, std::vector<Vec>& seeds,
                   std::vector<char>& on_interface);

// Throws TubeExit if an interface seed leaves the tube.
MotionState integrate_motion(const Motion& m, const std::vector<Vec>& seeds, const std::vector<char>& on_interface,
                             double lv);

// Largest stored time up to t of |Dy - I| (spectral).
double max_dy_deviation(const MotionState& s, double t);

// Newton inverse guarded by the certificate |Dy - I| <= 1/4 up to time t.
Vec invert_motion(const MotionState& s, const Motion& m, double t, const Vec& x);

struct MotionBounds {
    double sup_dy_dev = 0.0;
    double sup_dt_dy = 0.0;
    double sup_eps_dz = 0.0;
    double envelope_violation = 0.0;
    double sup_b_ratio = 0.0;
    double min_det_dy = 1.0;
    double t_v = 0.0;
    bool t_v_is_end = true;
    nlohmann::json to_json() const;
};

MotionBounds check_motion_bounds(const MotionState& s, const Motion& m);

// phi_tilde(t, x) = -d(x0) with y(t, x0) = x, grad phi_tilde = z(t, x0);
// phi = eps g(phi_tilde / eps).
class LevelSet {
public:
    explicit LevelSet(std::shared_ptr<const Motion> m);

    struct Value {
        double phi_tilde = 0.0;
        Vec grad = Vec::Zero();
        Vec x0 = Vec::Zero();
        bool in_tube = false;
    };

    Value tilde(double t, const Vec& x, const Vec& guess) const;
    Value tilde(double t, const Vec& x) const { return tilde(t, x, x); }
    double phi(double t, const Vec& x) const;
    const GCutoff& g() const { return g_; }
    const Motion& motion() const { return *m_; }
    std::shared_ptr<const Motion> motion_ptr() const { return m_; }

private:
    std::shared_ptr<const Motion> m_;
    GCutoff g_;
};

} // namespace homog
