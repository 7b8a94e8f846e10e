#pragma once

#include "homog/motion.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace homog {

struct HeightPoint {
    double h = 0.0;
    double F = 0.0;
    double slope = -1.0;
    double dh_dt = 0.0;
    Vec grad = Vec::Zero();
    // moved normal (oriented like n) dotted with n
    double normal_dot = 1.0;
    // preimage of Lambda(gamma, h) under y(t, .)
    Vec x0 = Vec::Zero();
};

// F(t, r) = phi(t, Lambda(gamma, r)) and its r-derivative
// g'(phi_tilde / eps) grad phi_tilde . n(gamma).
class HeightSolver {
public:
    explicit HeightSolver(std::shared_ptr<const LevelSet> ls);

    const LevelSet& level() const { return *ls_; }
    const PeriodicDomain& domain() const { return ls_->motion().domain(); }

    double F(double t, const Vec& gamma, double r, double* slope = nullptr, Vec* x0 = nullptr) const;
    // safeguarded Newton on (-eps a, eps a); x0_guess seeds the motion inverse
    HeightPoint solve(double t, const Vec& gamma, double h_guess, const Vec& x0_guess) const;
    HeightPoint solve(double t, const Vec& gamma) const { return solve(t, gamma, 0.0, gamma); }

private:
    std::shared_ptr<const LevelSet> ls_;
};

// grad_Gamma h = (I - h L)(n - n_t / (n_t . n)), n_t the moved normal at
// Lambda(gamma, h).
Vec surface_gradient_height(const Mat& L, const Vec& n, double h, const Vec& n_t);

struct HeightField {
    std::vector<double> times;
    std::vector<Vec> gammas;
    // data[time][gamma]
    std::vector<std::vector<HeightPoint>> data;
    double eps = 0.0;
    double a = 0.0;
    double lv = 0.0;
    // index of the last time at which every certificate held
    int last_good = -1;
    std::string failure;
    ErrorKind failure_kind = ErrorKind::CertificateFailed;

    double sup_h(int upto) const;
    double sup_grad(int upto) const;
    double sup_dh_dt(int upto) const;
};

struct HeightCertificate {
    double max_residual = 0.0;
    double max_slope = -1.0;
    double max_h_ratio = 0.0;
    double bound_value = 0.0;
    double sup_dh_dt_ratio = 0.0;
    bool residual_ok = true;
    bool slope_ok = true;
    bool h_bound_ok = true;
    bool estimate_ok = true;
    bool pass() const { return residual_ok && slope_ok && h_bound_ok && estimate_ok; }
    nlohmann::json to_json() const;
};

// Time-marching solve with warm starts; stops at the first failing time.
HeightField solve_height(const HeightSolver& s, const std::vector<Vec>& gammas, const std::vector<double>& times,
                         double lv);
HeightCertificate certify_height(const HeightField& f);

struct HeightSample {
    double h = 0.0;
    double dh_dt = 0.0;
    Vec grad = Vec::Zero();
};

class HeightProvider {
public:
    virtual ~HeightProvider() = default;
    virtual HeightSample at(double t, const Vec& gamma) const = 0;
};

// Solves the root problem at each requested point.
class ExactHeight final : public HeightProvider {
public:
    explicit ExactHeight(std::shared_ptr<const HeightSolver> s) : s_(std::move(s)) {}
    HeightSample at(double t, const Vec& gamma) const override;

private:
    std::shared_ptr<const HeightSolver> s_;
};

// 2D: per cell, h and dh/dt sampled at m equispaced polar angles about the
// inclusion center and represented by their trigonometric interpolants;
// grad_Gamma h is the exact tangential derivative of the interpolant.
class SnapshotHeight final : public HeightProvider {
public:
    SnapshotHeight(std::shared_ptr<const HeightSolver> s, const std::vector<double>& times, int m);
    HeightSample at(double t, const Vec& gamma) const override;
    const std::vector<double>& times() const { return times_; }
    int samples_per_cell() const { return m_; }
    // heights at the interpolation nodes: nodes()[time][cell * m + j]
    const std::vector<std::vector<HeightPoint>>& nodes() const { return nodes_; }

private:
    int time_index(double t) const;
    int cell_index(const Index& k) const;

    std::shared_ptr<const HeightSolver> s_;
    std::vector<double> times_;
    int m_;
    Vec center_;
    std::vector<std::vector<HeightPoint>> nodes_;
    // coef_[time][cell] holds cos/sin coefficients of h and dh/dt
    std::vector<std::vector<std::vector<double>>> coef_h_, coef_dt_;
};

struct HanzawaEval {
    Vec s = Vec::Zero();
    Mat ds = Mat::Identity();
    Vec ds_dt = Vec::Zero();
    double det = 1.0;
};

// s(t,x) = x + h(t, Px) n(Px) chi(|d(x)| / (eps a)) in the tube, x elsewhere
class HanzawaMap {
public:
    HanzawaMap(std::shared_ptr<const PeriodicDomain> dom, std::shared_ptr<const HeightProvider> h);

    const PeriodicDomain& domain() const { return *dom_; }
    HanzawaEval eval(double t, const Vec& x) const;
    Vec s(double t, const Vec& x) const { return eval(t, x).s; }
    Mat jacobian(double t, const Vec& x) const { return eval(t, x).ds; }
    // throws BoundViolated when |Ds| > 2
    Mat jacobian_checked(double t, const Vec& x) const;

private:
    std::shared_ptr<const PeriodicDomain> dom_;
    std::shared_ptr<const HeightProvider> h_;
};

struct HanzawaReport {
    double t = 0.0;
    int samples = 0;
    double sup_ds = 1.0;
    double sup_ds_inv = 1.0;
    double min_det = 1.0;
    double max_fd_error = 0.0;
    bool pass = true;
    nlohmann::json to_json() const;
};

// Random tube points (fixed seed); fd_step > 0 also compares Ds with central
// differences of s.
HanzawaReport verify_hanzawa(const HanzawaMap& map, double t, int n_points, std::uint64_t seed, double fd_step = 0.0);

} // namespace homog
