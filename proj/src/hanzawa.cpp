#include "homog/hanzawa.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace homog {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// real trigonometric interpolation coefficients: a_0, (a_k, b_k)_{k<m/2}, a_{m/2}
std::vector<double> trig_coefficients(const std::vector<double>& f) {
    const int m = static_cast<int>(f.size());
    std::vector<double> c(m, 0.0);
    for (int k = 0; k <= m / 2; ++k) {
        double a = 0.0, b = 0.0;
        for (int j = 0; j < m; ++j) {
            double th = kTwoPi * j * k / m;
            a += f[j] * std::cos(th);
            b += f[j] * std::sin(th);
        }
        if (k == 0) c[0] = a / m;
        else if (2 * k == m) c[m - 1] = a / m;
        else {
            c[2 * k - 1] = 2.0 * a / m;
            c[2 * k] = 2.0 * b / m;
        }
    }
    return c;
}

void trig_eval(const std::vector<double>& c, double th, double& f, double& df) {
    const int m = static_cast<int>(c.size());
    f = c[0];
    df = 0.0;
    for (int k = 1; 2 * k < m; ++k) {
        double ck = std::cos(k * th), sk = std::sin(k * th);
        f += c[2 * k - 1] * ck + c[2 * k] * sk;
        df += k * (-c[2 * k - 1] * sk + c[2 * k] * ck);
    }
    if (m % 2 == 0) {
        int k = m / 2;
        f += c[m - 1] * std::cos(k * th);
        df -= k * c[m - 1] * std::sin(k * th);
    }
}

} // namespace

HeightSolver::HeightSolver(std::shared_ptr<const LevelSet> ls) : ls_(std::move(ls)) {}

double HeightSolver::F(double t, const Vec& gamma, double r, double* slope, Vec* x0) const {
    const PeriodicDomain& dom = domain();
    const double e = dom.eps();
    Vec n = dom.normal(gamma);
    Vec x = dom.lambda_map(gamma, r);
    Vec guess = x0 ? *x0 : x;
    LevelSet::Value v = ls_->tilde(t, x, guess);
    if (x0) *x0 = v.x0;
    const GCutoff& g = ls_->g();
    if (slope) *slope = g.d1(v.phi_tilde / e) * v.grad.dot(n);
    return e * g.value(v.phi_tilde / e);
}

HeightPoint HeightSolver::solve(double t, const Vec& gamma, double h_guess, const Vec& x0_guess) const {
    const PeriodicDomain& dom = domain();
    const double ea = dom.tube_halfwidth();
    const double e = dom.eps();
    const GCutoff& g = ls_->g();
    Vec n = dom.normal(gamma);
    double lo = -ea, hi = ea;
    double r = std::clamp(h_guess, -0.99 * ea, 0.99 * ea);
    Vec x0 = x0_guess;
    double f = 0.0, slope = -1.0;
    LevelSet::Value v;
    auto evaluate = [&] {
        v = ls_->tilde(t, dom.lambda_map(gamma, r), x0);
        x0 = v.x0;
        slope = g.d1(v.phi_tilde / e) * v.grad.dot(n);
        f = e * g.value(v.phi_tilde / e);
    };
    bool done = false;
    for (int it = 0; it < 100 && !done; ++it) {
        evaluate();
        // F decreases in r: positive values lie below the root
        if (f > 0) lo = r;
        else if (f < 0) hi = r;
        else break;
        double next = slope < 0 ? r - f / slope : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        double step = next - r;
        x0 += step * n;
        r = next;
        // F carries the inverse-map round-off, about 1e-14
        if (std::fabs(step) <= 1e-12 * ea || std::fabs(f) <= 1e-14) {
            evaluate();
            done = true;
        }
    }
    if (!done && f != 0.0) throw Error(ErrorKind::NoConvergence, "height root did not converge");
    if (!v.in_tube) throw Error(ErrorKind::NoConvergence, "height root left the tube");
    HeightPoint p;
    p.h = r;
    p.F = f;
    p.slope = slope;
    p.x0 = x0;
    double zn = v.grad.norm();
    double vel = ls_->motion().velocity().value(t, dom.lambda_map(gamma, r));
    p.dh_dt = -g.d1(v.phi_tilde / e) * e * zn * vel / slope;
    Vec nt = -v.grad / zn;
    p.normal_dot = nt.dot(n);
    if (p.normal_dot <= 0.5) throw Error(ErrorKind::NormalsNearOrthogonal, "moved normal is nearly tangential");
    p.grad = surface_gradient_height(dom.weingarten(gamma), n, r, nt);
    return p;
}

Vec surface_gradient_height(const Mat& L, const Vec& n, double h, const Vec& n_t) {
    return (Mat::Identity() - h * L) * (n - n_t / n_t.dot(n));
}

double HeightField::sup_h(int upto) const {
    double s = 0.0;
    for (int k = 0; k <= upto && k < static_cast<int>(data.size()); ++k)
        for (const auto& p : data[k]) s = std::max(s, std::fabs(p.h));
    return s;
}

double HeightField::sup_grad(int upto) const {
    double s = 0.0;
    for (int k = 0; k <= upto && k < static_cast<int>(data.size()); ++k)
        for (const auto& p : data[k]) s = std::max(s, p.grad.norm());
    return s;
}

double HeightField::sup_dh_dt(int upto) const {
    double s = 0.0;
    for (int k = 0; k <= upto && k < static_cast<int>(data.size()); ++k)
        for (const auto& p : data[k]) s = std::max(s, std::fabs(p.dh_dt));
    return s;
}

nlohmann::json HeightCertificate::to_json() const {
    return {{"max_residual", max_residual},   {"max_slope", max_slope},
            {"max_h_over_eps_t_lv", max_h_ratio}, {"height_estimate", bound_value},
            {"sup_dh_dt_over_eps_lv", sup_dh_dt_ratio}, {"residual_ok", residual_ok},
            {"slope_ok", slope_ok},           {"h_bound_ok", h_bound_ok},
            {"estimate_ok", estimate_ok},     {"pass", pass()}};
}

namespace {

// checks the certificates at time index k; returns an empty string on success
std::string check_time(const HeightField& f, int k, ErrorKind& kind) {
    const double t = f.times[k];
    for (const auto& p : f.data[k]) {
        if (std::fabs(p.F) > 1e-10) {
            kind = ErrorKind::CertificateFailed;
            return "root residual above 1e-10";
        }
        if (p.slope > -1.0 / 3.0) {
            kind = ErrorKind::SlopeCertificateFailed;
            return "slope above -1/3";
        }
        if (std::fabs(p.h) > f.eps * t * f.lv + 1e-8) {
            kind = ErrorKind::BoundViolated;
            return "|h| exceeds eps t l_v";
        }
    }
    double bound = 5.0 / (f.eps * f.a) * f.sup_h(k) + 2.0 * f.sup_grad(k);
    if (bound > 0.5) {
        kind = ErrorKind::BoundViolated;
        return "height estimate exceeds 1/2";
    }
    return {};
}

} // namespace

HeightField solve_height(const HeightSolver& s, const std::vector<Vec>& gammas, const std::vector<double>& times,
                         double lv) {
    HeightField f;
    const PeriodicDomain& dom = s.domain();
    f.times = times;
    f.gammas = gammas;
    f.eps = dom.eps();
    f.a = dom.cell().a();
    f.lv = lv;
    std::vector<HeightPoint> prev(gammas.size());
    for (std::size_t i = 0; i < gammas.size(); ++i) prev[i].x0 = gammas[i];
    double t_prev = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::vector<HeightPoint> cur(gammas.size());
        std::string err;
        ErrorKind kind = ErrorKind::CertificateFailed;
        try {
            parallel_for(gammas.size(), [&](std::size_t i) {
                double dt = times[k] - t_prev;
                double guess = prev[i].h + dt * prev[i].dh_dt;
                Vec n = dom.normal(gammas[i]);
                cur[i] = s.solve(times[k], gammas[i], guess, prev[i].x0 + (guess - prev[i].h) * n);
            });
        } catch (const Error& e) {
            err = e.what();
            kind = e.kind();
        }
        if (!err.empty()) {
            f.failure = err;
            f.failure_kind = kind;
            break;
        }
        f.data.push_back(std::move(cur));
        err = check_time(f, static_cast<int>(k), kind);
        if (!err.empty()) {
            f.failure = err + " at t = " + std::to_string(times[k]);
            f.failure_kind = kind;
            break;
        }
        f.last_good = static_cast<int>(k);
        prev = f.data.back();
        t_prev = times[k];
    }
    return f;
}

HeightCertificate certify_height(const HeightField& f) {
    HeightCertificate c;
    const int n = static_cast<int>(f.data.size());
    for (int k = 0; k < n; ++k) {
        double t = f.times[k];
        for (const auto& p : f.data[k]) {
            c.max_residual = std::max(c.max_residual, std::fabs(p.F));
            c.max_slope = std::max(c.max_slope, p.slope);
            if (t > 0 && f.lv > 0) c.max_h_ratio = std::max(c.max_h_ratio, std::fabs(p.h) / (f.eps * t * f.lv));
            if (std::fabs(p.h) > f.eps * t * f.lv + 1e-8) c.h_bound_ok = false;
        }
    }
    c.bound_value = 5.0 / (f.eps * f.a) * f.sup_h(n - 1) + 2.0 * f.sup_grad(n - 1);
    if (f.lv > 0) c.sup_dh_dt_ratio = f.sup_dh_dt(n - 1) / (f.eps * f.lv);
    c.residual_ok = c.max_residual <= 1e-10;
    c.slope_ok = c.max_slope <= -1.0 / 3.0;
    c.estimate_ok = c.bound_value <= 0.5;
    if (n < static_cast<int>(f.times.size())) {
        // the run stopped early: the failing time counts against the certificate
        if (f.failure_kind == ErrorKind::SlopeCertificateFailed) c.slope_ok = false;
        else if (f.failure_kind == ErrorKind::BoundViolated) c.estimate_ok = false;
        else c.residual_ok = false;
    }
    return c;
}

HeightSample ExactHeight::at(double t, const Vec& gamma) const {
    HeightPoint p = s_->solve(t, gamma);
    return {p.h, p.dh_dt, p.grad};
}

SnapshotHeight::SnapshotHeight(std::shared_ptr<const HeightSolver> s, const std::vector<double>& times, int m)
    : s_(std::move(s)), times_(times), m_(m) {
    const PeriodicDomain& dom = s_->domain();
    if (dom.dim() != 2) throw Error(ErrorKind::InvalidArgument, "snapshot heights are two-dimensional");
    if (m < 4) throw Error(ErrorKind::InvalidArgument, "too few interpolation nodes");
    center_ = dom.cell().shape().center();
    auto cs = dom.cell().surface_samples(m);
    const auto& cells = dom.cells();
    std::vector<Vec> gammas;
    gammas.reserve(cells.size() * m);
    for (const auto& k : cells)
        for (const auto& smp : cs) gammas.push_back(dom.origin(k) + dom.eps() * smp.point);
    HeightField f = solve_height(*s_, gammas, times, std::numeric_limits<double>::infinity());
    if (static_cast<int>(f.data.size()) < static_cast<int>(times.size()))
        throw Error(f.failure_kind, "height snapshot failed: " + f.failure);
    nodes_ = f.data;
    coef_h_.resize(times.size());
    coef_dt_.resize(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) {
        coef_h_[k].resize(cells.size());
        coef_dt_[k].resize(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            std::vector<double> hv(m), dv(m);
            for (int j = 0; j < m; ++j) {
                hv[j] = nodes_[k][c * m + j].h;
                dv[j] = nodes_[k][c * m + j].dh_dt;
            }
            coef_h_[k][c] = trig_coefficients(hv);
            coef_dt_[k][c] = trig_coefficients(dv);
        }
    }
}

int SnapshotHeight::time_index(double t) const {
    for (std::size_t k = 0; k < times_.size(); ++k)
        if (std::fabs(times_[k] - t) <= 1e-12) return static_cast<int>(k);
    throw Error(ErrorKind::InvalidArgument, "time not in the snapshot set");
}

int SnapshotHeight::cell_index(const Index& k) const {
    const PeriodicDomain& dom = s_->domain();
    const Index& lo = dom.kmin();
    const Index& hi = dom.kmax();
    int nx = hi[0] - lo[0] + 1;
    return (k[1] - lo[1]) * nx + (k[0] - lo[0]);
}

HeightSample SnapshotHeight::at(double t, const Vec& gamma) const {
    const PeriodicDomain& dom = s_->domain();
    int ti = time_index(t);
    Index k = dom.cell_of(gamma);
    if (!dom.contains(k)) throw Error(ErrorKind::OutsideTube, "point outside the tiled cells");
    int ci = cell_index(k);
    Vec y = dom.local(gamma, k);
    Vec u = y - center_;
    double rho = std::hypot(u(0), u(1));
    double th = std::atan2(u(1), u(0));
    if (th < 0) th += kTwoPi;
    HeightSample out;
    double dh, ddt;
    trig_eval(coef_h_[ti][ci], th, out.h, dh);
    trig_eval(coef_dt_[ti][ci], th, out.dh_dt, ddt);
    // grad theta in physical coordinates is e_theta / (eps rho)
    Vec et(-std::sin(th), std::cos(th), 0.0);
    Vec n = dom.normal(gamma);
    Vec gt = et / (dom.eps() * rho);
    gt -= n * n.dot(gt);
    out.grad = dh * gt;
    return out;
}

HanzawaMap::HanzawaMap(std::shared_ptr<const PeriodicDomain> dom, std::shared_ptr<const HeightProvider> h)
    : dom_(std::move(dom)), h_(std::move(h)) {}

HanzawaEval HanzawaMap::eval(double t, const Vec& x) const {
    HanzawaEval out;
    out.s = x;
    TubePoint tp;
    if (!dom_->try_tube_coords(x, tp)) return out;
    const double ea = dom_->tube_halfwidth();
    const double r = std::fabs(tp.d) / ea;
    if (r >= 2.0 / 3.0) return out;
    const int d = dom_->dim();
    HeightSample hs = h_->at(t, tp.gamma);
    const Vec& n = tp.normal;
    double chi = Chi::value(r);
    double dchi = Chi::d1(r);
    double sg = tp.d >= 0 ? 1.0 : -1.0;
    Mat l = dom_->weingarten(tp.gamma);
    Mat inv = inverse_d(Mat::Identity() - tp.d * l, d);
    Vec grad_mu = (eye_d(d) - n * n.transpose()) * inv * hs.grad;
    Vec row = chi * grad_mu + hs.h * dchi * sg / ea * n;
    out.s = x + hs.h * chi * n;
    out.ds = Mat::Identity() + n * row.transpose() - hs.h * chi * l * inv;
    out.ds_dt = hs.dh_dt * chi * n;
    out.det = det_d(out.ds, d);
    return out;
}

Mat HanzawaMap::jacobian_checked(double t, const Vec& x) const {
    Mat ds = jacobian(t, x);
    if (spectral_norm(ds, dom_->dim()) > 2.0) throw Error(ErrorKind::BoundViolated, "|Ds| exceeds 2");
    return ds;
}

nlohmann::json HanzawaReport::to_json() const {
    return {{"t", t},
            {"samples", samples},
            {"sup_ds", sup_ds},
            {"sup_ds_inverse", sup_ds_inv},
            {"min_det", min_det},
            {"max_fd_error", max_fd_error},
            {"pass", pass}};
}

HanzawaReport verify_hanzawa(const HanzawaMap& map, double t, int n_points, std::uint64_t seed, double fd_step) {
    const PeriodicDomain& dom = map.domain();
    const int d = dom.dim();
    HanzawaReport r;
    r.t = t;
    r.samples = n_points;
    if (dom.cell().empty() || n_points <= 0) return r;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto cs = dom.cell().surface_samples(512);
    std::vector<Vec> pts(n_points);
    for (auto& x : pts) {
        const auto& k = dom.cells()[rng() % dom.cells().size()];
        const auto& s = cs[rng() % cs.size()];
        double off = dom.tube_halfwidth() * (2.0 * u(rng) - 1.0) * 0.999;
        x = dom.origin(k) + dom.eps() * s.point + off * s.normal;
    }
    std::vector<double> nds(n_points), ndi(n_points), det(n_points), fde(n_points, 0.0);
    parallel_for(pts.size(), [&](std::size_t i) {
        HanzawaEval e = map.eval(t, pts[i]);
        nds[i] = spectral_norm(e.ds, d);
        ndi[i] = spectral_norm(inverse_d(e.ds, d), d);
        det[i] = e.det;
        if (fd_step > 0) {
            for (int j = 0; j < d; ++j) {
                Vec dx = Vec::Zero();
                dx(j) = fd_step;
                Vec col = (map.s(t, pts[i] + dx) - map.s(t, pts[i] - dx)) / (2.0 * fd_step);
                fde[i] = std::max(fde[i], (col - e.ds.col(j)).head(d).cwiseAbs().maxCoeff());
            }
        }
    });
    for (int i = 0; i < n_points; ++i) {
        r.sup_ds = std::max(r.sup_ds, nds[i]);
        r.sup_ds_inv = std::max(r.sup_ds_inv, ndi[i]);
        r.min_det = std::min(r.min_det, det[i]);
        r.max_fd_error = std::max(r.max_fd_error, fde[i]);
    }
    r.pass = r.sup_ds <= 2.0 && r.sup_ds_inv <= 2.0 && r.min_det > 0.0;
    return r;
}

} // namespace homog
