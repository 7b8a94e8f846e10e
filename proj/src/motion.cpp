#include "homog/motion.hpp"

#include <cmath>
#include <numbers>

namespace homog {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

class ZeroVelocity final : public VelocityField {
public:
    void eval(double, const Vec&, double& v, Vec& g, Mat& h) const override {
        v = 0.0;
        g.setZero();
        h.setZero();
    }
    double time_derivative(double, const Vec&) const override { return 0.0; }
    bool tube_supported() const override { return true; }
};

class UniformVelocity final : public VelocityField {
public:
    explicit UniformVelocity(double c) : c_(c) {}
    void eval(double, const Vec&, double& v, Vec& g, Mat& h) const override {
        v = c_;
        g.setZero();
        h.setZero();
    }
    double time_derivative(double, const Vec&) const override { return 0.0; }
    bool tube_supported() const override { return false; }

private:
    double c_;
};

struct Modulation {
    double m;
    Vec g;
    Mat h;
};

// (1 + tau t)(1 + beta prod_i sin(k_i (x_i - lo_i)))
Modulation macro_factor(const VelocitySpec& s, const PeriodicDomain& dom, double t, const Vec& x) {
    int d = dom.dim();
    double tf = 1.0 + s.time_rate * t;
    Modulation r{tf, Vec::Zero(), Mat::Zero()};
    if (s.modulation == 0.0) return r;
    double sn[3], cs[3], k[3];
    for (int i = 0; i < d; ++i) {
        k[i] = kTwoPi / (dom.hi()(i) - dom.lo()(i));
        sn[i] = std::sin(k[i] * (x(i) - dom.lo()(i)));
        cs[i] = std::cos(k[i] * (x(i) - dom.lo()(i)));
    }
    auto prod_except = [&](int a, int b) {
        double p = 1.0;
        for (int i = 0; i < d; ++i)
            if (i != a && i != b) p *= sn[i];
        return p;
    };
    double c = tf * s.modulation;
    double all = prod_except(-1, -1);
    r.m = tf + c * all;
    for (int j = 0; j < d; ++j) {
        r.g(j) = c * k[j] * cs[j] * prod_except(j, -1);
        r.h(j, j) = -c * k[j] * k[j] * all;
        for (int l = 0; l < d; ++l)
            if (l != j) r.h(j, l) = c * k[j] * cs[j] * k[l] * cs[l] * prod_except(j, l);
    }
    return r;
}

class TubeVelocity final : public VelocityField {
public:
    TubeVelocity(const VelocitySpec& s, std::shared_ptr<const PeriodicDomain> dom)
        : s_(s), dom_(std::move(dom)), scale_(s.amplitude * std::pow(dom_->eps(), s.eps_power)) {}

    void eval(double t, const Vec& x, double& v, Vec& g, Mat& h) const override {
        v = 0.0;
        g.setZero();
        h.setZero();
        TubePoint tp;
        if (!dom_->try_tube_coords(x, tp)) return;
        const double ea = dom_->tube_halfwidth();
        const double r = std::fabs(tp.d) / ea;
        if (r >= 2.0 / 3.0) return;
        const int d = dom_->dim();
        double w = Chi::value(r);
        Vec gw = Vec::Zero();
        Mat hw = Mat::Zero();
        if (r > 1.0 / 3.0) {
            double sg = tp.d >= 0 ? 1.0 : -1.0;
            Vec n = tp.normal;
            Mat l = dom_->weingarten(tp.gamma);
            Mat d2d = -l * inverse_d(Mat::Identity() - tp.d * l, d);
            gw = Chi::d1(r) * sg / ea * n;
            hw = Chi::d2(r) / (ea * ea) * n * n.transpose() + Chi::d1(r) * sg / ea * d2d;
        }
        Modulation m = macro_factor(s_, *dom_, t, x);
        double mu = 1.0;
        Vec gmu = Vec::Zero();
        Mat hmu = Mat::Zero();
        if (s_.micro_modulation != 0.0) {
            const double e = dom_->eps();
            const double k = kTwoPi / e;
            double s0 = std::sin(k * x(0)), c0 = std::cos(k * x(0));
            double s1 = std::sin(k * x(1)), c1 = std::cos(k * x(1));
            const double a = s_.micro_modulation;
            mu = 1.0 + a * s0 * s1;
            gmu(0) = a * k * c0 * s1;
            gmu(1) = a * k * s0 * c1;
            hmu(0, 0) = -a * k * k * s0 * s1;
            hmu(1, 1) = -a * k * k * s0 * s1;
            hmu(0, 1) = hmu(1, 0) = a * k * k * c0 * c1;
        }
        v = scale_ * m.m * mu * w;
        g = scale_ * (m.g * mu * w + m.m * gmu * w + m.m * mu * gw);
        Mat cross = m.g * gmu.transpose() * w + m.g * gw.transpose() * mu + gmu * gw.transpose() * m.m;
        h = scale_ * (m.h * mu * w + m.m * hmu * w + m.m * mu * hw + cross + cross.transpose());
    }

    double time_derivative(double t, const Vec& x) const override {
        if (s_.time_rate == 0.0) return 0.0;
        double v = value(t, x);
        return v * s_.time_rate / (1.0 + s_.time_rate * t);
    }

    bool tube_supported() const override { return true; }

private:
    VelocitySpec s_;
    std::shared_ptr<const PeriodicDomain> dom_;
    double scale_;
};

void axpy(MotionPoint& out, const MotionPoint& base, double c, const MotionPoint& k) {
    out.y = base.y + c * k.y;
    out.z = base.z + c * k.z;
    out.dy = base.dy + c * k.dy;
    out.dz = base.dz + c * k.dz;
    out.moving = base.moving;
}

// cells evenly strided through the tiling, at most max_cells
std::vector<Index> strided_cells(const PeriodicDomain& dom, int max_cells) {
    const auto& all = dom.cells();
    std::size_t stride = std::max<std::size_t>(1, (all.size() + max_cells - 1) / max_cells);
    std::vector<Index> out;
    for (std::size_t i = 0; i < all.size(); i += stride) out.push_back(all[i]);
    return out;
}

} // namespace

nlohmann::json VelocitySpec::to_json() const {
    return {{"family", family},         {"amplitude", amplitude},  {"eps_power", eps_power},
            {"modulation", modulation}, {"time_rate", time_rate}, {"micro_modulation", micro_modulation}};
}

VelocitySpec VelocitySpec::from_json(const nlohmann::json& j) {
    VelocitySpec s;
    if (!j.is_object()) throw Error(ErrorKind::ConfigInvalid, "velocity: expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        auto num = [&](double& dst) {
            if (!it->is_number()) throw Error(ErrorKind::ConfigInvalid, "velocity." + k + ": expected a number");
            dst = it->get<double>();
        };
        if (k == "family") {
            if (!it->is_string()) throw Error(ErrorKind::ConfigInvalid, "velocity.family: expected a string");
            s.family = it->get<std::string>();
        } else if (k == "amplitude") num(s.amplitude);
        else if (k == "eps_power") num(s.eps_power);
        else if (k == "modulation") num(s.modulation);
        else if (k == "time_rate") num(s.time_rate);
        else if (k == "micro_modulation") num(s.micro_modulation);
        else throw Error(ErrorKind::ConfigInvalid, "velocity." + k + ": unknown key");
    }
    if (s.family != "zero" && s.family != "tube" && s.family != "uniform")
        throw Error(ErrorKind::ConfigInvalid, "velocity.family: expected zero, tube or uniform");
    if (std::fabs(s.modulation) >= 1.0 || std::fabs(s.micro_modulation) >= 1.0)
        throw Error(ErrorKind::ConfigInvalid, "velocity.modulation: magnitude must be below 1");
    return s;
}

double VelocityField::value(double t, const Vec& x) const {
    double v;
    Vec g;
    Mat h;
    eval(t, x, v, g, h);
    return v;
}

Vec VelocityField::grad(double t, const Vec& x) const {
    double v;
    Vec g;
    Mat h;
    eval(t, x, v, g, h);
    return g;
}

Mat VelocityField::hess(double t, const Vec& x) const {
    double v;
    Vec g;
    Mat h;
    eval(t, x, v, g, h);
    return h;
}

std::shared_ptr<const VelocityField> make_velocity(const VelocitySpec& spec, std::shared_ptr<const PeriodicDomain> dom) {
    if (spec.family == "zero") return std::make_shared<ZeroVelocity>();
    if (spec.family == "uniform") return std::make_shared<UniformVelocity>(spec.amplitude);
    if (spec.family == "tube") {
        if (dom->cell().empty()) return std::make_shared<ZeroVelocity>();
        return std::make_shared<TubeVelocity>(spec, std::move(dom));
    }
    throw Error(ErrorKind::InvalidArgument, "unknown velocity family " + spec.family);
}

double macro_modulation(const VelocitySpec& spec, const PeriodicDomain& dom, double t, const Vec& x) {
    return macro_factor(spec, dom, t, x).m;
}

nlohmann::json AuditReport::to_json() const {
    return {{"l_v_measured", lv_measured}, {"l_v_w1inf", lv_w1inf},
            {"sup_v", sup_v},              {"sup_dt_v", sup_dt},
            {"sup_grad_v", sup_grad},      {"sup_eps_hess_v", sup_hess_scaled},
            {"sup_eps2_d3_v", sup_third_scaled}, {"sup_v_outside_tube", sup_outside},
            {"samples", samples},          {"support_ok", support_ok},
            {"bounded_ok", bounded_ok},    {"a1_ok", a1_ok}};
}

AuditReport audit_assumptions(const VelocityField& v, const PeriodicDomain& dom, double t_end, int density,
                              double lv_cap) {
    AuditReport r;
    const int d = dom.dim();
    const double e = dom.eps();
    const double times[3] = {0.0, 0.5 * t_end, t_end};
    if (!dom.cell().empty()) {
        const double ea = dom.tube_halfwidth();
        const double fd = 1e-4 * ea;
        auto cs = dom.cell().surface_samples(density);
        const int noff = 24;
        for (const auto& k : strided_cells(dom, 64)) {
            Vec o = dom.origin(k);
            for (const auto& s : cs) {
                Vec gamma = o + e * s.point;
                for (int j = 0; j < noff; ++j) {
                    double off = ea * (-1.0 + 2.0 * (j + 0.5) / noff);
                    Vec x = gamma + off * s.normal;
                    for (double t : times) {
                        double val;
                        Vec g;
                        Mat h;
                        v.eval(t, x, val, g, h);
                        double third = 0.0;
                        for (int i = 0; i < d; ++i) {
                            Vec dx = Vec::Zero();
                            dx(i) = fd;
                            Mat dh = (v.hess(t, x + dx) - v.hess(t, x - dx)) / (2.0 * fd);
                            third += dh.squaredNorm();
                        }
                        third = std::sqrt(third);
                        double vt = std::fabs(v.time_derivative(t, x));
                        double w1 = std::fabs(val) + vt + g.norm();
                        double hs = e * spectral_norm(h, d);
                        double ts = e * e * third;
                        r.sup_v = std::max(r.sup_v, std::fabs(val));
                        r.sup_dt = std::max(r.sup_dt, vt);
                        r.sup_grad = std::max(r.sup_grad, g.norm());
                        r.sup_hess_scaled = std::max(r.sup_hess_scaled, hs);
                        r.sup_third_scaled = std::max(r.sup_third_scaled, ts);
                        r.lv_w1inf = std::max(r.lv_w1inf, w1);
                        r.lv_measured = std::max(r.lv_measured, w1 + hs + ts);
                        ++r.samples;
                    }
                }
            }
        }
    }
    // support: v must vanish wherever the point is outside the tube
    const int ng = 64;
    const int nz = d == 3 ? ng : 1;
    for (int iz = 0; iz < nz; ++iz)
        for (int iy = 0; iy < ng; ++iy)
            for (int ix = 0; ix < ng; ++ix) {
                Vec x = Vec::Zero();
                int idx[3] = {ix, iy, iz};
                for (int i = 0; i < d; ++i)
                    x(i) = dom.lo()(i) + (dom.hi()(i) - dom.lo()(i)) * (idx[i] + 0.5) / ng;
                TubePoint tp;
                if (dom.try_tube_coords(x, tp)) continue;
                for (double t : times) r.sup_outside = std::max(r.sup_outside, std::fabs(v.value(t, x)));
            }
    r.support_ok = v.tube_supported() && r.sup_outside == 0.0;
    r.bounded_ok = std::isfinite(r.lv_measured) && r.lv_measured <= lv_cap;
    r.a1_ok = r.support_ok && r.bounded_ok;
    return r;
}

double sup_velocity(const VelocityField& v, const PeriodicDomain& dom, double t_end, int density) {
    double sup = 0.0;
    if (dom.cell().empty()) return 0.0;
    const double e = dom.eps();
    const double ea = dom.tube_halfwidth();
    auto cs = dom.cell().surface_samples(density);
    for (const auto& k : strided_cells(dom, 64)) {
        Vec o = dom.origin(k);
        for (const auto& s : cs)
            for (int j = 0; j < 9; ++j) {
                Vec x = o + e * s.point + ea * (-0.8 + 0.2 * j) * s.normal;
                for (double t : {0.0, 0.5 * t_end, t_end}) sup = std::max(sup, std::fabs(v.value(t, x)));
            }
    }
    return sup;
}

Mat unit_jacobian(const Vec& z, int d) {
    double nz = z.norm();
    Vec zh = z / nz;
    return (eye_d(d) - zh * zh.transpose()) / nz;
}

Motion::Motion(std::shared_ptr<const PeriodicDomain> dom, std::shared_ptr<const VelocityField> v, double t_end,
               double dt_out, int substeps)
    : dom_(std::move(dom)), v_(std::move(v)), t_end_(t_end), dt_out_(dt_out), substeps_(substeps) {
    if (!(t_end >= 0) || !(dt_out > 0) || substeps < 1)
        throw Error(ErrorKind::InvalidArgument, "invalid time grid");
    n_out_ = static_cast<int>(std::llround(t_end / dt_out));
    if (std::fabs(n_out_ * dt_out - t_end) > 1e-9 * std::max(1.0, t_end))
        throw Error(ErrorKind::InvalidArgument, "t_end must be a multiple of the output step");
    h_ = dt_out / substeps;
    sup_v_ = sup_velocity(*v_, *dom_, t_end);
    // the interface may move at most eps a / 10 per internal step
    if (!dom_->cell().empty() && sup_v_ > 0 && h_ > dom_->cell().a() / (10.0 * sup_v_))
        throw Error(ErrorKind::StepTooLarge, "internal step exceeds a / (10 sup|v|)");
}

bool Motion::initial(const Vec& x, MotionPoint& p) const {
    p = MotionPoint{};
    p.y = x;
    TubePoint tp;
    if (!dom_->try_tube_coords(x, tp)) return false;
    const int d = dom_->dim();
    Mat l = dom_->weingarten(tp.gamma);
    p.z = -tp.normal;
    p.dy = Mat::Identity();
    // z = -n o P, D(n o P) = -L (I - d L)^{-1}
    p.dz = l * inverse_d(Mat::Identity() - tp.d * l, d);
    p.moving = true;
    return true;
}

void Motion::rhs(double t, const MotionPoint& p, MotionPoint& dp) const {
    const int d = dom_->dim();
    const double e = dom_->eps();
    double v;
    Vec g;
    Mat h;
    v_->eval(t, p.y, v, g, h);
    double nz = p.z.norm();
    Vec zh = p.z / nz;
    Mat b = unit_jacobian(p.z, d);
    dp.y = -e * v * zh;
    dp.z = e * nz * g;
    dp.dy = e * (-(zh * g.transpose()) * p.dy - v * b * p.dz);
    dp.dz = e * (nz * h * p.dy + (g * zh.transpose()) * p.dz);
    dp.moving = p.moving;
}

void Motion::rk4(double t, double h, MotionPoint& p) const {
    MotionPoint k1, k2, k3, k4, tmp;
    rhs(t, p, k1);
    axpy(tmp, p, 0.5 * h, k1);
    rhs(t + 0.5 * h, tmp, k2);
    axpy(tmp, p, 0.5 * h, k2);
    rhs(t + 0.5 * h, tmp, k3);
    axpy(tmp, p, h, k3);
    rhs(t + h, tmp, k4);
    p.y += h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y);
    p.z += h / 6.0 * (k1.z + 2.0 * k2.z + 2.0 * k3.z + k4.z);
    p.dy += h / 6.0 * (k1.dy + 2.0 * k2.dy + 2.0 * k3.dy + k4.dy);
    p.dz += h / 6.0 * (k1.dz + 2.0 * k2.dz + 2.0 * k3.dz + k4.dz);
}

MotionPoint Motion::at(const Vec& x, double t) const {
    MotionPoint p;
    if (!initial(x, p)) return p;
    double q = t / h_;
    long n = std::lround(q);
    if (std::fabs(q - n) > 1e-9) n = static_cast<long>(std::floor(q));
    for (long i = 0; i < n; ++i) rk4(i * h_, h_, p);
    double rem = t - n * h_;
    if (rem > 1e-14) rk4(n * h_, rem, p);
    return p;
}

std::vector<MotionPoint> Motion::trace(const Vec& x) const {
    std::vector<MotionPoint> out;
    out.reserve(n_out_ + 1);
    MotionPoint p;
    bool moving = initial(x, p);
    out.push_back(p);
    for (int k = 0; k < n_out_; ++k) {
        if (moving)
            for (int s = 0; s < substeps_; ++s) rk4((static_cast<long>(k) * substeps_ + s) * h_, h_, p);
        out.push_back(p);
    }
    return out;
}

Vec Motion::invert(double t, const Vec& x, const Vec& guess, MotionPoint* at_root) const {
    const int d = dom_->dim();
    Vec x0 = guess;
    for (int it = 0; it < 40; ++it) {
        MotionPoint p = at(x0, t);
        Vec r = p.y - x;
        double rn = norm_d(r, d);
        if (rn <= 1e-14 * std::max(1.0, norm_d(x, d))) {
            if (at_root) *at_root = p;
            return x0;
        }
        Vec delta = inverse_d(p.dy, d) * r;
        delta(2) = d == 2 ? 0.0 : delta(2);
        x0 -= delta;
        if (norm_d(delta, d) <= 1e-15 * std::max(1.0, norm_d(x, d)) && rn <= 1e-12) {
            if (at_root) *at_root = at(x0, t);
            return x0;
        }
    }
    throw Error(ErrorKind::NoConvergence, "motion inverse did not converge");
}

void default_seeds(const PeriodicDomain& dom, int n_surface, int n_offsets, int max_cells, std::vector<Vec>& seeds,
                   std::vector<char>& on_interface) {
    seeds.clear();
    on_interface.clear();
    if (dom.cell().empty()) return;
    const double e = dom.eps();
    const double ea = dom.tube_halfwidth();
    auto cs = dom.cell().surface_samples(n_surface);
    for (const auto& k : strided_cells(dom, max_cells)) {
        Vec o = dom.origin(k);
        for (std::size_t i = 0; i < cs.size(); ++i) {
            Vec g = o + e * cs[i].point;
            seeds.push_back(g);
            on_interface.push_back(1);
            if (i % 4 != 0) continue;
            for (int j = 0; j < n_offsets; ++j) {
                double off = ea * 0.95 * (-1.0 + 2.0 * (j + 0.5) / n_offsets);
                seeds.push_back(g + off * cs[i].normal);
                on_interface.push_back(0);
            }
        }
    }
}

MotionState integrate_motion(const Motion& m, const std::vector<Vec>& seeds, const std::vector<char>& on_interface,
                             double lv) {
    MotionState s;
    s.eps = m.eps();
    s.lv = lv;
    s.dim = m.domain().dim();
    s.seeds = seeds;
    s.on_interface = on_interface;
    for (int k = 0; k < m.n_times(); ++k) s.times.push_back(m.time(k));
    s.traj.resize(seeds.size());
    const double ea = m.domain().tube_halfwidth();
    parallel_for(seeds.size(), [&](std::size_t i) {
        s.traj[i] = m.trace(seeds[i]);
        if (!on_interface[i]) return;
        for (int k = 0; k < m.n_times(); ++k) {
            TubePoint tp;
            if (!m.domain().try_tube_coords(s.traj[i][k].y, tp) || std::fabs(tp.d) >= ea)
                throw Error(ErrorKind::TubeExit, "interface sample left the tube at t = " + std::to_string(m.time(k)));
        }
    });
    return s;
}

double max_dy_deviation(const MotionState& s, double t) {
    double dev = 0.0;
    for (const auto& tr : s.traj)
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            if (s.times[k] > t + 1e-12) break;
            dev = std::max(dev, spectral_norm(tr[k].dy - Mat::Identity(), s.dim));
        }
    return dev;
}

Vec invert_motion(const MotionState& s, const Motion& m, double t, const Vec& x) {
    if (max_dy_deviation(s, t) > 0.25) throw Error(ErrorKind::NotInvertibleYet, "|Dy - I| exceeds 1/4");
    return m.invert(t, x);
}

nlohmann::json MotionBounds::to_json() const {
    return {{"sup_dy_minus_identity", sup_dy_dev},
            {"sup_dt_dy", sup_dt_dy},
            {"sup_eps_dz", sup_eps_dz},
            {"envelope_violation", envelope_violation},
            {"sup_b_ratio", sup_b_ratio},
            {"min_det_dy", min_det_dy},
            {"t_v", t_v},
            {"t_v_is_end", t_v_is_end}};
}

MotionBounds check_motion_bounds(const MotionState& s, const Motion& m) {
    MotionBounds b;
    const int d = s.dim;
    std::vector<double> dev_t(s.times.size(), 0.0);
    for (const auto& tr : s.traj)
        for (std::size_t k = 0; k < s.times.size(); ++k) {
            const MotionPoint& p = tr[k];
            if (!p.moving) continue;
            double t = s.times[k];
            double dev = spectral_norm(p.dy - Mat::Identity(), d);
            dev_t[k] = std::max(dev_t[k], dev);
            b.sup_dy_dev = std::max(b.sup_dy_dev, dev);
            b.min_det_dy = std::min(b.min_det_dy, det_d(p.dy, d));
            b.sup_eps_dz = std::max(b.sup_eps_dz, s.eps * spectral_norm(p.dz, d));
            MotionPoint dp;
            m.rhs(t, p, dp);
            b.sup_dt_dy = std::max(b.sup_dt_dy, spectral_norm(dp.dy, d));
            double nz = p.z.norm();
            double up = std::exp(s.eps * s.lv * t), lo = std::exp(-s.eps * s.lv * t);
            b.envelope_violation = std::max({b.envelope_violation, nz - up, lo - nz});
            b.sup_b_ratio = std::max(b.sup_b_ratio, unit_jacobian(p.z, d).norm() * nz / std::sqrt(2.0));
        }
    b.t_v = s.times.empty() ? 0.0 : s.times.back();
    b.t_v_is_end = true;
    for (std::size_t k = 0; k < s.times.size(); ++k)
        if (dev_t[k] > 0.25) {
            b.t_v = k > 0 ? s.times[k - 1] : 0.0;
            b.t_v_is_end = false;
            break;
        }
    return b;
}

LevelSet::LevelSet(std::shared_ptr<const Motion> m) : m_(std::move(m)), g_(m_->domain().cell().a()) {}

LevelSet::Value LevelSet::tilde(double t, const Vec& x, const Vec& guess) const {
    Value out;
    MotionPoint p;
    out.x0 = m_->invert(t, x, guess, &p);
    TubePoint tp;
    const PeriodicDomain& dom = m_->domain();
    if (p.moving && dom.try_tube_coords(out.x0, tp)) {
        out.in_tube = true;
        out.phi_tilde = -tp.d;
        out.grad = p.z;
    } else {
        out.phi_tilde = dom.in_inclusion(x) ? dom.tube_halfwidth() : -dom.tube_halfwidth();
    }
    return out;
}

double LevelSet::phi(double t, const Vec& x) const {
    const double e = m_->eps();
    return e * g_.value(tilde(t, x).phi_tilde / e);
}

} // namespace homog
