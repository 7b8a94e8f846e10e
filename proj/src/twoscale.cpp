#include "homog/twoscale.hpp"

#include <Eigen/Sparse>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>

namespace homog {

namespace {

constexpr double kPi = std::numbers::pi;
const double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

// ---------------------------------------------------------------- data

double ProfileSpec::eval(const Vec& x, const Vec& lo, const Vec& hi) const {
    if (amplitude == 0.0) return constant;
    return constant + amplitude * std::cos(mode * kPi * (x(0) - lo(0)) / (hi(0) - lo(0)));
}

nlohmann::json ProfileSpec::to_json() const {
    return {{"constant", constant}, {"amplitude", amplitude}, {"mode", mode}};
}

ProfileSpec ProfileSpec::from_json(const nlohmann::json& j, const std::string& path) {
    if (!j.is_object()) throw Error(ErrorKind::ConfigInvalid, path + ": expected an object");
    ProfileSpec p;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "constant" || k == "amplitude") {
            if (!it->is_number()) throw Error(ErrorKind::ConfigInvalid, path + "." + k + ": expected a number");
            (k == "constant" ? p.constant : p.amplitude) = it->get<double>();
        } else if (k == "mode") {
            if (!it->is_number_integer()) throw Error(ErrorKind::ConfigInvalid, path + ".mode: expected an integer");
            p.mode = it->get<int>();
        } else {
            throw Error(ErrorKind::ConfigInvalid, path + "." + k + ": unknown key");
        }
    }
    return p;
}

double macro_space_factor(const VelocitySpec& spec, const Vec& lo, const Vec& hi, int dim, const Vec& x) {
    if (spec.modulation == 0.0) return 1.0;
    double p = 1.0;
    for (int i = 0; i < dim; ++i) p *= std::sin(2.0 * kPi * (x(i) - lo(i)) / (hi(i) - lo(i)));
    return 1.0 + spec.modulation * p;
}

// ---------------------------------------------------------------- micro geometry

MicroGeometry::MicroGeometry(std::shared_ptr<const ImplicitSurfaceCell> cell, const VelocitySpec& spec, double s_max,
                             int samples, double ds, double min_radius)
    : cell_(std::move(cell)), spec_(spec), s_max_(s_max), ds_(ds), min_radius_(min_radius) {
    if (!cell_ || cell_->dim() != 2 || cell_->empty())
        throw Error(ErrorKind::InvalidArgument, "micro geometry needs a non-empty 2D cell");
    if (samples < 8) throw Error(ErrorKind::InvalidArgument, "too few interface samples");
    for (const auto& s : cell_->surface_samples(samples)) seeds_.push_back(s.point);
    // at eps = 1 the box (-1, 2)^d holds exactly the cell k = 0
    dom_ = std::make_shared<PeriodicDomain>(tile(cell_, 1.0, pad(-1.0, -1.0), pad(2.0, 2.0)));
    if (dom_->cells().size() != 1) throw Error(ErrorKind::InvalidArgument, "unexpected unit tiling");
    VelocitySpec unit;
    unit.family = spec_.family == "zero" ? "tube" : spec_.family;
    unit.amplitude = 1.0;
    unit.micro_modulation = spec_.micro_modulation;
    unit_ = make_velocity(unit, dom_);
    if (!(s_max_ >= 0.0)) throw Error(ErrorKind::InvalidArgument, "negative pseudo-time range");
    if (ds_ <= 0.0) ds_ = s_max_ > 0.0 ? s_max_ / 64.0 : 1.0;
    if (s_max_ > 0.0) ds_ = s_max_ / std::ceil(s_max_ / ds_ - 1e-9);
}

double MicroGeometry::pseudo_time(const VelocitySpec& spec, const Vec& lo, const Vec& hi, double t, const Vec& x) {
    if (spec.family == "zero" || spec.amplitude == 0.0) return 0.0;
    if (spec.eps_power > 0.0) return 0.0;
    if (spec.eps_power < 0.0) throw Error(ErrorKind::InvalidArgument, "the limit velocity needs eps_power >= 0");
    return spec.amplitude * macro_space_factor(spec, lo, hi, 2, x) * (t + 0.5 * spec.time_rate * t * t);
}

double MicroGeometry::unit_velocity(const Vec& y) const { return unit_->value(0.0, y); }

const MicroGeometry::Branch& MicroGeometry::branch(int sign) const {
    auto& slot = sign > 0 ? plus_ : minus_;
    if (slot) return *slot;
    VelocitySpec sp;
    sp.family = spec_.family == "zero" ? "tube" : spec_.family;
    sp.amplitude = sign;
    sp.micro_modulation = spec_.micro_modulation;
    auto b = std::make_unique<Branch>();
    // internal step well below a / (10 sup|w|)
    double hmax = cell_->a() / (20.0 * (1.0 + std::fabs(spec_.micro_modulation)));
    int sub = std::max(1, static_cast<int>(std::ceil(ds_ / hmax)));
    b->motion = std::make_shared<Motion>(dom_, make_velocity(sp, dom_), s_max_, ds_, sub);
    b->traj.resize(seeds_.size());
    parallel_for(seeds_.size(), [&](std::size_t i) { b->traj[i] = b->motion->trace(seeds_[i]); });
    slot = std::move(b);
    return *slot;
}

std::vector<Vec> MicroGeometry::points(double S) const {
    if (S == 0.0) return seeds_;
    const double s = std::fabs(S);
    if (s > s_max_ * (1.0 + 1e-12)) throw Error(ErrorKind::InvalidArgument, "pseudo-time beyond the traced range");
    const Branch* b;
    {
        std::lock_guard<std::mutex> lk(mu_);
        b = &branch(S > 0.0 ? 1 : -1);
    }
    const Motion& m = *b->motion;
    int last = m.n_times() - 1;
    int k = std::min(last - 1, static_cast<int>(std::floor(s / ds_)));
    double tau = (s - k * ds_) / ds_;
    double h00 = (1 + 2 * tau) * (1 - tau) * (1 - tau), h10 = tau * (1 - tau) * (1 - tau);
    double h01 = tau * tau * (3 - 2 * tau), h11 = tau * tau * (tau - 1);
    std::vector<Vec> out(seeds_.size());
    for (std::size_t i = 0; i < seeds_.size(); ++i) {
        const MotionPoint& p0 = b->traj[i][k];
        const MotionPoint& p1 = b->traj[i][k + 1];
        MotionPoint d0, d1;
        m.rhs(m.time(k), p0, d0);
        m.rhs(m.time(k + 1), p1, d1);
        out[i] = h00 * p0.y + h10 * ds_ * d0.y + h01 * p1.y + h11 * ds_ * d1.y;
    }
    return out;
}

double MicroGeometry::displacement_ratio(double S) const {
    auto p = points(S);
    double r = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) r = std::max(r, (p[i] - seeds_[i]).norm());
    return r / cell_->a();
}

std::shared_ptr<const StarInclusion> MicroGeometry::at(double S) const {
    {
        std::lock_guard<std::mutex> lk(mu_);
        auto it = memo_.find(S);
        if (it != memo_.end()) return it->second;
    }
    std::vector<Vec> pts = points(S);
    const Vec c = cell_->shape().center();
    for (const auto& p : pts)
        if ((p - c).norm() < min_radius_)
            throw Error(ErrorKind::MinRadiusReached, "inclusion radius fell below " + std::to_string(min_radius_));
    std::shared_ptr<const StarInclusion> inc;
    try {
        inc = std::make_shared<StarInclusion>(StarInclusion::through_points(c, pts));
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::MinRadiusReached) throw;
        throw Error(ErrorKind::InclusionEscape, std::string("interface is no longer star-shaped: ") + e.what());
    }
    if (inc->min_radius() < min_radius_)
        throw Error(ErrorKind::MinRadiusReached, "inclusion radius fell below " + std::to_string(min_radius_));
    if (!(inc->clearance() > 0.0)) throw Error(ErrorKind::InclusionEscape, "inclusion reached the cell boundary");
    std::lock_guard<std::mutex> lk(mu_);
    if (memo_.size() > 4096) memo_.clear();
    memo_[S] = inc;
    return inc;
}

// ---------------------------------------------------------------- micro heat

MicroHeat::MicroHeat(std::shared_ptr<const Inclusion> inc, int m, double dt, double kappa2)
    : inc_(std::move(inc)), m_(m), h_(1.0 / m), dt_(dt), k2_(kappa2) {
    if (!inc_ || inc_->dim() != 2) throw Error(ErrorKind::InvalidArgument, "micro heat solver is 2D");
    if (m < 4 || !(dt > 0.0) || !(kappa2 > 0.0)) throw Error(ErrorKind::InvalidArgument, "bad micro parameters");
    const int nn = m * m;
    idx_.assign(nn, -1);
    for (int i = 0; i < nn; ++i)
        if (inc_->phi(node(i)) < 0.0) {
            idx_[i] = n_++;
            node_of_.push_back(i);
        }
    if (n_ == 0) throw Error(ErrorKind::MinRadiusReached, "inclusion holds no micro grid node");
    auto phi = [&](const Vec& y) { return inc_->phi(y); };
    const double mass = h_ * h_ / dt_;
    std::vector<Eigen::Triplet<double>> trip;
    bnd_ = Eigen::VectorXd::Zero(n_);
    const int di[4] = {1, -1, 0, 0}, dj[4] = {0, 0, 1, -1};
    for (int r = 0; r < n_; ++r) {
        int g = node_of_[r];
        int i = g % m, j = g / m;
        Vec p = node(g);
        double diag = mass;
        for (int q = 0; q < 4; ++q) {
            int a = i + di[q], b = j + dj[q];
            int nb = (a >= 0 && a < m && b >= 0 && b < m) ? idx_[a + m * b] : -1;
            if (nb >= 0) {
                diag += k2_;
                trip.emplace_back(r, nb, -k2_);
            } else {
                Vec qv = p + h_ * Vec(di[q], dj[q], 0.0);
                double s = std::max(first_crossing(phi, p, qv), 1e-6);
                diag += k2_ / s;
                bnd_(r) += k2_ / s;
            }
        }
        trip.emplace_back(r, r, diag);
    }
    a_.resize(n_, n_);
    a_.setFromTriplets(trip.begin(), trip.end());
    ldlt_ = std::make_shared<Factor>(a_);
    if (ldlt_->info() != Eigen::Success) throw Error(ErrorKind::SolverDiverged, "micro factorization failed");

    // phase-2 volume per control volume by 8 x 8 midpoint sampling, scaled to |Y2|
    vol_ = inc_->volume();
    frac_.assign(nn, 0.0);
    const int sub = 8;
    double total = 0.0;
    for (int g = 0; g < nn; ++g) {
        Vec c = node(g);
        if (std::fabs(inc_->phi(c)) > 2.0 * h_ && idx_[g] < 0) continue;
        int cnt = 0;
        for (int a = 0; a < sub; ++a)
            for (int b = 0; b < sub; ++b) {
                Vec y = c + h_ * Vec((a + 0.5) / sub - 0.5, (b + 0.5) / sub - 0.5, 0.0);
                cnt += inc_->phi(y) < 0.0;
            }
        frac_[g] = h_ * h_ * cnt / (sub * sub);
        total += frac_[g];
    }
    if (total > 0.0)
        for (double& f : frac_) f *= vol_ / total;

    Eigen::VectorXd u1 = ldlt_->solve(bnd_);
    double res = (a_ * u1 - bnd_).lpNorm<Eigen::Infinity>() / std::max(bnd_.lpNorm<Eigen::Infinity>(), 1e-300);
    if (!(res <= 1e-10)) throw Error(ErrorKind::SolverDiverged, "micro residual " + std::to_string(res));
    u1_.assign(u1.data(), u1.data() + n_);
    a1_ = 0.0;
    for (int g = 0; g < nn; ++g) a1_ += frac_[g] * (idx_[g] >= 0 ? u1_[idx_[g]] : 1.0);
}

Vec MicroHeat::node(int i) const { return Vec(h_ * (i % m_ + 0.5), h_ * (i / m_ + 0.5), 0.0); }

MicroHeat::Response MicroHeat::solve(const std::vector<double>& old, const std::vector<double>& f) const {
    Eigen::VectorXd b(n_);
    for (int r = 0; r < n_; ++r) {
        int g = node_of_[r];
        if (!std::isfinite(old[g])) throw Error(ErrorKind::InvalidArgument, "missing old micro value");
        b(r) = h_ * h_ * (old[g] / dt_ + f[g]);
    }
    Eigen::VectorXd u = ldlt_->solve(b);
    Response out;
    double bn = b.lpNorm<Eigen::Infinity>();
    out.residual = bn > 0.0 ? (a_ * u - b).lpNorm<Eigen::Infinity>() / bn : 0.0;
    if (!u.allFinite() || !(out.residual <= 1e-10))
        throw Error(ErrorKind::SolverDiverged, "micro residual " + std::to_string(out.residual));
    out.u0.assign(u.data(), u.data() + n_);
    for (int r = 0; r < n_; ++r) out.a0 += frac_[node_of_[r]] * out.u0[r];
    return out;
}

std::vector<double> MicroHeat::combine(const Response& r, double g) const {
    std::vector<double> full(static_cast<std::size_t>(m_) * m_, kNaN);
    for (int k = 0; k < n_; ++k) full[node_of_[k]] = r.u0[k] + g * u1_[k];
    return full;
}

double MicroHeat::mass(const std::vector<double>& full, double g) const {
    double s = 0.0;
    for (std::size_t i = 0; i < frac_.size(); ++i)
        if (frac_[i] != 0.0) s += frac_[i] * (idx_[i] >= 0 ? full[i] : g);
    return s;
}

Vec MicroHeat::gradient(const std::vector<double>& full, double g, const Vec& y) const {
    double u = y(0) / h_ - 0.5, v = y(1) / h_ - 0.5;
    int i = static_cast<int>(std::floor(u)), j = static_cast<int>(std::floor(v));
    double fu = u - i, fv = v - j;
    auto val = [&](int a, int b) {
        if (a < 0 || a >= m_ || b < 0 || b >= m_) return g;
        int k = a + m_ * b;
        return idx_[k] >= 0 ? full[k] : g;
    };
    double f00 = val(i, j), f10 = val(i + 1, j), f01 = val(i, j + 1), f11 = val(i + 1, j + 1);
    return Vec(((f10 - f00) * (1 - fv) + (f11 - f01) * fv) / h_, ((f01 - f00) * (1 - fu) + (f11 - f10) * fu) / h_,
               0.0);
}

// ---------------------------------------------------------------- two-scale solver

TwoScaleSolver::TwoScaleSolver(TwoScaleConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.cell || cfg_.cell->dim() != 2) throw Error(ErrorKind::InvalidArgument, "two-scale solver is 2D");
    if (cfg_.macro_n < 1 || cfg_.micro_n < 4 || cfg_.cell_n < 4 || !(cfg_.dt > 0.0) || cfg_.steps < 0)
        throw Error(ErrorKind::InvalidArgument, "bad two-scale discretization");
    if (!(cfg_.kappa1 > 0.0) || !(cfg_.kappa2 > 0.0)) throw Error(ErrorKind::InvalidArgument, "bad conductivities");
    nx_ = ny_ = cfg_.macro_n;
    hx_ = (cfg_.hi(0) - cfg_.lo(0)) / nx_;
    hy_ = (cfg_.hi(1) - cfg_.lo(1)) / ny_;
    for (int j = 0; j <= ny_; ++j)
        for (int i = 0; i <= nx_; ++i) {
            x_.push_back(pad(cfg_.lo(0) + i * hx_, cfg_.lo(1) + j * hy_));
            double wx = (i == 0 || i == nx_) ? 0.5 : 1.0, wy = (j == 0 || j == ny_) ? 0.5 : 1.0;
            w_.push_back(wx * wy * hx_ * hy_);
        }
    if (!cfg_.cell->empty()) {
        const double T = cfg_.steps * cfg_.dt;
        double smax = 0.0;
        for (const auto& x : x_)
            smax = std::max(smax, std::fabs(MicroGeometry::pseudo_time(cfg_.velocity, cfg_.lo, cfg_.hi, T, x)));
        smax *= 1.0 + 1e-9;
        double ds = smax > 0.0 ? smax / std::max(16, cfg_.steps) : 0.0;
        geo_ = std::make_unique<MicroGeometry>(cfg_.cell, cfg_.velocity, smax, cfg_.geometry_samples, ds,
                                               cfg_.min_radius);
    }
    const std::size_t n = x_.size();
    st_.theta.resize(n);
    st_.micro.resize(n);
    for (std::size_t i = 0; i < n; ++i) st_.theta[i] = cfg_.theta1.eval(x_[i], cfg_.lo, cfg_.hi);
    evolve_micro_geometry(0.0);
    refresh_tensors();
    for (std::size_t i = 0; i < n; ++i) {
        MicroNode& node = st_.micro[i];
        if (!node.inclusion) continue;
        auto sys = micro_system(node.inclusion);
        double th2 = cfg_.theta2.eval(x_[i], cfg_.lo, cfg_.hi);
        node.theta2.assign(static_cast<std::size_t>(cfg_.micro_n) * cfg_.micro_n, kNaN);
        for (std::size_t g = 0; g < node.theta2.size(); ++g)
            if (sys->index()[g] >= 0) node.theta2[g] = th2;
        node.m2 = sys->mass(node.theta2, st_.theta[i]);
    }
}

void TwoScaleSolver::evolve_micro_geometry(double t) {
    const std::size_t n = x_.size();
    if (!geo_) {
        for (auto& node : st_.micro) node = MicroNode{};
        return;
    }
    std::vector<MicroNode> next = st_.micro;
    const double time_factor = 1.0 + cfg_.velocity.time_rate * t;
    for (std::size_t i = 0; i < n; ++i) {
        MicroNode& node = next[i];
        node.S = MicroGeometry::pseudo_time(cfg_.velocity, cfg_.lo, cfg_.hi, t, x_[i]);
        auto inc = geo_->at(node.S);
        node.inclusion = inc;
        node.y2 = inc->volume();
        auto it = unit_flux_.find(inc.get());
        double per = 0.0, wint = 0.0;
        for (const auto& s : inc->surface_samples(256)) {
            per += s.weight;
            if (it == unit_flux_.end()) wint += s.weight * geo_->unit_velocity(s.point);
        }
        if (it == unit_flux_.end()) it = unit_flux_.emplace(inc.get(), wint).first;
        node.perimeter = per;
        double amp = 0.0;
        if (cfg_.velocity.family != "zero" && cfg_.velocity.eps_power == 0.0)
            amp = cfg_.velocity.amplitude * macro_space_factor(cfg_.velocity, cfg_.lo, cfg_.hi, 2, x_[i]) * time_factor;
        node.v_gamma = amp * it->second;
    }
    st_.micro = std::move(next);
    if (unit_flux_.size() > 8192) unit_flux_.clear();
}

namespace {

double radial_gap(const Inclusion* a, const Inclusion* b) {
    auto sa = dynamic_cast<const StarInclusion*>(a);
    auto sb = dynamic_cast<const StarInclusion*>(b);
    if (!sa || !sb) return std::numeric_limits<double>::infinity();
    if ((sa->center() - sb->center()).norm() > 0.0) return std::numeric_limits<double>::infinity();
    double g = 0.0;
    for (int k = 0; k < 64; ++k) {
        double t = 2.0 * kPi * k / 64;
        g = std::max(g, std::fabs(sa->radius(t) - sb->radius(t)));
    }
    return g;
}

} // namespace

void TwoScaleSolver::refresh_tensors() {
    std::vector<std::shared_ptr<const Inclusion>> todo;
    std::set<const Inclusion*> seen;
    for (auto& node : st_.micro) {
        if (!node.inclusion) {
            node.kappa = cfg_.kappa1 * eye_d(2);
            continue;
        }
        if (node.kappa_geometry == node.inclusion) continue;
        if (node.kappa_geometry &&
            radial_gap(node.kappa_geometry.get(), node.inclusion.get()) <= cfg_.refresh_tol)
            continue;
        if (seen.insert(node.inclusion.get()).second) todo.push_back(node.inclusion);
    }
    if (todo.empty()) return;
    std::vector<Mat> out(todo.size());
    std::vector<int> solved(todo.size(), 0);
    parallel_for(todo.size(), [&](std::size_t k) {
        CellState cs = make_cell_state(todo[k], cfg_.cell_n, cfg_.cell_scheme);
        if (cfg_.cache) {
            int before = cfg_.cache->solves();
            out[k] = cfg_.cache->get(cs, cfg_.kappa1).kappa;
            solved[k] = cfg_.cache->solves() != before;
        } else {
            out[k] = effective_tensor(cs, cfg_.kappa1).kappa;
            solved[k] = 1;
        }
    });
    for (int s : solved) cell_solves_ += s;
    std::map<const Inclusion*, std::size_t> pos;
    for (std::size_t k = 0; k < todo.size(); ++k) pos[todo[k].get()] = k;
    for (auto& node : st_.micro) {
        if (!node.inclusion) continue;
        auto it = pos.find(node.inclusion.get());
        if (it == pos.end()) continue;
        node.kappa = out[it->second];
        node.kappa_geometry = node.inclusion;
    }
}

std::shared_ptr<const MicroHeat> TwoScaleSolver::micro_system(const std::shared_ptr<const Inclusion>& inc) {
    auto it = systems_.find(inc.get());
    if (it != systems_.end()) return it->second;
    auto sys = std::make_shared<const MicroHeat>(inc, cfg_.micro_n, cfg_.dt, cfg_.kappa2);
    systems_.emplace(inc.get(), sys);
    return sys;
}

double TwoScaleSolver::enthalpy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < x_.size(); ++i)
        e += w_[i] * ((1.0 - st_.micro[i].y2) * st_.theta[i] + st_.micro[i].m2);
    return e;
}

std::vector<double> TwoScaleSolver::step_macro(const std::vector<double>& mass, const std::vector<double>& rhs,
                                               double* res) const {
    const int nv = static_cast<int>(x_.size());
    const int stride = nx_ + 1;
    // 2 x 2 Gauss on the reference square
    const double g[2] = {0.5 - 0.5 / std::sqrt(3.0), 0.5 + 0.5 / std::sqrt(3.0)};
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(nx_) * ny_ * 16 + nv);
    for (int i = 0; i < nv; ++i) trip.emplace_back(i, i, mass[i]);
    for (int ey = 0; ey < ny_; ++ey)
        for (int ex = 0; ex < nx_; ++ex) {
            int v[4] = {ex + stride * ey, ex + 1 + stride * ey, ex + stride * (ey + 1), ex + 1 + stride * (ey + 1)};
            Mat k = Mat::Zero();
            for (int a = 0; a < 4; ++a) k += 0.25 * st_.micro[v[a]].kappa;
            double ke[4][4] = {};
            for (double u : g)
                for (double w : g) {
                    double gx[4] = {-(1 - w) / hx_, (1 - w) / hx_, -w / hx_, w / hx_};
                    double gy[4] = {-(1 - u) / hy_, -u / hy_, (1 - u) / hy_, u / hy_};
                    for (int a = 0; a < 4; ++a)
                        for (int b = 0; b < 4; ++b) {
                            double kg0 = k(0, 0) * gx[b] + k(0, 1) * gy[b];
                            double kg1 = k(1, 0) * gx[b] + k(1, 1) * gy[b];
                            ke[a][b] += 0.25 * hx_ * hy_ * (gx[a] * kg0 + gy[a] * kg1);
                        }
                }
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b) trip.emplace_back(v[a], v[b], cfg_.dt * ke[a][b]);
        }
    Eigen::SparseMatrix<double> A(nv, nv);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd b(nv);
    for (int i = 0; i < nv; ++i) b(i) = rhs[i];
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::SolverDiverged, "macro factorization failed");
    Eigen::VectorXd x = ldlt.solve(b);
    double bn = b.lpNorm<Eigen::Infinity>();
    double r = bn > 0.0 ? (A * x - b).lpNorm<Eigen::Infinity>() / bn : 0.0;
    if (res) *res = r;
    if (!x.allFinite() || !(r <= 1e-10)) throw Error(ErrorKind::SolverDiverged, "macro residual " + std::to_string(r));
    return std::vector<double>(x.data(), x.data() + nv);
}

LedgerRow TwoScaleSolver::step() {
    const std::size_t n = x_.size();
    const double dt = cfg_.dt, t1 = st_.t + dt;
    const double e0 = enthalpy();
    std::vector<double> theta0 = st_.theta, y2_0(n), m2_0(n), vg0(n);
    std::vector<std::vector<double>> th2_0(n);
    for (std::size_t i = 0; i < n; ++i) {
        y2_0[i] = st_.micro[i].y2;
        m2_0[i] = st_.micro[i].m2;
        vg0[i] = st_.micro[i].v_gamma;
        th2_0[i] = st_.micro[i].theta2;
    }
    TwoScaleState backup = st_;
    try {
        evolve_micro_geometry(t1);
        int solves_before = cell_solves_;
        refresh_tensors();

        // micro responses; one factorization per distinct geometry
        std::map<const Inclusion*, std::shared_ptr<const MicroHeat>> used;
        std::vector<std::shared_ptr<const MicroHeat>> sys(n);
        for (std::size_t i = 0; i < n; ++i) {
            if (!st_.micro[i].inclusion) continue;
            sys[i] = micro_system(st_.micro[i].inclusion);
            used[st_.micro[i].inclusion.get()] = sys[i];
        }
        systems_.swap(used);
        std::vector<MicroHeat::Response> resp(n);
        parallel_for(n, [&](std::size_t i) {
            if (!sys[i]) return;
            const MicroHeat& s = *sys[i];
            std::vector<double> old(static_cast<std::size_t>(s.m()) * s.m(), kNaN);
            std::vector<double> f(old.size(), cfg_.f2.eval(x_[i], cfg_.lo, cfg_.hi));
            for (std::size_t g = 0; g < old.size(); ++g) {
                if (s.index()[g] < 0) continue;
                double prev = th2_0[i].empty() ? kNaN : th2_0[i][g];
                old[g] = std::isfinite(prev) ? prev : theta0[i];
            }
            resp[i] = s.solve(old, f);
        });

        std::vector<double> mass(n), rhs(n), pred(n, 0.0);
        double sources = 0.0, latent = 0.0, latent_expected = 0.0, solver_res = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const MicroNode& node = st_.micro[i];
            double y1n = 1.0 - node.y2, y1o = 1.0 - y2_0[i];
            double a0 = sys[i] ? resp[i].a0 : 0.0, a1 = sys[i] ? sys[i]->a1() : 0.0;
            double src = cfg_.f1.eval(x_[i], cfg_.lo, cfg_.hi) * y1n + cfg_.f2.eval(x_[i], cfg_.lo, cfg_.hi) * node.y2;
            double lat = cfg_.latent * (node.y2 - y2_0[i]);
            sources += w_[i] * dt * src;
            latent += w_[i] * lat;
            latent_expected += w_[i] * cfg_.latent * dt * 0.5 * (vg0[i] + node.v_gamma);
            if (sys[i]) solver_res = std::max(solver_res, resp[i].residual);
            double base = y1o * theta0[i] + m2_0[i] + dt * src + lat;
            if (cfg_.coupling == Coupling::Monolithic) {
                mass[i] = w_[i] * (y1n + a1);
                rhs[i] = w_[i] * (base - a0);
            } else {
                pred[i] = a0 + a1 * theta0[i];
                mass[i] = w_[i] * y1n;
                rhs[i] = w_[i] * (base - pred[i]);
            }
        }
        double macro_res = 0.0;
        std::vector<double> theta1 = step_macro(mass, rhs, &macro_res);
        solver_res = std::max(solver_res, macro_res);

        double flux = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            MicroNode& node = st_.micro[i];
            if (!sys[i]) continue;
            double g = cfg_.coupling == Coupling::Monolithic ? theta1[i] : theta0[i];
            node.theta2 = sys[i]->combine(resp[i], g);
            node.m2 = cfg_.coupling == Coupling::Monolithic ? resp[i].a0 + sys[i]->a1() * g : pred[i];
            const MicroHeat& s = *sys[i];
            const auto& th2 = node.theta2;
            InterfaceSource src = interface_source(
                node.inclusion->surface_samples(64), nullptr,
                [&](const Vec& y) { return s.gradient(th2, g, y); }, cfg_.latent, cfg_.kappa2);
            flux += w_[i] * src.flux;
        }
        st_.theta = std::move(theta1);
        st_.t = t1;
        ++st_.step;

        LedgerRow row;
        row.step = st_.step;
        row.t = t1;
        double wsum = 0.0, tsum = 0.0, per = 0.0, ktr = 0.0, y2m = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const MicroNode& node = st_.micro[i];
            wsum += w_[i];
            tsum += w_[i] * st_.theta[i];
            per += w_[i] * node.perimeter;
            ktr += w_[i] * (node.kappa(0, 0) + node.kappa(1, 1));
            y2m += w_[i] * node.y2;
            scale += w_[i] * ((1.0 - node.y2) * std::fabs(st_.theta[i]) + std::fabs(node.m2));
        }
        row.mean_theta = tsum / wsum;
        row.enthalpy = enthalpy();
        row.sources = sources;
        row.latent = latent;
        row.latent_expected = latent_expected;
        row.interface_flux = flux / wsum;
        scale = std::max({scale, std::fabs(e0), std::fabs(sources) + std::fabs(latent), 1e-300});
        row.residual = (row.enthalpy - e0 - sources - latent) / scale;
        row.interface_mean = per / wsum;
        row.kappa_trace_mean = ktr / wsum;
        row.y2_mean = y2m / wsum;
        row.cell_solves = cell_solves_ - solves_before;
        row.solver_residual = solver_res;
        return row;
    } catch (...) {
        st_ = std::move(backup);
        throw;
    }
}

double TwoScaleSolver::interpolate(const std::vector<double>& f, const Vec& x) const {
    double u = std::clamp((x(0) - cfg_.lo(0)) / hx_, 0.0, static_cast<double>(nx_));
    double v = std::clamp((x(1) - cfg_.lo(1)) / hy_, 0.0, static_cast<double>(ny_));
    int i = std::min(nx_ - 1, static_cast<int>(u)), j = std::min(ny_ - 1, static_cast<int>(v));
    double a = u - i, b = v - j;
    const int s = nx_ + 1;
    return (1 - a) * (1 - b) * f[i + s * j] + a * (1 - b) * f[i + 1 + s * j] + (1 - a) * b * f[i + s * (j + 1)] +
           a * b * f[i + 1 + s * (j + 1)];
}

std::vector<double> TwoScaleSolver::phase1_density() const {
    std::vector<double> out(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) out[i] = (1.0 - st_.micro[i].y2) * st_.theta[i];
    return out;
}

std::vector<double> TwoScaleSolver::phase2_density() const {
    std::vector<double> out(x_.size());
    for (std::size_t i = 0; i < x_.size(); ++i) out[i] = st_.micro[i].m2;
    return out;
}

TwoScaleRun run_two_scale(TwoScaleSolver& solver) {
    TwoScaleRun run;
    run.times.push_back(solver.state().t);
    run.phase1.push_back(solver.phase1_density());
    run.phase2.push_back(solver.phase2_density());
    for (int k = 0; k < solver.config().steps; ++k) {
        try {
            run.ledger.push_back(solver.step());
        } catch (const Error& e) {
            run.failure = e.what();
            run.failure_kind = e.kind();
            break;
        }
        run.times.push_back(solver.state().t);
        run.phase1.push_back(solver.phase1_density());
        run.phase2.push_back(solver.phase2_density());
    }
    return run;
}

void write_ledger_csv(const std::string& path, const std::vector<LedgerRow>& rows) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
    f << "step,t,mean_theta,enthalpy,sources,latent,latent_expected,interface_flux,residual,interface_mean,"
         "kappa_trace_mean,y2_mean,solver_residual\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      r.step, r.t, r.mean_theta, r.enthalpy, r.sources, r.latent, r.latent_expected,
                      r.interface_flux, r.residual, r.interface_mean, r.kappa_trace_mean, r.y2_mean,
                      r.solver_residual);
        f << buf;
    }
}

} // namespace homog
