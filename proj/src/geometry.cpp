#include "homog/geometry.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

namespace homog {

namespace {

constexpr double kPi = std::numbers::pi;

Vec head_only(const Vec& v, int d) {
    Vec r = Vec::Zero();
    r.head(d) = v.head(d);
    return r;
}

nlohmann::json vec_json(const Vec& v, int d) {
    nlohmann::json j = nlohmann::json::array();
    for (int i = 0; i < d; ++i) j.push_back(v(i));
    return j;
}

class Disk final : public Shape {
public:
    Disk(const Vec& c, double r, int d) : c_(head_only(c, d)), r_(r), d_(d) {}
    int dim() const override { return d_; }
    double phi(const Vec& y) const override { return (head_only(y, d_) - c_).norm() - r_; }
    Vec grad(const Vec& y) const override {
        Vec u = head_only(y, d_) - c_;
        return u / u.norm();
    }
    Mat hess(const Vec& y) const override {
        Vec u = head_only(y, d_) - c_;
        double nu = u.norm();
        Vec w = u / nu;
        return (eye_d(d_) - w * w.transpose()) / nu;
    }
    Vec center() const override { return c_; }
    double reach() const override { return r_; }
    nlohmann::json describe() const override {
        return {{"type", "disk"}, {"center", vec_json(c_, d_)}, {"radius", r_}};
    }

private:
    Vec c_;
    double r_;
    int d_;
};

class Ellipse final : public Shape {
public:
    Ellipse(const Vec& c, const Vec& semi, int d) : c_(head_only(c, d)), semi_(semi), d_(d) {
        dinv_ = Mat::Zero();
        amin_ = semi(0);
        amax_ = semi(0);
        for (int i = 0; i < d; ++i) {
            dinv_(i, i) = 1.0 / (semi(i) * semi(i));
            amin_ = std::min(amin_, semi(i));
            amax_ = std::max(amax_, semi(i));
        }
    }
    int dim() const override { return d_; }
    double phi(const Vec& y) const override { return amin_ * (rho(y) - 1.0); }
    Vec grad(const Vec& y) const override {
        Vec u = head_only(y, d_) - c_;
        return amin_ * (dinv_ * u) / rho(y);
    }
    Mat hess(const Vec& y) const override {
        Vec u = head_only(y, d_) - c_;
        double r = rho(y);
        Vec du = dinv_ * u;
        return amin_ * (dinv_ / r - du * du.transpose() / (r * r * r));
    }
    Vec center() const override { return c_; }
    double reach() const override { return amin_ * amin_ / amax_; }
    nlohmann::json describe() const override {
        return {{"type", "ellipse"}, {"center", vec_json(c_, d_)}, {"semi_axes", vec_json(semi_, d_)}};
    }

private:
    double rho(const Vec& y) const {
        Vec u = head_only(y, d_) - c_;
        return std::sqrt(u.dot(dinv_ * u));
    }
    Vec c_, semi_;
    Mat dinv_;
    double amin_, amax_;
    int d_;
};

class Blob final : public Shape {
public:
    Blob(const Vec& c, double r0, std::vector<FourierMode> modes)
        : c_(head_only(c, 2)), r0_(r0), modes_(std::move(modes)) {}
    int dim() const override { return 2; }
    double phi(const Vec& y) const override {
        Vec u = head_only(y, 2) - c_;
        return u.norm() - radius(std::atan2(u(1), u(0)), 0);
    }
    Vec grad(const Vec& y) const override {
        Vec u = head_only(y, 2) - c_;
        double rho = u.norm();
        double th = std::atan2(u(1), u(0));
        Vec er(std::cos(th), std::sin(th), 0.0), et(-std::sin(th), std::cos(th), 0.0);
        return er - radius(th, 1) / rho * et;
    }
    Mat hess(const Vec& y) const override {
        Vec u = head_only(y, 2) - c_;
        double rho = u.norm();
        double th = std::atan2(u(1), u(0));
        Vec er(std::cos(th), std::sin(th), 0.0), et(-std::sin(th), std::cos(th), 0.0);
        double r1 = radius(th, 1), r2 = radius(th, 2);
        Mat dt = (r2 / (rho * rho)) * et * et.transpose() - (r1 / (rho * rho)) * (et * er.transpose() + er * et.transpose());
        return et * et.transpose() / rho - dt;
    }
    Vec center() const override { return c_; }
    double reach() const override { return reach_; }
    nlohmann::json describe() const override {
        nlohmann::json m = nlohmann::json::array();
        for (const auto& f : modes_) m.push_back({{"k", f.k}, {"amp", f.amp}, {"phase", f.phase}});
        return {{"type", "blob"}, {"center", vec_json(c_, 2)}, {"r0", r0_}, {"modes", m}};
    }
    // derivative of order q of R(theta)
    double radius(double th, int q) const {
        double s = (q == 0) ? 1.0 : 0.0;
        for (const auto& f : modes_) {
            double arg = f.k * th + f.phase;
            if (q == 0) s += f.amp * std::cos(arg);
            else if (q == 1) s -= f.amp * f.k * std::sin(arg);
            else s -= f.amp * f.k * f.k * std::cos(arg);
        }
        return r0_ * s;
    }
    void set_reach(double r) { reach_ = r; }

private:
    Vec c_;
    double r0_;
    std::vector<FourierMode> modes_;
    double reach_ = 0.0;
};

class Empty final : public Shape {
public:
    explicit Empty(int d) : d_(d) {}
    int dim() const override { return d_; }
    double phi(const Vec&) const override { return 1.0; }
    Vec grad(const Vec&) const override { return Vec::Zero(); }
    Mat hess(const Vec&) const override { return Mat::Zero(); }
    Vec center() const override { return Vec::Zero(); }
    double reach() const override { return std::numeric_limits<double>::infinity(); }
    nlohmann::json describe() const override { return {{"type", "empty"}}; }

private:
    int d_;
};

// Root of phi(c + rho w) in rho, for shapes star-shaped about c.
double star_radius(const Shape& s, const Vec& c, const Vec& w) {
    double lo = 0.0, hi = 2.0;
    if (s.phi(c) >= 0.0) throw Error(ErrorKind::InvalidArgument, "shape center is not inside the inclusion");
    double rho = 0.5;
    for (int it = 0; it < 200; ++it) {
        Vec p = c + rho * w;
        double f = s.phi(p);
        if (f < 0) lo = rho;
        else hi = rho;
        double df = s.grad(p).dot(w);
        double next = (df > 0) ? rho - f / df : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::fabs(next - rho) < 1e-16 * std::max(1.0, rho) || hi - lo < 1e-16) return next;
        rho = next;
    }
    return rho;
}

std::vector<SurfaceSample> sample_star(const Shape& s, int n) {
    int d = s.dim();
    Vec c = s.center();
    std::vector<SurfaceSample> out;
    auto push = [&](const Vec& w, double dw, double param) {
        double rho = star_radius(s, c, w);
        Vec p = c + rho * w;
        Vec g = s.grad(p);
        Vec nrm = g / g.norm();
        double cosang = nrm.dot(w);
        if (cosang < 0.05) throw Error(ErrorKind::InvalidArgument, "inclusion is not star-shaped about its center");
        SurfaceSample smp;
        smp.point = p;
        smp.normal = nrm;
        smp.weight = std::pow(rho, d - 1) / cosang * dw;
        smp.param = param;
        out.push_back(smp);
    };
    if (d == 2) {
        out.reserve(n);
        for (int j = 0; j < n; ++j) {
            double th = 2.0 * kPi * j / n;
            push(Vec(std::cos(th), std::sin(th), 0.0), 2.0 * kPi / n, th);
        }
    } else {
        int nm = std::max(2, n / 2);
        std::vector<double> mu, wm;
        gauss_legendre(nm, mu, wm);
        out.reserve(static_cast<std::size_t>(nm) * n);
        for (int i = 0; i < nm; ++i) {
            double st = std::sqrt(1.0 - mu[i] * mu[i]);
            for (int j = 0; j < n; ++j) {
                double ph = 2.0 * kPi * j / n;
                push(Vec(st * std::cos(ph), st * std::sin(ph), mu[i]), wm[i] * 2.0 * kPi / n, ph);
            }
        }
    }
    return out;
}

// Constrained Newton for the foot point: gamma - y + lambda grad phi = 0,
// phi(gamma) = 0. eval(p, phi, grad, hess).
template <class Eval>
bool project_implicit(Eval&& eval, const Vec& y, int d, double scale, double tube, TubePoint& out) {
    double f;
    Vec g;
    Mat h;
    eval(y, f, g, h);
    double gn = g.norm();
    if (gn < 1e-10) return false;
    if (std::fabs(f) / gn > 3.0 * tube) return false;
    Vec p = y;
    for (int it = 0; it < 8; ++it) {
        eval(p, f, g, h);
        double g2 = g.squaredNorm();
        if (g2 < 1e-20) return false;
        Vec step = (f / g2) * g;
        p -= step;
        if (step.norm() < 1e-14 * scale) break;
    }
    eval(p, f, g, h);
    double lam = (y - p).dot(g) / g.squaredNorm();
    bool ok = false;
    for (int it = 0; it < 50; ++it) {
        eval(p, f, g, h);
        Eigen::Vector4d r;
        r.head<3>() = p - y + lam * g;
        r(3) = f;
        Eigen::Matrix4d j = Eigen::Matrix4d::Zero();
        j.topLeftCorner<3, 3>() = Mat::Identity() + lam * h;
        j.block<3, 1>(0, 3) = g;
        j.block<1, 3>(3, 0) = g.transpose();
        if (d == 2) {
            j(2, 2) = 1.0;
            r(2) = 0.0;
        }
        Eigen::Vector4d delta = -j.partialPivLu().solve(r);
        p += delta.head<3>();
        lam += delta(3);
        if (delta.head<3>().norm() <= 1e-15 * scale) {
            ok = true;
            break;
        }
        if (it > 6 && delta.head<3>().norm() <= 1e-13 * scale) {
            ok = true;
            break;
        }
    }
    if (!ok) return false;
    eval(p, f, g, h);
    Vec nrm = g / g.norm();
    out.gamma = p;
    out.normal = nrm;
    out.d = (y - p).dot(nrm);
    return std::fabs(out.d) < tube;
}

} // namespace

std::shared_ptr<const Shape> make_disk(const Vec& center, double radius, int dim) {
    if (dim != 2 && dim != 3) throw Error(ErrorKind::InvalidArgument, "dimension must be 2 or 3");
    if (!(radius > 0)) throw Error(ErrorKind::InvalidArgument, "radius must be positive");
    return std::make_shared<Disk>(center, radius, dim);
}

std::shared_ptr<const Shape> make_ellipse(const Vec& center, const Vec& semi_axes, int dim) {
    if (dim != 2 && dim != 3) throw Error(ErrorKind::InvalidArgument, "dimension must be 2 or 3");
    for (int i = 0; i < dim; ++i)
        if (!(semi_axes(i) > 0)) throw Error(ErrorKind::InvalidArgument, "semi-axes must be positive");
    return std::make_shared<Ellipse>(center, semi_axes, dim);
}

std::shared_ptr<const Shape> make_blob(const Vec& center, double r0, std::vector<FourierMode> modes) {
    double total = 0.0;
    for (const auto& m : modes) total += std::fabs(m.amp);
    if (!(r0 > 0) || total >= 1.0) throw Error(ErrorKind::InvalidArgument, "blob radius must stay positive");
    auto b = std::make_shared<Blob>(center, r0, std::move(modes));
    // reach = inf |q - p|^2 / (2 |(q - p) . n(p)|) over pairs of surface points
    auto s = sample_star(*b, 1024);
    double reach = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (i == j) continue;
            Vec dq = s[j].point - s[i].point;
            double den = 2.0 * std::fabs(dq.dot(s[i].normal));
            if (den > 0) reach = std::min(reach, dq.squaredNorm() / den);
        }
    // sampled infimum over-estimates slightly; keep a margin
    b->set_reach(0.98 * reach);
    return b;
}

std::shared_ptr<const Shape> make_empty(int dim) { return std::make_shared<Empty>(dim); }

ImplicitSurfaceCell::ImplicitSurfaceCell(std::shared_ptr<const Shape> shape, double tube_width)
    : shape_(std::move(shape)) {
    if (!shape_) throw Error(ErrorKind::InvalidArgument, "null shape");
    if (std::isinf(shape_->reach())) {
        empty_ = true;
        reach_ = shape_->reach();
        return;
    }
    reach_ = shape_->reach();
    a_ = tube_width > 0 ? tube_width : 0.5 * reach_;
    if (2.0 * a_ > reach_ * (1.0 + 1e-12))
        throw Error(ErrorKind::InvalidArgument, "tube width violates 2a <= reach");
    auto s = sample_star(*shape_, 256);
    clearance_ = std::numeric_limits<double>::infinity();
    for (const auto& p : s)
        for (int i = 0; i < dim(); ++i)
            clearance_ = std::min({clearance_, p.point(i), 1.0 - p.point(i)});
    if (!(clearance_ > a_))
        throw Error(ErrorKind::InvalidArgument, "inclusion tube is not contained in the open cell");
}

bool ImplicitSurfaceCell::try_tube_coords(const Vec& y, TubePoint& out) const {
    if (empty_) return false;
    const Shape& s = *shape_;
    auto eval = [&s](const Vec& p, double& f, Vec& g, Mat& h) {
        f = s.phi(p);
        g = s.grad(p);
        h = s.hess(p);
    };
    return project_implicit(eval, y, dim(), 1.0, a_, out);
}

TubePoint ImplicitSurfaceCell::tube_coords(const Vec& y) const {
    TubePoint t;
    if (!try_tube_coords(y, t)) throw Error(ErrorKind::OutsideTube, "point is outside the tubular neighborhood");
    return t;
}

Vec ImplicitSurfaceCell::normal(const Vec& gamma) const {
    Vec g = shape_->grad(gamma);
    double gn = g.norm();
    if (gn < 1e-10) throw Error(ErrorKind::DegenerateGradient, "vanishing gradient");
    return g / gn;
}

Mat ImplicitSurfaceCell::weingarten(const Vec& gamma) const {
    Vec g = shape_->grad(gamma);
    double gn = g.norm();
    if (gn < 1e-10) throw Error(ErrorKind::DegenerateGradient, "vanishing gradient");
    Vec n = g / gn;
    Mat p = eye_d(dim()) - n * n.transpose();
    return -(p * shape_->hess(gamma) * p) / gn;
}

std::vector<double> ImplicitSurfaceCell::principal_curvatures(const Vec& gamma) const {
    Mat k = -weingarten(gamma);
    Vec n = normal(gamma);
    if (dim() == 2) {
        Vec t(-n(1), n(0), 0.0);
        return {t.dot(k * t)};
    }
    Vec t1 = n.unitOrthogonal();
    Vec t2 = n.cross(t1);
    Eigen::Matrix2d b;
    b << t1.dot(k * t1), t1.dot(k * t2), t2.dot(k * t1), t2.dot(k * t2);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(b);
    return {es.eigenvalues()(0), es.eigenvalues()(1)};
}

Vec ImplicitSurfaceCell::lambda_map(const Vec& gamma, double s) const {
    if (!(std::fabs(s) < a_)) throw Error(ErrorKind::OutsideTube, "offset exceeds tube width");
    return gamma + s * normal(gamma);
}

std::pair<Vec, double> ImplicitSurfaceCell::lambda_inverse(const Vec& x) const {
    TubePoint t = tube_coords(x);
    return {t.gamma, t.d};
}

std::vector<SurfaceSample> ImplicitSurfaceCell::surface_samples(int n) const {
    if (empty_) return {};
    return sample_star(*shape_, n);
}

std::vector<SurfaceSample> ImplicitSurfaceCell::surface_samples_auto(double tol) const {
    if (empty_) return {};
    int n = 32;
    auto prev = surface_samples(n);
    auto total = [](const std::vector<SurfaceSample>& s) {
        double m = 0.0;
        for (const auto& p : s) m += p.weight;
        return m;
    };
    while (n < (1 << 14)) {
        n *= 2;
        auto cur = surface_samples(n);
        double a = total(prev), b = total(cur);
        if (std::fabs(a - b) <= tol * b) return cur;
        prev = std::move(cur);
    }
    return prev;
}

double ImplicitSurfaceCell::surface_measure() const {
    double m = 0.0;
    for (const auto& p : surface_samples_auto(1e-12)) m += p.weight;
    return m;
}

void write_surface_csv(const std::string& path, const std::vector<SurfaceSample>& samples, int dim) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
    const char* ax[3] = {"x", "y", "z"};
    for (int i = 0; i < dim; ++i) f << ax[i] << ",";
    for (int i = 0; i < dim; ++i) f << "n" << ax[i] << ",";
    f << "weight\n";
    char buf[64];
    for (const auto& s : samples) {
        for (int i = 0; i < dim; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,", s.point(i));
            f << buf;
        }
        for (int i = 0; i < dim; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,", s.normal(i));
            f << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g\n", s.weight);
        f << buf;
    }
}

Rational Rational::from_double(double x, std::int64_t max_den) {
    if (!std::isfinite(x)) throw Error(ErrorKind::InvalidArgument, "non-finite value");
    // continued fraction convergents
    std::int64_t p0 = 0, q0 = 1, p1 = 1, q1 = 0;
    double r = x;
    for (int it = 0; it < 64; ++it) {
        double fl = std::floor(r);
        auto a = static_cast<std::int64_t>(fl);
        std::int64_t p2 = a * p1 + p0, q2 = a * q1 + q0;
        if (q2 > max_den) break;
        p0 = p1;
        q0 = q1;
        p1 = p2;
        q1 = q2;
        if (std::fabs(static_cast<double>(p1) / static_cast<double>(q1) - x) <= 1e-14 * std::max(1.0, std::fabs(x)))
            break;
        double frac = r - fl;
        if (frac < 1e-300) break;
        r = 1.0 / frac;
    }
    if (q1 == 0 || std::fabs(static_cast<double>(p1) / static_cast<double>(q1) - x) > 1e-12 * std::max(1.0, std::fabs(x)))
        throw Error(ErrorKind::InvalidArgument, "value has no small-denominator rational form");
    return {p1, q1};
}

namespace {
__int128 floor_div(__int128 a, __int128 b) {
    __int128 q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}
__int128 ceil_div(__int128 a, __int128 b) { return -floor_div(-a, b); }
} // namespace

PeriodicDomain::PeriodicDomain(std::shared_ptr<const ImplicitSurfaceCell> cell, double eps, const Vec& lo,
                               const Vec& hi)
    : cell_(std::move(cell)), eps_(eps), lo_(lo), hi_(hi) {
    if (!cell_) throw Error(ErrorKind::InvalidArgument, "null cell");
    if (!(eps > 0)) throw Error(ErrorKind::InvalidArgument, "epsilon must be positive");
    int d = cell_->dim();
    eps_rat_ = Rational::from_double(eps);
    for (int i = 0; i < d; ++i) {
        if (!(hi(i) > lo(i))) throw Error(ErrorKind::InvalidArgument, "empty box");
        if (eps > hi(i) - lo(i) * (1.0 + 0.0)) throw Error(ErrorKind::InvalidArgument, "epsilon exceeds box side");
        Rational a = Rational::from_double(lo(i)), c = Rational::from_double(hi(i));
        __int128 p = eps_rat_.num, q = eps_rat_.den;
        // eps k > lo  and  eps (k + 1) < hi, closed cells strictly inside the open box
        kmin_[i] = static_cast<int>(floor_div(static_cast<__int128>(a.num) * q, p * a.den) + 1);
        kmax_[i] = static_cast<int>(ceil_div(static_cast<__int128>(c.num) * q, p * c.den) - 2);
    }
    for (int i = d; i < 3; ++i) kmin_[i] = kmax_[i] = 0;
    for (int i = 0; i < d; ++i)
        if (kmax_[i] < kmin_[i]) return;
    for (int k2 = kmin_[2]; k2 <= kmax_[2]; ++k2)
        for (int k1 = kmin_[1]; k1 <= kmax_[1]; ++k1)
            for (int k0 = kmin_[0]; k0 <= kmax_[0]; ++k0) cells_.push_back({k0, k1, k2});
}

Index PeriodicDomain::cell_of(const Vec& x) const {
    Index k{0, 0, 0};
    for (int i = 0; i < dim(); ++i) k[i] = static_cast<int>(std::floor(x(i) / eps_));
    return k;
}

bool PeriodicDomain::contains(const Index& k) const {
    if (cells_.empty()) return false;
    for (int i = 0; i < dim(); ++i)
        if (k[i] < kmin_[i] || k[i] > kmax_[i]) return false;
    return true;
}

Vec PeriodicDomain::origin(const Index& k) const {
    Vec o = Vec::Zero();
    for (int i = 0; i < dim(); ++i) o(i) = eps_ * k[i];
    return o;
}

Vec PeriodicDomain::local(const Vec& x, const Index& k) const {
    Vec y = Vec::Zero();
    for (int i = 0; i < dim(); ++i) y(i) = x(i) / eps_ - k[i];
    return y;
}

bool PeriodicDomain::in_inclusion(const Vec& x) const {
    Index k = cell_of(x);
    if (!contains(k) || cell_->empty()) return false;
    return cell_->in_inclusion(local(x, k));
}

bool PeriodicDomain::try_tube_coords(const Vec& x, TubePoint& out) const {
    if (cell_->empty()) return false;
    Index k = cell_of(x);
    if (!contains(k)) return false;
    const Shape& s = cell_->shape();
    Vec o = origin(k);
    double e = eps_;
    int d = dim();
    auto eval = [&](const Vec& p, double& f, Vec& g, Mat& h) {
        Vec y = Vec::Zero();
        y.head(d) = (p.head(d) - o.head(d)) / e;
        f = e * s.phi(y);
        g = s.grad(y);
        h = s.hess(y) / e;
    };
    return project_implicit(eval, x, d, e, e * cell_->a(), out);
}

TubePoint PeriodicDomain::tube_coords(const Vec& x) const {
    TubePoint t;
    if (!try_tube_coords(x, t)) throw Error(ErrorKind::OutsideTube, "point is outside the tubular neighborhood");
    return t;
}

Vec PeriodicDomain::normal(const Vec& gamma) const {
    Index k = cell_of(gamma);
    Vec g = cell_->shape().grad(local(gamma, k));
    double gn = g.norm();
    if (gn < 1e-10) throw Error(ErrorKind::DegenerateGradient, "vanishing gradient");
    return g / gn;
}

Mat PeriodicDomain::weingarten(const Vec& gamma) const {
    Index k = cell_of(gamma);
    Vec y = local(gamma, k);
    Vec g = cell_->shape().grad(y);
    double gn = g.norm();
    if (gn < 1e-10) throw Error(ErrorKind::DegenerateGradient, "vanishing gradient");
    Vec n = g / gn;
    Mat p = eye_d(dim()) - n * n.transpose();
    Mat h = cell_->shape().hess(y) / eps_;
    return -(p * h * p) / gn;
}

Vec PeriodicDomain::lambda_map(const Vec& gamma, double r) const {
    if (!(std::fabs(r) < tube_halfwidth())) throw Error(ErrorKind::OutsideTube, "offset exceeds tube width");
    return gamma + r * normal(gamma);
}

Mat PeriodicDomain::projection_jacobian(const Vec& x) const {
    TubePoint t = tube_coords(x);
    Mat l = weingarten(t.gamma);
    Mat m = Mat::Identity() - t.d * l;
    return inverse_d(m, dim()) * (eye_d(dim()) - t.normal * t.normal.transpose());
}

std::vector<SurfaceSample> PeriodicDomain::scale_samples(const std::vector<SurfaceSample>& cs) const {
    std::vector<SurfaceSample> out;
    out.reserve(cs.size() * cells_.size());
    double wscale = std::pow(eps_, dim() - 1);
    for (const auto& k : cells_) {
        Vec o = origin(k);
        for (const auto& s : cs) {
            SurfaceSample t = s;
            t.point = o + eps_ * s.point;
            t.weight = wscale * s.weight;
            out.push_back(t);
        }
    }
    return out;
}

std::vector<SurfaceSample> PeriodicDomain::surface_samples(int n) const {
    return scale_samples(cell_->surface_samples(n));
}

double PeriodicDomain::boundary_distance(int n) const {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : surface_samples(n))
        for (int i = 0; i < dim(); ++i) best = std::min({best, s.point(i) - lo_(i), hi_(i) - s.point(i)});
    return best;
}

PeriodicDomain tile(std::shared_ptr<const ImplicitSurfaceCell> cell, double eps, const Vec& lo, const Vec& hi) {
    PeriodicDomain dom(std::move(cell), eps, lo, hi);
    if (dom.cells().empty()) throw Error(ErrorKind::EmptyTiling, "no closed cell fits inside the box");
    return dom;
}

void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) {
        double b = k / std::sqrt(4.0 * k * k - 1.0);
        j(k, k - 1) = b;
        j(k - 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    x.resize(n);
    w.resize(n);
    for (int i = 0; i < n; ++i) {
        x[i] = es.eigenvalues()(i);
        double v = es.eigenvectors()(0, i);
        w[i] = 2.0 * v * v;
    }
}

} // namespace homog
