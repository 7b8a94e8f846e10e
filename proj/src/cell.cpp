#include "homog/cell.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unistd.h>

namespace homog {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = std::numbers::pi;

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// polar quadrature of f over {c + rho w : rho < R(theta)}: trapezoid in theta,
// composite Gauss-Legendre in rho
double polar_integral(const Vec& c, const std::vector<double>& radii, const std::function<double(const Vec&)>& f,
                      int panels = 6, int per_panel = 10) {
    std::vector<double> x0, w0, x, w;
    gauss_legendre(per_panel, x0, w0);
    for (int p = 0; p < panels; ++p)
        for (int q = 0; q < per_panel; ++q) {
            x.push_back(-1.0 + (2.0 * p + x0[q] + 1.0) / panels);
            w.push_back(w0[q] / panels);
        }
    const int n_rho = static_cast<int>(x.size());
    const int m = static_cast<int>(radii.size());
    double total = 0.0;
    for (int j = 0; j < m; ++j) {
        double th = 2.0 * kPi * j / m;
        Vec e(std::cos(th), std::sin(th), 0.0);
        double R = radii[j];
        double s = 0.0;
        for (int q = 0; q < n_rho; ++q) {
            double rho = 0.5 * R * (x[q] + 1.0);
            s += 0.5 * R * w[q] * rho * f(c + rho * e);
        }
        total += s;
    }
    return total * 2.0 * kPi / m;
}

// tensor Gauss rule (3 points) on cells^d subcells of the unit cube
template <class F>
double cube_integral(int d, int cells, F&& f) {
    const double gx[3] = {-std::sqrt(0.6), 0.0, std::sqrt(0.6)};
    const double gw[3] = {5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0};
    const int per = cells * 3;
    std::array<int, 3> cnt{per, d > 1 ? per : 1, d > 2 ? per : 1};
    const double h = 1.0 / cells;
    double total = 0.0;
    for (int k = 0; k < cnt[2]; ++k)
        for (int j = 0; j < cnt[1]; ++j)
            for (int i = 0; i < cnt[0]; ++i) {
                std::array<int, 3> id{i, j, k};
                Vec y = Vec::Zero();
                double wt = 1.0;
                for (int a = 0; a < d; ++a) {
                    int c = id[a] / 3, g = id[a] % 3;
                    y(a) = h * (c + 0.5 * (gx[g] + 1.0));
                    wt *= 0.5 * h * gw[g];
                }
                total += wt * f(y);
            }
    return total;
}

double generic_clearance(const Inclusion& inc) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& s : inc.surface_samples(inc.dim() == 2 ? 512 : 64))
        for (int i = 0; i < inc.dim(); ++i) best = std::min({best, s.point(i), 1.0 - s.point(i)});
    return best;
}

} // namespace

// ---------------------------------------------------------------- inclusions

double ShapeInclusion::volume() const {
    if (empty()) return 0.0;
    return integrate_inside([](const Vec&) { return 1.0; });
}

double ShapeInclusion::integrate_inside(const std::function<double(const Vec&)>& f) const {
    if (empty()) return 0.0;
    if (dim() == 2) {
        const int m = 256;
        Vec c = cell_->shape().center();
        std::vector<double> radii;
        radii.reserve(m);
        for (const auto& s : cell_->surface_samples(m)) radii.push_back((s.point - c).norm());
        return polar_integral(c, radii, f);
    }
    return cube_integral(3, 32, [&](const Vec& y) { return cell_->shape().phi(y) < 0.0 ? f(y) : 0.0; });
}

std::string ShapeInclusion::key() const {
    nlohmann::json j = {{"shape", cell_->shape().describe()}, {"dim", dim()}};
    return sha256_hex(j.dump());
}

StarInclusion::StarInclusion(const Vec& center, std::vector<double> radii) : c_(center), r_(std::move(radii)) {
    const int m = static_cast<int>(r_.size());
    if (m < 3) throw Error(ErrorKind::InvalidArgument, "star inclusion needs at least 3 radii");
    for (double r : r_)
        if (!(r > 0.0)) throw Error(ErrorKind::MinRadiusReached, "non-positive radius");
    // coef_ = [a0, a1, b1, a2, b2, ...], Nyquist cosine last for even m
    const int kmax = (m - 1) / 2;
    coef_.assign(m, 0.0);
    for (int j = 0; j < m; ++j) {
        double th = 2.0 * kPi * j / m;
        coef_[0] += r_[j] / m;
        for (int k = 1; k <= kmax; ++k) {
            coef_[2 * k - 1] += 2.0 * r_[j] * std::cos(k * th) / m;
            coef_[2 * k] += 2.0 * r_[j] * std::sin(k * th) / m;
        }
        if (m % 2 == 0) coef_[m - 1] += r_[j] * std::cos(m / 2 * th) / m;
    }
}

StarInclusion StarInclusion::through_points(const Vec& center, const std::vector<Vec>& points) {
    const int m = static_cast<int>(points.size());
    if (m < 3) throw Error(ErrorKind::InvalidArgument, "star inclusion needs at least 3 points");
    const int kmax = (m - 1) / 2;
    Eigen::MatrixXd A(m, m);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) {
        Vec q = points[i] - center;
        double th = std::atan2(q(1), q(0));
        b(i) = std::hypot(q(0), q(1));
        A(i, 0) = 1.0;
        for (int k = 1; k <= kmax; ++k) {
            A(i, 2 * k - 1) = std::cos(k * th);
            A(i, 2 * k) = std::sin(k * th);
        }
        if (m % 2 == 0) A(i, m - 1) = std::cos(m / 2 * th);
    }
    Eigen::VectorXd c = A.partialPivLu().solve(b);
    std::vector<double> radii(m);
    for (int j = 0; j < m; ++j) {
        double th = 2.0 * kPi * j / m;
        double r = c(0);
        for (int k = 1; k <= kmax; ++k) r += c(2 * k - 1) * std::cos(k * th) + c(2 * k) * std::sin(k * th);
        if (m % 2 == 0) r += c(m - 1) * std::cos(m / 2 * th);
        radii[j] = r;
    }
    return StarInclusion(center, std::move(radii));
}

double StarInclusion::radius(double t, double* dr) const {
    const int m = static_cast<int>(r_.size());
    const int kmax = (m - 1) / 2;
    double r = coef_[0], d = 0.0;
    for (int k = 1; k <= kmax; ++k) {
        double c = std::cos(k * t), s = std::sin(k * t);
        r += coef_[2 * k - 1] * c + coef_[2 * k] * s;
        d += k * (-coef_[2 * k - 1] * s + coef_[2 * k] * c);
    }
    if (m % 2 == 0) {
        int k = m / 2;
        r += coef_[m - 1] * std::cos(k * t);
        d -= k * coef_[m - 1] * std::sin(k * t);
    }
    if (dr) *dr = d;
    return r;
}

double StarInclusion::phi(const Vec& y) const {
    double dx = y(0) - c_(0), dy = y(1) - c_(1);
    return std::hypot(dx, dy) - radius(std::atan2(dy, dx));
}

Vec StarInclusion::point(double t) const { return c_ + radius(t) * Vec(std::cos(t), std::sin(t), 0.0); }

Vec StarInclusion::normal(double t) const {
    double dr;
    double r = radius(t, &dr);
    Vec er(std::cos(t), std::sin(t), 0.0), et(-std::sin(t), std::cos(t), 0.0);
    Vec n = r * er - dr * et;
    return n / n.norm();
}

std::vector<SurfaceSample> StarInclusion::surface_samples(int n) const {
    std::vector<SurfaceSample> out(n);
    for (int j = 0; j < n; ++j) {
        double t = 2.0 * kPi * j / n;
        double dr;
        double r = radius(t, &dr);
        Vec er(std::cos(t), std::sin(t), 0.0), et(-std::sin(t), std::cos(t), 0.0);
        Vec nv = r * er - dr * et;
        out[j].point = c_ + r * er;
        out[j].normal = nv / nv.norm();
        out[j].weight = nv.norm() * 2.0 * kPi / n;
        out[j].param = t;
    }
    return out;
}

double StarInclusion::volume() const {
    // R^2 has degree <= m, so the trapezoid rule with 2m + 2 points is exact
    const int n = 2 * static_cast<int>(r_.size()) + 2;
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
        double r = radius(2.0 * kPi * j / n);
        s += r * r;
    }
    return 0.5 * s * 2.0 * kPi / n;
}

double StarInclusion::integrate_inside(const std::function<double(const Vec&)>& f) const {
    const int m = std::max<int>(256, 4 * static_cast<int>(r_.size()));
    std::vector<double> radii(m);
    for (int j = 0; j < m; ++j) radii[j] = radius(2.0 * kPi * j / m);
    return polar_integral(c_, radii, f);
}

std::string StarInclusion::key() const {
    std::string s = "star:" + fmt17(c_(0)) + "," + fmt17(c_(1));
    for (double r : r_) s += "," + fmt17(r);
    return sha256_hex(s);
}

double StarInclusion::min_radius() const {
    double r = std::numeric_limits<double>::infinity();
    const int n = 8 * static_cast<int>(r_.size());
    for (int j = 0; j < n; ++j) r = std::min(r, radius(2.0 * kPi * j / n));
    return r;
}

double StarInclusion::max_radius() const {
    double r = 0.0;
    const int n = 8 * static_cast<int>(r_.size());
    for (int j = 0; j < n; ++j) r = std::max(r, radius(2.0 * kPi * j / n));
    return r;
}

double StarInclusion::clearance() const { return generic_clearance(*this); }

// ---------------------------------------------------------------- segments

const char* to_string(CellScheme s) { return s == CellScheme::Q1 ? "q1" : "fv"; }

CellScheme cell_scheme_from_string(const std::string& s) {
    if (s == "q1") return CellScheme::Q1;
    if (s == "fv") return CellScheme::FiniteVolume;
    throw Error(ErrorKind::ConfigInvalid, "cell scheme must be q1 or fv");
}

namespace {

double bisect_crossing(const std::function<double(const Vec&)>& phi, const Vec& p, const Vec& q, double a, double b) {
    bool ia = phi(p + a * (q - p)) < 0.0;
    for (int it = 0; it < 60 && b - a > 1e-15; ++it) {
        double m = 0.5 * (a + b);
        if ((phi(p + m * (q - p)) < 0.0) == ia) a = m;
        else b = m;
    }
    return 0.5 * (a + b);
}

} // namespace

std::pair<double, double> segment_split(const std::function<double(const Vec&)>& phi, const Vec& p, const Vec& q,
                                        int probes) {
    std::vector<double> cuts{0.0};
    bool prev = phi(p) < 0.0;
    for (int i = 1; i <= probes; ++i) {
        double s = static_cast<double>(i) / probes;
        bool cur = phi(p + s * (q - p)) < 0.0;
        if (cur != prev) cuts.push_back(bisect_crossing(phi, p, q, static_cast<double>(i - 1) / probes, s));
        prev = cur;
    }
    cuts.push_back(1.0);
    double out = 0.0, in = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        double len = cuts[i + 1] - cuts[i];
        if (phi(p + 0.5 * (cuts[i] + cuts[i + 1]) * (q - p)) < 0.0) in += len;
        else out += len;
    }
    return {out, in};
}

double first_crossing(const std::function<double(const Vec&)>& phi, const Vec& p, const Vec& q, int probes) {
    bool start = phi(p) < 0.0;
    for (int i = 1; i <= probes; ++i) {
        double s = static_cast<double>(i) / probes;
        if ((phi(p + s * (q - p)) < 0.0) != start)
            return bisect_crossing(phi, p, q, static_cast<double>(i - 1) / probes, s);
    }
    return 1.0;
}

// ---------------------------------------------------------------- cell state

nlohmann::json CellState::to_json() const {
    return {{"y1", y1}, {"y2", y2}, {"mesh_n", mesh_n}, {"scheme", to_string(scheme)},
            {"dim", inclusion ? inclusion->dim() : 0},
            {"inclusion", inclusion ? inclusion->key() : ""}};
}

CellState make_cell_state(std::shared_ptr<const Inclusion> inc, int mesh_n, CellScheme scheme) {
    if (!inc) throw Error(ErrorKind::InvalidArgument, "missing inclusion");
    if (mesh_n < 4 || mesh_n % 2) throw Error(ErrorKind::InvalidArgument, "cell mesh must be even and >= 4");
    CellState cs;
    cs.mesh_n = mesh_n;
    cs.scheme = scheme;
    if (!inc->empty()) {
        double cl = generic_clearance(*inc);
        if (!(cl > 0.0)) throw Error(ErrorKind::InclusionEscape, "inclusion touches the cell boundary");
        cs.y2 = inc->volume();
    }
    cs.y1 = 1.0 - cs.y2;
    cs.inclusion = std::move(inc);
    return cs;
}

// ---------------------------------------------------------------- discretization

CellDiscretization::CellDiscretization(const Inclusion& inc, int n, int sub) : d_(inc.dim()), n_(n) {
    if (d_ != 2 && d_ != 3) throw Error(ErrorKind::InvalidArgument, "cell dimension must be 2 or 3");
    if (n < 2 || sub < 1) throw Error(ErrorKind::InvalidArgument, "bad cell mesh");
    nn_ = 1;
    for (int i = 0; i < d_; ++i) nn_ *= n;
    ne_ = nn_;
    corners_ = 1 << d_;
    const double h = 1.0 / n;

    // reference quadrature on [0,1]^d
    struct QP {
        Vec xi;
        double w;
        std::vector<double> N;
        std::vector<Vec> dN;
    };
    std::vector<QP> qp;
    const double g0 = 0.5 - 0.5 / std::sqrt(3.0), g1 = 0.5 + 0.5 / std::sqrt(3.0);
    int ns = 1;
    for (int i = 0; i < d_; ++i) ns *= sub;
    for (int s = 0; s < ns; ++s)
        for (int g = 0; g < corners_; ++g) {
            QP q;
            q.xi = Vec::Zero();
            q.w = 1.0;
            int rest = s;
            for (int k = 0; k < d_; ++k) {
                int sk = rest % sub;
                rest /= sub;
                q.xi(k) = (sk + (((g >> k) & 1) ? g1 : g0)) / sub;
                q.w *= 0.5 / sub;
            }
            q.w *= std::pow(h, d_);
            q.N.resize(corners_);
            q.dN.resize(corners_);
            for (int a = 0; a < corners_; ++a) {
                double N = 1.0;
                Vec dN = Vec::Zero();
                for (int l = 0; l < d_; ++l) dN(l) = 1.0;
                for (int k = 0; k < d_; ++k) {
                    bool up = (a >> k) & 1;
                    double f = up ? q.xi(k) : 1.0 - q.xi(k);
                    double df = (up ? 1.0 : -1.0) / h;
                    for (int l = 0; l < d_; ++l) dN(l) *= (l == k) ? df : f;
                    N *= f;
                }
                q.N[a] = N;
                q.dN[a] = dN;
            }
            qp.push_back(std::move(q));
        }

    el_.assign(ne_, Element{});
    std::vector<char> ind(qp.size());
    for (int e = 0; e < ne_; ++e) {
        std::array<int, 3> id = element_node(e, 0);
        Vec o = Vec::Zero();
        for (int k = 0; k < d_; ++k) o(k) = id[k] * h;
        bool any = false;
        for (std::size_t q = 0; q < qp.size(); ++q) {
            ind[q] = inc.phi(o + h * qp[q].xi) >= 0.0;
            any = any || ind[q];
        }
        if (!any) continue;
        Element& E = el_[e];
        E.k.assign(corners_ * corners_, 0.0);
        E.g.assign(corners_ * d_, 0.0);
        E.m.assign(corners_, 0.0);
        for (std::size_t q = 0; q < qp.size(); ++q) {
            if (!ind[q]) continue;
            const QP& Q = qp[q];
            E.vol += Q.w;
            for (int a = 0; a < corners_; ++a) {
                E.m[a] += Q.w * Q.N[a];
                for (int k = 0; k < d_; ++k) E.g[a * d_ + k] += Q.w * Q.dN[a](k);
                for (int b = 0; b < corners_; ++b) E.k[a * corners_ + b] += Q.w * Q.dN[a].dot(Q.dN[b]);
            }
        }
        y1_ += E.vol;
    }
}

int CellDiscretization::node_of(const std::array<int, 3>& idx) const {
    int r = 0, s = 1;
    for (int k = 0; k < d_; ++k) {
        r += (((idx[k] % n_) + n_) % n_) * s;
        s *= n_;
    }
    return r;
}

std::array<int, 3> CellDiscretization::element_node(int e, int a) const {
    std::array<int, 3> id{0, 0, 0};
    for (int k = 0; k < d_; ++k) {
        id[k] = e % n_ + ((a >> k) & 1);
        e /= n_;
    }
    return id;
}

std::vector<double> CellDiscretization::solve(int j, double* residual) const {
    if (j < 0 || j >= d_) throw Error(ErrorKind::InvalidArgument, "direction index out of range");
    std::vector<double> diag(nn_, 0.0), rhs(nn_, 0.0), mass(nn_, 0.0);
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<int> nodes(corners_);
    for (int e = 0; e < ne_; ++e) {
        const Element& E = el_[e];
        if (E.vol <= 0.0) continue;
        for (int a = 0; a < corners_; ++a) nodes[a] = node_of(element_node(e, a));
        for (int a = 0; a < corners_; ++a) {
            diag[nodes[a]] += E.k[a * corners_ + a];
            rhs[nodes[a]] -= E.g[a * d_ + j];
            mass[nodes[a]] += E.m[a];
        }
    }
    std::vector<int> dof(nn_, -1);
    int pinned = -1, ndof = 0;
    for (int i = 0; i < nn_; ++i) {
        if (diag[i] <= 0.0) continue;
        if (pinned < 0) {
            pinned = i;
            continue;
        }
        dof[i] = ndof++;
    }
    std::vector<double> tau(nn_, 0.0);
    if (residual) *residual = 0.0;
    if (ndof == 0) return tau;
    for (int e = 0; e < ne_; ++e) {
        const Element& E = el_[e];
        if (E.vol <= 0.0) continue;
        for (int a = 0; a < corners_; ++a) nodes[a] = node_of(element_node(e, a));
        for (int a = 0; a < corners_; ++a) {
            int ia = dof[nodes[a]];
            if (ia < 0) continue;
            for (int b = 0; b < corners_; ++b) {
                int ib = dof[nodes[b]];
                if (ib >= 0) trip.emplace_back(ia, ib, E.k[a * corners_ + b]);
            }
        }
    }
    Eigen::SparseMatrix<double> K(ndof, ndof);
    K.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd b(ndof);
    for (int i = 0; i < nn_; ++i)
        if (dof[i] >= 0) b(dof[i]) = rhs[i];
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(K);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::SolverDiverged, "cell factorization failed");
    Eigen::VectorXd x = ldlt.solve(b);
    if (ldlt.info() != Eigen::Success || !x.allFinite())
        throw Error(ErrorKind::SolverDiverged, "cell solve failed");
    for (int i = 0; i < nn_; ++i)
        if (dof[i] >= 0) tau[i] = x(dof[i]);

    // residual of the full (singular) system including the pinned row
    std::vector<double> r(nn_, 0.0);
    for (int e = 0; e < ne_; ++e) {
        const Element& E = el_[e];
        if (E.vol <= 0.0) continue;
        for (int a = 0; a < corners_; ++a) nodes[a] = node_of(element_node(e, a));
        for (int a = 0; a < corners_; ++a)
            for (int b2 = 0; b2 < corners_; ++b2) r[nodes[a]] += E.k[a * corners_ + b2] * tau[nodes[b2]];
    }
    double rn = 0.0, bn = 0.0;
    for (int i = 0; i < nn_; ++i) {
        if (diag[i] <= 0.0) continue;
        rn = std::max(rn, std::fabs(r[i] - rhs[i]));
        bn = std::max(bn, std::fabs(rhs[i]));
    }
    // b scales like h^(d-1); a vanishing right-hand side is measured on that scale
    double res = rn / std::max(bn, std::pow(1.0 / n_, d_ - 1));
    if (residual) *residual = res;
    if (!(res <= 1e-10)) throw Error(ErrorKind::SolverDiverged, "cell residual " + std::to_string(res));

    double mt = 0.0, ms = 0.0;
    for (int i = 0; i < nn_; ++i) {
        mt += mass[i] * tau[i];
        ms += mass[i];
    }
    double shift = mt / ms;
    for (int i = 0; i < nn_; ++i) tau[i] = diag[i] > 0.0 ? tau[i] - shift : 0.0;
    return tau;
}

double CellDiscretization::flux(const std::vector<double>& tau, int j, int i) const {
    double s = (i == j) ? y1_ : 0.0;
    for (int e = 0; e < ne_; ++e) {
        const Element& E = el_[e];
        if (E.vol <= 0.0) continue;
        for (int a = 0; a < corners_; ++a) s += E.g[a * d_ + i] * tau[node_of(element_node(e, a))];
    }
    return s;
}

double CellDiscretization::energy(const std::vector<double>& tau, int j) const {
    double s = y1_;
    std::vector<int> nodes(corners_);
    for (int e = 0; e < ne_; ++e) {
        const Element& E = el_[e];
        if (E.vol <= 0.0) continue;
        for (int a = 0; a < corners_; ++a) nodes[a] = node_of(element_node(e, a));
        for (int a = 0; a < corners_; ++a) {
            s += 2.0 * E.g[a * d_ + j] * tau[nodes[a]];
            for (int b = 0; b < corners_; ++b) s += tau[nodes[a]] * E.k[a * corners_ + b] * tau[nodes[b]];
        }
    }
    return s;
}

double CellDiscretization::mean(const std::vector<double>& tau) const {
    double s = 0.0;
    for (int e = 0; e < ne_; ++e) {
        const Element& E = el_[e];
        if (E.vol <= 0.0) continue;
        for (int a = 0; a < corners_; ++a) s += E.m[a] * tau[node_of(element_node(e, a))];
    }
    return s;
}

double CellDiscretization::eval(const std::vector<double>& tau, const Vec& y) const {
    std::array<int, 3> base{0, 0, 0};
    Vec f = Vec::Zero();
    for (int k = 0; k < d_; ++k) {
        double u = y(k) * n_;
        double fl = std::floor(u);
        base[k] = static_cast<int>(fl);
        f(k) = u - fl;
    }
    double s = 0.0;
    for (int a = 0; a < corners_; ++a) {
        std::array<int, 3> id = base;
        double w = 1.0;
        for (int k = 0; k < d_; ++k) {
            bool up = (a >> k) & 1;
            id[k] += up;
            w *= up ? f(k) : 1.0 - f(k);
        }
        s += w * tau[node_of(id)];
    }
    return s;
}

// ---------------------------------------------------------------- finite volumes

CellFV::CellFV(const Inclusion& inc, int n) : d_(inc.dim()), n_(n), h_(1.0 / n) {
    if (d_ != 2 && d_ != 3) throw Error(ErrorKind::InvalidArgument, "cell dimension must be 2 or 3");
    nn_ = 1;
    for (int i = 0; i < d_; ++i) nn_ *= n;
    auto center = [&](int node) {
        Vec y = Vec::Zero();
        for (int k = 0; k < d_; ++k) {
            y(k) = h_ * (node % n_ + 0.5);
            node /= n_;
        }
        return y;
    };
    auto phi = [&](const Vec& y) { return inc.phi(y); };
    phase1_.assign(nn_, 0);
    open_.assign(static_cast<std::size_t>(nn_) * d_, 0);
    for (int i = 0; i < nn_; ++i) {
        phase1_[i] = inc.phi(center(i)) >= 0.0;
        if (phase1_[i]) y1_ += std::pow(h_, d_);
    }
    for (int i = 0; i < nn_; ++i) {
        if (!phase1_[i]) continue;
        Vec p = center(i);
        for (int k = 0; k < d_; ++k) {
            if (!phase1_[neighbor(i, k)]) continue;
            Vec q = p;
            q(k) += h_;
            // the periodic image of q has the same phase
            open_[static_cast<std::size_t>(i) * d_ + k] = inc.empty() || segment_split(phi, p, q).second == 0.0;
        }
    }
}

int CellFV::neighbor(int node, int k) const {
    int stride = 1;
    for (int i = 0; i < k; ++i) stride *= n_;
    int c = (node / stride) % n_;
    return c + 1 < n_ ? node + stride : node - (n_ - 1) * stride;
}

std::vector<double> CellFV::solve(int j, double* residual) const {
    if (j < 0 || j >= d_) throw Error(ErrorKind::InvalidArgument, "direction index out of range");
    const double w = std::pow(h_, d_ - 2), wb = std::pow(h_, d_ - 1);
    std::vector<double> diag(nn_, 0.0), rhs(nn_, 0.0);
    for (int i = 0; i < nn_; ++i)
        for (int k = 0; k < d_; ++k) {
            if (!open_[static_cast<std::size_t>(i) * d_ + k]) continue;
            int q = neighbor(i, k);
            diag[i] += w;
            diag[q] += w;
            if (k == j) {
                rhs[i] += wb;
                rhs[q] -= wb;
            }
        }
    std::vector<int> dof(nn_, -1);
    int pinned = -1, ndof = 0;
    for (int i = 0; i < nn_; ++i) {
        if (diag[i] <= 0.0) continue;
        if (pinned < 0) pinned = i;
        else dof[i] = ndof++;
    }
    std::vector<double> tau(nn_, 0.0);
    if (residual) *residual = 0.0;
    if (ndof == 0) return tau;
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < nn_; ++i) {
        if (dof[i] >= 0) trip.emplace_back(dof[i], dof[i], diag[i]);
        for (int k = 0; k < d_; ++k) {
            if (!open_[static_cast<std::size_t>(i) * d_ + k]) continue;
            int q = neighbor(i, k);
            if (dof[i] >= 0 && dof[q] >= 0) {
                trip.emplace_back(dof[i], dof[q], -w);
                trip.emplace_back(dof[q], dof[i], -w);
            }
        }
    }
    Eigen::SparseMatrix<double> K(ndof, ndof);
    K.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd b(ndof);
    for (int i = 0; i < nn_; ++i)
        if (dof[i] >= 0) b(dof[i]) = rhs[i];
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(K);
    if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::SolverDiverged, "cell factorization failed");
    Eigen::VectorXd x = ldlt.solve(b);
    if (!x.allFinite()) throw Error(ErrorKind::SolverDiverged, "cell solve failed");
    for (int i = 0; i < nn_; ++i)
        if (dof[i] >= 0) tau[i] = x(dof[i]);
    std::vector<double> r(nn_, 0.0);
    for (int i = 0; i < nn_; ++i)
        for (int k = 0; k < d_; ++k) {
            if (!open_[static_cast<std::size_t>(i) * d_ + k]) continue;
            int q = neighbor(i, k);
            double f = w * (tau[i] - tau[q]);
            r[i] += f;
            r[q] -= f;
        }
    double rn = 0.0, bn = 0.0;
    for (int i = 0; i < nn_; ++i) {
        if (diag[i] <= 0.0) continue;
        rn = std::max(rn, std::fabs(r[i] - rhs[i]));
        bn = std::max(bn, std::fabs(rhs[i]));
    }
    double res = rn / std::max(bn, wb);
    if (residual) *residual = res;
    if (!(res <= 1e-10)) throw Error(ErrorKind::SolverDiverged, "cell residual " + std::to_string(res));
    double mt = 0.0, cnt = 0.0;
    for (int i = 0; i < nn_; ++i)
        if (diag[i] > 0.0) {
            mt += tau[i];
            cnt += 1.0;
        }
    for (int i = 0; i < nn_; ++i) tau[i] = diag[i] > 0.0 ? tau[i] - mt / cnt : 0.0;
    return tau;
}

double CellFV::flux(const std::vector<double>& tau, int j, int i) const {
    double s = 0.0;
    const double v = std::pow(h_, d_);
    for (int p = 0; p < nn_; ++p) {
        if (!open_[static_cast<std::size_t>(p) * d_ + i]) continue;
        s += v * ((tau[neighbor(p, i)] - tau[p]) / h_ + (i == j ? 1.0 : 0.0));
    }
    return s;
}

double CellFV::energy(const std::vector<double>& tau, int j) const {
    double s = 0.0;
    const double v = std::pow(h_, d_);
    for (int p = 0; p < nn_; ++p)
        for (int k = 0; k < d_; ++k) {
            if (!open_[static_cast<std::size_t>(p) * d_ + k]) continue;
            double g = (tau[neighbor(p, k)] - tau[p]) / h_ + (k == j ? 1.0 : 0.0);
            s += v * g * g;
        }
    return s;
}

// ---------------------------------------------------------------- tensor

nlohmann::json EffectiveTensor::to_json() const {
    nlohmann::json k = nlohmann::json::array();
    for (int i = 0; i < dim; ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 0; j < dim; ++j) row.push_back(kappa(i, j));
        k.push_back(row);
    }
    return {{"kappa", k},      {"dim", dim}, {"mesh_n", mesh_n}, {"kappa1", kappa1},
            {"y1", y1},        {"residual", residual},            {"error_estimate", error_estimate},
            {"key", key}};
}

std::vector<double> solve_cell_problem(const CellState& cs, int j, double* residual) {
    if (cs.scheme == CellScheme::FiniteVolume) return CellFV(*cs.inclusion, cs.mesh_n).solve(j, residual);
    CellDiscretization disc(*cs.inclusion, cs.mesh_n);
    return disc.solve(j, residual);
}

namespace {

template <class Disc>
EffectiveTensor tensor_on(const Inclusion& inc, int n, double kappa1) {
    Disc disc(inc, n);
    EffectiveTensor t;
    t.dim = disc.dim();
    t.mesh_n = n;
    t.kappa1 = kappa1;
    t.y1 = disc.y1();
    for (int j = 0; j < t.dim; ++j) {
        double res;
        t.correctors.push_back(disc.solve(j, &res));
        t.residual = std::max(t.residual, res);
    }
    for (int i = 0; i < t.dim; ++i)
        for (int j = 0; j < t.dim; ++j) t.kappa(i, j) = kappa1 * disc.flux(t.correctors[j], j, i);
    // exact symmetrization of round-off
    Mat k = t.kappa;
    t.kappa = 0.5 * (k + k.transpose());
    return t;
}

} // namespace

EffectiveTensor effective_tensor(const CellState& cs, double kappa1, bool estimate) {
    if (!(kappa1 > 0.0)) throw Error(ErrorKind::InvalidArgument, "kappa1 must be positive");
    auto solve = [&](int n) {
        return cs.scheme == CellScheme::Q1 ? tensor_on<CellDiscretization>(*cs.inclusion, n, kappa1)
                                           : tensor_on<CellFV>(*cs.inclusion, n, kappa1);
    };
    EffectiveTensor t = solve(cs.mesh_n);
    if (estimate) {
        EffectiveTensor c = solve(cs.mesh_n / 2);
        t.error_estimate = (t.kappa - c.kappa).norm() / t.kappa.norm();
        if (t.error_estimate > 0.05)
            throw Error(ErrorKind::MeshTooCoarse, "estimated tensor error " + std::to_string(t.error_estimate));
    }
    return t;
}

// ---------------------------------------------------------------- sources

EffectiveSources effective_sources(const std::function<double(const Vec&)>& f1,
                                   const std::function<double(const Vec&)>& theta1_init, const CellState& cs) {
    const Inclusion& inc = *cs.inclusion;
    const int d = inc.dim();
    const int cells = d == 2 ? 32 : 12;
    EffectiveSources s;
    s.f_h = cube_integral(d, cells, f1) - inc.integrate_inside(f1);
    s.theta_h = cube_integral(d, cells, theta1_init) - inc.integrate_inside(theta1_init);
    return s;
}

InterfaceSource interface_source(const std::vector<SurfaceSample>& gamma, const std::function<double(const Vec&)>& v,
                                 const std::function<Vec(const Vec&)>& grad_theta2, double latent, double kappa2) {
    if (!grad_theta2) throw Error(ErrorKind::GradientUnavailable, "micro gradient not available on the interface");
    InterfaceSource out;
    for (const auto& s : gamma) {
        out.latent += s.weight * (v ? v(s.point) : 0.0);
        out.flux += s.weight * grad_theta2(s.point).dot(s.normal);
    }
    out.latent *= latent;
    out.flux *= kappa2;
    out.total = out.latent - out.flux;
    return out;
}

double rayleigh_square_array(double f) { return 1.0 - 2.0 * f / (1.0 + f - 0.305827 * std::pow(f, 4)); }

// ---------------------------------------------------------------- cache

CellCache::CellCache(std::string root) : root_(std::move(root)) { fs::create_directories(root_); }

std::string CellCache::default_root() {
    if (const char* e = std::getenv("HOMOG_CACHE_DIR"); e && *e) return e;
    if (const char* h = std::getenv("HOME"); h && *h) return std::string(h) + "/.cache/homog";
    return ".homog_cache";
}

std::string CellCache::key(const CellState& cs, double kappa1) const {
    return sha256_hex(cs.inclusion->key() + "|" + std::to_string(cs.mesh_n) + "|" + to_string(cs.scheme) + "|" +
                      fmt17(kappa1));
}

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return {};
    std::ostringstream s;
    s << f.rdbuf();
    return s.str();
}

std::string payload_hash(const nlohmann::json& tensor) { return sha256_hex(tensor.dump()); }

} // namespace

void CellCache::store(const std::string& key, const EffectiveTensor& t) {
    std::string blob;
    for (const auto& c : t.correctors) blob.append(reinterpret_cast<const char*>(c.data()), c.size() * sizeof(double));
    nlohmann::json tensor = t.to_json();
    tensor["corrector_length"] = t.correctors.empty() ? 0 : t.correctors[0].size();
    nlohmann::json doc = {{"tensor", tensor},
                          {"tensor_sha256", payload_hash(tensor)},
                          {"correctors_sha256", sha256_hex(blob)}};
    static std::atomic<int> counter{0};
    fs::path tmp = fs::path(root_) / (".tmp-" + key + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::create_directories(tmp);
    {
        std::ofstream f(tmp / "tensor.json", std::ios::binary);
        f << doc.dump(1) << "\n";
    }
    {
        std::ofstream f(tmp / "correctors.bin", std::ios::binary);
        f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    std::lock_guard<std::mutex> lk(mu_);
    fs::path dst = fs::path(root_) / key;
    std::error_code ec;
    if (fs::exists(dst)) {
        fs::remove_all(tmp, ec);
        return;
    }
    fs::rename(tmp, dst, ec);
    if (ec) fs::remove_all(tmp, ec);
}

bool CellCache::load(const std::string& key, EffectiveTensor& out) {
    fs::path dir = fs::path(root_) / key;
    if (!fs::exists(dir / "tensor.json")) return false;
    try {
        nlohmann::json doc = nlohmann::json::parse(read_file(dir / "tensor.json"));
        const nlohmann::json& t = doc.at("tensor");
        if (payload_hash(t) != doc.at("tensor_sha256").get<std::string>())
            throw Error(ErrorKind::CacheCorrupt, "tensor hash mismatch");
        std::string blob = read_file(dir / "correctors.bin");
        if (sha256_hex(blob) != doc.at("correctors_sha256").get<std::string>())
            throw Error(ErrorKind::CacheCorrupt, "corrector hash mismatch");
        EffectiveTensor r;
        r.dim = t.at("dim").get<int>();
        r.mesh_n = t.at("mesh_n").get<int>();
        r.kappa1 = t.at("kappa1").get<double>();
        r.y1 = t.at("y1").get<double>();
        r.residual = t.at("residual").get<double>();
        r.error_estimate = t.at("error_estimate").get<double>();
        r.key = t.at("key").get<std::string>();
        for (int i = 0; i < r.dim; ++i)
            for (int j = 0; j < r.dim; ++j) r.kappa(i, j) = t.at("kappa").at(i).at(j).get<double>();
        std::size_t len = t.at("corrector_length").get<std::size_t>();
        if (blob.size() != len * r.dim * sizeof(double)) throw Error(ErrorKind::CacheCorrupt, "corrector size");
        r.correctors.assign(r.dim, std::vector<double>(len));
        for (int j = 0; j < r.dim; ++j)
            std::memcpy(r.correctors[j].data(), blob.data() + j * len * sizeof(double), len * sizeof(double));
        out = std::move(r);
        return true;
    } catch (const std::exception&) {
        quarantine(key);
        return false;
    }
}

void CellCache::quarantine(const std::string& key) {
    std::lock_guard<std::mutex> lk(mu_);
    fs::path q = fs::path(root_) / "quarantine";
    fs::create_directories(q);
    std::error_code ec;
    fs::path dst = q / (key + "-" + std::to_string(quarantined_.load()));
    fs::remove_all(dst, ec);
    fs::rename(fs::path(root_) / key, dst, ec);
    ++quarantined_;
}

EffectiveTensor CellCache::get(const CellState& cs, double kappa1) {
    std::string k = key(cs, kappa1);
    EffectiveTensor t;
    if (load(k, t)) {
        ++hits_;
        return t;
    }
    t = effective_tensor(cs, kappa1);
    t.key = k;
    ++solves_;
    store(k, t);
    return t;
}

std::vector<CellCache::Entry> CellCache::list() const {
    std::vector<Entry> out;
    if (!fs::exists(root_)) return out;
    for (const auto& de : fs::directory_iterator(root_)) {
        std::string name = de.path().filename().string();
        if (!de.is_directory() || name.size() != 64) continue;
        Entry e;
        e.key = name;
        try {
            e.info = nlohmann::json::parse(read_file(de.path() / "tensor.json")).at("tensor");
        } catch (const std::exception&) {
            e.info = {{"status", "unreadable"}};
        }
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
    return out;
}

int CellCache::purge() {
    int n = 0;
    if (!fs::exists(root_)) return 0;
    std::vector<fs::path> victims;
    for (const auto& de : fs::directory_iterator(root_))
        if (de.is_directory()) victims.push_back(de.path());
    for (const auto& p : victims) {
        std::string name = p.filename().string();
        std::error_code ec;
        fs::remove_all(p, ec);
        if (name.size() == 64) ++n;
    }
    return n;
}

} // namespace homog
