#include "homog/unfolding.hpp"

#include "homog/hanzawa.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <random>

namespace homog {

std::pair<Index, Vec> int_frac(const Vec& x, double eps, int dim) {
    Index k{0, 0, 0};
    Vec f = Vec::Zero();
    for (int i = 0; i < dim; ++i) {
        double q = x(i) / eps;
        double fl = std::floor(q);
        double r = q - fl;
        if (r >= 1.0) {
            fl += 1.0;
            r = 0.0;
        }
        k[i] = static_cast<int>(fl);
        f(i) = r;
    }
    return {k, f};
}

GridField GridField::sample(const FieldFn& f, int components, int dim, const Vec& lo, const Vec& hi, int n) {
    GridField g;
    g.dim = dim;
    g.components = components;
    g.lo = lo;
    g.hi = hi;
    for (int i = 0; i < 3; ++i) g.n[i] = i < dim ? n : 0;
    std::size_t total = 1;
    for (int i = 0; i < dim; ++i) total *= static_cast<std::size_t>(n + 1);
    g.values.resize(total * components);
    for (std::size_t idx = 0; idx < total; ++idx) {
        Vec x = Vec::Zero();
        std::size_t r = idx;
        for (int i = 0; i < dim; ++i) {
            int j = static_cast<int>(r % (n + 1));
            r /= (n + 1);
            x(i) = lo(i) + (hi(i) - lo(i)) * j / n;
        }
        f(x, &g.values[idx * components]);
    }
    return g;
}

void GridField::eval(const Vec& x, double* out) const {
    int base[3] = {0, 0, 0};
    double w[3] = {0, 0, 0};
    for (int i = 0; i < dim; ++i) {
        double q = (x(i) - lo(i)) / spacing(i);
        int j = std::clamp(static_cast<int>(std::floor(q)), 0, n[i] - 1);
        base[i] = j;
        w[i] = std::clamp(q - j, 0.0, 1.0);
    }
    for (int c = 0; c < components; ++c) out[c] = 0.0;
    for (int corner = 0; corner < (1 << dim); ++corner) {
        double wt = 1.0;
        std::size_t idx = 0, stride = 1;
        for (int i = 0; i < dim; ++i) {
            int b = (corner >> i) & 1;
            wt *= b ? w[i] : 1.0 - w[i];
            idx += stride * static_cast<std::size_t>(base[i] + b);
            stride *= static_cast<std::size_t>(n[i] + 1);
        }
        if (wt == 0.0) continue;
        for (int c = 0; c < components; ++c) out[c] += wt * values[idx * components + c];
    }
}

FieldFn GridField::fn() const {
    return [this](const Vec& x, double* out) { eval(x, out); };
}

int UnfoldedField::micro_count() const {
    int m = 1;
    for (int i = 0; i < dim; ++i) m *= micro_n;
    return m;
}

Vec UnfoldedField::micro_point(int j) const {
    Vec y = Vec::Zero();
    for (int i = 0; i < dim; ++i) {
        y(i) = (j % micro_n + 0.5) / micro_n;
        j /= micro_n;
    }
    return y;
}

double UnfoldedField::integral(int c) const {
    // T_eps f is constant in x on each cell of volume eps^d
    const int m = micro_count();
    double cell_vol = std::pow(eps, dim);
    double total = 0.0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
        double s = 0.0;
        for (int j = 0; j < m; ++j) s += at(k, j, c);
        total += cell_vol * s / m;
    }
    return total;
}

UnfoldedField unfold_volume(const FieldFn& f, int components, const PeriodicDomain& dom, int micro_n) {
    if (micro_n < 1) throw Error(ErrorKind::InvalidArgument, "micro grid needs at least one point");
    UnfoldedField u;
    u.eps = dom.eps();
    u.dim = dom.dim();
    u.micro_n = micro_n;
    u.components = components;
    u.cells = dom.cells();
    const int m = u.micro_count();
    u.values.resize(u.cells.size() * m * components);
    parallel_for(u.cells.size(), [&](std::size_t k) {
        Vec o = dom.origin(u.cells[k]);
        for (int j = 0; j < m; ++j) f(o + u.eps * u.micro_point(j), &u.values[(k * m + j) * components]);
    });
    return u;
}

UnfoldedField unfold_volume(const GridField& f, const PeriodicDomain& dom, int micro_n) {
    if (f.dim != dom.dim()) throw Error(ErrorKind::GridMismatch, "grid dimension differs from the domain");
    for (int i = 0; i < f.dim; ++i)
        if (f.spacing(i) > dom.eps() / micro_n * (1.0 + 1e-12))
            throw Error(ErrorKind::ResolutionTooCoarse, "grid spacing exceeds eps / micro_n");
    return unfold_volume(f.fn(), f.components, dom, micro_n);
}

double UnfoldedSurface::integral(int c) const {
    const std::size_t m = samples.size();
    double cell_vol = std::pow(eps, dim);
    double total = 0.0;
    for (std::size_t k = 0; k < cells.size(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += samples[j].weight * values[(k * m + j) * components + c];
        total += cell_vol * s;
    }
    return total;
}

UnfoldedSurface unfold_surface(const FieldFn& fb, int components, const PeriodicDomain& dom, int n_samples) {
    UnfoldedSurface u;
    u.eps = dom.eps();
    u.dim = dom.dim();
    u.components = components;
    u.cells = dom.cells();
    u.samples = dom.cell().surface_samples(n_samples);
    const std::size_t m = u.samples.size();
    u.values.resize(u.cells.size() * m * components);
    parallel_for(u.cells.size(), [&](std::size_t k) {
        Vec o = dom.origin(u.cells[k]);
        for (std::size_t j = 0; j < m; ++j)
            fb(o + u.eps * u.samples[j].point, &u.values[(k * m + j) * components]);
    });
    return u;
}

FieldFn fold(const TwoScaleFn& g, double eps, int dim, int components) {
    (void)components;
    return [g, eps, dim](const Vec& x, double* out) { g(x, int_frac(x, eps, dim).second, out); };
}

double cell_integral(const FieldFn& f, const PeriodicDomain& dom, int micro_n, int c) {
    const int d = dom.dim();
    int m = 1;
    for (int i = 0; i < d; ++i) m *= micro_n;
    const double e = dom.eps();
    const double h = e / micro_n;
    double w = std::pow(h, d);
    // walk a global midpoint grid over each cell, point by point
    double total = 0.0;
    std::vector<double> buf(static_cast<std::size_t>(c + 1) + 8);
    for (const auto& k : dom.cells()) {
        for (int j = 0; j < m; ++j) {
            Vec x = Vec::Zero();
            int r = j;
            for (int i = 0; i < d; ++i) {
                x(i) = (k[i] * micro_n + r % micro_n + 0.5) * h;
                r /= micro_n;
            }
            f(x, buf.data());
            total += w * buf[c];
        }
    }
    return total;
}

double IdentityReport::max() const { return std::max({normal, lambda, weingarten, projection, projection_jacobian}); }

nlohmann::json IdentityReport::to_json() const {
    return {{"samples", samples},       {"normal", normal},
            {"lambda", lambda},         {"weingarten", weingarten},
            {"projection", projection}, {"projection_jacobian", projection_jacobian},
            {"pass", pass()}};
}

IdentityReport check_geometric_identities(const PeriodicDomain& dom, int n_samples, std::uint64_t seed) {
    IdentityReport r;
    const ImplicitSurfaceCell& cell = dom.cell();
    if (cell.empty() || dom.cells().empty()) return r;
    const int d = dom.dim();
    const double e = dom.eps();
    const double a = cell.a();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto cs = cell.surface_samples(997);
    r.samples = n_samples;
    for (int i = 0; i < n_samples; ++i) {
        const Index& k = dom.cells()[rng() % dom.cells().size()];
        Vec o = dom.origin(k);
        const Vec& g = cs[rng() % cs.size()].point;
        Vec gx = o + e * g;
        // a normal and a Weingarten map are compared at the unfolded surface point
        r.normal = std::max(r.normal, (dom.normal(gx) - cell.normal(g)).norm());
        r.weingarten = std::max(r.weingarten, (dom.weingarten(gx) - cell.weingarten(g) / e).norm() * e);
        double s = a * (2.0 * u(rng) - 1.0) * 0.999;
        Vec lam = dom.lambda_map(gx, e * s);
        r.lambda = std::max(r.lambda, (lam - (e * cell.lambda_map(g, s) + o)).norm() / e);
        // a tube point y of the cell
        Vec y = cell.lambda_map(cs[rng() % cs.size()].point, a * (2.0 * u(rng) - 1.0) * 0.999);
        Vec x = o + e * y;
        TubePoint tp = cell.tube_coords(y);
        r.projection = std::max(r.projection, (dom.project(x) - (e * tp.gamma + o)).norm() / e);
        Mat dp = inverse_d(Mat::Identity() - tp.d * cell.weingarten(tp.gamma), d) *
                 (eye_d(d) - tp.normal * tp.normal.transpose());
        r.projection_jacobian = std::max(r.projection_jacobian, (dom.projection_jacobian(x) - dp).norm());
    }
    return r;
}

nlohmann::json DistanceTable::to_json() const {
    nlohmann::json rj = nlohmann::json::array();
    for (const auto& row : rows)
        rj.push_back({{"eps_n", row.eps_n},
                      {"eps_m", row.eps_m},
                      {"distance", row.distance},
                      {"successive", row.successive},
                      {"monotone", row.monotone}});
    return {{"rows", rj}, {"to_reference", to_reference}, {"successive_decreasing", successive_decreasing}};
}

void DistanceTable::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
    f << "eps_n,eps_m,distance,monotone_flag\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%d\n", r.eps_n, r.eps_m, r.distance, r.monotone ? 1 : 0);
        f << buf;
    }
}

DistanceTable two_scale_distance(const std::vector<UnfoldedField>& fields, const TwoScaleFn* reference) {
    DistanceTable t;
    if (fields.empty()) return t;
    const UnfoldedField& f0 = fields.front();
    std::size_t coarse = 0, fine = 0;
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto& f = fields[i];
        if (f.dim != f0.dim || f.micro_n != f0.micro_n || f.components != f0.components)
            throw Error(ErrorKind::GridMismatch, "fields differ in dimension, micro grid or components");
        if (f.eps > fields[coarse].eps) coarse = i;
        if (f.eps < fields[fine].eps) fine = i;
    }
    const int d = f0.dim;
    const int m = f0.micro_count();
    const int nc = f0.components;
    const double ef = fields[fine].eps;
    std::vector<int> ratio(fields.size());
    std::vector<std::map<Index, std::size_t>> lookup(fields.size());
    for (std::size_t i = 0; i < fields.size(); ++i) {
        double q = fields[i].eps / ef;
        ratio[i] = static_cast<int>(std::lround(q));
        if (std::fabs(q - ratio[i]) > 1e-9) throw Error(ErrorKind::GridMismatch, "cell lattices are not nested");
        for (std::size_t k = 0; k < fields[i].cells.size(); ++k) lookup[i][fields[i].cells[k]] = k;
    }
    auto floor_div = [](int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); };
    // fine cells inside the coarsest tiling
    std::vector<Index> region;
    for (const auto& kc : fields[coarse].cells) {
        int r = ratio[coarse];
        Index lo{kc[0] * r, kc[1] * r, kc[2] * r};
        int n1 = d > 1 ? r : 1, n2 = d > 2 ? r : 1;
        for (int c = 0; c < n2; ++c)
            for (int b = 0; b < n1; ++b)
                for (int a = 0; a < r; ++a) region.push_back({lo[0] + a, lo[1] + b, lo[2] + c});
    }
    // owner cell index of each field for each fine cell
    std::vector<std::vector<std::size_t>> owner(fields.size(), std::vector<std::size_t>(region.size()));
    for (std::size_t i = 0; i < fields.size(); ++i)
        for (std::size_t q = 0; q < region.size(); ++q) {
            Index k{0, 0, 0};
            for (int c = 0; c < d; ++c) k[c] = floor_div(region[q][c], ratio[i]);
            auto it = lookup[i].find(k);
            if (it == lookup[i].end()) throw Error(ErrorKind::GridMismatch, "tilings do not cover the common region");
            owner[i][q] = it->second;
        }
    const double wx = std::pow(ef, d);
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t q = 0; q < region.size(); ++q) {
            std::size_t ki = owner[i][q], kj = owner[j][q];
            double cs = 0.0;
            for (int p = 0; p < m; ++p)
                for (int c = 0; c < nc; ++c) {
                    double diff = fields[i].at(ki, p, c) - fields[j].at(kj, p, c);
                    cs += diff * diff;
                }
            s += wx * cs / m;
        }
        return std::sqrt(s);
    };
    // successive pairs in order of decreasing eps
    std::vector<std::size_t> order(fields.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fields[a].eps > fields[b].eps; });
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s + 1 < order.size(); ++s) {
        DistanceRow row;
        row.eps_n = fields[order[s]].eps;
        row.eps_m = fields[order[s + 1]].eps;
        row.distance = dist(order[s], order[s + 1]);
        row.successive = true;
        row.monotone = row.distance < prev;
        t.successive_decreasing = t.successive_decreasing && row.monotone;
        prev = row.distance;
        t.rows.push_back(row);
    }
    for (std::size_t s = 0; s < order.size(); ++s)
        for (std::size_t u = s + 2; u < order.size(); ++u) {
            DistanceRow row;
            row.eps_n = fields[order[s]].eps;
            row.eps_m = fields[order[u]].eps;
            row.distance = dist(order[s], order[u]);
            t.rows.push_back(row);
        }
    if (reference) {
        std::vector<double> buf(nc);
        for (std::size_t s = 0; s < order.size(); ++s) {
            const auto& f = fields[order[s]];
            double acc = 0.0;
            for (std::size_t q = 0; q < region.size(); ++q) {
                Vec x = Vec::Zero();
                for (int c = 0; c < d; ++c) x(c) = (region[q][c] + 0.5) * ef;
                std::size_t k = owner[order[s]][q];
                double cs = 0.0;
                for (int p = 0; p < m; ++p) {
                    (*reference)(x, f.micro_point(p), buf.data());
                    for (int c = 0; c < nc; ++c) {
                        double diff = f.at(k, p, c) - buf[c];
                        cs += diff * diff;
                    }
                }
                acc += wx * cs / m;
            }
            t.to_reference.push_back(std::sqrt(acc));
        }
    }
    return t;
}

nlohmann::json TraceCheck::to_json() const {
    return {{"lhs", lhs}, {"rhs", rhs}, {"l2_sq", l2_sq}, {"grad_sq", grad_sq}, {"ok", ok}};
}

TraceCheck scaled_trace_norm(const GradFieldFn& u, const PeriodicDomain& dom, double c_tr, int grid_n, int surface_n,
                             const HeightProvider* heights, double t) {
    TraceCheck r;
    const int d = dom.dim();
    const double e = dom.eps();
    Vec lo = dom.lo(), hi = dom.hi();
    double vol = 1.0;
    std::array<double, 3> h{};
    std::size_t total = 1;
    for (int i = 0; i < d; ++i) {
        h[i] = (hi(i) - lo(i)) / grid_n;
        vol *= h[i];
        total *= static_cast<std::size_t>(grid_n);
    }
    for (std::size_t idx = 0; idx < total; ++idx) {
        Vec x = Vec::Zero();
        std::size_t q = idx;
        for (int i = 0; i < d; ++i) {
            x(i) = lo(i) + (q % grid_n + 0.5) * h[i];
            q /= grid_n;
        }
        Vec g = Vec::Zero();
        double v = u(x, g);
        r.l2_sq += vol * v * v;
        r.grad_sq += vol * g.squaredNorm();
    }
    double surf = 0.0;
    for (const auto& s : dom.surface_samples(surface_n)) {
        Vec p = s.point;
        double w = s.weight;
        if (heights) {
            HeightSample hs = heights->at(t, s.point);
            p = s.point + hs.h * s.normal;
            // area factor of gamma -> gamma + h n from a tangent basis
            Mat l = dom.weingarten(s.point);
            Vec n = s.normal;
            Vec t1 = d == 2 ? Vec(-n(1), n(0), 0.0) : n.unitOrthogonal();
            Vec i1 = (Mat::Identity() - hs.h * l) * t1 + n * hs.grad.dot(t1);
            if (d == 2) {
                w *= i1.norm();
            } else {
                Vec t2 = n.cross(t1);
                Vec i2 = (Mat::Identity() - hs.h * l) * t2 + n * hs.grad.dot(t2);
                w *= i1.cross(i2).norm();
            }
        }
        Vec g;
        double v = u(p, g);
        surf += w * v * v;
    }
    r.lhs = e * surf;
    r.rhs = 4.0 * c_tr * (r.l2_sq + e * e * r.grad_sq);
    r.ok = r.lhs <= r.rhs;
    return r;
}

} // namespace homog
