#include "homog/eps_solver.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

namespace homog {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

bool near_integer(double x) { return std::fabs(x - std::round(x)) <= 1e-9 * std::max(1.0, std::fabs(x)); }

} // namespace

std::shared_ptr<const PeriodicDomain> covering_domain(std::shared_ptr<const ImplicitSurfaceCell> cell, double eps,
                                                      const Vec& lo, const Vec& hi) {
    // closed cells must lie in the open box; widen it by a dyadic fraction of eps
    const double pad_w = eps / 1024.0;
    Vec a = lo, b = hi;
    for (int i = 0; i < cell->dim(); ++i) {
        if (!near_integer((hi(i) - lo(i)) / eps) || !near_integer(lo(i) / eps))
            throw Error(ErrorKind::GridMismatch, "box is not a union of eps-cells");
        a(i) -= pad_w;
        b(i) += pad_w;
    }
    auto dom = std::make_shared<PeriodicDomain>(tile(std::move(cell), eps, a, b));
    std::size_t want = 1;
    for (int i = 0; i < dom->dim(); ++i) want *= static_cast<std::size_t>(std::lround((hi(i) - lo(i)) / eps));
    if (dom->cells().size() != want) throw Error(ErrorKind::GridMismatch, "box is not a union of eps-cells");
    return dom;
}

PullbackCoefficients assemble_pullback(const EpsProblem& p, double t, const Vec& x) {
    PullbackCoefficients c;
    const int d = p.dom->dim();
    if (!p.map) {
        c.F = Mat::Identity();
        c.F_inv = Mat::Identity();
        c.A = eye_d(d);
        return c;
    }
    HanzawaEval e = p.map->eval(t, x);
    c.F = e.ds;
    c.J = det_d(e.ds, d);
    if (!(c.J > 0.0)) throw Error(ErrorKind::BoundViolated, "Hanzawa map is not orientation preserving");
    c.F_inv = inverse_d(e.ds, d);
    if (spectral_norm(c.F, d) > 2.0 || spectral_norm(c.F_inv, d) > 2.0)
        throw Error(ErrorKind::BoundViolated, "Hanzawa Jacobian outside the certified bounds");
    c.A = c.J * c.F_inv * c.F_inv.transpose();
    for (int i = d; i < 3; ++i) c.A(i, i) = 0.0;
    c.w = c.J * (c.F_inv * e.ds_dt);
    return c;
}

// ---------------------------------------------------------------- solver

EpsSolver::EpsSolver(EpsProblem problem, EpsConfig cfg) : pb_(std::move(problem)), cfg_(cfg) {
    if (!pb_.dom) throw Error(ErrorKind::InvalidArgument, "eps problem without a domain");
    d_ = pb_.dom->dim();
    if (cfg_.m < 4 || !(cfg_.dt > 0.0) || cfg_.steps < 0 || cfg_.surface_samples < 8)
        throw Error(ErrorKind::InvalidArgument, "bad eps discretization");
    if (!(pb_.kappa1 > 0.0) || !(pb_.kappa2 > 0.0)) throw Error(ErrorKind::InvalidArgument, "bad conductivities");
    if (pb_.map && d_ != 2) throw Error(ErrorKind::InvalidArgument, "moving geometry is supported in 2D");
    if (pb_.map && !pb_.velocity) throw Error(ErrorKind::InvalidArgument, "moving geometry needs the velocity");
    const PeriodicDomain& dom = *pb_.dom;
    const double eps = dom.eps();
    h_ = eps / cfg_.m;
    const bool own_box = (pb_.hi - pb_.lo).head(d_).norm() > 0.0;
    lo_ = own_box ? pb_.lo : dom.lo();
    hi_ = own_box ? pb_.hi : dom.hi();
    for (int i = 0; i < d_; ++i) {
        double cells_i = (hi_(i) - lo_(i)) / eps;
        if (!(cells_i > 0.0) || !near_integer(cells_i) || !near_integer(lo_(i) / eps))
            throw Error(ErrorKind::GridMismatch, "the box must be an exact union of eps-cells");
        n_[i] = static_cast<int>(std::lround(cells_i)) * cfg_.m;
    }
    for (const auto& k : dom.cells())
        for (int i = 0; i < d_; ++i)
            if (dom.origin(k)(i) < lo_(i) - 1e-12 || dom.origin(k)(i) + eps > hi_(i) + 1e-12)
                throw Error(ErrorKind::GridMismatch, "tiled cell outside the computational box");
    int total = n_[0] * n_[1] * n_[2];

    // local node pattern, shared by every cell
    const int m = cfg_.m;
    const ImplicitSurfaceCell& cell = dom.cell();
    auto yphi = [&](const Vec& y) {
        Vec u = y;
        for (int i = 0; i < d_; ++i) u(i) -= std::floor(u(i));
        return cell.shape().phi(u);
    };
    int local_n = 1;
    for (int i = 0; i < d_; ++i) local_n *= m;
    auto local_point = [&](int l) {
        Vec y = Vec::Zero();
        for (int i = 0; i < d_; ++i) {
            y(i) = (l % m + 0.5) / m;
            l /= m;
        }
        return y;
    };
    const int sub = d_ == 2 ? 8 : 4;
    int sub_n = 1;
    for (int i = 0; i < d_; ++i) sub_n *= sub;
    std::vector<double> lfrac(local_n, 0.0);
    double lsum = 0.0;
    for (int l = 0; l < local_n; ++l) {
        Vec c = local_point(l);
        int cnt = 0;
        for (int s = 0; s < sub_n; ++s) {
            Vec y = c;
            int r = s;
            for (int i = 0; i < d_; ++i) {
                y(i) += ((r % sub + 0.5) / sub - 0.5) / m;
                r /= sub;
            }
            cnt += yphi(y) < 0.0;
        }
        lfrac[l] = static_cast<double>(cnt) / sub_n;
        lsum += lfrac[l];
    }
    double y2 = cell.empty() ? 0.0 : ShapeInclusion(dom.cell_ptr()).volume();
    // rescale so the phase-2 volume of a cell is exact
    if (lsum > 0.0)
        for (double& f : lfrac) f *= y2 * local_n / lsum;
    // cells at the box boundary carry no inclusion
    std::map<Index, int> cell_pos;
    for (std::size_t k = 0; k < dom.cells().size(); ++k) cell_pos[dom.cells()[k]] = static_cast<int>(k);
    auto tiled = [&](const Vec& x) { return cell_pos.count(dom.cell_of(x)) > 0; };
    auto xphi = [&](const Vec& x) { return tiled(x) ? yphi(x / eps) : 1.0; };
    // local face resistances along each axis (towards the + neighbour)
    const double k2e = eps * eps * pb_.kappa2;
    std::vector<double> lres(static_cast<std::size_t>(local_n) * d_);
    for (int l = 0; l < local_n; ++l)
        for (int a = 0; a < d_; ++a) {
            Vec p = local_point(l), q = p;
            q(a) += 1.0 / m;
            auto [fo, fi] = cell.empty() ? std::pair<double, double>{1.0, 0.0} : segment_split(yphi, p, q);
            lres[l * d_ + a] = fo / pb_.kappa1 + fi / k2e;
        }

    const double vol = std::pow(h_, d_);
    theta_.resize(total);
    jac_.assign(total, 1.0);
    vol1_.resize(total);
    vol2_.resize(total);
    cell_of_node_.resize(total);
    for (int g = 0; g < total; ++g) {
        std::array<int, 3> ijk{g % n_[0], (g / n_[0]) % n_[1], g / (n_[0] * n_[1])};
        int l = 0, stride = 1;
        Index k{0, 0, 0};
        for (int i = 0; i < d_; ++i) {
            l += (ijk[i] % m) * stride;
            stride *= m;
            k[i] = static_cast<int>(std::lround(lo_(i) / eps)) + ijk[i] / m;
        }
        auto it = cell_pos.find(k);
        const bool own = it != cell_pos.end();
        cell_of_node_[g] = own ? it->second : -1;
        vol2_[g] = own ? vol * lfrac[l] : 0.0;
        vol1_[g] = vol - vol2_[g];
        Vec x = node_point(g);
        bool inside = own && !cell.empty() && yphi(local_point(l)) < 0.0;
        theta_[g] = (inside ? pb_.theta2 : pb_.theta1).eval(x, lo_, hi_);
        for (int a = 0; a < d_; ++a) {
            if (ijk[a] + 1 >= n_[a]) continue;
            std::array<int, 3> nb = ijk;
            ++nb[a];
            int q = flat(nb);
            Vec xq = node_point(q);
            double res = lres[l * d_ + a];
            if (!own || !tiled(xq)) {
                auto [fo, fi] = cell.empty() ? std::pair<double, double>{1.0, 0.0} : segment_split(xphi, x, xq);
                res = fo / pb_.kappa1 + fi / k2e;
            }
            faces_.push_back({g, q, a, res});
        }
    }
    if (!cell.empty()) {
        gamma_ = dom.surface_samples(cfg_.surface_samples);
        gamma_node_.resize(gamma_.size());
        for (std::size_t s = 0; s < gamma_.size(); ++s) {
            std::array<int, 3> ijk{0, 0, 0};
            for (int i = 0; i < d_; ++i)
                ijk[i] = std::clamp(static_cast<int>(std::floor((gamma_[s].point(i) - lo_(i)) / h_)), 0,
                                    n_[i] - 1);
            gamma_node_[s] = flat(ijk);
        }
    }
    double l2 = 0.0;
    for (int g = 0; g < total; ++g) l2 += vol * theta_[g] * theta_[g];
    energy_quantity_ = l2;
}

int EpsSolver::flat(const std::array<int, 3>& ijk) const { return ijk[0] + n_[0] * (ijk[1] + n_[1] * ijk[2]); }

Vec EpsSolver::node_point(int g) const {
    const Vec& lo = lo_;
    Vec x = Vec::Zero();
    x(0) = lo(0) + (g % n_[0] + 0.5) * h_;
    x(1) = lo(1) + ((g / n_[0]) % n_[1] + 0.5) * h_;
    if (d_ == 3) x(2) = lo(2) + (g / (n_[0] * n_[1]) + 0.5) * h_;
    return x;
}

double EpsSolver::energy() const {
    const double vol = std::pow(h_, d_);
    double e = 0.0;
    for (std::size_t g = 0; g < theta_.size(); ++g) e += vol * jac_[g] * theta_[g];
    return e;
}

EpsLedgerRow EpsSolver::step() {
    const PeriodicDomain& dom = *pb_.dom;
    const int total = nodes();
    const double dt = cfg_.dt, t1 = t_ + dt, vol = std::pow(h_, d_);
    const double area = std::pow(h_, d_ - 1);
    const double e0 = energy();
    const bool moving = static_cast<bool>(pb_.map);

    std::vector<double> jac1 = jac_;
    std::vector<double> rhs(total, 0.0), diag(total, 0.0);
    std::vector<Triplet> trip;
    trip.reserve(faces_.size() * (moving ? 12 : 4) + total);
    std::vector<double> cond(faces_.size());

    auto neighbor = [&](int g, int axis, int delta) {
        std::array<int, 3> ijk{g % n_[0], (g / n_[0]) % n_[1], g / (n_[0] * n_[1])};
        ijk[axis] = std::clamp(ijk[axis] + delta, 0, n_[axis] - 1);
        return flat(ijk);
    };

    // transport T_f from q into p: c_p theta_p + c_q theta_q + cross terms
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        const Face& fc = faces_[f];
        double kf = 1.0 / fc.resist;
        double G = area / h_ * kf, phi_f = 0.0;
        if (moving) {
            Vec xm = 0.5 * (node_point(fc.p) + node_point(fc.q));
            PullbackCoefficients pc = assemble_pullback(pb_, t1, xm);
            G *= pc.A(fc.axis, fc.axis);
            phi_f = area * pc.w(fc.axis);
            jac1[fc.p] += dt / vol * phi_f;
            jac1[fc.q] -= dt / vol * phi_f;
            int b = 1 - fc.axis;
            double C = area * kf * pc.A(fc.axis, b) / (4.0 * h_);
            if (C != 0.0) {
                int tn[4] = {neighbor(fc.p, b, 1), neighbor(fc.p, b, -1), neighbor(fc.q, b, 1), neighbor(fc.q, b, -1)};
                double sg[4] = {C, -C, C, -C};
                for (int k = 0; k < 4; ++k) {
                    trip.emplace_back(fc.p, tn[k], -sg[k]);
                    trip.emplace_back(fc.q, tn[k], sg[k]);
                }
            }
        }
        cond[f] = G;
        double cp = 0.5 * phi_f - G, cq = 0.5 * phi_f + G;
        diag[fc.p] -= cp;
        trip.emplace_back(fc.p, fc.q, -cq);
        trip.emplace_back(fc.q, fc.p, cp);
        diag[fc.q] += cq;
    }

    double sources = 0.0;
    for (int g = 0; g < total; ++g) {
        Vec x = node_point(g);
        double src = (pb_.f1.eval(x, lo_, hi_) * vol1_[g] + pb_.f2.eval(x, lo_, hi_) * vol2_[g]) *
                     jac1[g];
        sources += dt * src;
        rhs[g] = vol * jac_[g] * theta_[g] / dt + src;
        diag[g] += vol * jac1[g] / dt;
    }
    double latent = 0.0, measure = 0.0;
    for (std::size_t s = 0; s < gamma_.size(); ++s) {
        const SurfaceSample& gs = gamma_[s];
        double jg = 1.0, v = 0.0;
        if (moving) {
            PullbackCoefficients pc = assemble_pullback(pb_, t1, gs.point);
            jg = pc.J * (pc.F_inv.transpose() * gs.normal).norm();
            v = pb_.velocity->value(t1, pb_.map->s(t1, gs.point));
        }
        measure += gs.weight * jg;
        double q = pb_.latent * dom.eps() * v * jg * gs.weight;
        latent += dt * q;
        rhs[gamma_node_[s]] += q;
    }
    for (int g = 0; g < total; ++g) trip.emplace_back(g, g, diag[g]);

    SpMat A(total, total);
    A.setFromTriplets(trip.begin(), trip.end());
    Eigen::VectorXd b = Eigen::Map<Eigen::VectorXd>(rhs.data(), total), x;
    if (moving) {
        Eigen::SparseLU<SpMat> lu;
        lu.analyzePattern(A);
        lu.factorize(A);
        if (lu.info() != Eigen::Success) throw Error(ErrorKind::SolverDiverged, "eps factorization failed");
        x = lu.solve(b);
    } else {
        Eigen::SimplicialLDLT<SpMat> ldlt(A);
        if (ldlt.info() != Eigen::Success) throw Error(ErrorKind::SolverDiverged, "eps factorization failed");
        x = ldlt.solve(b);
    }
    double bn = b.lpNorm<Eigen::Infinity>();
    double res = bn > 0.0 ? (A * x - b).lpNorm<Eigen::Infinity>() / bn : 0.0;
    if (!x.allFinite() || !(res <= 1e-10)) throw Error(ErrorKind::SolverDiverged, "eps residual " + std::to_string(res));

    theta_.assign(x.data(), x.data() + total);
    jac_ = std::move(jac1);
    t_ = t1;
    ++step_;
    double diss = 0.0, l2 = 0.0;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        double dq = theta_[faces_[f].q] - theta_[faces_[f].p];
        diss += cond[f] * dq * dq;
    }
    dissipation_ += dt * diss;
    for (int g = 0; g < total; ++g) l2 += vol * jac_[g] * theta_[g] * theta_[g];
    energy_quantity_ = std::max(energy_quantity_, l2 + dissipation_);

    EpsLedgerRow row;
    row.step = step_;
    row.t = t_;
    row.energy = energy();
    row.sources = sources;
    row.latent = latent;
    row.interface_measure = measure;
    double scale = std::max({std::fabs(e0), std::fabs(sources) + std::fabs(latent), 1e-300});
    row.residual = (row.energy - e0 - sources - latent) / scale;
    row.solver_residual = res;
    return row;
}

void EpsSolver::cell_averages(std::vector<double>& phase1, std::vector<double>& phase2) const {
    const std::size_t nc = pb_.dom->cells().size();
    phase1.assign(nc, 0.0);
    phase2.assign(nc, 0.0);
    const double cv = std::pow(pb_.dom->eps(), d_);
    for (std::size_t g = 0; g < theta_.size(); ++g) {
        if (cell_of_node_[g] < 0) continue;
        phase1[cell_of_node_[g]] += vol1_[g] * jac_[g] * theta_[g] / cv;
        phase2[cell_of_node_[g]] += vol2_[g] * jac_[g] * theta_[g] / cv;
    }
}

std::vector<Vec> EpsSolver::cell_centers() const {
    std::vector<Vec> out;
    const double eps = pb_.dom->eps();
    for (const auto& k : pb_.dom->cells()) {
        Vec c = pb_.dom->origin(k);
        for (int i = 0; i < d_; ++i) c(i) += 0.5 * eps;
        out.push_back(c);
    }
    return out;
}

EpsRun run_eps(EpsSolver& solver) {
    EpsRun run;
    run.eps = solver.problem().dom->eps();
    run.centers = solver.cell_centers();
    auto record = [&] {
        run.times.push_back(solver.time());
        run.phase1.emplace_back();
        run.phase2.emplace_back();
        solver.cell_averages(run.phase1.back(), run.phase2.back());
    };
    record();
    for (int k = 0; k < solver.config().steps; ++k) {
        try {
            run.ledger.push_back(solver.step());
        } catch (const Error& e) {
            run.failure = e.what();
            break;
        }
        record();
    }
    run.energy_quantity = solver.energy_quantity();
    return run;
}

EpsRun sample_homogenized(const TwoScaleSolver& ts, const TwoScaleRun& tr, const PeriodicDomain& dom) {
    EpsRun run;
    run.eps = dom.eps();
    for (const auto& k : dom.cells()) {
        Vec c = dom.origin(k);
        for (int i = 0; i < dom.dim(); ++i) c(i) += 0.5 * dom.eps();
        run.centers.push_back(c);
    }
    run.times = tr.times;
    for (std::size_t n = 0; n < tr.times.size(); ++n) {
        std::vector<double> a, b;
        for (const auto& c : run.centers) {
            a.push_back(ts.interpolate(tr.phase1[n], c));
            b.push_back(ts.interpolate(tr.phase2[n], c));
        }
        run.phase1.push_back(std::move(a));
        run.phase2.push_back(std::move(b));
    }
    return run;
}

double ErrorTable::max_ratio() const {
    double r = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) r = std::max({r, rows[i].ratio_phase1, rows[i].ratio_phase2});
    return r;
}

nlohmann::json ErrorTable::to_json() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows)
        j.push_back({{"eps", r.eps},
                     {"err_phase1", r.err_phase1},
                     {"err_phase2", r.err_phase2},
                     {"ratio_phase1", r.ratio_phase1},
                     {"ratio_phase2", r.ratio_phase2},
                     {"energy_quantity", r.energy_quantity}});
    return {{"rows", j}, {"decreasing_phase1", decreasing_phase1}, {"decreasing_phase2", decreasing_phase2}};
}

void ErrorTable::write_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
    f << "eps,err_phase1,err_phase2,ratio_phase1,ratio_phase2,energy_quantity\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.eps, r.err_phase1, r.err_phase2,
                      r.ratio_phase1, r.ratio_phase2, r.energy_quantity);
        f << buf;
    }
}

ErrorTable compare_to_homogenized(const std::vector<EpsRun>& runs, const TwoScaleSolver& ts, const TwoScaleRun& tr) {
    if (runs.size() < 3) throw Error(ErrorKind::GridMismatch, "need at least three eps values");
    ErrorTable table;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        const EpsRun& run = runs[r];
        if (!run.ok()) throw Error(ErrorKind::GridMismatch, "eps run did not complete: " + run.failure);
        if (r > 0 && !(run.eps < runs[r - 1].eps)) throw Error(ErrorKind::GridMismatch, "eps must decrease");
        if (run.times.size() != tr.times.size()) throw Error(ErrorKind::GridMismatch, "time grids differ");
        for (std::size_t n = 0; n < tr.times.size(); ++n)
            if (std::fabs(run.times[n] - tr.times[n]) > 1e-12) throw Error(ErrorKind::GridMismatch, "time grids differ");
        const double cv = std::pow(run.eps, ts.config().cell->dim());
        ErrorRow row;
        row.eps = run.eps;
        row.energy_quantity = run.energy_quantity;
        double e1 = 0.0, e2 = 0.0;
        for (std::size_t n = 1; n < tr.times.size(); ++n) {
            double dt = tr.times[n] - tr.times[n - 1];
            for (std::size_t k = 0; k < run.centers.size(); ++k) {
                double a = run.phase1[n][k] - ts.interpolate(tr.phase1[n], run.centers[k]);
                double b = run.phase2[n][k] - ts.interpolate(tr.phase2[n], run.centers[k]);
                e1 += dt * cv * a * a;
                e2 += dt * cv * b * b;
            }
        }
        row.err_phase1 = std::sqrt(e1);
        row.err_phase2 = std::sqrt(e2);
        if (r > 0) {
            const ErrorRow& prev = table.rows.back();
            row.ratio_phase1 = prev.err_phase1 > 0.0 ? row.err_phase1 / prev.err_phase1 : 0.0;
            row.ratio_phase2 = prev.err_phase2 > 0.0 ? row.err_phase2 / prev.err_phase2 : 0.0;
        }
        table.rows.push_back(row);
    }
    table.decreasing_phase1 = table.decreasing_phase2 = true;
    for (std::size_t r = 1; r < table.rows.size(); ++r) {
        if (!(table.rows[r].err_phase1 < table.rows[r - 1].err_phase1)) table.decreasing_phase1 = false;
        if (!(table.rows[r].err_phase2 < table.rows[r - 1].err_phase2)) table.decreasing_phase2 = false;
    }
    return table;
}

} // namespace homog
