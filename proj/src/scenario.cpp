#include "homog/scenario.hpp"

#include "homog/hanzawa.hpp"
#include "homog/unfolding.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

namespace homog {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

[[noreturn]] void bad(const std::string& path, const std::string& msg) {
    throw Error(ErrorKind::ConfigInvalid, path + ": " + msg);
}

void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) bad(path, "expected an object");
}

double number(const json& j, const std::string& path) {
    if (!j.is_number()) bad(path, "expected a number");
    return j.get<double>();
}

double positive(const json& j, const std::string& path) {
    double v = number(j, path);
    if (!(v > 0.0) || !std::isfinite(v)) bad(path, "must be positive");
    return v;
}

int positive_int(const json& j, const std::string& path) {
    if (!j.is_number_integer()) bad(path, "expected an integer");
    long long v = j.get<long long>();
    if (v <= 0 || v > 100000000) bad(path, "must be a positive integer");
    return static_cast<int>(v);
}

std::string string(const json& j, const std::string& path) {
    if (!j.is_string()) bad(path, "expected a string");
    return j.get<std::string>();
}

Vec vec(const json& j, const std::string& path, int dim) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim)
        bad(path, "expected an array of " + std::to_string(dim) + " numbers");
    Vec v = Vec::Zero();
    for (int i = 0; i < dim; ++i) v(i) = number(j[i], path + "[" + std::to_string(i) + "]");
    return v;
}

json vec_json(const Vec& v, int dim) {
    json a = json::array();
    for (int i = 0; i < dim; ++i) a.push_back(v(i));
    return a;
}

GeometrySpec parse_geometry(const json& j) {
    const std::string p = "geometry";
    require_object(j, p);
    GeometrySpec g;
    if (j.contains("dim")) {
        if (!j["dim"].is_number_integer() || (j["dim"] != 2 && j["dim"] != 3)) bad(p + ".dim", "must be 2 or 3");
        g.dim = j["dim"].get<int>();
    }
    g.center = g.dim == 2 ? pad(0.5, 0.5) : pad(0.5, 0.5, 0.5);
    g.semi_axes = g.dim == 2 ? pad(0.3, 0.2) : pad(0.3, 0.2, 0.2);
    g.hi = g.dim == 2 ? pad(1, 1) : pad(1, 1, 1);
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const std::string q = p + "." + k;
        if (k == "dim") continue;
        if (k == "shape") {
            g.shape = string(*it, q);
            if (g.shape != "disk" && g.shape != "ellipse" && g.shape != "blob" && g.shape != "empty")
                bad(q, "expected disk, ellipse, blob or empty");
        } else if (k == "center") g.center = vec(*it, q, g.dim);
        else if (k == "radius") g.radius = positive(*it, q);
        else if (k == "semi_axes") {
            g.semi_axes = vec(*it, q, g.dim);
            for (int i = 0; i < g.dim; ++i)
                if (!(g.semi_axes(i) > 0)) bad(q, "must be positive");
        } else if (k == "r0") g.r0 = positive(*it, q);
        else if (k == "modes") {
            if (!it->is_array()) bad(q, "expected an array");
            for (std::size_t i = 0; i < it->size(); ++i) {
                const json& m = (*it)[i];
                const std::string mq = q + "[" + std::to_string(i) + "]";
                require_object(m, mq);
                FourierMode fm;
                for (auto mi = m.begin(); mi != m.end(); ++mi) {
                    if (mi.key() == "k") {
                        if (!mi->is_number_integer()) bad(mq + ".k", "expected an integer");
                        fm.k = mi->get<int>();
                    } else if (mi.key() == "amp") fm.amp = number(*mi, mq + ".amp");
                    else if (mi.key() == "phase") fm.phase = number(*mi, mq + ".phase");
                    else bad(mq + "." + mi.key(), "unknown key");
                }
                g.modes.push_back(fm);
            }
        } else if (k == "tube_width") g.tube_width = number(*it, q);
        else if (k == "eps") {
            if (!it->is_array() || it->empty()) bad(q, "expected a non-empty array");
            g.eps.clear();
            for (std::size_t i = 0; i < it->size(); ++i) {
                const std::string eq = q + "[" + std::to_string(i) + "]";
                double e = positive((*it)[i], eq);
                if (e > 1.0) bad(eq, "must not exceed 1");
                if (!g.eps.empty() && !(e < g.eps.back())) bad(eq, "eps list must be strictly decreasing");
                g.eps.push_back(e);
            }
        } else if (k == "box") {
            require_object(*it, q);
            for (auto bi = it->begin(); bi != it->end(); ++bi) {
                if (bi.key() == "lo") g.lo = vec(*bi, q + ".lo", g.dim);
                else if (bi.key() == "hi") g.hi = vec(*bi, q + ".hi", g.dim);
                else bad(q + "." + bi.key(), "unknown key");
            }
            for (int i = 0; i < g.dim; ++i)
                if (!(g.hi(i) > g.lo(i))) bad(q, "hi must exceed lo");
        } else {
            bad(q, "unknown key");
        }
    }
    if (g.shape == "blob" && g.dim != 2) bad(p + ".shape", "blob cells are two-dimensional");
    return g;
}

PhysicsSpec parse_physics(const json& j) {
    const std::string p = "physics";
    require_object(j, p);
    PhysicsSpec s;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const std::string q = p + "." + k;
        if (k == "kappa1") s.kappa1 = positive(*it, q);
        else if (k == "kappa2") s.kappa2 = positive(*it, q);
        else if (k == "latent") s.latent = number(*it, q);
        else if (k == "f1") s.f1 = ProfileSpec::from_json(*it, q);
        else if (k == "f2") s.f2 = ProfileSpec::from_json(*it, q);
        else if (k == "theta1") s.theta1 = ProfileSpec::from_json(*it, q);
        else if (k == "theta2") s.theta2 = ProfileSpec::from_json(*it, q);
        else bad(q, "unknown key");
    }
    return s;
}

DiscretizationSpec parse_disc(const json& j) {
    const std::string p = "discretization";
    require_object(j, p);
    DiscretizationSpec d;
    const std::map<std::string, int DiscretizationSpec::*> ints{
        {"steps", &DiscretizationSpec::steps},
        {"motion_substeps", &DiscretizationSpec::motion_substeps},
        {"surface_samples", &DiscretizationSpec::surface_samples},
        {"seed_offsets", &DiscretizationSpec::seed_offsets},
        {"max_cells", &DiscretizationSpec::max_cells},
        {"height_samples", &DiscretizationSpec::height_samples},
        {"hanzawa_points", &DiscretizationSpec::hanzawa_points},
        {"unfold_micro_n", &DiscretizationSpec::unfold_micro_n},
        {"macro_n", &DiscretizationSpec::macro_n},
        {"micro_n", &DiscretizationSpec::micro_n},
        {"cell_n", &DiscretizationSpec::cell_n},
        {"cell_check_n", &DiscretizationSpec::cell_check_n},
        {"geometry_samples", &DiscretizationSpec::geometry_samples},
        {"eps_m", &DiscretizationSpec::eps_m},
        {"identity_samples", &DiscretizationSpec::identity_samples},
    };
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const std::string q = p + "." + k;
        if (auto f = ints.find(k); f != ints.end()) d.*(f->second) = positive_int(*it, q);
        else if (k == "dt") d.dt = positive(*it, q);
        else if (k == "cell_scheme") {
            std::string s = string(*it, q);
            if (s != "q1" && s != "fv") bad(q, "expected q1 or fv");
            d.cell_scheme = cell_scheme_from_string(s);
        } else if (k == "cache") {
            if (!it->is_boolean()) bad(q, "expected a boolean");
            d.cache = it->get<bool>();
        } else {
            bad(q, "unknown key");
        }
    }
    if (d.height_samples < 4) bad(p + ".height_samples", "needs at least 4");
    if (d.cell_n < 4) bad(p + ".cell_n", "needs at least 4");
    if (d.cell_check_n < 8) bad(p + ".cell_check_n", "needs at least 8");
    return d;
}

const std::vector<std::pair<std::string, double ToleranceSpec::*>>& tolerance_fields() {
    static const std::vector<std::pair<std::string, double ToleranceSpec::*>> f{
        {"envelope", &ToleranceSpec::envelope},
        {"weingarten", &ToleranceSpec::weingarten},
        {"height_residual", &ToleranceSpec::height_residual},
        {"height_bound", &ToleranceSpec::height_bound},
        {"fd_jacobian", &ToleranceSpec::fd_jacobian},
        {"unfold_integral", &ToleranceSpec::unfold_integral},
        {"unfold_geometry", &ToleranceSpec::unfold_geometry},
        {"kappa_empty", &ToleranceSpec::kappa_empty},
        {"symmetry", &ToleranceSpec::symmetry},
        {"mesh_change", &ToleranceSpec::mesh_change},
        {"ledger", &ToleranceSpec::ledger},
        {"latent", &ToleranceSpec::latent},
        {"ratio", &ToleranceSpec::ratio},
    };
    return f;
}

ToleranceSpec parse_tol(const json& j) {
    const std::string p = "tolerances";
    require_object(j, p);
    ToleranceSpec t;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool found = false;
        for (const auto& [name, field] : tolerance_fields())
            if (name == it.key()) {
                t.*field = positive(*it, p + "." + name);
                found = true;
            }
        if (!found) bad(p + "." + it.key(), "unknown key");
    }
    return t;
}

const std::vector<std::string> kExperiments{"motion", "hanzawa", "unfold", "cell", "twoscale", "eps_sweep",
                                            "full_pipeline"};

std::string eps_tag(double e) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "eps%g", e);
    return buf;
}

std::string file_sha256(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return sha256_hex(data);
}

// Single writer of the output directory; every file it writes is listed in
// the manifest.
class Artifacts {
public:
    explicit Artifacts(fs::path dir) : dir_(std::move(dir)) {}

    const fs::path& dir() const { return dir_; }

    std::string path(const std::string& rel) {
        fs::path p = dir_ / rel;
        fs::create_directories(p.parent_path());
        files_.push_back(rel);
        return p.string();
    }

    void text(const std::string& rel, const std::string& body) {
        std::ofstream f(path(rel), std::ios::binary);
        if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write " + rel);
        f << body;
    }

    void write_json(const std::string& rel, const json& j) { text(rel, j.dump(2) + "\n"); }

    // little-endian float64 payload plus a descriptor
    void snapshot(const std::string& rel, const std::vector<double>& data, const std::vector<std::size_t>& shape,
                  const json& meta) {
        {
            std::ofstream f(path(rel + ".bin"), std::ios::binary);
            f.write(reinterpret_cast<const char*>(data.data()),
                    static_cast<std::streamsize>(data.size() * sizeof(double)));
        }
        json d = meta;
        d["file"] = fs::path(rel + ".bin").filename().string();
        d["dtype"] = "float64";
        d["byte_order"] = "little";
        d["shape"] = shape;
        d["sha256"] = sha256_hex(data.data(), data.size() * sizeof(double));
        write_json(rel + ".json", d);
    }

    json manifest_files() const {
        std::vector<std::string> sorted = files_;
        std::sort(sorted.begin(), sorted.end());
        sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
        json a = json::array();
        for (const auto& rel : sorted) {
            fs::path p = dir_ / rel;
            a.push_back({{"path", rel}, {"sha256", file_sha256(p)}, {"bytes", fs::file_size(p)}});
        }
        return a;
    }

private:
    fs::path dir_;
    std::vector<std::string> files_;
};

const json kModuleVersions = {{"geometry", "1.0.0"},  {"motion", "1.0.0"},          {"hanzawa", "1.0.0"},
                              {"unfolding", "1.0.0"}, {"cell", "1.0.0"},            {"twoscale_solver", "1.0.0"},
                              {"eps_solver", "1.0.0"}, {"cli", "1.0.0"}};

// Motion, level set and height solver of one eps on the interior tiling.
struct EpsGeometry {
    std::shared_ptr<const PeriodicDomain> dom;
    std::shared_ptr<const VelocityField> vel;
    AuditReport audit;
    std::shared_ptr<const Motion> motion;
    std::shared_ptr<const HeightSolver> heights;
};

struct Context {
    const Scenario& sc;
    const RunOptions& opt;
    Artifacts art;
    std::shared_ptr<const ImplicitSurfaceCell> cell;
    std::vector<Certificate> certs;
    std::map<double, EpsGeometry> geo;
    // covering-domain geometry of the sweep, shared with the control
    std::map<double, EpsProblem> sweep;
    std::unique_ptr<TwoScaleSolver> ts;
    TwoScaleRun tr;
    bool ts_done = false;

    void cert(const std::string& name, double value, double tol, bool pass) {
        certs.push_back({name, value, tol, pass});
        if (opt.verbose)
            std::printf("  %s %s value=%.6g tol=%.6g\n", pass ? "ok  " : "FAIL", name.c_str(), value, tol);
    }
    void cert_le(const std::string& name, double value, double tol) { cert(name, value, tol, value <= tol); }

    const EpsGeometry& geometry(double eps) {
        auto it = geo.find(eps);
        if (it != geo.end()) return it->second;
        EpsGeometry g;
        g.dom = std::make_shared<PeriodicDomain>(tile(cell, eps, sc.geometry.lo, sc.geometry.hi));
        g.vel = make_velocity(sc.velocity, g.dom);
        g.audit = audit_assumptions(*g.vel, *g.dom, sc.t_end());
        g.motion = std::make_shared<Motion>(g.dom, g.vel, sc.t_end(), sc.disc.dt, sc.disc.motion_substeps);
        g.heights = std::make_shared<HeightSolver>(std::make_shared<LevelSet>(g.motion));
        return geo.emplace(eps, std::move(g)).first->second;
    }

    std::vector<double> times() const {
        std::vector<double> t;
        for (int k = 0; k <= sc.disc.steps; ++k) t.push_back(k * sc.disc.dt);
        return t;
    }

    TwoScaleConfig twoscale_config(double kappa1_factor = 1.0) const {
        TwoScaleConfig c;
        c.cell = cell;
        c.velocity = sc.velocity;
        c.lo = sc.geometry.lo;
        c.hi = sc.geometry.hi;
        c.macro_n = sc.disc.macro_n;
        c.micro_n = sc.disc.micro_n;
        c.cell_n = sc.disc.cell_n;
        c.cell_scheme = sc.disc.cell_scheme;
        c.geometry_samples = sc.disc.geometry_samples;
        c.dt = sc.disc.dt;
        c.steps = sc.disc.steps;
        c.kappa1 = sc.physics.kappa1 * kappa1_factor;
        c.kappa2 = sc.physics.kappa2;
        c.latent = sc.physics.latent;
        c.f1 = sc.physics.f1;
        c.f2 = sc.physics.f2;
        c.theta1 = sc.physics.theta1;
        c.theta2 = sc.physics.theta2;
        c.cache = sc.disc.cache ? opt.cache : nullptr;
        return c;
    }

    void limit() {
        if (ts_done) return;
        ts = std::make_unique<TwoScaleSolver>(twoscale_config());
        tr = run_two_scale(*ts);
        ts_done = true;
    }
};

bool needs_interface(const Scenario& sc) { return sc.geometry.shape != "empty"; }

void stage_motion(Context& cx) {
    const Scenario& sc = cx.sc;
    json rep = json::object();
    for (double eps : sc.geometry.eps) {
        const std::string tag = "motion." + eps_tag(eps);
        const EpsGeometry& g = cx.geometry(eps);
        json r;
        r["audit"] = g.audit.to_json();
        cx.cert(tag + ".assumption_a1", g.audit.a1_ok ? 0.0 : 1.0, 0.0, g.audit.a1_ok);
        if (needs_interface(sc)) {
            const int d = g.dom->dim();
            double sup = 0.0;
            for (const auto& s : g.dom->surface_samples(std::max(64, sc.disc.surface_samples)))
                sup = std::max(sup, spectral_norm(g.dom->weingarten(s.point), d));
            double bound = 1.0 / (2.0 * eps * g.dom->cell().a());
            r["weingarten_sup"] = sup;
            r["weingarten_bound"] = bound;
            cx.cert_le(tag + ".weingarten", sup, bound + sc.tol.weingarten);

            std::vector<Vec> seeds;
            std::vector<char> iface;
            default_seeds(*g.dom, sc.disc.surface_samples, sc.disc.seed_offsets, sc.disc.max_cells, seeds, iface);
            MotionState st = integrate_motion(*g.motion, seeds, iface, g.audit.lv_measured);
            MotionBounds b = check_motion_bounds(st, *g.motion);
            r["bounds"] = b.to_json();
            r["seeds"] = seeds.size();
            cx.cert_le(tag + ".envelope", b.envelope_violation, sc.tol.envelope);
            cx.cert(tag + ".det_dy", b.min_det_dy, 0.0, b.min_det_dy > 0.0);

            std::vector<double> data;
            for (std::size_t i = 0; i < seeds.size(); ++i)
                for (const auto& p : st.traj[i]) {
                    data.push_back(p.z.head(d).norm());
                    for (int c = 0; c < d; ++c) data.push_back(p.y(c));
                }
            cx.art.snapshot("snapshots/motion_" + eps_tag(eps), data,
                            {seeds.size(), st.times.size(), static_cast<std::size_t>(d + 1)},
                            {{"layout", "[seed][time][|z|, y]"}, {"times", st.times}});
        }
        rep[eps_tag(eps)] = r;
    }
    cx.art.write_json("reports/motion.json", rep);
}

void stage_hanzawa(Context& cx) {
    const Scenario& sc = cx.sc;
    if (sc.geometry.dim != 2) throw Error(ErrorKind::InvalidArgument, "height snapshots are two-dimensional");
    json rep = json::object();
    const double T = sc.t_end();
    std::uint64_t seed = sc.seed;
    for (double eps : sc.geometry.eps) {
        const std::string tag = "hanzawa." + eps_tag(eps);
        const EpsGeometry& g = cx.geometry(eps);
        std::vector<Vec> gammas;
        for (const auto& s : g.dom->surface_samples(sc.disc.height_samples)) gammas.push_back(s.point);
        const std::vector<double> times = cx.times();
        HeightField f = solve_height(*g.heights, gammas, times, g.audit.lv_measured);
        HeightCertificate hc = certify_height(f);
        double excess = 0.0;
        for (std::size_t k = 0; k < f.data.size(); ++k)
            for (const auto& p : f.data[k]) excess = std::max(excess, std::fabs(p.h) - eps * f.times[k] * f.lv);
        json r;
        r["certificate"] = hc.to_json();
        r["last_good"] = f.last_good;
        r["failure"] = f.failure;
        r["lv"] = f.lv;
        r["h_bound_excess"] = excess;
        const bool complete = f.last_good == static_cast<int>(times.size()) - 1;
        cx.cert(tag + ".horizon", f.last_good, static_cast<double>(times.size() - 1), complete);
        cx.cert_le(tag + ".residual", hc.max_residual, sc.tol.height_residual);
        cx.cert_le(tag + ".slope", hc.max_slope, -1.0 / 3.0);
        cx.cert_le(tag + ".h_bound", excess, sc.tol.height_bound);
        cx.cert_le(tag + ".estimate", hc.bound_value, 0.5);

        std::vector<double> data;
        for (const auto& row : f.data)
            for (const auto& p : row) data.push_back(p.h);
        cx.art.snapshot("snapshots/height_" + eps_tag(eps), data, {f.data.size(), gammas.size()},
                        {{"layout", "[time][interface sample]"}, {"times", json(times)}});

        if (complete) {
            auto snap = std::make_shared<SnapshotHeight>(g.heights, std::vector<double>{T}, sc.disc.height_samples);
            HanzawaMap map(g.dom, snap);
            HanzawaReport hr = verify_hanzawa(map, T, sc.disc.hanzawa_points, seed++, 1e-4 * g.dom->tube_halfwidth());
            r["hanzawa"] = hr.to_json();
            cx.cert_le(tag + ".ds", hr.sup_ds, 2.0);
            cx.cert_le(tag + ".ds_inv", hr.sup_ds_inv, 2.0);
            cx.cert(tag + ".det", hr.min_det, 0.0, hr.min_det > 0.0);
            cx.cert_le(tag + ".fd_jacobian", hr.max_fd_error, sc.tol.fd_jacobian);
        }
        rep[eps_tag(eps)] = r;
    }
    cx.art.write_json("reports/hanzawa.json", rep);
}

void stage_unfold(Context& cx) {
    const Scenario& sc = cx.sc;
    json rep = json::object();
    const double T = sc.t_end();
    const int d = sc.geometry.dim;
    FieldFn f = [d](const Vec& x, double* o) {
        o[0] = 1.0 + x(0) * x(0) - std::sin(x(1)) + (d == 3 ? x(2) * x(1) : 0.0);
    };
    std::vector<UnfoldedField> ds;
    std::uint64_t seed = sc.seed + 1000;
    for (double eps : sc.geometry.eps) {
        const std::string tag = "unfold." + eps_tag(eps);
        const EpsGeometry& g = cx.geometry(eps);
        json r;
        UnfoldedField u = unfold_volume(f, 1, *g.dom, sc.disc.unfold_micro_n);
        double direct = cell_integral(f, *g.dom, sc.disc.unfold_micro_n);
        double vol_err = std::fabs(u.integral() - direct) / std::max(std::fabs(direct), 1e-300);
        r["volume_identity"] = {{"unfolded", u.integral()}, {"direct", direct}, {"relative_error", vol_err}};
        cx.cert_le(tag + ".volume_identity", vol_err, sc.tol.unfold_integral);
        if (needs_interface(sc)) {
            UnfoldedSurface us = unfold_surface(f, 1, *g.dom, sc.disc.surface_samples);
            double sd = 0.0;
            for (const auto& s : g.dom->surface_samples(sc.disc.surface_samples)) {
                double v;
                f(s.point, &v);
                sd += s.weight * v;
            }
            double surf_err = std::fabs(us.integral() / eps - sd) / std::max(std::fabs(sd), 1e-300);
            r["surface_identity"] = {{"unfolded_over_eps", us.integral() / eps}, {"direct", sd},
                                     {"relative_error", surf_err}};
            cx.cert_le(tag + ".surface_identity", surf_err, sc.tol.unfold_integral);
            IdentityReport ir = check_geometric_identities(*g.dom, sc.disc.identity_samples, seed++);
            r["geometric_identities"] = ir.to_json();
            cx.cert_le(tag + ".geometric_identities", ir.max(), sc.tol.unfold_geometry);
            if (d == 2) {
                auto snap = std::make_shared<SnapshotHeight>(g.heights, std::vector<double>{T}, sc.disc.height_samples);
                auto map = std::make_shared<HanzawaMap>(g.dom, snap);
                ds.push_back(unfold_volume(
                    [map, T](const Vec& x, double* o) {
                        Mat j = map->jacobian(T, x);
                        o[0] = j(0, 0);
                        o[1] = j(0, 1);
                        o[2] = j(1, 0);
                        o[3] = j(1, 1);
                    },
                    4, *g.dom, sc.disc.unfold_micro_n));
            }
        }
        rep[eps_tag(eps)] = r;
    }
    if (ds.size() >= 2) {
        DistanceTable tab = two_scale_distance(ds);
        rep["ds_distances"] = tab.to_json();
        tab.write_csv(cx.art.path("tables/ds_distances.csv"));
        double sup = 0.0, ratio = 0.0, prev = -1.0;
        for (const auto& row : tab.rows) {
            sup = std::max(sup, row.distance);
            if (!row.successive) continue;
            if (prev > 0) ratio = std::max(ratio, row.distance / prev);
            prev = row.distance;
        }
        if (sup == 0.0) cx.cert("unfold.ds_distances_zero", sup, 0.0, true);
        else cx.cert("unfold.ds_distances_decreasing", ratio, 1.0, tab.successive_decreasing);
    }
    cx.art.write_json("reports/unfold.json", rep);
}

void stage_cell(Context& cx) {
    const Scenario& sc = cx.sc;
    const int d = sc.geometry.dim;
    const double k1 = sc.physics.kappa1;
    const int n = sc.disc.cell_check_n;
    const CellScheme scheme = CellScheme::Q1;
    json rep;
    auto none = std::make_shared<ShapeInclusion>(std::make_shared<ImplicitSurfaceCell>(make_empty(d)));
    EffectiveTensor e0 = effective_tensor(make_cell_state(none, n, scheme), k1);
    double dev = (e0.kappa.topLeftCorner(d, d) - k1 * Mat::Identity().topLeftCorner(d, d)).cwiseAbs().maxCoeff();
    rep["empty"] = e0.to_json();
    cx.cert_le("cell.empty_matrix_value", dev, sc.tol.kappa_empty);
    if (needs_interface(sc)) {
        auto inc = std::make_shared<ShapeInclusion>(cx.cell);
        EffectiveTensor half = effective_tensor(make_cell_state(inc, n / 2, scheme), k1);
        EffectiveTensor lo = effective_tensor(make_cell_state(inc, n, scheme), k1);
        EffectiveTensor hi = effective_tensor(make_cell_state(inc, 2 * n, scheme), k1);
        double asym = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) asym = std::max(asym, std::fabs(hi.kappa(i, j) - hi.kappa(j, i)));
        double change = std::fabs(hi.kappa(0, 0) - lo.kappa(0, 0)) / std::fabs(hi.kappa(0, 0));
        double ratio = std::fabs((half.kappa(0, 0) - lo.kappa(0, 0)) / (lo.kappa(0, 0) - hi.kappa(0, 0)));
        double order = std::log2(ratio);
        double rich = hi.kappa(0, 0) + (hi.kappa(0, 0) - lo.kappa(0, 0)) / (std::pow(2.0, order) - 1.0);
        rep["levels"] = {{"n", {half.mesh_n, lo.mesh_n, hi.mesh_n}},
                         {"kappa_00", {half.kappa(0, 0), lo.kappa(0, 0), hi.kappa(0, 0)}}};
        rep["tensor"] = hi.to_json();
        rep["observed_order"] = order;
        rep["richardson"] = rich;
        if (sc.geometry.shape == "disk" && d == 2)
            rep["rayleigh"] = k1 * rayleigh_square_array(kPi * sc.geometry.radius * sc.geometry.radius);
        cx.cert_le("cell.symmetry", asym, sc.tol.symmetry);
        cx.cert_le("cell.mesh_change", change, sc.tol.mesh_change);
    }
    cx.art.write_json("reports/cell.json", rep);
}

void write_eps_ledger(const std::string& path, const std::vector<EpsLedgerRow>& rows) {
    std::ofstream f(path);
    f << "step,t,energy,sources,latent,interface_measure,residual,solver_residual\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.t, r.energy,
                      r.sources, r.latent, r.interface_measure, r.residual, r.solver_residual);
        f << buf;
    }
}

void stage_twoscale(Context& cx) {
    const Scenario& sc = cx.sc;
    if (sc.geometry.dim != 2) throw Error(ErrorKind::InvalidArgument, "the two-scale solver is two-dimensional");
    cx.limit();
    const TwoScaleRun& tr = cx.tr;
    write_ledger_csv(cx.art.path("tables/twoscale_ledger.csv"), tr.ledger);
    double res = 0.0, lat = 0.0;
    for (const auto& r : tr.ledger) {
        res = std::max(res, std::fabs(r.residual));
        double scale = std::max(std::fabs(r.latent_expected), 1e-300);
        if (r.latent != 0.0 || r.latent_expected != 0.0) lat = std::max(lat, std::fabs(r.latent - r.latent_expected) / scale);
    }
    json rep;
    rep["steps"] = tr.ledger.size();
    rep["failure"] = tr.failure;
    rep["max_ledger_residual"] = res;
    rep["max_latent_error"] = lat;
    rep["macro_nodes"] = cx.ts->macro_nodes();
    cx.cert("twoscale.completed", static_cast<double>(tr.ledger.size()), sc.disc.steps, tr.ok());
    cx.cert_le("twoscale.ledger", res, sc.tol.ledger);
    cx.cert_le("twoscale.latent", lat, sc.tol.latent);
    std::vector<double> p1, p2;
    for (std::size_t k = 0; k < tr.times.size(); ++k) {
        p1.insert(p1.end(), tr.phase1[k].begin(), tr.phase1[k].end());
        p2.insert(p2.end(), tr.phase2[k].begin(), tr.phase2[k].end());
    }
    const std::size_t nodes = static_cast<std::size_t>(cx.ts->macro_nodes());
    json meta = {{"layout", "[time][macro vertex], vertices row-major in x"}, {"times", tr.times}};
    cx.art.snapshot("snapshots/twoscale_phase1", p1, {tr.times.size(), nodes}, meta);
    cx.art.snapshot("snapshots/twoscale_phase2", p2, {tr.times.size(), nodes}, meta);
    cx.art.write_json("reports/twoscale.json", rep);
    if (cx.opt.verbose)
        std::printf("  cell solves %d\n", cx.ts->cell_solves());
}

std::vector<EpsRun> eps_runs(Context& cx, double kappa1_factor, const std::string& label) {
    const Scenario& sc = cx.sc;
    std::vector<EpsRun> runs;
    const bool moving = sc.velocity.family != "zero" && sc.velocity.amplitude != 0.0;
    for (double eps : sc.geometry.eps) {
        auto t0 = std::chrono::steady_clock::now();
        auto it = cx.sweep.find(eps);
        if (it == cx.sweep.end()) {
            EpsProblem g;
            g.dom = covering_domain(cx.cell, eps, sc.geometry.lo, sc.geometry.hi);
            g.lo = sc.geometry.lo;
            g.hi = sc.geometry.hi;
            if (moving) {
                auto vel = make_velocity(sc.velocity, g.dom);
                auto motion = std::make_shared<Motion>(g.dom, vel, sc.t_end(), sc.disc.dt, sc.disc.motion_substeps);
                auto hs = std::make_shared<HeightSolver>(std::make_shared<LevelSet>(motion));
                auto snap = std::make_shared<SnapshotHeight>(hs, cx.times(), sc.disc.height_samples);
                g.map = std::make_shared<HanzawaMap>(g.dom, snap);
                g.velocity = vel;
            }
            it = cx.sweep.emplace(eps, g).first;
        }
        EpsProblem p = it->second;
        p.kappa1 = sc.physics.kappa1 * kappa1_factor;
        p.kappa2 = sc.physics.kappa2;
        p.latent = sc.physics.latent;
        p.f1 = sc.physics.f1;
        p.f2 = sc.physics.f2;
        p.theta1 = sc.physics.theta1;
        p.theta2 = sc.physics.theta2;
        EpsConfig ec;
        ec.m = sc.disc.eps_m;
        ec.dt = sc.disc.dt;
        ec.steps = sc.disc.steps;
        EpsSolver solver(p, ec);
        runs.push_back(run_eps(solver));
        write_eps_ledger(cx.art.path("tables/" + label + "_ledger_" + eps_tag(eps) + ".csv"), runs.back().ledger);
        if (cx.opt.verbose)
            std::printf("  %s %s: %s, %.1f s\n", label.c_str(), eps_tag(eps).c_str(),
                        runs.back().ok() ? "ok" : runs.back().failure.c_str(),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return runs;
}

void stage_eps_sweep(Context& cx) {
    const Scenario& sc = cx.sc;
    if (sc.geometry.dim != 2) throw Error(ErrorKind::InvalidArgument, "the sweep is two-dimensional");
    if (sc.geometry.eps.size() < 3) throw Error(ErrorKind::GridMismatch, "the sweep needs at least three eps values");
    cx.limit();
    if (!cx.tr.ok()) throw Error(ErrorKind::CertificateFailed, "limit problem failed: " + cx.tr.failure);
    json rep;
    std::vector<EpsRun> runs = eps_runs(cx, 1.0, "eps");
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const EpsRun& r = runs[i];
        double res = 0.0;
        for (const auto& row : r.ledger) res = std::max(res, std::fabs(row.residual));
        cx.cert_le("eps_sweep." + eps_tag(r.eps) + ".ledger", res, sc.tol.ledger);
        if (r.ok() && !r.phase1.empty()) {
            std::vector<double> data(r.phase1.back());
            data.insert(data.end(), r.phase2.back().begin(), r.phase2.back().end());
            cx.art.snapshot("snapshots/eps_final_" + eps_tag(r.eps), data, {2, r.centers.size()},
                            {{"layout", "[phase][cell]"}, {"t", r.times.back()}});
        }
    }
    ErrorTable tab = compare_to_homogenized(runs, *cx.ts, cx.tr);
    tab.write_csv(cx.art.path("tables/eps_errors.csv"));
    rep["errors"] = tab.to_json();
    double r1 = 0.0, r2 = 0.0;
    for (std::size_t i = 1; i < tab.rows.size(); ++i) {
        r1 = std::max(r1, tab.rows[i].ratio_phase1);
        r2 = std::max(r2, tab.rows[i].ratio_phase2);
    }
    cx.cert_le("eps_sweep.phase1_ratio", r1, sc.tol.ratio);
    cx.cert_le("eps_sweep.phase2_ratio", r2, sc.tol.ratio);
    if (sc.control_kappa1_factor > 0.0) {
        std::vector<EpsRun> ctl = eps_runs(cx, sc.control_kappa1_factor, "control");
        ErrorTable ct = compare_to_homogenized(ctl, *cx.ts, cx.tr);
        ct.write_csv(cx.art.path("tables/control_errors.csv"));
        rep["control"] = ct.to_json();
        rep["control_kappa1_factor"] = sc.control_kappa1_factor;
        // the control must not pass the convergence test in either phase
        double lowest = 1e300;
        for (std::size_t i = 1; i < ct.rows.size(); ++i)
            lowest = std::min({lowest, ct.rows[i].ratio_phase1, ct.rows[i].ratio_phase2});
        cx.cert("eps_sweep.control_stagnates", lowest, sc.tol.ratio, lowest > sc.tol.ratio);
    }
    cx.art.write_json("reports/eps_sweep.json", rep);
}

using Stage = void (*)(Context&);

std::vector<std::pair<std::string, Stage>> stages_for(const std::string& experiment) {
    const std::vector<std::pair<std::string, Stage>> all{
        {"motion", stage_motion}, {"hanzawa", stage_hanzawa},   {"unfold", stage_unfold},
        {"cell", stage_cell},     {"twoscale", stage_twoscale}, {"eps_sweep", stage_eps_sweep},
    };
    if (experiment == "full_pipeline") return all;
    for (const auto& s : all)
        if (s.first == experiment) return {s};
    throw Error(ErrorKind::ConfigInvalid, "experiment: unknown kind " + experiment);
}

} // namespace

std::shared_ptr<const ImplicitSurfaceCell> GeometrySpec::make_cell() const {
    std::shared_ptr<const Shape> s;
    if (shape == "disk") s = make_disk(center, radius, dim);
    else if (shape == "ellipse") s = make_ellipse(center, semi_axes, dim);
    else if (shape == "blob") s = make_blob(center, r0, modes);
    else s = make_empty(dim);
    return std::make_shared<ImplicitSurfaceCell>(s, tube_width);
}

Scenario Scenario::from_json(const json& j) {
    if (!j.is_object()) bad("config", "expected an object");
    Scenario sc;
    bool has_name = false, has_exp = false;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "name") {
            sc.name = string(*it, k);
            has_name = !sc.name.empty();
            for (char c : sc.name)
                if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
                    bad(k, "only letters, digits, '_' and '-' are allowed");
        } else if (k == "experiment") {
            sc.experiment = string(*it, k);
            if (std::find(kExperiments.begin(), kExperiments.end(), sc.experiment) == kExperiments.end())
                bad(k, "expected one of motion, hanzawa, unfold, cell, twoscale, eps_sweep, full_pipeline");
            has_exp = true;
        } else if (k == "seed") {
            if (!it->is_number_unsigned()) bad(k, "expected a non-negative integer");
            sc.seed = it->get<std::uint64_t>();
        } else if (k == "output") sc.output = string(*it, k);
        else if (k == "geometry") sc.geometry = parse_geometry(*it);
        else if (k == "velocity") sc.velocity = VelocitySpec::from_json(*it);
        else if (k == "physics") sc.physics = parse_physics(*it);
        else if (k == "discretization") sc.disc = parse_disc(*it);
        else if (k == "tolerances") sc.tol = parse_tol(*it);
        else if (k == "control") {
            require_object(*it, k);
            for (auto ci = it->begin(); ci != it->end(); ++ci) {
                if (ci.key() == "kappa1_factor") sc.control_kappa1_factor = positive(*ci, "control.kappa1_factor");
                else bad("control." + ci.key(), "unknown key");
            }
        } else {
            bad(k, "unknown key");
        }
    }
    if (!has_name) bad("name", "required");
    if (!has_exp) bad("experiment", "required");
    const bool planar = sc.experiment != "motion" && sc.experiment != "cell";
    if (planar && sc.geometry.dim != 2) bad("geometry.dim", "experiment " + sc.experiment + " is two-dimensional");
    if (sc.experiment == "eps_sweep" && sc.geometry.eps.size() < 3)
        bad("geometry.eps", "the sweep needs at least three values");
    return sc;
}

Scenario Scenario::load(const std::string& path, std::string* raw) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error(ErrorKind::ConfigInvalid, "config: cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::ConfigInvalid, std::string("config: ") + e.what());
    }
    if (raw) *raw = text;
    return from_json(j);
}

json Scenario::to_json() const {
    const int d = geometry.dim;
    json g = {{"shape", geometry.shape},
              {"dim", d},
              {"center", vec_json(geometry.center, d)},
              {"radius", geometry.radius},
              {"semi_axes", vec_json(geometry.semi_axes, d)},
              {"r0", geometry.r0},
              {"tube_width", geometry.tube_width},
              {"eps", geometry.eps},
              {"box", {{"lo", vec_json(geometry.lo, d)}, {"hi", vec_json(geometry.hi, d)}}}};
    json modes = json::array();
    for (const auto& m : geometry.modes) modes.push_back({{"k", m.k}, {"amp", m.amp}, {"phase", m.phase}});
    g["modes"] = modes;
    json ph = {{"kappa1", physics.kappa1},         {"kappa2", physics.kappa2},
               {"latent", physics.latent},         {"f1", physics.f1.to_json()},
               {"f2", physics.f2.to_json()},       {"theta1", physics.theta1.to_json()},
               {"theta2", physics.theta2.to_json()}};
    json ds = {{"dt", disc.dt},
               {"steps", disc.steps},
               {"motion_substeps", disc.motion_substeps},
               {"surface_samples", disc.surface_samples},
               {"seed_offsets", disc.seed_offsets},
               {"max_cells", disc.max_cells},
               {"height_samples", disc.height_samples},
               {"hanzawa_points", disc.hanzawa_points},
               {"unfold_micro_n", disc.unfold_micro_n},
               {"macro_n", disc.macro_n},
               {"micro_n", disc.micro_n},
               {"cell_n", disc.cell_n},
               {"cell_scheme", to_string(disc.cell_scheme)},
               {"cell_check_n", disc.cell_check_n},
               {"geometry_samples", disc.geometry_samples},
               {"eps_m", disc.eps_m},
               {"identity_samples", disc.identity_samples},
               {"cache", disc.cache}};
    json tl = json::object();
    for (const auto& [name, field] : tolerance_fields()) tl[name] = tol.*field;
    json j = {{"name", name},   {"experiment", experiment}, {"seed", seed},        {"geometry", g},
              {"velocity", velocity.to_json()}, {"physics", ph}, {"discretization", ds}, {"tolerances", tl}};
    if (!output.empty()) j["output"] = output;
    if (control_kappa1_factor > 0) j["control"] = {{"kappa1_factor", control_kappa1_factor}};
    return j;
}

json Certificate::to_json() const { return {{"name", name}, {"value", value}, {"tol", tol}, {"pass", pass}}; }

bool ScenarioResult::pass() const {
    if (certificates.empty()) return false;
    for (const auto& c : certificates)
        if (!c.pass) return false;
    return true;
}

const Certificate* ScenarioResult::find(const std::string& name) const {
    for (const auto& c : certificates)
        if (c.name == name) return &c;
    return nullptr;
}

ScenarioResult run_scenario(const Scenario& sc, const std::string& config_text, const RunOptions& opt) {
    fs::path dir = !opt.out_dir.empty() ? fs::path(opt.out_dir)
                   : !sc.output.empty() ? fs::path(sc.output)
                                        : fs::path("runs") / sc.name;
    fs::create_directories(dir);
    // files of a previous run in the same directory
    if (std::ifstream old(dir / "manifest.json"); old) {
        try {
            json m = json::parse(old);
            for (const auto& e : m.at("files")) fs::remove(dir / e.at("path").get<std::string>());
        } catch (const std::exception&) {
        }
    }
    Context cx{sc, opt, Artifacts(dir), sc.geometry.make_cell(), {}, {}, {}, nullptr, {}, false};
    int solves_before = opt.cache ? opt.cache->solves() : 0;
    int hits_before = opt.cache ? opt.cache->hits() : 0;
    cx.art.write_json("config.json", sc.to_json());

    json errors = json::object();
    for (const auto& [name, stage] : stages_for(sc.experiment)) {
        auto t0 = std::chrono::steady_clock::now();
        if (opt.verbose) std::printf("stage %s\n", name.c_str());
        try {
            stage(cx);
        } catch (const std::exception& e) {
            errors[name] = e.what();
            cx.cert(name + ".completed", 1.0, 0.0, false);
        }
        if (opt.verbose)
            std::printf("stage %s done in %.1f s\n", name.c_str(),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }

    ScenarioResult res;
    res.dir = dir.string();
    res.certificates = cx.certs;
    json cj = json::array();
    for (const auto& c : cx.certs) cj.push_back(c.to_json());
    cx.art.write_json("certificates.json", {{"certificates", cj}, {"pass", res.pass()}, {"errors", errors}});
    if (cx.ts) res.cell_solves = cx.ts->cell_solves();
    if (opt.cache && sc.disc.cache) {
        res.cell_solves = opt.cache->solves() - solves_before;
        res.cache_hits = opt.cache->hits() - hits_before;
    }

    json manifest = {{"name", sc.name},
                     {"experiment", sc.experiment},
                     {"seed", sc.seed},
                     {"config_sha256", sha256_hex(config_text)},
                     {"module_versions", kModuleVersions},
                     {"certificates_passed", res.pass()},
                     {"files", cx.art.manifest_files()}};
    std::ofstream(dir / "manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
    return res;
}

ScenarioResult run_scenario_file(const std::string& config_path, const RunOptions& opt) {
    std::string raw;
    Scenario sc = Scenario::load(config_path, &raw);
    return run_scenario(sc, raw, opt);
}

VerifyReport verify_artifacts(const std::string& dir) {
    VerifyReport r;
    fs::path mp = fs::path(dir) / "manifest.json";
    std::ifstream f(mp);
    if (!f) throw Error(ErrorKind::InvalidArgument, "no manifest in " + dir);
    json m;
    try {
        m = json::parse(f);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("manifest: ") + e.what());
    }
    r.certificates_passed = m.value("certificates_passed", false);
    for (const auto& e : m.at("files")) {
        const std::string rel = e.at("path").get<std::string>();
        fs::path p = fs::path(dir) / rel;
        ++r.files;
        if (!fs::exists(p)) r.missing.push_back(rel);
        else if (file_sha256(p) != e.at("sha256").get<std::string>()) r.mismatched.push_back(rel);
    }
    return r;
}

int prewarm_cache(const Scenario& sc, CellCache& cache) {
    if (sc.geometry.dim != 2) throw Error(ErrorKind::ConfigInvalid, "geometry.dim: the two-scale stage is two-dimensional");
    RunOptions opt;
    opt.cache = &cache;
    Scenario s = sc;
    s.disc.cache = true;
    Context cx{s, opt, Artifacts(fs::path()), s.geometry.make_cell(), {}, {}, {}, nullptr, {}, false};
    int before = cache.solves();
    TwoScaleSolver ts(cx.twoscale_config());
    run_two_scale(ts);
    return cache.solves() - before;
}

} // namespace homog
