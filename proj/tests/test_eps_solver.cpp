#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "homog/eps_solver.hpp"
#include "homog/unfolding.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace homog;

namespace {

constexpr double kPi = std::numbers::pi;

std::shared_ptr<const ImplicitSurfaceCell> disk_cell(double r) {
    return std::make_shared<ImplicitSurfaceCell>(make_disk(pad(0.5, 0.5), r, 2));
}

ProfileSpec cosine(double c, double a) {
    ProfileSpec p;
    p.constant = c;
    p.amplitude = a;
    return p;
}

struct Moving {
    EpsProblem problem;
    EpsConfig cfg;
    double amplitude = 0.0;
};

// disk of radius R per cell growing with normal speed eps A
Moving radial_problem(double eps, double R, double A, double dt, int steps) {
    Moving mv;
    auto dom = covering_domain(disk_cell(R), eps, pad(0, 0), pad(1, 1));
    VelocitySpec vs;
    vs.family = "tube";
    vs.amplitude = A;
    auto vel = make_velocity(vs, dom);
    auto motion = std::make_shared<Motion>(dom, vel, dt * steps, dt, 2);
    auto hs = std::make_shared<HeightSolver>(std::make_shared<LevelSet>(motion));
    std::vector<double> times;
    for (int k = 0; k <= steps; ++k) times.push_back(k * dt);
    auto snap = std::make_shared<SnapshotHeight>(hs, times, 32);
    mv.problem.dom = dom;
    mv.problem.lo = pad(0, 0);
    mv.problem.hi = pad(1, 1);
    mv.problem.map = std::make_shared<HanzawaMap>(dom, snap);
    mv.problem.velocity = vel;
    mv.cfg.dt = dt;
    mv.cfg.steps = steps;
    mv.cfg.m = 16;
    mv.amplitude = A;
    return mv;
}

EpsProblem static_problem(double eps, double kappa2) {
    EpsProblem p;
    auto cell = std::make_shared<ImplicitSurfaceCell>(make_ellipse(pad(0.42, 0.46), pad(0.25, 0.15), 2));
    p.dom = covering_domain(cell, eps, pad(0, 0), pad(1, 1));
    p.lo = pad(0, 0);
    p.hi = pad(1, 1);
    p.kappa2 = kappa2;
    p.theta1 = cosine(1.0, 1.0);
    p.theta2 = cosine(1.0, 1.0);
    return p;
}

} // namespace

TEST_CASE("pullback is the identity without motion") {
    EpsProblem p = static_problem(0.25, 0.1);
    PullbackCoefficients c = assemble_pullback(p, 0.3, pad(0.4, 0.6));
    CHECK(c.J == 1.0);
    CHECK((c.A - eye_d(2)).norm() == 0.0);
    CHECK(c.w.norm() == 0.0);
    Moving mv = radial_problem(0.25, 0.25, 0.05, 0.05, 2);
    for (Vec x : {pad(0.6, 0.5), pad(0.55, 0.62), pad(0.1, 0.2)}) {
        PullbackCoefficients z = assemble_pullback(mv.problem, 0.0, x);
        CHECK(std::fabs(z.J - 1.0) < 1e-14);
        CHECK((z.A - eye_d(2)).norm() < 1e-14);
    }
}

TEST_CASE("radial pullback matches the closed form") {
    const double eps = 0.25, R = 0.25, A = 0.05, dt = 0.05, t = 0.2;
    Moving mv = radial_problem(eps, R, A, dt, 4);
    const double a = mv.problem.dom->cell().a();
    const double h = eps * A * t;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> ang(0.0, 2 * kPi), off(-0.6, 0.6);
    double worst = 0.0, worst_w = 0.0;
    for (int s = 0; s < 200; ++s) {
        Vec c = pad((s % 4 + 0.5) * eps, ((s / 4) % 4 + 0.5) * eps);
        double th = ang(rng), dist = off(rng) * eps * a;
        Vec n = pad(std::cos(th), std::sin(th));
        double rho = eps * R + dist;
        Vec x = c + rho * n;
        double r = std::fabs(dist) / (eps * a);
        double sg = dist >= 0.0 ? 1.0 : -1.0;
        double lr = 1.0 + h * Chi::d1(r) * sg / (eps * a);
        double lt = 1.0 + h * Chi::value(r) / rho;
        Mat nn = n * n.transpose();
        Mat expect = (lt / lr) * nn + (lr / lt) * (eye_d(2) - nn);
        PullbackCoefficients pc = assemble_pullback(mv.problem, t, x);
        worst = std::max(worst, (pc.A - expect).cwiseAbs().maxCoeff());
        Vec w = lt * eps * A * Chi::value(r) * n;
        worst_w = std::max(worst_w, (pc.w - w).norm());
    }
    CHECK(worst <= 1e-8);
    CHECK(worst_w <= 1e-8);
}

TEST_CASE("pulled-back tensor is SPD with bounded condition number") {
    Moving mv = radial_problem(0.25, 0.25, 0.05, 0.05, 4);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int tube = 0;
    for (int s = 0; s < 2000; ++s) {
        Vec x = pad(u(rng), u(rng));
        TubePoint tp;
        if (!mv.problem.dom->try_tube_coords(x, tp)) continue;
        ++tube;
        PullbackCoefficients pc = assemble_pullback(mv.problem, 0.2, x);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(pc.A.topLeftCorner<2, 2>());
        CHECK(std::fabs(pc.A(0, 1) - pc.A(1, 0)) < 1e-14);
        CHECK(es.eigenvalues()(0) > 0.0);
        CHECK(es.eigenvalues()(1) / es.eigenvalues()(0) <= 16.0);
    }
    CHECK(tube > 100);
}

TEST_CASE("constants are preserved") {
    EpsProblem p = static_problem(0.25, 0.1);
    p.theta1 = cosine(2.0, 0.0);
    p.theta2 = cosine(2.0, 0.0);
    EpsConfig cfg;
    cfg.steps = 3;
    EpsSolver s(p, cfg);
    for (int k = 0; k < 3; ++k) CHECK(s.step().solver_residual <= 1e-10);
    for (double th : s.theta()) CHECK(std::fabs(th - 2.0) < 1e-12);

    Moving mv = radial_problem(0.25, 0.25, 0.05, 0.05, 4);
    mv.problem.latent = 0.0;
    mv.problem.theta1 = cosine(2.0, 0.0);
    mv.problem.theta2 = cosine(2.0, 0.0);
    EpsSolver m(mv.problem, mv.cfg);
    EpsRun run = run_eps(m);
    REQUIRE(run.ok());
    for (double th : m.theta()) CHECK(std::fabs(th - 2.0) < 1e-10);
}

TEST_CASE("static solution converges under grid refinement") {
    EpsProblem p = static_problem(0.25, 0.1);
    EpsConfig cfg;
    cfg.steps = 10;
    auto averages = [&](int m) {
        cfg.m = m;
        EpsSolver s(p, cfg);
        return run_eps(s);
    };
    EpsRun coarse = averages(16), fine = averages(64);
    REQUIRE(coarse.ok());
    REQUIRE(fine.ok());
    double num = 0.0, den = 0.0;
    for (std::size_t n = 0; n < coarse.times.size(); ++n)
        for (std::size_t k = 0; k < coarse.centers.size(); ++k) {
            double a = coarse.phase1[n][k] + coarse.phase2[n][k];
            double b = fine.phase1[n][k] + fine.phase2[n][k];
            num += (a - b) * (a - b);
            den += b * b;
        }
    CHECK(std::sqrt(num / den) < 0.01);
}

TEST_CASE("static energy estimate holds") {
    EpsProblem p = static_problem(0.125, 0.05);
    EpsConfig cfg;
    cfg.steps = 5;
    EpsSolver s(p, cfg);
    double l2 = 0.0;
    for (int g = 0; g < s.nodes(); ++g) l2 += s.h() * s.h() * s.theta()[g] * s.theta()[g];
    EpsRun run = run_eps(s);
    REQUIRE(run.ok());
    CHECK(run.energy_quantity <= l2 * (1.0 + 1e-12));
    CHECK(s.dissipation() > 0.0);
    for (const auto& r : run.ledger) CHECK(std::fabs(r.residual) < 1e-12);
}

TEST_CASE("latent heat follows the moving interface") {
    const double eps = 0.25, R = 0.25, A = 0.05, dt = 0.05;
    Moving mv = radial_problem(eps, R, A, dt, 4);
    mv.problem.latent = 3.0;
    mv.problem.kappa2 = 0.2;
    mv.problem.f1 = cosine(0.5, 0.0);
    mv.problem.theta1 = cosine(1.0, 0.5);
    mv.problem.theta2 = cosine(1.0, 0.5);
    EpsSolver s(mv.problem, mv.cfg);
    EpsRun run = run_eps(s);
    REQUIRE(run.ok());
    const double cells = 16;
    for (const auto& r : run.ledger) {
        double perim = cells * 2 * kPi * (eps * R + eps * A * r.t);
        CHECK(std::fabs(r.interface_measure / perim - 1.0) <= 1e-6);
        double expect = mv.problem.latent * eps * A * perim * dt;
        CHECK(std::fabs(r.latent / expect - 1.0) <= 1e-6);
        CHECK(std::fabs(r.residual) <= 1e-10);
    }
    // heat change per step equals sources plus latent release
    double e_prev = 0.0;
    {
        EpsSolver s0(mv.problem, mv.cfg);
        e_prev = s0.energy();
    }
    for (const auto& r : run.ledger) {
        double perim = cells * 2 * kPi * (eps * R + eps * A * r.t);
        double expect = r.sources + mv.problem.latent * eps * A * perim * dt;
        CHECK(std::fabs((r.energy - e_prev) - expect) <= 1e-6 * std::fabs(expect));
        e_prev = r.energy;
    }
}

TEST_CASE("cell averages agree with the unfolding integrals") {
    EpsProblem p = static_problem(0.25, 0.1);
    EpsConfig cfg;
    EpsSolver s(p, cfg);
    std::vector<double> a1, a2;
    s.cell_averages(a1, a2);
    double total = 0.0, eps2 = 0.25 * 0.25;
    for (std::size_t k = 0; k < a1.size(); ++k) total += eps2 * (a1[k] + a2[k]);
    FieldFn f = [&](const Vec& x, double* out) { *out = p.theta1.eval(x, p.lo, p.hi); };
    CHECK(total == doctest::Approx(cell_integral(f, *p.dom, cfg.m)).epsilon(1e-12));
    double y1 = 0.0;
    for (int g = 0; g < s.nodes(); ++g) y1 += s.phase1_volume()[g];
    CHECK(y1 == doctest::Approx(1.0 - kPi * 0.25 * 0.15).epsilon(1e-12));
}

TEST_CASE("grid mismatches are reported") {
    auto cell = disk_cell(0.25);
    EpsProblem p;
    p.dom = covering_domain(cell, 0.25, pad(0, 0), pad(1, 1));
    p.lo = pad(0, 0);
    p.hi = pad(0.9, 1);
    CHECK_THROWS_AS(EpsSolver(p, EpsConfig{}), Error);
    CHECK_THROWS_AS(covering_domain(cell, 0.3, pad(0, 0), pad(1, 1)), Error);

    TwoScaleConfig c;
    c.cell = cell;
    c.macro_n = 8;
    c.micro_n = 16;
    c.cell_n = 16;
    c.steps = 2;
    c.theta1 = cosine(1.0, 1.0);
    c.theta2 = cosine(1.0, 1.0);
    TwoScaleSolver ts(c);
    TwoScaleRun tr = run_two_scale(ts);
    std::vector<EpsRun> runs;
    for (double eps : {0.25, 0.125, 0.0625})
        runs.push_back(sample_homogenized(ts, tr, *covering_domain(cell, eps, pad(0, 0), pad(1, 1))));
    // the limit compared with itself leaves no error
    ErrorTable self = compare_to_homogenized(runs, ts, tr);
    for (const auto& r : self.rows) {
        CHECK(r.err_phase1 == 0.0);
        CHECK(r.err_phase2 == 0.0);
    }
    auto expect_mismatch = [&](const std::vector<EpsRun>& rs) {
        try {
            compare_to_homogenized(rs, ts, tr);
            FAIL("expected GridMismatch");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::GridMismatch);
        }
    };
    expect_mismatch({runs[0], runs[1]});
    expect_mismatch({runs[1], runs[0], runs[2]});
    std::vector<EpsRun> shifted = runs;
    shifted[2].times[1] += 1e-3;
    expect_mismatch(shifted);
}

TEST_CASE("three-dimensional smoke step") {
    EpsProblem p;
    auto cell = std::make_shared<ImplicitSurfaceCell>(make_disk(pad(0.5, 0.5, 0.5), 0.3, 3));
    p.dom = covering_domain(cell, 0.5, pad(0, 0, 0), pad(1, 1, 1));
    p.lo = pad(0, 0, 0);
    p.hi = pad(1, 1, 1);
    p.kappa2 = 0.5;
    p.f1 = cosine(1.0, 0.0);
    p.theta1 = cosine(1.0, 0.5);
    p.theta2 = cosine(1.0, 0.5);
    EpsConfig cfg;
    cfg.m = 16;
    cfg.steps = 1;
    EpsSolver s(p, cfg);
    CHECK(s.nodes() == 32 * 32 * 32);
    EpsLedgerRow r = s.step();
    CHECK(std::fabs(r.residual) < 1e-12);
    CHECK(r.solver_residual <= 1e-10);
    double y2 = ShapeInclusion(cell).volume();
    CHECK(r.sources == doctest::Approx(cfg.dt * (1.0 - y2)).epsilon(1e-12));
    CHECK(y2 == doctest::Approx(4.0 / 3.0 * kPi * 0.027).epsilon(2e-3));
    std::vector<double> a1, a2;
    s.cell_averages(a1, a2);
    CHECK(a1.size() == 8);
}
