#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "homog/twoscale.hpp"

#include <cmath>
#include <numbers>

using namespace homog;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kJ01 = 2.404825557695773;

std::shared_ptr<const ImplicitSurfaceCell> disk_cell(double r) {
    return std::make_shared<ImplicitSurfaceCell>(make_disk(pad(0.5, 0.5), r, 2));
}

std::shared_ptr<const ImplicitSurfaceCell> empty_cell() {
    return std::make_shared<ImplicitSurfaceCell>(make_empty(2));
}

TwoScaleConfig base_config(std::shared_ptr<const ImplicitSurfaceCell> cell) {
    TwoScaleConfig c;
    c.cell = std::move(cell);
    c.macro_n = 8;
    c.micro_n = 24;
    c.cell_n = 16;
    c.dt = 0.01;
    c.steps = 10;
    return c;
}

double max_abs_residual(const TwoScaleRun& run) {
    double m = 0.0;
    for (const auto& r : run.ledger) m = std::max(m, std::fabs(r.residual));
    return m;
}

} // namespace

TEST_CASE("profile parsing and evaluation") {
    ProfileSpec p = ProfileSpec::from_json({{"constant", 1.0}, {"amplitude", 0.5}, {"mode", 2}}, "theta1");
    CHECK(p.eval(pad(0.0, 0.3), pad(0, 0), pad(1, 1)) == doctest::Approx(1.5));
    CHECK(p.eval(pad(0.25, 0.3), pad(0, 0), pad(1, 1)) == doctest::Approx(1.0));
    CHECK(ProfileSpec::from_json(p.to_json(), "p").mode == 2);
    try {
        ProfileSpec::from_json({{"constnt", 1.0}}, "config.theta1");
        FAIL("expected ConfigInvalid");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ConfigInvalid);
        CHECK(std::string(e.what()).find("config.theta1.constnt") != std::string::npos);
    }
    CHECK_THROWS_AS(ProfileSpec::from_json({{"mode", 1.5}}, "p"), Error);
}

TEST_CASE("macro space factor agrees with the motion modulation") {
    VelocitySpec v;
    v.family = "tube";
    v.amplitude = 1.0;
    v.modulation = 0.4;
    auto dom = std::make_shared<PeriodicDomain>(tile(disk_cell(0.25), 0.25, pad(0, 0), pad(2, 1)));
    for (Vec x : {pad(0.3, 0.7), pad(1.1, 0.2), pad(1.9, 0.95)})
        CHECK(macro_space_factor(v, pad(0, 0), pad(2, 1), 2, x) ==
              doctest::Approx(macro_modulation(v, *dom, 0.0, x)).epsilon(1e-14));
}

TEST_CASE("zero velocity keeps the cell geometry") {
    VelocitySpec v;
    for (double t : {0.0, 0.3, 1.0})
        CHECK(MicroGeometry::pseudo_time(v, pad(0, 0), pad(1, 1), t, pad(0.2, 0.4)) == 0.0);
    TwoScaleConfig c = base_config(disk_cell(0.25));
    TwoScaleSolver s(c);
    const double y2 = s.state().micro[0].y2;
    CHECK(y2 == doctest::Approx(kPi / 16).epsilon(1e-12));
    for (int k = 0; k < 3; ++k) {
        LedgerRow r = s.step();
        CHECK(r.y2_mean == doctest::Approx(y2).epsilon(1e-14));
        CHECK(r.cell_solves == 0);
    }
    // one geometry, one tensor
    CHECK(s.cell_solves() == 1);
}

TEST_CASE("radial disk grows at the prescribed rate") {
    VelocitySpec v;
    v.family = "tube";
    v.amplitude = 1.0;
    auto cell = disk_cell(0.25);
    MicroGeometry g(cell, v, 0.04, 64);
    // within a / 3 of the interface the cutoff is one
    for (double S : {0.005, 0.02, 0.04}) {
        auto inc = g.at(S);
        CHECK(inc->min_radius() == doctest::Approx(0.25 + S).epsilon(1e-9));
        CHECK(inc->max_radius() == doctest::Approx(0.25 + S).epsilon(1e-9));
        CHECK(std::fabs(inc->volume() - kPi * (0.25 + S) * (0.25 + S)) < 1e-6);
    }
    // area rate 2 pi r
    const double ds = 1e-4, S = 0.02;
    double rate = (g.at(S + ds)->volume() - g.at(S - ds)->volume()) / (2 * ds);
    CHECK(std::fabs(rate - 2 * kPi * (0.25 + S)) < 1e-6);
    CHECK(g.displacement_ratio(0.02) == doctest::Approx(0.02 / cell->a()).epsilon(1e-9));
    // memoized geometry is shared
    CHECK(g.at(0.02).get() == g.at(0.02).get());
}

TEST_CASE("shrinking inclusion stops at the minimum radius") {
    VelocitySpec v;
    v.family = "uniform";
    v.amplitude = -1.0;
    MicroGeometry g(disk_cell(0.25), v, 0.25, 64, 0.005, 0.02);
    // negative pseudo-time moves against the normal
    CHECK(g.at(-0.1)->min_radius() == doctest::Approx(0.15).epsilon(1e-8));
    try {
        g.at(-0.24);
        FAIL("expected MinRadiusReached");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MinRadiusReached);
    }
}

TEST_CASE("growing inclusion stops before reaching the cell faces") {
    VelocitySpec v;
    v.family = "uniform";
    v.amplitude = 1.0;
    MicroGeometry g(disk_cell(0.25), v, 0.3, 64, 0.005);
    CHECK(g.at(0.2)->clearance() > 0.0);
    try {
        g.at(0.3);
        FAIL("expected InclusionEscape");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InclusionEscape);
    }
}

TEST_CASE("micro solver preserves constants and is linear in the boundary value") {
    auto inc = std::make_shared<ShapeInclusion>(disk_cell(0.3));
    MicroHeat mh(inc, 32, 0.01, 0.7);
    double sum = 0.0;
    for (double f : mh.fractions()) sum += f;
    CHECK(sum == doctest::Approx(mh.volume()).epsilon(1e-13));
    CHECK(mh.volume() == doctest::Approx(kPi * 0.09).epsilon(1e-10));
    const std::size_t nn = 32 * 32;
    std::vector<double> old(nn, 2.5), f(nn, 0.0);
    auto r = mh.solve(old, f);
    auto full = mh.combine(r, 2.5);
    for (std::size_t g = 0; g < nn; ++g)
        if (mh.index()[g] >= 0) CHECK(std::fabs(full[g] - 2.5) < 1e-12);
    CHECK(mh.mass(full, 2.5) == doctest::Approx(2.5 * mh.volume()).epsilon(1e-12));
    CHECK(r.a0 + 2.5 * mh.a1() == doctest::Approx(2.5 * mh.volume()).epsilon(1e-12));
    // u1 is a discrete harmonic-like weight in [0, 1]
    for (double u : mh.u1()) {
        CHECK(u >= 0.0);
        CHECK(u <= 1.0);
    }
}

TEST_CASE("micro Dirichlet eigenmode decays at the implicit Euler rate") {
    const double R = 0.3, dt = 1e-3;
    const int m = 128, steps = 20;
    auto inc = std::make_shared<ShapeInclusion>(disk_cell(R));
    MicroHeat mh(inc, m, dt, 1.0);
    const std::size_t nn = static_cast<std::size_t>(m) * m;
    std::vector<double> u(nn), f(nn, 0.0);
    for (std::size_t g = 0; g < nn; ++g) {
        double r = (mh.node(static_cast<int>(g)) - pad(0.5, 0.5)).norm();
        u[g] = r < R ? std::cyl_bessel_j(0.0, kJ01 * r / R) : 0.0;
    }
    const double m0 = mh.mass(u, 0.0);
    for (int k = 0; k < steps; ++k) u = mh.combine(mh.solve(u, f), 0.0);
    const double lambda = kJ01 * kJ01 / (R * R);
    const double expected = std::pow(1.0 + dt * lambda, -steps);
    CHECK(std::fabs(mh.mass(u, 0.0) / m0 / expected - 1.0) < 0.02);
}

TEST_CASE("macro solver keeps constants") {
    TwoScaleConfig c = base_config(disk_cell(0.25));
    c.theta1.constant = 3.0;
    c.theta2.constant = 3.0;
    c.kappa2 = 0.3;
    TwoScaleSolver s(c);
    TwoScaleRun run = run_two_scale(s);
    REQUIRE(run.ok());
    for (double th : s.state().theta) CHECK(std::fabs(th - 3.0) < 1e-12);
    for (const auto& n : s.state().micro) CHECK(n.m2 == doctest::Approx(3.0 * n.y2).epsilon(1e-12));
}

TEST_CASE("cosine mode decays at the effective rate") {
    TwoScaleConfig c = base_config(empty_cell());
    c.macro_n = 32;
    c.kappa1 = 1.0;
    c.theta1.amplitude = 1.0;
    c.steps = 20;
    c.dt = 0.005;
    TwoScaleSolver s(c);
    auto x0 = s.state().theta;
    run_two_scale(s);
    const double expected = std::pow(1.0 + c.dt * kPi * kPi, -c.steps);
    // amplitude at x = 0
    CHECK(std::fabs(s.state().theta[0] / x0[0] / expected - 1.0) < 0.02);
}

TEST_CASE("uniform source raises the mean linearly") {
    TwoScaleConfig c = base_config(empty_cell());
    c.f1.constant = 1.0;
    TwoScaleSolver s(c);
    TwoScaleRun run = run_two_scale(s);
    REQUIRE(run.ok());
    CHECK(run.ledger.back().mean_theta == doctest::Approx(c.steps * c.dt).epsilon(1e-12));
    // with an inclusion the source also heats phase 2
    TwoScaleConfig d = base_config(disk_cell(0.25));
    d.f1.constant = 1.0;
    d.f2.constant = 1.0;
    TwoScaleSolver s2(d);
    TwoScaleRun r2 = run_two_scale(s2);
    REQUIRE(r2.ok());
    CHECK(max_abs_residual(r2) < 1e-12);
    CHECK(s2.enthalpy() == doctest::Approx(d.steps * d.dt).epsilon(1e-10));
}

TEST_CASE("steady state persists") {
    TwoScaleConfig c = base_config(disk_cell(0.2));
    c.theta1.constant = 1.0;
    c.theta2.constant = 1.0;
    c.steps = 100;
    TwoScaleSolver s(c);
    TwoScaleRun run = run_two_scale(s);
    REQUIRE(run.ok());
    for (double th : s.state().theta) CHECK(std::fabs(th - 1.0) < 1e-10);
}

TEST_CASE("energy ledger closes on a growing inclusion") {
    TwoScaleConfig c = base_config(disk_cell(0.25));
    c.velocity.family = "tube";
    c.velocity.amplitude = 0.01;
    c.steps = 100;
    c.kappa2 = 0.5;
    c.latent = 2.0;
    c.theta1.constant = 1.0;
    c.theta1.amplitude = 0.3;
    c.f1.constant = 0.5;
    TwoScaleSolver s(c);
    TwoScaleRun run = run_two_scale(s);
    REQUIRE(run.ok());
    CHECK(max_abs_residual(run) <= 1e-8);
    for (const auto& r : run.ledger) {
        CHECK(std::fabs(r.latent - r.latent_expected) <= 1e-6 * std::max(1.0, std::fabs(r.latent_expected)));
        CHECK(r.solver_residual <= 1e-10);
    }
    CHECK(run.ledger.back().y2_mean == doctest::Approx(kPi * 0.26 * 0.26).epsilon(1e-6));
    CHECK(run.ledger.back().latent > 0.0);
}

TEST_CASE("runs are deterministic") {
    TwoScaleConfig c = base_config(disk_cell(0.25));
    c.velocity.family = "tube";
    c.velocity.amplitude = 0.02;
    c.velocity.modulation = 0.5;
    c.theta1.amplitude = 1.0;
    TwoScaleSolver a(c), b(c);
    run_two_scale(a);
    run_two_scale(b);
    CHECK(a.state().theta == b.state().theta);
    CHECK(a.phase2_density() == b.phase2_density());
}

TEST_CASE("staggered coupling converges to the monolithic one") {
    auto diff = [](double dt) {
        double out = 0.0;
        TwoScaleConfig c = base_config(disk_cell(0.25));
        c.theta1.amplitude = 1.0;
        c.kappa2 = 0.2;
        c.dt = dt;
        c.steps = static_cast<int>(std::lround(0.08 / dt));
        TwoScaleSolver m(c);
        c.coupling = Coupling::Staggered;
        TwoScaleSolver s(c);
        TwoScaleRun rs = run_two_scale(s);
        run_two_scale(m);
        CHECK(max_abs_residual(rs) < 1e-12);
        for (std::size_t i = 0; i < m.state().theta.size(); ++i)
            out = std::max(out, std::fabs(m.state().theta[i] - s.state().theta[i]));
        return out;
    };
    double d1 = diff(0.02), d2 = diff(0.01);
    CHECK(d2 < 0.75 * d1);
}

TEST_CASE("empty cell needs no micro problems") {
    TwoScaleConfig c = base_config(empty_cell());
    c.kappa1 = 2.0;
    TwoScaleSolver s(c);
    for (const auto& n : s.state().micro) {
        CHECK(!n.inclusion);
        CHECK(n.kappa(0, 0) == 2.0);
        CHECK(n.kappa(0, 1) == 0.0);
    }
    CHECK(s.cell_solves() == 0);
}
