#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "homog/cell.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace homog;

namespace {

constexpr double kPi = std::numbers::pi;

std::shared_ptr<const Inclusion> disk(double r, int dim = 2) {
    Vec c = dim == 2 ? pad(0.5, 0.5) : pad(0.5, 0.5, 0.5);
    return std::make_shared<ShapeInclusion>(std::make_shared<ImplicitSurfaceCell>(make_disk(c, r, dim)));
}

std::shared_ptr<const Inclusion> none(int dim = 2) {
    return std::make_shared<ShapeInclusion>(std::make_shared<ImplicitSurfaceCell>(make_empty(dim)));
}

std::string temp_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("homog_test_" + name);
    std::filesystem::remove_all(p);
    return p.string();
}

} // namespace

TEST_CASE("empty inclusion gives the matrix conductivity") {
    for (int d : {2, 3}) {
        CellState cs = make_cell_state(none(d), d == 2 ? 16 : 8);
        CHECK(cs.y1 == 1.0);
        EffectiveTensor t = effective_tensor(cs, 2.5);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) CHECK(std::fabs(t.kappa(i, j) - (i == j ? 2.5 : 0.0)) < 1e-10);
        for (const auto& c : t.correctors)
            for (double v : c) CHECK(std::fabs(v) < 1e-14);
    }
}

TEST_CASE("disk tensor: symmetry, isotropy, bounds and corrector rotation") {
    CellState cs = make_cell_state(disk(0.25), 64);
    EffectiveTensor t = effective_tensor(cs, 1.0, true);
    MESSAGE(t.to_json().dump());
    CHECK(t.residual <= 1e-10);
    CHECK(std::fabs(t.kappa(0, 1) - t.kappa(1, 0)) <= 1e-8);
    CHECK(std::fabs(t.kappa(0, 0) - t.kappa(1, 1)) <= 1e-6);
    CHECK(std::fabs(t.kappa(0, 1)) <= 1e-8);
    CHECK(t.kappa(0, 0) < 1.0);
    CHECK(t.kappa(0, 0) > 0.0);
    CHECK(t.error_estimate >= 0.0);
    CHECK(t.error_estimate < 0.05);

    // tau_2(R y) = tau_1(y) for the quarter turn R about the center
    CellDiscretization disc(*cs.inclusion, 64);
    double err = 0.0;
    const int n = 64;
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            int ri = (n - j) % n, rj = i;
            err = std::max(err, std::fabs(t.correctors[1][ri + n * rj] - t.correctors[0][i + n * j]));
        }
    CHECK(err <= 1e-8);
    // zero mean over Y1
    CHECK(std::fabs(disc.mean(t.correctors[0])) < 1e-12);
}

TEST_CASE("energy equals the diagonal flux and decreases under refinement") {
    double prev = 1e9;
    for (int n : {16, 32, 64}) {
        CellDiscretization disc(*disk(0.25), n);
        auto tau = disc.solve(0);
        double e = disc.energy(tau, 0);
        CHECK(std::fabs(e - disc.flux(tau, 0, 0)) < 1e-10);
        // energy of any other periodic function is larger
        std::vector<double> pert = tau;
        for (std::size_t i = 0; i < pert.size(); ++i) pert[i] += 1e-3 * std::sin(0.37 * i);
        CHECK(disc.energy(pert, 0) > e);
        MESSAGE("n=" << n << " energy=" << e);
        prev = e;
    }
    CHECK(prev < 1.0);
}

TEST_CASE("disk r = 0.25 against two mesh levels and the Rayleigh formula") {
    CellState c64 = make_cell_state(disk(0.25), 64);
    CellState c128 = make_cell_state(disk(0.25), 128);
    CellState c32 = make_cell_state(disk(0.25), 32);
    double k32 = effective_tensor(c32, 1.0).kappa(0, 0);
    double k64 = effective_tensor(c64, 1.0).kappa(0, 0);
    double k128 = effective_tensor(c128, 1.0).kappa(0, 0);
    double rel = std::fabs(k128 - k64) / k128;
    double p = std::log2(std::fabs((k32 - k64) / (k64 - k128)));
    double rich = k128 + (k128 - k64) / (std::pow(2.0, p) - 1.0);
    double ray = rayleigh_square_array(kPi / 16.0);
    MESSAGE("k32=" << k32 << " k64=" << k64 << " k128=" << k128 << " order=" << p << " richardson=" << rich
                   << " rayleigh=" << ray);
    CHECK(rel <= 0.01);
    CHECK(std::fabs(ray - 0.67163) < 1e-4);
    CHECK(std::fabs(rich - ray) / ray < 0.005);
    CHECK(std::fabs(k128 - ray) / ray < 0.01);
}

TEST_CASE("small disks approach the matrix conductivity monotonically") {
    double prev = 0.0;
    for (double r : {0.2, 0.1, 0.05}) {
        double k = effective_tensor(make_cell_state(disk(r), 64), 1.0).kappa(0, 0);
        MESSAGE("r=" << r << " kappa=" << k);
        CHECK(std::fabs(k - rayleigh_square_array(kPi * r * r)) < 2e-3);
        CHECK(k > prev);
        CHECK(k < 1.0);
        prev = k;
    }
    CHECK(prev > 0.98);
}

TEST_CASE("3D ball tensor is isotropic and below the matrix value") {
    CellState cs = make_cell_state(disk(0.3, 3), 16);
    EffectiveTensor t = effective_tensor(cs, 1.0);
    CHECK(std::fabs(t.kappa(0, 0) - t.kappa(2, 2)) < 1e-8);
    CHECK(std::fabs(t.kappa(0, 1)) < 1e-8);
    CHECK(t.kappa(0, 0) < 1.0);
    // Maxwell estimate for an insulating sphere array
    double f = 4.0 / 3.0 * kPi * 0.027;
    double maxwell = 1.0 - 1.5 * f / (1.0 + 0.5 * f);
    MESSAGE("3D kappa " << t.kappa(0, 0) << " maxwell " << maxwell);
    CHECK(std::fabs(t.kappa(0, 0) - maxwell) < 0.03);
}

TEST_CASE("coarse mesh estimate raises MeshTooCoarse") {
    auto tight = std::make_shared<ShapeInclusion>(
        std::make_shared<ImplicitSurfaceCell>(make_ellipse(pad(0.5, 0.5), pad(0.45, 0.1), 2)));
    CHECK_THROWS_AS(effective_tensor(make_cell_state(tight, 8), 1.0, true), Error);
    try {
        effective_tensor(make_cell_state(tight, 8), 1.0, true);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::MeshTooCoarse);
    }
}

TEST_CASE("effective sources") {
    CellState full = make_cell_state(none(), 16);
    auto one = [](const Vec&) { return 1.0; };
    auto y0 = [](const Vec& y) { return y(0); };
    EffectiveSources s = effective_sources(one, y0, full);
    CHECK(s.f_h == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.theta_h == doctest::Approx(0.5).epsilon(1e-12));

    // |Y1| = 0.8
    double r = std::sqrt(0.2 / kPi);
    CellState cs = make_cell_state(disk(r), 16);
    CHECK(cs.y1 == doctest::Approx(0.8).epsilon(1e-10));
    CHECK(effective_sources(one, one, cs).f_h == doctest::Approx(0.8).epsilon(1e-10));

    // bump supported inside the inclusion
    CellState big = make_cell_state(disk(0.3), 16);
    auto bump = [](const Vec& y) {
        double q = (y - pad(0.5, 0.5)).squaredNorm();
        return q < 0.04 ? std::exp(-1.0 / (1.0 - q / 0.04)) : 0.0;
    };
    CHECK(std::fabs(effective_sources(bump, bump, big).f_h) < 1e-6);
}

TEST_CASE("interface source") {
    const double r = 0.25, L = 3.0, k2 = 0.7;
    auto cell = std::make_shared<ImplicitSurfaceCell>(make_disk(pad(0.5, 0.5), r, 2));
    auto gamma = cell->surface_samples(256);
    auto zero_grad = [](const Vec&) { return Vec::Zero().eval(); };
    auto zero_v = [](const Vec&) { return 0.0; };
    InterfaceSource a = interface_source(gamma, zero_v, zero_grad, L, k2);
    CHECK(a.total == 0.0);

    const double c = 0.2;
    InterfaceSource b = interface_source(gamma, [&](const Vec&) { return c; }, zero_grad, L, k2);
    CHECK(b.latent == doctest::Approx(L * c * 2 * kPi * r).epsilon(1e-12));

    // theta2 = |y - c|^2: grad . n = 2 r
    auto radial = [](const Vec& y) { return Vec(2.0 * (y - pad(0.5, 0.5))); };
    InterfaceSource f = interface_source(gamma, zero_v, radial, L, k2);
    CHECK(std::fabs(f.flux - k2 * 2 * r * 2 * kPi * r) < 1e-6);
    CHECK(f.total == doctest::Approx(-f.flux));

    CHECK_THROWS_AS(interface_source(gamma, zero_v, nullptr, L, k2), Error);
}

TEST_CASE("star inclusion interpolation, area and normals") {
    std::vector<double> radii(32);
    for (int j = 0; j < 32; ++j) {
        double t = 2 * kPi * j / 32;
        radii[j] = 0.2 * (1.0 + 0.1 * std::cos(3 * t));
    }
    StarInclusion s(pad(0.5, 0.5), radii);
    double exact = 0.5 * 0.04 * (2 * kPi + kPi * 0.01);
    CHECK(s.volume() == doctest::Approx(exact).epsilon(1e-13));
    CHECK(s.integrate_inside([](const Vec&) { return 1.0; }) == doctest::Approx(exact).epsilon(1e-12));
    CHECK(s.radius(0.123) == doctest::Approx(0.2 * (1.0 + 0.1 * std::cos(0.369))).epsilon(1e-13));
    CHECK(std::fabs(s.phi(s.point(1.0))) < 1e-14);
    CHECK(s.phi(pad(0.5, 0.5)) < 0.0);

    // points at irregular angles reproduce the same curve
    std::vector<Vec> pts;
    for (int j = 0; j < 31; ++j) {
        double t = 2 * kPi * (j + 0.3 * std::sin(j)) / 31;
        pts.push_back(pad(0.5, 0.5) + 0.2 * (1.0 + 0.1 * std::cos(3 * t)) * pad(std::cos(t), std::sin(t)));
    }
    StarInclusion q = StarInclusion::through_points(pad(0.5, 0.5), pts);
    CHECK(std::fabs(q.radius(2.0) - s.radius(2.0)) < 1e-12);

    // disk: normals radial, perimeter 2 pi r
    StarInclusion c(pad(0.5, 0.5), std::vector<double>(16, 0.3));
    double per = 0.0;
    for (const auto& smp : c.surface_samples(64)) {
        per += smp.weight;
        CHECK((smp.normal - (smp.point - pad(0.5, 0.5)) / 0.3).norm() < 1e-13);
    }
    CHECK(per == doctest::Approx(2 * kPi * 0.3).epsilon(1e-14));

    CHECK_THROWS_AS(make_cell_state(std::make_shared<StarInclusion>(pad(0.5, 0.5), std::vector<double>(8, 0.6)), 16),
                    Error);
    CHECK_THROWS_AS(StarInclusion(pad(0.5, 0.5), std::vector<double>{0.1, -0.1, 0.1}), Error);
}

TEST_CASE("star and implicit disks give the same tensor") {
    auto star = std::make_shared<StarInclusion>(pad(0.5, 0.5), std::vector<double>(16, 0.25));
    double a = effective_tensor(make_cell_state(star, 32), 1.0).kappa(0, 0);
    double b = effective_tensor(make_cell_state(disk(0.25), 32), 1.0).kappa(0, 0);
    CHECK(std::fabs(a - b) < 1e-12);
}

TEST_CASE("cache hits are bitwise identical and corruption is quarantined") {
    std::string root = temp_dir("cache");
    CellCache cache(root);
    CHECK(cache.list().empty());
    CellState cs = make_cell_state(disk(0.2), 32);
    EffectiveTensor a = cache.get(cs, 1.0);
    CHECK(cache.solves() == 1);
    EffectiveTensor b = cache.get(cs, 1.0);
    CHECK(cache.solves() == 1);
    CHECK(cache.hits() == 1);
    CHECK(std::memcmp(a.kappa.data(), b.kappa.data(), sizeof(double) * 9) == 0);
    REQUIRE(a.correctors.size() == b.correctors.size());
    for (std::size_t j = 0; j < a.correctors.size(); ++j) CHECK(a.correctors[j] == b.correctors[j]);
    EffectiveTensor fresh = effective_tensor(cs, 1.0);
    CHECK(std::memcmp(a.kappa.data(), fresh.kappa.data(), sizeof(double) * 9) == 0);
    REQUIRE(cache.list().size() == 1);

    // flip a byte in the corrector file
    std::string key = cache.key(cs, 1.0);
    auto bin = std::filesystem::path(root) / key / "correctors.bin";
    {
        std::fstream f(bin, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(100);
        char c = 0x5a;
        f.write(&c, 1);
    }
    EffectiveTensor c = cache.get(cs, 1.0);
    CHECK(cache.quarantined() == 1);
    CHECK(cache.solves() == 2);
    CHECK(std::memcmp(a.kappa.data(), c.kappa.data(), sizeof(double) * 9) == 0);
    CHECK(std::filesystem::exists(std::filesystem::path(root) / "quarantine"));

    // different kappa1 is a different entry
    CHECK(cache.key(cs, 2.0) != key);
    CHECK(cache.purge() == 1);
    CHECK(cache.purge() == 0);
    CHECK(cache.list().empty());
}

TEST_CASE("finite-volume cell scheme") {
    EffectiveTensor e = effective_tensor(make_cell_state(none(), 16, CellScheme::FiniteVolume), 1.5);
    CHECK(std::fabs(e.kappa(0, 0) - 1.5) < 1e-12);
    CHECK(std::fabs(e.kappa(0, 1)) < 1e-12);

    CellFV fv(*disk(0.25), 64);
    auto t0 = fv.solve(0), t1 = fv.solve(1);
    CHECK(std::fabs(fv.energy(t0, 0) - fv.flux(t0, 0, 0)) < 1e-10);
    CHECK(std::fabs(fv.flux(t0, 0, 1) - fv.flux(t1, 1, 0)) < 1e-10);
    CHECK(std::fabs(fv.flux(t0, 0, 0) - fv.flux(t1, 1, 1)) < 1e-10);

    double ray = rayleigh_square_array(kPi / 16.0);
    double prev = 1.0;
    for (int n : {32, 64, 128}) {
        double k = effective_tensor(make_cell_state(disk(0.25), n, CellScheme::FiniteVolume), 1.0).kappa(0, 0);
        MESSAGE("fv n=" << n << " kappa=" << k << " rayleigh=" << ray);
        CHECK(std::fabs(k - ray) < prev);
        prev = std::fabs(k - ray);
    }
    CHECK(prev / ray < 0.02);
}

TEST_CASE("segment crossings") {
    auto phi = [](const Vec& y) { return (y - pad(0.5, 0.5)).norm() - 0.25; };
    auto [out, in] = segment_split(phi, pad(0.0, 0.5), pad(1.0, 0.5));
    CHECK(in == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(first_crossing(phi, pad(0.5, 0.5), pad(1.0, 0.5)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(first_crossing(phi, pad(0.0, 0.0), pad(0.1, 0.0)) == 1.0);
}
