#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "graphmd/potential.hpp"
#include "graphmd/system.hpp"
#include "helpers.hpp"

using namespace graphmd;
using namespace graphmd::testing;

namespace {

std::string write_temp(const std::string& name, const std::string& body) {
    std::string path = "/tmp/graphmd_test_" + name;
    std::ofstream out(path);
    out << body;
    return path;
}

}  // namespace

TEST_CASE("load_xyz: minimal single-atom file") {
    std::string path = write_temp("h.xyz",
        "1\n"
        "Lattice=\"10 0 0 0 10 0 0 0 10\" pbc=\"T T T\"\n"
        "H 0 0 0\n");
    AtomicSystem sys = load_xyz(path);
    CHECK(sys.size() == 1);
    CHECK(sys.species[0] == 1);
    CHECK(sys.lattice[0][0] == 10.0);
    std::remove(path.c_str());
}

TEST_CASE("load_xyz: quartz fixture has 3 Si and 6 O") {
    AtomicSystem sys = load_xyz(fixture_path("quartz.xyz"));
    CHECK(sys.size() == 9);
    int si = 0, o = 0;
    for (int z : sys.species) (z == 14 ? si : o)++;
    CHECK(si == 3);
    CHECK(o == 6);
    CHECK(sys.lattice[0][0] == doctest::Approx(4.9134));
    CHECK(sys.lattice[2][2] == doctest::Approx(5.4052));
}

TEST_CASE("load_xyz: unknown symbol reports the line") {
    std::string path = write_temp("bad.xyz",
        "1\n"
        "Lattice=\"10 0 0 0 10 0 0 0 10\"\n"
        "Xx 0 0 0\n");
    try {
        load_xyz(path);
        FAIL("expected a parse error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("load_xyz: missing file") {
    CHECK_THROWS_AS(load_xyz("/nonexistent/sys.xyz"), Error);
}

TEST_CASE("save/load round trip") {
    AtomicSystem sys = random_triclinic(17, 8.0, 3);
    save_xyz(sys, "/tmp/graphmd_test_rt.xyz");
    AtomicSystem back = load_xyz("/tmp/graphmd_test_rt.xyz");
    REQUIRE(back.size() == sys.size());
    for (std::size_t i = 0; i < sys.size(); ++i) {
        CHECK(back.species[i] == sys.species[i]);
        for (int k = 0; k < 3; ++k)
            CHECK(back.positions[i][k] ==
                  doctest::Approx(sys.positions[i][k]).epsilon(1e-12));
    }
    std::remove("/tmp/graphmd_test_rt.xyz");
}

TEST_CASE("make_supercell: identity and counts") {
    AtomicSystem q = load_xyz(fixture_path("quartz.xyz"));
    AtomicSystem same = make_supercell(q, {1, 1, 1});
    CHECK(same.size() == q.size());
    CHECK(same.positions[3].x == q.positions[3].x);
    AtomicSystem big = make_supercell(q, {2, 2, 2});
    CHECK(big.size() == 72);
    int si = 0;
    for (int z : big.species)
        if (z == 14) ++si;
    CHECK(si == 24);
}

TEST_CASE("make_supercell: per-atom energy invariance") {
    AtomicSystem q = load_xyz(fixture_path("quartz.xyz"));
    ToyPotentialParams params = ToyPotentialParams::init(11, 8, 4, 2, 3.0);
    double e1 = forward_serial(q, params).energy / q.size();
    AtomicSystem big = make_supercell(q, {3, 3, 3});
    double e27 = forward_serial(big, params).energy / big.size();
    CHECK(std::abs(e1 - e27) <= 1e-10);
}

TEST_CASE("wrap_positions: basic, idempotent, graph-invariant") {
    AtomicSystem sys;
    sys.lattice = Mat3::identity();
    for (int k = 0; k < 3; ++k) sys.lattice[k] *= 4.0;
    sys.positions.push_back(Vec3{1.25 * 4.0, -0.5 * 4.0, 0.0});
    sys.species.push_back(1);
    AtomicSystem w = wrap_positions(sys);
    FractionalCoords f = w.fractional();
    CHECK(f.coords[0].x == doctest::Approx(0.25));
    CHECK(f.coords[0].y == doctest::Approx(0.5));
    CHECK(f.coords[0].z == doctest::Approx(0.0));

    AtomicSystem w2 = wrap_positions(w);
    CHECK(w2.positions[0].x == w.positions[0].x);  // bitwise idempotent
    CHECK(w2.positions[0].y == w.positions[0].y);

    // neighbor multisets agree up to image offsets after wrapping
    AtomicSystem r = random_system(40, Vec3{6, 6, 6}, 5);
    for (Vec3& pos : r.positions) pos += Vec3{7.3, -4.1, 11.9};
    AtomGraph before = brute_force_neighbor_list(r, 3.0);
    AtomGraph after = brute_force_neighbor_list(wrap_positions(r), 3.0);
    REQUIRE(before.num_edges() == after.num_edges());
    for (std::size_t e = 0; e < before.num_edges(); ++e) {
        CHECK(before.src[e] == after.src[e]);
        CHECK(before.dst[e] == after.dst[e]);
        CHECK(before.distance[e] == doctest::Approx(after.distance[e]).epsilon(1e-12));
    }
}

TEST_CASE("random_perturb: determinism and bound") {
    AtomicSystem q = load_xyz(fixture_path("quartz.xyz"));
    AtomicSystem zero = random_perturb(q, 0.0, 4);
    CHECK(zero.positions[5].x == q.positions[5].x);
    AtomicSystem a = random_perturb(q, 0.1, 42);
    AtomicSystem b = random_perturb(q, 0.1, 42);
    double max_disp = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK(a.positions[i].x == b.positions[i].x);
        max_disp = std::max(max_disp, (a.positions[i] - q.positions[i]).norm());
    }
    CHECK(max_disp <= 0.1 * std::sqrt(3.0) + 1e-15);
    CHECK(max_disp > 0.0);
}

TEST_CASE("fractional round trip") {
    AtomicSystem sys = random_triclinic(25, 9.0, 8);
    FractionalCoords f = sys.fractional();
    for (std::size_t i = 0; i < sys.size(); ++i) {
        Vec3 cart = sys.lattice.rowvec_mul(f.coords[i]);
        CHECK((cart - sys.positions[i]).norm() <= 1e-12 * (1.0 + sys.positions[i].norm()));
    }
}

TEST_CASE("validate: degenerate lattice and size mismatch") {
    AtomicSystem sys;
    sys.positions.push_back(Vec3{0, 0, 0});
    sys.species.push_back(1);
    sys.lattice[1] = sys.lattice[0];  // singular
    CHECK_THROWS_AS(sys.validate(), Error);
    sys.lattice = Mat3::identity();
    sys.species.push_back(1);
    CHECK_THROWS_AS(sys.validate(), Error);
}

TEST_CASE("ensure_periodic pads non-periodic axes") {
    AtomicSystem sys = random_system(10, Vec3{5, 5, 5}, 2);
    sys.pbc = {true, true, false};
    AtomicSystem padded = ensure_periodic(sys, 3.0);
    CHECK(padded.pbc[2]);
    double lo = 1e30, hi = -1e30;
    for (const Vec3& r : sys.positions) {
        lo = std::min(lo, r.z);
        hi = std::max(hi, r.z);
    }
    CHECK(padded.lattice[2][2] >= (hi - lo) + 2 * 3.0 - 1e-12);
    // fully periodic systems come back unchanged
    sys.pbc = {true, true, true};
    AtomicSystem same = ensure_periodic(sys, 3.0);
    CHECK(same.lattice[2][2] == 5.0);
}

TEST_CASE("element tables and rng determinism") {
    CHECK(symbol_to_z("Si") == 14);
    CHECK(z_to_symbol(8) == "O");
    CHECK(atomic_mass(14) == doctest::Approx(28.085).epsilon(1e-3));
    CHECK_THROWS_AS(symbol_to_z("Xq"), Error);
    Rng r1(7), r2(7);
    for (int i = 0; i < 100; ++i) CHECK(r1.normal() == r2.normal());
    Rng u(3);
    for (int i = 0; i < 1000; ++i) {
        double v = u.uniform();
        CHECK(v >= 0.0);
        CHECK(v < 1.0);
    }
}
