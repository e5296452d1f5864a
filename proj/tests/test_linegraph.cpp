#include <set>

#include "doctest.h"
#include "graphmd/linegraph.hpp"
#include "helpers.hpp"

using namespace graphmd;
using namespace graphmd::testing;

namespace {

/// Union over partitions of line edges as global (edge e, edge e') pairs.
std::vector<std::pair<std::int64_t, std::int64_t>> distributed_union(
    const PartitionedLineGraph& lg) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (const LineGraphPartition& part : lg.parts)
        for (const auto& [le, lep] : part.line_edges)
            out.emplace_back(lg.bonds.edge_of_bond[part.layout.node_array[le]],
                             lg.bonds.edge_of_bond[part.layout.node_array[lep]]);
    std::sort(out.begin(), out.end());
    return out;
}

PartitionedLineGraph build_for(const AtomicSystem& sys, double cutoff,
                               double r, int p) {
    AtomGraph g = build_neighbor_list(sys, cutoff, 1);
    PartitionedAtomGraph parts =
        build_atom_partitions(g, sys, choose_partition_rule(sys, p), true);
    auto closure = build_two_hop_closure(parts, g);
    EdgeTables tables = build_edge_tables(g, closure, parts, r, 0.0);
    return build_line_graph_partitions(tables, g, parts);
}

}  // namespace

TEST_CASE("two-hop closure: chain hand trace and monotonicity") {
    // chain A-B-C-D-E along x, 1 A spacing, big box
    AtomicSystem sys;
    sys.lattice = Mat3::identity();
    sys.lattice[0] *= 20.0;
    sys.lattice[1] *= 8.0;
    sys.lattice[2] *= 8.0;
    for (int i = 0; i < 5; ++i) {
        sys.positions.push_back(Vec3{8.0 + i, 4.0, 4.0});
        sys.species.push_back(6);
    }
    AtomGraph g = build_neighbor_list(sys, 1.5, 1);
    PartitionRule rule;
    rule.axis = 0;
    rule.p = 2;
    // wall between B (x=9) and C (x=10)
    rule.boundaries = {0.0, 9.5 / 20.0, 1.0};
    PartitionedAtomGraph parts = build_atom_partitions(g, sys, rule, true);
    auto closure = build_two_hop_closure(parts, g);
    std::set<std::int64_t> left(closure[0].begin(), closure[0].end());
    CHECK(left == std::set<std::int64_t>{0, 1, 2, 3});  // A,B plus C,D

    // closure contains the 1-hop expanded set
    for (std::int64_t v : parts.parts[0].layout.node_array)
        CHECK(left.count(v) == 1);

    // p=1 closure covers everything
    PartitionedAtomGraph one =
        build_atom_partitions(g, sys, choose_partition_rule(sys, 1));
    auto full = build_two_hop_closure(one, g);
    CHECK(full[0].size() == 5);
}

TEST_CASE("collect_bonds and water-molecule edge table") {
    AtomicSystem w;
    w.lattice = Mat3::identity();
    for (int k = 0; k < 3; ++k) w.lattice[k] *= 20.0;
    w.positions = {Vec3{10, 10, 10}, Vec3{10.96, 10, 10}, Vec3{9.76, 10.93, 10}};
    w.species = {8, 1, 1};
    AtomGraph g = build_neighbor_list(w, 2.0, 1);
    BondSet bonds = collect_bonds(g, 1.2, 0.0);
    CHECK(bonds.size() == 4);  // O->H x2 and H->O x2 within 1.2 A
    CHECK(bonds.by_src[0].size() == 2);
    CHECK(bonds.by_src[1].size() == 1);
    CHECK(bonds.by_src[2].size() == 1);

    // p=1 line graph vs brute force
    auto serial = serial_line_graph(g, 1.2, 0.0);
    auto brute = brute_force_line_graph(g, 1.2, 0.0);
    CHECK(serial == brute);
    CHECK(!serial.empty());
}

TEST_CASE("no bonds below range -> empty tables") {
    AtomicSystem sys = random_system(10, Vec3{30, 30, 30}, 3);
    // spread atoms far apart
    for (std::size_t i = 0; i < sys.size(); ++i)
        sys.positions[i] = Vec3{3.0 * i, 15.0, 15.0};
    AtomGraph g = build_neighbor_list(sys, 2.5, 1);
    CHECK(g.num_edges() == 0);
    CHECK(collect_bonds(g, 2.0, 0.0).size() == 0);
    CHECK(serial_line_graph(g, 2.0, 0.0).empty());
    CHECK(brute_force_line_graph(g, 2.0, 0.0).empty());
}

TEST_CASE("isolated bond has zero line edges (reverse-pair exclusion)") {
    AtomicSystem dimer;
    dimer.lattice = Mat3::identity();
    for (int k = 0; k < 3; ++k) dimer.lattice[k] *= 25.0;
    dimer.positions = {Vec3{12, 12, 12}, Vec3{13, 12, 12}};
    dimer.species = {8, 8};
    AtomGraph g = build_neighbor_list(dimer, 1.5, 1);
    CHECK(g.num_edges() == 2);
    CHECK(serial_line_graph(g, 1.5, 0.0).empty());
    CHECK(brute_force_line_graph(g, 1.5, 0.0).empty());
}

TEST_CASE("triangle line graph matches oracle") {
    AtomicSystem tri;
    tri.lattice = Mat3::identity();
    for (int k = 0; k < 3; ++k) tri.lattice[k] *= 20.0;
    tri.positions = {Vec3{10, 10, 10}, Vec3{11, 10, 10}, Vec3{10.5, 10.87, 10}};
    tri.species = {6, 6, 6};
    AtomGraph g = build_neighbor_list(tri, 1.5, 1);
    CHECK(g.num_edges() == 6);
    auto serial = serial_line_graph(g, 1.5, 0.0);
    CHECK(serial == brute_force_line_graph(g, 1.5, 0.0));
    // each of the 6 bonds feeds 2 outgoing bonds at its head; the reverse is
    // excluded, leaving one line edge per (bond, continuation) pair
    CHECK(serial.size() == 6);
}

TEST_CASE("serial equals brute force on randomized systems") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        AtomicSystem sys =
            seed % 2 ? random_triclinic(30 + seed * 8, 7.0, seed)
                     : random_system(30 + seed * 8, Vec3{8, 7, 9}, seed);
        AtomGraph g = build_neighbor_list(sys, 3.0, 2);
        auto serial = serial_line_graph(g, 2.2, 0.0);
        CHECK(serial == brute_force_line_graph(g, 2.2, 0.0));
    }
}

TEST_CASE("distributed union equals serial on quartz 2x2x2, p=3") {
    AtomicSystem sys = random_perturb(
        make_supercell(load_xyz(fixture_path("quartz.xyz")), {2, 2, 2}), 0.05,
        9);
    AtomGraph g = build_neighbor_list(sys, 4.0, 1);
    auto serial = serial_line_graph(g, 3.0, 0.0);
    PartitionedLineGraph lg = build_for(sys, 4.0, 3.0, 3);
    CHECK(distributed_union(lg) == serial);
}

TEST_CASE("distributed union across random systems and p") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        AtomicSystem sys = random_system(60 + seed * 20, Vec3{11, 8, 8}, seed);
        AtomGraph g = build_neighbor_list(sys, 3.2, 1);
        auto serial = serial_line_graph(g, 2.4, 0.0);
        for (int p : {1, 2, 3, 4}) {
            PartitionedLineGraph lg = build_for(sys, 3.2, 2.4, p);
            REQUIRE(distributed_union(lg) == serial);
        }
    }
}

TEST_CASE("bond bucket symmetry and border-bond reachability") {
    AtomicSystem sys = random_system(150, Vec3{13, 9, 9}, 31);
    PartitionedLineGraph lg = build_for(sys, 3.2, 2.4, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(lg.bond_buckets.to[i][j] == lg.bond_buckets.from[j][i]);
    // every received border bond feeds at least one line edge of the receiver
    for (int i = 0; i < 3; ++i) {
        const LineGraphPartition& part = lg.parts[i];
        for (int j = 0; j < 3; ++j) {
            Span span = part.layout.from_span(j);
            for (std::int64_t row = span.begin; row < span.end; ++row) {
                bool used = false;
                for (const auto& [le, lep] : part.line_edges)
                    if (le == row ||
                        part.layout.node_array[le] == part.layout.node_array[row])
                        used = true;
                CHECK(used);
            }
        }
    }
}

TEST_CASE("range validation") {
    AtomicSystem sys = random_system(20, Vec3{8, 8, 8}, 2);
    AtomGraph g = build_neighbor_list(sys, 3.0, 1);
    CHECK_THROWS_AS(collect_bonds(g, 3.5, 0.0), Error);
    CHECK_THROWS_AS(collect_bonds(g, 2.0, -0.1), Error);
}
