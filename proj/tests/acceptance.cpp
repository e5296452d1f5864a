// Acceptance suite: one PASS/FAIL/SKIP line per criterion; the exit code is
// the number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "graphmd/engine.hpp"
#include "graphmd/linegraph.hpp"
#include "graphmd/md.hpp"
#include "graphmd/neighborlist.hpp"
#include "graphmd/partitioner.hpp"
#include "graphmd/potential.hpp"
#include "graphmd/system.hpp"
#include "helpers.hpp"

using namespace graphmd;
using namespace graphmd::testing;

namespace {

int g_failures = 0;

void report(int id, const std::string& name, int status,
            const std::string& detail) {
    const char* verdict = status == 0 ? "PASS" : status == 1 ? "FAIL" : "SKIP";
    std::printf("criterion %d (%s): %s%s%s\n", id, name.c_str(), verdict,
                detail.empty() ? "" : " - ", detail.c_str());
    std::fflush(stdout);
    if (status == 1) ++g_failures;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

AtomicSystem quartz_super(int n, double amp, std::uint64_t seed) {
    return random_perturb(
        make_supercell(load_xyz(fixture_path("quartz.xyz")), {n, n, n}), amp,
        seed);
}

AtomicSystem random_gas(std::int64_t n, std::uint64_t seed) {
    // ~0.07 atoms/A^3, comparable to quartz
    double edge = std::cbrt(static_cast<double>(n) / 0.07);
    return seed % 3 == 0 ? random_triclinic(n, edge, seed)
                         : random_system(n, Vec3{edge, edge * 1.05, edge * 0.95},
                                         seed);
}

double wall_seconds(const std::function<void()>& fn) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
}

int physical_cores() {
    std::ifstream in("/proc/cpuinfo");
    std::set<std::pair<int, int>> cores;
    int phys = -1, core = -1, seen = 0;
    std::string line;
    while (std::getline(in, line)) {
        auto value = [&] { return std::stoi(line.substr(line.find(':') + 1)); };
        if (line.rfind("processor", 0) == 0) ++seen;
        if (line.rfind("physical id", 0) == 0) phys = value();
        if (line.rfind("core id", 0) == 0) {
            core = value();
            cores.insert({phys, core});
        }
    }
    if (!cores.empty()) return static_cast<int>(cores.size());
    return seen > 0 ? seen : 1;
}

// --- criterion 1: serial vs distributed exactness --------------------------

void criterion_exactness() {
    std::vector<AtomicSystem> systems;
    for (std::uint64_t s = 0; s < 46; ++s)
        systems.push_back(random_gas(10 + static_cast<std::int64_t>(s) * 22, s));
    systems.push_back(quartz_super(2, 0.05, 100));    // 72 atoms
    systems.push_back(quartz_super(4, 0.05, 101));    // 576
    systems.push_back(quartz_super(8, 0.04, 102));    // 4608
    systems.push_back(quartz_super(13, 0.03, 103));   // 19773

    double de = 0.0, df = 0.0, ds = 0.0;
    std::size_t evaluated = 0;
    for (const AtomicSystem& sys : systems) {
        for (double r3 : {0.0, 2.4}) {
            ToyPotentialParams params =
                ToyPotentialParams::init(sys.size(), 16, 8, 2, 4.0, r3);
            PotentialOutput serial = forward_serial(sys, params);
            for (int p : {1, 2, 3, 4, 8}) {
                if (p > static_cast<int>(sys.size())) continue;
                Distributed dist = Distributed::create_distributed(
                    sys, params.r_atom,
                    r3 > 0.0 ? std::optional<double>(r3) : std::nullopt, p, 1,
                    true);
                PotentialOutput out = forward_distributed(dist, params);
                for (std::size_t i = 0; i < sys.size(); ++i) {
                    de = std::max(de,
                                  std::abs(out.per_atom[i] - serial.per_atom[i]));
                    for (int k = 0; k < 3; ++k)
                        df = std::max(df, std::abs(out.forces[i][k] -
                                                   serial.forces[i][k]));
                }
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b)
                        ds = std::max(ds, std::abs(out.stress[a][b] -
                                                   serial.stress[a][b]));
                ++evaluated;
            }
        }
    }
    bool pass = de <= 1e-12 && df <= 1e-10 && ds <= 1e-10;
    std::ostringstream d;
    d << systems.size() << " systems, " << evaluated
      << " distributed evaluations; max |dE|/atom " << fmt(de) << " eV, |dF| "
      << fmt(df) << " eV/A, |dS| " << fmt(ds) << " eV/A^3";
    report(1, "serial vs distributed exactness", pass ? 0 : 1, d.str());
}

// --- criterion 2: zero redundancy ------------------------------------------

void criterion_zero_redundancy() {
    bool pass = true;
    std::size_t audited_edges = 0, audited_line = 0;
    for (std::uint64_t s = 0; s < 20 && pass; ++s) {
        AtomicSystem sys = random_gas(60 + static_cast<std::int64_t>(s) * 40, s);
        AtomGraph g = build_neighbor_list(sys, 3.4, 1);
        int p = 2 + static_cast<int>(s % 4);
        PartitionedAtomGraph parts =
            build_atom_partitions(g, sys, choose_partition_rule(sys, p), true);
        std::vector<int> seen(g.num_edges(), 0);
        std::size_t owned_total = 0;
        for (const AtomPartition& part : parts.parts) {
            owned_total += part.owned_edges.size();
            for (std::int64_t e : part.owned_edges) seen[e]++;
        }
        if (owned_total != g.num_edges()) pass = false;
        for (int c : seen)
            if (c != 1) pass = false;
        audited_edges += g.num_edges();

        // line graph: every global line edge drawn in exactly one partition
        auto closure = build_two_hop_closure(parts, g);
        EdgeTables tables = build_edge_tables(g, closure, parts, 2.6, 0.0);
        PartitionedLineGraph lg = build_line_graph_partitions(tables, g, parts);
        std::vector<std::pair<std::int64_t, std::int64_t>> drawn;
        for (const LineGraphPartition& part : lg.parts)
            for (const auto& [le, lep] : part.line_edges)
                drawn.emplace_back(
                    lg.bonds.edge_of_bond[part.layout.node_array[le]],
                    lg.bonds.edge_of_bond[part.layout.node_array[lep]]);
        std::sort(drawn.begin(), drawn.end());
        if (std::adjacent_find(drawn.begin(), drawn.end()) != drawn.end())
            pass = false;
        if (drawn != serial_line_graph(g, 2.6, 0.0)) pass = false;
        audited_line += drawn.size();
    }
    std::ostringstream d;
    d << audited_edges << " atom edges and " << audited_line
      << " line edges each owned exactly once across 20 systems";
    report(2, "zero redundancy", pass ? 0 : 1, d.str());
}

// --- criterion 3: partition structure vs first principles -------------------

void criterion_partition_structure() {
    bool pass = true;
    for (std::uint64_t s = 0; s < 100 && pass; ++s) {
        AtomicSystem sys = random_gas(30 + static_cast<std::int64_t>(s) * 14, s);
        AtomGraph g = build_neighbor_list(sys, 3.2, 1);
        int p = 2 + static_cast<int>(s % 3);
        PartitionRule rule = choose_partition_rule(sys, p);
        PartitionedAtomGraph parts = build_atom_partitions(g, sys, rule, true);
        for (int i = 0; i < p && pass; ++i) {
            std::set<std::int64_t> owned;
            for (std::int64_t v = 0; v < g.num_nodes; ++v)
                if (parts.owner[v] == i) owned.insert(v);
            // owned edges: every edge whose dst the partition owns
            std::vector<std::int64_t> expect_edges;
            std::set<std::int64_t> border;
            for (std::size_t e = 0; e < g.num_edges(); ++e)
                if (owned.count(g.dst[e])) {
                    expect_edges.push_back(static_cast<std::int64_t>(e));
                    if (!owned.count(g.src[e])) border.insert(g.src[e]);
                }
            std::vector<std::int64_t> got_edges =
                parts.parts[i].owned_edges;
            std::sort(got_edges.begin(), got_edges.end());
            if (got_edges != expect_edges) pass = false;
            // expanded node set: owned plus border
            std::set<std::int64_t> expanded = owned;
            expanded.insert(border.begin(), border.end());
            const SpanLayout& l = parts.parts[i].layout;
            std::set<std::int64_t> got(l.node_array.begin(),
                                       l.node_array.end());
            if (got != expanded) pass = false;
            // border rows are exactly the FROM spans
            std::set<std::int64_t> from_nodes;
            for (std::int64_t r = l.owned_end(); r < l.size(); ++r)
                from_nodes.insert(l.node_array[r]);
            if (from_nodes != border) pass = false;
        }
    }
    report(3, "partition structure vs first principles", pass ? 0 : 1,
           "100 systems, p in {2,3,4}: expanded sets, border sets and owned "
           "edge sets match");
}

// --- criterion 4: line-graph oracle equivalence -----------------------------

void criterion_line_graph() {
    bool pass = true;
    for (std::uint64_t s = 0; s < 50 && pass; ++s) {
        AtomicSystem sys = random_gas(40 + static_cast<std::int64_t>(s) * 10, s);
        AtomGraph g = build_neighbor_list(sys, 3.2, 1);
        auto brute = brute_force_line_graph(g, 2.4, 0.0);
        for (int p : {1, 2, 3, 4}) {
            PartitionedAtomGraph parts = build_atom_partitions(
                g, sys, choose_partition_rule(sys, p), true);
            auto closure = build_two_hop_closure(parts, g);
            EdgeTables tables =
                build_edge_tables(g, closure, parts, 2.4, 0.0);
            PartitionedLineGraph lg =
                build_line_graph_partitions(tables, g, parts);
            std::vector<std::pair<std::int64_t, std::int64_t>> got;
            for (const LineGraphPartition& part : lg.parts)
                for (const auto& [le, lep] : part.line_edges)
                    got.emplace_back(
                        lg.bonds.edge_of_bond[part.layout.node_array[le]],
                        lg.bonds.edge_of_bond[part.layout.node_array[lep]]);
            std::sort(got.begin(), got.end());
            if (got != brute) pass = false;
        }
    }
    report(4, "line-graph oracle equivalence", pass ? 0 : 1,
           "50 systems, p in {1,2,3,4}: distributed union equals brute-force "
           "triple enumeration");
}

// --- criterion 5: neighbor-list oracle equivalence --------------------------

void criterion_neighbor_list() {
    bool pass = true;
    std::size_t checked = 0;
    for (std::uint64_t s = 0; s < 100 && pass; ++s) {
        AtomicSystem sys;
        double cutoff;
        if (s % 10 == 0) {
            // tiny cell: every atom sees its own periodic images
            sys = random_system(1 + static_cast<std::int64_t>(s % 3),
                                Vec3{2.1, 2.4, 2.2}, s);
            cutoff = 2.6;
        } else {
            sys = random_gas(10 + static_cast<std::int64_t>(s) * 9, s);
            cutoff = 2.4 + 0.31 * (s % 6);
        }
        AtomGraph cell = build_neighbor_list(sys, cutoff, 1 + s % 3);
        AtomGraph oracle = brute_force_neighbor_list(sys, cutoff);
        if (edge_multiset(cell) != edge_multiset(oracle)) pass = false;
        checked += cell.num_edges();
    }
    std::ostringstream d;
    d << "100 systems (incl. self-image cells), " << checked
      << " edges match the O(N^2) oracle";
    report(5, "neighbor-list oracle equivalence", pass ? 0 : 1, d.str());
}

// --- criterion 6: force/stress vs finite differences ------------------------

void criterion_finite_differences() {
    double worst_f = 0.0, worst_s = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        double r3 = s % 2 ? 2.4 : 0.0;
        ToyPotentialParams params =
            ToyPotentialParams::init(s + 1, 16, 8, 2, 3.6, r3);
        AtomicSystem sys = random_gas(20 + static_cast<std::int64_t>(s) * 6, s);
        PotentialOutput out = forward_serial(sys, params);
        std::vector<Vec3> fd = finite_difference_forces(sys, params, 1e-4);
        for (std::size_t i = 0; i < sys.size(); ++i)
            for (int k = 0; k < 3; ++k)
                worst_f =
                    std::max(worst_f, std::abs(out.forces[i][k] - fd[i][k]));
        Mat3 fs = finite_difference_stress(sys, params, 1e-5);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                worst_s =
                    std::max(worst_s, std::abs(out.stress[a][b] - fs[a][b]));
    }
    bool pass = worst_f <= 1e-6 && worst_s <= 1e-6;
    std::ostringstream d;
    d << "10 systems each: max force error " << fmt(worst_f)
      << " eV/A, max stress error " << fmt(worst_s) << " eV/A^3";
    report(6, "forces and stress vs finite differences", pass ? 0 : 1, d.str());
}

// --- criterion 7: scaling shapes --------------------------------------------

void criterion_scaling() {
    int cores = physical_cores();
    if (cores < 8) {
        std::ostringstream d;
        d << "requires >= 8 physical cores, found " << cores;
        report(7, "scaling shapes", 2, d.str());
        return;
    }
    ToyPotentialParams params = ToyPotentialParams::init(1, 16, 8, 2, 4.0);
    AtomicSystem big = quartz_super(18, 0.03, 1);  // 52488 atoms
    auto eval_time = [&](const AtomicSystem& sys, int p) {
        Distributed dist = Distributed::create_distributed(
            sys, params.r_atom, std::nullopt, p, p, true);
        double best = 1e300;
        for (int rep = 0; rep < 3; ++rep)
            best = std::min(best, wall_seconds([&] {
                                forward_distributed(dist, params);
                            }));
        return best;
    };
    double t1 = eval_time(big, 1);
    double t2 = eval_time(big, 2);
    double t4 = eval_time(big, 4);
    bool strong = t1 > t2 && t2 > t4;

    bool weak = true;
    double base_per_atom = 0.0;
    for (int p : {1, 2, 4}) {
        AtomicSystem sys = quartz_super(
            static_cast<int>(std::lround(18.0 * std::cbrt(p))), 0.03, 2);
        double per_atom = eval_time(sys, p) / static_cast<double>(sys.size());
        if (p == 1)
            base_per_atom = per_atom;
        else if (per_atom > 2.0 * base_per_atom)
            weak = false;
    }
    std::ostringstream d;
    d << "strong t(p)=" << fmt(t1) << "/" << fmt(t2) << "/" << fmt(t4)
      << " s; weak within 2x of flat: " << (weak ? "yes" : "no");
    report(7, "scaling shapes", strong && weak ? 0 : 1, d.str());
}

// --- criterion 8: MD sanity -------------------------------------------------

void criterion_md() {
    AtomicSystem sys = quartz_super(2, 0.05, 8);
    // default model parameterization shipped by the CLI
    ToyPotentialParams params = ToyPotentialParams::init(12345);
    MDOptions opts;
    opts.dt = 1.0;
    opts.steps = 200;
    opts.init_temperature = 0.0;
    MDResult res = run_md(sys, params, opts);
    double e0 = res.records[0].total;
    double drift = 0.0;
    for (const MDStepRecord& r : res.records)
        drift = std::max(drift, std::abs(r.total - e0));
    drift /= static_cast<double>(sys.size());

    MDOptions a = opts;
    a.steps = 50;
    a.seed = 4;
    a.init_temperature = 200.0;
    MDOptions b = a;
    b.partitions = 2;
    b.allow_narrow = true;
    MDResult ra = run_md(sys, params, a);
    MDResult rb = run_md(sys, params, b);
    double dx = 0.0;
    for (std::size_t i = 0; i < sys.size(); ++i)
        for (int k = 0; k < 3; ++k)
            dx = std::max(dx, std::abs(ra.state.system.positions[i][k] -
                                       rb.state.system.positions[i][k]));
    bool pass = drift <= 1e-4 && dx <= 1e-8;
    std::ostringstream d;
    d << "200-step NVE drift " << fmt(drift)
      << " eV/atom; serial vs p=2 max coordinate diff " << fmt(dx) << " A";
    report(8, "MD sanity", pass ? 0 : 1, d.str());
}

// --- criterion 9: timing breakdown ------------------------------------------

void criterion_timing() {
    AtomicSystem sys = quartz_super(4, 0.04, 9);
    ToyPotentialParams params = ToyPotentialParams::init(9, 16, 8, 2, 4.0, 2.4);
    MDOptions opts;
    opts.dt = 1.0;
    opts.partitions = 2;
    opts.allow_narrow = true;
    MDState state = init_md_state(sys, opts);
    PotentialOutput out = forward_serial(state.system, params);
    state.forces = out.forces;
    state.potential_energy = out.energy;
    // warm up caches, then time one step
    StepTiming warm;
    velocity_verlet_step(state, params, opts, &warm);
    StepTiming t;
    double wall =
        wall_seconds([&] { velocity_verlet_step(state, params, opts, &t); });
    const auto& names = StepTiming::category_names();
    bool named = names.size() == 4 && names[0] == "Graph Creation" &&
                 names[1] == "Feature Calculation" &&
                 names[2] == "Forward Pass" && names[3] == "Backward Pass";
    bool pass = named && t.total() >= 0.95 * wall;
    std::ostringstream d;
    d << "categories sum " << fmt(t.total()) << " s of " << fmt(wall)
      << " s step wall time (" << fmt(100.0 * t.total() / wall) << "%)";
    report(9, "timing breakdown", pass ? 0 : 1, d.str());
}

}  // namespace

int main() {
    criterion_exactness();
    criterion_zero_redundancy();
    criterion_partition_structure();
    criterion_line_graph();
    criterion_neighbor_list();
    criterion_finite_differences();
    criterion_scaling();
    criterion_md();
    criterion_timing();
    return g_failures;
}
