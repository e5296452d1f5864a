// Compares the OpenMP kernels against their serial reference implementations:
// cell-list neighbor search vs the O(N^2) oracle, and the partitioned
// potential evaluation vs the single-graph serial path.
#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>
#include <optional>

#include "graphmd/md.hpp"
#include "graphmd/potential.hpp"

using namespace graphmd;
using clock_t_ = std::chrono::steady_clock;

namespace {

double seconds_since(clock_t_::time_point t0) {
    return std::chrono::duration<double>(clock_t_::now() - t0).count();
}

AtomicSystem random_box(std::int64_t n, double box, std::uint64_t seed) {
    AtomicSystem sys;
    Rng rng(seed);
    sys.lattice = Mat3::identity();
    for (int k = 0; k < 3; ++k) sys.lattice[k] *= box;
    for (std::int64_t i = 0; i < n; ++i) {
        sys.positions.push_back(Vec3{rng.uniform(0.0, box),
                                     rng.uniform(0.0, box),
                                     rng.uniform(0.0, box)});
        sys.species.push_back(i % 2 == 0 ? 14 : 8);
    }
    return sys;
}

}  // namespace

int main(int argc, char** argv) {
    int reps = argc > 1 ? std::atoi(argv[1]) : 3;
    int threads = argc > 2 ? std::atoi(argv[2]) : 0;
    std::string fixture = argc > 3 ? argv[3] : "fixtures/quartz.xyz";
    std::cout.precision(4);

    {
        AtomicSystem sys = random_box(1500, 18.0, 99);
        double cutoff = 4.0;
        auto t0 = clock_t_::now();
        std::size_t edges = 0;
        for (int r = 0; r < reps; ++r)
            edges = build_neighbor_list(sys, cutoff, threads).num_edges();
        double cell = seconds_since(t0) / reps;
        t0 = clock_t_::now();
        for (int r = 0; r < reps; ++r)
            edges = brute_force_neighbor_list(sys, cutoff).num_edges();
        double brute = seconds_since(t0) / reps;
        std::cout << "neighbor list (N=1500, " << edges << " edges): cell-list "
                  << cell * 1e3 << " ms, O(N^2) reference " << brute * 1e3
                  << " ms, speedup " << brute / cell << "x\n";
    }

    {
        AtomicSystem base = load_xyz(fixture);
        AtomicSystem sys = make_supercell(base, {6, 6, 6});
        ToyPotentialParams params = ToyPotentialParams::init(7, 16, 8, 2, 4.0);
        auto t0 = clock_t_::now();
        double e_serial = 0.0;
        for (int r = 0; r < reps; ++r)
            e_serial = forward_serial(sys, params, threads).energy;
        double serial = seconds_since(t0) / reps;
        for (int p : {2, 4}) {
            t0 = clock_t_::now();
            double e_dist = 0.0;
            for (int r = 0; r < reps; ++r) {
                Distributed dist = Distributed::create_distributed(
                    sys, params.r_atom, std::nullopt, p, threads);
                e_dist = forward_distributed(dist, params).energy;
            }
            double dist_t = seconds_since(t0) / reps;
            std::cout << "potential (N=" << sys.size() << "): serial "
                      << serial * 1e3 << " ms, p=" << p << " " << dist_t * 1e3
                      << " ms, |dE|=" << std::abs(e_dist - e_serial) << "\n";
        }
    }
    return 0;
}
