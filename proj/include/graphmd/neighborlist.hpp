#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "graphmd/system.hpp"

namespace graphmd {

using Offset3 = std::array<int, 3>;

/// Directed atom graph under periodic boundary conditions. Edge e connects
/// src[e] (at periodic image image_offset[e] relative to dst[e]) to dst[e];
/// vector[e] = r_src - r_dst + offset * lattice. Edges are stored in
/// canonical order: sorted by (dst, src, image_offset).
struct AtomGraph {
    std::vector<std::int64_t> src;
    std::vector<std::int64_t> dst;
    std::vector<Offset3> image_offset;
    std::vector<double> distance;
    std::vector<Vec3> vector;
    double cutoff = 0.0;
    std::int64_t num_nodes = 0;

    std::size_t num_edges() const { return src.size(); }

    /// Range [begin, end) of edge indices with the given destination node.
    /// Valid because edges are dst-major sorted.
    std::pair<std::size_t, std::size_t> edges_into(std::int64_t node) const;

    void dump_csv(const std::string& path) const;
};

/// Cell-list construction, parallelized over atoms. The output is in
/// canonical order and independent of n_threads.
AtomGraph build_neighbor_list(const AtomicSystem& system, double cutoff,
                              int n_threads = 0);

/// Exhaustive O(N^2 * images) reference used as test oracle. Guarded to
/// N <= 5000.
AtomGraph brute_force_neighbor_list(const AtomicSystem& system, double cutoff);

}  // namespace graphmd
