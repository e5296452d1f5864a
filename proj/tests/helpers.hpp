#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "graphmd/neighborlist.hpp"
#include "graphmd/system.hpp"

namespace graphmd::testing {

inline std::string fixture_path(const std::string& name) {
#ifdef GRAPHMD_FIXTURE_DIR
    return std::string(GRAPHMD_FIXTURE_DIR) + "/" + name;
#else
    return "fixtures/" + name;
#endif
}

/// Homogeneous random gas in a (possibly anisotropic) periodic box.
inline AtomicSystem random_system(std::int64_t n, Vec3 box,
                                  std::uint64_t seed,
                                  std::vector<int> species = {14, 8}) {
    AtomicSystem sys;
    Rng rng(seed);
    sys.lattice = Mat3::identity();
    for (int k = 0; k < 3; ++k) sys.lattice[k] *= box[k];
    for (std::int64_t i = 0; i < n; ++i) {
        sys.positions.push_back(Vec3{rng.uniform(0.0, box.x),
                                     rng.uniform(0.0, box.y),
                                     rng.uniform(0.0, box.z)});
        sys.species.push_back(species[i % species.size()]);
    }
    return sys;
}

/// Random box with slightly sheared lattice for less symmetric cases.
inline AtomicSystem random_triclinic(std::int64_t n, double box,
                                     std::uint64_t seed) {
    AtomicSystem sys = random_system(n, Vec3{box, box, box}, seed);
    sys.lattice[1][0] += 0.12 * box;
    sys.lattice[2][0] -= 0.07 * box;
    sys.lattice[2][1] += 0.09 * box;
    return sys;
}

/// Four-atom chain A-B-C-D, 1 A spacing along x in a 12 x 8 x 8 A box. With
/// cutoff 1.5 A only consecutive atoms bond; with p=2 the quantile wall falls
/// between B and C.
inline AtomicSystem chain4() {
    AtomicSystem sys;
    sys.lattice = Mat3::identity();
    sys.lattice[0] *= 12.0;
    sys.lattice[1] *= 8.0;
    sys.lattice[2] *= 8.0;
    for (int i = 0; i < 4; ++i) {
        sys.positions.push_back(Vec3{4.5 + i, 4.0, 4.0});
        sys.species.push_back(6);
    }
    return sys;
}

using EdgeKey = std::tuple<std::int64_t, std::int64_t, int, int, int>;

inline std::vector<EdgeKey> edge_multiset(const AtomGraph& g) {
    std::vector<EdgeKey> keys;
    for (std::size_t e = 0; e < g.num_edges(); ++e)
        keys.emplace_back(g.src[e], g.dst[e], g.image_offset[e][0],
                          g.image_offset[e][1], g.image_offset[e][2]);
    std::sort(keys.begin(), keys.end());
    return keys;
}

}  // namespace graphmd::testing
