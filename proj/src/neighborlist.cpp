#include "graphmd/neighborlist.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace graphmd {

namespace {

struct RawEdge {
    std::int64_t src;
    Offset3 offset;
    double distance;
    Vec3 vec;

    bool operator<(const RawEdge& o) const {
        if (src != o.src) return src < o.src;
        return offset < o.offset;
    }
};

struct WrappedSystem {
    std::vector<Vec3> wrapped;      // Cartesian, inside the cell
    std::vector<Offset3> cell_of;   // floor of the raw fractional coords
    std::vector<Vec3> frac;         // wrapped fractional coords in [0,1)
};

WrappedSystem wrap_for_search(const AtomicSystem& system) {
    WrappedSystem w;
    FractionalCoords f = system.fractional();
    w.wrapped.reserve(system.size());
    w.cell_of.reserve(system.size());
    w.frac.reserve(system.size());
    for (const Vec3& fr : f.coords) {
        Offset3 cell;
        Vec3 fw;
        for (int k = 0; k < 3; ++k) {
            double fl = std::floor(fr[k]);
            cell[k] = static_cast<int>(fl);
            fw[k] = fr[k] - fl;
            if (fw[k] >= 1.0) {  // rounding at the upper boundary
                fw[k] = 0.0;
                cell[k] += 1;
            }
        }
        w.cell_of.push_back(cell);
        w.frac.push_back(fw);
        w.wrapped.push_back(Vec3{});
    }
    for (std::size_t i = 0; i < system.size(); ++i)
        w.wrapped[i] = system.lattice.rowvec_mul(w.frac[i]);
    return w;
}

AtomGraph assemble(const AtomicSystem& system, double cutoff,
                   std::vector<std::vector<RawEdge>>& per_atom) {
    AtomGraph g;
    g.cutoff = cutoff;
    g.num_nodes = static_cast<std::int64_t>(system.size());
    std::size_t total = 0;
    for (auto& v : per_atom) {
        std::sort(v.begin(), v.end());
        total += v.size();
    }
    g.src.reserve(total);
    g.dst.reserve(total);
    g.image_offset.reserve(total);
    g.distance.reserve(total);
    g.vector.reserve(total);
    for (std::size_t i = 0; i < per_atom.size(); ++i) {
        for (const RawEdge& e : per_atom[i]) {
            g.src.push_back(e.src);
            g.dst.push_back(static_cast<std::int64_t>(i));
            g.image_offset.push_back(e.offset);
            g.distance.push_back(e.distance);
            g.vector.push_back(e.vec);
        }
    }
    return g;
}

}  // namespace

std::pair<std::size_t, std::size_t> AtomGraph::edges_into(
    std::int64_t node) const {
    auto lo = std::lower_bound(dst.begin(), dst.end(), node);
    auto hi = std::upper_bound(lo, dst.end(), node);
    return {static_cast<std::size_t>(lo - dst.begin()),
            static_cast<std::size_t>(hi - dst.begin())};
}

void AtomGraph::dump_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    out.precision(17);
    out << "src,dst,ox,oy,oz,distance\n";
    for (std::size_t e = 0; e < num_edges(); ++e)
        out << src[e] << "," << dst[e] << "," << image_offset[e][0] << ","
            << image_offset[e][1] << "," << image_offset[e][2] << ","
            << distance[e] << "\n";
}

AtomGraph build_neighbor_list(const AtomicSystem& system, double cutoff,
                              int n_threads) {
    if (cutoff <= 0.0) throw Error("cutoff must be positive");
    if (system.size() == 0) throw Error("cannot build neighbor list for empty system");
    AtomicSystem periodic = ensure_periodic(system, cutoff);
    periodic.validate();

    WrappedSystem w = wrap_for_search(periodic);
    const Mat3& lattice = periodic.lattice;
    const std::int64_t n = static_cast<std::int64_t>(periodic.size());

    std::array<int, 3> bins;
    std::array<int, 3> stencil;
    for (int k = 0; k < 3; ++k) {
        double width = periodic.perpendicular_width(k);
        bins[k] = std::max(1, static_cast<int>(std::floor(width / cutoff)));
        double bin_width = width / bins[k];
        stencil[k] = static_cast<int>(std::floor(cutoff / bin_width)) + 1;
    }

    auto bin_of = [&](const Vec3& frac) -> std::array<int, 3> {
        std::array<int, 3> b;
        for (int k = 0; k < 3; ++k)
            b[k] = std::min(bins[k] - 1,
                            static_cast<int>(frac[k] * bins[k]));
        return b;
    };
    auto bin_index = [&](int bx, int by, int bz) {
        return (static_cast<std::size_t>(bx) * bins[1] + by) * bins[2] + bz;
    };

    std::vector<std::vector<std::int64_t>> bin_atoms(
        static_cast<std::size_t>(bins[0]) * bins[1] * bins[2]);
    for (std::int64_t i = 0; i < n; ++i) {
        auto b = bin_of(w.frac[i]);
        bin_atoms[bin_index(b[0], b[1], b[2])].push_back(i);
    }

    std::vector<std::vector<RawEdge>> per_atom(periodic.size());
    const double cutoff2 = cutoff * cutoff;

#ifdef _OPENMP
    if (n_threads > 0) omp_set_num_threads(n_threads);
#else
    (void)n_threads;
#endif
#pragma omp parallel for schedule(dynamic, 64)
    for (std::int64_t i = 0; i < n; ++i) {
        auto bi = bin_of(w.frac[i]);
        const Vec3 ri = w.wrapped[i];
        auto& edges = per_atom[i];
        for (int dx = -stencil[0]; dx <= stencil[0]; ++dx)
            for (int dy = -stencil[1]; dy <= stencil[1]; ++dy)
                for (int dz = -stencil[2]; dz <= stencil[2]; ++dz) {
                    std::array<int, 3> c = {bi[0] + dx, bi[1] + dy, bi[2] + dz};
                    Offset3 image;
                    std::array<int, 3> cw;
                    for (int k = 0; k < 3; ++k) {
                        int q = c[k] >= 0 ? c[k] / bins[k]
                                          : -((-c[k] + bins[k] - 1) / bins[k]);
                        image[k] = q;
                        cw[k] = c[k] - q * bins[k];
                    }
                    Vec3 shift = lattice[0] * static_cast<double>(image[0]) +
                                 lattice[1] * static_cast<double>(image[1]) +
                                 lattice[2] * static_cast<double>(image[2]);
                    for (std::int64_t j :
                         bin_atoms[bin_index(cw[0], cw[1], cw[2])]) {
                        Vec3 v = w.wrapped[j] + shift - ri;
                        if (v.norm2() > cutoff2 * 1.000001) continue;
                        Offset3 off;
                        for (int k = 0; k < 3; ++k)
                            off[k] = image[k] - w.cell_of[j][k] + w.cell_of[i][k];
                        // The stored vector is expressed through the raw
                        // positions so v = r_src - r_dst + o*L holds bit-exactly;
                        // the acceptance test uses the same expression.
                        Vec3 raw_shift = lattice[0] * static_cast<double>(off[0]) +
                                         lattice[1] * static_cast<double>(off[1]) +
                                         lattice[2] * static_cast<double>(off[2]);
                        Vec3 vr = periodic.positions[j] - periodic.positions[i] +
                                  raw_shift;
                        double d2 = vr.norm2();
                        if (d2 > cutoff2 || d2 == 0.0) continue;
                        edges.push_back({j, off, vr.norm(), vr});
                    }
                }
    }

    return assemble(periodic, cutoff, per_atom);
}

AtomGraph brute_force_neighbor_list(const AtomicSystem& system, double cutoff) {
    if (cutoff <= 0.0) throw Error("cutoff must be positive");
    if (system.size() == 0) throw Error("cannot build neighbor list for empty system");
    if (system.size() > 5000) throw Error("brute force guard: N > 5000");
    AtomicSystem periodic = ensure_periodic(system, cutoff);
    periodic.validate();

    WrappedSystem w = wrap_for_search(periodic);
    const Mat3& lattice = periodic.lattice;
    const std::int64_t n = static_cast<std::int64_t>(periodic.size());
    const double cutoff2 = cutoff * cutoff;

    std::array<int, 3> span;
    for (int k = 0; k < 3; ++k)
        span[k] = static_cast<int>(
                      std::ceil(cutoff / periodic.perpendicular_width(k))) +
                  1;

    std::vector<std::vector<RawEdge>> per_atom(periodic.size());
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            for (int nx = -span[0]; nx <= span[0]; ++nx)
                for (int ny = -span[1]; ny <= span[1]; ++ny)
                    for (int nz = -span[2]; nz <= span[2]; ++nz) {
                        Offset3 off = {nx - w.cell_of[j][0] + w.cell_of[i][0],
                                       ny - w.cell_of[j][1] + w.cell_of[i][1],
                                       nz - w.cell_of[j][2] + w.cell_of[i][2]};
                        Vec3 raw_shift =
                            lattice[0] * static_cast<double>(off[0]) +
                            lattice[1] * static_cast<double>(off[1]) +
                            lattice[2] * static_cast<double>(off[2]);
                        Vec3 vr = periodic.positions[j] -
                                  periodic.positions[i] + raw_shift;
                        double d2 = vr.norm2();
                        if (d2 > cutoff2 || d2 == 0.0) continue;
                        per_atom[i].push_back({j, off, vr.norm(), vr});
                    }
        }
    }
    return assemble(periodic, cutoff, per_atom);
}

}  // namespace graphmd
