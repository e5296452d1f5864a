#include "graphmd/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace graphmd {

namespace {

constexpr int kMaxPartitions = 64;

double wrapped_frac(double f) {
    double w = f - std::floor(f);
    if (w >= 1.0) w = 0.0;
    return w;
}

void check_slab_widths(const AtomicSystem& system, const PartitionRule& rule,
                       double cutoff, bool allow_narrow) {
    if (rule.p == 1 || allow_narrow) return;
    double perp = system.perpendicular_width(rule.axis);
    for (int i = 0; i < rule.p; ++i) {
        double width = (rule.boundaries[i + 1] - rule.boundaries[i]) * perp;
        if (width < cutoff)
            throw Error("partition-width error: slab " + std::to_string(i) +
                        " is " + std::to_string(width) +
                        " A wide, below the cutoff " + std::to_string(cutoff) +
                        " A");
    }
}

}  // namespace

std::vector<double> fractional_along_axis(const AtomicSystem& system,
                                          int axis) {
    FractionalCoords f = system.fractional();
    std::vector<double> out;
    out.reserve(f.coords.size());
    for (const Vec3& c : f.coords) out.push_back(wrapped_frac(c[axis]));
    return out;
}

PartitionRule choose_partition_rule(const AtomicSystem& system, int p,
                                    BoundaryMode mode) {
    if (p < 1) throw Error("partition count must be >= 1");
    if (p > kMaxPartitions) throw Error("partition count limited to 64");
    if (static_cast<std::size_t>(p) > system.size())
        throw Error("more partitions than atoms");
    system.validate();
    if (std::abs(system.lattice.det()) < 1e-10) throw Error("degenerate cell");

    PartitionRule rule;
    rule.p = p;
    double best = -1.0;
    for (int k = 0; k < 3; ++k) {
        double len = system.lattice[k].norm();
        if (len > best) {
            best = len;
            rule.axis = k;
        }
    }

    rule.boundaries.resize(p + 1);
    rule.boundaries.front() = 0.0;
    rule.boundaries.back() = 1.0;
    if (p == 1) return rule;

    if (mode == BoundaryMode::kEqualWidth) {
        for (int k = 1; k < p; ++k)
            rule.boundaries[k] = static_cast<double>(k) / p;
        return rule;
    }

    std::vector<double> fracs = fractional_along_axis(system, rule.axis);
    std::sort(fracs.begin(), fracs.end());
    const std::int64_t n = static_cast<std::int64_t>(fracs.size());
    for (int k = 1; k < p; ++k) {
        std::int64_t c = n * k / p;
        double b = (c >= 1 && c < n) ? 0.5 * (fracs[c - 1] + fracs[c])
                                     : static_cast<double>(k) / p;
        rule.boundaries[k] = b;
    }
    for (int k = 1; k <= p; ++k)
        if (rule.boundaries[k] <= rule.boundaries[k - 1])
            throw Error("cannot place distinct partition boundaries; "
                        "coordinates along the axis are degenerate");
    return rule;
}

int which_partition(const PartitionRule& rule, double frac) {
    if (frac >= 1.0) return rule.p - 1;
    // half-open slabs [b_i, b_{i+1}); an exact interior boundary value goes
    // to the right-hand slab
    auto it = std::upper_bound(rule.boundaries.begin() + 1,
                               rule.boundaries.end() - 1, frac);
    return static_cast<int>(it - rule.boundaries.begin()) - 1;
}

int which_partition(std::int64_t node, const AtomicSystem& system,
                    const PartitionRule& rule) {
    if (node < 0 || static_cast<std::size_t>(node) >= system.size())
        throw Error("node id out of range");
    FractionalCoords f = system.fractional();
    return which_partition(rule, wrapped_frac(f.coords[node][rule.axis]));
}

Buckets assign_to_partitions(const AtomGraph& graph, const AtomicSystem& system,
                             const PartitionRule& rule, bool allow_narrow) {
    check_slab_widths(system, rule, graph.cutoff, allow_narrow);
    const int p = rule.p;
    const std::int64_t n = graph.num_nodes;

    std::vector<double> fracs = fractional_along_axis(system, rule.axis);
    std::vector<int> owner(n);
    for (std::int64_t i = 0; i < n; ++i)
        owner[i] = which_partition(rule, fracs[i]);

    // Requirement set per node: bitmask of foreign partitions holding a
    // destination of one of its outgoing edges. A single-slot table would
    // lose transfers once a node borders more than one foreign slab.
    std::vector<unsigned long long> required(n, 0ull);
    const std::int64_t ne = static_cast<std::int64_t>(graph.num_edges());
#pragma omp parallel for schedule(static)
    for (std::int64_t e = 0; e < ne; ++e) {
        int ps = owner[graph.src[e]];
        int pd = owner[graph.dst[e]];
        if (ps == pd) continue;
        unsigned long long bit = 1ull << pd;
#pragma omp atomic
        required[graph.src[e]] |= bit;
    }

    Buckets b;
    b.pure.resize(p);
    b.to.assign(p, std::vector<std::vector<std::int64_t>>(p));
    b.from.assign(p, std::vector<std::vector<std::int64_t>>(p));
    for (std::int64_t i = 0; i < n; ++i) {
        if (required[i] == 0ull) {
            b.pure[owner[i]].push_back(i);
            continue;
        }
        for (int j = 0; j < p; ++j)
            if (required[i] & (1ull << j)) b.to[owner[i]][j].push_back(i);
    }
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) b.from[j][i] = b.to[i][j];
    return b;
}

SpanLayout build_span_layout(const Buckets& buckets, int partition) {
    const int p = static_cast<int>(buckets.pure.size());
    SpanLayout layout;
    layout.p = p;
    layout.markers.assign(2 + 2 * p, 0);

    auto append = [&](const std::vector<std::int64_t>& ids) {
        for (std::int64_t g : ids) {
            std::int64_t row = static_cast<std::int64_t>(layout.node_array.size());
            layout.node_array.push_back(g);
            auto [it, inserted] = layout.global_to_local.emplace(g, row);
            if (!inserted) layout.duplicates.emplace_back(it->second, row);
        }
    };

    append(buckets.pure[partition]);
    layout.markers[1] = static_cast<std::int64_t>(layout.node_array.size());
    for (int j = 0; j < p; ++j) {
        append(buckets.to[partition][j]);
        layout.markers[2 + j] = static_cast<std::int64_t>(layout.node_array.size());
    }
    for (int j = 0; j < p; ++j) {
        append(buckets.from[partition][j]);
        layout.markers[2 + p + j] =
            static_cast<std::int64_t>(layout.node_array.size());
    }
    return layout;
}

PartitionedAtomGraph build_atom_partitions(const AtomGraph& graph,
                                           const AtomicSystem& system,
                                           const PartitionRule& rule,
                                           bool allow_narrow) {
    PartitionedAtomGraph out;
    out.rule = rule;
    out.p = rule.p;
    out.buckets = assign_to_partitions(graph, system, rule, allow_narrow);

    std::vector<double> fracs = fractional_along_axis(system, rule.axis);
    out.owner.resize(graph.num_nodes);
    for (std::int64_t i = 0; i < graph.num_nodes; ++i)
        out.owner[i] = which_partition(rule, fracs[i]);

    out.parts.resize(rule.p);
    for (int i = 0; i < rule.p; ++i)
        out.parts[i].layout = build_span_layout(out.buckets, i);

    // Every edge is owned by the partition of its destination node; edges from
    // border nodes resolve through the FROM region of the layout.
    const std::int64_t ne = static_cast<std::int64_t>(graph.num_edges());
    for (std::int64_t e = 0; e < ne; ++e) {
        int pi = out.owner[graph.dst[e]];
        AtomPartition& part = out.parts[pi];
        std::int64_t ls = part.layout.local_of(graph.src[e]);
        std::int64_t ld = part.layout.local_of(graph.dst[e]);
        if (ls < 0 || ld < 0)
            throw Error("internal: edge endpoint missing from partition layout");
        if (out.owner[graph.src[e]] != pi)
            part.border_edge_list.push_back(
                static_cast<std::int64_t>(part.owned_edges.size()));
        part.owned_edges.push_back(e);
        part.local_src.push_back(ls);
        part.local_dst.push_back(ld);
    }
    return out;
}

std::string partition_plan_to_json(const PartitionedAtomGraph& parts) {
    nlohmann::json j;
    j["p"] = parts.p;
    j["axis"] = parts.rule.axis;
    j["boundaries"] = parts.rule.boundaries;
    j["pure"] = parts.buckets.pure;
    j["to"] = parts.buckets.to;
    j["from"] = parts.buckets.from;
    for (const AtomPartition& part : parts.parts) {
        nlohmann::json pj;
        pj["node_array"] = part.layout.node_array;
        pj["markers"] = part.layout.markers;
        pj["owned_edge_count"] = part.owned_edges.size();
        j["partitions"].push_back(std::move(pj));
    }
    return j.dump(2);
}

}  // namespace graphmd
