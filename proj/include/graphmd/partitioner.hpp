#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graphmd/neighborlist.hpp"
#include "graphmd/system.hpp"

namespace graphmd {

/// Vertical-wall partition of the cell along one lattice axis. Boundaries are
/// fractional coordinates, boundaries[0] = 0 and boundaries[p] = 1.
struct PartitionRule {
    int axis = 0;
    std::vector<double> boundaries;
    int p = 1;
};

enum class BoundaryMode {
    kQuantile,   // equal atom counts per slab
    kEqualWidth  // equal fractional widths
};

/// PURE/TO/FROM node-id buckets. to[i][j] lists nodes owned by partition i
/// whose features partition j needs; from[j][i] is the identical sequence.
struct Buckets {
    std::vector<std::vector<std::int64_t>> pure;
    std::vector<std::vector<std::vector<std::int64_t>>> to;
    std::vector<std::vector<std::vector<std::int64_t>>> from;
};

struct Span {
    std::int64_t begin = 0;
    std::int64_t end = 0;
    std::int64_t size() const { return end - begin; }
};

/// Concatenated [PURE | TO-blocks | FROM-blocks] id array with marker spans.
/// A node required by several foreign partitions appears once per TO block;
/// `duplicates` records (canonical row, duplicate row) pairs so feature blocks
/// can be kept consistent with one copy pass.
struct SpanLayout {
    std::vector<std::int64_t> node_array;  // global ids
    std::vector<std::int64_t> markers;     // length 2 + 2p
    std::unordered_map<std::int64_t, std::int64_t> global_to_local;  // canonical
    std::vector<std::pair<std::int64_t, std::int64_t>> duplicates;
    int p = 1;

    Span pure_span() const { return {markers[0], markers[1]}; }
    Span to_span(int j) const { return {markers[1 + j], markers[2 + j]}; }
    Span from_span(int j) const { return {markers[1 + p + j], markers[2 + p + j]}; }
    std::int64_t owned_end() const { return markers[1 + p]; }
    std::int64_t size() const { return static_cast<std::int64_t>(node_array.size()); }

    std::int64_t local_of(std::int64_t global) const {
        auto it = global_to_local.find(global);
        if (it == global_to_local.end()) return -1;
        return it->second;
    }
};

/// Builds the layout of one partition from its buckets.
SpanLayout build_span_layout(const Buckets& buckets, int partition);

struct AtomPartition {
    SpanLayout layout;
    std::vector<std::int64_t> owned_edges;  // global edge ids, ascending
    std::vector<std::int64_t> local_src;    // canonical local index per owned edge
    std::vector<std::int64_t> local_dst;
    std::vector<std::int64_t> border_edge_list;  // owned edges with foreign src
};

struct PartitionedAtomGraph {
    PartitionRule rule;
    Buckets buckets;
    std::vector<int> owner;  // slab id per node
    std::vector<AtomPartition> parts;
    int p = 1;
};

/// Axis = longest cell vector; boundaries from atom-count quantiles (default)
/// or equal widths.
PartitionRule choose_partition_rule(const AtomicSystem& system, int p,
                                    BoundaryMode mode = BoundaryMode::kQuantile);

int which_partition(const PartitionRule& rule, double frac);
int which_partition(std::int64_t node, const AtomicSystem& system,
                    const PartitionRule& rule);

/// Wrapped fractional coordinates of every atom along the rule's axis.
std::vector<double> fractional_along_axis(const AtomicSystem& system, int axis);

/// Errors when any slab is narrower than the graph cutoff unless allow_narrow
/// is set; narrow slabs are still handled correctly (requirement sets may span
/// non-adjacent slabs).
Buckets assign_to_partitions(const AtomGraph& graph, const AtomicSystem& system,
                             const PartitionRule& rule,
                             bool allow_narrow = false);

PartitionedAtomGraph build_atom_partitions(const AtomGraph& graph,
                                           const AtomicSystem& system,
                                           const PartitionRule& rule,
                                           bool allow_narrow = false);

/// Debug serialization of the plan (node arrays, markers, buckets) as JSON.
std::string partition_plan_to_json(const PartitionedAtomGraph& parts);

}  // namespace graphmd
