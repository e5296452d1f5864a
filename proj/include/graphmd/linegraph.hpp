#pragma once

#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "graphmd/neighborlist.hpp"
#include "graphmd/partitioner.hpp"

namespace graphmd {

/// Global bond set: atom-graph edges with distance <= r + tau. Bond ids are
/// indices into edge_of_bond.
struct BondSet {
    std::vector<std::int64_t> edge_of_bond;  // bond id -> global edge id
    std::vector<std::int64_t> bond_of_edge;  // edge id -> bond id or -1
    std::vector<std::vector<std::int64_t>> by_src;  // atom -> bond ids
    std::vector<std::vector<std::int64_t>> by_dst;
    double r = 0.0;
    double tau = 0.0;

    std::size_t size() const { return edge_of_bond.size(); }
};

BondSet collect_bonds(const AtomGraph& graph, double r, double tau);

/// Per-partition edge tables T_i (node id -> bond ids whose source is that
/// node, both endpoints inside the partition's 2-hop closure) plus the
/// bond-level PURE/TO/FROM buckets.
struct EdgeTables {
    BondSet bonds;
    std::vector<std::unordered_map<std::int64_t, std::vector<std::int64_t>>>
        per_partition;
    std::vector<int> bond_owner;  // owner of dst atom
    Buckets bond_buckets;
};

struct LineGraphPartition {
    SpanLayout layout;  // over global bond ids
    // (local bond e, local bond e') with dst(e) = src(e'), sorted by
    // (global e', global e) so per-bond reductions have a fixed order.
    std::vector<std::pair<std::int64_t, std::int64_t>> line_edges;
};

struct PartitionedLineGraph {
    BondSet bonds;
    std::vector<int> bond_owner;
    Buckets bond_buckets;
    std::vector<LineGraphPartition> parts;
    int p = 1;

    void dump_csv(const std::string& path) const;
};

/// Node set of each partition closed under two outgoing-edge hops from its
/// owned nodes; superset of the 1-hop expanded set.
std::vector<std::vector<std::int64_t>> build_two_hop_closure(
    const PartitionedAtomGraph& atom_parts, const AtomGraph& graph);

EdgeTables build_edge_tables(
    const AtomGraph& graph,
    const std::vector<std::vector<std::int64_t>>& closure,
    const PartitionedAtomGraph& atom_parts, double r, double tau);

PartitionedLineGraph build_line_graph_partitions(
    const EdgeTables& tables, const AtomGraph& graph,
    const PartitionedAtomGraph& atom_parts);

/// Global line-graph edge multiset as (edge id of e, edge id of e') pairs,
/// sorted. Single-partition traversal of the edge-table construction.
std::vector<std::pair<std::int64_t, std::int64_t>> serial_line_graph(
    const AtomGraph& graph, double r, double tau);

/// Independent oracle: direct enumeration of ordered bond pairs sharing the
/// traversal atom. Guarded to N <= 2000.
std::vector<std::pair<std::int64_t, std::int64_t>> brute_force_line_graph(
    const AtomGraph& graph, double r, double tau);

}  // namespace graphmd
