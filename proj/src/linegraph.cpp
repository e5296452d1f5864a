#include "graphmd/linegraph.hpp"

#include <algorithm>
#include <fstream>

namespace graphmd {

namespace {

void check_ranges(const AtomGraph& graph, double r, double tau) {
    if (r > graph.cutoff)
        throw Error("three-body range cannot exceed the atom graph cutoff");
    if (tau < 0.0) throw Error("tolerance tau must be >= 0");
}

bool is_reverse_pair(const AtomGraph& g, std::int64_t e, std::int64_t ep) {
    return g.dst[ep] == g.src[e] && g.src[ep] == g.dst[e] &&
           g.image_offset[ep][0] == -g.image_offset[e][0] &&
           g.image_offset[ep][1] == -g.image_offset[e][1] &&
           g.image_offset[ep][2] == -g.image_offset[e][2];
}

}  // namespace

BondSet collect_bonds(const AtomGraph& graph, double r, double tau) {
    check_ranges(graph, r, tau);
    BondSet b;
    b.r = r;
    b.tau = tau;
    const double bound = r + tau;
    b.bond_of_edge.assign(graph.num_edges(), -1);
    b.by_src.resize(graph.num_nodes);
    b.by_dst.resize(graph.num_nodes);
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        if (graph.distance[e] > bound) continue;
        std::int64_t id = static_cast<std::int64_t>(b.edge_of_bond.size());
        b.bond_of_edge[e] = id;
        b.edge_of_bond.push_back(static_cast<std::int64_t>(e));
        b.by_src[graph.src[e]].push_back(id);
        b.by_dst[graph.dst[e]].push_back(id);
    }
    return b;
}

std::vector<std::vector<std::int64_t>> build_two_hop_closure(
    const PartitionedAtomGraph& atom_parts, const AtomGraph& graph) {
    const int p = atom_parts.p;
    const std::int64_t n = graph.num_nodes;
    std::vector<std::vector<std::int64_t>> closure(p);

    for (int i = 0; i < p; ++i) {
        std::vector<char> in_set(n, 0);
        for (std::int64_t v = 0; v < n; ++v)
            if (atom_parts.owner[v] == i) in_set[v] = 1;
        for (int hop = 0; hop < 2; ++hop) {
            std::vector<char> next = in_set;
            for (std::size_t e = 0; e < graph.num_edges(); ++e)
                if (in_set[graph.src[e]]) next[graph.dst[e]] = 1;
            in_set.swap(next);
        }
        for (std::int64_t v = 0; v < n; ++v)
            if (in_set[v]) closure[i].push_back(v);
    }
    return closure;
}

EdgeTables build_edge_tables(
    const AtomGraph& graph,
    const std::vector<std::vector<std::int64_t>>& closure,
    const PartitionedAtomGraph& atom_parts, double r, double tau) {
    EdgeTables t;
    t.bonds = collect_bonds(graph, r, tau);
    const int p = atom_parts.p;
    const std::int64_t nb = static_cast<std::int64_t>(t.bonds.size());

    t.bond_owner.resize(nb);
    for (std::int64_t b = 0; b < nb; ++b)
        t.bond_owner[b] = atom_parts.owner[graph.dst[t.bonds.edge_of_bond[b]]];

    // Edge tables restricted to the 2-hop closure of each partition. Bond ids
    // ascend within each list, which is (dst, offset) order at fixed src.
    t.per_partition.resize(p);
    for (int i = 0; i < p; ++i) {
        std::vector<char> in_closure(graph.num_nodes, 0);
        for (std::int64_t v : closure[i]) in_closure[v] = 1;
        for (std::int64_t b = 0; b < nb; ++b) {
            std::int64_t e = t.bonds.edge_of_bond[b];
            if (in_closure[graph.src[e]] && in_closure[graph.dst[e]])
                t.per_partition[i][graph.src[e]].push_back(b);
        }
    }

    // Bond requirement sets: bond e is needed by the owner of every bond e'
    // it feeds in the line graph.
    std::vector<unsigned long long> required(nb, 0ull);
    for (std::int64_t ep = 0; ep < nb; ++ep) {
        std::int64_t edge_ep = t.bonds.edge_of_bond[ep];
        int own_ep = t.bond_owner[ep];
        for (std::int64_t e : t.bonds.by_dst[graph.src[edge_ep]]) {
            if (is_reverse_pair(graph, t.bonds.edge_of_bond[e], edge_ep))
                continue;
            if (t.bond_owner[e] != own_ep)
                required[e] |= 1ull << own_ep;
        }
    }

    Buckets& bb = t.bond_buckets;
    bb.pure.resize(p);
    bb.to.assign(p, std::vector<std::vector<std::int64_t>>(p));
    bb.from.assign(p, std::vector<std::vector<std::int64_t>>(p));
    for (std::int64_t b = 0; b < nb; ++b) {
        if (required[b] == 0ull) {
            bb.pure[t.bond_owner[b]].push_back(b);
            continue;
        }
        for (int j = 0; j < p; ++j)
            if (required[b] & (1ull << j)) bb.to[t.bond_owner[b]][j].push_back(b);
    }
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) bb.from[j][i] = bb.to[i][j];
    return t;
}

PartitionedLineGraph build_line_graph_partitions(
    const EdgeTables& tables, const AtomGraph& graph,
    const PartitionedAtomGraph& atom_parts) {
    PartitionedLineGraph out;
    out.bonds = tables.bonds;
    out.bond_owner = tables.bond_owner;
    out.bond_buckets = tables.bond_buckets;
    out.p = atom_parts.p;
    out.parts.resize(out.p);

    for (int i = 0; i < out.p; ++i) {
        LineGraphPartition& part = out.parts[i];
        part.layout = build_span_layout(tables.bond_buckets, i);

        const auto& table = tables.per_partition[i];
        std::vector<std::int64_t> keys;
        keys.reserve(table.size());
        for (const auto& [node, bonds] : table) keys.push_back(node);
        std::sort(keys.begin(), keys.end());

        for (std::int64_t v : keys) {
            for (std::int64_t e : table.at(v)) {
                std::int64_t edge_e = tables.bonds.edge_of_bond[e];
                auto it = table.find(graph.dst[edge_e]);
                if (it == table.end()) continue;
                for (std::int64_t ep : it->second) {
                    if (tables.bond_owner[ep] != i) continue;  // needs_in_line
                    std::int64_t edge_ep = tables.bonds.edge_of_bond[ep];
                    if (is_reverse_pair(graph, edge_e, edge_ep)) continue;
                    std::int64_t le = part.layout.local_of(e);
                    std::int64_t lep = part.layout.local_of(ep);
                    if (le < 0 || lep < 0)
                        throw Error("dangling bond reference in line graph");
                    part.line_edges.emplace_back(le, lep);
                }
            }
        }
        std::sort(part.line_edges.begin(), part.line_edges.end(),
                  [&](const auto& a, const auto& b) {
                      std::int64_t ga = part.layout.node_array[a.second];
                      std::int64_t gb = part.layout.node_array[b.second];
                      if (ga != gb) return ga < gb;
                      return part.layout.node_array[a.first] <
                             part.layout.node_array[b.first];
                  });
    }
    return out;
}

void PartitionedLineGraph::dump_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    out << "partition,bond_e_global,bond_ep_global\n";
    for (int i = 0; i < p; ++i)
        for (const auto& [le, lep] : parts[i].line_edges)
            out << i << "," << parts[i].layout.node_array[le] << ","
                << parts[i].layout.node_array[lep] << "\n";
}

std::vector<std::pair<std::int64_t, std::int64_t>> serial_line_graph(
    const AtomGraph& graph, double r, double tau) {
    BondSet bonds = collect_bonds(graph, r, tau);
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    // p = 1 traversal: one table over all nodes (by_src is exactly that)
    for (std::int64_t v = 0; v < graph.num_nodes; ++v) {
        for (std::int64_t e : bonds.by_src[v]) {
            std::int64_t edge_e = bonds.edge_of_bond[e];
            for (std::int64_t ep : bonds.by_src[graph.dst[edge_e]]) {
                std::int64_t edge_ep = bonds.edge_of_bond[ep];
                if (is_reverse_pair(graph, edge_e, edge_ep)) continue;
                out.emplace_back(edge_e, edge_ep);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<std::pair<std::int64_t, std::int64_t>> brute_force_line_graph(
    const AtomGraph& graph, double r, double tau) {
    if (graph.num_nodes > 2000) throw Error("brute force guard: N > 2000");
    BondSet bonds = collect_bonds(graph, r, tau);
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t u = 0; u < graph.num_nodes; ++u) {
        for (std::int64_t e : bonds.by_dst[u]) {
            for (std::int64_t ep : bonds.by_src[u]) {
                std::int64_t edge_e = bonds.edge_of_bond[e];
                std::int64_t edge_ep = bonds.edge_of_bond[ep];
                if (is_reverse_pair(graph, edge_e, edge_ep)) continue;
                out.emplace_back(edge_e, edge_ep);
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace graphmd
