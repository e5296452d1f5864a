#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "graphmd/linegraph.hpp"
#include "graphmd/neighborlist.hpp"
#include "graphmd/partitioner.hpp"
#include "graphmd/system.hpp"

namespace graphmd {

/// Per-partition dense feature blocks aligned to the partition's node (or
/// bond) array local order.
struct DistributedFeatures {
    std::vector<std::vector<double>> blocks;  // one per partition
    std::int64_t width = 0;

    double* row(int partition, std::int64_t local) {
        return blocks[partition].data() + local * width;
    }
    const double* row(int partition, std::int64_t local) const {
        return blocks[partition].data() + local * width;
    }
};

/// Timing categories of a simulation step.
struct StepTiming {
    double graph_creation = 0.0;
    double feature_calculation = 0.0;
    double forward_pass = 0.0;
    double backward_pass = 0.0;

    static const std::vector<std::string>& category_names();
    double total() const {
        return graph_creation + feature_calculation + forward_pass + backward_pass;
    }
    StepTiming& operator+=(const StepTiming& o);
};

void write_timing_csv(const std::string& path,
                      const std::vector<StepTiming>& rows);

/// Distributed execution handle: partitioned graphs plus transfer plans.
/// "Devices" are worker contexts within this process, one per partition.
class Distributed {
public:
    static Distributed create_distributed(const AtomicSystem& system,
                                          double atom_cutoff,
                                          std::optional<double> threebody_cutoff,
                                          int p, int n_threads,
                                          bool allow_narrow = false,
                                          double threebody_tau = 0.0);

    int num_partitions() const { return p_; }
    int num_threads() const { return n_threads_; }
    const AtomicSystem& system() const { return system_; }
    const AtomGraph& graph() const { return graph_; }
    const PartitionedAtomGraph& atom_parts() const { return atom_parts_; }
    bool has_line_graph() const { return line_parts_.has_value(); }
    const PartitionedLineGraph& line_parts() const { return *line_parts_; }

    /// Per-partition local edge endpoints (canonical local indices).
    const std::vector<std::int64_t>& src_nodes(int partition) const {
        return atom_parts_.parts[partition].local_src;
    }
    const std::vector<std::int64_t>& dst_nodes(int partition) const {
        return atom_parts_.parts[partition].local_dst;
    }

    DistributedFeatures distribute_node_features(
        const std::vector<double>& features, std::int64_t width) const;
    DistributedFeatures distribute_edge_features(
        const std::vector<double>& features, std::int64_t width) const;

    /// Copies every TO span of partition i into the matching FROM span of
    /// partition j. Pure rows are untouched.
    void atom_transfer(DistributedFeatures& features) const;
    void bond_transfer(DistributedFeatures& features) const;

    /// Transpose of atom_transfer: adds every FROM span back onto the owning
    /// partition's TO span, then folds duplicate rows onto their canonical
    /// row. Used for border gradients in backward passes. FROM spans are
    /// zeroed after the scatter.
    void atom_transfer_transpose(DistributedFeatures& features) const;
    void bond_transfer_transpose(DistributedFeatures& features) const;

    /// Refreshes duplicate owned rows from their canonical row. Called before
    /// transfers by code that writes canonical rows only.
    void sync_atom_duplicates(DistributedFeatures& features) const;
    void sync_bond_duplicates(DistributedFeatures& features) const;

    /// Assembles the global array from pure + TO (owned) rows; each global row
    /// comes from its unique owner.
    std::vector<double> aggregate(const DistributedFeatures& features) const;

    /// Aggregate over bond layouts into a per-global-bond array.
    std::vector<double> aggregate_bonds(const DistributedFeatures& features) const;

    /// Reassembles owned-edge feature blocks into the global E x F array.
    std::vector<double> aggregate_edges(const DistributedFeatures& features) const;

    /// Zero-initialized feature blocks aligned to the atom / bond layouts.
    DistributedFeatures make_atom_features(std::int64_t width) const;
    DistributedFeatures make_bond_features(std::int64_t width) const;

    std::int64_t bond_rows(int partition) const {
        return line_parts_->parts[partition].layout.size();
    }

    using LayerFn = std::function<void(int partition, DistributedFeatures&)>;

    /// Runs each layer on all workers, exchanging borders (atom and, when the
    /// line graph exists, bond features are the caller's business via the
    /// bond variant) between layers. Deterministic across schedules.
    void run_layered(const std::vector<LayerFn>& layers,
                     DistributedFeatures& features) const;

    /// Executes fn(partition) on every worker in parallel; rethrows the first
    /// worker failure with its partition id attached.
    void parallel_for_partitions(
        const std::function<void(int)>& fn) const;

    /// Test hook: corrupts one transfer plan entry so negative controls can
    /// verify that audits catch broken exchanges.
    void corrupt_transfer_plan_for_test();

    /// Rows held by each partition's atom feature block.
    std::int64_t atom_rows(int partition) const {
        return atom_parts_.parts[partition].layout.size();
    }

private:
    AtomicSystem system_;
    AtomGraph graph_;
    PartitionedAtomGraph atom_parts_;
    std::optional<PartitionedLineGraph> line_parts_;
    int p_ = 1;
    int n_threads_ = 1;
    bool corrupted_ = false;

    void transfer_impl(DistributedFeatures& features, bool bonds) const;
    void transfer_transpose_impl(DistributedFeatures& features, bool bonds) const;
    const SpanLayout& layout_of(int partition, bool bonds) const {
        return bonds ? line_parts_->parts[partition].layout
                     : atom_parts_.parts[partition].layout;
    }
};

}  // namespace graphmd
