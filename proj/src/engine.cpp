#include "graphmd/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace graphmd {

const std::vector<std::string>& StepTiming::category_names() {
    static const std::vector<std::string> names = {
        "Graph Creation", "Feature Calculation", "Forward Pass",
        "Backward Pass"};
    return names;
}

StepTiming& StepTiming::operator+=(const StepTiming& o) {
    graph_creation += o.graph_creation;
    feature_calculation += o.feature_calculation;
    forward_pass += o.forward_pass;
    backward_pass += o.backward_pass;
    return *this;
}

void write_timing_csv(const std::string& path,
                      const std::vector<StepTiming>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    out << "step";
    for (const std::string& name : StepTiming::category_names())
        out << "," << name;
    out << "\n";
    out.precision(9);
    for (std::size_t i = 0; i < rows.size(); ++i)
        out << i << "," << rows[i].graph_creation << ","
            << rows[i].feature_calculation << "," << rows[i].forward_pass
            << "," << rows[i].backward_pass << "\n";
}

Distributed Distributed::create_distributed(
    const AtomicSystem& system, double atom_cutoff,
    std::optional<double> threebody_cutoff, int p, int n_threads,
    bool allow_narrow, double threebody_tau) {
    if (p < 1) throw Error("partition count must be >= 1");
    Distributed d;
    d.system_ = ensure_periodic(system, atom_cutoff);
    d.p_ = p;
    d.n_threads_ = n_threads > 0 ? n_threads : 1;
    d.graph_ = build_neighbor_list(d.system_, atom_cutoff, n_threads);
    PartitionRule rule = choose_partition_rule(d.system_, p);
    d.atom_parts_ =
        build_atom_partitions(d.graph_, d.system_, rule, allow_narrow);
    if (threebody_cutoff) {
        auto closure = build_two_hop_closure(d.atom_parts_, d.graph_);
        EdgeTables tables = build_edge_tables(d.graph_, closure, d.atom_parts_,
                                              *threebody_cutoff, threebody_tau);
        d.line_parts_ =
            build_line_graph_partitions(tables, d.graph_, d.atom_parts_);
    }
    return d;
}

DistributedFeatures Distributed::make_atom_features(std::int64_t width) const {
    DistributedFeatures f;
    f.width = width;
    f.blocks.resize(p_);
    for (int i = 0; i < p_; ++i)
        f.blocks[i].assign(atom_parts_.parts[i].layout.size() * width, 0.0);
    return f;
}

DistributedFeatures Distributed::make_bond_features(std::int64_t width) const {
    if (!line_parts_) throw Error("no line graph was built");
    DistributedFeatures f;
    f.width = width;
    f.blocks.resize(p_);
    for (int i = 0; i < p_; ++i)
        f.blocks[i].assign(line_parts_->parts[i].layout.size() * width, 0.0);
    return f;
}

DistributedFeatures Distributed::distribute_node_features(
    const std::vector<double>& features, std::int64_t width) const {
    if (features.size() !=
        static_cast<std::size_t>(graph_.num_nodes) * width)
        throw Error("node feature shape mismatch");
    DistributedFeatures out = make_atom_features(width);
    for (int i = 0; i < p_; ++i) {
        const SpanLayout& layout = atom_parts_.parts[i].layout;
        for (std::int64_t row = 0; row < layout.size(); ++row) {
            std::int64_t g = layout.node_array[row];
            std::memcpy(out.row(i, row), features.data() + g * width,
                        width * sizeof(double));
        }
    }
    return out;
}

DistributedFeatures Distributed::distribute_edge_features(
    const std::vector<double>& features, std::int64_t width) const {
    if (features.size() !=
        static_cast<std::size_t>(graph_.num_edges()) * width)
        throw Error("edge feature shape mismatch");
    DistributedFeatures out;
    out.width = width;
    out.blocks.resize(p_);
    for (int i = 0; i < p_; ++i) {
        const auto& owned = atom_parts_.parts[i].owned_edges;
        out.blocks[i].assign(owned.size() * width, 0.0);
        for (std::size_t k = 0; k < owned.size(); ++k)
            std::memcpy(out.row(i, static_cast<std::int64_t>(k)),
                        features.data() + owned[k] * width,
                        width * sizeof(double));
    }
    return out;
}

void Distributed::transfer_impl(DistributedFeatures& features,
                                bool bonds) const {
    const std::int64_t w = features.width;
    for (int i = 0; i < p_; ++i) {
        const SpanLayout& from_layout = layout_of(i, bonds);
        for (int j = 0; j < p_; ++j) {
            if (j == i) continue;
            const SpanLayout& to_layout = layout_of(j, bonds);
            Span to_span = to_layout.to_span(i);
            Span from_span = from_layout.from_span(j);
            if (to_span.size() != from_span.size())
                throw Error("transfer plan misalignment");
            if (to_span.size() == 0) continue;
            std::int64_t src_begin = to_span.begin;
            if (corrupted_ && !bonds && to_span.size() > 0)
                src_begin = 0;  // test hook: read from the wrong span
            std::memcpy(features.row(i, from_span.begin),
                        features.row(j, src_begin),
                        to_span.size() * w * sizeof(double));
        }
    }
}

void Distributed::transfer_transpose_impl(DistributedFeatures& features,
                                          bool bonds) const {
    const std::int64_t w = features.width;
    // Deterministic accumulation order: receiving partition j ascending, then
    // source partition i ascending.
    for (int j = 0; j < p_; ++j) {
        const SpanLayout& to_layout = layout_of(j, bonds);
        for (int i = 0; i < p_; ++i) {
            if (i == j) continue;
            const SpanLayout& from_layout = layout_of(i, bonds);
            Span to_span = to_layout.to_span(i);
            Span from_span = from_layout.from_span(j);
            if (to_span.size() != from_span.size())
                throw Error("transfer plan misalignment");
            double* dst = features.row(j, to_span.begin);
            double* src = features.row(i, from_span.begin);
            for (std::int64_t k = 0; k < to_span.size() * w; ++k) {
                dst[k] += src[k];
                src[k] = 0.0;
            }
        }
    }
    // Fold duplicate owned rows back onto their canonical row.
    for (int j = 0; j < p_; ++j) {
        const SpanLayout& layout = layout_of(j, bonds);
        for (const auto& [canon, dup] : layout.duplicates) {
            double* c = features.row(j, canon);
            double* d = features.row(j, dup);
            for (std::int64_t k = 0; k < w; ++k) {
                c[k] += d[k];
                d[k] = 0.0;
            }
        }
    }
}

void Distributed::sync_atom_duplicates(DistributedFeatures& features) const {
    for (int i = 0; i < p_; ++i)
        for (const auto& [canon, dup] : atom_parts_.parts[i].layout.duplicates)
            std::memcpy(features.row(i, dup), features.row(i, canon),
                        features.width * sizeof(double));
}

void Distributed::sync_bond_duplicates(DistributedFeatures& features) const {
    if (!line_parts_) throw Error("no line graph was built");
    for (int i = 0; i < p_; ++i)
        for (const auto& [canon, dup] : line_parts_->parts[i].layout.duplicates)
            std::memcpy(features.row(i, dup), features.row(i, canon),
                        features.width * sizeof(double));
}

void Distributed::atom_transfer(DistributedFeatures& features) const {
    transfer_impl(features, false);
}

void Distributed::bond_transfer(DistributedFeatures& features) const {
    if (!line_parts_) throw Error("no line graph was built");
    transfer_impl(features, true);
}

void Distributed::atom_transfer_transpose(DistributedFeatures& features) const {
    transfer_transpose_impl(features, false);
}

void Distributed::bond_transfer_transpose(DistributedFeatures& features) const {
    if (!line_parts_) throw Error("no line graph was built");
    transfer_transpose_impl(features, true);
}

std::vector<double> Distributed::aggregate(
    const DistributedFeatures& features) const {
    const std::int64_t w = features.width;
    std::vector<double> out(graph_.num_nodes * w, 0.0);
    for (int i = 0; i < p_; ++i) {
        const SpanLayout& layout = atom_parts_.parts[i].layout;
        std::int64_t owned = layout.owned_end();
        for (std::int64_t row = 0; row < owned; ++row) {
            // duplicates inside the TO region: canonical row wins
            if (layout.local_of(layout.node_array[row]) != row) continue;
            std::memcpy(out.data() + layout.node_array[row] * w,
                        features.row(i, row), w * sizeof(double));
        }
    }
    return out;
}

std::vector<double> Distributed::aggregate_bonds(
    const DistributedFeatures& features) const {
    if (!line_parts_) throw Error("no line graph was built");
    const std::int64_t w = features.width;
    std::vector<double> out(line_parts_->bonds.size() * w, 0.0);
    for (int i = 0; i < p_; ++i) {
        const SpanLayout& layout = line_parts_->parts[i].layout;
        std::int64_t owned = layout.owned_end();
        for (std::int64_t row = 0; row < owned; ++row) {
            if (layout.local_of(layout.node_array[row]) != row) continue;
            std::memcpy(out.data() + layout.node_array[row] * w,
                        features.row(i, row), w * sizeof(double));
        }
    }
    return out;
}

std::vector<double> Distributed::aggregate_edges(
    const DistributedFeatures& features) const {
    const std::int64_t w = features.width;
    std::vector<double> out(graph_.num_edges() * w, 0.0);
    for (int i = 0; i < p_; ++i) {
        const auto& owned = atom_parts_.parts[i].owned_edges;
        for (std::size_t k = 0; k < owned.size(); ++k)
            std::memcpy(out.data() + owned[k] * w,
                        features.row(i, static_cast<std::int64_t>(k)),
                        w * sizeof(double));
    }
    return out;
}

void Distributed::parallel_for_partitions(
    const std::function<void(int)>& fn) const {
    std::vector<std::string> errors(p_);
    std::atomic<bool> failed{false};
#ifdef _OPENMP
    int threads = std::min(p_, n_threads_ > 0 ? n_threads_ : p_);
#pragma omp parallel for schedule(static, 1) num_threads(threads)
#endif
    for (int i = 0; i < p_; ++i) {
        try {
            fn(i);
        } catch (const std::exception& e) {
            errors[i] = e.what();
            failed.store(true);
        }
    }
    if (failed.load()) {
        for (int i = 0; i < p_; ++i)
            if (!errors[i].empty())
                throw Error("worker for partition " + std::to_string(i) +
                            " failed: " + errors[i]);
    }
}

void Distributed::run_layered(const std::vector<LayerFn>& layers,
                              DistributedFeatures& features) const {
    for (const LayerFn& layer : layers) {
        parallel_for_partitions([&](int i) { layer(i, features); });
        // exchange phase
        sync_atom_duplicates(features);
        atom_transfer(features);
    }
}

void Distributed::corrupt_transfer_plan_for_test() { corrupted_ = true; }

}  // namespace graphmd
