#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphmd/engine.hpp"
#include "graphmd/system.hpp"

namespace graphmd {

/// Parameters of the invariant message-passing toy potential. The model is
/// deliberately small; it exists to drive every distributed code path with a
/// smooth, conservative energy whose forces and stress are analytic.
struct ToyPotentialParams {
    int feature_width = 16;  // F
    int basis_count = 8;     // K
    int layers = 2;          // L
    double r_atom = 4.0;     // A
    double r_3body = 0.0;    // A; <= 0 disables the three-body stage
    std::uint64_t seed = 0;

    std::vector<double> embedding;    // 119 * F, row per atomic number
    std::vector<double> layer_w;      // L * F * F
    std::vector<double> layer_b;      // L * F
    std::vector<double> basis_proj;   // F * K, radial basis -> feature space
    std::vector<double> basis3_proj;  // F * K, three-body bond init
    std::vector<double> w3;           // F * F, bond conv
    std::vector<double> w4;           // F * F, bond -> atom injection
    std::vector<double> readout;      // F

    bool threebody() const { return r_3body > 0.0; }

    static ToyPotentialParams init(std::uint64_t seed, int feature_width = 16,
                                   int basis_count = 8, int layers = 2,
                                   double r_atom = 4.0, double r_3body = 0.0);

    void validate() const;
    void save(const std::string& path) const;
    static ToyPotentialParams load(const std::string& path);
};

struct PotentialOutput {
    double energy = 0.0;              // eV
    std::vector<double> per_atom;     // eV
    std::vector<Vec3> forces;         // eV/A
    Mat3 stress;                      // eV/A^3, dE/d(strain)/volume, symmetric
};

/// Single-partition reference implementation over the global graph.
PotentialOutput forward_serial(const AtomicSystem& system,
                               const ToyPotentialParams& params,
                               int n_threads = 0);

/// Identical contract, computed across the partitions of `dist` with
/// per-layer border exchange. Per-node summation order matches the serial
/// path so pure-row results agree to machine precision.
PotentialOutput forward_distributed(const Distributed& dist,
                                    const ToyPotentialParams& params,
                                    StepTiming* timing = nullptr);

/// Central-difference force oracle, eps in [1e-6, 1e-2] A.
std::vector<Vec3> finite_difference_forces(const AtomicSystem& system,
                                           const ToyPotentialParams& params,
                                           double eps);

/// Central-difference strain oracle for the virial stress, eps <= 1e-3.
Mat3 finite_difference_stress(const AtomicSystem& system,
                              const ToyPotentialParams& params, double eps);

}  // namespace graphmd
