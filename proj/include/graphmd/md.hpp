#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "graphmd/potential.hpp"
#include "graphmd/system.hpp"

namespace graphmd {

/// Unit constants for eV / A / fs / amu mechanics.
namespace units {
// acceleration prefactor: (eV/A) / amu -> A/fs^2
inline constexpr double kAccel = 9.648533212e-3;
// kinetic energy prefactor: amu*(A/fs)^2 -> eV
inline constexpr double kKinetic = 103.642697;
inline constexpr double kBoltzmann = 8.617333262e-5;  // eV/K
}  // namespace units

struct MDState {
    AtomicSystem system;
    std::vector<Vec3> velocities;  // A/fs
    std::vector<double> masses;    // amu
    std::vector<Vec3> forces;      // eV/A, forces at current positions
    double potential_energy = 0.0;
    std::int64_t step = 0;
    double kinetic_energy() const;
    double temperature() const;  // K
};

struct MDOptions {
    double dt = 1.0;  // fs
    std::int64_t steps = 0;
    int partitions = 1;
    int threads = 0;
    bool allow_narrow = false;
    std::uint64_t seed = 0;
    double init_temperature = 300.0;  // K; <= 0 keeps zero velocities
    std::string energy_csv;           // empty disables
    std::string timing_csv;
    std::string trajectory_xyz;
    std::int64_t snapshot_every = 0;  // 0 disables
};

struct MDStepRecord {
    std::int64_t step = 0;
    double potential = 0.0;
    double kinetic = 0.0;
    double total = 0.0;
    double max_force = 0.0;
    StepTiming timing;
};

struct MDResult {
    MDState state;
    std::vector<MDStepRecord> records;  // steps + 1 rows (row 0 = initial)
};

/// Maxwell-Boltzmann velocities at `temperature` with the total momentum
/// removed. Deterministic in `seed`.
std::vector<Vec3> maxwell_boltzmann_velocities(const AtomicSystem& system,
                                               double temperature,
                                               std::uint64_t seed);

MDState init_md_state(const AtomicSystem& system, const MDOptions& opts);

/// One velocity-Verlet step. Rebuilds the neighbor graph and the partition
/// plan from scratch at the new positions (timed under graph creation).
void velocity_verlet_step(MDState& state, const ToyPotentialParams& params,
                          const MDOptions& opts, StepTiming* timing = nullptr);

MDResult run_md(const AtomicSystem& system, const ToyPotentialParams& params,
                const MDOptions& opts);

void write_energy_csv(const std::string& path,
                      const std::vector<MDStepRecord>& records);

}  // namespace graphmd
