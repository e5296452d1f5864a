#include "graphmd/md.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>

namespace graphmd {

double MDState::kinetic_energy() const {
    double e = 0.0;
    for (std::size_t i = 0; i < velocities.size(); ++i)
        e += 0.5 * masses[i] * velocities[i].norm2();
    return e * units::kKinetic;
}

double MDState::temperature() const {
    if (velocities.empty()) return 0.0;
    // 3N - 3 after momentum removal
    double dof = std::max<double>(1.0, 3.0 * velocities.size() - 3.0);
    return 2.0 * kinetic_energy() / (dof * units::kBoltzmann);
}

std::vector<Vec3> maxwell_boltzmann_velocities(const AtomicSystem& system,
                                               double temperature,
                                               std::uint64_t seed) {
    const std::size_t n = system.size();
    std::vector<Vec3> v(n, Vec3{});
    if (temperature <= 0.0 || n == 0) return v;
    Rng rng(seed ^ 0xd1b54a32d192ed03ull);
    for (std::size_t i = 0; i < n; ++i) {
        double m = atomic_mass(system.species[i]);
        // sigma in A/fs: kT = m sigma^2 * kKinetic
        double sigma =
            std::sqrt(units::kBoltzmann * temperature / (m * units::kKinetic));
        v[i] = Vec3{sigma * rng.normal(), sigma * rng.normal(),
                    sigma * rng.normal()};
    }
    // remove center-of-mass momentum
    Vec3 ptot{};
    double mtot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double m = atomic_mass(system.species[i]);
        ptot += v[i] * m;
        mtot += m;
    }
    Vec3 vcm = ptot / mtot;
    for (Vec3& vi : v) vi -= vcm;
    return v;
}

namespace {

PotentialOutput evaluate(const AtomicSystem& system,
                         const ToyPotentialParams& params,
                         const MDOptions& opts, StepTiming* timing) {
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    Distributed dist = Distributed::create_distributed(
        system, params.r_atom,
        params.threebody() ? std::optional<double>(params.r_3body)
                           : std::nullopt,
        opts.partitions, opts.threads, opts.allow_narrow);
    if (timing)
        timing->graph_creation +=
            std::chrono::duration<double>(clock::now() - t0).count();
    return forward_distributed(dist, params, timing);
}

}  // namespace

MDState init_md_state(const AtomicSystem& system, const MDOptions& opts) {
    MDState state;
    state.system = system;
    state.system.validate();
    state.masses.resize(system.size());
    for (std::size_t i = 0; i < system.size(); ++i)
        state.masses[i] = atomic_mass(system.species[i]);
    state.velocities =
        maxwell_boltzmann_velocities(system, opts.init_temperature, opts.seed);
    return state;
}

void velocity_verlet_step(MDState& state, const ToyPotentialParams& params,
                          const MDOptions& opts, StepTiming* timing) {
    const std::size_t n = state.system.size();
    if (state.forces.size() != n)
        throw Error("step requires forces at the current positions");
    if (opts.dt < 0.0) throw Error("time step must be >= 0");
    const double dt = opts.dt;
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 a = state.forces[i] * (units::kAccel / state.masses[i]);
        state.velocities[i] += a * (0.5 * dt);
        state.system.positions[i] += state.velocities[i] * dt;
    }
    state.system = wrap_positions(state.system);
    PotentialOutput out = evaluate(state.system, params, opts, timing);
    state.step += 1;
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k)
            if (!std::isfinite(out.forces[i][k]))
                throw Error("non-finite force on atom " + std::to_string(i) +
                            " at step " + std::to_string(state.step));
        Vec3 a = out.forces[i] * (units::kAccel / state.masses[i]);
        state.velocities[i] += a * (0.5 * dt);
    }
    state.forces = std::move(out.forces);
    state.potential_energy = out.energy;
}

MDResult run_md(const AtomicSystem& system, const ToyPotentialParams& params,
                const MDOptions& opts) {
    MDResult result;
    result.state = init_md_state(system, opts);
    MDState& state = result.state;

    auto record = [&](std::int64_t step, const StepTiming& t) {
        MDStepRecord r;
        r.step = step;
        r.potential = state.potential_energy;
        r.kinetic = state.kinetic_energy();
        r.total = r.potential + r.kinetic;
        r.max_force = 0.0;
        for (const Vec3& f : state.forces)
            r.max_force = std::max(r.max_force, f.norm());
        r.timing = t;
        result.records.push_back(r);
    };

    std::ofstream traj;
    auto snapshot = [&](std::int64_t step) {
        if (opts.trajectory_xyz.empty() || opts.snapshot_every <= 0) return;
        if (step % opts.snapshot_every != 0) return;
        save_xyz(state.system, opts.trajectory_xyz + "." +
                                   std::to_string(step) + ".xyz");
    };

    StepTiming t0;
    PotentialOutput out = evaluate(state.system, params, opts, &t0);
    state.forces = std::move(out.forces);
    state.potential_energy = out.energy;
    record(0, t0);
    snapshot(0);

    for (std::int64_t step = 1; step <= opts.steps; ++step) {
        StepTiming t;
        velocity_verlet_step(state, params, opts, &t);
        record(step, t);
        snapshot(step);
    }

    if (!opts.energy_csv.empty()) write_energy_csv(opts.energy_csv, result.records);
    if (!opts.timing_csv.empty()) {
        std::vector<StepTiming> rows;
        for (const MDStepRecord& r : result.records) rows.push_back(r.timing);
        write_timing_csv(opts.timing_csv, rows);
    }
    return result;
}

void write_energy_csv(const std::string& path,
                      const std::vector<MDStepRecord>& records) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    out << "step,potential_ev,kinetic_ev,total_ev,max_force_ev_per_a";
    for (const std::string& name : StepTiming::category_names()) {
        std::string col = name;
        for (char& c : col) c = c == ' ' ? '_' : static_cast<char>(std::tolower(c));
        out << "," << col << "_s";
    }
    out << "\n";
    out.precision(12);
    for (const MDStepRecord& r : records)
        out << r.step << "," << r.potential << "," << r.kinetic << ","
            << r.total << "," << r.max_force << "," << r.timing.graph_creation
            << "," << r.timing.feature_calculation << ","
            << r.timing.forward_pass << "," << r.timing.backward_pass << "\n";
}

}  // namespace graphmd
