// graphmd command-line driver: equivalence audits, scaling benchmarks, MD.
#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "graphmd/md.hpp"
#include "graphmd/potential.hpp"

using namespace graphmd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitTolerance = 1;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct CommonArgs {
    std::string fixture;
    std::vector<int> reps{1, 1, 1};
    std::vector<int> partitions{1, 2, 4};
    int threads = 0;
    double cutoff = 4.0;
    double threebody_cutoff = 0.0;
    std::uint64_t seed = 12345;
    bool allow_narrow = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool need_fixture = true) {
    auto* opt = cmd->add_option("--fixture", a.fixture, "input extended-XYZ file");
    if (need_fixture) opt->required();
    cmd->add_option("--reps", a.reps, "supercell repetitions a,b,c")
        ->delimiter(',')
        ->expected(3);
    cmd->add_option("--partitions", a.partitions, "partition counts")
        ->delimiter(',');
    cmd->add_option("--threads", a.threads, "worker threads (0 = partitions)");
    cmd->add_option("--cutoff", a.cutoff, "atom graph cutoff (A)");
    cmd->add_option("--threebody-cutoff", a.threebody_cutoff,
                    "three-body cutoff (A), 0 disables");
    cmd->add_option("--seed", a.seed, "parameter / velocity seed");
    cmd->add_flag("--allow-narrow", a.allow_narrow,
                  "permit slabs narrower than the cutoff");
}

AtomicSystem load_fixture(const CommonArgs& a) {
    AtomicSystem sys = load_xyz(a.fixture);
    if (a.reps[0] != 1 || a.reps[1] != 1 || a.reps[2] != 1)
        sys = make_supercell(sys, {a.reps[0], a.reps[1], a.reps[2]});
    return sys;
}

ToyPotentialParams make_params(const CommonArgs& a) {
    return ToyPotentialParams::init(a.seed, 16, 8, 2, a.cutoff,
                                    a.threebody_cutoff);
}

// -------------------------------------------------------------------- audit

int cmd_audit(const CommonArgs& a, double tol_energy, double tol_force,
              double tol_stress, bool corrupt_plan) {
    AtomicSystem sys;
    ToyPotentialParams params;
    try {
        sys = load_fixture(a);
        params = make_params(a);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        PotentialOutput ref = forward_serial(sys, params, a.threads);
        bool ok = true;
        for (int p : a.partitions) {
            Distributed dist = Distributed::create_distributed(
                sys, params.r_atom,
                params.threebody() ? std::optional<double>(params.r_3body)
                                   : std::nullopt,
                p, a.threads, a.allow_narrow);
            if (corrupt_plan) dist.corrupt_transfer_plan_for_test();
            PotentialOutput out = forward_distributed(dist, params);
            double de = 0.0, df = 0.0, ds = 0.0;
            for (std::size_t i = 0; i < sys.size(); ++i) {
                de = std::max(de, std::abs(out.per_atom[i] - ref.per_atom[i]));
                for (int k = 0; k < 3; ++k)
                    df = std::max(df,
                                  std::abs(out.forces[i][k] - ref.forces[i][k]));
            }
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c)
                    ds = std::max(ds,
                                  std::abs(out.stress[r][c] - ref.stress[r][c]));
            std::cout << "p=" << p << " max|dE|/atom=" << de
                      << " max|dF|=" << df << " max|dS|=" << ds << "\n";
            if (de > tol_energy) {
                std::cerr << "FAIL p=" << p << " energy " << de << " > "
                          << tol_energy << "\n";
                ok = false;
            }
            if (df > tol_force) {
                std::cerr << "FAIL p=" << p << " force " << df << " > "
                          << tol_force << "\n";
                ok = false;
            }
            if (ds > tol_stress) {
                std::cerr << "FAIL p=" << p << " stress " << ds << " > "
                          << tol_stress << "\n";
                ok = false;
            }
        }
        return ok ? kExitOk : kExitTolerance;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// -------------------------------------------------------------------- bench

struct TimedRun {
    StepTiming mean;     // averaged over the kept repetitions
    double time_s = 0.0; // mean total
    std::int64_t atoms = 0;
    std::int64_t edges = 0;
};

TimedRun time_evaluation(const AtomicSystem& sys,
                         const ToyPotentialParams& params, int p, int threads,
                         bool allow_narrow, int repeat, int keep_last) {
    if (repeat < 1 || keep_last < 1 || keep_last > repeat)
        throw Error("need repeat >= keep-last >= 1");
    std::vector<StepTiming> kept;
    TimedRun out;
    for (int r = 0; r < repeat; ++r) {
        StepTiming t;
        auto t0 = std::chrono::steady_clock::now();
        Distributed dist = Distributed::create_distributed(
            sys, params.r_atom,
            params.threebody() ? std::optional<double>(params.r_3body)
                               : std::nullopt,
            p, threads, allow_narrow);
        t.graph_creation =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                .count();
        forward_distributed(dist, params, &t);
        if (r >= repeat - keep_last) kept.push_back(t);
        out.atoms = static_cast<std::int64_t>(dist.system().size());
        out.edges = static_cast<std::int64_t>(dist.graph().num_edges());
    }
    for (const StepTiming& t : kept) out.mean += t;
    double inv = 1.0 / static_cast<double>(kept.size());
    out.mean.graph_creation *= inv;
    out.mean.feature_calculation *= inv;
    out.mean.forward_pass *= inv;
    out.mean.backward_pass *= inv;
    out.time_s = out.mean.total();
    return out;
}

std::size_t estimate_bytes(const AtomicSystem& sys,
                           const ToyPotentialParams& params, int p) {
    // rough high-water estimate of the distributed evaluation footprint
    double density_edges =
        4.0 / 3.0 * M_PI * params.r_atom * params.r_atom * params.r_atom *
        sys.size() / std::max(1e-9, std::abs(sys.lattice.det()));
    std::size_t edges =
        static_cast<std::size_t>(density_edges * sys.size()) + sys.size();
    std::size_t F = static_cast<std::size_t>(params.feature_width);
    std::size_t per_edge = 8 * 7 + F * 8;           // graph arrays + channel
    std::size_t per_atom = F * 8 * (params.layers + 4) + 8 * 8;
    return edges * per_edge + sys.size() * per_atom + p * 4096;
}

int cmd_bench(const CommonArgs& a, const std::string& mode, int repeat,
              int keep_last, std::size_t budget_bytes,
              const std::vector<double>& densities, const std::string& out_path) {
    AtomicSystem base;
    ToyPotentialParams params;
    try {
        if (mode != "strong" && mode != "weak" && mode != "capacity" &&
            mode != "density" && mode != "breakdown")
            throw Error("unknown bench mode: " + mode);
        base = load_fixture(a);
        params = make_params(a);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        std::ostringstream csv;
        csv.precision(9);
        int threads = a.threads;
        auto run = [&](const AtomicSystem& sys, int p) {
            return time_evaluation(sys, params, p, threads > 0 ? threads : p,
                                   a.allow_narrow, repeat, keep_last);
        };

        if (mode == "strong" || mode == "weak") {
            // baseline: 2 partitions on one worker (single-device convention)
            csv << "mode,p,threads,atoms,edges,time_s,baseline_s,normalized\n";
            AtomicSystem baseline_sys = base;
            TimedRun baseline = time_evaluation(baseline_sys, params, 2, 1,
                                                a.allow_narrow, repeat,
                                                keep_last);
            for (int p : a.partitions) {
                AtomicSystem sys = base;
                if (mode == "weak" && p > 1)
                    sys = make_supercell(base, {p, 1, 1});
                TimedRun r = run(sys, p);
                double norm =
                    mode == "weak"
                        ? (r.time_s / r.atoms) / (baseline.time_s / baseline.atoms)
                        : r.time_s / baseline.time_s;
                csv << mode << "," << p << "," << (threads > 0 ? threads : p)
                    << "," << r.atoms << "," << r.edges << "," << r.time_s
                    << "," << baseline.time_s << "," << norm << "\n";
            }
        } else if (mode == "capacity") {
            csv << "budget_bytes,scale,atoms,estimated_bytes,status,time_s\n";
            int lo = 1, hi = 1;
            auto fits = [&](int s) {
                AtomicSystem sys = make_supercell(base, {s, s, s});
                return estimate_bytes(sys, params, a.partitions.front()) <=
                       budget_bytes;
            };
            if (!fits(1)) {
                csv << budget_bytes << ",1," << base.size() << ","
                    << estimate_bytes(base, params, a.partitions.front())
                    << ",exceeded,0\n";
            } else {
                while (fits(hi * 2)) hi *= 2;
                lo = hi;
                int probe = hi * 2;
                while (probe - lo > 1) {
                    int mid = (lo + probe) / 2;
                    (fits(mid) ? lo : probe) = mid;
                }
                AtomicSystem sys = make_supercell(base, {lo, lo, lo});
                TimedRun r = run(sys, a.partitions.front());
                csv << budget_bytes << "," << lo << "," << r.atoms << ","
                    << estimate_bytes(sys, params, a.partitions.front())
                    << ",ok," << r.time_s << "\n";
            }
        } else if (mode == "density") {
            csv << "density_factor,atoms,edges,time_s\n";
            for (double d : densities) {
                AtomicSystem sys = base;
                double scale = std::pow(1.0 / d, 1.0 / 3.0);
                for (int r = 0; r < 3; ++r) sys.lattice[r] *= scale;
                for (Vec3& pos : sys.positions) pos *= scale;
                TimedRun r = run(sys, a.partitions.front());
                csv << d << "," << r.atoms << "," << r.edges << "," << r.time_s
                    << "\n";
            }
        } else {  // breakdown
            csv << "p,atoms";
            for (const std::string& name : StepTiming::category_names()) {
                std::string col = name;
                for (char& ch : col)
                    ch = ch == ' ' ? '_' : static_cast<char>(std::tolower(ch));
                csv << "," << col << "_s";
            }
            csv << ",total_s\n";
            for (int p : a.partitions) {
                TimedRun r = run(base, p);
                csv << p << "," << r.atoms << "," << r.mean.graph_creation
                    << "," << r.mean.feature_calculation << ","
                    << r.mean.forward_pass << "," << r.mean.backward_pass << ","
                    << r.mean.total() << "\n";
            }
        }

        if (out_path.empty()) {
            std::cout << csv.str();
        } else {
            std::ofstream f(out_path);
            if (!f) throw Error("cannot write file: " + out_path);
            f << csv.str();
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

// ----------------------------------------------------------------------- md

int cmd_md(const CommonArgs& a, std::int64_t steps, double dt,
           double temperature, const std::string& out_path,
           const std::string& timing_path, const std::string& traj_prefix,
           std::int64_t snapshot_every, bool paired, double pair_tol) {
    AtomicSystem sys;
    ToyPotentialParams params;
    MDOptions opts;
    try {
        sys = load_fixture(a);
        params = make_params(a);
        opts.dt = dt;
        opts.steps = steps;
        opts.partitions = a.partitions.front();
        opts.threads = a.threads;
        opts.allow_narrow = a.allow_narrow;
        opts.seed = a.seed;
        opts.init_temperature = temperature;
        opts.energy_csv = out_path;
        opts.timing_csv = timing_path;
        opts.trajectory_xyz = traj_prefix;
        opts.snapshot_every = snapshot_every;
        if (dt < 0.0) throw Error("time step must be >= 0");
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        MDResult result = run_md(sys, params, opts);
        const MDStepRecord& last = result.records.back();
        std::cout << "steps=" << steps << " E_total_final=" << last.total
                  << " drift/atom="
                  << std::abs(last.total - result.records.front().total) /
                         static_cast<double>(sys.size())
                  << "\n";
        if (paired) {
            MDOptions serial = opts;
            serial.partitions = 1;
            serial.energy_csv.clear();
            serial.timing_csv.clear();
            serial.trajectory_xyz.clear();
            MDResult ref = run_md(sys, params, serial);
            double dmax = 0.0;
            for (std::size_t i = 0; i < sys.size(); ++i)
                for (int k = 0; k < 3; ++k)
                    dmax = std::max(dmax, std::abs(
                        result.state.system.positions[i][k] -
                        ref.state.system.positions[i][k]));
            std::cout << "paired max|dx|=" << dmax << " (p="
                      << opts.partitions << " vs serial)\n";
            if (dmax > pair_tol) return kExitTolerance;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distributed message-passing potential toolkit"};
    app.require_subcommand(1);

    CommonArgs audit_args, bench_args, md_args;
    double tol_energy = 1e-12, tol_force = 1e-10, tol_stress = 1e-10;
    bool corrupt_plan = false;
    auto* audit = app.add_subcommand("audit",
                                     "serial vs distributed equivalence check");
    add_common(audit, audit_args);
    audit->add_option("--tol-energy", tol_energy, "per-atom energy tolerance (eV)");
    audit->add_option("--tol-force", tol_force, "force tolerance (eV/A)");
    audit->add_option("--tol-stress", tol_stress, "stress tolerance (eV/A^3)");
    audit->add_flag("--corrupt-plan", corrupt_plan,
                    "negative control: corrupt one transfer span");

    std::string mode = "strong", bench_out;
    int repeat = 20, keep_last = 10;
    std::size_t budget_bytes = 1ull << 30;
    std::vector<double> densities{1.0, 2.0};
    auto* bench = app.add_subcommand("bench", "scaling benchmark CSV emitter");
    add_common(bench, bench_args);
    bench->add_option("--mode", mode,
                      "strong | weak | capacity | density | breakdown");
    bench->add_option("--repeat", repeat, "evaluations per configuration");
    bench->add_option("--keep-last", keep_last, "trailing runs averaged");
    bench->add_option("--budget-bytes", budget_bytes, "capacity-mode memory budget");
    bench->add_option("--densities", densities, "density-mode factors")
        ->delimiter(',');
    bench->add_option("--out", bench_out, "output CSV path (default stdout)");

    std::int64_t steps = 0, snapshot_every = 0;
    double dt = 1.0, temperature = 300.0, pair_tol = 1e-8;
    std::string md_out, md_timing, traj_prefix;
    bool paired = false;
    auto* md = app.add_subcommand("md", "NVE molecular dynamics");
    add_common(md, md_args);
    md->add_option("--steps", steps, "number of steps");
    md->add_option("--dt", dt, "time step (fs)");
    md->add_option("--temperature", temperature, "initial temperature (K)");
    md->add_option("--out", md_out, "per-step energy CSV");
    md->add_option("--timing-out", md_timing, "per-step timing CSV");
    md->add_option("--traj", traj_prefix, "snapshot path prefix");
    md->add_option("--snapshot-every", snapshot_every, "snapshot stride");
    md->add_flag("--paired", paired, "also run serially and compare positions");
    md->add_option("--pair-tol", pair_tol, "paired-run coordinate tolerance (A)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    if (audit->parsed())
        return cmd_audit(audit_args, tol_energy, tol_force, tol_stress,
                         corrupt_plan);
    if (bench->parsed())
        return cmd_bench(bench_args, mode, repeat, keep_last, budget_bytes,
                         densities, bench_out);
    return cmd_md(md_args, steps, dt, temperature, md_out, md_timing,
                  traj_prefix, snapshot_every, paired, pair_tol);
}
