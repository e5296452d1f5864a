#include "graphmd/potential.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>

#include "graphmd/linegraph.hpp"
#include "graphmd/neighborlist.hpp"

namespace graphmd {

namespace {

constexpr char kMagic[4] = {'G', 'M', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

inline double cutoff_fn(double d, double rc) {
    if (d >= rc) return 0.0;
    return 0.5 * (std::cos(M_PI * d / rc) + 1.0);
}
inline double cutoff_deriv(double d, double rc) {
    if (d >= rc) return 0.0;
    return -0.5 * M_PI / rc * std::sin(M_PI * d / rc);
}

/// s = proj * u(d) with u_k(d) = w(d) * exp(-((d - mu_k)/sigma)^2); when ds
/// is non-null it receives proj * u'(d).
void radial_channel(const double* proj, int F, int K, double rc, double d,
                    double* s, double* ds) {
    double w = cutoff_fn(d, rc);
    double dw = cutoff_deriv(d, rc);
    double sigma = rc / K;
    for (int f = 0; f < F; ++f) {
        s[f] = 0.0;
        if (ds) ds[f] = 0.0;
    }
    for (int k = 0; k < K; ++k) {
        double mu = K > 1 ? rc * k / (K - 1) : 0.0;
        double x = (d - mu) / sigma;
        double phi = std::exp(-x * x);
        double u = w * phi;
        double du = dw * phi + w * (-2.0 * x / sigma) * phi;
        for (int f = 0; f < F; ++f) {
            s[f] += proj[f * K + k] * u;
            if (ds) ds[f] += proj[f * K + k] * du;
        }
    }
}

inline void matvec(const double* W, int F, const double* x, double* y) {
    for (int i = 0; i < F; ++i) {
        double acc = 0.0;
        const double* row = W + i * F;
        for (int j = 0; j < F; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
}

inline void matvec_t(const double* W, int F, const double* x, double* y) {
    for (int j = 0; j < F; ++j) y[j] = 0.0;
    for (int i = 0; i < F; ++i) {
        const double* row = W + i * F;
        for (int j = 0; j < F; ++j) y[j] += row[j] * x[i];
    }
}

inline double sech2_of_tanh(double th) { return 1.0 - th * th; }

/// d(cos)/d(v_e) and d(cos)/d(v_ep) for c = -(a.b)/(|a||b|).
inline void cos_gradients(const Vec3& a, double na, const Vec3& b, double nb,
                          double c, Vec3& dc_da, Vec3& dc_db) {
    Vec3 ah = a / na;
    Vec3 bh = b / nb;
    dc_da = -(bh + ah * c) / na;
    dc_db = -(ah + bh * c) / nb;
}

void fill_normal(Rng& rng, std::vector<double>& v, std::size_t n,
                 double scale) {
    v.resize(n);
    for (double& x : v) x = scale * rng.normal();
}

std::vector<std::pair<std::int64_t, std::int64_t>> serial_line_pairs(
    const AtomGraph& graph, const BondSet& bonds) {
    // (bond e, bond e') pairs sorted by (e', e): iteration grouped by e'
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    for (std::int64_t ep = 0; ep < static_cast<std::int64_t>(bonds.size());
         ++ep) {
        std::int64_t edge_ep = bonds.edge_of_bond[ep];
        for (std::int64_t e : bonds.by_dst[graph.src[edge_ep]]) {
            std::int64_t edge_e = bonds.edge_of_bond[e];
            if (graph.dst[edge_ep] == graph.src[edge_e] &&
                graph.src[edge_ep] == graph.dst[edge_e] &&
                graph.image_offset[edge_ep][0] == -graph.image_offset[edge_e][0] &&
                graph.image_offset[edge_ep][1] == -graph.image_offset[edge_e][1] &&
                graph.image_offset[edge_ep][2] == -graph.image_offset[edge_e][2])
                continue;
            pairs.emplace_back(e, ep);
        }
    }
    return pairs;
}

void check_finite(const double* h, std::int64_t rows, int F, int layer,
                  const std::int64_t* global_ids) {
    for (std::int64_t r = 0; r < rows; ++r)
        for (int f = 0; f < F; ++f)
            if (!std::isfinite(h[r * F + f]))
                throw Error("non-finite feature at layer " +
                            std::to_string(layer) + ", atom " +
                            std::to_string(global_ids ? global_ids[r] : r));
}

}  // namespace

ToyPotentialParams ToyPotentialParams::init(std::uint64_t seed,
                                            int feature_width, int basis_count,
                                            int layers, double r_atom,
                                            double r_3body) {
    ToyPotentialParams p;
    p.feature_width = feature_width;
    p.basis_count = basis_count;
    p.layers = layers;
    p.r_atom = r_atom;
    p.r_3body = r_3body;
    p.seed = seed;
    const int F = feature_width;
    const int K = basis_count;
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    fill_normal(rng, p.embedding, 119 * F, 0.5);
    fill_normal(rng, p.layer_w, static_cast<std::size_t>(layers) * F * F,
                1.0 / std::sqrt(static_cast<double>(F)));
    fill_normal(rng, p.layer_b, static_cast<std::size_t>(layers) * F, 0.1);
    fill_normal(rng, p.basis_proj, static_cast<std::size_t>(F) * K,
                1.0 / std::sqrt(static_cast<double>(K)));
    fill_normal(rng, p.basis3_proj, static_cast<std::size_t>(F) * K,
                0.5 / std::sqrt(static_cast<double>(K)));
    fill_normal(rng, p.w3, static_cast<std::size_t>(F) * F,
                1.0 / std::sqrt(static_cast<double>(F)));
    fill_normal(rng, p.w4, static_cast<std::size_t>(F) * F,
                0.5 / std::sqrt(static_cast<double>(F)));
    fill_normal(rng, p.readout, F, 0.5);
    p.validate();
    return p;
}

void ToyPotentialParams::validate() const {
    if (layers < 1) throw Error("layer count must be >= 1");
    if (feature_width < 1 || basis_count < 1)
        throw Error("feature and basis widths must be >= 1");
    if (r_atom <= 0.0) throw Error("atom cutoff must be positive");
    if (threebody() && r_3body > r_atom)
        throw Error("three-body cutoff cannot exceed the atom cutoff");
    const std::size_t F = feature_width, K = basis_count, L = layers;
    auto expect = [](const std::vector<double>& v, std::size_t n,
                     const char* name) {
        if (v.size() != n)
            throw Error(std::string("parameter array ") + name +
                        " has the wrong size");
        for (double x : v)
            if (!std::isfinite(x))
                throw Error(std::string("parameter array ") + name +
                            " contains a non-finite value");
    };
    expect(embedding, 119 * F, "embedding");
    expect(layer_w, L * F * F, "layer_w");
    expect(layer_b, L * F, "layer_b");
    expect(basis_proj, F * K, "basis_proj");
    expect(basis3_proj, F * K, "basis3_proj");
    expect(w3, F * F, "w3");
    expect(w4, F * F, "w4");
    expect(readout, F, "readout");
}

void ToyPotentialParams::save(const std::string& path) const {
    validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out.write(kMagic, 4);
    auto put_u32 = [&](std::uint32_t v) {
        out.write(reinterpret_cast<const char*>(&v), 4);
    };
    auto put_u64 = [&](std::uint64_t v) {
        out.write(reinterpret_cast<const char*>(&v), 8);
    };
    auto put_f64 = [&](double v) {
        out.write(reinterpret_cast<const char*>(&v), 8);
    };
    auto put_vec = [&](const std::vector<double>& v) {
        put_u64(v.size());
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    };
    put_u32(kVersion);
    put_u32(static_cast<std::uint32_t>(feature_width));
    put_u32(static_cast<std::uint32_t>(basis_count));
    put_u32(static_cast<std::uint32_t>(layers));
    put_u32(threebody() ? 1u : 0u);
    put_f64(r_atom);
    put_f64(r_3body);
    put_u64(seed);
    put_vec(embedding);
    put_vec(layer_w);
    put_vec(layer_b);
    put_vec(basis_proj);
    put_vec(basis3_proj);
    put_vec(w3);
    put_vec(w4);
    put_vec(readout);
}

ToyPotentialParams ToyPotentialParams::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw Error("bad parameter file magic");
    auto get_u32 = [&]() {
        std::uint32_t v;
        in.read(reinterpret_cast<char*>(&v), 4);
        return v;
    };
    auto get_u64 = [&]() {
        std::uint64_t v;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto get_f64 = [&]() {
        double v;
        in.read(reinterpret_cast<char*>(&v), 8);
        return v;
    };
    auto get_vec = [&](std::vector<double>& v) {
        std::uint64_t n = get_u64();
        v.resize(n);
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(n * sizeof(double)));
    };
    if (get_u32() != kVersion) throw Error("unsupported parameter file version");
    ToyPotentialParams p;
    p.feature_width = static_cast<int>(get_u32());
    p.basis_count = static_cast<int>(get_u32());
    p.layers = static_cast<int>(get_u32());
    get_u32();  // flags, implied by r_3body
    p.r_atom = get_f64();
    p.r_3body = get_f64();
    p.seed = get_u64();
    get_vec(p.embedding);
    get_vec(p.layer_w);
    get_vec(p.layer_b);
    get_vec(p.basis_proj);
    get_vec(p.basis3_proj);
    get_vec(p.w3);
    get_vec(p.w4);
    get_vec(p.readout);
    if (!in) throw Error("truncated parameter file");
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Serial reference path
// ---------------------------------------------------------------------------

PotentialOutput forward_serial(const AtomicSystem& system,
                               const ToyPotentialParams& params,
                               int n_threads) {
    params.validate();
    AtomicSystem sys = ensure_periodic(system, params.r_atom);
    sys.validate();
    const int F = params.feature_width;
    const int K = params.basis_count;
    const int L = params.layers;
    const std::int64_t n = static_cast<std::int64_t>(sys.size());

    AtomGraph graph = build_neighbor_list(sys, params.r_atom, n_threads);
    const std::int64_t ne = static_cast<std::int64_t>(graph.num_edges());

    std::vector<double> s_edge(static_cast<std::size_t>(ne) * F);
    for (std::int64_t e = 0; e < ne; ++e)
        radial_channel(params.basis_proj.data(), F, K, params.r_atom,
                       graph.distance[e], s_edge.data() + e * F, nullptr);

    BondSet bonds;
    std::vector<std::pair<std::int64_t, std::int64_t>> line_pairs;
    if (params.threebody()) {
        bonds = collect_bonds(graph, params.r_3body, 0.0);
        line_pairs = serial_line_pairs(graph, bonds);
    }
    const std::int64_t nb = static_cast<std::int64_t>(bonds.size());

    // forward -----------------------------------------------------------
    std::vector<std::vector<double>> h_in(L + 1);
    std::vector<std::vector<double>> z(L);
    std::vector<double> h(static_cast<std::size_t>(n) * F);
    for (std::int64_t i = 0; i < n; ++i)
        std::memcpy(h.data() + i * F,
                    params.embedding.data() + sys.species[i] * F,
                    F * sizeof(double));

    std::vector<double> t_init, z3, t_post, z4, q;
    if (params.threebody()) {
        t_init.assign(static_cast<std::size_t>(nb) * F, 0.0);
        z3.assign(static_cast<std::size_t>(nb) * F, 0.0);
        t_post.assign(static_cast<std::size_t>(nb) * F, 0.0);
        z4.assign(static_cast<std::size_t>(n) * F, 0.0);
        q.assign(static_cast<std::size_t>(n) * F, 0.0);
    }

    std::vector<double> m(static_cast<std::size_t>(n) * F);
    std::vector<double> scratch(F);
    for (int l = 0; l < L; ++l) {
        if (params.threebody() && l == L - 1) {
            // bond init
            for (std::int64_t b = 0; b < nb; ++b)
                radial_channel(params.basis3_proj.data(), F, K, params.r_3body,
                               graph.distance[bonds.edge_of_bond[b]],
                               t_init.data() + b * F, nullptr);
            // bond conv
            std::vector<double> m3(static_cast<std::size_t>(nb) * F, 0.0);
            for (const auto& [e, ep] : line_pairs) {
                std::int64_t ee = bonds.edge_of_bond[e];
                std::int64_t eep = bonds.edge_of_bond[ep];
                double c = -graph.vector[ee].dot(graph.vector[eep]) /
                           (graph.distance[ee] * graph.distance[eep]);
                const double* te = t_init.data() + e * F;
                double* dst = m3.data() + ep * F;
                for (int f = 0; f < F; ++f) dst[f] += c * te[f];
            }
            for (std::int64_t b = 0; b < nb; ++b) {
                matvec(params.w3.data(), F, m3.data() + b * F, scratch.data());
                double w3f = cutoff_fn(graph.distance[bonds.edge_of_bond[b]],
                                       params.r_3body);
                double* zb = z3.data() + b * F;
                double* tb = t_post.data() + b * F;
                const double* ti = t_init.data() + b * F;
                for (int f = 0; f < F; ++f) {
                    zb[f] = scratch[f];
                    tb[f] = ti[f] + w3f * std::tanh(zb[f]);
                }
            }
            // atom injection
            for (std::int64_t b = 0; b < nb; ++b) {
                std::int64_t u = graph.dst[bonds.edge_of_bond[b]];
                const double* tb = t_post.data() + b * F;
                double* qu = q.data() + u * F;
                for (int f = 0; f < F; ++f) qu[f] += tb[f];
            }
            for (std::int64_t i = 0; i < n; ++i) {
                matvec(params.w4.data(), F, q.data() + i * F, scratch.data());
                double* zi = z4.data() + i * F;
                double* hi = h.data() + i * F;
                for (int f = 0; f < F; ++f) {
                    zi[f] = scratch[f];
                    hi[f] += std::tanh(zi[f]);
                }
            }
        }

        h_in[l] = h;
        std::fill(m.begin(), m.end(), 0.0);
        for (std::int64_t e = 0; e < ne; ++e) {
            const double* hs = h_in[l].data() + graph.src[e] * F;
            const double* se = s_edge.data() + e * F;
            double* mi = m.data() + graph.dst[e] * F;
            for (int f = 0; f < F; ++f) mi[f] += hs[f] * se[f];
        }
        z[l].resize(static_cast<std::size_t>(n) * F);
        const double* W = params.layer_w.data() +
                          static_cast<std::size_t>(l) * F * F;
        const double* bias = params.layer_b.data() + static_cast<std::size_t>(l) * F;
        for (std::int64_t i = 0; i < n; ++i) {
            matvec(W, F, m.data() + i * F, scratch.data());
            double* zi = z[l].data() + i * F;
            double* hi = h.data() + i * F;
            for (int f = 0; f < F; ++f) {
                zi[f] = scratch[f] + bias[f];
                hi[f] += std::tanh(zi[f]);
            }
        }
        check_finite(h.data(), n, F, l, nullptr);
    }
    h_in[L] = h;

    PotentialOutput out;
    out.per_atom.resize(n);
    out.energy = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double ei = 0.0;
        const double* hi = h.data() + i * F;
        for (int f = 0; f < F; ++f) ei += params.readout[f] * hi[f];
        out.per_atom[i] = ei;
        out.energy += ei;
    }

    // backward ----------------------------------------------------------
    std::vector<double> hbar(static_cast<std::size_t>(n) * F);
    for (std::int64_t i = 0; i < n; ++i)
        std::memcpy(hbar.data() + i * F, params.readout.data(),
                    F * sizeof(double));

    std::vector<Vec3> gradpos(n, Vec3{});
    Mat3 virial{};  // sum of g_e (x) v_e, unsymmetrized
    std::vector<double> mbar(static_cast<std::size_t>(n) * F);
    std::vector<double> ds(F);

    auto add_edge_grad = [&](std::int64_t edge, const Vec3& g) {
        gradpos[graph.src[edge]] += g;
        gradpos[graph.dst[edge]] -= g;
        const Vec3& v = graph.vector[edge];
        for (int a = 0; a < 3; ++a)
            for (int bcol = 0; bcol < 3; ++bcol)
                virial[a][bcol] += g[a] * v[bcol];
    };

    for (int l = L - 1; l >= 0; --l) {
        const double* W = params.layer_w.data() +
                          static_cast<std::size_t>(l) * F * F;
        // pass 1: per-atom adjoints of the pre-activation
        for (std::int64_t i = 0; i < n; ++i) {
            const double* zi = z[l].data() + i * F;
            const double* hb = hbar.data() + i * F;
            for (int f = 0; f < F; ++f)
                scratch[f] = hb[f] * sech2_of_tanh(std::tanh(zi[f]));
            matvec_t(W, F, scratch.data(), mbar.data() + i * F);
        }
        // pass 2: edge scatter
        for (std::int64_t e = 0; e < ne; ++e) {
            const double* mb = mbar.data() + graph.dst[e] * F;
            const double* hs = h_in[l].data() + graph.src[e] * F;
            const double* se = s_edge.data() + e * F;
            double* hbs = hbar.data() + graph.src[e] * F;
            double dbar = 0.0;
            radial_channel(params.basis_proj.data(), F, K, params.r_atom,
                           graph.distance[e], scratch.data(), ds.data());
            for (int f = 0; f < F; ++f) {
                hbs[f] += mb[f] * se[f];
                dbar += mb[f] * hs[f] * ds[f];
            }
            add_edge_grad(e, graph.vector[e] * (dbar / graph.distance[e]));
        }

        if (params.threebody() && l == L - 1) {
            std::vector<double> tbar(static_cast<std::size_t>(nb) * F, 0.0);
            std::vector<Vec3> vbar(nb, Vec3{});
            std::vector<double> m3bar(static_cast<std::size_t>(nb) * F, 0.0);

            // reverse atom injection
            for (std::int64_t i = 0; i < n; ++i) {
                const double* zi = z4.data() + i * F;
                const double* hb = hbar.data() + i * F;
                for (int f = 0; f < F; ++f)
                    scratch[f] = hb[f] * sech2_of_tanh(std::tanh(zi[f]));
                matvec_t(params.w4.data(), F, scratch.data(),
                         mbar.data() + i * F);  // reuse mbar as qbar
            }
            std::vector<double> tpbar(static_cast<std::size_t>(nb) * F);
            for (std::int64_t b = 0; b < nb; ++b)
                std::memcpy(tpbar.data() + b * F,
                            mbar.data() + graph.dst[bonds.edge_of_bond[b]] * F,
                            F * sizeof(double));

            // reverse bond conv
            for (std::int64_t b = 0; b < nb; ++b) {
                std::int64_t edge = bonds.edge_of_bond[b];
                double d = graph.distance[edge];
                double w3f = cutoff_fn(d, params.r_3body);
                double dw3f = cutoff_deriv(d, params.r_3body);
                const double* zb = z3.data() + b * F;
                const double* tpb = tpbar.data() + b * F;
                double* tb = tbar.data() + b * F;
                double dbar = 0.0;
                for (int f = 0; f < F; ++f) {
                    double th = std::tanh(zb[f]);
                    tb[f] += tpb[f];  // identity path
                    dbar += tpb[f] * th * dw3f;
                    scratch[f] = tpb[f] * w3f * sech2_of_tanh(th);
                }
                matvec_t(params.w3.data(), F, scratch.data(),
                         m3bar.data() + b * F);
                vbar[b] += graph.vector[edge] * (dbar / d);
            }
            for (const auto& [e, ep] : line_pairs) {
                std::int64_t ee = bonds.edge_of_bond[e];
                std::int64_t eep = bonds.edge_of_bond[ep];
                double de = graph.distance[ee];
                double dep = graph.distance[eep];
                double c = -graph.vector[ee].dot(graph.vector[eep]) / (de * dep);
                const double* m3b = m3bar.data() + ep * F;
                const double* te = t_init.data() + e * F;
                double* tb = tbar.data() + e * F;
                double cbar = 0.0;
                for (int f = 0; f < F; ++f) {
                    tb[f] += c * m3b[f];
                    cbar += m3b[f] * te[f];
                }
                Vec3 dc_de, dc_dep;
                cos_gradients(graph.vector[ee], de, graph.vector[eep], dep, c,
                              dc_de, dc_dep);
                vbar[e] += dc_de * cbar;
                vbar[ep] += dc_dep * cbar;
            }
            // reverse bond init
            for (std::int64_t b = 0; b < nb; ++b) {
                std::int64_t edge = bonds.edge_of_bond[b];
                radial_channel(params.basis3_proj.data(), F, K, params.r_3body,
                               graph.distance[edge], scratch.data(), ds.data());
                const double* tb = tbar.data() + b * F;
                double dbar = 0.0;
                for (int f = 0; f < F; ++f) dbar += tb[f] * ds[f];
                vbar[b] += graph.vector[edge] * (dbar / graph.distance[edge]);
            }
            for (std::int64_t b = 0; b < nb; ++b)
                add_edge_grad(bonds.edge_of_bond[b], vbar[b]);
        }
    }

    out.forces.resize(n);
    for (std::int64_t i = 0; i < n; ++i) out.forces[i] = -gradpos[i];
    double volume = std::abs(sys.lattice.det());
    for (int a = 0; a < 3; ++a)
        for (int bcol = 0; bcol < 3; ++bcol)
            out.stress[a][bcol] =
                0.5 * (virial[a][bcol] + virial[bcol][a]) / volume;
    return out;
}

// ---------------------------------------------------------------------------
// Distributed path
// ---------------------------------------------------------------------------

namespace {

struct BondLocalInfo {
    // per canonical owned bond, ascending global bond id
    std::vector<std::int64_t> global_id;
    std::vector<std::int64_t> local_row;
    std::vector<std::int64_t> atom_src_local;
    std::vector<std::int64_t> atom_dst_local;
};

struct PartWork {
    // atoms
    std::vector<double> h;                  // rows_a * F
    std::vector<std::vector<double>> h_in;  // per layer
    std::vector<std::vector<double>> z;     // per layer, owned rows valid
    std::vector<double> s_edge;             // owned_E * F
    std::vector<std::int64_t> own_atom_rows;  // canonical rows, owned region
    // bonds
    std::vector<double> t_init, z3, t_post, z4, q;
    BondLocalInfo own_bonds;
    // backward state
    std::vector<double> mbar;
    Mat3 virial{};
};

}  // namespace

PotentialOutput forward_distributed(const Distributed& dist,
                                    const ToyPotentialParams& params,
                                    StepTiming* timing) {
    params.validate();
    using clock = std::chrono::steady_clock;
    auto elapsed = [](clock::time_point t0) {
        return std::chrono::duration<double>(clock::now() - t0).count();
    };

    const AtomGraph& graph = dist.graph();
    const AtomicSystem& sys = dist.system();
    const int F = params.feature_width;
    const int K = params.basis_count;
    const int L = params.layers;
    const int p = dist.num_partitions();
    const bool threebody = params.threebody();
    if (threebody && !dist.has_line_graph())
        throw Error("three-body parameters require a line graph in the "
                    "distributed handle");
    if (std::abs(graph.cutoff - params.r_atom) > 1e-12)
        throw Error("distributed handle cutoff does not match the parameters");

    std::vector<PartWork> work(p);
    DistributedFeatures h = dist.make_atom_features(F);
    DistributedFeatures t_feat =
        threebody ? dist.make_bond_features(F) : DistributedFeatures{};

    auto t0 = clock::now();
    // ----- feature calculation: embeddings, radial channels, local indices
    dist.parallel_for_partitions([&](int pi) {
        const AtomPartition& part = dist.atom_parts().parts[pi];
        const SpanLayout& layout = part.layout;
        PartWork& w = work[pi];
        std::int64_t rows = layout.size();
        w.h.assign(static_cast<std::size_t>(rows) * F, 0.0);
        for (std::int64_t r = 0; r < rows; ++r)
            std::memcpy(w.h.data() + r * F,
                        params.embedding.data() +
                            sys.species[layout.node_array[r]] * F,
                        F * sizeof(double));
        for (std::int64_t r = 0; r < layout.owned_end(); ++r)
            if (layout.local_of(layout.node_array[r]) == r)
                w.own_atom_rows.push_back(r);

        const auto& owned = part.owned_edges;
        w.s_edge.assign(owned.size() * static_cast<std::size_t>(F), 0.0);
        for (std::size_t e = 0; e < owned.size(); ++e)
            radial_channel(params.basis_proj.data(), F, K, params.r_atom,
                           graph.distance[owned[e]], w.s_edge.data() + e * F,
                           nullptr);

        if (threebody) {
            const LineGraphPartition& lp = dist.line_parts().parts[pi];
            const BondSet& bonds = dist.line_parts().bonds;
            std::int64_t rows_b = lp.layout.size();
            w.t_init.assign(static_cast<std::size_t>(rows_b) * F, 0.0);
            w.z3.assign(static_cast<std::size_t>(rows_b) * F, 0.0);
            w.t_post.assign(static_cast<std::size_t>(rows_b) * F, 0.0);
            w.z4.assign(static_cast<std::size_t>(rows) * F, 0.0);
            w.q.assign(static_cast<std::size_t>(rows) * F, 0.0);
            for (std::int64_t r = 0; r < lp.layout.owned_end(); ++r) {
                std::int64_t g = lp.layout.node_array[r];
                if (lp.layout.local_of(g) != r) continue;
                std::int64_t edge = bonds.edge_of_bond[g];
                w.own_bonds.global_id.push_back(g);
                w.own_bonds.local_row.push_back(r);
                std::int64_t ls = layout.local_of(graph.src[edge]);
                std::int64_t ld = layout.local_of(graph.dst[edge]);
                if (ls < 0 || ld < 0)
                    throw Error("dangling bond reference in partition " +
                                std::to_string(pi));
                w.own_bonds.atom_src_local.push_back(ls);
                w.own_bonds.atom_dst_local.push_back(ld);
            }
            // ascending global id across [PURE | TO] blocks
            std::vector<std::size_t> order(w.own_bonds.global_id.size());
            for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
            std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return w.own_bonds.global_id[a] < w.own_bonds.global_id[b];
            });
            BondLocalInfo sorted;
            for (std::size_t k : order) {
                sorted.global_id.push_back(w.own_bonds.global_id[k]);
                sorted.local_row.push_back(w.own_bonds.local_row[k]);
                sorted.atom_src_local.push_back(w.own_bonds.atom_src_local[k]);
                sorted.atom_dst_local.push_back(w.own_bonds.atom_dst_local[k]);
            }
            w.own_bonds = std::move(sorted);
        }
    });
    // publish h blocks into the DistributedFeatures container
    for (int pi = 0; pi < p; ++pi) h.blocks[pi] = std::move(work[pi].h);
    if (timing) timing->feature_calculation += elapsed(t0);

    // ----- forward
    t0 = clock::now();
    for (int l = 0; l < L; ++l) {
        if (l > 0) {
            dist.sync_atom_duplicates(h);
            dist.atom_transfer(h);
        }
        if (threebody && l == L - 1) {
            const BondSet& bonds = dist.line_parts().bonds;
            // bond init on owned bonds
            dist.parallel_for_partitions([&](int pi) {
                PartWork& w = work[pi];
                for (std::size_t k = 0; k < w.own_bonds.global_id.size(); ++k) {
                    std::int64_t g = w.own_bonds.global_id[k];
                    std::int64_t r = w.own_bonds.local_row[k];
                    radial_channel(params.basis3_proj.data(), F, K,
                                   params.r_3body,
                                   graph.distance[bonds.edge_of_bond[g]],
                                   w.t_init.data() + r * F, nullptr);
                }
                std::memcpy(t_feat.blocks[pi].data(), w.t_init.data(),
                            w.t_init.size() * sizeof(double));
            });
            dist.sync_bond_duplicates(t_feat);
            dist.bond_transfer(t_feat);
            // pull transferred init values back into the workspace copy
            dist.parallel_for_partitions([&](int pi) {
                PartWork& w = work[pi];
                std::memcpy(w.t_init.data(), t_feat.blocks[pi].data(),
                            w.t_init.size() * sizeof(double));
            });
            // bond conv + injection
            dist.parallel_for_partitions([&](int pi) {
                PartWork& w = work[pi];
                const LineGraphPartition& lp = dist.line_parts().parts[pi];
                std::vector<double> m3(w.t_init.size(), 0.0);
                std::vector<double> scratch(F);
                for (const auto& [le, lep] : lp.line_edges) {
                    std::int64_t ee =
                        bonds.edge_of_bond[lp.layout.node_array[le]];
                    std::int64_t eep =
                        bonds.edge_of_bond[lp.layout.node_array[lep]];
                    double c = -graph.vector[ee].dot(graph.vector[eep]) /
                               (graph.distance[ee] * graph.distance[eep]);
                    const double* te = w.t_init.data() + le * F;
                    double* dst = m3.data() + lep * F;
                    for (int f = 0; f < F; ++f) dst[f] += c * te[f];
                }
                for (std::size_t k = 0; k < w.own_bonds.global_id.size(); ++k) {
                    std::int64_t r = w.own_bonds.local_row[k];
                    std::int64_t edge =
                        bonds.edge_of_bond[w.own_bonds.global_id[k]];
                    matvec(params.w3.data(), F, m3.data() + r * F,
                           scratch.data());
                    double w3f = cutoff_fn(graph.distance[edge], params.r_3body);
                    double* zb = w.z3.data() + r * F;
                    double* tb = w.t_post.data() + r * F;
                    const double* ti = w.t_init.data() + r * F;
                    for (int f = 0; f < F; ++f) {
                        zb[f] = scratch[f];
                        tb[f] = ti[f] + w3f * std::tanh(zb[f]);
                    }
                }
                // injection into owned atoms
                for (std::size_t k = 0; k < w.own_bonds.global_id.size(); ++k) {
                    std::int64_t r = w.own_bonds.local_row[k];
                    std::int64_t u = w.own_bonds.atom_dst_local[k];
                    const double* tb = w.t_post.data() + r * F;
                    double* qu = w.q.data() + u * F;
                    for (int f = 0; f < F; ++f) qu[f] += tb[f];
                }
                for (std::int64_t r : w.own_atom_rows) {
                    matvec(params.w4.data(), F, w.q.data() + r * F,
                           scratch.data());
                    double* zi = w.z4.data() + r * F;
                    double* hi = h.row(pi, r);
                    for (int f = 0; f < F; ++f) {
                        zi[f] = scratch[f];
                        hi[f] += std::tanh(zi[f]);
                    }
                }
            });
            dist.sync_atom_duplicates(h);
            dist.atom_transfer(h);
        }

        dist.parallel_for_partitions([&](int pi) {
            PartWork& w = work[pi];
            const AtomPartition& part = dist.atom_parts().parts[pi];
            w.h_in.resize(L);
            w.z.resize(L);
            w.h_in[l] = h.blocks[pi];
            std::vector<double> m(h.blocks[pi].size(), 0.0);
            std::vector<double> scratch(F);
            const auto& owned = part.owned_edges;
            for (std::size_t e = 0; e < owned.size(); ++e) {
                const double* hs = w.h_in[l].data() + part.local_src[e] * F;
                const double* se = w.s_edge.data() + e * F;
                double* mi = m.data() + part.local_dst[e] * F;
                for (int f = 0; f < F; ++f) mi[f] += hs[f] * se[f];
            }
            w.z[l].assign(h.blocks[pi].size(), 0.0);
            const double* W = params.layer_w.data() +
                              static_cast<std::size_t>(l) * F * F;
            const double* bias =
                params.layer_b.data() + static_cast<std::size_t>(l) * F;
            for (std::int64_t r : w.own_atom_rows) {
                matvec(W, F, m.data() + r * F, scratch.data());
                double* zi = w.z[l].data() + r * F;
                double* hi = h.row(pi, r);
                for (int f = 0; f < F; ++f) {
                    zi[f] = scratch[f] + bias[f];
                    hi[f] += std::tanh(zi[f]);
                }
            }
            check_finite(h.blocks[pi].data(), part.layout.size(), F, l,
                         part.layout.node_array.data());
        });
    }

    PotentialOutput out;
    {
        DistributedFeatures e_feat = dist.make_atom_features(1);
        dist.parallel_for_partitions([&](int pi) {
            PartWork& w = work[pi];
            for (std::int64_t r : w.own_atom_rows) {
                const double* hi = h.row(pi, r);
                double ei = 0.0;
                for (int f = 0; f < F; ++f) ei += params.readout[f] * hi[f];
                *e_feat.row(pi, r) = ei;
            }
        });
        out.per_atom = dist.aggregate(e_feat);
        out.energy = 0.0;
        for (double ei : out.per_atom) out.energy += ei;
    }
    if (timing) timing->forward_pass += elapsed(t0);

    // ----- backward
    t0 = clock::now();
    DistributedFeatures hbar = dist.make_atom_features(F);
    DistributedFeatures gradpos = dist.make_atom_features(3);
    dist.parallel_for_partitions([&](int pi) {
        for (std::int64_t r : work[pi].own_atom_rows)
            std::memcpy(hbar.row(pi, r), params.readout.data(),
                        F * sizeof(double));
    });

    const BondSet* bonds =
        threebody ? &dist.line_parts().bonds : nullptr;

    for (int l = L - 1; l >= 0; --l) {
        dist.parallel_for_partitions([&](int pi) {
            PartWork& w = work[pi];
            const AtomPartition& part = dist.atom_parts().parts[pi];
            const double* W = params.layer_w.data() +
                              static_cast<std::size_t>(l) * F * F;
            std::vector<double> scratch(F), ds(F);
            w.mbar.assign(h.blocks[pi].size(), 0.0);
            for (std::int64_t r : w.own_atom_rows) {
                const double* zi = w.z[l].data() + r * F;
                const double* hb = hbar.row(pi, r);
                for (int f = 0; f < F; ++f)
                    scratch[f] = hb[f] * sech2_of_tanh(std::tanh(zi[f]));
                matvec_t(W, F, scratch.data(), w.mbar.data() + r * F);
            }
            const auto& owned = part.owned_edges;
            for (std::size_t e = 0; e < owned.size(); ++e) {
                std::int64_t edge = owned[e];
                const double* mb = w.mbar.data() + part.local_dst[e] * F;
                const double* hs = w.h_in[l].data() + part.local_src[e] * F;
                const double* se = w.s_edge.data() + e * F;
                double* hbs = hbar.row(pi, part.local_src[e]);
                double dbar = 0.0;
                radial_channel(params.basis_proj.data(), F, K, params.r_atom,
                               graph.distance[edge], scratch.data(), ds.data());
                for (int f = 0; f < F; ++f) {
                    hbs[f] += mb[f] * se[f];
                    dbar += mb[f] * hs[f] * ds[f];
                }
                Vec3 g = graph.vector[edge] * (dbar / graph.distance[edge]);
                double* gs = gradpos.row(pi, part.local_src[e]);
                double* gd = gradpos.row(pi, part.local_dst[e]);
                const Vec3& v = graph.vector[edge];
                for (int a = 0; a < 3; ++a) {
                    gs[a] += g[a];
                    gd[a] -= g[a];
                    for (int bcol = 0; bcol < 3; ++bcol)
                        w.virial[a][bcol] += g[a] * v[bcol];
                }
            }
        });

        if (threebody && l == L - 1) {
            dist.atom_transfer_transpose(hbar);  // undo post-injection exchange

            DistributedFeatures tbar = dist.make_bond_features(F);
            DistributedFeatures vbar = dist.make_bond_features(3);
            dist.parallel_for_partitions([&](int pi) {
                PartWork& w = work[pi];
                const LineGraphPartition& lp = dist.line_parts().parts[pi];
                std::vector<double> scratch(F), ds(F);
                std::vector<double> m3bar(w.t_init.size(), 0.0);
                std::vector<double> tpbar(w.t_init.size(), 0.0);

                // reverse atom injection
                for (std::int64_t r : w.own_atom_rows) {
                    const double* zi = w.z4.data() + r * F;
                    const double* hb = hbar.row(pi, r);
                    for (int f = 0; f < F; ++f)
                        scratch[f] = hb[f] * sech2_of_tanh(std::tanh(zi[f]));
                    matvec_t(params.w4.data(), F, scratch.data(),
                             w.mbar.data() + r * F);  // qbar
                }
                for (std::size_t k = 0; k < w.own_bonds.global_id.size(); ++k)
                    std::memcpy(
                        tpbar.data() + w.own_bonds.local_row[k] * F,
                        w.mbar.data() + w.own_bonds.atom_dst_local[k] * F,
                        F * sizeof(double));

                // reverse bond conv (owned bonds)
                for (std::size_t k = 0; k < w.own_bonds.global_id.size(); ++k) {
                    std::int64_t r = w.own_bonds.local_row[k];
                    std::int64_t edge =
                        bonds->edge_of_bond[w.own_bonds.global_id[k]];
                    double d = graph.distance[edge];
                    double w3f = cutoff_fn(d, params.r_3body);
                    double dw3f = cutoff_deriv(d, params.r_3body);
                    const double* zb = w.z3.data() + r * F;
                    const double* tpb = tpbar.data() + r * F;
                    double* tb = tbar.row(pi, r);
                    double dbar = 0.0;
                    for (int f = 0; f < F; ++f) {
                        double th = std::tanh(zb[f]);
                        tb[f] += tpb[f];
                        dbar += tpb[f] * th * dw3f;
                        scratch[f] = tpb[f] * w3f * sech2_of_tanh(th);
                    }
                    matvec_t(params.w3.data(), F, scratch.data(),
                             m3bar.data() + r * F);
                    Vec3 add = graph.vector[edge] * (dbar / d);
                    double* vb = vbar.row(pi, r);
                    for (int a = 0; a < 3; ++a) vb[a] += add[a];
                }
                // reverse line-edge traversal
                for (const auto& [le, lep] : lp.line_edges) {
                    std::int64_t ee =
                        bonds->edge_of_bond[lp.layout.node_array[le]];
                    std::int64_t eep =
                        bonds->edge_of_bond[lp.layout.node_array[lep]];
                    double de = graph.distance[ee];
                    double dep = graph.distance[eep];
                    double c =
                        -graph.vector[ee].dot(graph.vector[eep]) / (de * dep);
                    const double* m3b = m3bar.data() + lep * F;
                    const double* te = w.t_init.data() + le * F;
                    double* tb = tbar.row(pi, le);
                    double cbar = 0.0;
                    for (int f = 0; f < F; ++f) {
                        tb[f] += c * m3b[f];
                        cbar += m3b[f] * te[f];
                    }
                    Vec3 dc_de, dc_dep;
                    cos_gradients(graph.vector[ee], de, graph.vector[eep], dep,
                                  c, dc_de, dc_dep);
                    double* vbe = vbar.row(pi, le);
                    double* vbep = vbar.row(pi, lep);
                    for (int a = 0; a < 3; ++a) {
                        vbe[a] += dc_de[a] * cbar;
                        vbep[a] += dc_dep[a] * cbar;
                    }
                }
            });
            dist.bond_transfer_transpose(tbar);
            dist.bond_transfer_transpose(vbar);
            // reverse bond init + convert vbar to positional gradients
            dist.parallel_for_partitions([&](int pi) {
                PartWork& w = work[pi];
                std::vector<double> scratch(F), ds(F);
                for (std::size_t k = 0; k < w.own_bonds.global_id.size(); ++k) {
                    std::int64_t r = w.own_bonds.local_row[k];
                    std::int64_t edge =
                        bonds->edge_of_bond[w.own_bonds.global_id[k]];
                    double d = graph.distance[edge];
                    radial_channel(params.basis3_proj.data(), F, K,
                                   params.r_3body, d, scratch.data(),
                                   ds.data());
                    const double* tb = tbar.row(pi, r);
                    double dbar = 0.0;
                    for (int f = 0; f < F; ++f) dbar += tb[f] * ds[f];
                    Vec3 g = graph.vector[edge] * (dbar / d);
                    double* vb = vbar.row(pi, r);
                    Vec3 total{vb[0] + g.x, vb[1] + g.y, vb[2] + g.z};
                    double* gs = gradpos.row(pi, w.own_bonds.atom_src_local[k]);
                    double* gd = gradpos.row(pi, w.own_bonds.atom_dst_local[k]);
                    const Vec3& v = graph.vector[edge];
                    for (int a = 0; a < 3; ++a) {
                        gs[a] += total[a];
                        gd[a] -= total[a];
                        for (int bcol = 0; bcol < 3; ++bcol)
                            w.virial[a][bcol] += total[a] * v[bcol];
                    }
                }
            });
        }

        if (l > 0) dist.atom_transfer_transpose(hbar);
    }

    dist.atom_transfer_transpose(gradpos);
    std::vector<double> grad_global = dist.aggregate(gradpos);
    const std::int64_t n = graph.num_nodes;
    out.forces.resize(n);
    for (std::int64_t i = 0; i < n; ++i)
        out.forces[i] = Vec3{-grad_global[i * 3 + 0], -grad_global[i * 3 + 1],
                             -grad_global[i * 3 + 2]};
    Mat3 virial{};
    for (int pi = 0; pi < p; ++pi)
        for (int a = 0; a < 3; ++a)
            for (int bcol = 0; bcol < 3; ++bcol)
                virial[a][bcol] += work[pi].virial[a][bcol];
    double volume = std::abs(sys.lattice.det());
    for (int a = 0; a < 3; ++a)
        for (int bcol = 0; bcol < 3; ++bcol)
            out.stress[a][bcol] =
                0.5 * (virial[a][bcol] + virial[bcol][a]) / volume;
    if (timing) timing->backward_pass += elapsed(t0);
    return out;
}

// ---------------------------------------------------------------------------
// Finite-difference oracles
// ---------------------------------------------------------------------------

std::vector<Vec3> finite_difference_forces(const AtomicSystem& system,
                                           const ToyPotentialParams& params,
                                           double eps) {
    if (eps < 1e-6 || eps > 1e-2)
        throw Error("finite-difference step must lie in [1e-6, 1e-2] A");
    std::vector<Vec3> forces(system.size(), Vec3{});
    AtomicSystem probe = system;
    for (std::size_t i = 0; i < system.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            probe.positions[i][k] = system.positions[i][k] + eps;
            double ep = forward_serial(probe, params).energy;
            probe.positions[i][k] = system.positions[i][k] - eps;
            double em = forward_serial(probe, params).energy;
            probe.positions[i][k] = system.positions[i][k];
            forces[i][k] = -(ep - em) / (2.0 * eps);
        }
    }
    return forces;
}

Mat3 finite_difference_stress(const AtomicSystem& system,
                              const ToyPotentialParams& params, double eps) {
    if (eps <= 0.0 || eps > 1e-3)
        throw Error("strain step must lie in (0, 1e-3]");
    AtomicSystem base = ensure_periodic(system, params.r_atom);
    double volume = std::abs(base.lattice.det());
    auto deform = [&](int alpha, int beta, double strain) {
        // x_alpha += strain * x_beta for every position and lattice row
        AtomicSystem s = base;
        for (Vec3& r : s.positions) r[alpha] += strain * r[beta];
        for (int row = 0; row < 3; ++row)
            s.lattice[row][alpha] += strain * s.lattice[row][beta];
        return s;
    };
    Mat3 raw{};
    for (int a = 0; a < 3; ++a)
        for (int bcol = 0; bcol < 3; ++bcol) {
            double ep = forward_serial(deform(a, bcol, eps), params).energy;
            double em = forward_serial(deform(a, bcol, -eps), params).energy;
            raw[a][bcol] = (ep - em) / (2.0 * eps * volume);
        }
    Mat3 out{};
    for (int a = 0; a < 3; ++a)
        for (int bcol = 0; bcol < 3; ++bcol)
            out[a][bcol] = 0.5 * (raw[a][bcol] + raw[bcol][a]);
    return out;
}

}  // namespace graphmd
