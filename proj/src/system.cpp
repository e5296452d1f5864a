#include "graphmd/system.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace graphmd {

namespace {

constexpr std::size_t kMaxAtoms = 50'000'000;

const std::array<const char*, 119> kSymbols = {
    "X",  "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na",
    "Mg", "Al", "Si", "P",  "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",
    "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br",
    "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag",
    "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr",
    "Nd", "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu",
    "Hf", "Ta", "W",  "Re", "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi",
    "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U",  "Np", "Pu", "Am",
    "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh",
    "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

// Standard atomic weights (amu) up to Xe; heavier elements fall back to a
// linear estimate, which is fine for the toy dynamics here.
const std::array<double, 55> kMasses = {
    0.0,     1.008,   4.0026,  6.94,    9.0122,  10.81,   12.011, 14.007,
    15.999,  18.998,  20.180,  22.990,  24.305,  26.982,  28.085, 30.974,
    32.06,   35.45,   39.948,  39.098,  40.078,  44.956,  47.867, 50.942,
    51.996,  54.938,  55.845,  58.933,  58.693,  63.546,  65.38,  69.723,
    72.630,  74.922,  78.971,  79.904,  83.798,  85.468,  87.62,  88.906,
    91.224,  92.906,  95.95,   97.0,    101.07,  102.91,  106.42, 107.87,
    112.41,  114.82,  118.71,  121.76,  127.60,  126.90,  131.29};

const std::unordered_map<std::string, int>& symbol_table() {
    static const std::unordered_map<std::string, int> table = [] {
        std::unordered_map<std::string, int> t;
        for (int z = 1; z <= 118; ++z) t.emplace(kSymbols[z], z);
        return t;
    }();
    return table;
}

[[noreturn]] void parse_fail(const std::string& path, int line,
                             const std::string& what) {
    throw Error(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Mat3 Mat3::inverse() const {
    double d = det();
    if (std::abs(d) < 1e-10) throw Error("lattice is singular (|det| < 1e-10)");
    const Vec3& a = rows[0];
    const Vec3& b = rows[1];
    const Vec3& c = rows[2];
    // inverse of a row matrix: columns of inv are (b x c)/d etc.
    Vec3 bc = b.cross(c) / d;
    Vec3 ca = c.cross(a) / d;
    Vec3 ab = a.cross(b) / d;
    Mat3 inv;
    inv.rows[0] = {bc.x, ca.x, ab.x};
    inv.rows[1] = {bc.y, ca.y, ab.y};
    inv.rows[2] = {bc.z, ca.z, ab.z};
    return inv;
}

void AtomicSystem::validate() const {
    if (species.size() != positions.size())
        throw Error("species length does not match atom count");
    if (any_pbc() && std::abs(lattice.det()) < 1e-10)
        throw Error("periodic system requires an invertible lattice");
}

FractionalCoords AtomicSystem::fractional() const {
    Mat3 inv = lattice.inverse();
    FractionalCoords f;
    f.coords.reserve(positions.size());
    for (const Vec3& r : positions) f.coords.push_back(inv.rowvec_mul(r));
    return f;
}

double AtomicSystem::perpendicular_width(int axis) const {
    const Vec3& b = lattice[(axis + 1) % 3];
    const Vec3& c = lattice[(axis + 2) % 3];
    double area = b.cross(c).norm();
    if (area <= 0.0) throw Error("degenerate cell");
    return std::abs(lattice.det()) / area;
}

AtomicSystem load_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);

    std::string line;
    if (!std::getline(in, line)) parse_fail(path, 1, "empty file");
    std::size_t natoms = 0;
    try {
        natoms = std::stoul(line);
    } catch (...) {
        parse_fail(path, 1, "expected atom count, got '" + line + "'");
    }

    if (!std::getline(in, line)) parse_fail(path, 2, "missing comment line");
    AtomicSystem sys;

    // Extract Lattice="ax ay az bx by bz cx cy cz" from the comment line.
    auto pos = line.find("Lattice=\"");
    bool have_lattice = pos != std::string::npos;
    if (have_lattice) {
        auto start = pos + 9;
        auto end = line.find('"', start);
        if (end == std::string::npos) parse_fail(path, 2, "unterminated Lattice field");
        std::istringstream ls(line.substr(start, end - start));
        std::array<double, 9> v{};
        for (double& x : v)
            if (!(ls >> x)) parse_fail(path, 2, "Lattice needs 9 numbers");
        sys.lattice[0] = {v[0], v[1], v[2]};
        sys.lattice[1] = {v[3], v[4], v[5]};
        sys.lattice[2] = {v[6], v[7], v[8]};
    }

    auto pbc_pos = line.find("pbc=\"");
    if (pbc_pos != std::string::npos) {
        auto start = pbc_pos + 5;
        auto end = line.find('"', start);
        std::istringstream ps(line.substr(start, end - start));
        std::string tok;
        for (int k = 0; k < 3; ++k) {
            if (!(ps >> tok)) parse_fail(path, 2, "pbc needs 3 flags");
            sys.pbc[k] = (tok == "T" || tok == "True" || tok == "true" || tok == "1");
        }
    }
    if (!have_lattice) {
        if (sys.any_pbc())
            parse_fail(path, 2, "periodic system requires a Lattice field");
        sys.lattice = Mat3::identity();
    }

    sys.positions.reserve(natoms);
    sys.species.reserve(natoms);
    for (std::size_t i = 0; i < natoms; ++i) {
        int lineno = static_cast<int>(i) + 3;
        if (!std::getline(in, line))
            parse_fail(path, lineno, "unexpected end of file");
        std::istringstream as(line);
        std::string sym;
        double x, y, z;
        if (!(as >> sym >> x >> y >> z))
            parse_fail(path, lineno, "expected 'symbol x y z'");
        auto it = symbol_table().find(sym);
        if (it == symbol_table().end())
            parse_fail(path, lineno, "unknown element symbol '" + sym + "'");
        sys.species.push_back(it->second);
        sys.positions.push_back({x, y, z});
    }
    sys.validate();
    return sys;
}

void save_xyz(const AtomicSystem& system, const std::string& path,
              const std::string& comment_extra) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write file: " + path);
    out.precision(17);
    out << system.size() << "\n";
    const Mat3& L = system.lattice;
    out << "Lattice=\"";
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            out << L[i][k] << (i == 2 && k == 2 ? "" : " ");
    out << "\" pbc=\"" << (system.pbc[0] ? "T" : "F") << " "
        << (system.pbc[1] ? "T" : "F") << " " << (system.pbc[2] ? "T" : "F")
        << "\"";
    if (!comment_extra.empty()) out << " " << comment_extra;
    out << "\n";
    for (std::size_t i = 0; i < system.size(); ++i) {
        const Vec3& r = system.positions[i];
        out << z_to_symbol(system.species[i]) << " " << r.x << " " << r.y
            << " " << r.z << "\n";
    }
}

AtomicSystem make_supercell(const AtomicSystem& system,
                            const std::array<int, 3>& reps) {
    for (int r : reps)
        if (r < 1) throw Error("supercell repetitions must be >= 1");
    system.validate();

    std::size_t factor = static_cast<std::size_t>(reps[0]) * reps[1] * reps[2];
    if (system.size() > kMaxAtoms / std::max<std::size_t>(factor, 1))
        throw Error("supercell atom count exceeds limit");

    AtomicSystem out;
    out.pbc = system.pbc;
    for (int k = 0; k < 3; ++k) out.lattice[k] = system.lattice[k] * reps[k];
    out.positions.reserve(system.size() * factor);
    out.species.reserve(system.size() * factor);
    for (int a = 0; a < reps[0]; ++a)
        for (int b = 0; b < reps[1]; ++b)
            for (int c = 0; c < reps[2]; ++c) {
                Vec3 shift = system.lattice[0] * a + system.lattice[1] * b +
                             system.lattice[2] * c;
                for (std::size_t i = 0; i < system.size(); ++i) {
                    out.positions.push_back(system.positions[i] + shift);
                    out.species.push_back(system.species[i]);
                }
            }
    return out;
}

AtomicSystem wrap_positions(const AtomicSystem& system) {
    system.validate();
    AtomicSystem out = system;
    FractionalCoords f = system.fractional();
    for (std::size_t i = 0; i < out.size(); ++i) {
        Vec3 fr = f.coords[i];
        for (int k = 0; k < 3; ++k) {
            fr[k] -= std::floor(fr[k]);
            if (fr[k] >= 1.0) fr[k] = 0.0;  // guard against -1e-17 rounding up
        }
        out.positions[i] = out.lattice.rowvec_mul(fr);
    }
    return out;
}

AtomicSystem random_perturb(const AtomicSystem& system, double amplitude,
                            std::uint64_t seed) {
    if (amplitude < 0.0) throw Error("perturbation amplitude must be >= 0");
    AtomicSystem out = system;
    Rng rng(seed);
    for (Vec3& r : out.positions)
        for (int k = 0; k < 3; ++k)
            r[k] += rng.uniform(-amplitude, amplitude);
    return out;
}

AtomicSystem ensure_periodic(const AtomicSystem& system, double cutoff) {
    if (system.pbc[0] && system.pbc[1] && system.pbc[2]) return system;
    if (cutoff <= 0.0) throw Error("cutoff must be positive");

    AtomicSystem out = system;
    for (int k = 0; k < 3; ++k) {
        if (out.pbc[k]) continue;
        // Extent of the system projected on the axis direction.
        Vec3 dir = out.lattice[k];
        double len = dir.norm();
        if (len == 0.0) dir = {k == 0 ? 1.0 : 0.0, k == 1 ? 1.0 : 0.0,
                               k == 2 ? 1.0 : 0.0};
        else dir = dir / len;
        double lo = std::numeric_limits<double>::max();
        double hi = std::numeric_limits<double>::lowest();
        for (const Vec3& r : out.positions) {
            double s = r.dot(dir);
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        if (out.positions.empty()) lo = hi = 0.0;
        double extent = hi - lo + 2.0 * cutoff;
        out.lattice[k] = dir * extent;
        for (Vec3& r : out.positions) r += dir * (cutoff - lo);
        out.pbc[k] = true;
    }
    out.validate();
    return out;
}

int symbol_to_z(const std::string& symbol) {
    auto it = symbol_table().find(symbol);
    if (it == symbol_table().end())
        throw Error("unknown element symbol '" + symbol + "'");
    return it->second;
}

const std::string& z_to_symbol(int z) {
    static std::array<std::string, 119> cache = [] {
        std::array<std::string, 119> c;
        for (int i = 0; i <= 118; ++i) c[i] = kSymbols[i];
        return c;
    }();
    if (z < 1 || z > 118) throw Error("atomic number out of range");
    return cache[z];
}

double atomic_mass(int z) {
    if (z < 1 || z > 118) throw Error("atomic number out of range");
    if (z < static_cast<int>(kMasses.size())) return kMasses[z];
    return 2.5 * z;  // rough estimate past Xe
}

}  // namespace graphmd
