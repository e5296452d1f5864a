#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace graphmd {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm2() const { return dot(*this); }
    double norm() const { return std::sqrt(norm2()); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

/// 3x3 matrix stored as rows. Lattice rows are the cell vectors, so a point
/// with fractional coordinates f has Cartesian position f.x*row(0) +
/// f.y*row(1) + f.z*row(2).
struct Mat3 {
    std::array<Vec3, 3> rows{};

    Vec3& operator[](int i) { return rows[i]; }
    const Vec3& operator[](int i) const { return rows[i]; }

    double det() const { return rows[0].dot(rows[1].cross(rows[2])); }

    Mat3 inverse() const;

    /// Row-vector product: v * M.
    Vec3 rowvec_mul(const Vec3& v) const {
        return rows[0] * v.x + rows[1] * v.y + rows[2] * v.z;
    }

    static Mat3 identity() {
        Mat3 m;
        m.rows = {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
        return m;
    }
};

struct FractionalCoords {
    std::vector<Vec3> coords;
};

/// Periodic atomic system: Cartesian positions (A), lattice row matrix (A),
/// atomic numbers and periodicity flags. Immutable by convention once built.
struct AtomicSystem {
    std::vector<Vec3> positions;
    Mat3 lattice = Mat3::identity();
    std::vector<int> species;
    std::array<bool, 3> pbc{true, true, true};

    std::size_t size() const { return positions.size(); }

    bool any_pbc() const { return pbc[0] || pbc[1] || pbc[2]; }

    /// Throws on inconsistent sizes or a degenerate lattice.
    void validate() const;

    FractionalCoords fractional() const;

    /// Perpendicular width of the cell along lattice direction `axis`,
    /// i.e. cell volume divided by the area of the opposite face.
    double perpendicular_width(int axis) const;
};

AtomicSystem load_xyz(const std::string& path);
void save_xyz(const AtomicSystem& system, const std::string& path,
              const std::string& comment_extra = "");

AtomicSystem make_supercell(const AtomicSystem& system,
                            const std::array<int, 3>& reps);

AtomicSystem wrap_positions(const AtomicSystem& system);

AtomicSystem random_perturb(const AtomicSystem& system, double amplitude,
                            std::uint64_t seed);

/// For systems with non-periodic directions, returns an equivalent fully
/// periodic system whose box along each non-periodic axis is padded to
/// extent + 2*cutoff so that no spurious image pair falls within cutoff.
/// Fully periodic systems are returned unchanged.
AtomicSystem ensure_periodic(const AtomicSystem& system, double cutoff);

int symbol_to_z(const std::string& symbol);
const std::string& z_to_symbol(int z);
double atomic_mass(int z);

/// Deterministic RNG used everywhere randomness is needed. Distributions are
/// implemented in-line (not via std::*_distribution) so streams are
/// reproducible across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform() {  // [0, 1)
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }
    std::uint64_t next_u64() { return gen_(); }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace graphmd
