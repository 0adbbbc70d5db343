#include "beamgraph/room.hpp"

#include <algorithm>
#include <map>
#include <mutex>
#include <cmath>
#include <numbers>
#include <string>

namespace beamgraph {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kSincHalfWidth = 40;  // taps on each side of the fractional peak
constexpr double kAmpCutoff = 1e-3;  // -60 dB relative to the direct path

double dist3(const Point& a, const Point& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Windowed-sinc splat of one arrival at fractional sample delay.
void add_pulse(std::vector<double>& taps, double delay_samples, double amplitude) {
    const int n = static_cast<int>(taps.size());
    const int lo = std::max(0, static_cast<int>(std::ceil(delay_samples)) - kSincHalfWidth);
    const int hi = std::min(n - 1, static_cast<int>(std::floor(delay_samples)) + kSincHalfWidth);
    for (int i = lo; i <= hi; ++i) {
        const double t = i - delay_samples;
        double sinc = 1.0;
        if (t != 0.0) sinc = std::sin(kPi * t) / (kPi * t);
        const double win = 0.5 + 0.5 * std::cos(kPi * t / (kSincHalfWidth + 1));
        taps[i] += amplitude * sinc * win;
    }
}

}  // namespace

void RoomSpec::validate() const {
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "RoomSpec: dimensions must be positive");
    require(t60 >= 0.0, "RoomSpec: t60 must be non-negative");
    require(speed_of_sound > 0.0, "RoomSpec: speed of sound must be positive");
}

bool RoomSpec::contains(const Point& p) const {
    for (int i = 0; i < 3; ++i)
        if (!(p[i] > 0.0 && p[i] < dims[i])) return false;
    return true;
}

void SceneSpec::validate(const RoomSpec& room) const {
    require(mic_positions.size() >= 2, "SceneSpec: need at least 2 microphones");
    require(ref_index >= 0 && ref_index < static_cast<int>(mic_positions.size()),
            "SceneSpec: ref_index out of range");
    require(grid.counts[0] >= 1 && grid.counts[1] >= 1 && grid.counts[2] >= 1,
            "SceneSpec: grid counts must be >= 1");
    for (const auto& p : mic_positions)
        require(room.contains(p), "SceneSpec: microphone outside room");
    for (const auto& p : oog_positions)
        require(room.contains(p), "SceneSpec: OOG position outside room");
}

namespace {

double eyring_rho(const RoomSpec& room) {
    const double v = room.dims[0] * room.dims[1] * room.dims[2];
    const double s = 2.0 * (room.dims[0] * room.dims[1] + room.dims[0] * room.dims[2] +
                            room.dims[1] * room.dims[2]);
    // Eyring: T60 = 0.161 V / (-S ln(1 - alpha)).
    const double alpha = 1.0 - std::exp(-0.161 * v / (s * room.t60));
    return std::sqrt(std::max(0.0, 1.0 - alpha));
}

// Schroeder T20 estimate (-5..-25 dB fit) of the image-lattice decay for a
// candidate reflection coefficient, using an arrival-energy histogram instead
// of a rendered impulse response. Same enumeration and -60 dB per-image
// cutoff as image_source_air.
double lattice_t60(const RoomSpec& room, double rho, double window_s) {
    const double c = room.speed_of_sound;
    const int fs_hist = 4000;
    const int bins = std::max(64, static_cast<int>(window_s * fs_hist));
    const double max_dist = c * window_s;
    std::vector<double> energy(bins, 0.0);

    const Point src{0.37 * room.dims[0], 0.41 * room.dims[1], 0.43 * room.dims[2]};
    const Point mic{0.63 * room.dims[0], 0.59 * room.dims[1], 0.55 * room.dims[2]};
    const double direct_amp = 1.0 / (4.0 * kPi * dist3(src, mic));

    const std::array<int, 3> n_max = {
        static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[0]))) + 1,
        static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[1]))) + 1,
        static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[2]))) + 1};
    for (int nx = -n_max[0]; nx <= n_max[0]; ++nx)
        for (int qx = 0; qx <= 1; ++qx) {
            const double dx = (1 - 2 * qx) * src[0] + 2.0 * nx * room.dims[0] - mic[0];
            const int rx = std::abs(nx - qx) + std::abs(nx);
            for (int ny = -n_max[1]; ny <= n_max[1]; ++ny)
                for (int qy = 0; qy <= 1; ++qy) {
                    const double dy = (1 - 2 * qy) * src[1] + 2.0 * ny * room.dims[1] - mic[1];
                    const int ry = std::abs(ny - qy) + std::abs(ny);
                    const double dxy2 = dx * dx + dy * dy;
                    if (dxy2 > max_dist * max_dist) continue;
                    for (int nz = -n_max[2]; nz <= n_max[2]; ++nz)
                        for (int qz = 0; qz <= 1; ++qz) {
                            const double dz =
                                (1 - 2 * qz) * src[2] + 2.0 * nz * room.dims[2] - mic[2];
                            const int rz = std::abs(nz - qz) + std::abs(nz);
                            const double dist = std::sqrt(dxy2 + dz * dz);
                            if (dist > max_dist) continue;
                            const double amp = std::pow(rho, rx + ry + rz) /
                                               (4.0 * kPi * std::max(dist, 1e-6));
                            if (amp < kAmpCutoff * direct_amp) continue;
                            const int bin = static_cast<int>(dist / c * fs_hist);
                            if (bin < bins) energy[bin] += amp * amp;
                        }
                }
        }

    std::vector<double> edc(bins);
    double acc = 0.0;
    for (int i = bins - 1; i >= 0; --i) {
        acc += energy[i];
        edc[i] = acc;
    }
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int count = 0;
    for (int i = 0; i < bins; ++i) {
        const double db = 10.0 * std::log10(edc[i] / edc[0] + 1e-300);
        if (db > -5.0 || db < -25.0) continue;
        const double t = static_cast<double>(i) / fs_hist;
        sx += t;
        sy += db;
        sxx += t * t;
        sxy += t * db;
        ++count;
    }
    if (count < 8) return 0.0;  // decay too fast to resolve: treat as very short
    const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);
    if (!(slope < 0.0)) return window_s * 10.0;
    return -60.0 / slope;
}

}  // namespace

double sabine_reflectivity(const RoomSpec& room) {
    room.validate();
    require(room.t60 > 0.0, "sabine_reflectivity: t60 must be positive");
    const double rho0 = eyring_rho(room);
    require(rho0 > 1e-6, "sabine_reflectivity: t60 too small for this geometry");

    struct Key {
        double lx, ly, lz, t60;
        auto operator<=>(const Key&) const = default;
    };
    static std::mutex mu;
    static std::map<Key, double> cache;
    const Key key{room.dims[0], room.dims[1], room.dims[2], room.t60};
    {
        std::scoped_lock lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }

    // The raw Eyring inversion over-predicts the decay time of the image
    // lattice in flat rooms (axial image chains decay slower than the diffuse
    // field), so refine by bisection against the simulated decay.
    const double window_s = std::max(0.15, 1.4 * room.t60);
    double lo = std::max(1e-7, 0.3 * rho0);
    double hi = std::min(0.9995, rho0 * 1.02);
    double rho = rho0;
    for (int iter = 0; iter < 40; ++iter) {
        rho = 0.5 * (lo + hi);
        const double measured = lattice_t60(room, rho, window_s);
        if (std::abs(measured - room.t60) < 0.005 * room.t60) break;
        if (measured > room.t60)
            hi = rho;
        else
            lo = rho;
    }
    require(rho > 1e-6 && rho < 1.0, "sabine_reflectivity: t60 too small for this geometry");

    std::scoped_lock lock(mu);
    cache[key] = rho;
    return rho;
}

AIR image_source_air(const RoomSpec& room, const Point& src, const Point& mic,
                     int air_len, int sample_rate) {
    room.validate();
    require(room.contains(src), "image_source_air: source outside room");
    require(room.contains(mic), "image_source_air: microphone outside room");
    require(dist3(src, mic) > 0.0, "image_source_air: source coincides with microphone");
    require(air_len > 0, "image_source_air: air_len must be positive");

    AIR air;
    air.sample_rate = sample_rate;
    air.taps.assign(air_len, 0.0);

    const double c = room.speed_of_sound;
    const double direct_dist = dist3(src, mic);
    const double direct_amp = 1.0 / (4.0 * kPi * direct_dist);
    const double max_dist = c * (air_len + kSincHalfWidth) / sample_rate;

    if (room.t60 <= 0.0) {
        add_pulse(air.taps, direct_dist * sample_rate / c, direct_amp);
        return air;
    }

    const double rho = sabine_reflectivity(room);
    const std::array<int, 3> n_max = {
        static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[0]))) + 1,
        static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[1]))) + 1,
        static_cast<int>(std::ceil(max_dist / (2.0 * room.dims[2]))) + 1};

    for (int nx = -n_max[0]; nx <= n_max[0]; ++nx) {
        for (int qx = 0; qx <= 1; ++qx) {
            const double ix = (1 - 2 * qx) * src[0] + 2.0 * nx * room.dims[0];
            const int rx = std::abs(nx - qx) + std::abs(nx);
            const double dx = ix - mic[0];
            for (int ny = -n_max[1]; ny <= n_max[1]; ++ny) {
                for (int qy = 0; qy <= 1; ++qy) {
                    const double iy = (1 - 2 * qy) * src[1] + 2.0 * ny * room.dims[1];
                    const int ry = std::abs(ny - qy) + std::abs(ny);
                    const double dy = iy - mic[1];
                    const double dxy2 = dx * dx + dy * dy;
                    if (dxy2 > max_dist * max_dist) continue;
                    for (int nz = -n_max[2]; nz <= n_max[2]; ++nz) {
                        for (int qz = 0; qz <= 1; ++qz) {
                            const double iz = (1 - 2 * qz) * src[2] + 2.0 * nz * room.dims[2];
                            const int rz = std::abs(nz - qz) + std::abs(nz);
                            const double dz = iz - mic[2];
                            const double dist = std::sqrt(dxy2 + dz * dz);
                            if (dist > max_dist) continue;
                            const int order = rx + ry + rz;
                            const double amp =
                                std::pow(rho, order) / (4.0 * kPi * std::max(dist, 1e-6));
                            if (amp < kAmpCutoff * direct_amp) continue;
                            add_pulse(air.taps, dist * sample_rate / c, amp);
                        }
                    }
                }
            }
        }
    }
    return air;
}

Scene build_scene(const SceneSpec& spec, const RoomSpec& room) {
    room.validate();
    spec.validate(room);

    Scene scene;
    scene.room = room;
    scene.spec = spec;

    std::string offenders;
    for (int i = 0; i < spec.grid.size(); ++i) {
        const Point p = scene.grid_position(i);
        if (!room.contains(p)) {
            if (!offenders.empty()) offenders += ", ";
            offenders += std::to_string(i);
        }
    }
    require(offenders.empty(), "build_scene: grid vertices outside room: " + offenders);
    return scene;
}

std::array<int, 3> Scene::grid_coords(int index) const {
    const auto& g = spec.grid;
    require(index >= 0 && index < g.size(), "Scene: grid index out of range");
    const int ix = index % g.counts[0];
    const int iy = (index / g.counts[0]) % g.counts[1];
    const int iz = index / (g.counts[0] * g.counts[1]);
    return {ix, iy, iz};
}

int Scene::grid_index(int ix, int iy, int iz) const {
    const auto& g = spec.grid;
    return ix + g.counts[0] * (iy + g.counts[1] * iz);
}

Point Scene::grid_position(int index) const {
    const auto [ix, iy, iz] = grid_coords(index);
    const auto& g = spec.grid;
    return {g.origin[0] + ix * g.spacing[0], g.origin[1] + iy * g.spacing[1],
            g.origin[2] + iz * g.spacing[2]};
}

std::vector<AIR> position_airs(const Scene& scene, const Point& src, int air_len,
                               int sample_rate) {
    std::vector<AIR> airs;
    airs.reserve(scene.num_mics());
    for (const auto& mic : scene.spec.mic_positions)
        airs.push_back(image_source_air(scene.room, src, mic, air_len, sample_rate));
    return airs;
}

MultichannelSignal render_position(const Scene& scene, int pos_index, bool is_oog,
                                   const Signal& excitation, int air_len) {
    Point src;
    if (is_oog) {
        require(pos_index >= 0 && pos_index < static_cast<int>(scene.spec.oog_positions.size()),
                "render_position: OOG index out of range");
        src = scene.spec.oog_positions[pos_index];
    } else {
        src = scene.grid_position(pos_index);
    }
    const std::vector<AIR> airs = position_airs(scene, src, air_len, excitation.sample_rate);

    MultichannelSignal out;
    out.ref_index = scene.spec.ref_index;
    out.channels.reserve(airs.size());
    for (const AIR& air : airs) out.channels.push_back(convolve(excitation, air.taps));
    return out;
}

}  // namespace beamgraph
