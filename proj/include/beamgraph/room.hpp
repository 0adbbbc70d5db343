#pragma once

#include <array>
#include <vector>

#include "beamgraph/signal.hpp"

namespace beamgraph {

using Point = std::array<double, 3>;

struct RoomSpec {
    Point dims{6.0, 6.0, 2.4};  // meters
    double t60 = 0.3;           // seconds; 0 means free field
    double speed_of_sound = 343.0;

    void validate() const;
    bool contains(const Point& p) const;
};

struct GridSpec {
    Point origin{0, 0, 0};
    std::array<int, 3> counts{1, 1, 1};
    Point spacing{0.02, 0.02, 0.04};

    int size() const { return counts[0] * counts[1] * counts[2]; }
};

struct SceneSpec {
    std::vector<Point> mic_positions;
    int ref_index = 0;
    GridSpec grid;
    std::vector<Point> oog_positions;

    void validate(const RoomSpec& room) const;
};

struct AIR {
    std::vector<double> taps;
    int sample_rate = 16000;
};

// Uniform wall reflection coefficient from the Eyring inversion of T60.
double sabine_reflectivity(const RoomSpec& room);

// Allen-Berkley image method with windowed-sinc fractional delays. Images are
// kept while they land inside the AIR window and their amplitude stays above
// -60 dB relative to the direct path. Positive reflection coefficients only.
AIR image_source_air(const RoomSpec& room, const Point& src, const Point& mic,
                     int air_len, int sample_rate = 16000);

struct Scene {
    RoomSpec room;
    SceneSpec spec;

    int num_grid_positions() const { return spec.grid.size(); }
    int num_mics() const { return static_cast<int>(spec.mic_positions.size()); }

    // Stable linear indexing, x fastest.
    Point grid_position(int index) const;
    std::array<int, 3> grid_coords(int index) const;
    int grid_index(int ix, int iy, int iz) const;
};

Scene build_scene(const SceneSpec& spec, const RoomSpec& room);

// pos_index in [0, grid_size) selects a grid vertex; oog selects from the
// OOG list when is_oog is true. Channel m is excitation convolved with AIR_m.
MultichannelSignal render_position(const Scene& scene, int pos_index, bool is_oog,
                                   const Signal& excitation, int air_len);

// AIRs for every mic from one source point.
std::vector<AIR> position_airs(const Scene& scene, const Point& src, int air_len,
                               int sample_rate = 16000);

}  // namespace beamgraph
