#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "beamgraph/rng.hpp"
#include "beamgraph/room.hpp"

using namespace beamgraph;

namespace {

// Schroeder backward integration T60 estimate, fit over the -5..-25 dB decay.
double schroeder_t60(const std::vector<double>& taps, int fs) {
    const int n = static_cast<int>(taps.size());
    std::vector<double> edc(n);
    double acc = 0.0;
    for (int i = n - 1; i >= 0; --i) {
        acc += taps[i] * taps[i];
        edc[i] = acc;
    }
    const double e0 = edc[0];
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    int count = 0;
    for (int i = 0; i < n; ++i) {
        const double db = 10.0 * std::log10(edc[i] / e0 + 1e-300);
        if (db > -5.0 || db < -25.0) continue;
        const double t = static_cast<double>(i) / fs;
        sx += t;
        sy += db;
        sxx += t * t;
        sxy += t * db;
        ++count;
    }
    REQUIRE(count > 10);
    const double slope = (count * sxy - sx * sy) / (count * sxx - sx * sx);  // dB per second
    return -60.0 / slope;
}

RoomSpec desk_room(double t60) {
    RoomSpec room;
    room.dims = {6.0, 6.0, 2.4};
    room.t60 = t60;
    return room;
}

}  // namespace

TEST_CASE("image_source_air: free field pulse at the right delay and amplitude") {
    RoomSpec room = desk_room(0.0);
    const Point src{2.0, 3.0, 1.2};
    const Point mic{4.0, 3.0, 1.2};
    const int fs = 16000;
    auto air = image_source_air(room, src, mic, 4096, fs);

    const double dist = 2.0;
    const double expect_delay = dist * fs / room.speed_of_sound;
    const double expect_amp = 1.0 / (4.0 * M_PI * dist);

    int peak = 0;
    for (int i = 1; i < 4096; ++i)
        if (std::abs(air.taps[i]) > std::abs(air.taps[peak])) peak = i;
    CHECK(std::abs(peak - expect_delay) <= 0.5);
    CHECK(std::abs(air.taps[peak]) == doctest::Approx(expect_amp).epsilon(0.02));
}

TEST_CASE("image_source_air: doubling distance halves the peak (1/r law)") {
    RoomSpec room = desk_room(0.0);
    const int fs = 16000;
    auto a1 = image_source_air(room, {2.0, 3.0, 1.2}, {3.0, 3.0, 1.2}, 2048, fs);
    auto a2 = image_source_air(room, {2.0, 3.0, 1.2}, {4.0, 3.0, 1.2}, 2048, fs);
    const double p1 = *std::max_element(a1.taps.begin(), a1.taps.end());
    const double p2 = *std::max_element(a2.taps.begin(), a2.taps.end());
    CHECK(p2 == doctest::Approx(0.5 * p1).epsilon(0.02));
}

TEST_CASE("image_source_air: deterministic and reciprocal in free field") {
    RoomSpec room = desk_room(0.0);
    auto a = image_source_air(room, {1.5, 2.0, 1.0}, {4.5, 3.5, 1.8}, 2048);
    auto b = image_source_air(room, {1.5, 2.0, 1.0}, {4.5, 3.5, 1.8}, 2048);
    CHECK(a.taps == b.taps);
    auto c = image_source_air(room, {4.5, 3.5, 1.8}, {1.5, 2.0, 1.0}, 2048);
    for (int i = 0; i < 2048; ++i) CHECK(std::abs(a.taps[i] - c.taps[i]) < 1e-12);
}

TEST_CASE("image_source_air: free-field delay error < 0.5 sample over 0.5..5 m") {
    RoomSpec room = desk_room(0.0);
    const int fs = 16000;
    for (double d : {0.5, 1.0, 2.0, 3.5, 5.0}) {
        auto air = image_source_air(room, {0.5, 3.0, 1.2}, {0.5 + d, 3.0, 1.2}, 4096, fs);
        int peak = 0;
        for (int i = 1; i < 4096; ++i)
            if (std::abs(air.taps[i]) > std::abs(air.taps[peak])) peak = i;
        CHECK(std::abs(peak - d * fs / room.speed_of_sound) <= 0.5);
    }
}

TEST_CASE("image_source_air: positions outside room error") {
    RoomSpec room = desk_room(0.3);
    CHECK_THROWS_AS(image_source_air(room, {-1.0, 3.0, 1.2}, {4.0, 3.0, 1.2}, 2048),
                    std::invalid_argument);
    CHECK_THROWS_AS(image_source_air(room, {1.0, 3.0, 1.2}, {7.0, 3.0, 1.2}, 2048),
                    std::invalid_argument);
}

TEST_CASE("sabine_reflectivity: monotone in t60 and vanishing limit") {
    const double r1 = sabine_reflectivity(desk_room(0.1));
    const double r3 = sabine_reflectivity(desk_room(0.3));
    const double r6 = sabine_reflectivity(desk_room(0.6));
    CHECK(r1 < r3);
    CHECK(r3 < r6);
    CHECK(r1 > 0.0);
    CHECK(r6 < 1.0);
    CHECK(sabine_reflectivity(desk_room(0.01)) < 0.05);
    CHECK_THROWS_AS(sabine_reflectivity(desk_room(0.0)), std::invalid_argument);
    CHECK_THROWS_AS(sabine_reflectivity(desk_room(1e-5)), std::invalid_argument);
}

TEST_CASE("image_source_air: Schroeder T60 round trip within 25%") {
    const int fs = 16000;
    for (double t60 : {0.3, 0.6}) {
        RoomSpec room = desk_room(t60);
        const int air_len = t60 > 0.4 ? 8192 : 4096;
        auto air = image_source_air(room, {2.1, 3.7, 1.3}, {3.9, 2.2, 1.1}, air_len, fs);
        const double est = schroeder_t60(air.taps, fs);
        CHECK(est > 0.75 * t60);
        CHECK(est < 1.25 * t60);
    }
}

TEST_CASE("build_scene: grid enumeration and indexing") {
    RoomSpec room = desk_room(0.3);
    SceneSpec spec;
    spec.mic_positions = {{3.0, 1.8, 1.2}, {3.1, 1.8, 1.2}};
    spec.grid.origin = {2.8, 3.6, 1.1};
    spec.grid.counts = {24, 19, 9};
    spec.grid.spacing = {0.002, 0.002, 0.004};

    SUBCASE("paper-sized grid has 4104 vertices") {
        auto scene = build_scene(spec, room);
        CHECK(scene.num_grid_positions() == 4104);
    }

    SUBCASE("single vertex grid sits at the origin point") {
        spec.grid.counts = {1, 1, 1};
        auto scene = build_scene(spec, room);
        CHECK(scene.num_grid_positions() == 1);
        auto p = scene.grid_position(0);
        CHECK(p[0] == doctest::Approx(2.8));
        CHECK(p[1] == doctest::Approx(3.6));
        CHECK(p[2] == doctest::Approx(1.1));
    }

    SUBCASE("index round trip is the identity, x fastest") {
        spec.grid.counts = {4, 3, 2};
        auto scene = build_scene(spec, room);
        for (int i = 0; i < scene.num_grid_positions(); ++i) {
            auto [ix, iy, iz] = scene.grid_coords(i);
            CHECK(scene.grid_index(ix, iy, iz) == i);
        }
        CHECK(scene.grid_coords(1)[0] == 1);  // x fastest
        CHECK(scene.grid_coords(4)[1] == 1);
    }

    SUBCASE("grid vertex outside room errors with offenders") {
        spec.grid.origin = {5.9, 3.6, 1.1};
        spec.grid.counts = {60, 1, 1};
        spec.grid.spacing = {0.01, 0.02, 0.04};
        CHECK_THROWS_AS(build_scene(spec, room), std::invalid_argument);
    }
}

TEST_CASE("render_position: impulse excitation reproduces the AIRs") {
    RoomSpec room = desk_room(0.1);
    SceneSpec spec;
    spec.mic_positions = {{2.9, 1.8, 1.2}, {3.1, 1.8, 1.2}};
    spec.grid.origin = {3.0, 3.8, 1.2};
    auto scene = build_scene(spec, room);

    Signal impulse;
    impulse.samples.assign(64, 0.0);
    impulse.samples[0] = 1.0;
    auto rendered = render_position(scene, 0, false, impulse, 1024);
    auto airs = position_airs(scene, scene.grid_position(0), 1024);
    REQUIRE(rendered.length() == 64 + 1024 - 1);
    for (int m = 0; m < 2; ++m)
        for (int i = 0; i < 1024; ++i)
            CHECK(rendered.channels[m].samples[i] == doctest::Approx(airs[m].taps[i]).epsilon(1e-12));
}

TEST_CASE("render_position: linear in the excitation") {
    RoomSpec room = desk_room(0.1);
    SceneSpec spec;
    spec.mic_positions = {{2.9, 1.8, 1.2}, {3.1, 1.8, 1.2}};
    spec.grid.origin = {3.0, 3.8, 1.2};
    auto scene = build_scene(spec, room);

    Rng rng(11);
    Signal a, b, ab;
    a.samples.resize(256);
    b.samples.resize(256);
    ab.samples.resize(256);
    for (int i = 0; i < 256; ++i) {
        a.samples[i] = rng.gaussian();
        b.samples[i] = rng.gaussian();
        ab.samples[i] = a.samples[i] + b.samples[i];
    }
    auto ra = render_position(scene, 0, false, a, 512);
    auto rb = render_position(scene, 0, false, b, 512);
    auto rab = render_position(scene, 0, false, ab, 512);
    for (int i = 0; i < rab.length(); ++i)
        CHECK(std::abs(rab.channels[0].samples[i] - ra.channels[0].samples[i] -
                       rb.channels[0].samples[i]) < 1e-10);
}

TEST_CASE("render_position: channel energy matches frequency-domain prediction") {
    RoomSpec room = desk_room(0.2);
    SceneSpec spec;
    spec.mic_positions = {{2.9, 1.8, 1.2}, {3.1, 1.8, 1.2}};
    spec.grid.origin = {3.0, 3.8, 1.2};
    auto scene = build_scene(spec, room);

    auto pink = gen_pink_noise(2048, 99);
    const int air_len = 1024;
    auto rendered = render_position(scene, 0, false, pink, air_len);

    // Oracle: energy of x*a via the frequency domain, sum |X A|^2 / N.
    auto airs = position_airs(scene, scene.grid_position(0), air_len);
    size_t nfft = 1;
    while (nfft < pink.samples.size() + air_len - 1) nfft <<= 1;
    std::vector<cdouble> x(nfft, 0.0), h(nfft, 0.0);
    for (size_t i = 0; i < pink.samples.size(); ++i) x[i] = pink.samples[i];
    for (int i = 0; i < air_len; ++i) h[i] = airs[0].taps[i];
    fft_inplace(x.data(), static_cast<int>(nfft), false);
    fft_inplace(h.data(), static_cast<int>(nfft), false);
    double predicted = 0.0;
    for (size_t k = 0; k < nfft; ++k) predicted += std::norm(x[k] * h[k]);
    predicted /= static_cast<double>(nfft);

    double actual = 0.0;
    for (double v : rendered.channels[0].samples) actual += v * v;
    CHECK(actual == doctest::Approx(predicted).epsilon(0.01));
}

TEST_CASE("render_position: invalid index errors") {
    RoomSpec room = desk_room(0.1);
    SceneSpec spec;
    spec.mic_positions = {{2.9, 1.8, 1.2}, {3.1, 1.8, 1.2}};
    spec.grid.origin = {3.0, 3.8, 1.2};
    auto scene = build_scene(spec, room);
    Signal s;
    s.samples.assign(64, 1.0);
    CHECK_THROWS_AS(render_position(scene, 5, false, s, 256), std::invalid_argument);
    CHECK_THROWS_AS(render_position(scene, 0, true, s, 256), std::invalid_argument);
}
