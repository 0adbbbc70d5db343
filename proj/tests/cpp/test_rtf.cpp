#include "doctest.h"

#include <cmath>
#include <numbers>

#include "beamgraph/rng.hpp"
#include "beamgraph/room.hpp"
#include "beamgraph/rtf.hpp"

using namespace beamgraph;

namespace {

constexpr double kPi = std::numbers::pi;

TFGrid grid_from_bins(const std::vector<std::vector<cdouble>>& frames_by_bins_channels,
                      int bins, int channels, const StftConfig& cfg) {
    TFGrid g = TFGrid::zeros(static_cast<int>(frames_by_bins_channels.size()), bins,
                             channels, cfg);
    for (size_t l = 0; l < frames_by_bins_channels.size(); ++l)
        for (int k = 0; k < bins; ++k)
            for (int m = 0; m < channels; ++m)
                g.at(static_cast<int>(l), k, m) = frames_by_bins_channels[l][k * channels + m];
    return g;
}

// Test-side covariance oracle: plain mean of outer products.
std::vector<HermitianMatrix> cov_oracle(const TFGrid& g,
                                        const std::vector<FrameLabel>& labels,
                                        FrameLabel which) {
    std::vector<HermitianMatrix> out(g.bins);
    for (int k = 0; k < g.bins; ++k) {
        CMatrix acc(g.channels, g.channels);
        int count = 0;
        for (int l = 0; l < g.frames; ++l) {
            if (labels[l] != which) continue;
            ++count;
            for (int i = 0; i < g.channels; ++i)
                for (int j = 0; j < g.channels; ++j)
                    acc.at(i, j) += g.at(l, k, i) * std::conj(g.at(l, k, j));
        }
        for (auto& v : acc.a) v /= static_cast<double>(count);
        out[k] = HermitianMatrix(acc);
    }
    return out;
}

}  // namespace

TEST_CASE("dilate_mask extends active runs forward") {
    std::vector<uint8_t> mask = {0, 1, 0, 0, 0, 0};
    auto d = dilate_mask(mask, 3);
    CHECK(d == std::vector<uint8_t>{0, 1, 1, 1, 0, 0});
}

TEST_CASE("label_frames thresholds") {
    StftConfig cfg;
    cfg.fft_len = 64;
    cfg.hop = 32;
    std::vector<uint8_t> mask(256, 0);
    for (int i = 0; i < 64; ++i) mask[i] = 1;          // frame 0 fully active
    for (int i = 96; i < 100; ++i) mask[i] = 1;        // a few stray samples
    auto labels = label_frames(mask, cfg, 7);
    CHECK(labels[0] == FrameLabel::kNoisy);
    CHECK(labels[1] == FrameLabel::kDiscard);  // half active
    CHECK(labels[4] == FrameLabel::kNoiseOnly);
}

TEST_CASE("estimate_covariances: duplicated frames give the outer product plus loading") {
    StftConfig cfg;
    cfg.fft_len = 8;
    cfg.hop = 4;
    const int bins = 8, ch = 2;
    std::vector<std::vector<cdouble>> frames;
    auto make_frame = [&](uint64_t seed) {
        Rng r(seed);
        std::vector<cdouble> f(bins * ch);
        for (int m = 0; m < ch; ++m) {
            std::vector<cdouble> spec(bins);
            spec[0] = r.gaussian();
            spec[bins / 2] = r.gaussian();
            for (int k = 1; k < bins / 2; ++k) {
                spec[k] = {r.gaussian(), r.gaussian()};
                spec[bins - k] = std::conj(spec[k]);
            }
            for (int k = 0; k < bins; ++k) f[k * ch + m] = spec[k];
        }
        return f;
    };
    frames.push_back(make_frame(11));
    frames.push_back(make_frame(22));
    frames.push_back(frames[0]);
    frames.push_back(frames[1]);
    TFGrid g2 = grid_from_bins(frames, bins, ch, cfg);
    std::vector<FrameLabel> labels2 = {FrameLabel::kNoisy, FrameLabel::kNoiseOnly,
                                       FrameLabel::kNoisy, FrameLabel::kNoiseOnly};
    auto cov = estimate_covariances(g2, labels2);
    CHECK(cov.frames_noisy == 2);
    for (int k = 0; k < bins; ++k) {
        for (int i = 0; i < ch; ++i)
            for (int j = 0; j < ch; ++j) {
                const cdouble expect = g2.at(0, k, i) * std::conj(g2.at(0, k, j));
                CHECK(std::abs(cov.phi_rr[k].at(i, j) - expect) < 1e-12);
            }
        cdouble expect_00 = g2.at(1, k, 0) * std::conj(g2.at(1, k, 0));
        double trace = 0.0;
        for (int i = 0; i < ch; ++i) trace += std::norm(g2.at(1, k, i));
        CHECK(cov.phi_vv[k].at(0, 0).real() ==
              doctest::Approx(expect_00.real() + 1e-6 * trace / ch).epsilon(1e-9));
    }
}

TEST_CASE("estimate_covariances: white noise converges to sigma^2 I") {
    StftConfig cfg;
    cfg.fft_len = 64;
    cfg.hop = 16;
    cfg.window = Window::kSqrtHann;
    const int n = 40000;
    MultichannelSignal sig;
    sig.ref_index = 0;
    sig.channels.resize(2);
    Rng rng(99);
    for (auto& chn : sig.channels) {
        chn.samples.resize(n);
        for (auto& x : chn.samples) x = rng.gaussian();
    }
    TFGrid g = stft(sig, cfg);
    std::vector<FrameLabel> labels(g.frames, FrameLabel::kNoiseOnly);
    for (int l = 0; l < g.frames / 2; ++l) labels[l] = FrameLabel::kNoisy;

    auto cov = estimate_covariances(g, labels);
    auto win = make_window(cfg.window, cfg.fft_len);
    double w2 = 0.0;
    for (double v : win) w2 += v * v;
    const double target = w2;  // unit-variance white input
    for (int k : {3, 17, 31}) {
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                const double expect = (i == j) ? target : 0.0;
                CHECK(std::abs(cov.phi_vv[k].at(i, j) - expect) <= 0.1 * target);
            }
    }
}

TEST_CASE("estimate_covariances: missing class errors") {
    StftConfig cfg;
    cfg.fft_len = 8;
    cfg.hop = 4;
    TFGrid g = TFGrid::zeros(4, 8, 2, cfg);
    std::vector<FrameLabel> labels(4, FrameLabel::kDiscard);
    CHECK_THROWS(estimate_covariances(g, labels));
}

TEST_CASE("estimate_rtf_gevd: rank-1 plus identity recovers the steering vector") {
    const int bins = 8, ch = 2;
    CovariancePair cov;
    const cdouble h[2] = {1.0, 0.5};
    for (int k = 0; k < bins; ++k) {
        CMatrix a(ch, ch);
        for (int i = 0; i < ch; ++i)
            for (int j = 0; j < ch; ++j)
                a.at(i, j) = 4.0 * h[i] * std::conj(h[j]) + (i == j ? 1.0 : 0.0);
        cov.phi_rr.push_back(HermitianMatrix(a));
        cov.phi_vv.push_back(HermitianMatrix::identity(ch));
    }
    cov.frames_noisy = cov.frames_noise_only = 4;
    auto rtf = estimate_rtf_gevd(cov, 0);
    for (int k = 0; k < bins; ++k) {
        CHECK(rtf.at(k, 0) == cdouble{1.0, 0.0});
        CHECK(std::abs(rtf.at(k, 1) - cdouble{0.5, 0.0}) < 1e-9);
    }
}

TEST_CASE("estimate_rtf_gevd: Phi_rr == Phi_vv still returns a normalized vector") {
    const int bins = 4, ch = 3;
    Rng rng(7);
    CovariancePair cov;
    for (int k = 0; k < bins; ++k) {
        CMatrix g(ch, ch);
        for (auto& v : g.a) v = {rng.gaussian(), rng.gaussian()};
        CMatrix p(ch, ch);
        for (int i = 0; i < ch; ++i)
            for (int j = 0; j < ch; ++j) {
                cdouble s = (i == j) ? cdouble(1.0) : cdouble(0.0);
                for (int l = 0; l < ch; ++l) s += std::conj(g.at(l, i)) * g.at(l, j);
                p.at(i, j) = s;
            }
        cov.phi_rr.push_back(HermitianMatrix(p));
        cov.phi_vv.push_back(HermitianMatrix(p));
    }
    cov.frames_noisy = cov.frames_noise_only = ch;
    auto rtf = estimate_rtf_gevd(cov, 1);
    for (int k = 0; k < bins; ++k) {
        CHECK(rtf.at(k, 1) == cdouble{1.0, 0.0});
        for (int m = 0; m < ch; ++m) CHECK(std::isfinite(std::abs(rtf.at(k, m))));
    }
}

TEST_CASE("estimate_rtf_clean: equals GEVD with identity noise covariance") {
    StftConfig cfg;
    cfg.fft_len = 16;
    cfg.hop = 8;
    const int ch = 3;
    Rng rng(17);
    MultichannelSignal sig;
    sig.ref_index = 1;
    sig.channels.resize(ch);
    for (auto& c : sig.channels) {
        c.samples.resize(400);
        for (auto& x : c.samples) x = rng.gaussian();
    }
    TFGrid g = stft(sig, cfg);
    std::vector<FrameLabel> labels(g.frames, FrameLabel::kNoisy);

    auto clean = estimate_rtf_clean(g, labels, 1);

    CovariancePair cov;
    cov.phi_rr = cov_oracle(g, labels, FrameLabel::kNoisy);
    cov.phi_vv.assign(g.bins, HermitianMatrix::identity(ch));
    cov.frames_noisy = cov.frames_noise_only = g.frames;
    auto gevd = estimate_rtf_gevd(cov, 1);

    for (int k = 0; k < g.bins; ++k)
        for (int m = 0; m < ch; ++m)
            CHECK(std::abs(clean.at(k, m) - gevd.at(k, m)) < 1e-10);
}

TEST_CASE("estimate_rtf_clean: rank-1 covariance recovers h exactly") {
    const int bins = 8, ch = 3;
    StftConfig cfg;
    cfg.fft_len = 8;
    cfg.hop = 4;
    Rng rng(21);
    std::vector<std::vector<cdouble>> hs(bins, std::vector<cdouble>(ch));
    for (int k = 0; k <= bins / 2; ++k) {
        for (int m = 0; m < ch; ++m)
            hs[k][m] = (m == 0) ? cdouble(1.0)
                                : cdouble{rng.gaussian(),
                                          (k == 0 || k == bins / 2) ? 0.0 : rng.gaussian()};
        if (k > 0 && k < bins / 2)
            for (int m = 0; m < ch; ++m) hs[bins - k][m] = std::conj(hs[k][m]);
    }
    std::vector<std::vector<cdouble>> frames;
    for (int f = 0; f < 4; ++f) {
        std::vector<cdouble> fr(bins * ch);
        std::vector<cdouble> s(bins);
        s[0] = rng.gaussian();
        s[bins / 2] = rng.gaussian();
        for (int k = 1; k < bins / 2; ++k) {
            s[k] = {rng.gaussian(), rng.gaussian()};
            s[bins - k] = std::conj(s[k]);
        }
        for (int k = 0; k < bins; ++k)
            for (int m = 0; m < ch; ++m) fr[k * ch + m] = s[k] * hs[k][m];
        frames.push_back(fr);
    }
    TFGrid g = grid_from_bins(frames, bins, ch, cfg);
    std::vector<FrameLabel> labels(4, FrameLabel::kNoisy);
    auto rtf = estimate_rtf_clean(g, labels, 0);
    for (int k = 0; k < bins; ++k)
        for (int m = 0; m < ch; ++m) CHECK(std::abs(rtf.at(k, m) - hs[k][m]) < 1e-9);
}

TEST_CASE("estimate_rtf_clean: free-field simulation matches AIR-ratio oracle") {
    RoomSpec room;
    room.dims = {6.0, 6.0, 2.4};
    room.t60 = 0.0;
    SceneSpec spec;
    spec.mic_positions = {{2.87, 1.8, 1.2}, {2.95, 1.8, 1.2}, {3.0, 1.8, 1.2},
                          {3.05, 1.8, 1.2}, {3.13, 1.8, 1.2}};
    spec.ref_index = 2;
    spec.grid.origin = {3.0, 3.8, 1.2};
    auto scene = build_scene(spec, room);

    const int air_len = 1024;
    auto pink = gen_pink_noise(16000, 42);
    auto rendered = render_position(scene, 0, false, pink, air_len);
    rendered.ref_index = 2;

    StftConfig cfg;  // 2048 / 512 sqrt-hann
    TFGrid g = stft(rendered, cfg);
    std::vector<FrameLabel> labels(g.frames, FrameLabel::kNoisy);
    auto est = estimate_rtf_clean(g, labels, 2);

    auto airs = position_airs(scene, scene.grid_position(0), air_len);
    std::vector<std::vector<double>> taps;
    for (const auto& a : airs) taps.push_back(a.taps);
    auto oracle = rtf_from_airs(taps, 2, cfg.bins());

    auto est_f = rtf_to_feature(est, 128, 256);
    auto orc_f = rtf_to_feature(oracle, 128, 256);
    auto score = npm(est_f, orc_f);
    CHECK(score.mean_db < -40.0);
}

TEST_CASE("rtf_to_feature: identity RTF puts the unit tap at l_uncausal") {
    const int bins = 64, ch = 2;
    RTFSpectrum h;
    h.ref_index = 0;
    h.bins = bins;
    h.channels = ch;
    h.h.assign(bins * ch, 0.0);
    for (int k = 0; k < bins; ++k) {
        h.at(k, 0) = 1.0;
        h.at(k, 1) = 1.0;
    }
    auto f = rtf_to_feature(h, 8, 16);
    REQUIRE(f.per_mic.size() == 1);
    for (int i = 0; i < f.dim(); ++i)
        CHECK(f.per_mic[0][i] == doctest::Approx(i == 8 ? 1.0 : 0.0).epsilon(1e-12));
}

TEST_CASE("rtf_to_feature: pure delay lands at l_uncausal + delay") {
    const int bins = 64, ch = 2;
    RTFSpectrum h;
    h.ref_index = 0;
    h.bins = bins;
    h.channels = ch;
    h.h.assign(bins * ch, 0.0);
    for (int k = 0; k < bins; ++k) {
        h.at(k, 0) = 1.0;
        h.at(k, 1) = std::exp(cdouble(0, -2.0 * kPi * k * 5.0 / bins));
    }
    auto f = rtf_to_feature(h, 8, 16);
    for (int i = 0; i < f.dim(); ++i)
        CHECK(f.per_mic[0][i] == doctest::Approx(i == 8 + 5 ? 1.0 : 0.0).epsilon(1e-10));
}

TEST_CASE("feature round trip: rtf_to_feature(feature_to_rtf(f)) == f") {
    Rng rng(5);
    RTFFeature f;
    f.l_uncausal = 8;
    f.l_causal = 16;
    for (int m = 0; m < 2; ++m) {
        std::vector<double> feat(24);
        for (auto& v : feat) v = rng.gaussian();
        f.per_mic.push_back(feat);
    }
    auto h = feature_to_rtf(f, 64, 1, 3);
    CHECK(h.at(3, 1) == cdouble{1.0, 0.0});
    auto back = rtf_to_feature(h, 8, 16);
    for (int m = 0; m < 2; ++m)
        for (int i = 0; i < 24; ++i)
            CHECK(back.per_mic[m][i] == doctest::Approx(f.per_mic[m][i]).epsilon(1e-12));
}

TEST_CASE("feature_to_rtf: zero feature and linearity") {
    RTFFeature z;
    z.l_uncausal = 4;
    z.l_causal = 4;
    z.per_mic = {std::vector<double>(8, 0.0)};
    auto h = feature_to_rtf(z, 16, 0, 2);
    for (int k = 0; k < 16; ++k) {
        CHECK(h.at(k, 0) == cdouble{1.0, 0.0});
        CHECK(std::abs(h.at(k, 1)) == 0.0);
    }

    Rng rng(9);
    RTFFeature a = z, b = z, ab = z;
    for (int i = 0; i < 8; ++i) {
        a.per_mic[0][i] = rng.gaussian();
        b.per_mic[0][i] = rng.gaussian();
        ab.per_mic[0][i] = a.per_mic[0][i] + b.per_mic[0][i];
    }
    auto ha = feature_to_rtf(a, 16, 0, 2);
    auto hb = feature_to_rtf(b, 16, 0, 2);
    auto hab = feature_to_rtf(ab, 16, 0, 2);
    for (int k = 0; k < 16; ++k)
        CHECK(std::abs(hab.at(k, 1) - ha.at(k, 1) - hb.at(k, 1)) < 1e-12);
}

TEST_CASE("npm: clamps and orthogonality") {
    RTFFeature a, b;
    a.l_uncausal = b.l_uncausal = 2;
    a.l_causal = b.l_causal = 2;
    a.per_mic = {{1.0, 0.0, 0.0, 0.0}};
    b.per_mic = {{1.0, 0.0, 0.0, 0.0}};
    CHECK(npm(a, b).mean_db == doctest::Approx(-150.0));

    b.per_mic = {{0.0, 1.0, 0.0, 0.0}};
    CHECK(npm(b, a).mean_db == doctest::Approx(0.0));

    b.per_mic = {{2.0, 0.0, 0.0, 0.0}};
    CHECK(npm(b, a).mean_db == doctest::Approx(-150.0));

    RTFFeature zero = a;
    zero.per_mic = {{0.0, 0.0, 0.0, 0.0}};
    CHECK_THROWS(npm(a, zero));
}

TEST_CASE("estimate_rtf_gevd: homogeneity in Phi_rr") {
    const int bins = 4, ch = 3;
    Rng rng(31);
    CovariancePair cov;
    for (int k = 0; k < bins; ++k) {
        CMatrix g1(ch, ch), g2(ch, ch);
        for (auto& v : g1.a) v = {rng.gaussian(), rng.gaussian()};
        for (auto& v : g2.a) v = {rng.gaussian(), rng.gaussian()};
        auto pd = [&](const CMatrix& g) {
            CMatrix p(ch, ch);
            for (int i = 0; i < ch; ++i)
                for (int j = 0; j < ch; ++j) {
                    cdouble s = (i == j) ? cdouble(0.5) : cdouble(0.0);
                    for (int l = 0; l < ch; ++l) s += std::conj(g.at(l, i)) * g.at(l, j);
                    p.at(i, j) = s;
                }
            return HermitianMatrix(p);
        };
        cov.phi_rr.push_back(pd(g1));
        cov.phi_vv.push_back(pd(g2));
    }
    cov.frames_noisy = cov.frames_noise_only = ch;
    auto h1 = estimate_rtf_gevd(cov, 0);
    CovariancePair scaled = cov;
    for (auto& p : scaled.phi_rr)
        for (auto& v : p.m.a) v *= 7.25;
    auto h2 = estimate_rtf_gevd(scaled, 0);
    for (int k = 0; k < bins; ++k)
        for (int m = 0; m < ch; ++m) CHECK(std::abs(h1.at(k, m) - h2.at(k, m)) < 1e-10);
}
