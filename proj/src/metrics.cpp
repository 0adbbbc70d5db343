#include "beamgraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace beamgraph {

namespace {

constexpr double kPi = std::numbers::pi;

double clamp_db(double v) { return std::clamp(v, -kDbClamp, kDbClamp); }

}  // namespace

double si_sdr(const Signal& ref, const Signal& est) {
    require(ref.length() == est.length(), "si_sdr: length mismatch");
    double rr = 0.0, re = 0.0;
    for (int i = 0; i < ref.length(); ++i) {
        rr += ref.samples[i] * ref.samples[i];
        re += ref.samples[i] * est.samples[i];
    }
    require(rr > 0.0, "si_sdr: zero reference");
    const double alpha = re / rr;
    const double st = alpha * alpha * rr;
    double sd = 0.0;
    for (int i = 0; i < ref.length(); ++i) {
        const double d = alpha * ref.samples[i] - est.samples[i];
        sd += d * d;
    }
    if (!(sd > 1e-300)) return kDbClamp;
    if (!(st > 1e-300)) return -kDbClamp;
    return clamp_db(10.0 * std::log10(st / sd));
}

double snr_out(const Signal& s, const Signal& v) {
    require(s.length() == v.length(), "snr_out: length mismatch");
    double es = 0.0, ev = 0.0;
    for (int i = 0; i < s.length(); ++i) {
        es += s.samples[i] * s.samples[i];
        ev += v.samples[i] * v.samples[i];
    }
    if (!(ev > 1e-300)) return kDbClamp;
    if (!(es > 1e-300)) return -kDbClamp;
    return clamp_db(10.0 * std::log10(es / ev));
}

SbfResult sbf(const RTFFeature& oracle, const RTFFeature& estimate, const Signal& s_ref) {
    require(oracle.per_mic.size() == estimate.per_mic.size() &&
                oracle.dim() == estimate.dim(),
            "sbf: feature shape mismatch");
    require(s_ref.length() > 0, "sbf: empty reference signal");

    SbfResult out;
    for (size_t m = 0; m < oracle.per_mic.size(); ++m) {
        const std::vector<double> x = convolve_seq(oracle.per_mic[m], s_ref.samples);
        const std::vector<double> u = convolve_seq(estimate.per_mic[m], s_ref.samples);
        double ex = 0.0, ed = 0.0;
        for (size_t i = 0; i < x.size(); ++i) {
            ex += x[i] * x[i];
            const double d = x[i] - u[i];
            ed += d * d;
        }
        require(ex > 0.0, "sbf: zero oracle-filtered energy");
        out.per_mic_db.push_back(!(ed > 1e-300) ? kDbClamp
                                                : clamp_db(10.0 * std::log10(ex / ed)));
    }
    for (double v : out.per_mic_db) out.mean_db += v;
    out.mean_db /= static_cast<double>(out.per_mic_db.size());
    return out;
}

// ---------------------------------------------------------------------------
// STOI pipeline (10 kHz internal rate, 256/128 framing, 512-point FFT,
// 15 one-third-octave bands from 150 Hz, 30-frame segments).

namespace {

constexpr int kStoiRate = 10000;
constexpr int kFrame = 256;
constexpr int kHop = 128;
constexpr int kNfft = 512;
constexpr int kSegLen = 30;
constexpr int kBands = 15;
constexpr double kClipFactor = 6.623413251903491;  // 1 + 10^(15/20)
constexpr double kVadRangeDb = 40.0;

std::vector<double> stoi_window() {
    std::vector<double> w(kFrame);
    for (int i = 0; i < kFrame; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / kFrame);
    return w;
}

// Rational 5/8 resampler (16 kHz -> 10 kHz) with a 120-tap windowed-sinc
// anti-alias lowpass at 5 kHz.
LinearMap make_resampler(int n_in) {
    constexpr int kTaps = 120;
    constexpr int kUp = 5, kDown = 8;
    const double fc = 1.0 / 16.0;  // of the 80 kHz upsampled rate
    std::vector<double> h(kTaps);
    for (int i = 0; i < kTaps; ++i) {
        const double t = i - (kTaps - 1) / 2.0;
        const double x = 2.0 * kPi * fc * t;
        const double sinc = (t == 0.0) ? 1.0 : std::sin(x) / x;
        const double win = 0.54 - 0.46 * std::cos(2.0 * kPi * i / (kTaps - 1));
        h[i] = 2.0 * fc * kUp * sinc * win;
    }
    LinearMap map;
    map.in_len = n_in;
    map.out_len = (n_in * kUp) / kDown;
    map.terms.resize(map.out_len);
    for (int o = 0; o < map.out_len; ++o) {
        for (int j = 0; j < kTaps; ++j) {
            const int t = o * kDown - j;
            if (t < 0) break;
            if (t % kUp != 0) continue;
            const int idx = t / kUp;
            if (idx < n_in) map.terms[o].emplace_back(idx, h[j]);
        }
    }
    return map;
}

std::vector<std::vector<int>> third_octave_bands() {
    std::vector<std::vector<int>> bands(kBands);
    for (int j = 0; j < kBands; ++j) {
        const double cf = 150.0 * std::pow(2.0, j / 3.0);
        const double lo = cf / std::pow(2.0, 1.0 / 6.0);
        const double hi = cf * std::pow(2.0, 1.0 / 6.0);
        for (int k = 1; k <= kNfft / 2; ++k) {
            const double f = static_cast<double>(k) * kStoiRate / kNfft;
            if (f >= lo && f < hi) bands[j].push_back(k);
        }
    }
    return bands;
}

std::vector<int> vad_kept_frames(const std::vector<double>& x,
                                 const std::vector<double>& win) {
    const int n = static_cast<int>(x.size());
    require(n >= kFrame, "stoi: input too short");
    const int frames = (n - kFrame) / kHop + 1;
    std::vector<double> energy(frames);
    double max_e = 0.0;
    for (int l = 0; l < frames; ++l) {
        double e = 0.0;
        for (int i = 0; i < kFrame; ++i) {
            const double v = win[i] * x[l * kHop + i];
            e += v * v;
        }
        energy[l] = std::sqrt(e);
        max_e = std::max(max_e, energy[l]);
    }
    std::vector<int> kept;
    const double threshold = max_e * std::pow(10.0, -kVadRangeDb / 20.0);
    for (int l = 0; l < frames; ++l)
        if (energy[l] > threshold) kept.push_back(l);
    return kept;
}

// Windowed overlap-add of the kept frames, packed consecutively. The hann
// window is amplitude-COLA at 50% overlap, so contiguous runs reconstruct.
LinearMap make_vad_ola(const std::vector<int>& kept, int in_len,
                       const std::vector<double>& win) {
    LinearMap map;
    map.in_len = in_len;
    map.out_len = kept.empty() ? 0 : (static_cast<int>(kept.size()) - 1) * kHop + kFrame;
    map.terms.resize(map.out_len);
    for (size_t j = 0; j < kept.size(); ++j) {
        const int src = kept[j] * kHop;
        const int dst = static_cast<int>(j) * kHop;
        for (int i = 0; i < kFrame; ++i)
            if (src + i < in_len) map.terms[dst + i].emplace_back(src + i, win[i]);
    }
    return map;
}

Tensor band_energies_direct(const std::vector<double>& x, const std::vector<double>& win,
                            const std::vector<std::vector<int>>& bands) {
    const int n = static_cast<int>(x.size());
    require(n >= kFrame, "stoi: too few frames after silence removal");
    const int frames = (n - kFrame) / kHop + 1;
    Tensor out(kBands, frames);
    std::vector<cdouble> buf(kNfft);
    for (int l = 0; l < frames; ++l) {
        std::fill(buf.begin(), buf.end(), cdouble{0.0, 0.0});
        for (int i = 0; i < kFrame; ++i) buf[i] = win[i] * x[l * kHop + i];
        fft_inplace(buf.data(), kNfft, false);
        for (int j = 0; j < kBands; ++j) {
            double e = 0.0;
            for (int k : bands[j]) e += std::norm(buf[k]);
            out.at(j, l) = std::sqrt(e + 1e-280);
        }
    }
    return out;
}

struct StoiBands {
    Tensor ref;
    Tensor est;
    int frames = 0;
};

StoiBands stoi_front_end(const Signal& ref, const Signal& est, int rate) {
    require(ref.length() == est.length(), "stoi: length mismatch");
    require(rate == 10000 || rate == 16000, "stoi: rate must be 10000 or 16000");

    std::vector<double> r = ref.samples, e = est.samples;
    if (rate == 16000) {
        const LinearMap rs = make_resampler(ref.length());
        r = rs.apply(r);
        e = rs.apply(e);
    }
    const std::vector<double> win = stoi_window();
    const std::vector<int> kept = vad_kept_frames(r, win);
    require(static_cast<int>(kept.size()) >= kSegLen, "stoi: too few active frames");
    const LinearMap ola = make_vad_ola(kept, static_cast<int>(r.size()), win);
    const auto bands = third_octave_bands();

    StoiBands out;
    out.ref = band_energies_direct(ola.apply(r), win, bands);
    out.est = band_energies_direct(ola.apply(e), win, bands);
    out.frames = out.ref.cols;
    require(out.frames >= kSegLen, "stoi: too few frames after silence removal");
    return out;
}

}  // namespace

double stoi(const Signal& ref, const Signal& est, int rate) {
    const StoiBands b = stoi_front_end(ref, est, rate);
    double acc = 0.0;
    int count = 0;
    for (int m = kSegLen - 1; m < b.frames; ++m) {
        for (int j = 0; j < kBands; ++j) {
            double xx = 0.0, yy = 0.0;
            for (int i = 0; i < kSegLen; ++i) {
                const double x = b.ref.at(j, m - kSegLen + 1 + i);
                const double y = b.est.at(j, m - kSegLen + 1 + i);
                xx += x * x;
                yy += y * y;
            }
            const double alpha = std::sqrt(xx / (yy + 1e-280));
            double xs = 0.0, ys = 0.0;
            double xv[kSegLen], yv[kSegLen];
            for (int i = 0; i < kSegLen; ++i) {
                const double x = b.ref.at(j, m - kSegLen + 1 + i);
                const double y =
                    std::min(alpha * b.est.at(j, m - kSegLen + 1 + i), kClipFactor * x);
                xv[i] = x;
                yv[i] = y;
                xs += x;
                ys += y;
            }
            xs /= kSegLen;
            ys /= kSegLen;
            double num = 0.0, dx = 0.0, dy = 0.0;
            for (int i = 0; i < kSegLen; ++i) {
                num += (xv[i] - xs) * (yv[i] - ys);
                dx += (xv[i] - xs) * (xv[i] - xs);
                dy += (yv[i] - ys) * (yv[i] - ys);
            }
            acc += num / (std::sqrt(dx * dy) + 1e-280);
            ++count;
        }
    }
    const double value = acc / count;
    check(value >= -1.0 && value <= 1.0 + 1e-9, "stoi: correlation out of range");
    return std::clamp(value, 0.0, 1.0);
}

double estoi(const Signal& ref, const Signal& est, int rate) {
    const StoiBands b = stoi_front_end(ref, est, rate);
    double acc = 0.0;
    int count = 0;
    for (int m = kSegLen - 1; m < b.frames; ++m) {
        // 15 x 30 segment, rows then columns mean/variance normalized.
        double x[kBands][kSegLen], y[kBands][kSegLen];
        for (int j = 0; j < kBands; ++j)
            for (int i = 0; i < kSegLen; ++i) {
                x[j][i] = b.ref.at(j, m - kSegLen + 1 + i);
                y[j][i] = b.est.at(j, m - kSegLen + 1 + i);
            }
        auto normalize_rows = [](double a[kBands][kSegLen]) {
            for (int j = 0; j < kBands; ++j) {
                double mean = 0.0;
                for (int i = 0; i < kSegLen; ++i) mean += a[j][i];
                mean /= kSegLen;
                double norm = 0.0;
                for (int i = 0; i < kSegLen; ++i) {
                    a[j][i] -= mean;
                    norm += a[j][i] * a[j][i];
                }
                norm = std::sqrt(norm) + 1e-280;
                for (int i = 0; i < kSegLen; ++i) a[j][i] /= norm;
            }
        };
        auto normalize_cols = [](double a[kBands][kSegLen]) {
            for (int i = 0; i < kSegLen; ++i) {
                double mean = 0.0;
                for (int j = 0; j < kBands; ++j) mean += a[j][i];
                mean /= kBands;
                double norm = 0.0;
                for (int j = 0; j < kBands; ++j) {
                    a[j][i] -= mean;
                    norm += a[j][i] * a[j][i];
                }
                norm = std::sqrt(norm) + 1e-280;
                for (int j = 0; j < kBands; ++j) a[j][i] /= norm;
            }
        };
        normalize_rows(x);
        normalize_rows(y);
        normalize_cols(x);
        normalize_cols(y);
        double d = 0.0;
        for (int i = 0; i < kSegLen; ++i)
            for (int j = 0; j < kBands; ++j) d += x[j][i] * y[j][i];
        acc += d / kSegLen;
        ++count;
    }
    const double value = acc / count;
    check(value >= -1.0 - 1e-9 && value <= 1.0 + 1e-9, "estoi: correlation out of range");
    return std::clamp(value, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Differentiable losses

RVar beamformed_output_tape(Tape& tape, const std::vector<RVar>& features,
                            const BeamformExample& ex) {
    std::vector<CVar> specs;
    specs.reserve(features.size());
    for (RVar f : features)
        specs.push_back(tape.feature_to_spectrum(f, ex.bins, ex.l_uncausal, ex.l_causal));
    CVar h = tape.assemble_steering(specs, ex.ref_index);
    CVar x = tape.chol_solve_rows(h, ex.chol_vv);
    CVar q = tape.quadform_rows(h, x);
    CVar w = tape.div_rows_fallback(x, q, ex.ref_index, 1e-12, nullptr);
    CVar y = tape.beamform_rows(w, ex.noisy_grid);
    return tape.istft_real(y, ex.stft_cfg);
}

RVar loss_feature_mse(Tape& tape, const std::vector<RVar>& features,
                      const std::vector<std::vector<double>>& targets) {
    require(features.size() == targets.size(), "loss_feature_mse: shape mismatch");
    RVar acc = tape.leaf(Tensor::scalar(0.0));
    for (size_t m = 0; m < features.size(); ++m) {
        RVar t = tape.leaf(Tensor::row(targets[m]));
        acc = tape.add(acc, tape.sum_sq(tape.sub(features[m], t)));
    }
    return tape.scale(acc, 1.0 / static_cast<double>(features.size()));
}

RVar loss_sbf(Tape& tape, const std::vector<RVar>& features, const RTFFeature& oracle,
              const std::vector<double>* s_ref) {
    require(features.size() == oracle.per_mic.size(), "loss_sbf: mic count mismatch");
    RVar acc = tape.leaf(Tensor::scalar(0.0));
    for (size_t m = 0; m < features.size(); ++m) {
        const std::vector<double> x = convolve_seq(oracle.per_mic[m], *s_ref);
        double ex = 0.0;
        for (double v : x) ex += v * v;
        check(ex > 0.0, "loss_sbf: zero oracle-filtered energy");
        RVar u = tape.conv_full_const(features[m], s_ref);
        RVar d = tape.sub(tape.leaf(Tensor::row(x)), u);
        RVar num = tape.leaf(Tensor::scalar(ex));
        acc = tape.add(acc, tape.log_ratio_db(num, tape.sum_sq(d), 10.0, kDbClamp));
    }
    // Mean over mics, negated: maximize SBF.
    return tape.scale(acc, -1.0 / static_cast<double>(features.size()));
}

RVar loss_sisdr(Tape& tape, const std::vector<RVar>& features, const BeamformExample& ex,
                bool version_two) {
    RVar out = beamformed_output_tape(tape, features, ex);
    const std::vector<double>* ref = version_two ? &ex.oracle_reference : &ex.reference;
    RVar val = tape.si_sdr_vs_const(out, ref, kDbClamp);
    return tape.scale(val, -1.0);
}

StoiContext StoiContext::build(const std::vector<double>& reference, int rate) {
    require(rate == 10000 || rate == 16000, "StoiContext: rate must be 10000 or 16000");
    StoiContext ctx;
    ctx.rate = rate;
    ctx.input_len = static_cast<int>(reference.size());
    ctx.window = stoi_window();
    ctx.band_bins = third_octave_bands();

    std::vector<double> r = reference;
    if (rate == 16000) {
        ctx.resample = make_resampler(ctx.input_len);
        r = ctx.resample.apply(r);
    }
    const std::vector<int> kept = vad_kept_frames(r, ctx.window);
    require(static_cast<int>(kept.size()) >= kSegLen, "StoiContext: too few active frames");
    ctx.vad_ola = make_vad_ola(kept, static_cast<int>(r.size()), ctx.window);
    ctx.ref_bands = band_energies_direct(ctx.vad_ola.apply(r), ctx.window, ctx.band_bins);
    ctx.num_frames = ctx.ref_bands.cols;

    ctx.ref_seg_norm.resize(static_cast<size_t>(ctx.num_frames - kSegLen + 1) * kBands, 0.0);
    for (int m = kSegLen - 1; m < ctx.num_frames; ++m)
        for (int j = 0; j < kBands; ++j) {
            double xx = 0.0;
            for (int i = 0; i < kSegLen; ++i) {
                const double x = ctx.ref_bands.at(j, m - kSegLen + 1 + i);
                xx += x * x;
            }
            ctx.ref_seg_norm[static_cast<size_t>(m - kSegLen + 1) * kBands + j] =
                std::sqrt(xx);
        }
    return ctx;
}

RVar loss_stoi(Tape& tape, RVar est_signal, const StoiContext& ctx) {
    require(tape.val(est_signal).cols == ctx.input_len, "loss_stoi: length mismatch");
    RVar e10 = (ctx.rate == 16000) ? tape.linear_map(est_signal, &ctx.resample) : est_signal;
    RVar esil = tape.linear_map(e10, &ctx.vad_ola);
    CVar spec = tape.stft_const_window(esil, kFrame, kHop, kNfft, &ctx.window);
    RVar bands = tape.band_energy(spec, &ctx.band_bins);
    check(tape.val(bands).cols == ctx.num_frames, "loss_stoi: frame count drifted");

    RVar eps = tape.leaf(Tensor::scalar(1e-12));
    RVar acc = tape.leaf(Tensor::scalar(0.0));
    int count = 0;
    for (int m = kSegLen - 1; m < ctx.num_frames; ++m) {
        for (int j = 0; j < kBands; ++j) {
            const int seg0 = m - kSegLen + 1;
            Tensor xseg(1, kSegLen);
            for (int i = 0; i < kSegLen; ++i) xseg.v[i] = ctx.ref_bands.at(j, seg0 + i);
            const double xnorm = ctx.ref_seg_norm[static_cast<size_t>(seg0) * kBands + j];

            RVar yseg = tape.slice(bands, j, 1, seg0, kSegLen);
            RVar alpha = tape.div_scalar(
                tape.leaf(Tensor::scalar(xnorm)),
                tape.add(tape.sqrt_scalar(tape.sum_sq(yseg)), eps));
            RVar ybar = tape.mul_scalar(yseg, alpha);

            Tensor cap(1, kSegLen);
            double cap_mean = 0.0;
            for (int i = 0; i < kSegLen; ++i) {
                cap.v[i] = kClipFactor * xseg.v[i];
                cap_mean += cap.v[i];
            }
            cap_mean /= kSegLen;
            const double tau = 0.03 * cap_mean + 1e-12;
            RVar yhat = tape.softmin_const(ybar, std::move(cap), tau);

            // Centered correlation against the (constant) reference segment.
            double xmean = 0.0;
            for (double v : xseg.v) xmean += v;
            xmean /= kSegLen;
            Tensor xc(1, kSegLen);
            double xcn = 0.0;
            for (int i = 0; i < kSegLen; ++i) {
                xc.v[i] = xseg.v[i] - xmean;
                xcn += xc.v[i] * xc.v[i];
            }
            xcn = std::sqrt(xcn);

            RVar yc = tape.sub_mean(yhat);
            RVar num = tape.dot(tape.leaf(std::move(xc)), yc);
            RVar den = tape.add(tape.scale(tape.sqrt_scalar(tape.sum_sq(yc)), xcn), eps);
            acc = tape.add(acc, tape.div_scalar(num, den));
            ++count;
        }
    }
    return tape.scale(acc, -1.0 / count);
}

}  // namespace beamgraph
