#include "beamgraph/signal.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "beamgraph/rng.hpp"

namespace beamgraph {

namespace {

constexpr double kPi = std::numbers::pi;

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

struct FftPlan {
    std::vector<int> rev;
    std::vector<cdouble> tw;  // n/2 roots exp(-2*pi*i*k/n)
};

const FftPlan& fft_plan(int n) {
    static std::mutex mu;
    static std::map<int, FftPlan> plans;
    std::scoped_lock lock(mu);
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;

    FftPlan p;
    p.rev.resize(n);
    int log2n = 0;
    while ((1 << log2n) < n) ++log2n;
    for (int i = 0; i < n; ++i) {
        int r = 0;
        for (int b = 0; b < log2n; ++b)
            if (i & (1 << b)) r |= 1 << (log2n - 1 - b);
        p.rev[i] = r;
    }
    p.tw.resize(n / 2);
    for (int k = 0; k < n / 2; ++k) {
        const double a = -2.0 * kPi * k / n;
        p.tw[k] = {std::cos(a), std::sin(a)};
    }
    return plans.emplace(n, std::move(p)).first->second;
}

}  // namespace

void Signal::validate() const {
    require(sample_rate > 0, "Signal: sample_rate must be positive");
    require(all_finite(samples), "Signal: samples must be finite");
}

void MultichannelSignal::validate() const {
    require(channels.size() >= 2, "MultichannelSignal: need at least 2 channels");
    require(ref_index >= 0 && ref_index < num_channels(),
            "MultichannelSignal: ref_index out of range");
    for (const auto& ch : channels) {
        require(ch.length() == channels[0].length(),
                "MultichannelSignal: channel lengths differ");
        require(ch.sample_rate == channels[0].sample_rate,
                "MultichannelSignal: channel sample rates differ");
    }
}

void StftConfig::validate() const {
    require(fft_len > 0 && (fft_len & (fft_len - 1)) == 0,
            "StftConfig: fft_len must be a power of two");
    require(hop > 0 && fft_len % hop == 0, "StftConfig: hop must divide fft_len");
    require(hop <= fft_len / 2, "StftConfig: hop must be <= fft_len/2 for COLA");
}

TFGrid TFGrid::zeros(int frames, int bins, int channels, const StftConfig& cfg) {
    TFGrid g;
    g.frames = frames;
    g.bins = bins;
    g.channels = channels;
    g.config = cfg;
    g.v.assign(static_cast<size_t>(frames) * bins * channels, cdouble{0.0, 0.0});
    return g;
}

void fft_inplace(cdouble* a, int n, bool inverse) {
    require(n > 0 && (n & (n - 1)) == 0, "fft: length must be a power of two");
    if (n == 1) return;
    const FftPlan& plan = fft_plan(n);

    if (inverse)
        for (int i = 0; i < n; ++i) a[i] = std::conj(a[i]);

    for (int i = 0; i < n; ++i) {
        const int j = plan.rev[i];
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const int half = len >> 1;
        const int stride = n / len;
        for (int base = 0; base < n; base += len) {
            for (int k = 0; k < half; ++k) {
                const cdouble w = plan.tw[k * stride];
                const cdouble u = a[base + k];
                const cdouble t = a[base + k + half] * w;
                a[base + k] = u + t;
                a[base + k + half] = u - t;
            }
        }
    }

    if (inverse) {
        const double inv_n = 1.0 / n;
        for (int i = 0; i < n; ++i) a[i] = std::conj(a[i]) * inv_n;
    }
}

std::vector<cdouble> fft(const std::vector<cdouble>& x, bool inverse) {
    std::vector<cdouble> a = x;
    fft_inplace(a.data(), static_cast<int>(a.size()), inverse);
    return a;
}

std::vector<cdouble> ifft(const std::vector<cdouble>& x) { return fft(x, true); }

std::vector<double> make_window(Window w, int n) {
    std::vector<double> win(n);
    for (int i = 0; i < n; ++i) {
        const double hann = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
        win[i] = (w == Window::kHann) ? hann : std::sqrt(hann);
    }
    return win;
}

TFGrid stft(const MultichannelSignal& sig, const StftConfig& cfg) {
    cfg.validate();
    sig.validate();
    const int n = sig.length();
    require(n >= cfg.fft_len, "stft: signal shorter than fft_len");

    const int frames = (n - cfg.fft_len) / cfg.hop + 1;
    const int bins = cfg.bins();
    const int channels = sig.num_channels();
    const std::vector<double> win = make_window(cfg.window, cfg.fft_len);

    TFGrid grid = TFGrid::zeros(frames, bins, channels, cfg);
    std::vector<cdouble> buf(cfg.fft_len);
    for (int m = 0; m < channels; ++m) {
        const double* x = sig.channels[m].samples.data();
        for (int l = 0; l < frames; ++l) {
            const int off = l * cfg.hop;
            for (int i = 0; i < cfg.fft_len; ++i) buf[i] = win[i] * x[off + i];
            fft_inplace(buf.data(), cfg.fft_len, false);
            for (int k = 0; k < bins; ++k) grid.at(l, k, m) = buf[k];
        }
    }
    return grid;
}

MultichannelSignal istft(const TFGrid& grid, const StftConfig& cfg) {
    cfg.validate();
    require(grid.config == cfg, "istft: grid was produced with a different config");
    require(grid.bins == cfg.bins(), "istft: bin count mismatch");
    require(grid.frames > 0, "istft: empty grid");

    const int n = (grid.frames - 1) * cfg.hop + cfg.fft_len;
    const std::vector<double> win = make_window(cfg.window, cfg.fft_len);

    std::vector<double> norm(n, 0.0);
    for (int l = 0; l < grid.frames; ++l)
        for (int i = 0; i < cfg.fft_len; ++i) norm[l * cfg.hop + i] += win[i] * win[i];

    MultichannelSignal out;
    out.ref_index = 0;
    out.channels.resize(grid.channels);
    std::vector<cdouble> buf(cfg.fft_len);
    for (int m = 0; m < grid.channels; ++m) {
        Signal& ch = out.channels[m];
        ch.sample_rate = 16000;
        ch.samples.assign(n, 0.0);
        for (int l = 0; l < grid.frames; ++l) {
            for (int k = 0; k < grid.bins; ++k) buf[k] = grid.at(l, k, m);
            fft_inplace(buf.data(), cfg.fft_len, true);
            const int off = l * cfg.hop;
            for (int i = 0; i < cfg.fft_len; ++i)
                ch.samples[off + i] += win[i] * buf[i].real();
        }
        for (int i = 0; i < n; ++i)
            if (norm[i] > 1e-12) ch.samples[i] /= norm[i];
    }
    return out;
}

std::vector<double> convolve_seq(const std::vector<double>& x, const std::vector<double>& h) {
    require(!x.empty() && !h.empty(), "convolve: empty input");
    const size_t n = x.size(), m = h.size(), out_len = n + m - 1;
    std::vector<double> y(out_len, 0.0);

    if (n * m <= (1u << 18)) {
        for (size_t i = 0; i < n; ++i) {
            const double xi = x[i];
            for (size_t j = 0; j < m; ++j) y[i + j] += xi * h[j];
        }
        return y;
    }

    size_t nfft = 1;
    while (nfft < out_len) nfft <<= 1;
    std::vector<cdouble> a(nfft, 0.0), b(nfft, 0.0);
    for (size_t i = 0; i < n; ++i) a[i] = x[i];
    for (size_t j = 0; j < m; ++j) b[j] = h[j];
    fft_inplace(a.data(), static_cast<int>(nfft), false);
    fft_inplace(b.data(), static_cast<int>(nfft), false);
    for (size_t i = 0; i < nfft; ++i) a[i] *= b[i];
    fft_inplace(a.data(), static_cast<int>(nfft), true);
    for (size_t i = 0; i < out_len; ++i) y[i] = a[i].real();
    return y;
}

Signal convolve(const Signal& x, const std::vector<double>& h) {
    Signal out;
    out.sample_rate = x.sample_rate;
    out.samples = convolve_seq(x.samples, h);
    return out;
}

const std::vector<double>& pink_filter_taps() {
    static const std::vector<double> taps = [] {
        // Zero-phase frequency sampling of |H(nu)| = 1/sqrt(nu) (flat below
        // nu_lo to keep DC finite), truncated to 63 taps with a Hann window.
        const int grid = 8192;
        const int half_taps = 31;
        const double nu_lo = 0.004;  // ~64 Hz at 16 kHz
        std::vector<cdouble> spec(grid, 0.0);
        for (int k = 0; k <= grid / 2; ++k) {
            const double nu = static_cast<double>(k) / grid;
            const double mag = 1.0 / std::sqrt(std::max(nu, nu_lo));
            spec[k] = mag;
            if (k > 0 && k < grid / 2) spec[grid - k] = mag;
        }
        fft_inplace(spec.data(), grid, true);
        std::vector<double> h(2 * half_taps + 1);
        for (int j = -half_taps; j <= half_taps; ++j) {
            const int idx = (j + grid) % grid;
            const double wlen = 2 * half_taps + 2;
            const double win = 0.5 + 0.5 * std::cos(2.0 * kPi * j / wlen);
            h[j + half_taps] = spec[idx].real() * win;
        }
        // Normalize to unit filter energy so output variance ~= input variance.
        double e = 0.0;
        for (double t : h) e += t * t;
        const double s = 1.0 / std::sqrt(e);
        for (double& t : h) t *= s;
        return h;
    }();
    return taps;
}

Signal gen_pink_noise(int n, uint64_t seed, int sample_rate) {
    require(n > 0, "gen_pink_noise: n must be positive");
    const std::vector<double>& h = pink_filter_taps();
    const int half = (static_cast<int>(h.size()) - 1) / 2;

    Rng rng(seed);
    std::vector<double> white(n + h.size() - 1);
    for (double& w : white) w = rng.gaussian();

    Signal out;
    out.sample_rate = sample_rate;
    out.samples = convolve_seq(white, h);
    // Centered slice: drop the filter group delay at both ends.
    out.samples = std::vector<double>(out.samples.begin() + 2 * half,
                                      out.samples.begin() + 2 * half + n);
    return out;
}

SpeechLike gen_speech_like(int n, uint64_t seed, int sample_rate,
                           const SpeechLikeConfig& cfg) {
    require(n > 0, "gen_speech_like: n must be positive");
    const double fs = sample_rate;
    Rng rng(Rng::derive(seed, {0x5e9e}));
    Signal pink = gen_pink_noise(n, Rng::derive(seed, {0x91a4}), sample_rate);

    std::vector<double> env(n, 0.0);
    const int lead = static_cast<int>(cfg.lead_silence_s * fs);
    const int tail = static_cast<int>(cfg.tail_silence_s * fs);
    const int ramp = std::max(1, static_cast<int>(cfg.ramp_s * fs));

    int pos = lead;
    while (pos < n - tail) {
        const int active = static_cast<int>(rng.uniform(cfg.active_min_s, cfg.active_max_s) * fs);
        const int stop = std::min(pos + active, n - tail);
        const double mod_period = rng.uniform(cfg.mod_period_min_s, cfg.mod_period_max_s) * fs;
        const double phase = rng.uniform(0.0, 2.0 * kPi);
        for (int i = pos; i < stop; ++i) {
            const int t = i - pos;
            const double edge = std::min({1.0, (t + 0.5) / ramp, (stop - pos - t - 0.5) / ramp});
            if (edge <= 0.0) continue;
            const double mod = 0.3 + 0.7 * (0.5 - 0.5 * std::cos(2.0 * kPi * t / mod_period + phase));
            env[i] = edge * mod;
        }
        pos = stop + static_cast<int>(rng.uniform(cfg.gap_min_s, cfg.gap_max_s) * fs);
    }

    SpeechLike out;
    out.signal.sample_rate = sample_rate;
    out.signal.samples.resize(n);
    out.activity_mask.resize(n);
    for (int i = 0; i < n; ++i) {
        out.signal.samples[i] = env[i] * pink.samples[i];
        out.activity_mask[i] = env[i] > 0.0 ? 1 : 0;
    }
    return out;
}

MixResult mix_at_snr(const MultichannelSignal& target, const MultichannelSignal& noise,
                     double snr_db, const std::vector<uint8_t>& active_mask) {
    target.validate();
    noise.validate();
    require(target.num_channels() == noise.num_channels() && target.length() == noise.length(),
            "mix_at_snr: shape mismatch");
    if (!active_mask.empty())
        require(static_cast<int>(active_mask.size()) == target.length(),
                "mix_at_snr: mask length mismatch");

    const Signal& t_ref = target.ref();
    const Signal& n_ref = noise.channels[target.ref_index];
    double et = 0.0, en = 0.0;
    for (int i = 0; i < target.length(); ++i) {
        if (!active_mask.empty() && !active_mask[i]) continue;
        et += t_ref.samples[i] * t_ref.samples[i];
        en += n_ref.samples[i] * n_ref.samples[i];
    }
    require(et > 0.0, "mix_at_snr: target has zero energy over active samples");
    require(en > 0.0, "mix_at_snr: noise has zero energy over active samples");

    const double scale = std::sqrt(et / (en * std::pow(10.0, snr_db / 10.0)));

    MixResult res;
    res.noise_scale = scale;
    res.mixture = target;
    for (int m = 0; m < target.num_channels(); ++m)
        for (int i = 0; i < target.length(); ++i)
            res.mixture.channels[m].samples[i] += scale * noise.channels[m].samples[i];
    return res;
}

}  // namespace beamgraph
