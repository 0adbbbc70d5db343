#pragma once

#include <complex>
#include <cstdint>
#include <vector>

#include "beamgraph/common.hpp"

namespace beamgraph {

using cdouble = std::complex<double>;

struct Signal {
    std::vector<double> samples;
    int sample_rate = 16000;

    int length() const { return static_cast<int>(samples.size()); }
    void validate() const;
};

struct MultichannelSignal {
    std::vector<Signal> channels;
    int ref_index = 0;

    int num_channels() const { return static_cast<int>(channels.size()); }
    int length() const { return channels.empty() ? 0 : channels[0].length(); }
    int sample_rate() const { return channels.empty() ? 0 : channels[0].sample_rate; }
    const Signal& ref() const { return channels[ref_index]; }
    void validate() const;
};

enum class Window { kHann, kSqrtHann };

struct StftConfig {
    int fft_len = 2048;
    int hop = 512;
    Window window = Window::kSqrtHann;

    int bins() const { return fft_len; }  // two-sided spectrum, K == fft_len
    void validate() const;
    bool operator==(const StftConfig&) const = default;
};

// frames L x bins K x channels M, complex, row-major with channel fastest.
struct TFGrid {
    int frames = 0;
    int bins = 0;
    int channels = 0;
    StftConfig config;
    std::vector<cdouble> v;

    cdouble& at(int l, int k, int m) {
        return v[(static_cast<size_t>(l) * bins + k) * channels + m];
    }
    cdouble at(int l, int k, int m) const {
        return v[(static_cast<size_t>(l) * bins + k) * channels + m];
    }
    static TFGrid zeros(int frames, int bins, int channels, const StftConfig& cfg);
};

// In-place radix-2 FFT. n must be a power of two. Forward is the plain
// unnormalized DFT; the inverse divides by n, so ifft(fft(x)) == x.
void fft_inplace(cdouble* a, int n, bool inverse);
std::vector<cdouble> fft(const std::vector<cdouble>& x, bool inverse = false);
std::vector<cdouble> ifft(const std::vector<cdouble>& x);

std::vector<double> make_window(Window w, int n);

// Analysis frames: L = floor((len - fft_len)/hop) + 1, each windowed then DFT'd.
TFGrid stft(const MultichannelSignal& sig, const StftConfig& cfg);

// Weighted overlap-add with per-sample window-energy normalization.
// Output length (L-1)*hop + fft_len.
MultichannelSignal istft(const TFGrid& grid, const StftConfig& cfg);

// Full linear convolution, length len(x)+len(h)-1. Uses an FFT fast path
// for large sizes, direct summation otherwise.
Signal convolve(const Signal& x, const std::vector<double>& h);
std::vector<double> convolve_seq(const std::vector<double>& x, const std::vector<double>& h);

// Pink noise: white gaussian noise shaped by a fixed 63-tap FIR whose
// magnitude approximates 1/sqrt(f). Deterministic under seed.
Signal gen_pink_noise(int n, uint64_t seed, int sample_rate = 16000);

// The 63-tap pink-shaping filter itself (exposed for tests).
const std::vector<double>& pink_filter_taps();

struct SpeechLikeConfig {
    double lead_silence_s = 0.35;
    double tail_silence_s = 0.15;
    double active_min_s = 0.30;
    double active_max_s = 0.50;
    double gap_min_s = 0.15;
    double gap_max_s = 0.25;
    double ramp_s = 0.010;
    double mod_period_min_s = 0.08;
    double mod_period_max_s = 0.20;
};

struct SpeechLike {
    Signal signal;
    std::vector<uint8_t> activity_mask;  // 1 exactly where the envelope is nonzero
};

// Amplitude-modulated pink noise with silent gaps; the mask marks active samples.
SpeechLike gen_speech_like(int n, uint64_t seed, int sample_rate = 16000,
                           const SpeechLikeConfig& cfg = {});

struct MixResult {
    MultichannelSignal mixture;
    double noise_scale = 0.0;
};

// Scales `noise` so that the reference-channel SNR over active samples equals
// snr_db, then adds it to `target`. Empty mask means all samples active.
MixResult mix_at_snr(const MultichannelSignal& target, const MultichannelSignal& noise,
                     double snr_db, const std::vector<uint8_t>& active_mask = {});

}  // namespace beamgraph
