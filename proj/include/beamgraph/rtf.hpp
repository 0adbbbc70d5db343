#pragma once

#include <vector>

#include "beamgraph/linalg.hpp"
#include "beamgraph/signal.hpp"

namespace beamgraph {

enum class FrameLabel { kNoisy, kNoiseOnly, kDiscard };

// Frame labels from a per-sample activity mask: a frame is noise-only when
// under 10% of its samples are active and noisy when over 90% are. The mask
// should describe the rendered signal, so callers dilate the excitation mask
// by the AIR length first (see dilate_mask).
std::vector<FrameLabel> label_frames(const std::vector<uint8_t>& active_mask,
                                     const StftConfig& cfg, int num_frames);

// Extends every active run forward by `taps - 1` samples: the support of the
// excitation convolved with a `taps`-long response.
std::vector<uint8_t> dilate_mask(const std::vector<uint8_t>& mask, int taps);

struct CovariancePair {
    std::vector<HermitianMatrix> phi_rr;  // per bin, M x M
    std::vector<HermitianMatrix> phi_vv;
    int frames_noisy = 0;
    int frames_noise_only = 0;
};

struct RTFSpectrum {
    int ref_index = 0;
    int bins = 0;
    int channels = 0;
    std::vector<cdouble> h;  // bins x channels, h[ref] == 1 for every bin

    cdouble& at(int k, int m) { return h[static_cast<size_t>(k) * channels + m]; }
    cdouble at(int k, int m) const { return h[static_cast<size_t>(k) * channels + m]; }
};

// Per non-reference microphone, the truncated time-domain RTF of length
// d = l_uncausal + l_causal (wrapped non-causal tail first, then causal head).
struct RTFFeature {
    int l_uncausal = 128;
    int l_causal = 256;
    std::vector<std::vector<double>> per_mic;  // (M-1) x d, mic order skipping ref

    int dim() const { return l_uncausal + l_causal; }
};

// Phi_rr from noisy-labeled frames, Phi_vv from noise-only frames. Phi_vv is
// diagonally loaded by 1e-6 * trace/M.
CovariancePair estimate_covariances(const TFGrid& grid,
                                    const std::vector<FrameLabel>& labels);

// Per bin: top GEVD pair of (Phi_rr, Phi_vv), normalized h = Phi_vv phi /
// (Phi_vv phi)_ref. Degenerate bins (reference entry ~ 0) are filled by
// linear interpolation from adjacent valid bins.
RTFSpectrum estimate_rtf_gevd(const CovariancePair& cov, int ref_index);

// Noise-free path: Phi_vv = I, so the GEVD reduces to a plain EVD of Phi_rr.
RTFSpectrum estimate_rtf_clean(const TFGrid& grid, const std::vector<FrameLabel>& labels,
                               int ref_index);

RTFFeature rtf_to_feature(const RTFSpectrum& h, int l_uncausal, int l_causal);
RTFSpectrum feature_to_rtf(const RTFFeature& f, int bins, int ref_index, int channels);

struct NpmResult {
    std::vector<double> per_mic_db;
    double mean_db = 0.0;
};

// Normalized projection misalignment in dB, scale-invariant, clamped at -150.
NpmResult npm(const RTFFeature& estimate, const RTFFeature& reference);
NpmResult npm(const RTFSpectrum& estimate, const RTFSpectrum& reference);

// Ground-truth RTF from acoustic impulse responses: the ratio of transfer
// functions sampled at the K STFT bin frequencies (time-aliased to K taps).
RTFSpectrum rtf_from_airs(const std::vector<std::vector<double>>& airs, int ref_index,
                          int bins);

}  // namespace beamgraph
