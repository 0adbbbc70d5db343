#pragma once

#include "beamgraph/autodiff.hpp"
#include "beamgraph/rtf.hpp"

namespace beamgraph {

inline constexpr double kDbClamp = 150.0;

// Scale-invariant SDR in dB, clamped to +-150.
double si_sdr(const Signal& ref, const Signal& est);

// 10 log10(|s|^2 / |v|^2); zero noise clamps at +150.
double snr_out(const Signal& s, const Signal& v);

struct SbfResult {
    std::vector<double> per_mic_db;
    double mean_db = 0.0;
};

// Signal blocking factor: energy of the oracle-filtered reference against the
// energy of the oracle-vs-estimate filtered difference.
SbfResult sbf(const RTFFeature& oracle, const RTFFeature& estimate, const Signal& s_ref);

// Short-time objective intelligibility (and the extended variant), standard
// pipeline at a 10 kHz internal rate. rate must be 10000 or 16000.
double stoi(const Signal& ref, const Signal& est, int rate);
double estoi(const Signal& ref, const Signal& est, int rate);

// ---------------------------------------------------------------------------
// Differentiable losses. All builders return a scalar to MINIMIZE.

// Everything the beamformer-chain losses need for one example. The pointed-to
// data must outlive the tape.
struct BeamformExample {
    const TFGrid* noisy_grid = nullptr;
    const std::vector<CMatrix>* chol_vv = nullptr;  // per-bin Cholesky of loaded Phi_vv
    std::vector<double> reference;         // clean reference (SI-SDR I), istft length
    std::vector<double> oracle_reference;  // oracle-MVDR output (SI-SDR II)
    int ref_index = 0;
    int bins = 0;
    int l_uncausal = 0;
    int l_causal = 0;
    StftConfig stft_cfg;
    int sample_rate = 16000;
};

// feature -> spectrum -> MVDR -> beamform -> istft; returns the time signal.
RVar beamformed_output_tape(Tape& tape, const std::vector<RVar>& features,
                            const BeamformExample& ex);

RVar loss_feature_mse(Tape& tape, const std::vector<RVar>& features,
                      const std::vector<std::vector<double>>& targets);

// -SBF(oracle, est) against the reference signal (pointer must stay alive).
RVar loss_sbf(Tape& tape, const std::vector<RVar>& features, const RTFFeature& oracle,
              const std::vector<double>* s_ref);

// -SI-SDR of the beamformed output vs the clean reference (I) or the
// oracle-beamformer output (II).
RVar loss_sisdr(Tape& tape, const std::vector<RVar>& features, const BeamformExample& ex,
                bool version_two);

// Precomputed constants for the differentiable STOI loss (built from the
// reference signal once; reusable across steps).
struct StoiContext {
    int rate = 16000;
    int input_len = 0;  // expected estimate length at `rate`
    LinearMap resample;  // identity when rate == 10000
    LinearMap vad_ola;
    std::vector<double> window;
    std::vector<std::vector<int>> band_bins;
    Tensor ref_bands;                 // bands x frames
    std::vector<double> ref_seg_norm;  // per (segment, band): ||x||
    int num_frames = 0;

    static StoiContext build(const std::vector<double>& reference, int rate);
};

// -soft-STOI of the estimate against the context's reference.
RVar loss_stoi(Tape& tape, RVar est_signal, const StoiContext& ctx);

}  // namespace beamgraph
