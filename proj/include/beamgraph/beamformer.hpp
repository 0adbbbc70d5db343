#pragma once

#include "beamgraph/rtf.hpp"

namespace beamgraph {

struct BeamWeights {
    int bins = 0;
    int channels = 0;
    std::vector<cdouble> w;               // bins x channels
    std::vector<uint8_t> degenerate;      // per-bin fallback flag

    cdouble& at(int k, int m) { return w[static_cast<size_t>(k) * channels + m]; }
    cdouble at(int k, int m) const { return w[static_cast<size_t>(k) * channels + m]; }
};

// w(k) = Phi_vv^-1 h / (h^H Phi_vv^-1 h), via Cholesky solves. Bins where the
// quadratic form collapses fall back to the reference-channel selector and
// are flagged.
BeamWeights mvdr_weights(const RTFSpectrum& h, const std::vector<HermitianMatrix>& phi_vv);

// y(l,k) = w(k)^H r(l,k); output is a single-channel grid.
TFGrid apply_beamformer(const BeamWeights& w, const TFGrid& grid);

struct ShadowResult {
    Signal target;  // beamformed clean component
    Signal noise;   // beamformed noise component
};

// Beamform the clean and noise components separately and synthesize both.
ShadowResult shadow_filter(const BeamWeights& w, const TFGrid& clean_grid,
                           const TFGrid& noise_grid);

}  // namespace beamgraph
