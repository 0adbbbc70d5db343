#include "beamgraph/beamformer.hpp"

#include <cmath>

namespace beamgraph {

BeamWeights mvdr_weights(const RTFSpectrum& h, const std::vector<HermitianMatrix>& phi_vv) {
    require(static_cast<int>(phi_vv.size()) == h.bins, "mvdr_weights: bin count mismatch");
    const int m_ch = h.channels;
    require(!phi_vv.empty() && phi_vv[0].size() == m_ch, "mvdr_weights: channel mismatch");

    BeamWeights bw;
    bw.bins = h.bins;
    bw.channels = m_ch;
    bw.w.assign(static_cast<size_t>(h.bins) * m_ch, 0.0);
    bw.degenerate.assign(h.bins, 0);

    // Conjugate-symmetric steering (real time-domain data) lets bins above
    // K/2 mirror the lower half: w(K-k) = conj(w(k)).
    const int half = h.bins / 2;
    std::vector<cdouble> hk(m_ch), x(m_ch);
    for (int k = 0; k <= half; ++k) {
        for (int m = 0; m < m_ch; ++m) hk[m] = h.at(k, m);
        const CMatrix chol = cholesky(phi_vv[k]);
        for (int m = 0; m < m_ch; ++m) x[m] = hk[m];
        solve_lower(chol, x.data(), m_ch);
        solve_lower_adjoint(chol, x.data(), m_ch);
        cdouble q = 0.0;
        for (int m = 0; m < m_ch; ++m) q += std::conj(hk[m]) * x[m];
        if (std::abs(q) < 1e-12) {
            bw.degenerate[k] = 1;
            bw.at(k, h.ref_index) = 1.0;
        } else {
            for (int m = 0; m < m_ch; ++m) bw.at(k, m) = x[m] / q;
        }
    }
    for (int k = half + 1; k < h.bins; ++k) {
        bw.degenerate[k] = bw.degenerate[h.bins - k];
        for (int m = 0; m < m_ch; ++m) bw.at(k, m) = std::conj(bw.at(h.bins - k, m));
    }
    return bw;
}

TFGrid apply_beamformer(const BeamWeights& w, const TFGrid& grid) {
    require(w.bins == grid.bins && w.channels == grid.channels,
            "apply_beamformer: shape mismatch");
    TFGrid out = TFGrid::zeros(grid.frames, grid.bins, 1, grid.config);
    for (int l = 0; l < grid.frames; ++l)
        for (int k = 0; k < grid.bins; ++k) {
            cdouble s = 0.0;
            for (int m = 0; m < grid.channels; ++m)
                s += std::conj(w.at(k, m)) * grid.at(l, k, m);
            out.at(l, k, 0) = s;
        }
    return out;
}

ShadowResult shadow_filter(const BeamWeights& w, const TFGrid& clean_grid,
                           const TFGrid& noise_grid) {
    require(clean_grid.frames == noise_grid.frames && clean_grid.bins == noise_grid.bins &&
                clean_grid.channels == noise_grid.channels &&
                clean_grid.config == noise_grid.config,
            "shadow_filter: grid mismatch");
    ShadowResult res;
    res.target = istft(apply_beamformer(w, clean_grid), clean_grid.config).channels[0];
    res.noise = istft(apply_beamformer(w, noise_grid), noise_grid.config).channels[0];
    return res;
}

}  // namespace beamgraph
