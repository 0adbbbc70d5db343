#include "beamgraph/rtf.hpp"

#include <algorithm>
#include <cmath>

namespace beamgraph {

std::vector<uint8_t> dilate_mask(const std::vector<uint8_t>& mask, int taps) {
    std::vector<uint8_t> out(mask.size(), 0);
    int remaining = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) remaining = taps;
        if (remaining > 0) {
            out[i] = 1;
            --remaining;
        }
    }
    return out;
}

std::vector<FrameLabel> label_frames(const std::vector<uint8_t>& active_mask,
                                     const StftConfig& cfg, int num_frames) {
    std::vector<FrameLabel> labels(num_frames);
    for (int l = 0; l < num_frames; ++l) {
        const int off = l * cfg.hop;
        int active = 0;
        for (int i = 0; i < cfg.fft_len; ++i) {
            const size_t idx = off + i;
            if (idx < active_mask.size() && active_mask[idx]) ++active;
        }
        const double frac = static_cast<double>(active) / cfg.fft_len;
        if (frac < 0.10)
            labels[l] = FrameLabel::kNoiseOnly;
        else if (frac > 0.90)
            labels[l] = FrameLabel::kNoisy;
        else
            labels[l] = FrameLabel::kDiscard;
    }
    return labels;
}

namespace {

// Mean outer product over the selected frames for every bin. Exploits the
// conjugate symmetry of real-signal grids: bins above K/2 mirror below.
std::vector<HermitianMatrix> class_covariance(const TFGrid& grid,
                                              const std::vector<FrameLabel>& labels,
                                              FrameLabel which, int* frame_count) {
    const int m_ch = grid.channels;
    const int bins = grid.bins;
    int count = 0;
    for (int l = 0; l < grid.frames; ++l)
        if (labels[l] == which) ++count;
    *frame_count = count;
    require(count > 0, "estimate_covariances: a frame class has zero frames");

    const int half = bins / 2;
    std::vector<CMatrix> acc(half + 1, CMatrix(m_ch, m_ch));
    for (int l = 0; l < grid.frames; ++l) {
        if (labels[l] != which) continue;
        for (int k = 0; k <= half; ++k) {
            CMatrix& a = acc[k];
            for (int i = 0; i < m_ch; ++i) {
                const cdouble ri = grid.at(l, k, i);
                for (int j = 0; j < m_ch; ++j)
                    a.at(i, j) += ri * std::conj(grid.at(l, k, j));
            }
        }
    }
    std::vector<HermitianMatrix> cov(bins);
    const double inv = 1.0 / count;
    for (int k = 0; k <= half; ++k) {
        for (auto& v : acc[k].a) v *= inv;
        cov[k] = HermitianMatrix(acc[k]);
    }
    for (int k = half + 1; k < bins; ++k) {
        CMatrix conj_m(m_ch, m_ch);
        const CMatrix& src = cov[bins - k].m;
        for (int i = 0; i < m_ch * m_ch; ++i) conj_m.a[i] = std::conj(src.a[i]);
        cov[k] = HermitianMatrix(conj_m);
    }
    return cov;
}

void diagonal_load(std::vector<HermitianMatrix>& cov, double delta) {
    for (auto& c : cov) {
        const int n = c.size();
        double trace = 0.0;
        for (int i = 0; i < n; ++i) trace += c.at(i, i).real();
        const double load = delta * std::max(trace, 1e-300) / n;
        for (int i = 0; i < n; ++i) c.at(i, i) += load;
    }
}

// Interpolate degenerate bins (complex-linear per mic) from valid neighbors.
void fill_degenerate(RTFSpectrum& rtf, const std::vector<uint8_t>& valid) {
    const int bins = rtf.bins;
    int num_valid = 0;
    for (auto v : valid) num_valid += v;
    check(num_valid > 0, "estimate_rtf: every bin degenerate");
    if (num_valid == bins) return;

    for (int k = 0; k < bins; ++k) {
        if (valid[k]) continue;
        int lo = -1, hi = -1;
        for (int i = k - 1; i >= 0; --i)
            if (valid[i]) {
                lo = i;
                break;
            }
        for (int i = k + 1; i < bins; ++i)
            if (valid[i]) {
                hi = i;
                break;
            }
        for (int m = 0; m < rtf.channels; ++m) {
            if (m == rtf.ref_index) continue;
            cdouble value;
            if (lo >= 0 && hi >= 0) {
                const double t = static_cast<double>(k - lo) / (hi - lo);
                value = (1.0 - t) * rtf.at(lo, m) + t * rtf.at(hi, m);
            } else {
                value = rtf.at(lo >= 0 ? lo : hi, m);
            }
            rtf.at(k, m) = value;
        }
    }
}

RTFSpectrum rtf_from_pencils(const std::vector<HermitianMatrix>& phi_rr,
                             const std::vector<HermitianMatrix>* phi_vv, int ref_index) {
    const int bins = static_cast<int>(phi_rr.size());
    const int m_ch = phi_rr[0].size();
    require(ref_index >= 0 && ref_index < m_ch, "estimate_rtf: ref_index out of range");

    RTFSpectrum rtf;
    rtf.ref_index = ref_index;
    rtf.bins = bins;
    rtf.channels = m_ch;
    rtf.h.assign(static_cast<size_t>(bins) * m_ch, 0.0);
    std::vector<uint8_t> valid(bins, 0);

    const HermitianMatrix eye = HermitianMatrix::identity(m_ch);
    const int half = bins / 2;
    for (int k = 0; k <= half; ++k) {
        const HermitianMatrix& b = phi_vv ? (*phi_vv)[k] : eye;
        const GevdTop top = gevd_top(phi_rr[k], b);
        std::vector<cdouble> num = matvec(b.m, top.phi);  // Phi_vv * phi
        double norm2 = 0.0;
        for (const auto& z : num) norm2 += std::norm(z);
        const cdouble ref = num[ref_index];
        if (std::abs(ref) < 1e-12 * std::sqrt(norm2)) continue;  // degenerate bin
        valid[k] = 1;
        for (int m = 0; m < m_ch; ++m) rtf.at(k, m) = num[m] / ref;
        rtf.at(k, ref_index) = 1.0;  // exact by contract
    }
    // Real-signal symmetry: upper half mirrors the lower conjugate.
    for (int k = half + 1; k < bins; ++k) {
        valid[k] = valid[bins - k];
        for (int m = 0; m < m_ch; ++m) rtf.at(k, m) = std::conj(rtf.at(bins - k, m));
        rtf.at(k, ref_index) = 1.0;
    }
    fill_degenerate(rtf, valid);
    return rtf;
}

}  // namespace

CovariancePair estimate_covariances(const TFGrid& grid,
                                    const std::vector<FrameLabel>& labels) {
    require(static_cast<int>(labels.size()) == grid.frames,
            "estimate_covariances: label count must match frames");
    CovariancePair out;
    out.phi_rr = class_covariance(grid, labels, FrameLabel::kNoisy, &out.frames_noisy);
    out.phi_vv =
        class_covariance(grid, labels, FrameLabel::kNoiseOnly, &out.frames_noise_only);
    require(out.frames_noisy >= grid.channels && out.frames_noise_only >= grid.channels,
            "estimate_covariances: need at least M frames per class");
    diagonal_load(out.phi_vv, 1e-6);
    return out;
}

RTFSpectrum estimate_rtf_gevd(const CovariancePair& cov, int ref_index) {
    require(!cov.phi_rr.empty() && cov.phi_rr.size() == cov.phi_vv.size(),
            "estimate_rtf_gevd: malformed covariance pair");
    return rtf_from_pencils(cov.phi_rr, &cov.phi_vv, ref_index);
}

RTFSpectrum estimate_rtf_clean(const TFGrid& grid, const std::vector<FrameLabel>& labels,
                               int ref_index) {
    require(static_cast<int>(labels.size()) == grid.frames,
            "estimate_rtf_clean: label count must match frames");
    int frames_noisy = 0;
    auto phi_rr = class_covariance(grid, labels, FrameLabel::kNoisy, &frames_noisy);
    require(frames_noisy >= grid.channels,
            "estimate_rtf_clean: need at least M active frames");
    return rtf_from_pencils(phi_rr, nullptr, ref_index);
}

RTFFeature rtf_to_feature(const RTFSpectrum& h, int l_uncausal, int l_causal) {
    const int bins = h.bins;
    require(bins >= l_uncausal + l_causal, "rtf_to_feature: K must be >= d");

    RTFFeature f;
    f.l_uncausal = l_uncausal;
    f.l_causal = l_causal;
    std::vector<cdouble> spec(bins);
    for (int m = 0; m < h.channels; ++m) {
        if (m == h.ref_index) continue;
        for (int k = 0; k < bins; ++k) spec[k] = h.at(k, m);
        fft_inplace(spec.data(), bins, true);
        std::vector<double> feat(l_uncausal + l_causal);
        for (int i = 0; i < l_uncausal; ++i) feat[i] = spec[bins - l_uncausal + i].real();
        for (int i = 0; i < l_causal; ++i) feat[l_uncausal + i] = spec[i].real();
        f.per_mic.push_back(std::move(feat));
    }
    return f;
}

RTFSpectrum feature_to_rtf(const RTFFeature& f, int bins, int ref_index, int channels) {
    require(static_cast<int>(f.per_mic.size()) == channels - 1,
            "feature_to_rtf: expected M-1 feature vectors");
    require(bins >= f.dim(), "feature_to_rtf: K must be >= d");

    RTFSpectrum h;
    h.ref_index = ref_index;
    h.bins = bins;
    h.channels = channels;
    h.h.assign(static_cast<size_t>(bins) * channels, 0.0);
    for (int k = 0; k < bins; ++k) h.at(k, ref_index) = 1.0;

    std::vector<cdouble> t(bins);
    int fi = 0;
    for (int m = 0; m < channels; ++m) {
        if (m == ref_index) continue;
        const std::vector<double>& feat = f.per_mic[fi++];
        require(static_cast<int>(feat.size()) == f.dim(), "feature_to_rtf: bad feature dim");
        std::fill(t.begin(), t.end(), cdouble{0.0, 0.0});
        for (int i = 0; i < f.l_uncausal; ++i) t[bins - f.l_uncausal + i] = feat[i];
        for (int i = 0; i < f.l_causal; ++i) t[i] = feat[f.l_uncausal + i];
        fft_inplace(t.data(), bins, false);
        for (int k = 0; k < bins; ++k) h.at(k, m) = t[k];
    }
    return h;
}

namespace {

double npm_db(const cdouble* est, const cdouble* ref, int n) {
    cdouble inner = 0.0;
    double est2 = 0.0, ref2 = 0.0;
    for (int i = 0; i < n; ++i) {
        inner += std::conj(est[i]) * ref[i];
        est2 += std::norm(est[i]);
        ref2 += std::norm(ref[i]);
    }
    require(ref2 > 0.0, "npm: zero reference");
    if (est2 == 0.0) return 0.0;  // no projection possible: full misalignment
    double err2 = 0.0;
    const cdouble proj = inner / est2;
    for (int i = 0; i < n; ++i) err2 += std::norm(ref[i] - proj * est[i]);
    const double ratio = err2 / ref2;
    if (ratio <= 1e-15) return -150.0;
    return std::max(-150.0, 10.0 * std::log10(ratio));
}

}  // namespace

NpmResult npm(const RTFFeature& estimate, const RTFFeature& reference) {
    require(estimate.per_mic.size() == reference.per_mic.size() &&
                estimate.dim() == reference.dim(),
            "npm: shape mismatch");
    NpmResult out;
    for (size_t m = 0; m < estimate.per_mic.size(); ++m) {
        const int n = estimate.dim();
        std::vector<cdouble> e(n), r(n);
        for (int i = 0; i < n; ++i) {
            e[i] = estimate.per_mic[m][i];
            r[i] = reference.per_mic[m][i];
        }
        out.per_mic_db.push_back(npm_db(e.data(), r.data(), n));
    }
    for (double v : out.per_mic_db) out.mean_db += v;
    out.mean_db /= static_cast<double>(out.per_mic_db.size());
    return out;
}

NpmResult npm(const RTFSpectrum& estimate, const RTFSpectrum& reference) {
    require(estimate.bins == reference.bins && estimate.channels == reference.channels,
            "npm: shape mismatch");
    NpmResult out;
    std::vector<cdouble> e(estimate.bins), r(estimate.bins);
    for (int m = 0; m < estimate.channels; ++m) {
        if (m == estimate.ref_index) continue;
        for (int k = 0; k < estimate.bins; ++k) {
            e[k] = estimate.at(k, m);
            r[k] = reference.at(k, m);
        }
        out.per_mic_db.push_back(npm_db(e.data(), r.data(), estimate.bins));
    }
    for (double v : out.per_mic_db) out.mean_db += v;
    out.mean_db /= static_cast<double>(out.per_mic_db.size());
    return out;
}

RTFSpectrum rtf_from_airs(const std::vector<std::vector<double>>& airs, int ref_index,
                          int bins) {
    const int channels = static_cast<int>(airs.size());
    require(channels >= 2, "rtf_from_airs: need at least 2 channels");

    // Time-alias each AIR to K taps: DFT_K(folded) samples the true transfer
    // function at the STFT bin frequencies.
    std::vector<std::vector<cdouble>> atf(channels);
    for (int m = 0; m < channels; ++m) {
        std::vector<cdouble> folded(bins, 0.0);
        for (size_t i = 0; i < airs[m].size(); ++i) folded[i % bins] += airs[m][i];
        fft_inplace(folded.data(), bins, false);
        atf[m] = std::move(folded);
    }

    RTFSpectrum h;
    h.ref_index = ref_index;
    h.bins = bins;
    h.channels = channels;
    h.h.assign(static_cast<size_t>(bins) * channels, 0.0);
    for (int k = 0; k < bins; ++k) {
        const cdouble ref = atf[ref_index][k];
        for (int m = 0; m < channels; ++m)
            h.at(k, m) = (std::abs(ref) > 1e-300) ? atf[m][k] / ref : cdouble{0.0, 0.0};
        h.at(k, ref_index) = 1.0;
    }
    return h;
}

}  // namespace beamgraph
