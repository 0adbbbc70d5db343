#pragma once

#include <complex>
#include <functional>
#include <vector>

#include "beamgraph/linalg.hpp"
#include "beamgraph/signal.hpp"

namespace beamgraph {

// Dense real matrix, row-major. Vectors are 1 x n rows, scalars 1 x 1.
struct Tensor {
    int rows = 0, cols = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    static Tensor row(const std::vector<double>& x);
    static Tensor scalar(double x);

    double& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
    size_t size() const { return v.size(); }
};

struct CTensor {
    int rows = 0, cols = 0;
    std::vector<cdouble> v;

    CTensor() = default;
    CTensor(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, cdouble{}) {}
    cdouble& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    cdouble at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
};

struct RVar {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};
struct CVar {
    int idx = -1;
};

// Sparse linear map y[i] = sum_j w_ij x[idx_ij] (resamplers, frame selection).
struct LinearMap {
    int in_len = 0;
    int out_len = 0;
    std::vector<std::vector<std::pair<int, double>>> terms;  // per output index

    std::vector<double> apply(const std::vector<double>& x) const;
};

// Reverse-mode tape over real and complex tensors. Complex adjoints use the
// convention g = dL/dRe + i dL/dIm, so dL = Re(<g, dz>).
class Tape {
public:
    // Leaves. leaf_ref references external storage that must outlive the tape.
    RVar leaf(Tensor value, bool needs_grad = false);
    RVar leaf_ref(const Tensor* value, bool needs_grad = true);
    CVar cleaf(CTensor value);

    const Tensor& val(RVar v) const;
    const CTensor& cval(CVar v) const;
    // Gradient after backward(); zero tensor if the variable was not reached.
    Tensor grad(RVar v) const;

    // Real primitives.
    RVar matmul(RVar a, RVar b);
    RVar affine(RVar x, RVar w, RVar b);  // x(m,in) w(in,out) + row-broadcast b(1,out)
    RVar relu(RVar a);
    RVar dropout(RVar a, Tensor mask);  // mask includes the 1/(1-p) scaling
    RVar concat_cols(RVar a, RVar b);
    RVar stack_rows(const std::vector<RVar>& rows);
    RVar mean_rows(RVar a);
    RVar add(RVar a, RVar b);
    RVar sub(RVar a, RVar b);
    RVar scale(RVar a, double s);
    RVar mul(RVar a, RVar b);         // elementwise
    RVar mul_scalar(RVar a, RVar s);  // s is 1x1
    RVar dot(RVar a, RVar b);
    RVar sum_sq(RVar a);
    RVar sum(RVar a);
    RVar sqrt_scalar(RVar s);
    RVar div_scalar(RVar num, RVar den);  // scalars
    // mult * log10(num/den), clamped to [-clamp_db, clamp_db]; zero gradient
    // when clamped or when den underflows.
    RVar log_ratio_db(RVar num, RVar den, double mult, double clamp_db);
    RVar sub_mean(RVar a);  // subtract the mean entry (centering)
    RVar conv_full_const(RVar f, const std::vector<double>* kernel);
    RVar linear_map(RVar x, const LinearMap* map);
    // Smooth elementwise min(x, cap): cap - tau*softplus((cap - x)/tau).
    RVar softmin_const(RVar x, Tensor cap, double tau);
    // Scale-invariant SDR against a constant reference, clamped at +-clamp_db.
    RVar si_sdr_vs_const(RVar est, const std::vector<double>* ref, double clamp_db);

    // Complex / mixed primitives (the beamformer chain).
    CVar feature_to_spectrum(RVar f, int bins, int l_uncausal, int l_causal);
    CVar assemble_steering(const std::vector<CVar>& per_mic, int ref_index);
    CVar chol_solve_rows(CVar h, const std::vector<CMatrix>* chol_per_bin);
    CVar quadform_rows(CVar h, CVar x);
    CVar div_rows_fallback(CVar x, CVar q, int ref_index, double eps,
                           std::vector<uint8_t>* status_out);
    CVar beamform_rows(CVar w, const TFGrid* grid);
    RVar istft_real(CVar y, StftConfig cfg);
    CVar stft_const_window(RVar x, int frame_len, int hop, int nfft,
                           const std::vector<double>* window);
    RVar band_energy(CVar spec, const std::vector<std::vector<int>>* band_bins);
    RVar slice(RVar a, int r0, int nr, int c0, int nc);

    void backward(RVar loss_scalar);

private:
    struct RNode {
        Tensor value;
        const Tensor* ext = nullptr;
        Tensor grad;
        bool needs_grad = false;
        std::function<void()> back;
        const Tensor& val() const { return ext ? *ext : value; }
    };
    struct CNode {
        CTensor value;
        CTensor grad;
        bool needs_grad = false;
        std::function<void()> back;
    };

    RVar push(Tensor value, bool needs_grad, std::function<void()> back);
    CVar cpush(CTensor value, bool needs_grad, std::function<void()> back);
    Tensor& rgrad(RVar v);    // allocate on demand
    CTensor& cgrad(CVar v);

    std::vector<RNode> rnodes_;
    std::vector<CNode> cnodes_;
    std::vector<std::pair<bool, int>> order_;  // (is_complex, idx)
    bool backward_done_ = false;

    friend struct TapeTestHook;
};

}  // namespace beamgraph
