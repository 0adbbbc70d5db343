#pragma once

#include <complex>
#include <vector>

#include "beamgraph/common.hpp"

namespace beamgraph {

using cdouble = std::complex<double>;

struct CMatrix {
    int rows = 0, cols = 0;
    std::vector<cdouble> a;  // row-major

    CMatrix() = default;
    CMatrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c) {}

    cdouble& at(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    cdouble at(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    static CMatrix identity(int n);
    CMatrix adjoint() const;  // conjugate transpose
};

// Hermitian matrix; construction symmetrizes exactly ((A + A^H)/2 with the
// conjugate pair assigned from one value) and forces a real diagonal.
struct HermitianMatrix {
    CMatrix m;

    HermitianMatrix() = default;
    explicit HermitianMatrix(const CMatrix& a);
    static HermitianMatrix identity(int n);

    int size() const { return m.rows; }
    cdouble at(int i, int j) const { return m.at(i, j); }
    cdouble& at(int i, int j) { return m.at(i, j); }
};

// Lower-triangular L with L L^H == B. Fails (naming the pivot index) when a
// pivot drops below a relative tolerance, i.e. B is not positive definite.
CMatrix cholesky(const HermitianMatrix& b);

// In-place triangular solves against a Cholesky factor.
void solve_lower(const CMatrix& l, cdouble* x, int n);          // L y = x
void solve_lower_adjoint(const CMatrix& l, cdouble* x, int n);  // L^H y = x

struct Evd {
    std::vector<double> eigenvalues;  // descending
    CMatrix eigenvectors;             // columns, orthonormal
};

// Householder tridiagonalization followed by implicit-shift QL. Eigenvector
// phases are fixed by making the largest-magnitude entry real-positive.
Evd hermitian_evd(const HermitianMatrix& a);

struct GevdTop {
    double mu = 0.0;
    std::vector<cdouble> phi;  // unit norm, first significant entry real-positive
};

// Top generalized eigenpair of A phi = mu B phi via Cholesky whitening of B.
GevdTop gevd_top(const HermitianMatrix& a, const HermitianMatrix& b);

// Solve A x = b for positive-definite Hermitian A.
std::vector<cdouble> solve_hermitian(const HermitianMatrix& a, const std::vector<cdouble>& b);

std::vector<cdouble> matvec(const CMatrix& a, const std::vector<cdouble>& x);

}  // namespace beamgraph
