#include "beamgraph/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace beamgraph {

CMatrix CMatrix::identity(int n) {
    CMatrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

CMatrix CMatrix::adjoint() const {
    CMatrix r(cols, rows);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) r.at(j, i) = std::conj(at(i, j));
    return r;
}

HermitianMatrix::HermitianMatrix(const CMatrix& a) {
    require(a.rows == a.cols, "HermitianMatrix: matrix must be square");
    for (const cdouble& z : a.a)
        require(std::isfinite(z.real()) && std::isfinite(z.imag()),
                "HermitianMatrix: entries must be finite");
    m = CMatrix(a.rows, a.cols);
    for (int i = 0; i < a.rows; ++i) {
        m.at(i, i) = a.at(i, i).real();
        for (int j = i + 1; j < a.cols; ++j) {
            const cdouble v = 0.5 * (a.at(i, j) + std::conj(a.at(j, i)));
            m.at(i, j) = v;
            m.at(j, i) = std::conj(v);
        }
    }
}

HermitianMatrix HermitianMatrix::identity(int n) {
    HermitianMatrix h;
    h.m = CMatrix::identity(n);
    return h;
}

CMatrix cholesky(const HermitianMatrix& b) {
    const int n = b.size();
    double max_diag = 0.0;
    for (int i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(b.at(i, i).real()));
    const double tol = std::max(max_diag, 1e-300) * n * 1e-14;

    CMatrix l(n, n);
    for (int j = 0; j < n; ++j) {
        double d = b.at(j, j).real();
        for (int k = 0; k < j; ++k) d -= std::norm(l.at(j, k));
        if (!(d > tol))
            fail("cholesky: matrix not positive definite (pivot " + std::to_string(j) + ")");
        const double ljj = std::sqrt(d);
        l.at(j, j) = ljj;
        for (int i = j + 1; i < n; ++i) {
            cdouble s = b.at(i, j);
            for (int k = 0; k < j; ++k) s -= l.at(i, k) * std::conj(l.at(j, k));
            l.at(i, j) = s / ljj;
        }
    }
    return l;
}

void solve_lower(const CMatrix& l, cdouble* x, int n) {
    for (int i = 0; i < n; ++i) {
        cdouble s = x[i];
        for (int k = 0; k < i; ++k) s -= l.at(i, k) * x[k];
        x[i] = s / l.at(i, i);
    }
}

void solve_lower_adjoint(const CMatrix& l, cdouble* x, int n) {
    for (int i = n - 1; i >= 0; --i) {
        cdouble s = x[i];
        for (int k = i + 1; k < n; ++k) s -= std::conj(l.at(k, i)) * x[k];
        x[i] = s / std::conj(l.at(i, i));
    }
}

namespace {

// Unitary reduction A = Q T Q^H with T real symmetric tridiagonal.
void householder_tridiagonalize(CMatrix a, std::vector<double>& diag,
                                std::vector<double>& off, CMatrix& q) {
    const int n = a.rows;
    q = CMatrix::identity(n);
    std::vector<cdouble> sub(n > 1 ? n - 1 : 0);  // complex subdiagonal of T

    std::vector<cdouble> v(n), p(n), w(n);
    for (int i = 0; i + 2 < n; ++i) {
        const int m = n - 1 - i;  // length of the column below the diagonal
        double xnorm2 = 0.0;
        for (int r = 0; r < m; ++r) xnorm2 += std::norm(a.at(i + 1 + r, i));
        const double xnorm = std::sqrt(xnorm2);
        if (xnorm == 0.0) {
            sub[i] = 0.0;
            continue;
        }
        const cdouble x0 = a.at(i + 1, i);
        const cdouble phase = (std::abs(x0) > 0.0) ? x0 / std::abs(x0) : cdouble(1.0);
        const cdouble alpha = -phase * xnorm;

        double vnorm2 = 0.0;
        for (int r = 0; r < m; ++r) {
            v[r] = a.at(i + 1 + r, i) - (r == 0 ? alpha : cdouble(0.0));
            vnorm2 += std::norm(v[r]);
        }
        sub[i] = alpha;
        if (vnorm2 == 0.0) continue;
        const double tau = 2.0 / vnorm2;

        // Rank-2 update of the trailing block: B -= v w^H + w v^H,
        // w = tau*B*v - (tau/2)(v^H tau B v) v.
        for (int r = 0; r < m; ++r) {
            cdouble s = 0.0;
            for (int c = 0; c < m; ++c) s += a.at(i + 1 + r, i + 1 + c) * v[c];
            p[r] = tau * s;
        }
        cdouble vp = 0.0;
        for (int r = 0; r < m; ++r) vp += std::conj(v[r]) * p[r];
        const double cshift = 0.5 * tau * vp.real();
        for (int r = 0; r < m; ++r) w[r] = p[r] - cshift * v[r];
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < m; ++c)
                a.at(i + 1 + r, i + 1 + c) -=
                    v[r] * std::conj(w[c]) + w[r] * std::conj(v[c]);

        for (int r = 0; r < m; ++r) a.at(i + 1 + r, i) = (r == 0) ? alpha : cdouble(0.0);

        // Q <- Q * H, H = I - tau v v^H acting on rows/cols i+1..n-1.
        for (int r = 0; r < n; ++r) {
            cdouble s = 0.0;
            for (int c = 0; c < m; ++c) s += q.at(r, i + 1 + c) * v[c];
            s *= tau;
            for (int c = 0; c < m; ++c) q.at(r, i + 1 + c) -= s * std::conj(v[c]);
        }
    }
    if (n > 1) sub[n - 2] = a.at(n - 1, n - 2);

    // Diagonal phase similarity to make the subdiagonal real non-negative.
    std::vector<cdouble> d(n, 1.0);
    for (int j = 0; j + 1 < n; ++j) {
        const double mag = std::abs(sub[j]);
        d[j + 1] = (mag > 0.0) ? sub[j] * d[j] / mag : d[j];
    }
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) q.at(r, c) *= d[c];

    diag.resize(n);
    off.assign(n > 1 ? n - 1 : 0, 0.0);
    for (int j = 0; j < n; ++j) diag[j] = a.at(j, j).real();
    for (int j = 0; j + 1 < n; ++j) off[j] = std::abs(sub[j]);
}

// Implicit-shift QL on a real symmetric tridiagonal, accumulating the
// rotations into z (EISPACK tql2 lineage).
void tql2(std::vector<double>& d, std::vector<double>& e, std::vector<double>& z, int n) {
    if (n <= 1) return;
    e.push_back(0.0);
    const double eps = std::numeric_limits<double>::epsilon();
    double f = 0.0, tst1 = 0.0;
    auto zat = [&](int r, int c) -> double& { return z[static_cast<size_t>(r) * n + c]; };

    for (int l = 0; l < n; ++l) {
        tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
        int m = l;
        while (m < n && std::abs(e[m]) > eps * tst1) ++m;
        if (m > l) {
            int iter = 0;
            do {
                if (++iter > 50) fail("hermitian_evd: QL iteration did not converge");
                double g = d[l];
                double p = (d[l + 1] - g) / (2.0 * e[l]);
                double r = std::hypot(p, 1.0);
                if (p < 0) r = -r;
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                const double dl1 = d[l + 1];
                double h = g - d[l];
                for (int i = l + 2; i < n; ++i) d[i] -= h;
                f += h;

                p = d[m];
                double c = 1.0, c2 = c, c3 = c;
                const double el1 = e[l + 1];
                double s = 0.0, s2 = 0.0;
                for (int i = m - 1; i >= l; --i) {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = std::hypot(p, e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for (int k = 0; k < n; ++k) {
                        h = zat(k, i + 1);
                        zat(k, i + 1) = s * zat(k, i) + c * h;
                        zat(k, i) = c * zat(k, i) - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
            } while (std::abs(e[l]) > eps * tst1);
        }
        d[l] += f;
        e[l] = 0.0;
    }
}

void fix_phase(std::vector<cdouble>& v) {
    int best = 0;
    double best_mag = -1.0;
    for (int i = 0; i < static_cast<int>(v.size()); ++i) {
        const double m = std::abs(v[i]);
        if (m > best_mag) {
            best_mag = m;
            best = i;
        }
    }
    if (best_mag > 0.0) {
        const cdouble rot = std::conj(v[best]) / best_mag;
        for (cdouble& z : v) z *= rot;
    }
}

}  // namespace

Evd hermitian_evd(const HermitianMatrix& a) {
    const int n = a.size();
    require(n > 0, "hermitian_evd: empty matrix");

    std::vector<double> d, e;
    CMatrix q;
    householder_tridiagonalize(a.m, d, e, q);

    std::vector<double> z(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) z[static_cast<size_t>(i) * n + i] = 1.0;
    tql2(d, e, z, n);

    // Full eigenvectors Q*Z, then sort descending by eigenvalue.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return d[x] > d[y]; });

    Evd out;
    out.eigenvalues.resize(n);
    out.eigenvectors = CMatrix(n, n);
    std::vector<cdouble> col(n);
    for (int jj = 0; jj < n; ++jj) {
        const int j = order[jj];
        out.eigenvalues[jj] = d[j];
        for (int r = 0; r < n; ++r) {
            cdouble s = 0.0;
            for (int k = 0; k < n; ++k) s += q.at(r, k) * z[static_cast<size_t>(k) * n + j];
            col[r] = s;
        }
        fix_phase(col);
        for (int r = 0; r < n; ++r) out.eigenvectors.at(r, jj) = col[r];
    }
    return out;
}

GevdTop gevd_top(const HermitianMatrix& a, const HermitianMatrix& b) {
    const int n = a.size();
    require(b.size() == n, "gevd_top: dimension mismatch");
    const CMatrix l = cholesky(b);

    // C = L^-1 A L^-H, computed with two triangular solves.
    CMatrix tmp = a.m;
    std::vector<cdouble> col(n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) col[i] = tmp.at(i, j);
        solve_lower(l, col.data(), n);
        for (int i = 0; i < n; ++i) tmp.at(i, j) = col[i];
    }
    CMatrix c(n, n);
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) col[i] = std::conj(tmp.at(j, i));
        solve_lower(l, col.data(), n);
        for (int i = 0; i < n; ++i) c.at(j, i) = std::conj(col[i]);
    }

    const Evd evd = hermitian_evd(HermitianMatrix(c));

    GevdTop out;
    out.mu = evd.eigenvalues[0];
    out.phi.resize(n);
    for (int i = 0; i < n; ++i) out.phi[i] = evd.eigenvectors.at(i, 0);
    solve_lower_adjoint(l, out.phi.data(), n);

    double norm2 = 0.0;
    for (const cdouble& z : out.phi) norm2 += std::norm(z);
    const double inv = 1.0 / std::sqrt(norm2);
    for (cdouble& z : out.phi) z *= inv;

    // Phase fix: first significant entry made real-positive.
    double max_mag = 0.0;
    for (const cdouble& z : out.phi) max_mag = std::max(max_mag, std::abs(z));
    for (int i = 0; i < n; ++i) {
        const double m = std::abs(out.phi[i]);
        if (m > 1e-12 * max_mag) {
            const cdouble rot = std::conj(out.phi[i]) / m;
            for (cdouble& z : out.phi) z *= rot;
            break;
        }
    }
    return out;
}

std::vector<cdouble> solve_hermitian(const HermitianMatrix& a, const std::vector<cdouble>& b) {
    const int n = a.size();
    require(static_cast<int>(b.size()) == n, "solve_hermitian: dimension mismatch");
    const CMatrix l = cholesky(a);
    std::vector<cdouble> x = b;
    solve_lower(l, x.data(), n);
    solve_lower_adjoint(l, x.data(), n);
    return x;
}

std::vector<cdouble> matvec(const CMatrix& a, const std::vector<cdouble>& x) {
    require(a.cols == static_cast<int>(x.size()), "matvec: dimension mismatch");
    std::vector<cdouble> y(a.rows, 0.0);
    for (int i = 0; i < a.rows; ++i) {
        cdouble s = 0.0;
        for (int j = 0; j < a.cols; ++j) s += a.at(i, j) * x[j];
        y[i] = s;
    }
    return y;
}

}  // namespace beamgraph
