#include "doctest.h"

#include <cmath>

#include "beamgraph/linalg.hpp"
#include "beamgraph/rng.hpp"

using namespace beamgraph;

namespace {

CMatrix random_cmatrix(int n, Rng& rng) {
    CMatrix m(n, n);
    for (auto& v : m.a) v = {rng.gaussian(), rng.gaussian()};
    return m;
}

// A^H A + I: comfortably positive definite.
HermitianMatrix random_pd(int n, Rng& rng) {
    CMatrix g = random_cmatrix(n, rng);
    CMatrix p(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            cdouble s = (i == j) ? cdouble(1.0) : cdouble(0.0);
            for (int k = 0; k < n; ++k) s += std::conj(g.at(k, i)) * g.at(k, j);
            p.at(i, j) = s;
        }
    return HermitianMatrix(p);
}

HermitianMatrix random_hermitian(int n, Rng& rng) {
    CMatrix g = random_cmatrix(n, rng);
    CMatrix h(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) h.at(i, j) = 0.5 * (g.at(i, j) + std::conj(g.at(j, i)));
    return HermitianMatrix(h);
}

double frob(const CMatrix& m) {
    double s = 0.0;
    for (const auto& v : m.a) s += std::norm(v);
    return std::sqrt(s);
}

// Independent oracle: cyclic complex Jacobi eigensolver. Deliberately a
// different algorithm from the library's Householder+QL path.
struct JacobiEvd {
    std::vector<double> values;  // descending
    CMatrix vectors;
};

JacobiEvd jacobi_evd(const HermitianMatrix& a_in) {
    const int n = a_in.size();
    CMatrix a = a_in.m;
    CMatrix v = CMatrix::identity(n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += std::norm(a.at(p, q));
        if (off < 1e-30) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const cdouble apq = a.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double app = a.at(p, p).real();
                const double aqq = a.at(q, q).real();
                // Phase so the pivot becomes real, then a real Jacobi rotation.
                const cdouble phase = apq / std::abs(apq);
                const double g = std::abs(apq);
                const double theta = 0.5 * std::atan2(2.0 * g, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                const cdouble sp = s * phase;
                for (int k = 0; k < n; ++k) {
                    const cdouble akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - std::conj(sp) * akq;
                    a.at(k, q) = sp * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const cdouble apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - sp * aqk;
                    a.at(q, k) = std::conj(sp) * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const cdouble vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - std::conj(sp) * vkq;
                    v.at(k, q) = sp * vkp + c * vkq;
                }
            }
        }
    }
    JacobiEvd out;
    out.values.resize(n);
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::vector<double> diag(n);
    for (int i = 0; i < n; ++i) diag[i] = a.at(i, i).real();
    std::sort(order.begin(), order.end(), [&](int x, int y) { return diag[x] > diag[y]; });
    out.vectors = CMatrix(n, n);
    for (int j = 0; j < n; ++j) {
        out.values[j] = diag[order[j]];
        for (int i = 0; i < n; ++i) out.vectors.at(i, j) = v.at(i, order[j]);
    }
    return out;
}

}  // namespace

TEST_CASE("cholesky: identity and diagonal") {
    auto l = cholesky(HermitianMatrix::identity(3));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(l.at(i, j) - (i == j ? 1.0 : 0.0)) < 1e-15);

    CMatrix d(2, 2);
    d.at(0, 0) = 4.0;
    d.at(1, 1) = 9.0;
    auto l2 = cholesky(HermitianMatrix(d));
    CHECK(l2.at(0, 0).real() == doctest::Approx(2.0));
    CHECK(l2.at(1, 1).real() == doctest::Approx(3.0));
}

TEST_CASE("cholesky: reconstructs random PD 5x5 within 1e-12") {
    Rng rng(101);
    for (int trial = 0; trial < 20; ++trial) {
        auto b = random_pd(5, rng);
        auto l = cholesky(b);
        CMatrix rec(5, 5);
        for (int i = 0; i < 5; ++i)
            for (int j = 0; j < 5; ++j) {
                cdouble s = 0.0;
                for (int k = 0; k < 5; ++k) s += l.at(i, k) * std::conj(l.at(j, k));
                rec.at(i, j) = s - b.at(i, j);
            }
        CHECK(frob(rec) / frob(b.m) < 1e-12);
    }
}

TEST_CASE("cholesky: non-PD errors naming the pivot") {
    CMatrix d(3, 3);
    d.at(0, 0) = 1.0;
    d.at(1, 1) = -2.0;
    d.at(2, 2) = 1.0;
    try {
        cholesky(HermitianMatrix(d));
        FAIL("expected failure");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("pivot 1") != std::string::npos);
    }
}

TEST_CASE("hermitian_evd: diagonal matrix sorted descending") {
    CMatrix d(3, 3);
    d.at(0, 0) = 1.0;
    d.at(1, 1) = 5.0;
    d.at(2, 2) = 3.0;
    auto evd = hermitian_evd(HermitianMatrix(d));
    CHECK(evd.eigenvalues[0] == doctest::Approx(5.0));
    CHECK(evd.eigenvalues[1] == doctest::Approx(3.0));
    CHECK(evd.eigenvalues[2] == doctest::Approx(1.0));
    // Standard basis vectors up to phase (phase-fixed to +1).
    CHECK(std::abs(evd.eigenvectors.at(1, 0) - 1.0) < 1e-12);
    CHECK(std::abs(evd.eigenvectors.at(2, 1) - 1.0) < 1e-12);
    CHECK(std::abs(evd.eigenvectors.at(0, 2) - 1.0) < 1e-12);
}

TEST_CASE("hermitian_evd: identity has all unit eigenvalues") {
    auto evd = hermitian_evd(HermitianMatrix::identity(4));
    for (double v : evd.eigenvalues) CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hermitian_evd: residual and orthonormality on random 5x5") {
    Rng rng(202);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_hermitian(5, rng);
        auto evd = hermitian_evd(a);
        const double scale = frob(a.m);
        for (int j = 0; j < 5; ++j) {
            // Residual A v - lambda v.
            double res = 0.0;
            for (int i = 0; i < 5; ++i) {
                cdouble s = 0.0;
                for (int k = 0; k < 5; ++k) s += a.at(i, k) * evd.eigenvectors.at(k, j);
                s -= evd.eigenvalues[j] * evd.eigenvectors.at(i, j);
                res += std::norm(s);
            }
            CHECK(std::sqrt(res) < 1e-9 * std::max(scale, 1.0));
            for (int j2 = 0; j2 < 5; ++j2) {
                cdouble dot = 0.0;
                for (int i = 0; i < 5; ++i)
                    dot += std::conj(evd.eigenvectors.at(i, j)) * evd.eigenvectors.at(i, j2);
                CHECK(std::abs(dot - (j == j2 ? 1.0 : 0.0)) < 1e-10);
            }
        }
        // Eigenvalues sorted descending.
        for (int j = 0; j + 1 < 5; ++j) CHECK(evd.eigenvalues[j] >= evd.eigenvalues[j + 1]);
    }
}

TEST_CASE("hermitian_evd: agrees with independent Jacobi oracle") {
    Rng rng(303);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_hermitian(5, rng);
        auto evd = hermitian_evd(a);
        auto oracle = jacobi_evd(a);
        for (int j = 0; j < 5; ++j)
            CHECK(evd.eigenvalues[j] == doctest::Approx(oracle.values[j]).epsilon(1e-9));
    }
}

TEST_CASE("gevd_top: diagonal pencils") {
    CMatrix a(2, 2), b(2, 2);
    a.at(0, 0) = 4.0;
    a.at(1, 1) = 1.0;
    b.at(0, 0) = 1.0;
    b.at(1, 1) = 1.0;
    auto r = gevd_top(HermitianMatrix(a), HermitianMatrix(b));
    CHECK(r.mu == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::abs(r.phi[0] - 1.0) < 1e-10);
    CHECK(std::abs(r.phi[1]) < 1e-10);

    CMatrix a2(2, 2), b2(2, 2);
    a2.at(0, 0) = 4.0;
    a2.at(1, 1) = 4.0;
    b2.at(0, 0) = 1.0;
    b2.at(1, 1) = 4.0;
    auto r2 = gevd_top(HermitianMatrix(a2), HermitianMatrix(b2));
    CHECK(r2.mu == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(std::abs(r2.phi[0] - 1.0) < 1e-10);
    CHECK(std::abs(r2.phi[1]) < 1e-10);
}

TEST_CASE("gevd_top: matches dense whitened-EVD brute force (Jacobi oracle)") {
    Rng rng(404);
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_pd(5, rng);
        auto b = random_pd(5, rng);
        auto r = gevd_top(a, b);

        // Oracle: whiten with Cholesky, full Jacobi EVD, back-transform.
        auto l = cholesky(b);
        CMatrix tmp = a.m;
        std::vector<cdouble> col(5);
        for (int j = 0; j < 5; ++j) {
            for (int i = 0; i < 5; ++i) col[i] = tmp.at(i, j);
            solve_lower(l, col.data(), 5);
            for (int i = 0; i < 5; ++i) tmp.at(i, j) = col[i];
        }
        CMatrix c(5, 5);
        for (int j = 0; j < 5; ++j) {
            for (int i = 0; i < 5; ++i) col[i] = std::conj(tmp.at(j, i));
            solve_lower(l, col.data(), 5);
            for (int i = 0; i < 5; ++i) c.at(j, i) = std::conj(col[i]);
        }
        auto oracle = jacobi_evd(HermitianMatrix(c));
        std::vector<cdouble> phi(5);
        for (int i = 0; i < 5; ++i) phi[i] = oracle.vectors.at(i, 0);
        solve_lower_adjoint(l, phi.data(), 5);
        double n2 = 0.0;
        for (auto& z : phi) n2 += std::norm(z);
        for (auto& z : phi) z /= std::sqrt(n2);

        CHECK(std::abs(r.mu - oracle.values[0]) / std::abs(oracle.values[0]) < 1e-9);
        cdouble align = 0.0;
        for (int i = 0; i < 5; ++i) align += std::conj(r.phi[i]) * phi[i];
        CHECK(std::abs(align) > 1.0 - 1e-8);
    }
}

TEST_CASE("gevd_top: generalized residual holds") {
    Rng rng(505);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_pd(5, rng);
        auto b = random_pd(5, rng);
        auto r = gevd_top(a, b);
        auto av = matvec(a.m, r.phi);
        auto bv = matvec(b.m, r.phi);
        double res = 0.0;
        for (int i = 0; i < 5; ++i) res += std::norm(av[i] - r.mu * bv[i]);
        const double scale = frob(a.m) + std::abs(r.mu) * frob(b.m);
        CHECK(std::sqrt(res) < 1e-8 * scale);
    }
}

TEST_CASE("gevd_top: identity B agrees with hermitian_evd top pair") {
    Rng rng(606);
    auto a = random_hermitian(5, rng);
    auto r = gevd_top(a, HermitianMatrix::identity(5));
    auto evd = hermitian_evd(a);
    CHECK(std::abs(r.mu - evd.eigenvalues[0]) < 1e-9 * std::max(1.0, std::abs(evd.eigenvalues[0])));
    cdouble align = 0.0;
    for (int i = 0; i < 5; ++i) align += std::conj(r.phi[i]) * evd.eigenvectors.at(i, 0);
    CHECK(std::abs(align) > 1.0 - 1e-9);
}

TEST_CASE("gevd_top: scaling invariance") {
    Rng rng(707);
    auto a = random_pd(5, rng);
    auto b = random_pd(5, rng);
    auto r1 = gevd_top(a, b);
    HermitianMatrix a2 = a;
    for (auto& v : a2.m.a) v *= 3.5;
    auto r2 = gevd_top(a2, b);
    CHECK(r2.mu == doctest::Approx(3.5 * r1.mu).epsilon(1e-10));
    for (int i = 0; i < 5; ++i) CHECK(std::abs(r1.phi[i] - r2.phi[i]) < 1e-10);
}

TEST_CASE("solve_hermitian: simple and residual cases") {
    CMatrix d(2, 2);
    d.at(0, 0) = 2.0;
    d.at(1, 1) = 4.0;
    auto x = solve_hermitian(HermitianMatrix(d), {2.0, 4.0});
    CHECK(std::abs(x[0] - 1.0) < 1e-14);
    CHECK(std::abs(x[1] - 1.0) < 1e-14);

    auto xi = solve_hermitian(HermitianMatrix::identity(3), {1.0, {0, 2.0}, 3.0});
    CHECK(std::abs(xi[1] - cdouble{0, 2.0}) < 1e-15);

    Rng rng(808);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_pd(5, rng);
        std::vector<cdouble> b(5);
        for (auto& v : b) v = {rng.gaussian(), rng.gaussian()};
        auto sol = solve_hermitian(a, b);
        auto back = matvec(a.m, sol);
        double res = 0.0, scale = 0.0;
        for (int i = 0; i < 5; ++i) {
            res += std::norm(back[i] - b[i]);
            scale += std::norm(b[i]);
        }
        CHECK(std::sqrt(res / scale) < 1e-10);
    }
}

TEST_CASE("solve_hermitian: non-PD errors") {
    CMatrix d(2, 2);
    d.at(0, 0) = 1.0;
    d.at(1, 1) = -1.0;
    CHECK_THROWS_AS(solve_hermitian(HermitianMatrix(d), {1.0, 1.0}), std::runtime_error);
}
