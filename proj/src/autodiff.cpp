#include "beamgraph/autodiff.hpp"

#include <algorithm>
#include <memory>
#include <cmath>

namespace beamgraph {

Tensor Tensor::row(const std::vector<double>& x) {
    Tensor t(1, static_cast<int>(x.size()));
    t.v = x;
    return t;
}

Tensor Tensor::scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
}

std::vector<double> LinearMap::apply(const std::vector<double>& x) const {
    std::vector<double> y(out_len, 0.0);
    for (int i = 0; i < out_len; ++i) {
        double s = 0.0;
        for (const auto& [idx, w] : terms[i]) s += w * x[idx];
        y[i] = s;
    }
    return y;
}

RVar Tape::push(Tensor value, bool needs_grad, std::function<void()> back) {
    RNode node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.back = std::move(back);
    rnodes_.push_back(std::move(node));
    const int idx = static_cast<int>(rnodes_.size()) - 1;
    order_.emplace_back(false, idx);
    return RVar{idx};
}

CVar Tape::cpush(CTensor value, bool needs_grad, std::function<void()> back) {
    CNode node;
    node.value = std::move(value);
    node.needs_grad = needs_grad;
    node.back = std::move(back);
    cnodes_.push_back(std::move(node));
    const int idx = static_cast<int>(cnodes_.size()) - 1;
    order_.emplace_back(true, idx);
    return CVar{idx};
}

RVar Tape::leaf(Tensor value, bool needs_grad) { return push(std::move(value), needs_grad, {}); }

RVar Tape::leaf_ref(const Tensor* value, bool needs_grad) {
    RNode node;
    node.ext = value;
    node.needs_grad = needs_grad;
    rnodes_.push_back(std::move(node));
    const int idx = static_cast<int>(rnodes_.size()) - 1;
    order_.emplace_back(false, idx);
    return RVar{idx};
}

CVar Tape::cleaf(CTensor value) { return cpush(std::move(value), false, {}); }

const Tensor& Tape::val(RVar v) const { return rnodes_[v.idx].val(); }
const CTensor& Tape::cval(CVar v) const { return cnodes_[v.idx].value; }

Tensor Tape::grad(RVar v) const {
    const RNode& n = rnodes_[v.idx];
    if (!n.grad.v.empty()) return n.grad;
    const Tensor& val = n.val();
    return Tensor(val.rows, val.cols);
}

Tensor& Tape::rgrad(RVar v) {
    RNode& n = rnodes_[v.idx];
    if (n.grad.v.empty()) {
        const Tensor& val = n.val();
        n.grad = Tensor(val.rows, val.cols);
    }
    return n.grad;
}

CTensor& Tape::cgrad(CVar v) {
    CNode& n = cnodes_[v.idx];
    if (n.grad.v.empty()) n.grad = CTensor(n.value.rows, n.value.cols);
    return n.grad;
}

void Tape::backward(RVar loss) {
    check(!backward_done_, "Tape: backward called twice");
    backward_done_ = true;
    const Tensor& lv = val(loss);
    require(lv.rows == 1 && lv.cols == 1, "Tape: loss must be scalar");
    rgrad(loss).v[0] = 1.0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        const auto [is_complex, idx] = *it;
        if (is_complex) {
            CNode& n = cnodes_[idx];
            if (n.back && n.needs_grad && !n.grad.v.empty()) n.back();
        } else {
            RNode& n = rnodes_[idx];
            if (n.back && n.needs_grad && !n.grad.v.empty()) n.back();
        }
    }
}

// ---------------------------------------------------------------------------
// Real primitives

RVar Tape::matmul(RVar a, RVar b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.cols == bv.rows, "matmul: shape mismatch");
    Tensor out(av.rows, bv.cols);
    for (int k = 0; k < av.cols; ++k) {
        const double* brow = &bv.v[static_cast<size_t>(k) * bv.cols];
        for (int i = 0; i < av.rows; ++i) {
            const double x = av.at(i, k);
            double* orow = &out.v[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < bv.cols; ++j) orow[j] += x * brow[j];
        }
    }
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[b.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, b, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& av = val(a);
            const Tensor& bv = val(b);
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);  // g * B^T
                for (int k = 0; k < bv.rows; ++k) {
                    const double* brow = &bv.v[static_cast<size_t>(k) * bv.cols];
                    for (int i = 0; i < g.rows; ++i) {
                        const double* grow = &g.v[static_cast<size_t>(i) * g.cols];
                        double s = 0.0;
                        for (int j = 0; j < g.cols; ++j) s += grow[j] * brow[j];
                        ga.at(i, k) += s;
                    }
                }
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);  // A^T * g
                for (int k = 0; k < av.cols; ++k) {
                    double* gbrow = &gb.v[static_cast<size_t>(k) * gb.cols];
                    for (int i = 0; i < av.rows; ++i) {
                        const double x = av.at(i, k);
                        const double* grow = &g.v[static_cast<size_t>(i) * g.cols];
                        for (int j = 0; j < g.cols; ++j) gbrow[j] += x * grow[j];
                    }
                }
            }
        };
    return r;
}

RVar Tape::affine(RVar x, RVar w, RVar b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    require(xv.cols == wv.rows, "affine: shape mismatch");
    require(bv.rows == 1 && bv.cols == wv.cols, "affine: bias shape mismatch");
    Tensor out(xv.rows, wv.cols);
    for (int i = 0; i < xv.rows; ++i)
        std::copy(bv.v.begin(), bv.v.end(), out.v.begin() + static_cast<size_t>(i) * out.cols);
    for (int k = 0; k < xv.cols; ++k) {
        const double* wrow = &wv.v[static_cast<size_t>(k) * wv.cols];
        for (int i = 0; i < xv.rows; ++i) {
            const double a = xv.at(i, k);
            double* orow = &out.v[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < wv.cols; ++j) orow[j] += a * wrow[j];
        }
    }
    const bool ng = rnodes_[x.idx].needs_grad || rnodes_[w.idx].needs_grad ||
                    rnodes_[b.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, x, w, b, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& xv = val(x);
            const Tensor& wv = val(w);
            if (rnodes_[x.idx].needs_grad) {
                Tensor& gx = rgrad(x);  // g * W^T
                for (int k = 0; k < wv.rows; ++k) {
                    const double* wrow = &wv.v[static_cast<size_t>(k) * wv.cols];
                    for (int i = 0; i < g.rows; ++i) {
                        const double* grow = &g.v[static_cast<size_t>(i) * g.cols];
                        double s = 0.0;
                        for (int j = 0; j < g.cols; ++j) s += grow[j] * wrow[j];
                        gx.at(i, k) += s;
                    }
                }
            }
            if (rnodes_[w.idx].needs_grad) {
                Tensor& gw = rgrad(w);  // X^T * g
                for (int k = 0; k < xv.cols; ++k) {
                    double* gwrow = &gw.v[static_cast<size_t>(k) * gw.cols];
                    for (int i = 0; i < xv.rows; ++i) {
                        const double a = xv.at(i, k);
                        const double* grow = &g.v[static_cast<size_t>(i) * g.cols];
                        for (int j = 0; j < g.cols; ++j) gwrow[j] += a * grow[j];
                    }
                }
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) gb.v[j] += g.at(i, j);
            }
        };
    return r;
}

RVar Tape::relu(RVar a) {
    Tensor out = val(a);
    for (double& v : out.v) v = std::max(v, 0.0);
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& av = val(a);
            Tensor& ga = rgrad(a);
            for (size_t i = 0; i < g.v.size(); ++i)
                if (av.v[i] > 0.0) ga.v[i] += g.v[i];
        };
    return r;
}

RVar Tape::dropout(RVar a, Tensor mask) {
    const Tensor& av = val(a);
    require(mask.rows == av.rows && mask.cols == av.cols, "dropout: mask shape mismatch");
    Tensor out(av.rows, av.cols);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] = av.v[i] * mask.v[i];
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng) {
        auto m = std::make_shared<Tensor>(std::move(mask));
        rnodes_[r.idx].back = [this, a, r, m] {
            const Tensor& g = rnodes_[r.idx].grad;
            Tensor& ga = rgrad(a);
            for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * m->v[i];
        };
    }
    return r;
}

RVar Tape::concat_cols(RVar a, RVar b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rows == bv.rows, "concat_cols: row mismatch");
    Tensor out(av.rows, av.cols + bv.cols);
    for (int i = 0; i < av.rows; ++i) {
        for (int j = 0; j < av.cols; ++j) out.at(i, j) = av.at(i, j);
        for (int j = 0; j < bv.cols; ++j) out.at(i, av.cols + j) = bv.at(i, j);
    }
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[b.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, b, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            const int ca = val(a).cols;
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < ca; ++j) ga.at(i, j) += g.at(i, j);
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols - ca; ++j) gb.at(i, j) += g.at(i, ca + j);
            }
        };
    return r;
}

RVar Tape::stack_rows(const std::vector<RVar>& rows) {
    require(!rows.empty(), "stack_rows: empty input");
    const int cols = val(rows[0]).cols;
    Tensor out(static_cast<int>(rows.size()), cols);
    bool ng = false;
    for (size_t i = 0; i < rows.size(); ++i) {
        const Tensor& rv = val(rows[i]);
        require(rv.rows == 1 && rv.cols == cols, "stack_rows: shape mismatch");
        std::copy(rv.v.begin(), rv.v.end(), out.v.begin() + i * cols);
        ng = ng || rnodes_[rows[i].idx].needs_grad;
    }
    RVar r = push(std::move(out), ng, {});
    if (ng) {
        auto rows_copy = std::make_shared<std::vector<RVar>>(rows);
        rnodes_[r.idx].back = [this, rows_copy, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            for (size_t i = 0; i < rows_copy->size(); ++i) {
                RVar row = (*rows_copy)[i];
                if (!rnodes_[row.idx].needs_grad) continue;
                Tensor& gr = rgrad(row);
                for (int j = 0; j < g.cols; ++j) gr.v[j] += g.at(static_cast<int>(i), j);
            }
        };
    }
    return r;
}

RVar Tape::mean_rows(RVar a) {
    const Tensor& av = val(a);
    require(av.rows >= 1, "mean_rows: empty input");
    Tensor out(1, av.cols);
    for (int i = 0; i < av.rows; ++i)
        for (int j = 0; j < av.cols; ++j) out.v[j] += av.at(i, j);
    const double inv = 1.0 / av.rows;
    for (double& v : out.v) v *= inv;
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r, inv] {
            const Tensor& g = rnodes_[r.idx].grad;
            Tensor& ga = rgrad(a);
            for (int i = 0; i < ga.rows; ++i)
                for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += inv * g.v[j];
        };
    return r;
}

RVar Tape::add(RVar a, RVar b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rows == bv.rows && av.cols == bv.cols, "add: shape mismatch");
    Tensor out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += bv.v[i];
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[b.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, b, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);
                for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);
                for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i];
            }
        };
    return r;
}

RVar Tape::sub(RVar a, RVar b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rows == bv.rows && av.cols == bv.cols, "sub: shape mismatch");
    Tensor out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= bv.v[i];
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[b.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, b, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);
                for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i];
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);
                for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] -= g.v[i];
            }
        };
    return r;
}

RVar Tape::scale(RVar a, double s) {
    Tensor out = val(a);
    for (double& v : out.v) v *= s;
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r, s] {
            const Tensor& g = rnodes_[r.idx].grad;
            Tensor& ga = rgrad(a);
            for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += s * g.v[i];
        };
    return r;
}

RVar Tape::mul(RVar a, RVar b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.rows == bv.rows && av.cols == bv.cols, "mul: shape mismatch");
    Tensor out = av;
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= bv.v[i];
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[b.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, b, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& av = val(a);
            const Tensor& bv = val(b);
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);
                for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += g.v[i] * bv.v[i];
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);
                for (size_t i = 0; i < g.v.size(); ++i) gb.v[i] += g.v[i] * av.v[i];
            }
        };
    return r;
}

RVar Tape::mul_scalar(RVar a, RVar s) {
    const Tensor& sv = val(s);
    require(sv.rows == 1 && sv.cols == 1, "mul_scalar: s must be scalar");
    Tensor out = val(a);
    for (double& v : out.v) v *= sv.v[0];
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[s.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, s, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& av = val(a);
            const double sv = val(s).v[0];
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);
                for (size_t i = 0; i < g.v.size(); ++i) ga.v[i] += sv * g.v[i];
            }
            if (rnodes_[s.idx].needs_grad) {
                double acc = 0.0;
                for (size_t i = 0; i < g.v.size(); ++i) acc += g.v[i] * av.v[i];
                rgrad(s).v[0] += acc;
            }
        };
    return r;
}

RVar Tape::dot(RVar a, RVar b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require(av.v.size() == bv.v.size(), "dot: size mismatch");
    double s = 0.0;
    for (size_t i = 0; i < av.v.size(); ++i) s += av.v[i] * bv.v[i];
    const bool ng = rnodes_[a.idx].needs_grad || rnodes_[b.idx].needs_grad;
    RVar r = push(Tensor::scalar(s), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, b, r] {
            const double g = rnodes_[r.idx].grad.v[0];
            const Tensor& av = val(a);
            const Tensor& bv = val(b);
            if (rnodes_[a.idx].needs_grad) {
                Tensor& ga = rgrad(a);
                for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += g * bv.v[i];
            }
            if (rnodes_[b.idx].needs_grad) {
                Tensor& gb = rgrad(b);
                for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += g * av.v[i];
            }
        };
    return r;
}

RVar Tape::sum_sq(RVar a) {
    const Tensor& av = val(a);
    double s = 0.0;
    for (double v : av.v) s += v * v;
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(Tensor::scalar(s), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r] {
            const double g = rnodes_[r.idx].grad.v[0];
            const Tensor& av = val(a);
            Tensor& ga = rgrad(a);
            for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += 2.0 * g * av.v[i];
        };
    return r;
}

RVar Tape::sum(RVar a) {
    const Tensor& av = val(a);
    double s = 0.0;
    for (double v : av.v) s += v;
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(Tensor::scalar(s), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r] {
            const double g = rnodes_[r.idx].grad.v[0];
            Tensor& ga = rgrad(a);
            for (double& v : ga.v) v += g;
        };
    return r;
}

RVar Tape::sqrt_scalar(RVar s) {
    const double sv = val(s).v[0];
    check(sv >= 0.0, "sqrt_scalar: negative input");
    const double y = std::sqrt(sv);
    const bool ng = rnodes_[s.idx].needs_grad;
    RVar r = push(Tensor::scalar(y), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, s, r, y] {
            if (y > 0.0) rgrad(s).v[0] += rnodes_[r.idx].grad.v[0] * 0.5 / y;
        };
    return r;
}

RVar Tape::div_scalar(RVar num, RVar den) {
    const double nv = val(num).v[0];
    const double dv = val(den).v[0];
    const bool ng = rnodes_[num.idx].needs_grad || rnodes_[den.idx].needs_grad;
    RVar r = push(Tensor::scalar(nv / dv), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, num, den, r] {
            const double g = rnodes_[r.idx].grad.v[0];
            const double nv = val(num).v[0];
            const double dv = val(den).v[0];
            if (rnodes_[num.idx].needs_grad) rgrad(num).v[0] += g / dv;
            if (rnodes_[den.idx].needs_grad) rgrad(den).v[0] -= g * nv / (dv * dv);
        };
    return r;
}

RVar Tape::log_ratio_db(RVar num, RVar den, double mult, double clamp_db) {
    const double nv = val(num).v[0];
    const double dv = val(den).v[0];
    double value;
    bool clamped = false;
    if (!(dv > 1e-300) || !(nv > 1e-300)) {
        value = (dv > 1e-300) ? -clamp_db : clamp_db;
        clamped = true;
    } else {
        value = mult * std::log10(nv / dv);
        if (value > clamp_db) {
            value = clamp_db;
            clamped = true;
        } else if (value < -clamp_db) {
            value = -clamp_db;
            clamped = true;
        }
    }
    const bool ng = (rnodes_[num.idx].needs_grad || rnodes_[den.idx].needs_grad) && !clamped;
    RVar r = push(Tensor::scalar(value), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, num, den, r, mult] {
            const double g = rnodes_[r.idx].grad.v[0];
            const double c = mult / std::log(10.0);
            if (rnodes_[num.idx].needs_grad) rgrad(num).v[0] += g * c / val(num).v[0];
            if (rnodes_[den.idx].needs_grad) rgrad(den).v[0] -= g * c / val(den).v[0];
        };
    return r;
}

RVar Tape::sub_mean(RVar a) {
    const Tensor& av = val(a);
    double mean = 0.0;
    for (double v : av.v) mean += v;
    mean /= static_cast<double>(av.v.size());
    Tensor out = av;
    for (double& v : out.v) v -= mean;
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r] {
            const Tensor& g = rnodes_[r.idx].grad;
            double gmean = 0.0;
            for (double v : g.v) gmean += v;
            gmean /= static_cast<double>(g.v.size());
            Tensor& ga = rgrad(a);
            for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += g.v[i] - gmean;
        };
    return r;
}

RVar Tape::conv_full_const(RVar f, const std::vector<double>* kernel) {
    const Tensor& fv = val(f);
    require(fv.rows == 1, "conv_full_const: expect a row vector");
    const std::vector<double> y = convolve_seq(fv.v, *kernel);
    const bool ng = rnodes_[f.idx].needs_grad;
    RVar r = push(Tensor::row(y), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, f, r, kernel] {
            const Tensor& g = rnodes_[r.idx].grad;
            Tensor& gf = rgrad(f);
            const std::vector<double>& s = *kernel;
            // Adjoint of convolution is correlation with the kernel.
            for (size_t j = 0; j < gf.v.size(); ++j) {
                double acc = 0.0;
                for (size_t t = 0; t < s.size(); ++t) acc += g.v[j + t] * s[t];
                gf.v[j] += acc;
            }
        };
    return r;
}

RVar Tape::linear_map(RVar x, const LinearMap* map) {
    const Tensor& xv = val(x);
    require(static_cast<int>(xv.v.size()) == map->in_len, "linear_map: input size mismatch");
    Tensor out = Tensor::row(map->apply(xv.v));
    const bool ng = rnodes_[x.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, x, r, map] {
            const Tensor& g = rnodes_[r.idx].grad;
            Tensor& gx = rgrad(x);
            for (int i = 0; i < map->out_len; ++i) {
                const double gi = g.v[i];
                if (gi == 0.0) continue;
                for (const auto& [idx, w] : map->terms[i]) gx.v[idx] += w * gi;
            }
        };
    return r;
}

namespace {
double softplus(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }
double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }
}  // namespace

RVar Tape::softmin_const(RVar x, Tensor cap, double tau) {
    const Tensor& xv = val(x);
    require(cap.rows == xv.rows && cap.cols == xv.cols, "softmin_const: cap shape mismatch");
    Tensor out(xv.rows, xv.cols);
    for (size_t i = 0; i < out.v.size(); ++i)
        out.v[i] = cap.v[i] - tau * softplus((cap.v[i] - xv.v[i]) / tau);
    const bool ng = rnodes_[x.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng) {
        auto c = std::make_shared<Tensor>(std::move(cap));
        rnodes_[r.idx].back = [this, x, r, c, tau] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& xv = val(x);
            Tensor& gx = rgrad(x);
            for (size_t i = 0; i < g.v.size(); ++i)
                gx.v[i] += g.v[i] * sigmoid((c->v[i] - xv.v[i]) / tau);
        };
    }
    return r;
}

RVar Tape::si_sdr_vs_const(RVar est, const std::vector<double>* ref, double clamp_db) {
    const Tensor& ev = val(est);
    require(ev.v.size() == ref->size(), "si_sdr: length mismatch");
    double rr = 0.0, re = 0.0;
    for (size_t i = 0; i < ref->size(); ++i) {
        rr += (*ref)[i] * (*ref)[i];
        re += (*ref)[i] * ev.v[i];
    }
    require(rr > 0.0, "si_sdr: zero reference");
    const double alpha = re / rr;
    const double st = alpha * alpha * rr;
    double sd = 0.0;
    for (size_t i = 0; i < ref->size(); ++i) {
        const double d = alpha * (*ref)[i] - ev.v[i];
        sd += d * d;
    }
    double value;
    bool clamped = false;
    if (!(sd > 1e-300) || !(st > 1e-300)) {
        value = (sd > 1e-300) ? -clamp_db : clamp_db;
        clamped = true;
    } else {
        value = 10.0 * std::log10(st / sd);
        if (std::abs(value) > clamp_db) {
            value = std::clamp(value, -clamp_db, clamp_db);
            clamped = true;
        }
    }
    const bool ng = rnodes_[est.idx].needs_grad && !clamped;
    RVar r = push(Tensor::scalar(value), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, est, r, ref, alpha, st, sd] {
            const double g = rnodes_[r.idx].grad.v[0];
            const double c = 10.0 / std::log(10.0);
            const Tensor& ev = val(est);
            Tensor& ge = rgrad(est);
            // d val/d e = c*(2 alpha r/St + 2 d/Sd), d = alpha r - e.
            for (size_t i = 0; i < ge.v.size(); ++i) {
                const double d = alpha * (*ref)[i] - ev.v[i];
                ge.v[i] += g * c * (2.0 * alpha * (*ref)[i] / st + 2.0 * d / sd);
            }
        };
    return r;
}

RVar Tape::slice(RVar a, int r0, int nr, int c0, int nc) {
    const Tensor& av = val(a);
    require(r0 >= 0 && r0 + nr <= av.rows && c0 >= 0 && c0 + nc <= av.cols,
            "slice: out of range");
    Tensor out(nr, nc);
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) out.at(i, j) = av.at(r0 + i, c0 + j);
    const bool ng = rnodes_[a.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, a, r, r0, nr, c0, nc] {
            const Tensor& g = rnodes_[r.idx].grad;
            Tensor& ga = rgrad(a);
            for (int i = 0; i < nr; ++i)
                for (int j = 0; j < nc; ++j) ga.at(r0 + i, c0 + j) += g.at(i, j);
        };
    return r;
}

// ---------------------------------------------------------------------------
// Complex / mixed primitives

CVar Tape::feature_to_spectrum(RVar f, int bins, int l_uncausal, int l_causal) {
    const Tensor& fv = val(f);
    require(fv.rows == 1 && fv.cols == l_uncausal + l_causal,
            "feature_to_spectrum: bad feature shape");
    require(bins >= fv.cols, "feature_to_spectrum: K must be >= d");
    std::vector<cdouble> t(bins, 0.0);
    for (int i = 0; i < l_uncausal; ++i) t[bins - l_uncausal + i] = fv.v[i];
    for (int i = 0; i < l_causal; ++i) t[i] = fv.v[l_uncausal + i];
    fft_inplace(t.data(), bins, false);
    CTensor out(1, bins);
    out.v = std::move(t);
    const bool ng = rnodes_[f.idx].needs_grad;
    CVar r = cpush(std::move(out), ng, {});
    if (ng)
        cnodes_[r.idx].back = [this, f, r, bins, l_uncausal, l_causal] {
            const CTensor& g = cnodes_[r.idx].grad;
            // g_t = Re(K * ifft(g_h)); gather the scattered positions.
            std::vector<cdouble> gt(g.v.begin(), g.v.end());
            fft_inplace(gt.data(), bins, true);
            Tensor& gf = rgrad(f);
            for (int i = 0; i < l_uncausal; ++i)
                gf.v[i] += bins * gt[bins - l_uncausal + i].real();
            for (int i = 0; i < l_causal; ++i) gf.v[l_uncausal + i] += bins * gt[i].real();
        };
    return r;
}

CVar Tape::assemble_steering(const std::vector<CVar>& per_mic, int ref_index) {
    require(!per_mic.empty(), "assemble_steering: no microphones");
    const int bins = cval(per_mic[0]).cols;
    const int channels = static_cast<int>(per_mic.size()) + 1;
    CTensor out(bins, channels);
    bool ng = false;
    int mi = 0;
    for (int m = 0; m < channels; ++m) {
        if (m == ref_index) {
            for (int k = 0; k < bins; ++k) out.at(k, m) = 1.0;
            continue;
        }
        const CTensor& spec = cval(per_mic[mi]);
        require(spec.rows == 1 && spec.cols == bins, "assemble_steering: shape mismatch");
        for (int k = 0; k < bins; ++k) out.at(k, m) = spec.v[k];
        ng = ng || cnodes_[per_mic[mi].idx].needs_grad;
        ++mi;
    }
    CVar r = cpush(std::move(out), ng, {});
    if (ng) {
        auto mics = std::make_shared<std::vector<CVar>>(per_mic);
        cnodes_[r.idx].back = [this, mics, r, ref_index] {
            const CTensor& g = cnodes_[r.idx].grad;
            int mi = 0;
            for (int m = 0; m < g.cols; ++m) {
                if (m == ref_index) continue;
                CVar src = (*mics)[mi++];
                if (!cnodes_[src.idx].needs_grad) continue;
                CTensor& gs = cgrad(src);
                for (int k = 0; k < g.rows; ++k) gs.v[k] += g.at(k, m);
            }
        };
    }
    return r;
}

CVar Tape::chol_solve_rows(CVar h, const std::vector<CMatrix>* chol_per_bin) {
    const CTensor& hv = cval(h);
    require(static_cast<int>(chol_per_bin->size()) == hv.rows,
            "chol_solve_rows: bins mismatch");
    const int m_ch = hv.cols;
    CTensor out = hv;
    std::vector<cdouble> x(m_ch);
    for (int k = 0; k < hv.rows; ++k) {
        for (int m = 0; m < m_ch; ++m) x[m] = hv.at(k, m);
        solve_lower((*chol_per_bin)[k], x.data(), m_ch);
        solve_lower_adjoint((*chol_per_bin)[k], x.data(), m_ch);
        for (int m = 0; m < m_ch; ++m) out.at(k, m) = x[m];
    }
    const bool ng = cnodes_[h.idx].needs_grad;
    CVar r = cpush(std::move(out), ng, {});
    if (ng)
        cnodes_[r.idx].back = [this, h, r, chol_per_bin] {
            const CTensor& g = cnodes_[r.idx].grad;
            CTensor& gh = cgrad(h);
            const int m_ch = g.cols;
            std::vector<cdouble> x(m_ch);
            // B^-1 is Hermitian, so the adjoint is the same solve.
            for (int k = 0; k < g.rows; ++k) {
                for (int m = 0; m < m_ch; ++m) x[m] = g.at(k, m);
                solve_lower((*chol_per_bin)[k], x.data(), m_ch);
                solve_lower_adjoint((*chol_per_bin)[k], x.data(), m_ch);
                for (int m = 0; m < m_ch; ++m) gh.at(k, m) += x[m];
            }
        };
    return r;
}

CVar Tape::quadform_rows(CVar h, CVar x) {
    const CTensor& hv = cval(h);
    const CTensor& xv = cval(x);
    require(hv.rows == xv.rows && hv.cols == xv.cols, "quadform_rows: shape mismatch");
    CTensor out(hv.rows, 1);
    for (int k = 0; k < hv.rows; ++k) {
        cdouble s = 0.0;
        for (int m = 0; m < hv.cols; ++m) s += std::conj(hv.at(k, m)) * xv.at(k, m);
        out.at(k, 0) = s;
    }
    const bool ng = cnodes_[h.idx].needs_grad || cnodes_[x.idx].needs_grad;
    CVar r = cpush(std::move(out), ng, {});
    if (ng)
        cnodes_[r.idx].back = [this, h, x, r] {
            const CTensor& g = cnodes_[r.idx].grad;
            const CTensor& hv = cval(h);
            const CTensor& xv = cval(x);
            if (cnodes_[h.idx].needs_grad) {
                CTensor& gh = cgrad(h);
                for (int k = 0; k < g.rows; ++k) {
                    const cdouble gq = g.at(k, 0);
                    for (int m = 0; m < hv.cols; ++m)
                        gh.at(k, m) += std::conj(gq) * xv.at(k, m);
                }
            }
            if (cnodes_[x.idx].needs_grad) {
                CTensor& gx = cgrad(x);
                for (int k = 0; k < g.rows; ++k) {
                    const cdouble gq = g.at(k, 0);
                    for (int m = 0; m < hv.cols; ++m) gx.at(k, m) += gq * hv.at(k, m);
                }
            }
        };
    return r;
}

CVar Tape::div_rows_fallback(CVar x, CVar q, int ref_index, double eps,
                             std::vector<uint8_t>* status_out) {
    const CTensor& xv = cval(x);
    const CTensor& qv = cval(q);
    require(qv.rows == xv.rows && qv.cols == 1, "div_rows_fallback: shape mismatch");
    CTensor out(xv.rows, xv.cols);
    auto degenerate = std::make_shared<std::vector<uint8_t>>(xv.rows, 0);
    for (int k = 0; k < xv.rows; ++k) {
        const cdouble qk = qv.at(k, 0);
        if (std::abs(qk) < eps) {
            (*degenerate)[k] = 1;
            out.at(k, ref_index) = 1.0;  // reference-channel passthrough
        } else {
            for (int m = 0; m < xv.cols; ++m) out.at(k, m) = xv.at(k, m) / qk;
        }
    }
    if (status_out) *status_out = *degenerate;
    const bool ng = cnodes_[x.idx].needs_grad || cnodes_[q.idx].needs_grad;
    CVar r = cpush(std::move(out), ng, {});
    if (ng)
        cnodes_[r.idx].back = [this, x, q, r, degenerate] {
            const CTensor& g = cnodes_[r.idx].grad;
            const CTensor& xv = cval(x);
            const CTensor& qv = cval(q);
            CTensor* gx = cnodes_[x.idx].needs_grad ? &cgrad(x) : nullptr;
            CTensor* gq = cnodes_[q.idx].needs_grad ? &cgrad(q) : nullptr;
            for (int k = 0; k < g.rows; ++k) {
                if ((*degenerate)[k]) continue;  // fallback bins carry no gradient
                const cdouble qk = qv.at(k, 0);
                const cdouble cq = std::conj(qk);
                cdouble gq_acc = 0.0;
                for (int m = 0; m < g.cols; ++m) {
                    const cdouble gw = g.at(k, m);
                    if (gx) gx->at(k, m) += gw / cq;
                    gq_acc -= gw * std::conj(xv.at(k, m) / (qk * qk));
                }
                if (gq) gq->at(k, 0) += gq_acc;
            }
        };
    return r;
}

CVar Tape::beamform_rows(CVar w, const TFGrid* grid) {
    const CTensor& wv = cval(w);
    require(wv.rows == grid->bins && wv.cols == grid->channels,
            "beamform_rows: weight shape mismatch");
    CTensor out(grid->frames, grid->bins);
    for (int l = 0; l < grid->frames; ++l)
        for (int k = 0; k < grid->bins; ++k) {
            cdouble s = 0.0;
            for (int m = 0; m < grid->channels; ++m)
                s += std::conj(wv.at(k, m)) * grid->at(l, k, m);
            out.at(l, k) = s;
        }
    const bool ng = cnodes_[w.idx].needs_grad;
    CVar r = cpush(std::move(out), ng, {});
    if (ng)
        cnodes_[r.idx].back = [this, w, r, grid] {
            const CTensor& g = cnodes_[r.idx].grad;
            CTensor& gw = cgrad(w);
            for (int k = 0; k < grid->bins; ++k)
                for (int m = 0; m < grid->channels; ++m) {
                    cdouble acc = 0.0;
                    for (int l = 0; l < grid->frames; ++l)
                        acc += std::conj(g.at(l, k)) * grid->at(l, k, m);
                    gw.at(k, m) += acc;
                }
        };
    return r;
}

RVar Tape::istft_real(CVar y, StftConfig cfg) {
    const CTensor& yv = cval(y);
    require(yv.cols == cfg.bins(), "istft_real: bin mismatch");
    const int frames = yv.rows;
    const int n = (frames - 1) * cfg.hop + cfg.fft_len;
    auto win = std::make_shared<std::vector<double>>(make_window(cfg.window, cfg.fft_len));
    auto norm = std::make_shared<std::vector<double>>(n, 0.0);
    for (int l = 0; l < frames; ++l)
        for (int i = 0; i < cfg.fft_len; ++i)
            (*norm)[l * cfg.hop + i] += (*win)[i] * (*win)[i];
    for (double& v : *norm) v = (v > 1e-12) ? v : 1.0;

    Tensor out(1, n);
    std::vector<cdouble> buf(cfg.fft_len);
    for (int l = 0; l < frames; ++l) {
        for (int k = 0; k < cfg.fft_len; ++k) buf[k] = yv.at(l, k);
        fft_inplace(buf.data(), cfg.fft_len, true);
        const int off = l * cfg.hop;
        for (int i = 0; i < cfg.fft_len; ++i) out.v[off + i] += (*win)[i] * buf[i].real();
    }
    for (int i = 0; i < n; ++i) out.v[i] /= (*norm)[i];

    const bool ng = cnodes_[y.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, y, r, cfg, win, norm, frames] {
            const Tensor& g = rnodes_[r.idx].grad;
            CTensor& gy = cgrad(y);
            std::vector<cdouble> buf(cfg.fft_len);
            const double inv_k = 1.0 / cfg.fft_len;
            for (int l = 0; l < frames; ++l) {
                const int off = l * cfg.hop;
                for (int i = 0; i < cfg.fft_len; ++i)
                    buf[i] = g.v[off + i] * (*win)[i] / (*norm)[off + i];
                fft_inplace(buf.data(), cfg.fft_len, false);
                for (int k = 0; k < cfg.fft_len; ++k) gy.at(l, k) += inv_k * buf[k];
            }
        };
    return r;
}

CVar Tape::stft_const_window(RVar x, int frame_len, int hop, int nfft,
                             const std::vector<double>* window) {
    const Tensor& xv = val(x);
    require(xv.rows == 1, "stft_const_window: expect a row vector");
    require(static_cast<int>(window->size()) == frame_len, "stft_const_window: window size");
    const int n = xv.cols;
    require(n >= frame_len, "stft_const_window: signal shorter than frame");
    const int frames = (n - frame_len) / hop + 1;

    CTensor out(frames, nfft);
    std::vector<cdouble> buf(nfft);
    for (int l = 0; l < frames; ++l) {
        std::fill(buf.begin(), buf.end(), cdouble{0.0, 0.0});
        const int off = l * hop;
        for (int i = 0; i < frame_len; ++i) buf[i] = (*window)[i] * xv.v[off + i];
        fft_inplace(buf.data(), nfft, false);
        for (int k = 0; k < nfft; ++k) out.at(l, k) = buf[k];
    }
    const bool ng = rnodes_[x.idx].needs_grad;
    CVar r = cpush(std::move(out), ng, {});
    if (ng)
        cnodes_[r.idx].back = [this, x, r, frame_len, hop, nfft, window] {
            const CTensor& g = cnodes_[r.idx].grad;
            Tensor& gx = rgrad(x);
            std::vector<cdouble> buf(nfft);
            for (int l = 0; l < g.rows; ++l) {
                for (int k = 0; k < nfft; ++k) buf[k] = g.at(l, k);
                fft_inplace(buf.data(), nfft, true);
                const int off = l * hop;
                for (int i = 0; i < frame_len; ++i)
                    gx.v[off + i] += nfft * buf[i].real() * (*window)[i];
            }
        };
    return r;
}

RVar Tape::band_energy(CVar spec, const std::vector<std::vector<int>>* band_bins) {
    const CTensor& sv = cval(spec);
    const int bands = static_cast<int>(band_bins->size());
    Tensor out(bands, sv.rows);  // bands x frames
    for (int j = 0; j < bands; ++j)
        for (int l = 0; l < sv.rows; ++l) {
            double e = 0.0;
            for (int k : (*band_bins)[j]) e += std::norm(sv.at(l, k));
            out.at(j, l) = std::sqrt(e + 1e-280);
        }
    const bool ng = cnodes_[spec.idx].needs_grad;
    RVar r = push(std::move(out), ng, {});
    if (ng)
        rnodes_[r.idx].back = [this, spec, r, band_bins] {
            const Tensor& g = rnodes_[r.idx].grad;
            const Tensor& ev = rnodes_[r.idx].val();
            const CTensor& sv = cval(spec);
            CTensor& gs = cgrad(spec);
            for (int j = 0; j < g.rows; ++j)
                for (int l = 0; l < g.cols; ++l) {
                    const double coeff = g.at(j, l) / ev.at(j, l);
                    if (coeff == 0.0) continue;
                    for (int k : (*band_bins)[j]) gs.at(l, k) += coeff * sv.at(l, k);
                }
        };
    return r;
}

}  // namespace beamgraph
