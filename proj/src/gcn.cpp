#include "beamgraph/gcn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "beamgraph/container.hpp"

namespace beamgraph {

namespace {

Tensor he_uniform(int rows, int cols, Rng& rng) {
    Tensor t(rows, cols);
    const double limit = std::sqrt(6.0 / rows);  // fan-in scaling for y = x W
    for (double& v : t.v) v = rng.uniform(-limit, limit);
    return t;
}

}  // namespace

GcnParams GcnParams::init(int dim, uint64_t seed) {
    require(dim > 0, "GcnParams: dim must be positive");
    Rng rng(Rng::derive(seed, {0x31}));
    GcnParams p;
    p.dim = dim;
    p.w1 = he_uniform(2 * dim, 2 * dim, rng);
    p.b1 = Tensor(1, 2 * dim);
    p.w2 = he_uniform(2 * dim, 2 * dim, rng);
    p.b2 = Tensor(1, 2 * dim);
    p.w3 = he_uniform(2 * dim, dim, rng);
    p.b3 = Tensor(1, dim);
    return p;
}

GcnParams GcnParams::zeros(int dim) {
    GcnParams p;
    p.dim = dim;
    p.w1 = Tensor(2 * dim, 2 * dim);
    p.b1 = Tensor(1, 2 * dim);
    p.w2 = Tensor(2 * dim, 2 * dim);
    p.b2 = Tensor(1, 2 * dim);
    p.w3 = Tensor(2 * dim, dim);
    p.b3 = Tensor(1, dim);
    return p;
}

namespace {

// y = relu_opt(x W + b) into out (1 row at a time is all we need here).
void affine_rows(const Tensor& x, const Tensor& w, const Tensor& b, bool apply_relu,
                 Tensor& out) {
    out = Tensor(x.rows, w.cols);
    for (int i = 0; i < x.rows; ++i)
        std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<size_t>(i) * out.cols);
    for (int k = 0; k < x.cols; ++k) {
        const double* wrow = &w.v[static_cast<size_t>(k) * w.cols];
        for (int i = 0; i < x.rows; ++i) {
            const double a = x.at(i, k);
            double* orow = &out.v[static_cast<size_t>(i) * out.cols];
            for (int j = 0; j < w.cols; ++j) orow[j] += a * wrow[j];
        }
    }
    if (apply_relu)
        for (double& v : out.v) v = std::max(v, 0.0);
}

Tensor forward_batch(const GcnParams& p, const Tensor& x0) {
    Tensor z1, z2, z3;
    affine_rows(x0, p.w1, p.b1, true, z1);
    affine_rows(z1, p.w2, p.b2, true, z2);
    affine_rows(z2, p.w3, p.b3, false, z3);
    return z3;
}

}  // namespace

std::vector<double> message(const GcnParams& params, const std::vector<double>& center,
                            const std::vector<double>& neighbor) {
    require(static_cast<int>(center.size()) == params.dim &&
                static_cast<int>(neighbor.size()) == params.dim,
            "message: feature dimension mismatch");
    Tensor x0(1, 2 * params.dim);
    std::copy(center.begin(), center.end(), x0.v.begin());
    std::copy(neighbor.begin(), neighbor.end(), x0.v.begin() + params.dim);
    Tensor out = forward_batch(params, x0);
    return out.v;
}

std::vector<double> gcn_forward(const GcnParams& params, const std::vector<double>& center,
                                std::vector<NeighborRef> neighbors) {
    require(!neighbors.empty(), "gcn_forward: empty neighborhood");
    require(static_cast<int>(center.size()) == params.dim,
            "gcn_forward: feature dimension mismatch");
    std::stable_sort(neighbors.begin(), neighbors.end(),
                     [](const NeighborRef& a, const NeighborRef& b) { return a.id < b.id; });

    const int k = static_cast<int>(neighbors.size());
    Tensor x0(k, 2 * params.dim);
    for (int j = 0; j < k; ++j) {
        require(static_cast<int>(neighbors[j].feature->size()) == params.dim,
                "gcn_forward: neighbor dimension mismatch");
        std::copy(center.begin(), center.end(), x0.v.begin() + static_cast<size_t>(j) * x0.cols);
        std::copy(neighbors[j].feature->begin(), neighbors[j].feature->end(),
                  x0.v.begin() + static_cast<size_t>(j) * x0.cols + params.dim);
    }
    Tensor msgs = forward_batch(params, x0);
    std::vector<double> out(params.dim, 0.0);
    for (int j = 0; j < k; ++j)
        for (int c = 0; c < params.dim; ++c) out[c] += msgs.at(j, c);
    const double inv = 1.0 / k;
    for (double& v : out) v *= inv;
    return out;
}

GcnVars gcn_leaves(Tape& tape, const GcnParams& params, bool needs_grad) {
    GcnVars v;
    v.w1 = tape.leaf_ref(&params.w1, needs_grad);
    v.b1 = tape.leaf_ref(&params.b1, needs_grad);
    v.w2 = tape.leaf_ref(&params.w2, needs_grad);
    v.b2 = tape.leaf_ref(&params.b2, needs_grad);
    v.w3 = tape.leaf_ref(&params.w3, needs_grad);
    v.b3 = tape.leaf_ref(&params.b3, needs_grad);
    return v;
}

RVar gcn_forward_tape(Tape& tape, const GcnVars& vars, RVar center,
                      const std::vector<std::pair<int, RVar>>& neighbors,
                      const Tensor* dropout_mask1, const Tensor* dropout_mask2) {
    require(!neighbors.empty(), "gcn_forward_tape: empty neighborhood");
    std::vector<std::pair<int, RVar>> sorted = neighbors;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<RVar> rows;
    rows.reserve(sorted.size());
    for (const auto& [id, nb] : sorted) rows.push_back(tape.concat_cols(center, nb));
    RVar x0 = tape.stack_rows(rows);
    RVar z1 = tape.relu(tape.affine(x0, vars.w1, vars.b1));
    if (dropout_mask1) z1 = tape.dropout(z1, *dropout_mask1);
    RVar z2 = tape.relu(tape.affine(z1, vars.w2, vars.b2));
    if (dropout_mask2) z2 = tape.dropout(z2, *dropout_mask2);
    RVar z3 = tape.affine(z2, vars.w3, vars.b3);
    return tape.mean_rows(z3);
}

void TrainConfig::validate() const {
    require(dropout_p >= 0.0 && dropout_p < 1.0, "TrainConfig: dropout_p must be in [0,1)");
    require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0,
            "TrainConfig: warmup_ratio must be in [0,1]");
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(learning_rate > 0.0, "TrainConfig: learning_rate must be positive");
}

double lr_at_step(const TrainConfig& cfg, int64_t step, int64_t total_steps) {
    const int64_t warmup = std::llround(cfg.warmup_ratio * static_cast<double>(total_steps));
    if (warmup > 0 && step < warmup)
        return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
    if (total_steps <= warmup) return cfg.learning_rate;
    return cfg.learning_rate * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

AdamState::AdamState(const GcnParams& params) {
    for (const Tensor* t : params.tensors()) {
        m.emplace_back(t->rows, t->cols);
        v.emplace_back(t->rows, t->cols);
    }
}

void AdamState::step(GcnParams& params, const std::vector<Tensor>& grads, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    auto tensors = params.tensors();
    for (size_t p = 0; p < tensors.size(); ++p) {
        Tensor& w = *tensors[p];
        const Tensor& g = grads[p];
        for (size_t i = 0; i < w.v.size(); ++i) {
            m[p].v[i] = beta1 * m[p].v[i] + (1.0 - beta1) * g.v[i];
            v[p].v[i] = beta2 * v[p].v[i] + (1.0 - beta2) * g.v[i] * g.v[i];
            const double mhat = m[p].v[i] / bc1;
            const double vhat = v[p].v[i] / bc2;
            w.v[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

TrainResult train_gcn(GcnParams initial, const std::vector<GcnExample>& examples,
                      const TrainConfig& cfg, const LossBuilder& build_loss,
                      const ValMetric& val_metric) {
    cfg.validate();
    require(!examples.empty(), "train_gcn: no training examples");
    const int dim = initial.dim;
    const int n = static_cast<int>(examples.size());
    const int64_t steps_per_epoch =
        (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    GcnParams params = std::move(initial);
    AdamState adam(params);
    Rng dropout_rng(Rng::derive(cfg.seed, {0xd0}));

    TrainResult result;
    result.adam = adam;
    double best_val = -std::numeric_limits<double>::infinity();

    std::vector<Tensor> grad_accum;
    for (const Tensor* t : params.tensors()) grad_accum.emplace_back(t->rows, t->cols);

    int64_t opt_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Deterministic per-epoch shuffle.
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(Rng::derive(cfg.seed, {0x5f, static_cast<uint64_t>(epoch)}));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

        double loss_sum = 0.0;
        int in_batch = 0;
        for (int step = 0; step < n; ++step) {
            const int ei = order[step];
            const GcnExample& ex = examples[ei];

            Tape tape;
            GcnVars vars = gcn_leaves(tape, params, true);
            std::vector<RVar> outputs;
            for (size_t mic = 0; mic < ex.centers.size(); ++mic) {
                RVar center = tape.leaf(Tensor::row(ex.centers[mic]));
                std::vector<std::pair<int, RVar>> nbrs;
                for (const NeighborRef& nb : ex.neighborhoods[mic])
                    nbrs.emplace_back(nb.id, tape.leaf(Tensor::row(*nb.feature)));

                Tensor mask1, mask2;
                const Tensor *m1 = nullptr, *m2 = nullptr;
                if (cfg.dropout_p > 0.0) {
                    const int rows = static_cast<int>(nbrs.size());
                    mask1 = Tensor(rows, 2 * dim);
                    mask2 = Tensor(rows, 2 * dim);
                    const double keep = 1.0 - cfg.dropout_p;
                    for (double& v : mask1.v)
                        v = (dropout_rng.uniform() < keep) ? 1.0 / keep : 0.0;
                    for (double& v : mask2.v)
                        v = (dropout_rng.uniform() < keep) ? 1.0 / keep : 0.0;
                    m1 = &mask1;
                    m2 = &mask2;
                }
                outputs.push_back(gcn_forward_tape(tape, vars, center, nbrs, m1, m2));
            }

            RVar loss = build_loss(tape, outputs, ei);
            const double loss_value = tape.val(loss).v[0];
            if (!std::isfinite(loss_value))
                fail("train_gcn: NaN loss at epoch " + std::to_string(epoch) + ", example " +
                     std::to_string(ei));
            loss_sum += loss_value;
            tape.backward(loss);

            const RVar param_vars[] = {vars.w1, vars.b1, vars.w2, vars.b2, vars.w3, vars.b3};
            for (int p = 0; p < 6; ++p) {
                const Tensor g = tape.grad(param_vars[p]);
                for (size_t i = 0; i < g.v.size(); ++i) grad_accum[p].v[i] += g.v[i];
            }
            ++in_batch;

            if (in_batch == cfg.batch_size || step == n - 1) {
                const double inv = 1.0 / in_batch;
                for (auto& g : grad_accum)
                    for (double& v : g.v) v *= inv;
                adam.step(params, grad_accum, lr_at_step(cfg, opt_step, total_steps));
                ++opt_step;
                for (auto& g : grad_accum) std::fill(g.v.begin(), g.v.end(), 0.0);
                in_batch = 0;
            }
        }

        TrainLogRow row;
        row.mean_loss = loss_sum / n;
        row.val_metric = val_metric ? val_metric(params) : -row.mean_loss;
        result.log.push_back(row);
        if (row.val_metric > best_val) {
            best_val = row.val_metric;
            result.params = params;
            result.adam = adam;
            result.best_epoch = epoch;
        }
    }
    return result;
}

std::vector<std::vector<double>> infer(const GcnParams& params, const FeatureBank& bank,
                                       const QueryAttachment& query) {
    require(params.dim == bank.dim, "infer: parameter/feature dimension mismatch");
    require(static_cast<int>(query.query.size()) == bank.num_mics(),
            "infer: query does not cover every microphone");
    std::vector<std::vector<double>> out;
    for (int m = 0; m < bank.num_mics(); ++m) {
        std::vector<NeighborRef> nbrs;
        for (int id : query.neighbor_ids[m]) nbrs.push_back({id, &bank.per_mic[m][id]});
        out.push_back(gcn_forward(params, query.query[m], std::move(nbrs)));
    }
    return out;
}

void save_checkpoint(const std::string& path, const GcnParams& params,
                     const AdamState& adam, const CheckpointMeta& meta,
                     const std::vector<TrainLogRow>& log) {
    TensorContainer c;
    auto add = [&](const std::string& name, const Tensor& t) {
        c.add_f64(name, {t.rows, t.cols}, t.v);
    };
    add("w1", params.w1);
    add("b1", params.b1);
    add("w2", params.w2);
    add("b2", params.b2);
    add("w3", params.w3);
    add("b3", params.b3);
    auto tensors = params.tensors();
    for (size_t p = 0; p < tensors.size(); ++p) {
        c.add_f64("adam_m" + std::to_string(p), {adam.m[p].rows, adam.m[p].cols}, adam.m[p].v);
        c.add_f64("adam_v" + std::to_string(p), {adam.v[p].rows, adam.v[p].cols}, adam.v[p].v);
    }
    std::vector<double> log_flat;
    for (const auto& row : log) {
        log_flat.push_back(row.mean_loss);
        log_flat.push_back(row.val_metric);
    }
    c.add_f64("log", {static_cast<int64_t>(log.size()), 2}, log_flat);
    c.meta_int["schema_version"] = 1;
    c.meta_int["d"] = meta.d;
    c.meta_int["K"] = meta.knn_k;
    c.meta_int["M"] = meta.num_mics;
    c.meta_int["bins"] = meta.bins;
    c.meta_str["loss"] = meta.loss;
    c.meta_int["seed"] = static_cast<int64_t>(meta.seed);
    c.meta_int["epoch"] = meta.epoch;
    c.meta_int["adam_t"] = adam.t;
    c.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
    TensorContainer c = TensorContainer::load(path);
    Checkpoint ck;
    auto get = [&](const std::string& name) {
        const auto& shape = c.shape(name);
        require(shape.size() == 2, "checkpoint: bad tensor rank for " + name);
        Tensor t(static_cast<int>(shape[0]), static_cast<int>(shape[1]));
        t.v = c.get_f64(name);
        return t;
    };
    ck.params.w1 = get("w1");
    ck.params.b1 = get("b1");
    ck.params.w2 = get("w2");
    ck.params.b2 = get("b2");
    ck.params.w3 = get("w3");
    ck.params.b3 = get("b3");
    require(c.meta_int.count("d") && c.meta_int.count("K") && c.meta_int.count("M") &&
                c.meta_int.count("seed") && c.meta_int.count("epoch") &&
                c.meta_str.count("loss") && c.meta_int.count("schema_version"),
            "checkpoint: missing required metadata");
    ck.params.dim = static_cast<int>(c.meta_int["d"]);
    require(ck.params.w3.cols == ck.params.dim && ck.params.w1.rows == 2 * ck.params.dim,
            "checkpoint: tensor shapes disagree with metadata d");
    ck.meta.d = ck.params.dim;
    ck.meta.knn_k = static_cast<int>(c.meta_int["K"]);
    ck.meta.num_mics = static_cast<int>(c.meta_int["M"]);
    ck.meta.bins = static_cast<int>(c.meta_int.count("bins") ? c.meta_int["bins"] : 0);
    ck.meta.loss = c.meta_str["loss"];
    ck.meta.seed = static_cast<uint64_t>(c.meta_int["seed"]);
    ck.meta.epoch = static_cast<int>(c.meta_int["epoch"]);
    if (c.has("log")) {
        const auto flat = c.get_f64("log");
        for (size_t i = 0; i + 1 < flat.size(); i += 2)
            ck.log.push_back({flat[i], flat[i + 1]});
    }
    return ck;
}

}  // namespace beamgraph
