#pragma once

#include <functional>
#include <string>

#include "beamgraph/autodiff.hpp"
#include "beamgraph/graph.hpp"
#include "beamgraph/rng.hpp"

namespace beamgraph {

// Three fully-connected layers, weights shared across microphones.
// Stored operator-style: y = x W + b, so W1 is (2d x 2d) and W3 (2d x d).
struct GcnParams {
    int dim = 0;  // d
    Tensor w1, b1, w2, b2, w3, b3;

    static GcnParams init(int dim, uint64_t seed);
    static GcnParams zeros(int dim);
    std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::vector<const Tensor*> tensors() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
};

struct NeighborRef {
    int id = 0;
    const std::vector<double>* feature = nullptr;
};

// Evaluation-mode edge message: W3 relu(W2 relu(W1 [c;n] + b1) + b2) + b3.
std::vector<double> message(const GcnParams& params, const std::vector<double>& center,
                            const std::vector<double>& neighbor);

// Mean of messages over the neighborhood, summed in ascending-id order so the
// result is bitwise invariant to input permutation.
std::vector<double> gcn_forward(const GcnParams& params, const std::vector<double>& center,
                                std::vector<NeighborRef> neighbors);

struct GcnVars {
    RVar w1, b1, w2, b2, w3, b3;
};

// Register params as tape leaves (referencing external storage).
GcnVars gcn_leaves(Tape& tape, const GcnParams& params, bool needs_grad = true);

// Tape-recorded forward for one microphone; dropout masks (already scaled by
// 1/(1-p)) are applied after each hidden ReLU when provided.
RVar gcn_forward_tape(Tape& tape, const GcnVars& vars, RVar center,
                      const std::vector<std::pair<int, RVar>>& neighbors,
                      const Tensor* dropout_mask1, const Tensor* dropout_mask2);

struct TrainConfig {
    double learning_rate = 1e-4;
    double warmup_ratio = 0.1;
    int epochs = 100;
    double dropout_p = 0.5;
    uint64_t seed = 0;
    std::string loss = "sisdr2";  // sbf | sisdr1 | sisdr2 | stoi | feature_mse
    int batch_size = 1;

    void validate() const;
};

// Linear warmup to learning_rate over the first warmup fraction of steps,
// then linear decay to zero at the final step.
double lr_at_step(const TrainConfig& cfg, int64_t step, int64_t total_steps);

struct AdamState {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int64_t t = 0;
    std::vector<Tensor> m, v;

    AdamState() = default;
    explicit AdamState(const GcnParams& params);
    void step(GcnParams& params, const std::vector<Tensor>& grads, double lr);
};

// One training example: per-microphone (center feature, neighbor list).
struct GcnExample {
    std::vector<std::vector<double>> centers;           // (M-1) x d
    std::vector<std::vector<NeighborRef>> neighborhoods;  // (M-1) x K
};

struct TrainLogRow {
    double mean_loss = 0.0;
    double val_metric = 0.0;
};

struct TrainResult {
    GcnParams params;  // best-validation parameters
    AdamState adam;
    std::vector<TrainLogRow> log;
    int best_epoch = -1;
};

// Scalar loss to minimize, built on the tape from the per-mic outputs.
using LossBuilder = std::function<RVar(Tape&, const std::vector<RVar>&, int example_index)>;
// Validation metric (higher is better), evaluated once per epoch.
using ValMetric = std::function<double(const GcnParams&)>;

TrainResult train_gcn(GcnParams initial, const std::vector<GcnExample>& examples,
                      const TrainConfig& cfg, const LossBuilder& build_loss,
                      const ValMetric& val_metric);

// Per-mic refined features: forward with the noisy query as center and its
// attached clean neighbors; dropout disabled.
std::vector<std::vector<double>> infer(const GcnParams& params, const FeatureBank& bank,
                                       const QueryAttachment& query);

struct CheckpointMeta {
    int d = 0;
    int knn_k = 0;
    int num_mics = 0;
    int bins = 0;
    std::string loss;
    uint64_t seed = 0;
    int epoch = 0;
};

void save_checkpoint(const std::string& path, const GcnParams& params,
                     const AdamState& adam, const CheckpointMeta& meta,
                     const std::vector<TrainLogRow>& log);

struct Checkpoint {
    GcnParams params;
    CheckpointMeta meta;
    std::vector<TrainLogRow> log;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace beamgraph
