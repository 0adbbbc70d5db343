#pragma once

#include <vector>

#include "beamgraph/common.hpp"

namespace beamgraph {

// Per non-reference microphone: N_train x d clean feature matrix plus the
// position ids the rows belong to.
struct FeatureBank {
    int dim = 0;
    std::vector<std::vector<std::vector<double>>> per_mic;  // mic -> row -> feature
    std::vector<int> position_ids;                          // row -> position id

    int num_mics() const { return static_cast<int>(per_mic.size()); }
    int num_rows() const { return per_mic.empty() ? 0 : static_cast<int>(per_mic[0].size()); }
    void validate() const;
};

// Directed KNN adjacency per microphone: neighbors[mic][node] lists the K
// in-neighbors, nearest first (ties broken by smaller node id).
struct ManifoldGraph {
    int k = 0;
    std::vector<std::vector<std::vector<int>>> neighbors;
};

// Per microphone: one query feature vector and its K clean-node neighbor ids.
struct QueryAttachment {
    int k = 0;
    std::vector<std::vector<double>> query;      // mic -> feature
    std::vector<std::vector<int>> neighbor_ids;  // mic -> K clean node ids
};

ManifoldGraph build_knn_graph(const FeatureBank& bank, int k);

// The K nearest clean nodes to the query, per microphone; the clean graph is
// untouched. exclude_row < 0 means no exclusion.
QueryAttachment attach_query(const FeatureBank& bank,
                             const std::vector<std::vector<double>>& query, int k,
                             int exclude_row = -1);

struct LeaveOneOut {
    QueryAttachment query;
    int excluded_row = -1;
};

// Alg. training construction: drop the clean node of `position_id` from the
// candidate set and attach the noisy features over the remaining rows.
LeaveOneOut leave_one_out(const FeatureBank& bank, int position_id,
                          const std::vector<std::vector<double>>& noisy_features, int k);

}  // namespace beamgraph
