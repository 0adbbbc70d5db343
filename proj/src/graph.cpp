#include "beamgraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace beamgraph {

void FeatureBank::validate() const {
    require(!per_mic.empty(), "FeatureBank: no microphones");
    const int rows = num_rows();
    require(static_cast<int>(position_ids.size()) == rows,
            "FeatureBank: position id count mismatch");
    for (const auto& mic : per_mic) {
        require(static_cast<int>(mic.size()) == rows, "FeatureBank: inconsistent row counts");
        for (const auto& row : mic) {
            require(static_cast<int>(row.size()) == dim, "FeatureBank: inconsistent feature dim");
            for (double v : row)
                require(std::isfinite(v), "FeatureBank: non-finite feature entry");
        }
    }
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// K smallest distances among candidates, ties broken by smaller id.
std::vector<int> k_nearest(const std::vector<std::vector<double>>& rows,
                           const std::vector<double>& target, int k, int skip_a,
                           int skip_b) {
    std::vector<std::pair<double, int>> scored;
    scored.reserve(rows.size());
    for (int j = 0; j < static_cast<int>(rows.size()); ++j) {
        if (j == skip_a || j == skip_b) continue;
        scored.emplace_back(sq_dist(rows[j], target), j);
    }
    std::partial_sort(scored.begin(), scored.begin() + k, scored.end());
    std::vector<int> ids(k);
    for (int i = 0; i < k; ++i) ids[i] = scored[i].second;
    return ids;
}

}  // namespace

ManifoldGraph build_knn_graph(const FeatureBank& bank, int k) {
    bank.validate();
    require(k >= 1, "build_knn_graph: K must be >= 1");
    require(k < bank.num_rows(), "build_knn_graph: K must be < N_train");

    ManifoldGraph g;
    g.k = k;
    g.neighbors.resize(bank.num_mics());
    for (int m = 0; m < bank.num_mics(); ++m) {
        const auto& rows = bank.per_mic[m];
        g.neighbors[m].resize(rows.size());
        for (int i = 0; i < static_cast<int>(rows.size()); ++i)
            g.neighbors[m][i] = k_nearest(rows, rows[i], k, i, -1);
    }
    return g;
}

QueryAttachment attach_query(const FeatureBank& bank,
                             const std::vector<std::vector<double>>& query, int k,
                             int exclude_row) {
    bank.validate();
    require(static_cast<int>(query.size()) == bank.num_mics(),
            "attach_query: query must cover every microphone");
    const int candidates = bank.num_rows() - (exclude_row >= 0 ? 1 : 0);
    require(k >= 1 && k <= candidates, "attach_query: K exceeds candidate count");
    for (const auto& q : query)
        require(static_cast<int>(q.size()) == bank.dim, "attach_query: dimension mismatch");

    QueryAttachment att;
    att.k = k;
    att.query = query;
    att.neighbor_ids.resize(bank.num_mics());
    for (int m = 0; m < bank.num_mics(); ++m)
        att.neighbor_ids[m] = k_nearest(bank.per_mic[m], query[m], k, exclude_row, -1);
    return att;
}

LeaveOneOut leave_one_out(const FeatureBank& bank, int position_id,
                          const std::vector<std::vector<double>>& noisy_features, int k) {
    bank.validate();
    int row = -1;
    for (int i = 0; i < bank.num_rows(); ++i)
        if (bank.position_ids[i] == position_id) {
            row = i;
            break;
        }
    require(row >= 0, "leave_one_out: unknown position id");

    LeaveOneOut out;
    out.excluded_row = row;
    out.query = attach_query(bank, noisy_features, k, row);
    return out;
}

}  // namespace beamgraph
