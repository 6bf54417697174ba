#pragma once

#include <optional>
#include <vector>

#include "gnnflavors/graph.hpp"
#include "gnnflavors/rng.hpp"
#include "gnnflavors/tensor.hpp"

namespace gnnflavors::graph {

// Row-normalizes a non-negative square matrix: P = A / rowsum(A).
// Rows with sum 0 stay all-zero (0/0 := 0).
std::vector<double> normalize_forward(const std::vector<double>& a, int n);

// P_b = A^T / rowsum(A^T).
std::vector<double> normalize_backward(const std::vector<double>& a, int n);

// Symmetric GCN normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.
// With add_self_loop = false the identity is not added and zero-degree rows
// stay zero; the aggregate then carries no center-node component.
std::vector<double> gcn_normalize(const std::vector<double>& a, int n, bool add_self_loop = true);

// Row-wise softmax over relu(E1 * E2^T); differentiable in E1 and E2.
tg::TensorPtr self_adaptive(const tg::TensorPtr& e1, const tg::TensorPtr& e2);

// The matrices one spatial layer consumes: the forward/backward transition
// matrices of the physical graph plus (optionally) the learnable factors of
// the self-adaptive adjacency.
struct AdjacencySet {
    int n = 0;
    std::vector<double> p_forward;   // N*N row-major
    std::vector<double> p_backward;  // N*N row-major
    tg::TensorPtr e1;                // [N, c] or null
    tg::TensorPtr e2;                // [N, c] or null

    bool has_adaptive() const { return e1 != nullptr && e2 != nullptr; }
    // Number of adjacency matrices exposed to a layer.
    int matrix_count() const { return has_adaptive() ? 3 : 2; }

    // Realizes the self-adaptive matrix on the active tape.
    tg::TensorPtr realize_adaptive() const;

    static AdjacencySet from_graph(const Graph& g);
    // Adds learnable factors E1, E2 of width c, initialized U[-1,1).
    void init_adaptive(std::int64_t c, Rng& rng);

    static AdjacencySet from_dense(const std::vector<double>& a, int n);
};

}  // namespace gnnflavors::graph
