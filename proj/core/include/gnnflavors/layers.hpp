#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "gnnflavors/adjacency.hpp"
#include "gnnflavors/graph.hpp"
#include "gnnflavors/mlp.hpp"
#include "gnnflavors/tensor.hpp"

// The three GNN flavor layers. Node features are [N, d] or batched [S, N, d];
// every layer is a pure function of (features, structure, params) and maps
// slice s independently.

namespace gnnflavors::nn {

// Directed (center, neighbor) pairs in deterministic order (center-major).
// For directed graphs the neighborhood of a node is the union of its in- and
// out-neighbors, so a pair exists whenever either transition matrix has a
// nonzero entry for it.
struct EdgeList {
    std::int64_t n_nodes = 0;
    std::vector<std::int64_t> center;
    std::vector<std::int64_t> neighbor;

    std::int64_t n_pairs() const { return static_cast<std::int64_t>(center.size()); }
    static EdgeList from_graph(const graph::Graph& g, bool add_self_loops);
};

// ---- convolutional flavor (GCN) ----

struct GcnParams {
    tg::TensorPtr weight;  // [d_in, d_out]

    static GcnParams make(std::int64_t d_in, std::int64_t d_out, Rng& rng,
                          const std::string& prefix);
    void collect_params(std::vector<tg::TensorPtr>& out) const;
    std::int64_t param_count() const;
};

// a_hat is the self-looped symmetric normalization D^{-1/2}(A+I)D^{-1/2},
// supplied as a constant [N, N] tensor (see gcn_normalize).
tg::TensorPtr gcn_forward(const tg::TensorPtr& h, const tg::TensorPtr& a_hat,
                          const GcnParams& p);

// ---- convolutional flavor (diffusion convolution, directed graphs) ----

struct DiffusionConvParams {
    int hops = 2;        // K
    bool with_adaptive = true;
    // weights[k] = {W_{k,forward}, W_{k,backward}, W_{k,adaptive}}; the third
    // entry is null when with_adaptive is false.
    std::vector<std::array<tg::TensorPtr, 3>> weights;
    tg::TensorPtr bias;  // [d_out]

    static DiffusionConvParams make(std::int64_t d_in, std::int64_t d_out, int hops,
                                    bool with_adaptive, Rng& rng, const std::string& prefix);
    void collect_params(std::vector<tg::TensorPtr>& out) const;
    std::int64_t param_count() const;
};

// Constant transition-matrix powers P^0..P^K shared across forward passes.
struct DiffusionContext {
    std::vector<tg::TensorPtr> pf_pow;
    std::vector<tg::TensorPtr> pb_pow;
    static DiffusionContext build(const graph::AdjacencySet& adj, int hops);
};

// adaptive: realized self-adaptive matrix [N, N] (nullable). Powers of it are
// rebuilt on the tape so gradients reach the factors.
tg::TensorPtr diffusion_conv(const tg::TensorPtr& h, const DiffusionContext& ctx,
                             const tg::TensorPtr& adaptive, const DiffusionConvParams& p);

// ---- attentional flavor (GAT) ----

struct GatParams {
    int heads = 1;  // M
    double leaky_slope = 0.2;
    std::vector<tg::TensorPtr> w1;  // per head [d, d], feature projection
    std::vector<tg::TensorPtr> w2;  // per head [d, d], attention projection
    std::vector<tg::TensorPtr> w3;  // per head [2d, 1], attention reduction
    tg::Mlp reduce;                 // M*d -> d

    static GatParams make(std::int64_t d, int heads, std::int64_t reduce_hidden, Rng& rng,
                          const std::string& prefix);
    void collect_params(std::vector<tg::TensorPtr>& out) const;
    std::int64_t param_count() const;
};

// edges must include self-loops (neighborhood softmax covers the node itself).
tg::TensorPtr gat_forward(const tg::TensorPtr& h, const EdgeList& edges, const GatParams& p);

// Attention coefficients of the last gat_forward call, one vector per head,
// each of length n_pairs * n_slices (slice-major). Exposed for tests.
const std::vector<std::vector<double>>& gat_last_attention();

// ---- message-passing flavor (MPNN) ----

struct MpnnParams {
    tg::Mlp message;  // MLP_2: [2d + n_edge_scalars] -> w
    tg::Mlp update;   // MLP_1: w -> d_out

    static MpnnParams make(std::int64_t d, std::int64_t d_out, std::int64_t width,
                           std::int64_t n_edge_scalars, Rng& rng, const std::string& prefix);
    void collect_params(std::vector<tg::TensorPtr>& out) const;
    std::int64_t param_count() const;
};

// Per-pair constant adjacency scalars [E, k] (k = 1 for undirected graphs
// where P_f = P_b, else 2). Entries follow the EdgeList pair order.
tg::TensorPtr edge_scalar_features(const EdgeList& edges, const graph::AdjacencySet& adj,
                                   bool undirected_single);

// edges must NOT include self-loops: h_i already appears in every message.
// adaptive (nullable): realized self-adaptive matrix; its (i,j) entries are
// gathered per pair and appended to the message input, with gradients flowing
// back to the factors.
tg::TensorPtr mpnn_forward(const tg::TensorPtr& h, const EdgeList& edges,
                           const tg::TensorPtr& edge_scalars, const tg::TensorPtr& adaptive,
                           const MpnnParams& p);

// Instrumentation: MLP_2 row evaluations since the last reset (thread-local).
std::int64_t mpnn_message_count();
void mpnn_reset_message_count();

}  // namespace gnnflavors::nn
