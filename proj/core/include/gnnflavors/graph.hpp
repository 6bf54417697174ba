#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gnnflavors/error.hpp"

namespace gnnflavors::graph {

// Node-indexed graph with non-negative edge weights. Undirected graphs store
// each edge once and expose symmetric neighbor lists.
class Graph {
public:
    struct Edge {
        int src;
        int dst;
        double weight;
    };

    Graph() = default;
    Graph(int n_nodes, bool directed, std::vector<Edge> edges);

    int n_nodes() const { return n_nodes_; }
    bool directed() const { return directed_; }
    const std::vector<Edge>& edges() const { return edges_; }

    // For undirected graphs neighbor lists contain both endpoints' views.
    const std::vector<std::pair<int, double>>& neighbors(int node) const;
    std::int64_t degree(int node) const;

    // Dense N*N row-major adjacency; undirected edges appear in both slots.
    std::vector<double> dense_adjacency() const;

private:
    int n_nodes_ = 0;
    bool directed_ = false;
    std::vector<Edge> edges_;
    std::vector<std::vector<std::pair<int, double>>> neighbors_;
};

// Erdos-Renyi G(n, p): each of the C(n,2) unordered pairs is an edge
// independently with probability p; undirected, unweighted, deterministic
// per seed.
Graph gen_er_graph(int n, double p, std::uint64_t seed);

// JSON graph format: {"n_nodes": N, "directed": bool, "edges": [[src,dst,w],...]}
Graph load_graph_json(const std::string& path);
void save_graph_json(const std::string& path, const Graph& g);

// Dense adjacency from CSV (N rows x N columns, no header).
std::vector<double> load_adjacency_csv(const std::string& path, int& n_out);

}  // namespace gnnflavors::graph
