#include "gnnflavors/graph.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "gnnflavors/rng.hpp"

namespace gnnflavors::graph {

Graph::Graph(int n_nodes, bool directed, std::vector<Edge> edges)
    : n_nodes_(n_nodes), directed_(directed), edges_(std::move(edges)) {
    if (n_nodes_ <= 0) throw DomainError("Graph: n_nodes must be positive");
    std::set<std::pair<int, int>> seen;
    neighbors_.assign(static_cast<std::size_t>(n_nodes_), {});
    for (const auto& e : edges_) {
        if (e.src < 0 || e.src >= n_nodes_ || e.dst < 0 || e.dst >= n_nodes_)
            throw DomainError("Graph: edge (" + std::to_string(e.src) + "," +
                              std::to_string(e.dst) + ") out of range");
        if (e.weight < 0.0) throw DomainError("Graph: negative edge weight");
        if (!seen.insert({e.src, e.dst}).second)
            throw DomainError("Graph: duplicate edge (" + std::to_string(e.src) + "," +
                              std::to_string(e.dst) + ")");
        if (!directed_ && e.src != e.dst && !seen.insert({e.dst, e.src}).second)
            throw DomainError("Graph: undirected edge stored twice (" + std::to_string(e.src) +
                              "," + std::to_string(e.dst) + ")");
        neighbors_[static_cast<std::size_t>(e.src)].push_back({e.dst, e.weight});
        if (!directed_ && e.src != e.dst)
            neighbors_[static_cast<std::size_t>(e.dst)].push_back({e.src, e.weight});
    }
}

const std::vector<std::pair<int, double>>& Graph::neighbors(int node) const {
    if (node < 0 || node >= n_nodes_) throw DomainError("Graph::neighbors: node out of range");
    return neighbors_[static_cast<std::size_t>(node)];
}

std::int64_t Graph::degree(int node) const {
    return static_cast<std::int64_t>(neighbors(node).size());
}

std::vector<double> Graph::dense_adjacency() const {
    const auto n = static_cast<std::size_t>(n_nodes_);
    std::vector<double> a(n * n, 0.0);
    for (const auto& e : edges_) {
        a[static_cast<std::size_t>(e.src) * n + static_cast<std::size_t>(e.dst)] = e.weight;
        if (!directed_) a[static_cast<std::size_t>(e.dst) * n + static_cast<std::size_t>(e.src)] = e.weight;
    }
    return a;
}

Graph gen_er_graph(int n, double p, std::uint64_t seed) {
    if (n <= 0) throw DomainError("gen_er_graph: n must be positive");
    if (p < 0.0 || p > 1.0) throw DomainError("gen_er_graph: p must be in [0,1]");
    Rng rng(seed);
    std::vector<Graph::Edge> edges;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (rng.next_unit() < p) edges.push_back({i, j, 1.0});
    return Graph(n, /*directed=*/false, std::move(edges));
}

Graph load_graph_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("graph: cannot open '" + path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw LoadError("graph: JSON parse failure in '" + path + "': " + e.what());
    }
    std::vector<Graph::Edge> edges;
    for (const auto& e : doc.at("edges")) {
        if (!e.is_array() || e.size() != 3)
            throw LoadError("graph: edge entries must be [src, dst, weight]");
        edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<double>()});
    }
    return Graph(doc.at("n_nodes").get<int>(), doc.at("directed").get<bool>(), std::move(edges));
}

void save_graph_json(const std::string& path, const Graph& g) {
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& e : g.edges()) edges.push_back({e.src, e.dst, e.weight});
    nlohmann::json doc = {
        {"n_nodes", g.n_nodes()}, {"directed", g.directed()}, {"edges", std::move(edges)}};
    std::ofstream out(path);
    if (!out) throw LoadError("graph: cannot open '" + path + "' for writing");
    out << doc.dump(1) << "\n";
}

std::vector<double> load_adjacency_csv(const std::string& path, int& n_out) {
    std::ifstream in(path);
    if (!in) throw LoadError("adjacency: cannot open '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw LoadError("adjacency: bad number at " + path + ":" + std::to_string(lineno));
            }
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw LoadError("adjacency: ragged row at " + path + ":" + std::to_string(lineno));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw LoadError("adjacency: empty file '" + path + "'");
    if (rows.size() != rows.front().size())
        throw LoadError("adjacency: matrix is " + std::to_string(rows.size()) + "x" +
                        std::to_string(rows.front().size()) + ", want square");
    n_out = static_cast<int>(rows.size());
    std::vector<double> flat;
    flat.reserve(rows.size() * rows.size());
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return flat;
}

}  // namespace gnnflavors::graph
