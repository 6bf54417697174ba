#include "gnnflavors/adjacency.hpp"

#include <cmath>

#include "gnnflavors/ops.hpp"

namespace gnnflavors::graph {

namespace {
void require_nonneg(const std::vector<double>& a, const char* op) {
    for (double v : a)
        if (v < 0.0) throw DomainError(std::string(op) + ": negative adjacency entry");
}
}  // namespace

std::vector<double> normalize_forward(const std::vector<double>& a, int n) {
    if (static_cast<std::size_t>(n) * static_cast<std::size_t>(n) != a.size())
        throw ShapeError("normalize_forward: matrix size");
    require_nonneg(a, "normalize_forward");
    std::vector<double> p(a.size(), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += a[static_cast<std::size_t>(i) * n + j];
        if (s > 0.0) {
            const double inv = 1.0 / s;
            for (int j = 0; j < n; ++j)
                p[static_cast<std::size_t>(i) * n + j] = a[static_cast<std::size_t>(i) * n + j] * inv;
        }
    }
    return p;
}

std::vector<double> normalize_backward(const std::vector<double>& a, int n) {
    if (static_cast<std::size_t>(n) * static_cast<std::size_t>(n) != a.size())
        throw ShapeError("normalize_backward: matrix size");
    std::vector<double> at(a.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            at[static_cast<std::size_t>(j) * n + i] = a[static_cast<std::size_t>(i) * n + j];
    return normalize_forward(at, n);
}

std::vector<double> gcn_normalize(const std::vector<double>& a, int n, bool add_self_loop) {
    if (static_cast<std::size_t>(n) * static_cast<std::size_t>(n) != a.size())
        throw ShapeError("gcn_normalize: matrix size");
    require_nonneg(a, "gcn_normalize");
    std::vector<double> withloop = a;
    if (add_self_loop)
        for (int i = 0; i < n; ++i) withloop[static_cast<std::size_t>(i) * n + i] += 1.0;
    std::vector<double> dinv(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += withloop[static_cast<std::size_t>(i) * n + j];
        dinv[static_cast<std::size_t>(i)] = s > 0.0 ? 1.0 / std::sqrt(s) : 0.0;
    }
    std::vector<double> p(a.size());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            p[static_cast<std::size_t>(i) * n + j] =
                dinv[static_cast<std::size_t>(i)] * withloop[static_cast<std::size_t>(i) * n + j] *
                dinv[static_cast<std::size_t>(j)];
    return p;
}

tg::TensorPtr self_adaptive(const tg::TensorPtr& e1, const tg::TensorPtr& e2) {
    if (e1->rank() != 2 || e2->rank() != 2 || e1->shape != e2->shape)
        throw ShapeError("self_adaptive: factors must share shape [N, c]");
    auto logits = tg::relu(tg::matmul(e1, tg::transpose2(e2)));
    return tg::softmax_last(logits);
}

tg::TensorPtr AdjacencySet::realize_adaptive() const {
    if (!has_adaptive()) throw ContractError("AdjacencySet: no adaptive factors");
    return self_adaptive(e1, e2);
}

AdjacencySet AdjacencySet::from_graph(const Graph& g) {
    return from_dense(g.dense_adjacency(), g.n_nodes());
}

AdjacencySet AdjacencySet::from_dense(const std::vector<double>& a, int n) {
    AdjacencySet s;
    s.n = n;
    s.p_forward = normalize_forward(a, n);
    s.p_backward = normalize_backward(a, n);
    return s;
}

void AdjacencySet::init_adaptive(std::int64_t c, Rng& rng) {
    if (c < 1) throw DomainError("AdjacencySet: adaptive width must be >= 1");
    e1 = tg::Tensor::zeros({n, c}, true);
    e2 = tg::Tensor::zeros({n, c}, true);
    for (auto& v : e1->data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : e2->data) v = rng.uniform(-1.0, 1.0);
    e1->name = "adaptive.e1";
    e2->name = "adaptive.e2";
}

}  // namespace gnnflavors::graph
