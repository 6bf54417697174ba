#include "gnnflavors/layers.hpp"

#include <algorithm>

#include "gnnflavors/ops.hpp"

namespace gnnflavors::nn {

namespace {
using tg::TensorPtr;
using i64 = std::int64_t;

thread_local i64 g_mpnn_messages = 0;
thread_local std::vector<std::vector<double>> g_gat_attention;

void require_features(const TensorPtr& h, i64 n_nodes, i64 d, const char* op) {
    if (h->rank() < 2)
        throw ShapeError(std::string(op) + ": features must be [N,d] or [S,N,d]");
    if (h->shape[static_cast<std::size_t>(h->rank() - 2)] != n_nodes)
        throw ShapeError(std::string(op) + ": node count mismatch");
    if (d > 0 && h->shape.back() != d)
        throw ShapeError(std::string(op) + ": feature width mismatch");
}
}  // namespace

EdgeList EdgeList::from_graph(const graph::Graph& g, bool add_self_loops) {
    const int n = g.n_nodes();
    std::vector<std::vector<i64>> nbrs(static_cast<std::size_t>(n));
    for (const auto& e : g.edges()) {
        nbrs[static_cast<std::size_t>(e.src)].push_back(e.dst);
        if (e.src != e.dst) nbrs[static_cast<std::size_t>(e.dst)].push_back(e.src);
    }
    EdgeList out;
    out.n_nodes = n;
    for (int i = 0; i < n; ++i) {
        auto& v = nbrs[static_cast<std::size_t>(i)];
        if (add_self_loops) v.push_back(i);
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
        for (i64 j : v) {
            out.center.push_back(i);
            out.neighbor.push_back(j);
        }
    }
    return out;
}

// ---- GCN ----

GcnParams GcnParams::make(i64 d_in, i64 d_out, Rng& rng, const std::string& prefix) {
    GcnParams p;
    p.weight = tg::init_weight(d_in, d_out, rng, prefix + ".w");
    return p;
}

void GcnParams::collect_params(std::vector<TensorPtr>& out) const { out.push_back(weight); }

std::int64_t GcnParams::param_count() const { return weight->numel(); }

TensorPtr gcn_forward(const TensorPtr& h, const TensorPtr& a_hat, const GcnParams& p) {
    if (a_hat->rank() != 2 || a_hat->shape[0] != a_hat->shape[1])
        throw ShapeError("gcn_forward: a_hat must be square");
    require_features(h, a_hat->shape[0], p.weight->shape[0], "gcn_forward");
    return tg::matmul(tg::matmul(a_hat, h), p.weight);
}

// ---- diffusion convolution ----

DiffusionConvParams DiffusionConvParams::make(i64 d_in, i64 d_out, int hops, bool with_adaptive,
                                              Rng& rng, const std::string& prefix) {
    if (hops < 0) throw DomainError("diffusion_conv: hops must be >= 0");
    DiffusionConvParams p;
    p.hops = hops;
    p.with_adaptive = with_adaptive;
    for (int k = 0; k <= hops; ++k) {
        const auto kp = prefix + ".k" + std::to_string(k);
        p.weights.push_back({tg::init_weight(d_in, d_out, rng, kp + ".fwd"),
                             tg::init_weight(d_in, d_out, rng, kp + ".bwd"),
                             with_adaptive ? tg::init_weight(d_in, d_out, rng, kp + ".adp")
                                           : nullptr});
    }
    p.bias = tg::Tensor::zeros({d_out}, true);
    p.bias->name = prefix + ".bias";
    return p;
}

void DiffusionConvParams::collect_params(std::vector<TensorPtr>& out) const {
    for (const auto& trio : weights) {
        out.push_back(trio[0]);
        out.push_back(trio[1]);
        if (trio[2]) out.push_back(trio[2]);
    }
    out.push_back(bias);
}

std::int64_t DiffusionConvParams::param_count() const {
    std::int64_t n = bias->numel();
    for (const auto& trio : weights) {
        n += trio[0]->numel() + trio[1]->numel();
        if (trio[2]) n += trio[2]->numel();
    }
    return n;
}

DiffusionContext DiffusionContext::build(const graph::AdjacencySet& adj, int hops) {
    if (hops < 0) throw DomainError("DiffusionContext: hops must be >= 0");
    DiffusionContext ctx;
    const i64 n = adj.n;
    auto as_tensor = [n](const std::vector<double>& m) {
        return tg::Tensor::from_values({n, n}, m);
    };
    // index 0 is unused (the k=0 term multiplies by the identity).
    ctx.pf_pow.assign(static_cast<std::size_t>(hops) + 1, nullptr);
    ctx.pb_pow.assign(static_cast<std::size_t>(hops) + 1, nullptr);
    if (hops >= 1) {
        ctx.pf_pow[1] = as_tensor(adj.p_forward);
        ctx.pb_pow[1] = as_tensor(adj.p_backward);
        for (int k = 2; k <= hops; ++k) {
            tg::Tape::NoGrad off;
            ctx.pf_pow[static_cast<std::size_t>(k)] =
                tg::matmul(ctx.pf_pow[static_cast<std::size_t>(k - 1)], ctx.pf_pow[1]);
            ctx.pb_pow[static_cast<std::size_t>(k)] =
                tg::matmul(ctx.pb_pow[static_cast<std::size_t>(k - 1)], ctx.pb_pow[1]);
        }
    }
    return ctx;
}

TensorPtr diffusion_conv(const TensorPtr& h, const DiffusionContext& ctx,
                         const TensorPtr& adaptive, const DiffusionConvParams& p) {
    if (p.with_adaptive && !adaptive)
        throw ContractError("diffusion_conv: params expect an adaptive matrix");
    if (static_cast<int>(ctx.pf_pow.size()) < p.hops + 1)
        throw ContractError("diffusion_conv: context built for fewer hops");
    require_features(h, p.hops >= 1 ? ctx.pf_pow[1]->shape[0] : h->shape[h->rank() - 2],
                     p.weights[0][0]->shape[0], "diffusion_conv");

    TensorPtr acc;
    auto accumulate = [&acc](const TensorPtr& t) { acc = acc ? tg::add(acc, t) : t; };

    TensorPtr a_pow;  // adaptive^k, grown on the tape
    for (int k = 0; k <= p.hops; ++k) {
        const auto& trio = p.weights[static_cast<std::size_t>(k)];
        if (k == 0) {
            // P^0 = identity for all three families
            accumulate(tg::matmul(h, trio[0]));
            accumulate(tg::matmul(h, trio[1]));
            if (p.with_adaptive) accumulate(tg::matmul(h, trio[2]));
        } else {
            accumulate(tg::matmul(tg::matmul(ctx.pf_pow[static_cast<std::size_t>(k)], h), trio[0]));
            accumulate(tg::matmul(tg::matmul(ctx.pb_pow[static_cast<std::size_t>(k)], h), trio[1]));
            if (p.with_adaptive) {
                a_pow = a_pow ? tg::matmul(a_pow, adaptive) : adaptive;
                accumulate(tg::matmul(tg::matmul(a_pow, h), trio[2]));
            }
        }
    }
    return tg::add_rowvec(acc, p.bias);
}

// ---- GAT ----

GatParams GatParams::make(i64 d, int heads, i64 reduce_hidden, Rng& rng,
                          const std::string& prefix) {
    if (heads < 1) throw DomainError("gat: heads must be >= 1");
    GatParams p;
    p.heads = heads;
    for (int m = 0; m < heads; ++m) {
        const auto hp = prefix + ".h" + std::to_string(m);
        p.w1.push_back(tg::init_weight(d, d, rng, hp + ".w1"));
        p.w2.push_back(tg::init_weight(d, d, rng, hp + ".w2"));
        p.w3.push_back(tg::init_weight(2 * d, 1, rng, hp + ".w3"));
    }
    const i64 hidden = reduce_hidden > 0 ? reduce_hidden : static_cast<i64>(heads) * d;
    p.reduce = tg::Mlp::make({static_cast<i64>(heads) * d, hidden, d}, tg::Activation::relu, rng,
                             prefix + ".reduce");
    return p;
}

void GatParams::collect_params(std::vector<TensorPtr>& out) const {
    for (int m = 0; m < heads; ++m) {
        out.push_back(w1[static_cast<std::size_t>(m)]);
        out.push_back(w2[static_cast<std::size_t>(m)]);
        out.push_back(w3[static_cast<std::size_t>(m)]);
    }
    reduce.collect_params(out);
}

std::int64_t GatParams::param_count() const {
    std::int64_t n = 0;
    for (int m = 0; m < heads; ++m)
        n += w1[static_cast<std::size_t>(m)]->numel() + w2[static_cast<std::size_t>(m)]->numel() +
             w3[static_cast<std::size_t>(m)]->numel();
    return n + reduce.param_count();
}

const std::vector<std::vector<double>>& gat_last_attention() { return g_gat_attention; }

TensorPtr gat_forward(const TensorPtr& h, const EdgeList& edges, const GatParams& p) {
    const i64 d = p.w1[0]->shape[0];
    require_features(h, edges.n_nodes, d, "gat_forward");

    // logits drop the trailing width-1 axis: [..., E, 1] -> [..., E]
    tg::Shape logit_shape(h->shape.begin(), h->shape.end() - 2);
    logit_shape.push_back(edges.n_pairs());

    g_gat_attention.assign(static_cast<std::size_t>(p.heads), {});
    std::vector<TensorPtr> head_outputs;
    for (int m = 0; m < p.heads; ++m) {
        const auto& w1 = p.w1[static_cast<std::size_t>(m)];
        const auto& w2 = p.w2[static_cast<std::size_t>(m)];
        const auto& w3 = p.w3[static_cast<std::size_t>(m)];

        auto wh = tg::matmul(h, w1);  // [..., N, d]
        auto u = tg::matmul(h, w2);
        auto pair = tg::concat(
            {tg::gather_rows(u, edges.center), tg::gather_rows(u, edges.neighbor)}, -1);
        auto logits =
            tg::reshape(tg::leaky_relu(tg::matmul(pair, w3), p.leaky_slope), logit_shape);
        auto alpha = tg::segment_softmax(logits, edges.center, edges.n_nodes);
        g_gat_attention[static_cast<std::size_t>(m)] = alpha->data;

        auto messages = tg::row_scale(tg::gather_rows(wh, edges.neighbor), alpha);
        auto agg = tg::segment_sum(messages, edges.center, edges.n_nodes);
        head_outputs.push_back(tg::elu(agg));
    }
    auto stacked = p.heads == 1 ? head_outputs[0] : tg::concat(head_outputs, -1);
    return tg::mlp_apply(p.reduce, stacked);
}

// ---- MPNN ----

MpnnParams MpnnParams::make(i64 d, i64 d_out, i64 width, i64 n_edge_scalars, Rng& rng,
                            const std::string& prefix) {
    MpnnParams p;
    p.message = tg::Mlp::make({2 * d + n_edge_scalars, width, width}, tg::Activation::relu, rng,
                              prefix + ".mlp2");
    p.update = tg::Mlp::make({width, width, d_out}, tg::Activation::relu, rng, prefix + ".mlp1");
    return p;
}

void MpnnParams::collect_params(std::vector<TensorPtr>& out) const {
    message.collect_params(out);
    update.collect_params(out);
}

std::int64_t MpnnParams::param_count() const {
    return message.param_count() + update.param_count();
}

TensorPtr edge_scalar_features(const EdgeList& edges, const graph::AdjacencySet& adj,
                               bool undirected_single) {
    const i64 e = edges.n_pairs();
    const i64 k = undirected_single ? 1 : 2;
    auto out = tg::Tensor::zeros({e, k});
    const auto n = static_cast<std::size_t>(adj.n);
    for (i64 r = 0; r < e; ++r) {
        const auto i = static_cast<std::size_t>(edges.center[static_cast<std::size_t>(r)]);
        const auto j = static_cast<std::size_t>(edges.neighbor[static_cast<std::size_t>(r)]);
        out->data[static_cast<std::size_t>(r * k)] = adj.p_forward[i * n + j];
        if (!undirected_single)
            out->data[static_cast<std::size_t>(r * k + 1)] = adj.p_backward[i * n + j];
    }
    return out;
}

std::int64_t mpnn_message_count() { return g_mpnn_messages; }

void mpnn_reset_message_count() { g_mpnn_messages = 0; }

TensorPtr mpnn_forward(const TensorPtr& h, const EdgeList& edges, const TensorPtr& edge_scalars,
                       const TensorPtr& adaptive, const MpnnParams& p) {
    require_features(h, edges.n_nodes, 0, "mpnn_forward");
    const i64 e = edges.n_pairs();
    const i64 slices = h->numel() / (edges.n_nodes * h->shape.back());

    TensorPtr scalars = edge_scalars;  // [E, k] constants
    if (adaptive) {
        std::vector<i64> flat_idx(static_cast<std::size_t>(e));
        for (i64 r = 0; r < e; ++r)
            flat_idx[static_cast<std::size_t>(r)] =
                edges.center[static_cast<std::size_t>(r)] * edges.n_nodes +
                edges.neighbor[static_cast<std::size_t>(r)];
        auto entries = tg::gather_rows(
            tg::reshape(adaptive, {edges.n_nodes * edges.n_nodes, 1}), flat_idx);  // [E, 1]
        scalars = scalars ? tg::concat({scalars, entries}, -1) : entries;
    }
    if (!scalars) throw ContractError("mpnn_forward: no edge scalar features");

    std::vector<TensorPtr> features = {tg::gather_rows(h, edges.center),
                                       tg::gather_rows(h, edges.neighbor)};
    features.push_back(h->rank() > 2 ? tg::tile_slices(scalars, slices) : scalars);

    auto msg_in = tg::concat(features, -1);  // [..., E, 2d + k]
    g_mpnn_messages += slices * e;
    auto msg = tg::mlp_apply(p.message, msg_in);
    auto agg = tg::segment_sum(msg, edges.center, edges.n_nodes);
    return tg::mlp_apply(p.update, agg);
}

}  // namespace gnnflavors::nn
