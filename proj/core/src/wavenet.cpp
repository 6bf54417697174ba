#include "gnnflavors/wavenet.hpp"

#include <fstream>

#include <json.hpp>

#include "gnnflavors/ops.hpp"

namespace gnnflavors::wavenet {

namespace {
using tg::TensorPtr;
using i64 = std::int64_t;

// Kaiming-style uniform bound reused for conv kernels: fan_in = C_in * K.
TensorPtr init_conv(i64 c_out, i64 c_in, int kernel, Rng& rng, const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * kernel));
    auto w = tg::Tensor::zeros({c_out, c_in, kernel}, true);
    for (auto& v : w->data) v = rng.uniform(-bound, bound);
    w->name = name;
    return w;
}
}  // namespace

Flavor flavor_from_string(const std::string& s) {
    if (s == "diffusion" || s == "dc") return Flavor::diffusion;
    if (s == "gat" || s == "attentional") return Flavor::gat;
    if (s == "mpnn" || s == "message-passing" || s == "mp") return Flavor::mpnn;
    throw ContractError("unknown backbone flavor '" + s + "'");
}

std::string to_string(Flavor f) {
    switch (f) {
        case Flavor::diffusion: return "diffusion";
        case Flavor::gat: return "gat";
        case Flavor::mpnn: return "mpnn";
    }
    return "?";
}

GtcnParams GtcnParams::make(i64 c_in, i64 c_out, int kernel, int dilation, bool sum_combine,
                            Rng& rng, const std::string& prefix) {
    if (kernel < 2) throw DomainError("gtcn: kernel must be >= 2");
    if (dilation < 1) throw DomainError("gtcn: dilation must be >= 1");
    GtcnParams p;
    p.kernel = kernel;
    p.dilation = dilation;
    p.sum_combine = sum_combine;
    p.w_filter = init_conv(c_out, c_in, kernel, rng, prefix + ".filter.w");
    p.b_filter = tg::Tensor::zeros({c_out}, true);
    p.b_filter->name = prefix + ".filter.b";
    p.w_gate = init_conv(c_out, c_in, kernel, rng, prefix + ".gate.w");
    p.b_gate = tg::Tensor::zeros({c_out}, true);
    p.b_gate->name = prefix + ".gate.b";
    return p;
}

void GtcnParams::collect_params(std::vector<TensorPtr>& out) const {
    out.push_back(w_filter);
    out.push_back(b_filter);
    out.push_back(w_gate);
    out.push_back(b_gate);
}

std::int64_t GtcnParams::param_count() const {
    return w_filter->numel() + b_filter->numel() + w_gate->numel() + b_gate->numel();
}

TensorPtr gtcn_forward(const TensorPtr& x, const GtcnParams& p) {
    auto filter = tg::tanh_op(tg::conv_time(x, p.w_filter, p.b_filter, p.dilation));
    auto gate = tg::sigmoid(tg::conv_time(x, p.w_gate, p.b_gate, p.dilation));
    return p.sum_combine ? tg::add(filter, gate) : tg::mul(filter, gate);
}

int WaveNetConfig::receptive_field() const {
    int rf = 1;
    for (int d : dilations) rf += (kernel - 1) * d;
    return rf;
}

void WaveNetConfig::validate() const {
    if (dilations.empty()) throw ContractError("wavenet: no layers");
    if (kernel < 2) throw ContractError("wavenet: kernel must be >= 2");
    for (int d : dilations)
        if (d < 1) throw ContractError("wavenet: dilation must be >= 1");
    if (obs_window < 1 || forecast_window < 1)
        throw ContractError("wavenet: window sizes must be >= 1");
    if (receptive_field() < obs_window)
        throw ContractError("wavenet: receptive field " + std::to_string(receptive_field()) +
                            " < observation window " + std::to_string(obs_window));
    if (residual_channels < 1 || skip_channels < 1)
        throw ContractError("wavenet: channel widths must be >= 1");
}

namespace {
using nlohmann::json;

json config_to_json(const WaveNetConfig& c) {
    return json{{"flavor", to_string(c.flavor)},
                {"in_channels", c.in_channels},
                {"residual_channels", c.residual_channels},
                {"skip_channels", c.skip_channels},
                {"encoder_hidden", c.encoder_hidden},
                {"decoder_hidden", c.decoder_hidden},
                {"dilations", c.dilations},
                {"kernel", c.kernel},
                {"obs_window", c.obs_window},
                {"forecast_window", c.forecast_window},
                {"gate_sum", c.gate_sum},
                {"diffusion_hops", c.diffusion_hops},
                {"use_adaptive", c.use_adaptive},
                {"adaptive_width", c.adaptive_width},
                {"gat_heads", c.gat_heads},
                {"mpnn_width", c.mpnn_width}};
}

WaveNetConfig config_from_json(const json& j) {
    WaveNetConfig c;
    c.flavor = flavor_from_string(j.at("flavor").get<std::string>());
    c.in_channels = j.value("in_channels", c.in_channels);
    c.residual_channels = j.value("residual_channels", c.residual_channels);
    c.skip_channels = j.value("skip_channels", c.skip_channels);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.decoder_hidden = j.value("decoder_hidden", c.decoder_hidden);
    if (j.contains("dilations")) c.dilations = j.at("dilations").get<std::vector<int>>();
    c.kernel = j.value("kernel", c.kernel);
    c.obs_window = j.value("obs_window", c.obs_window);
    c.forecast_window = j.value("forecast_window", c.forecast_window);
    c.gate_sum = j.value("gate_sum", c.gate_sum);
    c.diffusion_hops = j.value("diffusion_hops", c.diffusion_hops);
    c.use_adaptive = j.value("use_adaptive", c.use_adaptive);
    c.adaptive_width = j.value("adaptive_width", c.adaptive_width);
    c.gat_heads = j.value("gat_heads", c.gat_heads);
    c.mpnn_width = j.value("mpnn_width", c.mpnn_width);
    return c;
}
}  // namespace

void save_wavenet_config(const std::string& path, const WaveNetConfig& c) {
    std::ofstream out(path);
    if (!out) throw LoadError("wavenet config: cannot open '" + path + "' for writing");
    out << config_to_json(c).dump(1) << "\n";
}

WaveNetConfig load_wavenet_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("wavenet config: cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw LoadError(std::string("wavenet config: parse failure: ") + e.what());
    }
    return config_from_json(j);
}

SpatialContext SpatialContext::build(const graph::Graph& g, const graph::AdjacencySet& adj,
                                     const WaveNetConfig& cfg) {
    if (g.n_nodes() != adj.n) throw ContractError("SpatialContext: graph/adjacency node count");
    SpatialContext ctx;
    ctx.diffusion = nn::DiffusionContext::build(adj, cfg.diffusion_hops);
    ctx.edges_with_self = nn::EdgeList::from_graph(g, true);
    ctx.edges_without_self = nn::EdgeList::from_graph(g, false);
    ctx.mpnn_scalars = nn::edge_scalar_features(ctx.edges_without_self, adj, false);
    return ctx;
}

WaveNetModel WaveNetModel::make(const WaveNetConfig& cfg, const graph::AdjacencySet& adj,
                                Rng& rng) {
    cfg.validate();
    WaveNetModel m;
    m.config = cfg;
    m.adjacency = adj;
    if (cfg.use_adaptive && !m.adjacency.has_adaptive())
        m.adjacency.init_adaptive(cfg.adaptive_width, rng);

    const i64 res = cfg.residual_channels;
    if (cfg.encoder_hidden > 0)
        m.encoder = tg::Mlp::make({cfg.in_channels, cfg.encoder_hidden, res},
                                  tg::Activation::relu, rng, "encoder");
    else
        m.encoder = tg::Mlp::make({cfg.in_channels, res}, tg::Activation::relu, rng, "encoder");

    const int n_scalars = cfg.use_adaptive ? 3 : 2;
    for (int l = 0; l < cfg.n_layers(); ++l) {
        const auto lp = "layer" + std::to_string(l);
        m.temporal.push_back(GtcnParams::make(res, res, cfg.kernel, cfg.dilations[static_cast<std::size_t>(l)],
                                              cfg.gate_sum, rng, lp + ".gtcn"));
        switch (cfg.flavor) {
            case Flavor::diffusion:
                m.spatial_diffusion.push_back(nn::DiffusionConvParams::make(
                    res, res, cfg.diffusion_hops, cfg.use_adaptive, rng, lp + ".dc"));
                break;
            case Flavor::gat:
                m.spatial_gat.push_back(nn::GatParams::make(res, cfg.gat_heads, 0, rng, lp + ".gat"));
                break;
            case Flavor::mpnn:
                m.spatial_mpnn.push_back(nn::MpnnParams::make(res, res, cfg.mpnn_width, n_scalars,
                                                              rng, lp + ".mpnn"));
                break;
        }
        m.skip_w.push_back(tg::init_weight(res, cfg.skip_channels, rng, lp + ".skip.w"));
        m.skip_b.push_back(tg::init_bias(res, cfg.skip_channels, rng, lp + ".skip.b"));
    }

    const i64 skip_total = static_cast<i64>(cfg.n_layers()) * cfg.skip_channels;
    m.decoder = tg::Mlp::make({skip_total, cfg.decoder_hidden, cfg.forecast_window},
                              tg::Activation::relu, rng, "decoder");
    return m;
}

std::vector<TensorPtr> WaveNetModel::parameters() const {
    std::vector<TensorPtr> out;
    encoder.collect_params(out);
    for (const auto& t : temporal) t.collect_params(out);
    for (const auto& s : spatial_diffusion) s.collect_params(out);
    for (const auto& s : spatial_gat) s.collect_params(out);
    for (const auto& s : spatial_mpnn) s.collect_params(out);
    for (const auto& w : skip_w) out.push_back(w);
    for (const auto& b : skip_b) out.push_back(b);
    decoder.collect_params(out);
    if (adjacency.has_adaptive() && config.use_adaptive) {
        out.push_back(adjacency.e1);
        out.push_back(adjacency.e2);
    }
    return out;
}

std::int64_t WaveNetModel::param_count() const {
    std::int64_t n = 0;
    for (const auto& p : parameters()) n += p->numel();
    return n;
}

TensorPtr wavenet_forward(const WaveNetModel& model, const SpatialContext& ctx,
                          const TensorPtr& window) {
    const auto& cfg = model.config;
    if (window->rank() != 4)
        throw ShapeError("wavenet_forward: window must be [B,D,N,T], got " +
                         tg::shape_str(window->shape));
    const i64 B = window->shape[0], D = window->shape[1], N = window->shape[2],
              T = window->shape[3];
    if (D != cfg.in_channels) throw ShapeError("wavenet_forward: channel count mismatch");
    if (T != cfg.obs_window) throw ShapeError("wavenet_forward: observation window mismatch");
    if (N != model.adjacency.n)
        throw ShapeError("wavenet_forward: adjacency is for " + std::to_string(model.adjacency.n) +
                         " nodes, input has " + std::to_string(N));

    TensorPtr x = window;
    if (T < cfg.receptive_field()) x = tg::pad_axis_left(x, 3, cfg.receptive_field() - T);

    // encoder: channel mix along the last axis in [B,N,T,C] layout
    x = tg::permute(x, {0, 2, 3, 1});
    x = tg::mlp_apply(model.encoder, x);
    x = tg::permute(x, {0, 3, 1, 2});  // back to [B,C,N,T]

    TensorPtr adaptive;
    if (cfg.use_adaptive) adaptive = model.adjacency.realize_adaptive();

    std::vector<TensorPtr> skips;  // each [B,N,T_l,skip]
    for (int l = 0; l < cfg.n_layers(); ++l) {
        auto gated = gtcn_forward(x, model.temporal[static_cast<std::size_t>(l)]);  // [B,C,N,T']
        const i64 t_out = gated->shape[3];

        // skip tap off the temporal module output
        auto tap = tg::permute(gated, {0, 2, 3, 1});  // [B,N,T',C]
        skips.push_back(tg::linear(tap, model.skip_w[static_cast<std::size_t>(l)],
                                   model.skip_b[static_cast<std::size_t>(l)]));

        // spatial module works on [B,T',N,C] slices
        auto spatial_in = tg::permute(gated, {0, 3, 2, 1});
        auto bt = tg::reshape(spatial_in, {B * t_out, N, cfg.residual_channels});
        TensorPtr spatial_out;
        switch (cfg.flavor) {
            case Flavor::diffusion:
                spatial_out = nn::diffusion_conv(bt, ctx.diffusion, adaptive,
                                                 model.spatial_diffusion[static_cast<std::size_t>(l)]);
                break;
            case Flavor::gat:
                spatial_out = nn::gat_forward(bt, ctx.edges_with_self,
                                              model.spatial_gat[static_cast<std::size_t>(l)]);
                break;
            case Flavor::mpnn:
                spatial_out = nn::mpnn_forward(bt, ctx.edges_without_self, ctx.mpnn_scalars,
                                               adaptive,
                                               model.spatial_mpnn[static_cast<std::size_t>(l)]);
                break;
        }
        spatial_out = tg::permute(tg::reshape(spatial_out, {B, t_out, N, cfg.residual_channels}),
                                  {0, 3, 2, 1});  // [B,C,N,T']

        // residual: align the block input to the shortened temporal extent
        auto shortcut = tg::slice_axis(x, 3, x->shape[3] - t_out, t_out);
        x = tg::add(spatial_out, shortcut);
    }

    // concatenate skip taps truncated to the final temporal length
    const i64 t_fin = x->shape[3];
    std::vector<TensorPtr> cut;
    for (auto& s : skips)
        cut.push_back(s->shape[2] == t_fin ? s : tg::slice_axis(s, 2, s->shape[2] - t_fin, t_fin));
    auto skip_cat = cut.size() == 1 ? cut[0] : tg::concat(cut, -1);  // [B,N,T_fin,L*skip]

    auto decoded = tg::mlp_apply(model.decoder, tg::relu(skip_cat));  // [B,N,T_fin,L_FW]
    auto last = tg::slice_axis(decoded, 2, t_fin - 1, 1);             // [B,N,1,L_FW]
    return tg::permute(last, {0, 2, 1, 3});                           // [B,1,N,L_FW]
}

}  // namespace gnnflavors::wavenet
