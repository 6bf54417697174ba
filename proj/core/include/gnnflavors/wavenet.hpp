#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gnnflavors/adjacency.hpp"
#include "gnnflavors/layers.hpp"
#include "gnnflavors/mlp.hpp"
#include "gnnflavors/tensor.hpp"

// Graph WaveNet-style forecasting backbone: MLP encoder, alternating gated
// temporal convolution and a pluggable spatial layer with residual
// connections, skip taps concatenated into an MLP decoder that emits the
// whole forecast window in one shot.

namespace gnnflavors::wavenet {

enum class Flavor { diffusion, gat, mpnn };

Flavor flavor_from_string(const std::string& s);
std::string to_string(Flavor f);

// One gated temporal convolution block: tanh(TCN_f(x)) combined with
// sigmoid(TCN_g(x)). The two convolutions never share parameters. The default
// combination is the elementwise product; `sum_combine` switches to a sum for
// fidelity experiments.
struct GtcnParams {
    tg::TensorPtr w_filter;  // [C_out, C_in, K]
    tg::TensorPtr b_filter;  // [C_out]
    tg::TensorPtr w_gate;
    tg::TensorPtr b_gate;
    int kernel = 2;
    int dilation = 1;
    bool sum_combine = false;

    static GtcnParams make(std::int64_t c_in, std::int64_t c_out, int kernel, int dilation,
                           bool sum_combine, Rng& rng, const std::string& prefix);
    void collect_params(std::vector<tg::TensorPtr>& out) const;
    std::int64_t param_count() const;
};

// x: [B, C, N, T] -> [B, C_out, N, T - (kernel-1)*dilation]
tg::TensorPtr gtcn_forward(const tg::TensorPtr& x, const GtcnParams& p);

struct WaveNetConfig {
    Flavor flavor = Flavor::mpnn;
    int in_channels = 1;   // D
    int residual_channels = 16;
    int skip_channels = 32;
    int encoder_hidden = 0;  // 0: linear encoder
    int decoder_hidden = 128;
    std::vector<int> dilations = {1, 2, 1, 2, 1, 2, 1, 2};
    int kernel = 2;
    int obs_window = 12;       // L_OW
    int forecast_window = 12;  // L_FW
    bool gate_sum = false;

    // spatial module settings
    int diffusion_hops = 2;
    bool use_adaptive = true;
    int adaptive_width = 10;  // c
    int gat_heads = 4;
    int mpnn_width = 32;

    int n_layers() const { return static_cast<int>(dilations.size()); }
    // 1 + sum of (kernel-1)*dilation over layers
    int receptive_field() const;
    void validate() const;
};

void save_wavenet_config(const std::string& path, const WaveNetConfig& c);
WaveNetConfig load_wavenet_config(const std::string& path);

// Constant per-graph structures shared by every forward pass.
struct SpatialContext {
    nn::DiffusionContext diffusion;
    nn::EdgeList edges_with_self;     // GAT neighborhoods
    nn::EdgeList edges_without_self;  // MPNN neighborhoods
    tg::TensorPtr mpnn_scalars;       // [E, 2]: P_f and P_b entries per pair

    static SpatialContext build(const graph::Graph& g, const graph::AdjacencySet& adj,
                                const WaveNetConfig& cfg);
};

struct WaveNetModel {
    WaveNetConfig config;
    graph::AdjacencySet adjacency;  // holds learnable E1/E2 when use_adaptive
    tg::Mlp encoder;
    std::vector<GtcnParams> temporal;
    std::vector<nn::DiffusionConvParams> spatial_diffusion;
    std::vector<nn::GatParams> spatial_gat;
    std::vector<nn::MpnnParams> spatial_mpnn;
    std::vector<tg::TensorPtr> skip_w;  // [residual, skip]
    std::vector<tg::TensorPtr> skip_b;  // [skip]
    tg::Mlp decoder;

    static WaveNetModel make(const WaveNetConfig& cfg, const graph::AdjacencySet& adj, Rng& rng);
    std::vector<tg::TensorPtr> parameters() const;
    std::int64_t param_count() const;
};

// window: [B, D, N, L_OW] -> [B, 1, N, L_FW]. The input is left-padded with
// zeros along time up to the receptive field, matching the usual handling
// when the receptive field exceeds the observation window by one step.
tg::TensorPtr wavenet_forward(const WaveNetModel& model, const SpatialContext& ctx,
                              const tg::TensorPtr& window);

}  // namespace gnnflavors::wavenet
