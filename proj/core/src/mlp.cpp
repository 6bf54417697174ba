#include "gnnflavors/mlp.hpp"

#include <cmath>

namespace gnnflavors::tg {

Activation activation_from_string(const std::string& s) {
    if (s == "identity" || s == "linear") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "leaky_relu") return Activation::leaky_relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "elu") return Activation::elu;
    throw ContractError("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::tanh: return "tanh";
        case Activation::elu: return "elu";
    }
    return "?";
}

TensorPtr apply_activation(Activation a, const TensorPtr& x) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::relu: return relu(x);
        case Activation::leaky_relu: return leaky_relu(x, 0.01);
        case Activation::tanh: return tanh_op(x);
        case Activation::elu: return elu(x);
    }
    return x;
}

TensorPtr init_weight(std::int64_t fan_in, std::int64_t fan_out, Rng& rng,
                      const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    auto w = Tensor::zeros({fan_in, fan_out}, true);
    for (auto& v : w->data) v = rng.uniform(-bound, bound);
    w->name = name;
    return w;
}

TensorPtr init_bias(std::int64_t fan_in, std::int64_t fan_out, Rng& rng, const std::string& name) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    auto b = Tensor::zeros({fan_out}, true);
    for (auto& v : b->data) v = rng.uniform(-bound, bound);
    b->name = name;
    return b;
}

Mlp Mlp::make(const std::vector<std::int64_t>& widths, Activation act, Rng& rng,
              const std::string& name_prefix) {
    if (widths.size() < 2) throw ContractError("Mlp::make: need at least [d_in, d_out]");
    Mlp mlp;
    mlp.hidden_activation = act;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const auto idx = std::to_string(i);
        mlp.layers.push_back(
            Layer{init_weight(widths[i], widths[i + 1], rng, name_prefix + ".w" + idx),
                  init_bias(widths[i], widths[i + 1], rng, name_prefix + ".b" + idx)});
    }
    return mlp;
}

std::int64_t Mlp::in_width() const { return layers.front().weight->shape[0]; }

std::int64_t Mlp::out_width() const { return layers.back().weight->shape[1]; }

std::int64_t Mlp::param_count() const {
    std::int64_t n = 0;
    for (const auto& l : layers) n += l.weight->numel() + l.bias->numel();
    return n;
}

void Mlp::collect_params(std::vector<TensorPtr>& out) const {
    for (const auto& l : layers) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
}

TensorPtr mlp_apply(const Mlp& p, const TensorPtr& x) {
    if (p.layers.empty()) throw ContractError("mlp_apply: empty Mlp");
    if (x->rank() < 1 || x->shape.back() != p.in_width())
        throw ShapeError("mlp_apply: input width " +
                         std::to_string(x->rank() ? x->shape.back() : 0) + " vs expected " +
                         std::to_string(p.in_width()));
    TensorPtr h = x;
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        h = linear(h, p.layers[i].weight, p.layers[i].bias);
        if (i + 1 < p.layers.size()) h = apply_activation(p.hidden_activation, h);
    }
    return h;
}

}  // namespace gnnflavors::tg
