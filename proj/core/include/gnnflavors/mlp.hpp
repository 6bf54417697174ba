#pragma once

#include <string>
#include <vector>

#include "gnnflavors/ops.hpp"
#include "gnnflavors/rng.hpp"
#include "gnnflavors/tensor.hpp"

namespace gnnflavors::tg {

enum class Activation { identity, relu, leaky_relu, tanh, elu };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

// Affine stack applied along the last axis; the activation acts on hidden
// layers only, the final layer stays affine.
struct Mlp {
    struct Layer {
        TensorPtr weight;  // [d_in, d_out]
        TensorPtr bias;    // [d_out]
    };
    std::vector<Layer> layers;
    Activation hidden_activation = Activation::relu;

    // widths = {d_in, h1, ..., d_out}; weights are initialized uniformly in
    // [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    static Mlp make(const std::vector<std::int64_t>& widths, Activation act, Rng& rng,
                    const std::string& name_prefix);

    std::int64_t in_width() const;
    std::int64_t out_width() const;
    std::int64_t param_count() const;
    void collect_params(std::vector<TensorPtr>& out) const;
};

// Applies the stack to x[..., d_in]; batch axes pass through untouched.
TensorPtr mlp_apply(const Mlp& p, const TensorPtr& x);

TensorPtr apply_activation(Activation a, const TensorPtr& x);

// Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization for a single matrix.
TensorPtr init_weight(std::int64_t fan_in, std::int64_t fan_out, Rng& rng,
                      const std::string& name);
TensorPtr init_bias(std::int64_t fan_in, std::int64_t fan_out, Rng& rng, const std::string& name);

}  // namespace gnnflavors::tg
