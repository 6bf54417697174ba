#pragma once

#include <cstdint>
#include <vector>

#include "gnnflavors/tensor.hpp"

namespace gnnflavors::tg {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam. Moment buffers are owned here and shaped after the
// parameters at construction; the step counter t increments by exactly one
// per step().
class Adam {
public:
    Adam(std::vector<TensorPtr> params, AdamConfig cfg);

    // Applies one update using each parameter's grad buffer.
    void step();
    void zero_grad();

    std::int64_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<TensorPtr> params_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace gnnflavors::tg
