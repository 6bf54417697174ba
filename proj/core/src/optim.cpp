#include "gnnflavors/optim.hpp"

#include <cmath>

namespace gnnflavors::tg {

Adam::Adam(std::vector<TensorPtr> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (auto& p : params_) {
        if (!p) throw ContractError("Adam: null parameter");
        p->ensure_grad();
        m_.emplace_back(p->data.size(), 0.0);
        v_.emplace_back(p->data.size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = *params_[i];
        if (p.grad.size() != p.data.size())
            throw ContractError("Adam::step: grad/param shape mismatch for '" + p.name + "'");
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < p.data.size(); ++j) {
            const double g = p.grad[j];
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g;
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.data[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

}  // namespace gnnflavors::tg
