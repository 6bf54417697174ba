#include "gnnflavors/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace gnnflavors::tg {

double gradcheck_leaves(const std::function<TensorPtr()>& loss_fn,
                        const std::vector<TensorPtr>& leaves, double eps) {
    if (!(eps > 0.0)) throw ContractError("gradcheck: eps must be positive");
    for (const auto& l : leaves) {
        if (!l) throw ContractError("gradcheck: null leaf");
        l->requires_grad = true;
        l->ensure_grad();
        l->zero_grad();
    }

    // Analytic pass (tape on, kink guard armed).
    {
        Tape::Scope scope;
        KinkGuard guard(1e-3);
        auto loss = loss_fn();
        if (guard.tripped())
            throw PreconditionError(
                "gradcheck: input within 1e-3 of an activation kink; resample");
        if (loss->numel() != 1)
            throw ContractError("gradcheck: loss must be scalar");
        scope.tape().backward(loss);
    }

    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const auto& l : leaves) analytic.push_back(l->grad);

    // Numeric pass (no tape).
    double max_rel = 0.0;
    {
        Tape::NoGrad off;
        for (std::size_t li = 0; li < leaves.size(); ++li) {
            auto& leaf = *leaves[li];
            for (std::size_t j = 0; j < leaf.data.size(); ++j) {
                const double saved = leaf.data[j];
                leaf.data[j] = saved + eps;
                const double f_plus = loss_fn()->value();
                leaf.data[j] = saved - eps;
                const double f_minus = loss_fn()->value();
                leaf.data[j] = saved;
                if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
                    throw NumericError("gradcheck: non-finite loss during perturbation");
                const double numeric = (f_plus - f_minus) / (2.0 * eps);
                const double a = analytic[li][j];
                const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
                max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
            }
        }
    }
    return max_rel;
}

double gradcheck(const std::function<TensorPtr(const TensorPtr&)>& f, const TensorPtr& x,
                 double eps) {
    return gradcheck_leaves([&]() { return f(x); }, {x}, eps);
}

}  // namespace gnnflavors::tg
