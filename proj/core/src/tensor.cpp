#include "gnnflavors/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gnnflavors::tg {

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto e : shape) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

TensorPtr Tensor::zeros(Shape shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    const auto n = shape_numel(shape);
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(n), 0.0);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    return t;
}

TensorPtr Tensor::full(Shape shape, double value, bool requires_grad) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t->data.begin(), t->data.end(), value);
    check_finite(*t, "full");
    return t;
}

TensorPtr Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    const auto n = shape_numel(shape);
    if (n != static_cast<std::int64_t>(values.size()))
        throw ShapeError("from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->data = std::move(values);
    t->requires_grad = requires_grad;
    if (requires_grad) t->ensure_grad();
    check_finite(*t, "from_values");
    return t;
}

TensorPtr Tensor::scalar(double value, bool requires_grad) {
    return from_values({}, {value}, requires_grad);
}

double Tensor::value() const {
    if (numel() != 1) throw ContractError("value() on tensor of shape " + shape_str(shape));
    return data[0];
}

void Tensor::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Tensor::zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
}

void check_finite(const Tensor& t, const char* where) {
    for (double v : t.data) {
        if (!std::isfinite(v))
            throw NumericError(std::string(where) + ": non-finite value in tensor " +
                               (t.name.empty() ? shape_str(t.shape) : t.name));
    }
}

namespace {
thread_local Tape* g_active_tape = nullptr;

struct KinkState {
    bool active = false;
    double tolerance = 1e-3;
    bool tripped = false;
};
thread_local KinkState g_kink;
}  // namespace

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope() : tape_(std::make_unique<Tape>()), prev_(g_active_tape) {
    g_active_tape = tape_.get();
}

Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape::NoGrad::NoGrad() : prev_(g_active_tape) { g_active_tape = nullptr; }

Tape::NoGrad::~NoGrad() { g_active_tape = prev_; }

std::int64_t Tape::add_record(std::vector<TensorPtr> inputs, TensorPtr output,
                              std::function<void()> backward, const char* op) {
    output->requires_grad = true;
    output->ensure_grad();
    for (auto& in : inputs) in->ensure_grad();
    output->tape_index = static_cast<std::int64_t>(records_.size());
    records_.push_back(Record{std::move(inputs), std::move(output), std::move(backward), op});
    return static_cast<std::int64_t>(records_.size()) - 1;
}

void Tape::backward(const TensorPtr& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (loss->numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    const auto idx = loss->tape_index;
    if (idx < 0 || idx >= static_cast<std::int64_t>(records_.size()) ||
        records_[static_cast<std::size_t>(idx)].output.get() != loss.get())
        throw ContractError("backward: loss was not produced on this tape");

    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (std::size_t k = records_.size(); k-- > 0;) {
        records_[k].backward();
    }
    reset();
}

void Tape::reset() {
    for (auto& r : records_) r.output->tape_index = -1;
    records_.clear();
}

KinkGuard::KinkGuard(double tolerance)
    : prev_active_(g_kink.active), prev_tolerance_(g_kink.tolerance), prev_tripped_(g_kink.tripped) {
    g_kink.active = true;
    g_kink.tolerance = tolerance;
    g_kink.tripped = false;
}

KinkGuard::~KinkGuard() {
    g_kink.active = prev_active_;
    g_kink.tolerance = prev_tolerance_;
    g_kink.tripped = prev_tripped_;
}

bool KinkGuard::tripped() const { return g_kink.tripped; }

bool KinkGuard::enabled() { return g_kink.active; }

double KinkGuard::tolerance() { return g_kink.tolerance; }

void KinkGuard::report(double distance_to_kink) {
    if (g_kink.active && distance_to_kink < g_kink.tolerance) g_kink.tripped = true;
}

}  // namespace gnnflavors::tg
