#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "gnnflavors/error.hpp"

namespace gnnflavors::tg {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major 64-bit real tensor. Values written by an operation are
// immutable afterwards; gradients accumulate into `grad` during backward.
class Tensor {
public:
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data once allocated, else empty
    std::string name;

    // Index of the tape record that produced this tensor; -1 for leaves.
    std::int64_t tape_index = -1;

    static TensorPtr zeros(Shape shape, bool requires_grad = false);
    static TensorPtr full(Shape shape, double value, bool requires_grad = false);
    static TensorPtr from_values(Shape shape, std::vector<double> values,
                                 bool requires_grad = false);
    static TensorPtr scalar(double value, bool requires_grad = false);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    // Scalar accessor; ContractError when numel != 1.
    double value() const;

    void ensure_grad();
    void zero_grad();
};

// Throws NumericError if any entry is NaN or infinite.
void check_finite(const Tensor& t, const char* where);

// Ordered record of executed differentiable operations (define-by-run).
// Records are appended in execution order, so operands of record k were
// produced by records < k or are leaves; backward walks the records once,
// in reverse.
class Tape {
public:
    struct Record {
        std::vector<TensorPtr> inputs;
        TensorPtr output;
        std::function<void()> backward;
        const char* op;
    };

    std::int64_t add_record(std::vector<TensorPtr> inputs, TensorPtr output,
                            std::function<void()> backward, const char* op);

    // Seeds d(loss)/d(loss) = 1 and propagates to every leaf that was used.
    // The tape is reset afterwards.
    void backward(const TensorPtr& loss);

    void reset();
    std::size_t size() const { return records_.size(); }

    static Tape* active();

    // RAII activation of a fresh tape for one forward/backward cycle.
    class Scope {
    public:
        Scope();
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;
        Tape& tape() { return *tape_; }

    private:
        std::unique_ptr<Tape> tape_;
        Tape* prev_;
    };

    // RAII inference mode: no recording while alive.
    class NoGrad {
    public:
        NoGrad();
        ~NoGrad();
        NoGrad(const NoGrad&) = delete;
        NoGrad& operator=(const NoGrad&) = delete;

    private:
        Tape* prev_;
    };

private:
    std::vector<Record> records_;
};

// While a KinkGuard is alive, kinked activations (relu, leaky_relu, abs)
// record whether any input coordinate lies within `tolerance` of the kink.
// Gradcheck uses this to reject inputs where a central difference would
// straddle the non-differentiable point.
class KinkGuard {
public:
    explicit KinkGuard(double tolerance = 1e-3);
    ~KinkGuard();
    KinkGuard(const KinkGuard&) = delete;
    KinkGuard& operator=(const KinkGuard&) = delete;

    bool tripped() const;

    static bool enabled();
    static double tolerance();
    static void report(double distance_to_kink);

private:
    bool prev_active_;
    double prev_tolerance_;
    bool prev_tripped_;
};

}  // namespace gnnflavors::tg
