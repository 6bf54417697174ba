#include "gnnflavors/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace gnnflavors::tg {

namespace {

using i64 = std::int64_t;

bool tracking(std::initializer_list<const TensorPtr*> ins) {
    if (!Tape::active()) return false;
    for (auto p : ins)
        if ((*p)->requires_grad) return true;
    return false;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(op) + ": " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn_acc(double* c, const double* a, const double* b, i64 m, i64 k, i64 n) {
    for (i64 i = 0; i < m; ++i) {
        double* crow = c + i * n;
        const double* arow = a + i * k;
        for (i64 l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A^T * B where A is [k,m], B is [k,n]
void mm_tn_acc(double* c, const double* a, const double* b, i64 k, i64 m, i64 n) {
    for (i64 l = 0; l < k; ++l) {
        const double* arow = a + l * m;
        const double* brow = b + l * n;
        for (i64 i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A * B^T where A is [m,k], B is [n,k]
void mm_nt_acc(double* c, const double* a, const double* b, i64 m, i64 k, i64 n) {
    for (i64 i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (i64 j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double dotv = 0.0;
            for (i64 l = 0; l < k; ++l) dotv += arow[l] * brow[l];
            crow[j] += dotv;
        }
    }
}

template <typename Fwd, typename Dfn>
TensorPtr unary_op(const TensorPtr& a, const char* name, Fwd fwd, Dfn dfn) {
    auto out = Tensor::zeros(a->shape);
    const std::size_t n = a->data.size();
    for (std::size_t i = 0; i < n; ++i) out->data[i] = fwd(a->data[i]);
    check_finite(*out, name);
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, dfn]() {
                const std::size_t m = a->data.size();
                for (std::size_t i = 0; i < m; ++i)
                    a->grad[i] += dfn(a->data[i], out->data[i]) * out->grad[i];
            },
            name);
    }
    return out;
}

// Decompose a shape around `axis` into (outer, extent, inner) block sizes.
void axis_blocks(const Shape& shape, int axis, i64& outer, i64& ext, i64& inner) {
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
    ext = shape[static_cast<std::size_t>(axis)];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
        inner *= shape[i];
}

int normalize_axis(const Shape& shape, int axis, const char* op) {
    const int r = static_cast<int>(shape.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError(std::string(op) + ": axis out of range for " + shape_str(shape));
    return axis;
}

}  // namespace

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "add");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] + b->data[i];
    check_finite(*out, "add");
    if (tracking({&a, &b})) {
        Tape::active()->add_record(
            {a, b}, out,
            [a, b, out]() {
                const std::size_t n = out->data.size();
                if (a->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) b->grad[i] += out->grad[i];
            },
            "add");
    }
    return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "sub");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] - b->data[i];
    check_finite(*out, "sub");
    if (tracking({&a, &b})) {
        Tape::active()->add_record(
            {a, b}, out,
            [a, b, out]() {
                const std::size_t n = out->data.size();
                if (a->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) a->grad[i] += out->grad[i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) b->grad[i] -= out->grad[i];
            },
            "sub");
    }
    return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "mul");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] * b->data[i];
    check_finite(*out, "mul");
    if (tracking({&a, &b})) {
        Tape::active()->add_record(
            {a, b}, out,
            [a, b, out]() {
                const std::size_t n = out->data.size();
                if (a->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) a->grad[i] += b->data[i] * out->grad[i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < n; ++i) b->grad[i] += a->data[i] * out->grad[i];
            },
            "mul");
    }
    return out;
}

TensorPtr div(const TensorPtr& a, const TensorPtr& b) {
    require_same_shape(*a, *b, "div");
    auto out = Tensor::zeros(a->shape);
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a->data[i] / b->data[i];
    check_finite(*out, "div");
    if (tracking({&a, &b})) {
        Tape::active()->add_record(
            {a, b}, out,
            [a, b, out]() {
                const std::size_t n = out->data.size();
                for (std::size_t i = 0; i < n; ++i) {
                    const double inv = 1.0 / b->data[i];
                    if (a->requires_grad) a->grad[i] += inv * out->grad[i];
                    if (b->requires_grad) b->grad[i] -= out->data[i] * inv * out->grad[i];
                }
            },
            "div");
    }
    return out;
}

TensorPtr add_scalar(const TensorPtr& a, double s) {
    return unary_op(
        a, "add_scalar", [s](double v) { return v + s; },
        [](double, double) { return 1.0; });
}

TensorPtr mul_scalar(const TensorPtr& a, double s) {
    return unary_op(
        a, "mul_scalar", [s](double v) { return v * s; },
        [s](double, double) { return s; });
}

TensorPtr neg(const TensorPtr& a) { return mul_scalar(a, -1.0); }

TensorPtr relu(const TensorPtr& a) {
    if (KinkGuard::enabled())
        for (double v : a->data) KinkGuard::report(std::abs(v));
    return unary_op(
        a, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

TensorPtr leaky_relu(const TensorPtr& a, double slope) {
    if (KinkGuard::enabled())
        for (double v : a->data) KinkGuard::report(std::abs(v));
    return unary_op(
        a, "leaky_relu", [slope](double v) { return v > 0.0 ? v : slope * v; },
        [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

TensorPtr elu(const TensorPtr& a) {
    return unary_op(
        a, "elu", [](double v) { return v > 0.0 ? v : std::expm1(v); },
        [](double v, double y) { return v > 0.0 ? 1.0 : y + 1.0; });
}

TensorPtr tanh_op(const TensorPtr& a) {
    return unary_op(
        a, "tanh", [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

TensorPtr sigmoid(const TensorPtr& a) {
    return unary_op(
        a, "sigmoid",
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

TensorPtr exp_op(const TensorPtr& a) {
    return unary_op(
        a, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

TensorPtr log_op(const TensorPtr& a) {
    return unary_op(
        a, "log", [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

TensorPtr sqrt_op(const TensorPtr& a) {
    return unary_op(
        a, "sqrt", [](double v) { return std::sqrt(v); },
        [](double, double y) { return 0.5 / y; });
}

TensorPtr abs_op(const TensorPtr& a) {
    if (KinkGuard::enabled())
        for (double v : a->data) KinkGuard::report(std::abs(v));
    return unary_op(
        a, "abs", [](double v) { return std::abs(v); },
        [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

TensorPtr square(const TensorPtr& a) {
    return unary_op(
        a, "square", [](double v) { return v * v; },
        [](double v, double) { return 2.0 * v; });
}

TensorPtr sum_all(const TensorPtr& a) {
    double s = 0.0;
    for (double v : a->data) s += v;
    auto out = Tensor::scalar(s);
    check_finite(*out, "sum_all");
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out]() {
                const double g = out->grad[0];
                for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += g;
            },
            "sum_all");
    }
    return out;
}

TensorPtr mean_all(const TensorPtr& a) {
    if (a->numel() == 0) throw ContractError("mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(a->numel());
    double s = 0.0;
    for (double v : a->data) s += v;
    auto out = Tensor::scalar(s * inv);
    check_finite(*out, "mean_all");
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, inv]() {
                const double g = out->grad[0] * inv;
                for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += g;
            },
            "mean_all");
    }
    return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    if (a->rank() >= 1 && b->rank() == 2) {
        const i64 k = a->shape.back();
        const i64 kb = b->shape[0];
        const i64 n = b->shape[1];
        if (k != kb)
            throw ShapeError("matmul: inner dims " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
        const i64 m = a->numel() / k;
        Shape out_shape(a->shape.begin(), a->shape.end() - 1);
        out_shape.push_back(n);
        auto out = Tensor::zeros(out_shape);
        mm_nn_acc(out->data.data(), a->data.data(), b->data.data(), m, k, n);
        check_finite(*out, "matmul");
        if (tracking({&a, &b})) {
            Tape::active()->add_record(
                {a, b}, out,
                [a, b, out, m, k, n]() {
                    if (a->requires_grad)
                        mm_nt_acc(a->grad.data(), out->grad.data(), b->data.data(), m, n, k);
                    if (b->requires_grad)
                        mm_tn_acc(b->grad.data(), a->data.data(), out->grad.data(), m, k, n);
                },
                "matmul");
        }
        return out;
    }
    if (a->rank() == 2 && b->rank() > 2) {
        const i64 m = a->shape[0];
        const i64 k = a->shape[1];
        const i64 kb = b->shape[static_cast<std::size_t>(b->rank() - 2)];
        const i64 n = b->shape.back();
        if (k != kb)
            throw ShapeError("matmul: inner dims " + shape_str(a->shape) + " x " +
                             shape_str(b->shape));
        const i64 slices = b->numel() / (kb * n);
        Shape out_shape(b->shape.begin(), b->shape.end() - 2);
        out_shape.push_back(m);
        out_shape.push_back(n);
        auto out = Tensor::zeros(out_shape);
        for (i64 s = 0; s < slices; ++s)
            mm_nn_acc(out->data.data() + s * m * n, a->data.data(), b->data.data() + s * k * n,
                      m, k, n);
        check_finite(*out, "matmul");
        if (tracking({&a, &b})) {
            Tape::active()->add_record(
                {a, b}, out,
                [a, b, out, m, k, n, slices]() {
                    for (i64 s = 0; s < slices; ++s) {
                        const double* go = out->grad.data() + s * m * n;
                        if (a->requires_grad)
                            mm_nt_acc(a->grad.data(), go, b->data.data() + s * k * n, m, n, k);
                        if (b->requires_grad)
                            mm_tn_acc(b->grad.data() + s * k * n, a->data.data(), go, m, k, n);
                    }
                },
                "matmul");
        }
        return out;
    }
    throw ShapeError("matmul: unsupported ranks " + shape_str(a->shape) + " x " +
                     shape_str(b->shape));
}

TensorPtr transpose2(const TensorPtr& a) {
    if (a->rank() != 2) throw ShapeError("transpose2: want rank 2, got " + shape_str(a->shape));
    const i64 m = a->shape[0];
    const i64 n = a->shape[1];
    auto out = Tensor::zeros({n, m});
    for (i64 i = 0; i < m; ++i)
        for (i64 j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, m, n]() {
                for (i64 i = 0; i < m; ++i)
                    for (i64 j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
            },
            "transpose2");
    }
    return out;
}

TensorPtr add_rowvec(const TensorPtr& x, const TensorPtr& v) {
    if (v->rank() != 1 || x->rank() < 1 || x->shape.back() != v->shape[0])
        throw ShapeError("add_rowvec: " + shape_str(x->shape) + " + " + shape_str(v->shape));
    const i64 n = v->shape[0];
    const i64 rows = x->numel() / n;
    auto out = Tensor::zeros(x->shape);
    for (i64 r = 0; r < rows; ++r)
        for (i64 j = 0; j < n; ++j) out->data[r * n + j] = x->data[r * n + j] + v->data[j];
    check_finite(*out, "add_rowvec");
    if (tracking({&x, &v})) {
        Tape::active()->add_record(
            {x, v}, out,
            [x, v, out, rows, n]() {
                if (x->requires_grad)
                    for (std::size_t i = 0; i < x->data.size(); ++i) x->grad[i] += out->grad[i];
                if (v->requires_grad)
                    for (i64 r = 0; r < rows; ++r)
                        for (i64 j = 0; j < n; ++j) v->grad[j] += out->grad[r * n + j];
            },
            "add_rowvec");
    }
    return out;
}

TensorPtr linear(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias) {
    auto y = matmul(x, w);
    return bias ? add_rowvec(y, bias) : y;
}

TensorPtr reshape(const TensorPtr& a, Shape shape) {
    if (shape_numel(shape) != a->numel())
        throw ShapeError("reshape: " + shape_str(a->shape) + " -> " + shape_str(shape));
    auto out = std::make_shared<Tensor>();
    out->shape = std::move(shape);
    out->data = a->data;
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out]() {
                for (std::size_t i = 0; i < a->data.size(); ++i) a->grad[i] += out->grad[i];
            },
            "reshape");
    }
    return out;
}

TensorPtr permute(const TensorPtr& a, const std::vector<int>& perm) {
    const int r = a->rank();
    if (static_cast<int>(perm.size()) != r)
        throw ShapeError("permute: perm size != rank of " + shape_str(a->shape));
    std::vector<bool> seen(static_cast<std::size_t>(r), false);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw ShapeError("permute: invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }
    if (r > 4) throw ShapeError("permute: rank > 4 not supported");

    // Work in padded rank-4 coordinates.
    Shape in_shape(4, 1);
    std::vector<int> p4 = {0, 1, 2, 3};
    const int off = 4 - r;
    for (int i = 0; i < r; ++i) {
        in_shape[static_cast<std::size_t>(off + i)] = a->shape[static_cast<std::size_t>(i)];
        p4[static_cast<std::size_t>(off + i)] = off + perm[static_cast<std::size_t>(i)];
    }
    i64 in_strides[4];
    in_strides[3] = 1;
    for (int i = 2; i >= 0; --i)
        in_strides[i] = in_strides[i + 1] * in_shape[static_cast<std::size_t>(i + 1)];

    Shape out_shape(static_cast<std::size_t>(r));
    for (int i = 0; i < r; ++i)
        out_shape[static_cast<std::size_t>(i)] = a->shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
    auto out = Tensor::zeros(out_shape);

    const i64 d0 = in_shape[static_cast<std::size_t>(p4[0])];
    const i64 d1 = in_shape[static_cast<std::size_t>(p4[1])];
    const i64 d2 = in_shape[static_cast<std::size_t>(p4[2])];
    const i64 d3 = in_shape[static_cast<std::size_t>(p4[3])];
    const i64 s0 = in_strides[p4[0]];
    const i64 s1 = in_strides[p4[1]];
    const i64 s2 = in_strides[p4[2]];
    const i64 s3 = in_strides[p4[3]];

    i64 o = 0;
    for (i64 i0 = 0; i0 < d0; ++i0)
        for (i64 i1 = 0; i1 < d1; ++i1)
            for (i64 i2 = 0; i2 < d2; ++i2) {
                const i64 base = i0 * s0 + i1 * s1 + i2 * s2;
                for (i64 i3 = 0; i3 < d3; ++i3) out->data[o++] = a->data[base + i3 * s3];
            }

    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, d0, d1, d2, d3, s0, s1, s2, s3]() {
                i64 oo = 0;
                for (i64 i0 = 0; i0 < d0; ++i0)
                    for (i64 i1 = 0; i1 < d1; ++i1)
                        for (i64 i2 = 0; i2 < d2; ++i2) {
                            const i64 base = i0 * s0 + i1 * s1 + i2 * s2;
                            for (i64 i3 = 0; i3 < d3; ++i3)
                                a->grad[base + i3 * s3] += out->grad[oo++];
                        }
            },
            "permute");
    }
    return out;
}

TensorPtr concat(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const int ax = normalize_axis(parts[0]->shape, axis, "concat");
    Shape out_shape = parts[0]->shape;
    i64 total_ext = 0;
    for (const auto& p : parts) {
        if (p->rank() != parts[0]->rank())
            throw ShapeError("concat: rank mismatch");
        for (int i = 0; i < p->rank(); ++i)
            if (i != ax && p->shape[static_cast<std::size_t>(i)] !=
                               parts[0]->shape[static_cast<std::size_t>(i)])
                throw ShapeError("concat: shape mismatch " + shape_str(p->shape) + " vs " +
                                 shape_str(parts[0]->shape));
        total_ext += p->shape[static_cast<std::size_t>(ax)];
    }
    out_shape[static_cast<std::size_t>(ax)] = total_ext;
    auto out = Tensor::zeros(out_shape);

    i64 outer, oext, inner;
    axis_blocks(out_shape, ax, outer, oext, inner);
    i64 offset = 0;  // running extent offset along the axis
    for (const auto& p : parts) {
        const i64 pext = p->shape[static_cast<std::size_t>(ax)];
        for (i64 u = 0; u < outer; ++u) {
            const double* src = p->data.data() + u * pext * inner;
            double* dst = out->data.data() + (u * oext + offset) * inner;
            std::memcpy(dst, src, static_cast<std::size_t>(pext * inner) * sizeof(double));
        }
        offset += pext;
    }

    bool any_grad = false;
    for (const auto& p : parts) any_grad = any_grad || p->requires_grad;
    if (Tape::active() && any_grad) {
        auto parts_copy = parts;
        Tape::active()->add_record(
            std::vector<TensorPtr>(parts.begin(), parts.end()), out,
            [parts_copy, out, outer, oext, inner]() {
                i64 off = 0;
                for (const auto& p : parts_copy) {
                    const i64 ext_p = p->numel() / (outer * inner);
                    if (p->requires_grad) {
                        for (i64 u = 0; u < outer; ++u) {
                            const double* g = out->grad.data() + (u * oext + off) * inner;
                            double* dst = p->grad.data() + u * ext_p * inner;
                            for (i64 t = 0; t < ext_p * inner; ++t) dst[t] += g[t];
                        }
                    }
                    off += ext_p;
                }
            },
            "concat");
    }
    return out;
}

TensorPtr slice_axis(const TensorPtr& a, int axis, std::int64_t start, std::int64_t len) {
    const int ax = normalize_axis(a->shape, axis, "slice_axis");
    const i64 ext = a->shape[static_cast<std::size_t>(ax)];
    if (start < 0 || len < 0 || start + len > ext)
        throw ShapeError("slice_axis: range [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") out of extent " + std::to_string(ext));
    Shape out_shape = a->shape;
    out_shape[static_cast<std::size_t>(ax)] = len;
    auto out = Tensor::zeros(out_shape);
    i64 outer, e, inner;
    axis_blocks(a->shape, ax, outer, e, inner);
    for (i64 u = 0; u < outer; ++u) {
        const double* src = a->data.data() + (u * ext + start) * inner;
        double* dst = out->data.data() + u * len * inner;
        std::memcpy(dst, src, static_cast<std::size_t>(len * inner) * sizeof(double));
    }
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, outer, inner, ext, start, len]() {
                for (i64 u = 0; u < outer; ++u) {
                    double* dst = a->grad.data() + (u * ext + start) * inner;
                    const double* g = out->grad.data() + u * len * inner;
                    for (i64 t = 0; t < len * inner; ++t) dst[t] += g[t];
                }
            },
            "slice_axis");
    }
    return out;
}

TensorPtr pad_axis_left(const TensorPtr& a, int axis, std::int64_t n_pad) {
    const int ax = normalize_axis(a->shape, axis, "pad_axis_left");
    if (n_pad < 0) throw ShapeError("pad_axis_left: negative pad");
    const i64 ext = a->shape[static_cast<std::size_t>(ax)];
    Shape out_shape = a->shape;
    out_shape[static_cast<std::size_t>(ax)] = ext + n_pad;
    auto out = Tensor::zeros(out_shape);
    i64 outer, e, inner;
    axis_blocks(a->shape, ax, outer, e, inner);
    for (i64 u = 0; u < outer; ++u) {
        const double* src = a->data.data() + u * ext * inner;
        double* dst = out->data.data() + (u * (ext + n_pad) + n_pad) * inner;
        std::memcpy(dst, src, static_cast<std::size_t>(ext * inner) * sizeof(double));
    }
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, outer, inner, ext, n_pad]() {
                for (i64 u = 0; u < outer; ++u) {
                    double* dst = a->grad.data() + u * ext * inner;
                    const double* g = out->grad.data() + (u * (ext + n_pad) + n_pad) * inner;
                    for (i64 t = 0; t < ext * inner; ++t) dst[t] += g[t];
                }
            },
            "pad_axis_left");
    }
    return out;
}

TensorPtr softmax_last(const TensorPtr& a) {
    if (a->rank() < 1) throw ShapeError("softmax_last: scalar input");
    const i64 n = a->shape.back();
    const i64 rows = a->numel() / n;
    auto out = Tensor::zeros(a->shape);
    for (i64 r = 0; r < rows; ++r) {
        const double* x = a->data.data() + r * n;
        double* y = out->data.data() + r * n;
        double mx = x[0];
        for (i64 j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (i64 j = 0; j < n; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        const double inv = 1.0 / denom;
        for (i64 j = 0; j < n; ++j) y[j] *= inv;
    }
    check_finite(*out, "softmax_last");
    if (tracking({&a})) {
        Tape::active()->add_record(
            {a}, out,
            [a, out, rows, n]() {
                for (i64 r = 0; r < rows; ++r) {
                    const double* y = out->data.data() + r * n;
                    const double* gy = out->grad.data() + r * n;
                    double* gx = a->grad.data() + r * n;
                    double dotv = 0.0;
                    for (i64 j = 0; j < n; ++j) dotv += y[j] * gy[j];
                    for (i64 j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - dotv);
                }
            },
            "softmax_last");
    }
    return out;
}

namespace {
// Shared row-axis decomposition for gather/segment ops: x is [..., R, d].
void row_blocks(const Tensor& x, const char* op, i64& slices, i64& rows, i64& width) {
    if (x.rank() < 2) throw ShapeError(std::string(op) + ": want rank >= 2, got " + shape_str(x.shape));
    width = x.shape.back();
    rows = x.shape[static_cast<std::size_t>(x.rank() - 2)];
    slices = x.numel() / (rows * width);
}
}  // namespace

TensorPtr gather_rows(const TensorPtr& x, const std::vector<std::int64_t>& idx) {
    i64 slices, rows, width;
    row_blocks(*x, "gather_rows", slices, rows, width);
    for (auto i : idx)
        if (i < 0 || i >= rows)
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " +
                             std::to_string(rows));
    const i64 e = static_cast<i64>(idx.size());
    Shape out_shape = x->shape;
    out_shape[static_cast<std::size_t>(x->rank() - 2)] = e;
    auto out = Tensor::zeros(out_shape);
    for (i64 s = 0; s < slices; ++s) {
        const double* src = x->data.data() + s * rows * width;
        double* dst = out->data.data() + s * e * width;
        for (i64 r = 0; r < e; ++r)
            std::memcpy(dst + r * width, src + idx[static_cast<std::size_t>(r)] * width,
                        static_cast<std::size_t>(width) * sizeof(double));
    }
    if (tracking({&x})) {
        auto idx_copy = idx;
        Tape::active()->add_record(
            {x}, out,
            [x, out, idx_copy, slices, rows, width]() {
                const i64 e = static_cast<i64>(idx_copy.size());
                for (i64 s = 0; s < slices; ++s) {
                    double* gx = x->grad.data() + s * rows * width;
                    const double* go = out->grad.data() + s * e * width;
                    for (i64 r = 0; r < e; ++r) {
                        double* dst = gx + idx_copy[static_cast<std::size_t>(r)] * width;
                        const double* g = go + r * width;
                        for (i64 j = 0; j < width; ++j) dst[j] += g[j];
                    }
                }
            },
            "gather_rows");
    }
    return out;
}

TensorPtr segment_sum(const TensorPtr& x, const std::vector<std::int64_t>& seg,
                      std::int64_t n_segments) {
    i64 slices, rows, width;
    row_blocks(*x, "segment_sum", slices, rows, width);
    if (static_cast<i64>(seg.size()) != rows)
        throw ShapeError("segment_sum: " + std::to_string(seg.size()) + " segment ids for " +
                         std::to_string(rows) + " rows");
    for (auto s : seg)
        if (s < 0 || s >= n_segments)
            throw ShapeError("segment_sum: segment id " + std::to_string(s) + " out of " +
                             std::to_string(n_segments));
    Shape out_shape = x->shape;
    out_shape[static_cast<std::size_t>(x->rank() - 2)] = n_segments;
    auto out = Tensor::zeros(out_shape);
    for (i64 s = 0; s < slices; ++s) {
        const double* src = x->data.data() + s * rows * width;
        double* dst = out->data.data() + s * n_segments * width;
        for (i64 r = 0; r < rows; ++r) {
            double* drow = dst + seg[static_cast<std::size_t>(r)] * width;
            const double* srow = src + r * width;
            for (i64 j = 0; j < width; ++j) drow[j] += srow[j];
        }
    }
    check_finite(*out, "segment_sum");
    if (tracking({&x})) {
        auto seg_copy = seg;
        Tape::active()->add_record(
            {x}, out,
            [x, out, seg_copy, slices, rows, width, n_segments]() {
                for (i64 s = 0; s < slices; ++s) {
                    double* gx = x->grad.data() + s * rows * width;
                    const double* go = out->grad.data() + s * n_segments * width;
                    for (i64 r = 0; r < rows; ++r) {
                        const double* g = go + seg_copy[static_cast<std::size_t>(r)] * width;
                        double* dst = gx + r * width;
                        for (i64 j = 0; j < width; ++j) dst[j] += g[j];
                    }
                }
            },
            "segment_sum");
    }
    return out;
}

TensorPtr segment_softmax(const TensorPtr& logits, const std::vector<std::int64_t>& seg,
                          std::int64_t n_segments) {
    if (logits->rank() < 1) throw ShapeError("segment_softmax: scalar input");
    const i64 e = logits->shape.back();
    if (static_cast<i64>(seg.size()) != e)
        throw ShapeError("segment_softmax: segment ids vs last axis");
    const i64 slices = logits->numel() / e;

    // Group positions per segment once.
    std::vector<std::vector<i64>> groups(static_cast<std::size_t>(n_segments));
    for (i64 i = 0; i < e; ++i) {
        const auto s = seg[static_cast<std::size_t>(i)];
        if (s < 0 || s >= n_segments)
            throw ShapeError("segment_softmax: segment id out of range");
        groups[static_cast<std::size_t>(s)].push_back(i);
    }

    auto out = Tensor::zeros(logits->shape);
    for (i64 sl = 0; sl < slices; ++sl) {
        const double* x = logits->data.data() + sl * e;
        double* y = out->data.data() + sl * e;
        for (const auto& g : groups) {
            if (g.empty()) continue;
            double mx = x[g[0]];
            for (auto i : g) mx = std::max(mx, x[i]);
            double denom = 0.0;
            for (auto i : g) {
                y[i] = std::exp(x[i] - mx);
                denom += y[i];
            }
            const double inv = 1.0 / denom;
            for (auto i : g) y[i] *= inv;
        }
    }
    check_finite(*out, "segment_softmax");
    if (tracking({&logits})) {
        Tape::active()->add_record(
            {logits}, out,
            [logits, out, groups, slices, e]() {
                for (i64 sl = 0; sl < slices; ++sl) {
                    const double* y = out->data.data() + sl * e;
                    const double* gy = out->grad.data() + sl * e;
                    double* gx = logits->grad.data() + sl * e;
                    for (const auto& g : groups) {
                        if (g.empty()) continue;
                        double dotv = 0.0;
                        for (auto i : g) dotv += y[i] * gy[i];
                        for (auto i : g) gx[i] += y[i] * (gy[i] - dotv);
                    }
                }
            },
            "segment_softmax");
    }
    return out;
}

TensorPtr row_scale(const TensorPtr& x, const TensorPtr& s) {
    i64 slices, rows, width;
    row_blocks(*x, "row_scale", slices, rows, width);
    Shape want(x->shape.begin(), x->shape.end() - 1);
    if (s->shape != want)
        throw ShapeError("row_scale: scale shape " + shape_str(s->shape) + " vs rows of " +
                         shape_str(x->shape));
    auto out = Tensor::zeros(x->shape);
    for (i64 sl = 0; sl < slices; ++sl)
        for (i64 r = 0; r < rows; ++r) {
            const double sv = s->data[static_cast<std::size_t>(sl * rows + r)];
            const double* xr = x->data.data() + (sl * rows + r) * width;
            double* yr = out->data.data() + (sl * rows + r) * width;
            for (i64 j = 0; j < width; ++j) yr[j] = xr[j] * sv;
        }
    check_finite(*out, "row_scale");
    if (tracking({&x, &s})) {
        Tape::active()->add_record(
            {x, s}, out,
            [x, s, out, slices, rows, width]() {
                for (i64 sl = 0; sl < slices; ++sl)
                    for (i64 r = 0; r < rows; ++r) {
                        const i64 row = sl * rows + r;
                        const double sv = s->data[static_cast<std::size_t>(row)];
                        const double* go = out->grad.data() + row * width;
                        if (x->requires_grad) {
                            double* gx = x->grad.data() + row * width;
                            for (i64 j = 0; j < width; ++j) gx[j] += go[j] * sv;
                        }
                        if (s->requires_grad) {
                            const double* xr = x->data.data() + row * width;
                            double acc = 0.0;
                            for (i64 j = 0; j < width; ++j) acc += go[j] * xr[j];
                            s->grad[static_cast<std::size_t>(row)] += acc;
                        }
                    }
            },
            "row_scale");
    }
    return out;
}

TensorPtr tile_slices(const TensorPtr& x, std::int64_t n_slices) {
    if (n_slices < 1) throw ShapeError("tile_slices: n_slices < 1");
    Shape out_shape;
    out_shape.push_back(n_slices);
    for (auto e : x->shape) out_shape.push_back(e);
    auto out = Tensor::zeros(out_shape);
    const i64 block = x->numel();
    for (i64 s = 0; s < n_slices; ++s)
        std::memcpy(out->data.data() + s * block, x->data.data(),
                    static_cast<std::size_t>(block) * sizeof(double));
    if (tracking({&x})) {
        Tape::active()->add_record(
            {x}, out,
            [x, out, n_slices, block]() {
                for (i64 s = 0; s < n_slices; ++s) {
                    const double* g = out->grad.data() + s * block;
                    for (i64 i = 0; i < block; ++i) x->grad[static_cast<std::size_t>(i)] += g[i];
                }
            },
            "tile_slices");
    }
    return out;
}

TensorPtr conv_time(const TensorPtr& x, const TensorPtr& w, const TensorPtr& bias,
                    std::int64_t dilation) {
    if (x->rank() != 4) throw ShapeError("conv_time: input must be [B,C,N,T], got " + shape_str(x->shape));
    if (w->rank() != 3) throw ShapeError("conv_time: weight must be [Co,C,K], got " + shape_str(w->shape));
    if (dilation < 1) throw ShapeError("conv_time: dilation < 1");
    const i64 B = x->shape[0], C = x->shape[1], N = x->shape[2], T = x->shape[3];
    const i64 Co = w->shape[0], Cw = w->shape[1], K = w->shape[2];
    if (C != Cw) throw ShapeError("conv_time: channel mismatch");
    if (K < 1) throw ShapeError("conv_time: kernel < 1");
    if (bias && (bias->rank() != 1 || bias->shape[0] != Co))
        throw ShapeError("conv_time: bias shape");
    const i64 To = T - (K - 1) * dilation;
    if (To < 1)
        throw ShapeError("conv_time: input length " + std::to_string(T) +
                         " shorter than receptive extent " + std::to_string((K - 1) * dilation + 1));

    auto out = Tensor::zeros({B, Co, N, To});
    for (i64 b = 0; b < B; ++b)
        for (i64 n = 0; n < N; ++n) {
            const double* xs = x->data.data() + ((b * C) * N + n) * T;
            double* ys = out->data.data() + ((b * Co) * N + n) * To;
            for (i64 o = 0; o < Co; ++o) {
                double* yrow = ys + o * N * To;
                if (bias) {
                    const double bv = bias->data[static_cast<std::size_t>(o)];
                    for (i64 t = 0; t < To; ++t) yrow[t] = bv;
                }
                for (i64 c = 0; c < C; ++c) {
                    const double* xrow = xs + c * N * T;
                    for (i64 kk = 0; kk < K; ++kk) {
                        const double wv = w->data[static_cast<std::size_t>((o * C + c) * K + kk)];
                        const double* xoff = xrow + kk * dilation;
                        for (i64 t = 0; t < To; ++t) yrow[t] += wv * xoff[t];
                    }
                }
            }
        }
    check_finite(*out, "conv_time");

    const bool track = bias ? tracking({&x, &w, &bias}) : tracking({&x, &w});
    if (track) {
        std::vector<TensorPtr> ins = {x, w};
        if (bias) ins.push_back(bias);
        Tape::active()->add_record(
            std::move(ins), out,
            [x, w, bias, out, B, C, N, T, Co, K, To, dilation]() {
                for (i64 b = 0; b < B; ++b)
                    for (i64 n = 0; n < N; ++n) {
                        const double* xs = x->data.data() + ((b * C) * N + n) * T;
                        double* gxs = x->requires_grad ? x->grad.data() + ((b * C) * N + n) * T : nullptr;
                        const double* gys = out->grad.data() + ((b * Co) * N + n) * To;
                        for (i64 o = 0; o < Co; ++o) {
                            const double* gyrow = gys + o * N * To;
                            if (bias && bias->requires_grad) {
                                double acc = 0.0;
                                for (i64 t = 0; t < To; ++t) acc += gyrow[t];
                                bias->grad[static_cast<std::size_t>(o)] += acc;
                            }
                            for (i64 c = 0; c < C; ++c) {
                                for (i64 kk = 0; kk < K; ++kk) {
                                    const std::size_t wi = static_cast<std::size_t>((o * C + c) * K + kk);
                                    const i64 shift = kk * dilation;
                                    if (x->requires_grad) {
                                        const double wv = w->data[wi];
                                        double* gxoff = gxs + c * N * T + shift;
                                        for (i64 t = 0; t < To; ++t) gxoff[t] += wv * gyrow[t];
                                    }
                                    if (w->requires_grad) {
                                        const double* xoff = xs + c * N * T + shift;
                                        double acc = 0.0;
                                        for (i64 t = 0; t < To; ++t) acc += xoff[t] * gyrow[t];
                                        w->grad[wi] += acc;
                                    }
                                }
                            }
                        }
                    }
            },
            "conv_time");
    }
    return out;
}

}  // namespace gnnflavors::tg
