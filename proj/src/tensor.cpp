#include "classinv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#ifdef CLASSINV_USE_CBLAS
#include <cblas.h>
#endif

namespace classinv {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_product(shape_) != data_.size()) {
        throw std::invalid_argument("Tensor: shape " + shape_str(shape_) + " does not match " +
                                    std::to_string(data_.size()) + " values");
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_product(shape) != data_.size()) {
        throw std::invalid_argument("reshape: " + shape_str(shape_) + " -> " + shape_str(shape) +
                                    " changes element count");
    }
    return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << 'x';
        out << shape[i];
    }
    out << ']';
    return out.str();
}

// ---- matmul -----------------------------------------------------------------

namespace {

void check_2d(const Tensor& t, const char* who) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(who) + ": expected 2-D tensor, got " +
                                    shape_str(t.shape()));
    }
}

#ifdef CLASSINV_USE_CBLAS

Tensor gemm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
    const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
    const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
    Tensor c({m, n});
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0, a.data(), static_cast<int>(a.dim(1)), b.data(),
                static_cast<int>(b.dim(1)), 0.0, c.data(), static_cast<int>(n));
    return c;
}

#else

// Blocked fallback; deterministic accumulation order per output element.
Tensor gemm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    const std::size_t m = trans_a ? a.dim(1) : a.dim(0);
    const std::size_t k = trans_a ? a.dim(0) : a.dim(1);
    const std::size_t n = trans_b ? b.dim(0) : b.dim(1);
    Tensor c({m, n});
    const auto a_at = [&](std::size_t i, std::size_t p) { return trans_a ? a(p, i) : a(i, p); };
    const auto b_at = [&](std::size_t p, std::size_t j) { return trans_b ? b(j, p) : b(p, j); };
    constexpr std::size_t kBlock = 64;
    for (std::size_t i0 = 0; i0 < m; i0 += kBlock) {
        for (std::size_t p0 = 0; p0 < k; p0 += kBlock) {
            const std::size_t i1 = std::min(i0 + kBlock, m);
            const std::size_t p1 = std::min(p0 + kBlock, k);
            for (std::size_t i = i0; i < i1; ++i) {
                for (std::size_t p = p0; p < p1; ++p) {
                    const double av = a_at(i, p);
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) c(i, j) += av * b_at(p, j);
                }
            }
        }
    }
    return c;
}

#endif

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    }
    return gemm(a, b, false, false);
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_tn");
    check_2d(b, "matmul_tn");
    if (a.dim(0) != b.dim(0)) {
        throw std::invalid_argument("matmul_tn: inner dimensions disagree, " +
                                    shape_str(a.shape()) + "^T x " + shape_str(b.shape()));
    }
    return gemm(a, b, true, false);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw std::invalid_argument("matmul_nt: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
    }
    return gemm(a, b, false, true);
}

Tensor scaled(const Tensor& t, double s) {
    Tensor out = t;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
    return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    check_2d(x, "add_row_bias");
    if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
        throw std::invalid_argument("add_row_bias: bias " + shape_str(bias.shape()) +
                                    " does not match " + shape_str(x.shape()));
    }
    Tensor out = x;
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += bias[c];
    }
    return out;
}

// ---- conv2d ------------------------------------------------------------------

namespace {

void check_conv_args(const Tensor& input, const Tensor& kernels, const Tensor& bias,
                     std::size_t c_in, std::size_t h, std::size_t w) {
    if (kernels.rank() != 4) {
        throw std::invalid_argument("conv2d: kernels must be 4-D, got " +
                                    shape_str(kernels.shape()));
    }
    const std::size_t kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != c_in) {
        throw std::invalid_argument("conv2d: input channels " + shape_str(input.shape()) +
                                    " do not match kernels " + shape_str(kernels.shape()));
    }
    if (kh > h || kw > w) {
        throw std::invalid_argument("conv2d: kernel " + shape_str(kernels.shape()) +
                                    " larger than input " + shape_str(input.shape()));
    }
    if (bias.rank() != 1 || bias.dim(0) != kernels.dim(0)) {
        throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) +
                                    " does not match kernels " + shape_str(kernels.shape()));
    }
}

// Lower one sample to a column matrix [C_in*kh*kw x oh*ow].
void im2col(const double* src, std::size_t c_in, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, double* col) {
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    double* out = col;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t dy = 0; dy < kh; ++dy) {
            for (std::size_t dx = 0; dx < kw; ++dx) {
                const double* plane = src + c * h * w;
                for (std::size_t y = 0; y < oh; ++y) {
                    const double* row = plane + (y + dy) * w + dx;
                    for (std::size_t x = 0; x < ow; ++x) *out++ = row[x];
                }
            }
        }
    }
}

// Scatter-add of a column matrix back to image layout (adjoint of im2col).
void col2im_add(const double* col, std::size_t c_in, std::size_t h, std::size_t w, std::size_t kh,
                std::size_t kw, double* dst) {
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    const double* in = col;
    for (std::size_t c = 0; c < c_in; ++c) {
        for (std::size_t dy = 0; dy < kh; ++dy) {
            for (std::size_t dx = 0; dx < kw; ++dx) {
                double* plane = dst + c * h * w;
                for (std::size_t y = 0; y < oh; ++y) {
                    double* row = plane + (y + dy) * w + dx;
                    for (std::size_t x = 0; x < ow; ++x) row[x] += in[x];
                    in += ow;
                }
            }
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    if (input.rank() != 3) {
        throw std::invalid_argument("conv2d: input must be [C x H x W], got " +
                                    shape_str(input.shape()));
    }
    Tensor batched = input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)});
    Tensor out = conv2d_batch(batched, kernels, bias);
    return out.reshaped({out.dim(1), out.dim(2), out.dim(3)});
}

Tensor conv2d_batch(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
    if (input.rank() != 4) {
        throw std::invalid_argument("conv2d: input must be [B x C x H x W], got " +
                                    shape_str(input.shape()));
    }
    const std::size_t batch = input.dim(0), c_in = input.dim(1), h = input.dim(2),
                      w = input.dim(3);
    check_conv_args(input, kernels, bias, c_in, h, w);
    const std::size_t c_out = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    const std::size_t patch = c_in * kh * kw, cols = oh * ow;

    Tensor out({batch, c_out, oh, ow});
    const Tensor kmat = kernels.reshaped({c_out, patch});
    Tensor col({patch, cols});
    for (std::size_t n = 0; n < batch; ++n) {
        im2col(input.data() + n * c_in * h * w, c_in, h, w, kh, kw, col.data());
        Tensor planes = matmul(kmat, col);  // [c_out x cols]
        double* dst = out.data() + n * c_out * cols;
        for (std::size_t f = 0; f < c_out; ++f) {
            const double* src = planes.data() + f * cols;
            const double b = bias[f];
            for (std::size_t i = 0; i < cols; ++i) dst[f * cols + i] = src[i] + b;
        }
    }
    return out;
}

Conv2dGrads conv2d_batch_backward(const Tensor& input, const Tensor& kernels,
                                  const Tensor& grad_out) {
    const std::size_t batch = input.dim(0), c_in = input.dim(1), h = input.dim(2),
                      w = input.dim(3);
    const std::size_t c_out = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    if (grad_out.shape() != std::vector<std::size_t>{batch, c_out, oh, ow}) {
        throw std::invalid_argument("conv2d backward: gradient shape " +
                                    shape_str(grad_out.shape()) + " does not match output");
    }
    const std::size_t patch = c_in * kh * kw, cols = oh * ow;

    Conv2dGrads grads{Tensor({batch, c_in, h, w}), Tensor({c_out, c_in, kh, kw}),
                      Tensor({c_out})};
    const Tensor kmat = kernels.reshaped({c_out, patch});
    Tensor gk_acc({c_out, patch});
    Tensor col({patch, cols});
    for (std::size_t n = 0; n < batch; ++n) {
        const double* go = grad_out.data() + n * c_out * cols;
        Tensor go_mat({c_out, cols},
                      std::vector<double>(go, go + c_out * cols));
        // bias: sum over output positions
        for (std::size_t f = 0; f < c_out; ++f) {
            double s = 0.0;
            for (std::size_t i = 0; i < cols; ++i) s += go[f * cols + i];
            grads.bias[f] += s;
        }
        // kernels: grad_out [c_out x cols] * col^T [cols x patch]
        im2col(input.data() + n * c_in * h * w, c_in, h, w, kh, kw, col.data());
        Tensor gk = matmul_nt(go_mat, col);
        for (std::size_t i = 0; i < gk.size(); ++i) gk_acc[i] += gk[i];
        // input: kmat^T [patch x c_out] * grad_out [c_out x cols], scattered back
        Tensor gcol = matmul_tn(kmat, go_mat);
        col2im_add(gcol.data(), c_in, h, w, kh, kw, grads.input.data() + n * c_in * h * w);
    }
    grads.kernels = gk_acc.reshaped({c_out, c_in, kh, kw});
    return grads;
}

// ---- max pooling ---------------------------------------------------------------

MaxPoolResult maxpool2x2(const Tensor& input) {
    if (input.rank() != 3) {
        throw std::invalid_argument("maxpool2x2: input must be [C x H x W], got " +
                                    shape_str(input.shape()));
    }
    Tensor batched = input.reshaped({1, input.dim(0), input.dim(1), input.dim(2)});
    MaxPoolResult r = maxpool2x2_batch(batched);
    r.output = r.output.reshaped({r.output.dim(1), r.output.dim(2), r.output.dim(3)});
    return r;
}

MaxPoolResult maxpool2x2_batch(const Tensor& input) {
    if (input.rank() != 4) {
        throw std::invalid_argument("maxpool2x2: input must be [B x C x H x W], got " +
                                    shape_str(input.shape()));
    }
    const std::size_t batch = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("maxpool2x2: spatial dims must be even, got " +
                                    shape_str(input.shape()));
    }
    const std::size_t oh = h / 2, ow = w / 2;
    MaxPoolResult r{Tensor({batch, c, oh, ow}), std::vector<std::uint32_t>(batch * c * oh * ow)};
    const double* src = input.data();
    for (std::size_t plane = 0; plane < batch * c; ++plane) {
        const double* p = src + plane * h * w;
        double* o = r.output.data() + plane * oh * ow;
        std::uint32_t* m = r.mask.data() + plane * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const std::size_t base = (2 * y) * w + 2 * x;
                std::size_t best = base;
                double bv = p[base];
                const std::size_t candidates[3] = {base + 1, base + w, base + w + 1};
                for (std::size_t cand : candidates) {
                    if (p[cand] > bv) {
                        bv = p[cand];
                        best = cand;
                    }
                }
                o[y * ow + x] = bv;
                m[y * ow + x] = static_cast<std::uint32_t>(plane * h * w + best);
            }
        }
    }
    return r;
}

Tensor maxpool2x2_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& mask,
                           const std::vector<std::size_t>& input_shape) {
    if (grad_out.size() != mask.size()) {
        throw std::invalid_argument("maxpool2x2 backward: gradient/mask size mismatch");
    }
    Tensor grad_in(input_shape);
    for (std::size_t i = 0; i < mask.size(); ++i) grad_in[mask[i]] += grad_out[i];
    return grad_in;
}

// ---- activations -----------------------------------------------------------------

Activation activation_from_string(const std::string& name) {
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    throw std::invalid_argument("unknown activation: " + name);
}

std::string to_string(Activation kind) {
    return kind == Activation::Tanh ? "tanh" : "sigmoid";
}

Tensor apply_activation(const Tensor& x, Activation kind) {
    Tensor y = x;
    double* d = y.data();
    const std::size_t n = y.size();
    if (kind == Activation::Tanh) {
        for (std::size_t i = 0; i < n; ++i) d[i] = std::tanh(d[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) d[i] = 1.0 / (1.0 + std::exp(-d[i]));
    }
    return y;
}

Tensor activation_derivative(const Tensor& x, Activation kind) {
    return activation_derivative_from_output(apply_activation(x, kind), kind);
}

Tensor activation_derivative_from_output(const Tensor& y, Activation kind) {
    Tensor d = y;
    double* p = d.data();
    const std::size_t n = d.size();
    if (kind == Activation::Tanh) {
        for (std::size_t i = 0; i < n; ++i) p[i] = 1.0 - p[i] * p[i];
    } else {
        for (std::size_t i = 0; i < n; ++i) p[i] = p[i] * (1.0 - p[i]);
    }
    return d;
}

// ---- softmax ------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    check_2d(logits, "softmax_rows");
    Tensor probs = logits;
    const std::size_t rows = logits.dim(0), cols = logits.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = probs.data() + r * cols;
        double mx = row[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (std::size_t c = 0; c < cols; ++c) row[c] /= sum;
    }
    return probs;
}

Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_probs) {
    if (!probs.same_shape(grad_probs)) {
        throw std::invalid_argument("softmax backward: shape mismatch " +
                                    shape_str(probs.shape()) + " vs " +
                                    shape_str(grad_probs.shape()));
    }
    Tensor grad_logits = probs;
    const std::size_t rows = probs.dim(0), cols = probs.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* p = probs.data() + r * cols;
        const double* g = grad_probs.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += p[c] * g[c];
        double* out = grad_logits.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) out[c] = p[c] * (g[c] - dot);
    }
    return grad_logits;
}

}  // namespace classinv
