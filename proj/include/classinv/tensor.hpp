#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace classinv {

/// Dense n-dimensional array of float64 values, row-major contiguous.
/// Values are immutable once a kernel has returned the tensor; sharing
/// read-only copies across threads is safe.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-D / 3-D / 4-D element access, row-major.
    double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
    double& operator()(std::size_t c, std::size_t h, std::size_t w) {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double operator()(std::size_t c, std::size_t h, std::size_t w) const {
        return data_[(c * shape_[1] + h) * shape_[2] + w];
    }
    double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }
    double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
    }

    /// Same data, new shape; element count must match.
    Tensor reshaped(std::vector<std::size_t> shape) const;

    bool all_finite() const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// ---- dense kernels ---------------------------------------------------------

/// [M x K] * [K x N] -> [M x N]. Throws std::invalid_argument naming both
/// shapes when inner dimensions disagree.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b: [K x M]^T * [K x N] -> [M x N]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T: [M x K] * [N x K]^T -> [M x N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// rows of x plus bias: x[B x N] + b[N]
Tensor add_row_bias(const Tensor& x, const Tensor& bias);

/// Elementwise t * s.
Tensor scaled(const Tensor& t, double s);

// ---- 2-D convolution (valid, stride 1, cross-correlation) ------------------

/// input [C_in x H x W], kernels [C_out x C_in x kh x kw], bias [C_out]
/// -> [C_out x (H-kh+1) x (W-kw+1)]
Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias);

/// Batched form: input [B x C_in x H x W] -> [B x C_out x oh x ow].
Tensor conv2d_batch(const Tensor& input, const Tensor& kernels, const Tensor& bias);

struct Conv2dGrads {
    Tensor input;
    Tensor kernels;
    Tensor bias;
};

/// Gradients of conv2d_batch w.r.t. all three arguments given the gradient at
/// its output.
Conv2dGrads conv2d_batch_backward(const Tensor& input, const Tensor& kernels,
                                  const Tensor& grad_out);

// ---- 2x2 max pooling --------------------------------------------------------

struct MaxPoolResult {
    Tensor output;                 // [C x H/2 x W/2]
    std::vector<std::uint32_t> mask;  // flat input index of each winner
};

/// Non-overlapping 2x2 max over [C x H x W]; H and W must be even.
MaxPoolResult maxpool2x2(const Tensor& input);

/// Batched form over [B x C x H x W].
MaxPoolResult maxpool2x2_batch(const Tensor& input);

/// Routes grad_out entries back to the recorded winner positions.
Tensor maxpool2x2_backward(const Tensor& grad_out, const std::vector<std::uint32_t>& mask,
                           const std::vector<std::size_t>& input_shape);

// ---- elementwise activations -------------------------------------------------

enum class Activation { Tanh, Sigmoid };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation kind);

Tensor apply_activation(const Tensor& x, Activation kind);
/// Elementwise derivative evaluated at input x.
Tensor activation_derivative(const Tensor& x, Activation kind);
/// Derivative expressed through the activation output y = f(x); used by the
/// backward pass so the forward output can be reused.
Tensor activation_derivative_from_output(const Tensor& y, Activation kind);

// ---- softmax ----------------------------------------------------------------

/// Row-wise softmax of logits [B x S].
Tensor softmax_rows(const Tensor& logits);
/// Gradient at logits given probs = softmax_rows(logits) and the gradient at
/// probs.
Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_probs);

}  // namespace classinv
