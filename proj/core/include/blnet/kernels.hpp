#pragma once

#include <span>
#include <type_traits>
#include <vector>

#include "blnet/layer.hpp"
#include "blnet/tensor.hpp"

// Numeric kernels for every layer kind. Forward kernels allocate their output;
// backward kernels accumulate into caller-provided gradients (which must be
// sized already) so fan-out sums come for free.
namespace blnet::kernels {

// Optional tensor argument, kept out of deduction so callers can pass nullptr.
template <typename X>
using Opt = std::type_identity_t<X*>;

enum class ConvAlgo { Direct, Im2col, Auto };

inline constexpr double kBatchNormEps = 1e-5;

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, Opt<const Tensor<T>> bias, const Conv2dParams& p,
                 ConvAlgo algo = ConvAlgo::Auto);

// dx, dweight, dbias may be null when that gradient is not needed.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Conv2dParams& p, const Tensor<T>& dy,
                     Opt<Tensor<T>> dx, Opt<Tensor<T>> dweight, Opt<Tensor<T>> dbias, ConvAlgo algo = ConvAlgo::Auto);

// Batch statistics use the biased variance over (N, H, W).
template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;
};

template <typename T>
Tensor<T> batchnorm_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchStats<T>* stats);

template <typename T>
Tensor<T> batchnorm_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                         const Tensor<T>& running_mean, const Tensor<T>& running_var);

template <typename T>
void batchnorm_train_backward(const Tensor<T>& x, const Tensor<T>& gamma, const BatchStats<T>& stats,
                              const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dgamma, Tensor<T>& dbeta);

template <typename T>
void batchnorm_eval_backward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& running_mean,
                             const Tensor<T>& running_var, const Tensor<T>& dy, Tensor<T>& dx, Tensor<T>& dgamma,
                             Tensor<T>& dbeta);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
void relu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// Padding cells never win the max. Ties go to the first window position.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& x, const MaxPoolParams& p);
template <typename T>
void maxpool_backward(const Tensor<T>& x, const MaxPoolParams& p, const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
void global_avg_pool_backward(const Tensor<T>& dy, Tensor<T>& dx);

// Half-pixel centers: s = (d + 0.5) / scale - 0.5, clamped to [0, in - 1].
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int64_t scale_h, int64_t scale_w);
template <typename T>
void bilinear_upsample_backward(const Tensor<T>& dy, int64_t scale_h, int64_t scale_w, Tensor<T>& dx);

template <typename T>
Tensor<T> add_merge(std::span<const Tensor<T>* const> xs, std::span<const double> coefficients);
template <typename T>
void add_merge_backward(const Tensor<T>& dy, double coefficient, Tensor<T>& dx);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>* const> xs);
// Gradient slice for input k of a channel concatenation.
template <typename T>
void concat_backward(const Tensor<T>& dy, int64_t channel_offset, Tensor<T>& dx);

template <typename T>
Tensor<T> crop_time(const Tensor<T>& x, const CropTimeParams& p);
template <typename T>
void crop_time_backward(const Tensor<T>& dy, const CropTimeParams& p, Tensor<T>& dx);

// weight is (out, in, 1, 1); x is flattened per sample.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, Opt<const Tensor<T>> bias);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy, Opt<Tensor<T>> dx,
                     Opt<Tensor<T>> dweight, Opt<Tensor<T>> dbias);

}  // namespace blnet::kernels
