#pragma once

#include "vlabel/autograd.hpp"

namespace vlabel {

enum class Mode { train, infer };

/// Shape of one kernel-3 same-padded convolution. `spatial_rank` is 1 or 2.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t spatial_rank = 2;
  static constexpr std::size_t kernel = 3;

  Shape weight_shape() const {
    return spatial_rank == 1 ? Shape{out_channels, in_channels, kernel}
                             : Shape{out_channels, in_channels, kernel, kernel};
  }
  Shape bias_shape() const { return {out_channels}; }
};

struct BatchNormConfig {
  double momentum = 0.99;
  double epsilon = 1e-5;
};

/// Running statistics owned by the caller. gamma/beta are tape variables.
template <typename T>
struct BatchNormStats {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
};

// Batched layouts: conv1d expects [N, C, L], conv2d expects [N, C, H, W].
// Both use kernel 3, stride 1 and one cell of zero padding on each side.
template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, Var<T> bias);
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias);

/// Per-channel normalization over batch and spatial axes of [N, C, ...].
/// Train mode uses batch statistics and updates the running estimates;
/// infer mode normalizes by the running estimates.
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T> stats, Mode mode,
                  const BatchNormConfig& cfg = {});

template <typename T>
Var<T> relu(Var<T> x);

/// Window 2, stride 2 over every axis after [N, C]. Odd trailing cells are dropped.
template <typename T>
Var<T> max_pool(Var<T> x);

/// [N, C, ...] -> [N, C]
template <typename T>
Var<T> global_avg_pool(Var<T> x);

/// Row-wise softmax of [N, K] (or [K]).
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

/// -(1/N) sum_n sum_k w_k * t_nk * log softmax(z_n)_k, fused through log-sum-exp.
/// Targets must be one-hot rows.
template <typename T>
Var<T> weighted_cross_entropy(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& weights);

}  // namespace vlabel
