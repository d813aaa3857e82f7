#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "tssl/matrix.hpp"
#include "tssl/rng.hpp"

namespace tssl::nn {

enum class Activation { relu, identity };

/// Architecture of a sequential MLP. Each entry of hidden_dims is one block:
/// dense, then batch-norm when use_batchnorm, then the activation. With
/// plain_last the final block is a bare dense layer (no norm, no activation),
/// which is how projector/decoder output layers are expressed.
struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  bool use_batchnorm = false;
  Activation activation = Activation::relu;
  bool plain_last = false;

  std::size_t block_count() const { return hidden_dims.size(); }
  std::size_t output_dim() const { return hidden_dims.back(); }
  std::size_t block_in_dim(std::size_t i) const {
    return i == 0 ? input_dim : hidden_dims[i - 1];
  }
  bool block_has_batchnorm(std::size_t i) const {
    return use_batchnorm && !(plain_last && i + 1 == hidden_dims.size());
  }
  bool block_has_activation(std::size_t i) const {
    return activation != Activation::identity &&
           !(plain_last && i + 1 == hidden_dims.size());
  }
  /// Number of batch-norm entries preceding block i in a ParamStore.
  std::size_t batchnorm_index(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t b = 0; b < i; ++b)
      if (block_has_batchnorm(b)) ++n;
    return n;
  }

  void validate() const;
};

struct DenseLayer {
  Matrix weight;             // out × in
  std::vector<double> bias;  // out
};

struct BatchNormLayer {
  std::vector<double> gamma, beta;
  std::vector<double> running_mean, running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;
};

/// Trainable state of an MLP plus batch-norm running statistics. batchnorm
/// holds one entry per block that has normalization, in block order.
struct ParamStore {
  std::vector<DenseLayer> dense;
  std::vector<BatchNormLayer> batchnorm;
};

/// Scaled-normal init: stddev sqrt(2/fan_in) for ReLU blocks, sqrt(1/fan_in)
/// for linear ones; biases zero; batch-norm gamma 1, beta 0, running stats
/// (0, 1).
ParamStore init_params(const MlpSpec& spec, Rng& rng);

/// Same shapes as init_params, everything zero. Used for gradients.
ParamStore zeros_like(const ParamStore& params);

/// Visits every trainable array (weight, bias, gamma, beta) in a fixed
/// order. Running statistics are not trainable and are skipped.
void for_each_trainable(ParamStore& params,
                        const std::function<void(std::vector<double>&)>& fn);
void for_each_trainable(const ParamStore& params,
                        const std::function<void(const std::vector<double>&)>& fn);
std::size_t trainable_count(const ParamStore& params);

/// Raw bytes of every array in checkpoint order (including running stats) at
/// 64-bit width; used for byte-identity assertions.
std::vector<unsigned char> param_bytes(const ParamStore& params);

enum class RunMode { train, eval };

struct BlockCache {
  Matrix input;      // dense input
  Matrix pre_act;    // dense output / batch-norm input
  Matrix bn_xhat;    // normalized activations before gamma/beta (train mode)
  std::vector<double> bn_inv_std;  // per feature, train-mode batch statistic
  Matrix post;       // block output
};

struct ForwardCache {
  RunMode mode = RunMode::train;
  std::vector<BlockCache> blocks;
};

/// y = x · Wᵀ + b. Throws a dimension error naming both shapes on mismatch.
Matrix dense_forward(const Matrix& x, const Matrix& weight,
                     const std::vector<double>& bias);

/// Full MLP forward. Train mode updates batch-norm running statistics in
/// params and requires batch size >= 2 when the spec uses batch-norm; eval
/// mode uses running statistics and leaves params untouched. A non-finite
/// activation raises a numeric error naming the block.
Matrix mlp_forward(const MlpSpec& spec, ParamStore& params, const Matrix& x,
                   RunMode mode, ForwardCache* cache = nullptr);

/// Eval-mode forward on const parameters (pure function).
Matrix mlp_infer(const MlpSpec& spec, const ParamStore& params, const Matrix& x);

struct BackwardResult {
  ParamStore grads;
  Matrix input_grad;
};

/// Exact reverse-mode gradients of mlp_forward through a train-mode cache,
/// including the batch-statistics terms of batch-norm. An eval-mode cache is
/// a contract violation.
BackwardResult mlp_backward(const MlpSpec& spec, const ParamStore& params,
                            const ForwardCache& cache, const Matrix& upstream);

struct AdamState {
  long step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<double> first_moment;   // flattened over trainable arrays
  std::vector<double> second_moment;
};

AdamState make_adam(const ParamStore& params, double learning_rate);

/// Bias-corrected adaptive-moment update over the trainable arrays of
/// params; increments state.step.
void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state);

/// dst += src over trainable arrays (gradient accumulation across branches).
void add_grads(ParamStore& dst, const ParamStore& src);

/// Architecture plus parameters, the unit the pretext models are built from.
struct MlpModule {
  MlpSpec spec;
  ParamStore params;
};

}  // namespace tssl::nn
