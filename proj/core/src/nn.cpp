#include "tssl/nn.hpp"

#include <cmath>
#include <cstring>

namespace tssl::nn {

void MlpSpec::validate() const {
  if (input_dim < 1) fail(ErrorKind::contract, "MlpSpec: input_dim must be >= 1");
  if (hidden_dims.empty())
    fail(ErrorKind::contract, "MlpSpec: hidden_dims must be non-empty");
  for (std::size_t d : hidden_dims)
    if (d < 1) fail(ErrorKind::contract, "MlpSpec: every layer dim must be >= 1");
}

ParamStore init_params(const MlpSpec& spec, Rng& rng) {
  spec.validate();
  ParamStore params;
  params.dense.reserve(spec.block_count());
  for (std::size_t i = 0; i < spec.block_count(); ++i) {
    const std::size_t in = spec.block_in_dim(i);
    const std::size_t out = spec.hidden_dims[i];
    const double stddev = spec.block_has_activation(i)
                              ? std::sqrt(2.0 / static_cast<double>(in))
                              : std::sqrt(1.0 / static_cast<double>(in));
    DenseLayer layer;
    layer.weight = Matrix(out, in);
    for (double& w : layer.weight.values) w = rng.normal(0.0, stddev);
    layer.bias.assign(out, 0.0);
    params.dense.push_back(std::move(layer));

    if (spec.block_has_batchnorm(i)) {
      BatchNormLayer bn;
      bn.gamma.assign(out, 1.0);
      bn.beta.assign(out, 0.0);
      bn.running_mean.assign(out, 0.0);
      bn.running_var.assign(out, 1.0);
      params.batchnorm.push_back(std::move(bn));
    }
  }
  return params;
}

ParamStore zeros_like(const ParamStore& params) {
  ParamStore out;
  out.dense.reserve(params.dense.size());
  for (const auto& d : params.dense) {
    DenseLayer g;
    g.weight = Matrix(d.weight.rows, d.weight.cols);
    g.bias.assign(d.bias.size(), 0.0);
    out.dense.push_back(std::move(g));
  }
  out.batchnorm.reserve(params.batchnorm.size());
  for (const auto& b : params.batchnorm) {
    BatchNormLayer g;
    g.gamma.assign(b.gamma.size(), 0.0);
    g.beta.assign(b.beta.size(), 0.0);
    g.running_mean.assign(b.running_mean.size(), 0.0);
    g.running_var.assign(b.running_var.size(), 0.0);
    g.momentum = b.momentum;
    g.epsilon = b.epsilon;
    out.batchnorm.push_back(std::move(g));
  }
  return out;
}

void for_each_trainable(ParamStore& params,
                        const std::function<void(std::vector<double>&)>& fn) {
  for (auto& d : params.dense) {
    fn(d.weight.values);
    fn(d.bias);
  }
  for (auto& b : params.batchnorm) {
    fn(b.gamma);
    fn(b.beta);
  }
}

void for_each_trainable(const ParamStore& params,
                        const std::function<void(const std::vector<double>&)>& fn) {
  for (const auto& d : params.dense) {
    fn(d.weight.values);
    fn(d.bias);
  }
  for (const auto& b : params.batchnorm) {
    fn(b.gamma);
    fn(b.beta);
  }
}

std::size_t trainable_count(const ParamStore& params) {
  std::size_t n = 0;
  for_each_trainable(params, [&](const std::vector<double>& a) { n += a.size(); });
  return n;
}

std::vector<unsigned char> param_bytes(const ParamStore& params) {
  std::vector<unsigned char> bytes;
  auto append = [&](const std::vector<double>& a) {
    const auto* p = reinterpret_cast<const unsigned char*>(a.data());
    bytes.insert(bytes.end(), p, p + a.size() * sizeof(double));
  };
  for (const auto& d : params.dense) {
    append(d.weight.values);
    append(d.bias);
  }
  for (const auto& b : params.batchnorm) {
    append(b.gamma);
    append(b.beta);
    append(b.running_mean);
    append(b.running_var);
  }
  return bytes;
}

Matrix dense_forward(const Matrix& x, const Matrix& weight,
                     const std::vector<double>& bias) {
  if (x.cols != weight.cols || weight.rows != bias.size())
    fail(ErrorKind::dimension, "dense_forward: x ", x.rows, "x", x.cols,
         " vs weight ", weight.rows, "x", weight.cols, " vs bias ", bias.size());
  Matrix y = matmul_nt(x, weight);
  for (std::size_t n = 0; n < y.rows; ++n) {
    double* row = y.row_ptr(n);
    for (std::size_t o = 0; o < y.cols; ++o) row[o] += bias[o];
  }
  return y;
}

namespace {

void check_finite(const Matrix& m, std::size_t block) {
  if (!all_finite(m))
    fail(ErrorKind::numeric, "mlp_forward: non-finite activation in block ", block);
}

// Train-mode batch-norm; writes batch statistics into the cache and updates
// running statistics through stats (the live ParamStore entry).
Matrix batchnorm_train(const Matrix& x, BatchNormLayer& stats, BlockCache* cache) {
  const std::size_t n_rows = x.rows, d = x.cols;
  Matrix xhat(n_rows, d);
  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) mean += x(n, j);
    mean /= static_cast<double>(n_rows);
    double var = 0.0;
    for (std::size_t n = 0; n < n_rows; ++n) {
      const double c = x(n, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(n_rows);
    const double is = 1.0 / std::sqrt(var + stats.epsilon);
    inv_std[j] = is;
    for (std::size_t n = 0; n < n_rows; ++n) xhat(n, j) = (x(n, j) - mean) * is;
    stats.running_mean[j] =
        (1.0 - stats.momentum) * stats.running_mean[j] + stats.momentum * mean;
    stats.running_var[j] =
        (1.0 - stats.momentum) * stats.running_var[j] + stats.momentum * var;
  }
  Matrix y(n_rows, d);
  for (std::size_t n = 0; n < n_rows; ++n)
    for (std::size_t j = 0; j < d; ++j)
      y(n, j) = stats.gamma[j] * xhat(n, j) + stats.beta[j];
  if (cache) {
    cache->bn_xhat = std::move(xhat);
    cache->bn_inv_std = std::move(inv_std);
  }
  return y;
}

Matrix batchnorm_eval(const Matrix& x, const BatchNormLayer& stats) {
  Matrix y(x.rows, x.cols);
  for (std::size_t j = 0; j < x.cols; ++j) {
    const double is = 1.0 / std::sqrt(stats.running_var[j] + stats.epsilon);
    for (std::size_t n = 0; n < x.rows; ++n)
      y(n, j) = stats.gamma[j] * (x(n, j) - stats.running_mean[j]) * is + stats.beta[j];
  }
  return y;
}

Matrix forward_impl(const MlpSpec& spec, const ParamStore& params,
                    ParamStore* mutable_params, const Matrix& x, RunMode mode,
                    ForwardCache* cache) {
  spec.validate();
  if (x.cols != spec.input_dim)
    fail(ErrorKind::dimension, "mlp_forward: input has ", x.cols,
         " features, spec expects ", spec.input_dim);
  if (params.dense.size() != spec.block_count())
    fail(ErrorKind::dimension, "mlp_forward: params hold ", params.dense.size(),
         " dense layers, spec has ", spec.block_count());
  if (mode == RunMode::train && spec.use_batchnorm && x.rows < 2)
    fail(ErrorKind::contract,
         "mlp_forward: train-mode batch-norm needs batch size >= 2, got ",
         x.rows);

  if (cache) {
    cache->mode = mode;
    cache->blocks.assign(spec.block_count(), BlockCache{});
  }

  Matrix cur = x;
  for (std::size_t i = 0; i < spec.block_count(); ++i) {
    BlockCache* bc = cache ? &cache->blocks[i] : nullptr;
    if (bc) bc->input = cur;

    Matrix z = dense_forward(cur, params.dense[i].weight, params.dense[i].bias);
    if (bc) bc->pre_act = z;

    if (spec.block_has_batchnorm(i)) {
      const std::size_t bi = spec.batchnorm_index(i);
      if (mode == RunMode::train)
        z = batchnorm_train(z, mutable_params->batchnorm[bi], bc);
      else
        z = batchnorm_eval(z, params.batchnorm[bi]);
    }

    if (spec.block_has_activation(i)) {
      for (double& v : z.values) v = v > 0.0 ? v : 0.0;
    }
    check_finite(z, i);
    if (bc) bc->post = z;
    cur = std::move(z);
  }
  return cur;
}

}  // namespace

Matrix mlp_forward(const MlpSpec& spec, ParamStore& params, const Matrix& x,
                   RunMode mode, ForwardCache* cache) {
  return forward_impl(spec, params, &params, x, mode, cache);
}

Matrix mlp_infer(const MlpSpec& spec, const ParamStore& params, const Matrix& x) {
  return forward_impl(spec, params, nullptr, x, RunMode::eval, nullptr);
}

BackwardResult mlp_backward(const MlpSpec& spec, const ParamStore& params,
                            const ForwardCache& cache, const Matrix& upstream) {
  if (cache.mode != RunMode::train)
    fail(ErrorKind::contract, "mlp_backward: cache must come from a train-mode pass");
  if (cache.blocks.size() != spec.block_count())
    fail(ErrorKind::contract, "mlp_backward: cache has ", cache.blocks.size(),
         " blocks, spec has ", spec.block_count());

  BackwardResult result;
  result.grads = zeros_like(params);
  Matrix delta = upstream;  // gradient w.r.t. block output

  for (std::size_t i = spec.block_count(); i-- > 0;) {
    const BlockCache& bc = cache.blocks[i];
    require_same_shape(delta, bc.post, "mlp_backward upstream");

    // Activation: ReLU passes gradient where the block output is positive.
    // (post > 0 iff pre-activation > 0 for batch-normed ReLU chains, and the
    // cached post is exactly what the forward produced.)
    if (spec.block_has_activation(i)) {
      for (std::size_t k = 0; k < delta.values.size(); ++k)
        if (!(bc.post.values[k] > 0.0)) delta.values[k] = 0.0;
    }

    // Batch-norm backward through the batch statistics.
    if (spec.block_has_batchnorm(i)) {
      const std::size_t bi = spec.batchnorm_index(i);
      const BatchNormLayer& bn = params.batchnorm[bi];
      BatchNormLayer& gbn = result.grads.batchnorm[bi];
      const std::size_t n_rows = delta.rows, d = delta.cols;
      const double inv_n = 1.0 / static_cast<double>(n_rows);
      Matrix dpre(n_rows, d);
      for (std::size_t j = 0; j < d; ++j) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t n = 0; n < n_rows; ++n) {
          const double dy = delta(n, j);
          sum_dy += dy;
          sum_dy_xhat += dy * bc.bn_xhat(n, j);
        }
        gbn.gamma[j] += sum_dy_xhat;
        gbn.beta[j] += sum_dy;
        const double scale = bn.gamma[j] * bc.bn_inv_std[j] * inv_n;
        for (std::size_t n = 0; n < n_rows; ++n) {
          dpre(n, j) = scale * (static_cast<double>(n_rows) * delta(n, j) -
                                sum_dy - bc.bn_xhat(n, j) * sum_dy_xhat);
        }
      }
      delta = std::move(dpre);
    }

    // Dense backward: dW = deltaᵀ·x, db = column sums, dx = delta·W.
    DenseLayer& gd = result.grads.dense[i];
    gd.weight = matmul_tn(delta, bc.input);
    for (std::size_t n = 0; n < delta.rows; ++n) {
      const double* row = delta.row_ptr(n);
      for (std::size_t o = 0; o < delta.cols; ++o) gd.bias[o] += row[o];
    }
    delta = matmul(delta, params.dense[i].weight);
  }

  result.input_grad = std::move(delta);
  return result;
}

AdamState make_adam(const ParamStore& params, double learning_rate) {
  AdamState state;
  state.learning_rate = learning_rate;
  const std::size_t n = trainable_count(params);
  state.first_moment.assign(n, 0.0);
  state.second_moment.assign(n, 0.0);
  return state;
}

void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state) {
  if (trainable_count(params) != state.first_moment.size() ||
      trainable_count(grads) != state.first_moment.size())
    fail(ErrorKind::dimension, "adam_step: parameter/gradient/state size mismatch");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  // Walk params and grads in the same traversal order, sharing one cursor
  // into the flattened moment arrays.
  std::size_t cursor = 0;
  std::vector<const std::vector<double>*> grad_arrays;
  for_each_trainable(grads, [&](const std::vector<double>& a) {
    grad_arrays.push_back(&a);
  });
  std::size_t which = 0;
  for_each_trainable(params, [&](std::vector<double>& p) {
    const std::vector<double>& g = *grad_arrays[which++];
    if (g.size() != p.size())
      fail(ErrorKind::dimension, "adam_step: gradient array shape mismatch");
    for (std::size_t k = 0; k < p.size(); ++k, ++cursor) {
      double& m = state.first_moment[cursor];
      double& v = state.second_moment[cursor];
      m = state.beta1 * m + (1.0 - state.beta1) * g[k];
      v = state.beta2 * v + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  });
}

void add_grads(ParamStore& dst, const ParamStore& src) {
  std::vector<const std::vector<double>*> arrays;
  for_each_trainable(src, [&](const std::vector<double>& a) { arrays.push_back(&a); });
  std::size_t which = 0;
  for_each_trainable(dst, [&](std::vector<double>& d) {
    if (which >= arrays.size() || arrays[which]->size() != d.size())
      fail(ErrorKind::dimension, "add_grads: gradient store shape mismatch");
    const std::vector<double>& s = *arrays[which++];
    for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
  });
}

}  // namespace tssl::nn
