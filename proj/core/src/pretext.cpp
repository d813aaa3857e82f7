#include "tssl/pretext.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tssl/checkpoint.hpp"

namespace tssl::pretext {

namespace {

constexpr double kBceClamp = 1e-7;

std::vector<double> row_norms(const Matrix& m, const char* op) {
  std::vector<double> norms(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    double s = 0.0;
    const double* row = m.row_ptr(i);
    for (std::size_t j = 0; j < m.cols; ++j) s += row[j] * row[j];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0)
      fail(ErrorKind::numeric, op, ": zero-norm row ", i);
  }
  return norms;
}

Matrix normalize_rows(const Matrix& m, const std::vector<double>& norms) {
  Matrix out = m;
  for (std::size_t i = 0; i < m.rows; ++i) {
    double* row = out.row_ptr(i);
    for (std::size_t j = 0; j < m.cols; ++j) row[j] /= norms[i];
  }
  return out;
}

struct InfoNceCore {
  double loss;
  Matrix dsim;  // gradient w.r.t. the cosine similarity matrix, or empty
};

InfoNceCore info_nce_core(const Matrix& sim, double tau, InfoNceVariant variant,
                          bool want_grads) {
  const std::size_t n = sim.rows;
  InfoNceCore out{0.0, want_grads ? Matrix(n, n) : Matrix()};
  const double inv_ntau = 1.0 / (static_cast<double>(n) * tau);

  for (std::size_t i = 0; i < n; ++i) {
    // log-sum-exp over the denominator set K_i.
    double max_s = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      if (variant == InfoNceVariant::as_printed && k == i) continue;
      max_s = std::max(max_s, sim(i, k) / tau);
    }
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (variant == InfoNceVariant::as_printed && k == i) continue;
      z += std::exp(sim(i, k) / tau - max_s);
    }
    out.loss += -sim(i, i) / tau + max_s + std::log(z);

    if (want_grads) {
      for (std::size_t k = 0; k < n; ++k) {
        double g = 0.0;
        if (!(variant == InfoNceVariant::as_printed && k == i))
          g += std::exp(sim(i, k) / tau - max_s) / z;
        if (k == i) g -= 1.0;
        out.dsim(i, k) = g * inv_ntau;
      }
    }
  }
  out.loss /= static_cast<double>(n);
  return out;
}

// d(u·v)/dq for u = q/|q|: project the normalized-space gradient back.
Matrix cosine_chain(const Matrix& dunit, const Matrix& unit,
                    const std::vector<double>& norms) {
  Matrix out(dunit.rows, dunit.cols);
  for (std::size_t i = 0; i < dunit.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < dunit.cols; ++j) dot += dunit(i, j) * unit(i, j);
    for (std::size_t j = 0; j < dunit.cols; ++j)
      out(i, j) = (dunit(i, j) - dot * unit(i, j)) / norms[i];
  }
  return out;
}

void check_pair_shapes(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    fail(ErrorKind::dimension, op, ": shapes ", a.rows, "x", a.cols, " vs ",
         b.rows, "x", b.cols);
}

}  // namespace

PretextMethod method_from_string(const std::string& name) {
  if (name == "scarf") return PretextMethod::scarf;
  if (name == "vime") return PretextMethod::vime;
  if (name == "byol") return PretextMethod::byol;
  fail(ErrorKind::config, "unknown pretext method '", name,
       "' (expected scarf|vime|byol)");
}

const char* method_name(PretextMethod method) {
  switch (method) {
    case PretextMethod::scarf: return "scarf";
    case PretextMethod::vime: return "vime";
    case PretextMethod::byol: return "byol";
  }
  return "?";
}

double info_nce(const Matrix& q, const Matrix& q_tilde, double tau,
                InfoNceVariant variant) {
  check_pair_shapes(q, q_tilde, "info_nce");
  if (q.rows < 2) fail(ErrorKind::contract, "info_nce: need N >= 2, got ", q.rows);
  if (!(tau > 0.0)) fail(ErrorKind::contract, "info_nce: tau must be positive");
  const auto qn = row_norms(q, "info_nce(q)");
  const auto vn = row_norms(q_tilde, "info_nce(q_tilde)");
  const Matrix sim = matmul_nt(normalize_rows(q, qn), normalize_rows(q_tilde, vn));
  return info_nce_core(sim, tau, variant, false).loss;
}

InfoNceGrads info_nce_with_grads(const Matrix& q, const Matrix& q_tilde,
                                 double tau, InfoNceVariant variant) {
  check_pair_shapes(q, q_tilde, "info_nce");
  if (q.rows < 2) fail(ErrorKind::contract, "info_nce: need N >= 2, got ", q.rows);
  if (!(tau > 0.0)) fail(ErrorKind::contract, "info_nce: tau must be positive");
  const auto qn = row_norms(q, "info_nce(q)");
  const auto vn = row_norms(q_tilde, "info_nce(q_tilde)");
  const Matrix u = normalize_rows(q, qn);
  const Matrix v = normalize_rows(q_tilde, vn);
  const Matrix sim = matmul_nt(u, v);
  InfoNceCore core = info_nce_core(sim, tau, variant, true);

  InfoNceGrads out;
  out.loss = core.loss;
  out.dq = cosine_chain(matmul(core.dsim, v), u, qn);
  out.dq_tilde = cosine_chain(matmul_tn(core.dsim, u), v, vn);
  return out;
}

double byol_loss(const Matrix& prediction, const Matrix& target_proj) {
  check_pair_shapes(prediction, target_proj, "byol_loss");
  const auto pn = row_norms(prediction, "byol_loss(prediction)");
  const auto tn = row_norms(target_proj, "byol_loss(target)");
  double loss = 0.0;
  for (std::size_t i = 0; i < prediction.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < prediction.cols; ++j)
      dot += prediction(i, j) * target_proj(i, j);
    loss += 2.0 - 2.0 * dot / (pn[i] * tn[i]);
  }
  return loss / static_cast<double>(prediction.rows);
}

ByolLossGrads byol_loss_with_grads(const Matrix& prediction,
                                   const Matrix& target_proj) {
  check_pair_shapes(prediction, target_proj, "byol_loss");
  const auto pn = row_norms(prediction, "byol_loss(prediction)");
  const auto tn = row_norms(target_proj, "byol_loss(target)");
  ByolLossGrads out;
  out.dprediction = Matrix(prediction.rows, prediction.cols);
  const double scale = -2.0 / static_cast<double>(prediction.rows);
  for (std::size_t i = 0; i < prediction.rows; ++i) {
    double cos = 0.0;
    for (std::size_t j = 0; j < prediction.cols; ++j)
      cos += (prediction(i, j) / pn[i]) * (target_proj(i, j) / tn[i]);
    out.loss += 2.0 - 2.0 * cos;
    for (std::size_t j = 0; j < prediction.cols; ++j) {
      const double u = prediction(i, j) / pn[i];
      const double w = target_proj(i, j) / tn[i];
      out.dprediction(i, j) = scale * (w - cos * u) / pn[i];
    }
  }
  out.loss /= static_cast<double>(prediction.rows);
  return out;
}

VimeLossParts vime_losses(const Matrix& x, const augment::MaskMatrix& mask,
                          const Matrix& feat_pred, const Matrix& mask_pred,
                          double alpha, bool masked_only_mse) {
  return vime_losses_with_grads(x, mask, feat_pred, mask_pred, alpha,
                                masked_only_mse)
      .parts;
}

VimeLossGrads vime_losses_with_grads(const Matrix& x, const augment::MaskMatrix& mask,
                                     const Matrix& feat_pred, const Matrix& mask_pred,
                                     double alpha, bool masked_only_mse) {
  check_pair_shapes(x, feat_pred, "vime_losses(features)");
  check_pair_shapes(x, mask_pred, "vime_losses(mask)");
  if (mask.rows != x.rows || mask.cols != x.cols)
    fail(ErrorKind::dimension, "vime_losses: mask ", mask.rows, "x", mask.cols,
         " vs data ", x.rows, "x", x.cols);
  if (alpha < 0.0) fail(ErrorKind::contract, "vime_losses: alpha must be >= 0");

  const std::size_t total = x.rows * x.cols;
  VimeLossGrads out;
  out.dfeat_pred = Matrix(x.rows, x.cols);
  out.dmask_pred = Matrix(x.rows, x.cols);

  std::size_t masked_count = 0;
  if (masked_only_mse)
    for (auto m : mask.values) masked_count += m;
  const double feat_denom = masked_only_mse
                                ? static_cast<double>(std::max<std::size_t>(masked_count, 1))
                                : static_cast<double>(total);

  double mse = 0.0, bce = 0.0;
  for (std::size_t k = 0; k < total; ++k) {
    const double diff = feat_pred.values[k] - x.values[k];
    const bool use = !masked_only_mse || mask.values[k] != 0;
    if (use) {
      mse += diff * diff;
      out.dfeat_pred.values[k] = alpha * 2.0 * diff / feat_denom;
    }
    const double p = std::clamp(mask_pred.values[k], kBceClamp, 1.0 - kBceClamp);
    const double m = static_cast<double>(mask.values[k]);
    bce += -(m * std::log(p) + (1.0 - m) * std::log(1.0 - p));
    out.dmask_pred.values[k] = (p - m) / (p * (1.0 - p)) / static_cast<double>(total);
  }
  out.parts.feature_loss = mse / feat_denom;
  out.parts.mask_loss = bce / static_cast<double>(total);
  out.parts.total = out.parts.mask_loss + alpha * out.parts.feature_loss;
  return out;
}

void ema_update(const nn::ParamStore& online, nn::ParamStore& target, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    fail(ErrorKind::contract, "ema_update: lambda must lie in [0,1]");
  if (online.dense.size() != target.dense.size() ||
      online.batchnorm.size() != target.batchnorm.size())
    fail(ErrorKind::dimension, "ema_update: online/target layer counts differ");

  auto blend = [lambda](const std::vector<double>& o, std::vector<double>& t) {
    if (o.size() != t.size())
      fail(ErrorKind::dimension, "ema_update: array length mismatch");
    for (std::size_t k = 0; k < t.size(); ++k)
      t[k] = lambda * t[k] + (1.0 - lambda) * o[k];
  };
  for (std::size_t i = 0; i < online.dense.size(); ++i) {
    blend(online.dense[i].weight.values, target.dense[i].weight.values);
    blend(online.dense[i].bias, target.dense[i].bias);
  }
  for (std::size_t i = 0; i < online.batchnorm.size(); ++i) {
    blend(online.batchnorm[i].gamma, target.batchnorm[i].gamma);
    blend(online.batchnorm[i].beta, target.batchnorm[i].beta);
    blend(online.batchnorm[i].running_mean, target.batchnorm[i].running_mean);
    blend(online.batchnorm[i].running_var, target.batchnorm[i].running_var);
  }
}

namespace {

nn::MlpSpec scarf_projector_spec(std::size_t in_dim) {
  return nn::MlpSpec{in_dim, {256, 256}, false, nn::Activation::relu, true};
}

nn::MlpSpec byol_head_spec(std::size_t in_dim) {
  return nn::MlpSpec{in_dim,
                     {kByolProjectorHidden, kByolProjectorOut},
                     true,
                     nn::Activation::relu,
                     true};
}

nn::MlpSpec vime_decoder_spec(const nn::MlpSpec& encoder_spec, std::size_t input_dim) {
  nn::MlpSpec spec;
  spec.input_dim = encoder_spec.output_dim();
  spec.hidden_dims = encoder_spec.hidden_dims;
  spec.hidden_dims.back() = input_dim;
  spec.use_batchnorm = encoder_spec.use_batchnorm;
  spec.activation = encoder_spec.activation;
  spec.plain_last = true;
  return spec;
}

}  // namespace

ScarfModel make_scarf(const nn::MlpSpec& encoder_spec, Rng& rng, double tau,
                      InfoNceVariant variant) {
  if (!(tau > 0.0)) fail(ErrorKind::contract, "make_scarf: tau must be positive");
  ScarfModel model;
  model.encoder.spec = encoder_spec;
  Rng enc_rng = rng.split("scarf_encoder");
  model.encoder.params = nn::init_params(encoder_spec, enc_rng);
  model.projector.spec = scarf_projector_spec(encoder_spec.output_dim());
  Rng proj_rng = rng.split("scarf_projector");
  model.projector.params = nn::init_params(model.projector.spec, proj_rng);
  model.tau = tau;
  model.variant = variant;
  return model;
}

VimeModel make_vime(const nn::MlpSpec& encoder_spec, std::size_t input_dim,
                    Rng& rng, double alpha, bool masked_only_mse) {
  if (encoder_spec.input_dim != input_dim)
    fail(ErrorKind::dimension, "make_vime: encoder input ", encoder_spec.input_dim,
         " vs data dim ", input_dim);
  VimeModel model;
  model.encoder.spec = encoder_spec;
  Rng enc_rng = rng.split("vime_encoder");
  model.encoder.params = nn::init_params(encoder_spec, enc_rng);
  const nn::MlpSpec dec_spec = vime_decoder_spec(encoder_spec, input_dim);
  model.feature_decoder.spec = dec_spec;
  Rng feat_rng = rng.split("vime_feature_decoder");
  model.feature_decoder.params = nn::init_params(dec_spec, feat_rng);
  model.mask_decoder.spec = dec_spec;
  Rng mask_rng = rng.split("vime_mask_decoder");
  model.mask_decoder.params = nn::init_params(dec_spec, mask_rng);
  model.alpha = alpha;
  model.masked_only_mse = masked_only_mse;
  return model;
}

ByolModel make_byol(const nn::MlpSpec& encoder_spec, Rng& rng, double ema_decay,
                    bool symmetrize, bool corrupt_both) {
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0))
    fail(ErrorKind::contract, "make_byol: lambda must lie in [0,1]");
  ByolModel model;
  model.online_encoder.spec = encoder_spec;
  Rng enc_rng = rng.split("byol_encoder");
  model.online_encoder.params = nn::init_params(encoder_spec, enc_rng);
  model.online_projector.spec = byol_head_spec(encoder_spec.output_dim());
  Rng proj_rng = rng.split("byol_projector");
  model.online_projector.params = nn::init_params(model.online_projector.spec, proj_rng);
  model.predictor.spec = byol_head_spec(kByolProjectorOut);
  Rng pred_rng = rng.split("byol_predictor");
  model.predictor.params = nn::init_params(model.predictor.spec, pred_rng);
  // Target branch starts as an exact copy of the online branch.
  model.target_encoder = model.online_encoder;
  model.target_projector = model.online_projector;
  model.ema_decay = ema_decay;
  model.symmetrize = symmetrize;
  model.corrupt_both = corrupt_both;
  return model;
}

double scarf_step_on_views(ScarfModel& model, const Matrix& x,
                           const Matrix& x_tilde, nn::AdamState& encoder_opt,
                           nn::AdamState& projector_opt) {
  if (x.rows < 2)
    fail(ErrorKind::contract, "scarf_step: batch size must be >= 2, got ", x.rows);

  nn::ForwardCache enc_cache_a, enc_cache_b, proj_cache_a, proj_cache_b;
  const Matrix z = nn::mlp_forward(model.encoder.spec, model.encoder.params, x,
                                   nn::RunMode::train, &enc_cache_a);
  const Matrix z_tilde = nn::mlp_forward(model.encoder.spec, model.encoder.params,
                                         x_tilde, nn::RunMode::train, &enc_cache_b);
  const Matrix q = nn::mlp_forward(model.projector.spec, model.projector.params, z,
                                   nn::RunMode::train, &proj_cache_a);
  const Matrix q_tilde = nn::mlp_forward(model.projector.spec, model.projector.params,
                                         z_tilde, nn::RunMode::train, &proj_cache_b);

  InfoNceGrads loss = info_nce_with_grads(q, q_tilde, model.tau, model.variant);

  auto proj_a = nn::mlp_backward(model.projector.spec, model.projector.params,
                                 proj_cache_a, loss.dq);
  auto proj_b = nn::mlp_backward(model.projector.spec, model.projector.params,
                                 proj_cache_b, loss.dq_tilde);
  nn::add_grads(proj_a.grads, proj_b.grads);

  auto enc_a = nn::mlp_backward(model.encoder.spec, model.encoder.params,
                                enc_cache_a, proj_a.input_grad);
  auto enc_b = nn::mlp_backward(model.encoder.spec, model.encoder.params,
                                enc_cache_b, proj_b.input_grad);
  nn::add_grads(enc_a.grads, enc_b.grads);

  nn::adam_step(model.encoder.params, enc_a.grads, encoder_opt);
  nn::adam_step(model.projector.params, proj_a.grads, projector_opt);
  return loss.loss;
}

double scarf_step(ScarfModel& model, const Matrix& batch,
                  const data::EmpiricalMarginals& marginals, double c, Rng& rng,
                  nn::AdamState& encoder_opt, nn::AdamState& projector_opt) {
  const Matrix x_tilde = augment::scarf_corrupt(batch, marginals, c, rng);
  return scarf_step_on_views(model, batch, x_tilde, encoder_opt, projector_opt);
}

double scarf_loss_on_views(const ScarfModel& model, const Matrix& x,
                           const Matrix& x_tilde) {
  nn::ParamStore enc = model.encoder.params;    // scratch copies: train-mode
  nn::ParamStore proj = model.projector.params; // forward touches running stats
  const Matrix z = nn::mlp_forward(model.encoder.spec, enc, x, nn::RunMode::train);
  const Matrix z_tilde =
      nn::mlp_forward(model.encoder.spec, enc, x_tilde, nn::RunMode::train);
  const Matrix q = nn::mlp_forward(model.projector.spec, proj, z, nn::RunMode::train);
  const Matrix q_tilde =
      nn::mlp_forward(model.projector.spec, proj, z_tilde, nn::RunMode::train);
  return info_nce(q, q_tilde, model.tau, model.variant);
}

VimeStepResult vime_step(VimeModel& model, const Matrix& batch,
                         const data::EmpiricalMarginals& marginals, double p_m,
                         Rng& rng, nn::AdamState& encoder_opt,
                         nn::AdamState& feat_opt, nn::AdamState& mask_opt) {
  if (batch.rows == 0) fail(ErrorKind::contract, "vime_step: empty batch");
  auto [x_tilde, mask] = augment::vime_corrupt(batch, marginals, p_m, rng);

  nn::ForwardCache enc_cache, feat_cache, mask_cache;
  const Matrix z = nn::mlp_forward(model.encoder.spec, model.encoder.params,
                                   x_tilde, nn::RunMode::train, &enc_cache);
  const Matrix feat_pred = nn::mlp_forward(model.feature_decoder.spec,
                                           model.feature_decoder.params, z,
                                           nn::RunMode::train, &feat_cache);
  const Matrix mask_logits = nn::mlp_forward(model.mask_decoder.spec,
                                             model.mask_decoder.params, z,
                                             nn::RunMode::train, &mask_cache);
  Matrix mask_pred = mask_logits;
  for (double& v : mask_pred.values) v = 1.0 / (1.0 + std::exp(-v));

  VimeLossGrads loss = vime_losses_with_grads(batch, mask, feat_pred, mask_pred,
                                              model.alpha, model.masked_only_mse);

  // Sigmoid chain into the mask-decoder logits.
  Matrix dlogits = loss.dmask_pred;
  for (std::size_t k = 0; k < dlogits.values.size(); ++k) {
    const double s = mask_pred.values[k];
    dlogits.values[k] *= s * (1.0 - s);
  }

  auto feat_back = nn::mlp_backward(model.feature_decoder.spec,
                                    model.feature_decoder.params, feat_cache,
                                    loss.dfeat_pred);
  auto mask_back = nn::mlp_backward(model.mask_decoder.spec,
                                    model.mask_decoder.params, mask_cache, dlogits);
  Matrix dz = feat_back.input_grad;
  for (std::size_t k = 0; k < dz.values.size(); ++k)
    dz.values[k] += mask_back.input_grad.values[k];

  auto enc_back =
      nn::mlp_backward(model.encoder.spec, model.encoder.params, enc_cache, dz);

  nn::adam_step(model.encoder.params, enc_back.grads, encoder_opt);
  nn::adam_step(model.feature_decoder.params, feat_back.grads, feat_opt);
  nn::adam_step(model.mask_decoder.params, mask_back.grads, mask_opt);
  return {loss.parts.mask_loss, loss.parts.feature_loss, loss.parts.total};
}

namespace {

// One BYOL direction: gradients of byol_loss(pred(proj(enc(x_online))),
// target_proj(target_enc(x_target))) w.r.t. the online parameters.
double byol_direction(ByolModel& model, const Matrix& x_online,
                      const Matrix& x_target, double grad_scale,
                      nn::ParamStore& enc_grads, nn::ParamStore& proj_grads,
                      nn::ParamStore& pred_grads) {
  nn::ForwardCache enc_cache, proj_cache, pred_cache;
  const Matrix z = nn::mlp_forward(model.online_encoder.spec,
                                   model.online_encoder.params, x_online,
                                   nn::RunMode::train, &enc_cache);
  const Matrix y = nn::mlp_forward(model.online_projector.spec,
                                   model.online_projector.params, z,
                                   nn::RunMode::train, &proj_cache);
  const Matrix prediction = nn::mlp_forward(model.predictor.spec,
                                            model.predictor.params, y,
                                            nn::RunMode::train, &pred_cache);

  // Stop-gradient branch: eval mode on const parameters, nothing flows back.
  const Matrix t_emb = nn::mlp_infer(model.target_encoder.spec,
                                     model.target_encoder.params, x_target);
  const Matrix target = nn::mlp_infer(model.target_projector.spec,
                                      model.target_projector.params, t_emb);

  ByolLossGrads loss = byol_loss_with_grads(prediction, target);
  Matrix dpred = loss.dprediction;
  if (grad_scale != 1.0)
    for (double& v : dpred.values) v *= grad_scale;

  auto pred_back = nn::mlp_backward(model.predictor.spec, model.predictor.params,
                                    pred_cache, dpred);
  auto proj_back = nn::mlp_backward(model.online_projector.spec,
                                    model.online_projector.params, proj_cache,
                                    pred_back.input_grad);
  auto enc_back = nn::mlp_backward(model.online_encoder.spec,
                                   model.online_encoder.params, enc_cache,
                                   proj_back.input_grad);
  nn::add_grads(pred_grads, pred_back.grads);
  nn::add_grads(proj_grads, proj_back.grads);
  nn::add_grads(enc_grads, enc_back.grads);
  return loss.loss;
}

}  // namespace

double byol_step(ByolModel& model, const Matrix& batch,
                 const data::EmpiricalMarginals& marginals, double p_m, Rng& rng,
                 nn::AdamState& encoder_opt, nn::AdamState& projector_opt,
                 nn::AdamState& predictor_opt) {
  if (batch.rows == 0) fail(ErrorKind::contract, "byol_step: empty batch");

  const Matrix corrupted =
      augment::vime_corrupt(batch, marginals, p_m, rng).first;
  const Matrix* online_view = &batch;
  Matrix online_corrupted;
  if (model.corrupt_both) {
    online_corrupted = augment::vime_corrupt(batch, marginals, p_m, rng).first;
    online_view = &online_corrupted;
  }

  nn::ParamStore enc_grads = nn::zeros_like(model.online_encoder.params);
  nn::ParamStore proj_grads = nn::zeros_like(model.online_projector.params);
  nn::ParamStore pred_grads = nn::zeros_like(model.predictor.params);

  const double scale = model.symmetrize ? 0.5 : 1.0;
  double loss = scale * byol_direction(model, *online_view, corrupted, scale,
                                       enc_grads, proj_grads, pred_grads);
  if (model.symmetrize)
    loss += scale * byol_direction(model, corrupted, *online_view, scale,
                                   enc_grads, proj_grads, pred_grads);

  nn::adam_step(model.online_encoder.params, enc_grads, encoder_opt);
  nn::adam_step(model.online_projector.params, proj_grads, projector_opt);
  nn::adam_step(model.predictor.params, pred_grads, predictor_opt);

  ema_update(model.online_encoder.params, model.target_encoder.params,
             model.ema_decay);
  ema_update(model.online_projector.params, model.target_projector.params,
             model.ema_decay);
  return loss;
}

PretrainResult pretrain(const data::DataTable& table,
                        const nn::MlpSpec& encoder_spec,
                        const PretextConfig& config) {
  if (table.size() == 0) fail(ErrorKind::contract, "pretrain: empty table");
  if (config.batch_size < 2)
    fail(ErrorKind::contract, "pretrain: batch_size must be >= 2");
  const auto t0 = std::chrono::steady_clock::now();

  const data::EmpiricalMarginals pools = data::marginals(table);
  Rng rng(seed_mix(config.seed, "pretrain", method_name(config.method)));
  const Rng corruption_base(config.corruption_seed != 0
                                ? config.corruption_seed
                                : seed_mix(rng.seed(), "corruption"));

  ScarfModel scarf;
  VimeModel vime;
  ByolModel byol;
  nn::AdamState opt_a, opt_b, opt_c;
  switch (config.method) {
    case PretextMethod::scarf:
      scarf = make_scarf(encoder_spec, rng, config.tau, config.variant);
      opt_a = nn::make_adam(scarf.encoder.params, config.learning_rate);
      opt_b = nn::make_adam(scarf.projector.params, config.learning_rate);
      break;
    case PretextMethod::vime:
      vime = make_vime(encoder_spec, table.dim(), rng, config.alpha,
                       config.masked_only_mse);
      opt_a = nn::make_adam(vime.encoder.params, config.learning_rate);
      opt_b = nn::make_adam(vime.feature_decoder.params, config.learning_rate);
      opt_c = nn::make_adam(vime.mask_decoder.params, config.learning_rate);
      break;
    case PretextMethod::byol:
      byol = make_byol(encoder_spec, rng, config.ema_decay, config.symmetrize,
                       config.corrupt_both);
      opt_a = nn::make_adam(byol.online_encoder.params, config.learning_rate);
      opt_b = nn::make_adam(byol.online_projector.params, config.learning_rate);
      opt_c = nn::make_adam(byol.predictor.params, config.learning_rate);
      break;
  }

  PretrainReport report;
  std::vector<std::size_t> order(table.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng = rng.split("epoch_shuffle", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double epoch_loss = 0.0, epoch_mask = 0.0, epoch_feat = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      if (count < 2) break;  // drop trailing singleton batch
      Matrix batch(count, table.dim());
      for (std::size_t r = 0; r < count; ++r)
        std::copy_n(table.features.row_ptr(order[start + r]), table.dim(),
                    batch.row_ptr(r));

      Rng batch_rng = corruption_base.split("batch", epoch, batches);
      switch (config.method) {
        case PretextMethod::scarf:
          epoch_loss += scarf_step(scarf, batch, pools, config.corruption_fraction,
                                   batch_rng, opt_a, opt_b);
          break;
        case PretextMethod::vime: {
          const VimeStepResult r = vime_step(vime, batch, pools,
                                             config.mask_probability, batch_rng,
                                             opt_a, opt_b, opt_c);
          epoch_loss += r.total;
          epoch_mask += r.mask_loss;
          epoch_feat += r.feature_loss;
          break;
        }
        case PretextMethod::byol:
          epoch_loss += byol_step(byol, batch, pools, config.mask_probability,
                                  batch_rng, opt_a, opt_b, opt_c);
          break;
      }
      ++batches;
    }
    if (batches == 0)
      fail(ErrorKind::contract, "pretrain: table too small for batch_size ",
           config.batch_size);
    epoch_loss /= static_cast<double>(batches);
    if (!std::isfinite(epoch_loss))
      fail(ErrorKind::numeric, "pretrain: non-finite loss at epoch ", epoch);
    report.epoch_loss.push_back(epoch_loss);
    if (config.method == PretextMethod::vime) {
      report.epoch_mask_loss.push_back(epoch_mask / static_cast<double>(batches));
      report.epoch_feature_loss.push_back(epoch_feat / static_cast<double>(batches));
    }
  }

  PretrainResult result;
  switch (config.method) {
    case PretextMethod::scarf: result.encoder = std::move(scarf.encoder); break;
    case PretextMethod::vime: result.encoder = std::move(vime.encoder); break;
    case PretextMethod::byol: result.encoder = std::move(byol.online_encoder); break;
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ostringstream summary;
  summary << "method=" << method_name(config.method) << " epochs=" << config.epochs
          << " batch_size=" << config.batch_size << " lr=" << config.learning_rate
          << " seed=" << config.seed;
  report.config_summary = summary.str();
  report.encoder_checksum =
      encoder_checksum(result.encoder.spec, result.encoder.params);
  result.report = std::move(report);
  return result;
}

}  // namespace tssl::pretext
