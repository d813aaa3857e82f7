#pragma once

#include <string>
#include <vector>

#include "tssl/augment.hpp"
#include "tssl/data.hpp"
#include "tssl/nn.hpp"

namespace tssl::pretext {

enum class PretextMethod { scarf, vime, byol };
PretextMethod method_from_string(const std::string& name);
const char* method_name(PretextMethod method);

/// Eq-level choice for the contrastive denominator: standard_infonce keeps
/// the positive pair in the sum, as_printed excludes it.
enum class InfoNceVariant { standard_infonce, as_printed };

/// Contrastive loss over cosine similarities between paired projections.
/// N >= 2 and no zero-norm rows.
double info_nce(const Matrix& q, const Matrix& q_tilde, double tau,
                InfoNceVariant variant);

struct InfoNceGrads {
  double loss = 0.0;
  Matrix dq, dq_tilde;
};
InfoNceGrads info_nce_with_grads(const Matrix& q, const Matrix& q_tilde,
                                 double tau, InfoNceVariant variant);

/// Mean over rows of 2 - 2·cos(prediction_i, target_i); range [0,4].
double byol_loss(const Matrix& prediction, const Matrix& target_proj);

struct ByolLossGrads {
  double loss = 0.0;
  Matrix dprediction;  // target branch is stop-gradient
};
ByolLossGrads byol_loss_with_grads(const Matrix& prediction,
                                   const Matrix& target_proj);

struct VimeLossParts {
  double mask_loss = 0.0;     // L_m, mean binary cross-entropy
  double feature_loss = 0.0;  // L_f, mean squared error
  double total = 0.0;         // L_m + alpha * L_f
};

/// mask_pred entries are clamped to [1e-7, 1-1e-7] before the cross-entropy.
VimeLossParts vime_losses(const Matrix& x, const augment::MaskMatrix& mask,
                          const Matrix& feat_pred, const Matrix& mask_pred,
                          double alpha, bool masked_only_mse = false);

struct VimeLossGrads {
  VimeLossParts parts;
  Matrix dfeat_pred, dmask_pred;
};
VimeLossGrads vime_losses_with_grads(const Matrix& x, const augment::MaskMatrix& mask,
                                     const Matrix& feat_pred, const Matrix& mask_pred,
                                     double alpha, bool masked_only_mse = false);

/// target <- lambda * target + (1 - lambda) * online, elementwise over every
/// array including batch-norm running statistics. online is untouched.
void ema_update(const nn::ParamStore& online, nn::ParamStore& target, double lambda);

// ---------------------------------------------------------------------------
// Method-specific parameter bundles sharing an encoder.

struct ScarfModel {
  nn::MlpModule encoder;
  nn::MlpModule projector;  // 2-layer ReLU net, hidden dim 256
  double tau = 1.0;
  InfoNceVariant variant = InfoNceVariant::standard_infonce;
};

struct VimeModel {
  nn::MlpModule encoder;
  nn::MlpModule feature_decoder;  // mirrors the encoder, output dim = input dim
  nn::MlpModule mask_decoder;     // same shape; sigmoid applied at the loss
  double alpha = 1.0;
  bool masked_only_mse = false;
};

inline constexpr std::size_t kByolProjectorHidden = 4096;
inline constexpr std::size_t kByolProjectorOut = 256;

struct ByolModel {
  nn::MlpModule online_encoder;
  nn::MlpModule online_projector;  // linear->4096->batchnorm->ReLU->linear->256
  nn::MlpModule predictor;         // same shape as the projector
  nn::MlpModule target_encoder;    // never receives gradients
  nn::MlpModule target_projector;
  double ema_decay = 0.99;  // lambda
  bool symmetrize = false;
  bool corrupt_both = false;
};

ScarfModel make_scarf(const nn::MlpSpec& encoder_spec, Rng& rng, double tau,
                      InfoNceVariant variant);
VimeModel make_vime(const nn::MlpSpec& encoder_spec, std::size_t input_dim,
                    Rng& rng, double alpha, bool masked_only_mse);
/// Target branch starts as an exact copy of the online branch.
ByolModel make_byol(const nn::MlpSpec& encoder_spec, Rng& rng, double ema_decay,
                    bool symmetrize, bool corrupt_both);

// ---------------------------------------------------------------------------
// Single optimization steps. Each consumes one batch, applies one joint Adam
// update, and returns the batch loss.

double scarf_step(ScarfModel& model, const Matrix& batch,
                  const data::EmpiricalMarginals& marginals, double c, Rng& rng,
                  nn::AdamState& encoder_opt, nn::AdamState& projector_opt);

/// Step on pre-built views; scarf_step corrupts then delegates here. Exposed
/// so tests can compare loss before/after on identical views.
double scarf_step_on_views(ScarfModel& model, const Matrix& x,
                           const Matrix& x_tilde, nn::AdamState& encoder_opt,
                           nn::AdamState& projector_opt);

/// Train-mode loss of the SCARF graph on given views without touching the
/// model (parameters copied internally).
double scarf_loss_on_views(const ScarfModel& model, const Matrix& x,
                           const Matrix& x_tilde);

struct VimeStepResult {
  double mask_loss = 0.0;
  double feature_loss = 0.0;
  double total = 0.0;
};
VimeStepResult vime_step(VimeModel& model, const Matrix& batch,
                         const data::EmpiricalMarginals& marginals, double p_m,
                         Rng& rng, nn::AdamState& encoder_opt,
                         nn::AdamState& feat_opt, nn::AdamState& mask_opt);

/// Online path q(g(e(x))) in train mode; target path g_xi(e_xi(x_tilde))
/// evaluated without gradient tracking, in eval mode; Adam on the online
/// parameters only, then the EMA update.
double byol_step(ByolModel& model, const Matrix& batch,
                 const data::EmpiricalMarginals& marginals, double p_m, Rng& rng,
                 nn::AdamState& encoder_opt, nn::AdamState& projector_opt,
                 nn::AdamState& predictor_opt);

// ---------------------------------------------------------------------------
// Full pretraining runs.

struct PretextConfig {
  PretextMethod method = PretextMethod::scarf;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double tau = 1.0;
  InfoNceVariant variant = InfoNceVariant::standard_infonce;
  double alpha = 1.0;
  bool masked_only_mse = false;
  double ema_decay = 0.99;
  bool symmetrize = false;
  bool corrupt_both = false;
  double corruption_fraction = 0.3;
  double mask_probability = 0.3;
  std::uint64_t seed = 0;
  std::uint64_t corruption_seed = 0;  // 0 = derive the stream from seed
};

struct PretrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_mask_loss;     // VIME only
  std::vector<double> epoch_feature_loss;  // VIME only
  double wall_seconds = 0.0;
  std::string config_summary;
  std::uint64_t encoder_checksum = 0;
};

struct PretrainResult {
  nn::MlpModule encoder;  // projectors/decoders/predictor are discarded
  PretrainReport report;
};

/// Runs config.epochs of the method's step over shuffled batches of the
/// (label-ignored) table. Trailing singleton batches are dropped. A
/// non-finite epoch loss aborts with the epoch index.
PretrainResult pretrain(const data::DataTable& table,
                        const nn::MlpSpec& encoder_spec,
                        const PretextConfig& config);

}  // namespace tssl::pretext
