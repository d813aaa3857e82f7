#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "tssl/checkpoint.hpp"
#include "tssl/grad_check.hpp"
#include "tssl/pretext.hpp"

using namespace tssl;
using namespace tssl::pretext;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values) v = rng.normal();
  return m;
}

data::DataTable small_corpus(std::size_t n, std::size_t d, std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.n_classes = 2;
  spec.n_features = d;
  spec.n_redundant_groups = std::max<std::size_t>(1, d / 4);
  spec.samples_per_class = n / 2;
  spec.seed = seed;
  return data::synthetic_corpus(spec);
}

Matrix orthonormal_pair() {
  Matrix q(2, 2);
  q.values = {1.0, 0.0, 0.0, 1.0};
  return q;
}

}  // namespace

TEST_CASE("info_nce standard variant on the orthonormal N=2 example") {
  const Matrix q = orthonormal_pair();
  // Direct formula evaluation: per row -log(e / (e + e^0)).
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  const double loss = info_nce(q, q, 1.0, InfoNceVariant::standard_infonce);
  CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(std::fabs(loss - 0.3133) <= 1e-3);
}

TEST_CASE("info_nce as-printed variant excludes the positive pair") {
  const Matrix q = orthonormal_pair();
  // Denominator holds only the k != i term: -log(e^1 / e^0) = -1 per row.
  const double loss = info_nce(q, q, 1.0, InfoNceVariant::as_printed);
  CHECK(loss == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("info_nce is invariant to positive row scaling") {
  Rng rng(31);
  const Matrix q = random_matrix(5, 7, rng);
  const Matrix q_tilde = random_matrix(5, 7, rng);
  for (const auto variant :
       {InfoNceVariant::standard_infonce, InfoNceVariant::as_printed}) {
    const double base = info_nce(q, q_tilde, 0.7, variant);
    Matrix qs = q, ts = q_tilde;
    for (std::size_t i = 0; i < qs.rows; ++i) {
      const double a = 0.1 + 3.0 * static_cast<double>(i);
      const double b = 5.0 / (1.0 + static_cast<double>(i));
      for (std::size_t j = 0; j < qs.cols; ++j) {
        qs(i, j) *= a;
        ts(i, j) *= b;
      }
    }
    CHECK(info_nce(qs, ts, 0.7, variant) == doctest::Approx(base).epsilon(1e-10));
  }
}

TEST_CASE("info_nce rejects zero-norm rows naming the row, and N<2") {
  Matrix q = orthonormal_pair();
  Matrix bad = q;
  bad(1, 0) = 0.0;
  bad(1, 1) = 0.0;
  try {
    info_nce(q, bad, 1.0, InfoNceVariant::standard_infonce);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numeric);
    CHECK(std::string(e.what()).find("row 1") != std::string::npos);
  }
  Matrix single(1, 2);
  single.values = {1.0, 0.0};
  CHECK_THROWS_AS(info_nce(single, single, 1.0, InfoNceVariant::standard_infonce),
                  Error);
}

TEST_CASE("standard_infonce over the circle is minimized at q_tilde = q") {
  // q = antipodal unit pair, the N=2 configuration whose global optimum is
  // the aligned one. (For an orthonormal q the optimum moves away from
  // alignment: the cross-pair repulsion term dominates.) Grid search both
  // q_tilde angles and confirm the minimum sits exactly at q_tilde = q.
  Matrix q(2, 2);
  q.values = {1.0, 0.0, -1.0, 0.0};
  const int steps = 72;
  double best = std::numeric_limits<double>::infinity();
  double best_a = 0.0, best_b = 0.0;
  for (int ia = 0; ia < steps; ++ia)
    for (int ib = 0; ib < steps; ++ib) {
      const double a = 2.0 * M_PI * ia / steps;
      const double b = 2.0 * M_PI * ib / steps;
      Matrix qt(2, 2);
      qt.values = {std::cos(a), std::sin(a), std::cos(b), std::sin(b)};
      const double loss = info_nce(q, qt, 1.0, InfoNceVariant::standard_infonce);
      if (loss < best) {
        best = loss;
        best_a = a;
        best_b = b;
      }
    }
  CHECK(best_a == doctest::Approx(0.0).epsilon(1e-9));      // row 0 -> (1,0)
  CHECK(best_b == doctest::Approx(M_PI).epsilon(1e-9));     // row 1 -> (-1,0)
  CHECK(best == doctest::Approx(info_nce(q, q, 1.0,
                                         InfoNceVariant::standard_infonce)));
}

TEST_CASE("info_nce gradients match finite differences in both arguments") {
  Rng rng(32);
  for (const auto variant :
       {InfoNceVariant::standard_infonce, InfoNceVariant::as_printed}) {
    const Matrix q = random_matrix(6, 5, rng);
    const Matrix q_tilde = random_matrix(6, 5, rng);
    const double tau = 0.8;
    const InfoNceGrads grads = info_nce_with_grads(q, q_tilde, tau, variant);
    const double err_q = nn::grad_check_matrix(
        [&](const Matrix& m) { return info_nce(m, q_tilde, tau, variant); },
        grads.dq, q, 1e-5, 7);
    const double err_t = nn::grad_check_matrix(
        [&](const Matrix& m) { return info_nce(q, m, tau, variant); },
        grads.dq_tilde, q_tilde, 1e-5, 8);
    CHECK(err_q <= 1e-4);
    CHECK(err_t <= 1e-4);
  }
}

TEST_CASE("byol_loss hits 0 / 2 / 4 on aligned, orthogonal and antiparallel rows") {
  Matrix pred(1, 2), target(1, 2);
  pred.values = {3.0, 0.0};
  target.values = {0.5, 0.0};  // same direction, different scale
  CHECK(byol_loss(pred, target) == doctest::Approx(0.0).epsilon(1e-12));
  target.values = {0.0, 2.0};
  CHECK(byol_loss(pred, target) == doctest::Approx(2.0).epsilon(1e-12));
  target.values = {-1.0, 0.0};
  CHECK(byol_loss(pred, target) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("byol_loss stays in [0,4] and matches finite differences") {
  Rng rng(33);
  for (int rep = 0; rep < 10; ++rep) {
    const Matrix pred = random_matrix(4, 6, rng);
    const Matrix target = random_matrix(4, 6, rng);
    const double loss = byol_loss(pred, target);
    CHECK(loss >= 0.0);
    CHECK(loss <= 4.0);
    const ByolLossGrads grads = byol_loss_with_grads(pred, target);
    const double err = nn::grad_check_matrix(
        [&](const Matrix& m) { return byol_loss(m, target); }, grads.dprediction,
        pred, 1e-5, static_cast<std::uint64_t>(rep));
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("vime_losses: perfect features and 0.5 mask predictions give ln 2") {
  Rng rng(34);
  const Matrix x = random_matrix(4, 6, rng);
  augment::MaskMatrix mask(4, 6);
  for (std::size_t k = 0; k < mask.values.size(); ++k)
    mask.values[k] = static_cast<std::uint8_t>(k % 2);
  Matrix mask_pred(4, 6);
  for (double& v : mask_pred.values) v = 0.5;
  const VimeLossParts parts = vime_losses(x, mask, x, mask_pred, 1.0);
  CHECK(parts.feature_loss == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::fabs(parts.mask_loss - std::log(2.0)) <= 1e-12);
  CHECK(std::fabs(parts.total - std::log(2.0)) <= 1e-6);
}

TEST_CASE("vime_losses: alpha=0 reduces the total to the mask loss") {
  Rng rng(35);
  const Matrix x = random_matrix(3, 4, rng);
  const Matrix feat_pred = random_matrix(3, 4, rng);
  augment::MaskMatrix mask(3, 4);
  Matrix mask_pred(3, 4);
  for (double& v : mask_pred.values) v = 0.25;
  const VimeLossParts parts = vime_losses(x, mask, feat_pred, mask_pred, 0.0);
  CHECK(parts.total == parts.mask_loss);
}

TEST_CASE("vime_losses: perfect clamped predictions are within 1e-6 of zero") {
  Rng rng(36);
  const Matrix x = random_matrix(3, 5, rng);
  augment::MaskMatrix mask(3, 5);
  for (std::size_t k = 0; k < mask.values.size(); ++k)
    mask.values[k] = static_cast<std::uint8_t>((k + 1) % 2);
  Matrix mask_pred(3, 5);
  for (std::size_t k = 0; k < mask_pred.values.size(); ++k)
    mask_pred.values[k] = mask.values[k] ? 1.0 : 0.0;  // gets clamped inside
  const VimeLossParts parts = vime_losses(x, mask, x, mask_pred, 1.0);
  CHECK(parts.total <= 1e-6);
}

TEST_CASE("vime_losses gradients match finite differences") {
  Rng rng(37);
  const Matrix x = random_matrix(4, 5, rng);
  const Matrix feat_pred = random_matrix(4, 5, rng);
  augment::MaskMatrix mask(4, 5);
  for (std::size_t k = 0; k < mask.values.size(); ++k)
    mask.values[k] = static_cast<std::uint8_t>(k % 3 == 0);
  Matrix mask_pred(4, 5);
  for (double& v : mask_pred.values) v = 0.2 + 0.6 * rng.uniform();

  for (const bool masked_only : {false, true}) {
    const VimeLossGrads grads =
        vime_losses_with_grads(x, mask, feat_pred, mask_pred, 0.7, masked_only);
    const double err_f = nn::grad_check_matrix(
        [&](const Matrix& m) {
          return vime_losses(x, mask, m, mask_pred, 0.7, masked_only).total;
        },
        grads.dfeat_pred, feat_pred, 1e-5, 1);
    const double err_m = nn::grad_check_matrix(
        [&](const Matrix& m) {
          return vime_losses(x, mask, feat_pred, m, 0.7, masked_only).total;
        },
        grads.dmask_pred, mask_pred, 1e-6, 2);
    CHECK(err_f <= 1e-4);
    CHECK(err_m <= 1e-4);
  }
}

TEST_CASE("ema_update: lambda boundaries and the scalar midpoint") {
  nn::MlpSpec spec{1, {1}, false, nn::Activation::identity, false};
  Rng rng(38);
  nn::ParamStore online = nn::init_params(spec, rng);
  nn::ParamStore target = nn::init_params(spec, rng);
  online.dense[0].weight.values[0] = 4.0;
  target.dense[0].weight.values[0] = 2.0;

  nn::ParamStore t1 = target;
  ema_update(online, t1, 1.0);
  CHECK(t1.dense[0].weight.values[0] == 2.0);  // unchanged

  nn::ParamStore t0 = target;
  ema_update(online, t0, 0.0);
  CHECK(t0.dense[0].weight.values[0] == 4.0);  // exact copy

  nn::ParamStore th = target;
  ema_update(online, th, 0.5);
  CHECK(th.dense[0].weight.values[0] == doctest::Approx(3.0));
  CHECK(online.dense[0].weight.values[0] == 4.0);  // online untouched
}

TEST_CASE("scarf_step decreases the loss on the same views in most trials") {
  std::size_t improved = 0;
  const int trials = 50;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(1000 + static_cast<std::uint64_t>(trial));
    nn::MlpSpec enc_spec{6, {16, 16}, true, nn::Activation::relu, false};
    ScarfModel model = make_scarf(enc_spec, rng, 1.0,
                                  InfoNceVariant::standard_infonce);
    const auto table = small_corpus(16, 6, 2000 + static_cast<std::uint64_t>(trial));
    const auto pools = data::marginals(table);
    Matrix batch(8, 6);
    for (std::size_t r = 0; r < 8; ++r)
      std::copy_n(table.features.row_ptr(r), 6, batch.row_ptr(r));
    const Matrix x_tilde = augment::scarf_corrupt(batch, pools, 0.3, rng);

    const double before = scarf_loss_on_views(model, batch, x_tilde);
    nn::AdamState enc_opt = nn::make_adam(model.encoder.params, 1e-3);
    nn::AdamState proj_opt = nn::make_adam(model.projector.params, 1e-3);
    scarf_step_on_views(model, batch, x_tilde, enc_opt, proj_opt);
    const double after = scarf_loss_on_views(model, batch, x_tilde);
    if (after <= before) ++improved;
  }
  CHECK(improved >= 40);  // >= 80% of 50 trials
}

TEST_CASE("scarf_step rejects singleton batches; zero lr keeps parameters") {
  Rng rng(39);
  nn::MlpSpec enc_spec{4, {4}, false, nn::Activation::relu, false};
  ScarfModel model = make_scarf(enc_spec, rng, 1.0, InfoNceVariant::standard_infonce);
  const auto table = small_corpus(8, 4, 40);
  const auto pools = data::marginals(table);

  Matrix one(1, 4);
  std::copy_n(table.features.row_ptr(0), 4, one.row_ptr(0));
  nn::AdamState enc_opt = nn::make_adam(model.encoder.params, 1e-3);
  nn::AdamState proj_opt = nn::make_adam(model.projector.params, 1e-3);
  Rng step_rng(41);
  CHECK_THROWS_AS(scarf_step(model, one, pools, 0.3, step_rng, enc_opt, proj_opt),
                  Error);

  Matrix batch(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    std::copy_n(table.features.row_ptr(r), 4, batch.row_ptr(r));
  nn::AdamState enc_zero = nn::make_adam(model.encoder.params, 0.0);
  nn::AdamState proj_zero = nn::make_adam(model.projector.params, 0.0);
  const auto enc_before = nn::param_bytes(model.encoder.params);
  const auto proj_before = nn::param_bytes(model.projector.params);
  scarf_step(model, batch, pools, 0.3, step_rng, enc_zero, proj_zero);
  // Weights and biases are untouched at lr=0; only batch-norm running stats
  // may move, and this encoder has none.
  CHECK(nn::param_bytes(model.encoder.params) == enc_before);
  CHECK(nn::param_bytes(model.projector.params) == proj_before);
}

TEST_CASE("scarf gradients through the full graph match finite differences") {
  Rng rng(42);
  nn::MlpSpec enc_spec{5, {8, 12}, true, nn::Activation::relu, false};
  ScarfModel model = make_scarf(enc_spec, rng, 0.9, InfoNceVariant::standard_infonce);
  const Matrix x = random_matrix(5, 5, rng);
  const Matrix x_tilde = random_matrix(5, 5, rng);

  // Analytic gradients assembled from the public primitives, exactly as the
  // step function chains them.
  auto compute = [&](const nn::ParamStore& enc_params,
                     const nn::ParamStore& proj_params) {
    nn::ParamStore enc = enc_params, proj = proj_params;
    nn::ForwardCache ea, eb, pa, pb;
    const Matrix z = nn::mlp_forward(model.encoder.spec, enc, x, nn::RunMode::train, &ea);
    const Matrix zt = nn::mlp_forward(model.encoder.spec, enc, x_tilde,
                                      nn::RunMode::train, &eb);
    const Matrix q = nn::mlp_forward(model.projector.spec, proj, z,
                                     nn::RunMode::train, &pa);
    const Matrix qt = nn::mlp_forward(model.projector.spec, proj, zt,
                                      nn::RunMode::train, &pb);
    InfoNceGrads loss = info_nce_with_grads(q, qt, model.tau, model.variant);
    auto proj_a = nn::mlp_backward(model.projector.spec, proj, pa, loss.dq);
    auto proj_b = nn::mlp_backward(model.projector.spec, proj, pb, loss.dq_tilde);
    nn::add_grads(proj_a.grads, proj_b.grads);
    auto enc_a = nn::mlp_backward(model.encoder.spec, enc, ea, proj_a.input_grad);
    auto enc_b = nn::mlp_backward(model.encoder.spec, enc, eb, proj_b.input_grad);
    nn::add_grads(enc_a.grads, enc_b.grads);
    return std::tuple{loss.loss, std::move(enc_a.grads), std::move(proj_a.grads)};
  };
  auto [loss, enc_grads, proj_grads] = compute(model.encoder.params,
                                               model.projector.params);

  const double err_enc = nn::grad_check(
      [&](const nn::ParamStore& p) {
        return std::get<0>(compute(p, model.projector.params));
      },
      enc_grads, model.encoder.params, 1e-5, 43);
  const double err_proj = nn::grad_check(
      [&](const nn::ParamStore& p) {
        return std::get<0>(compute(model.encoder.params, p));
      },
      proj_grads, model.projector.params, 1e-5, 44);
  CHECK(err_enc <= 1e-4);
  CHECK(err_proj <= 1e-4);
}

TEST_CASE("vime_step losses are reproducible and match a manual recomputation") {
  auto run = [](std::uint64_t seed) {
    Rng rng(45);
    nn::MlpSpec enc_spec{6, {8, 4}, true, nn::Activation::relu, false};
    VimeModel model = make_vime(enc_spec, 6, rng, 1.0, false);
    const auto table = small_corpus(12, 6, 46);
    const auto pools = data::marginals(table);
    Matrix batch(6, 6);
    for (std::size_t r = 0; r < 6; ++r)
      std::copy_n(table.features.row_ptr(r), 6, batch.row_ptr(r));
    nn::AdamState a = nn::make_adam(model.encoder.params, 1e-3);
    nn::AdamState b = nn::make_adam(model.feature_decoder.params, 1e-3);
    nn::AdamState c = nn::make_adam(model.mask_decoder.params, 1e-3);
    std::vector<double> losses;
    Rng step_rng(seed);
    for (int step = 0; step < 3; ++step)
      losses.push_back(vime_step(model, batch, pools, 0.3, step_rng, a, b, c).total);
    return losses;
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("vime_step with p_m=0 reconstructs the uncorrupted input") {
  Rng rng(47);
  nn::MlpSpec enc_spec{5, {6}, true, nn::Activation::relu, false};
  VimeModel model = make_vime(enc_spec, 5, rng, 1.0, false);
  const auto table = small_corpus(8, 5, 48);
  const auto pools = data::marginals(table);
  Matrix batch(4, 5);
  for (std::size_t r = 0; r < 4; ++r)
    std::copy_n(table.features.row_ptr(r), 5, batch.row_ptr(r));

  // Manual forward of the pre-step model on the uncorrupted batch.
  VimeModel copy = model;
  nn::ParamStore enc = copy.encoder.params;
  nn::ParamStore dec_f = copy.feature_decoder.params;
  nn::ParamStore dec_m = copy.mask_decoder.params;
  const Matrix z = nn::mlp_forward(copy.encoder.spec, enc, batch, nn::RunMode::train);
  const Matrix feat = nn::mlp_forward(copy.feature_decoder.spec, dec_f, z,
                                      nn::RunMode::train);
  Matrix mask_pred = nn::mlp_forward(copy.mask_decoder.spec, dec_m, z,
                                     nn::RunMode::train);
  for (double& v : mask_pred.values) v = 1.0 / (1.0 + std::exp(-v));
  const VimeLossParts expected =
      vime_losses(batch, augment::MaskMatrix(4, 5), feat, mask_pred, 1.0);

  nn::AdamState a = nn::make_adam(model.encoder.params, 1e-3);
  nn::AdamState b = nn::make_adam(model.feature_decoder.params, 1e-3);
  nn::AdamState c = nn::make_adam(model.mask_decoder.params, 1e-3);
  Rng step_rng(49);
  const VimeStepResult result =
      vime_step(model, batch, pools, 0.0, step_rng, a, b, c);
  CHECK(result.feature_loss == doctest::Approx(expected.feature_loss).epsilon(1e-12));
  CHECK(result.mask_loss == doctest::Approx(expected.mask_loss).epsilon(1e-12));
}

TEST_CASE("vime gradients through the full graph match finite differences") {
  Rng rng(50);
  nn::MlpSpec enc_spec{4, {5, 3}, true, nn::Activation::relu, false};
  VimeModel model = make_vime(enc_spec, 4, rng, 0.8, false);
  const Matrix x = random_matrix(4, 4, rng);
  augment::MaskMatrix mask(4, 4);
  Matrix x_tilde = x;
  Rng mask_rng(51);
  for (std::size_t k = 0; k < mask.values.size(); ++k)
    if (mask_rng.bernoulli(0.3)) {
      mask.values[k] = 1;
      x_tilde.values[k] += mask_rng.normal();
    }

  auto compute = [&](const nn::ParamStore& ep, const nn::ParamStore& fp,
                     const nn::ParamStore& mp) {
    nn::ParamStore enc = ep, dec_f = fp, dec_m = mp;
    nn::ForwardCache ec, fc, mc;
    const Matrix z = nn::mlp_forward(model.encoder.spec, enc, x_tilde,
                                     nn::RunMode::train, &ec);
    const Matrix feat = nn::mlp_forward(model.feature_decoder.spec, dec_f, z,
                                        nn::RunMode::train, &fc);
    Matrix logits = nn::mlp_forward(model.mask_decoder.spec, dec_m, z,
                                    nn::RunMode::train, &mc);
    Matrix mask_pred = logits;
    for (double& v : mask_pred.values) v = 1.0 / (1.0 + std::exp(-v));
    VimeLossGrads loss = vime_losses_with_grads(x, mask, feat, mask_pred,
                                                model.alpha, model.masked_only_mse);
    Matrix dlogits = loss.dmask_pred;
    for (std::size_t k = 0; k < dlogits.values.size(); ++k) {
      const double s = mask_pred.values[k];
      dlogits.values[k] *= s * (1.0 - s);
    }
    auto fb = nn::mlp_backward(model.feature_decoder.spec, dec_f, fc, loss.dfeat_pred);
    auto mb = nn::mlp_backward(model.mask_decoder.spec, dec_m, mc, dlogits);
    Matrix dz = fb.input_grad;
    for (std::size_t k = 0; k < dz.values.size(); ++k)
      dz.values[k] += mb.input_grad.values[k];
    auto eb = nn::mlp_backward(model.encoder.spec, enc, ec, dz);
    return std::tuple{loss.parts.total, std::move(eb.grads), std::move(fb.grads),
                      std::move(mb.grads)};
  };
  auto [loss, ge, gf, gm] = compute(model.encoder.params,
                                    model.feature_decoder.params,
                                    model.mask_decoder.params);

  const auto& e0 = model.encoder.params;
  const auto& f0 = model.feature_decoder.params;
  const auto& m0 = model.mask_decoder.params;
  CHECK(nn::grad_check([&](const nn::ParamStore& p) {
          return std::get<0>(compute(p, f0, m0));
        }, ge, e0, 1e-5, 52) <= 1e-4);
  CHECK(nn::grad_check([&](const nn::ParamStore& p) {
          return std::get<0>(compute(e0, p, m0));
        }, gf, f0, 1e-5, 53) <= 1e-4);
  CHECK(nn::grad_check([&](const nn::ParamStore& p) {
          return std::get<0>(compute(e0, f0, p));
        }, gm, m0, 1e-5, 54) <= 1e-4);
}

TEST_CASE("byol_step: target follows the lambda recursion over snapshots") {
  Rng rng(55);
  nn::MlpSpec enc_spec{5, {8, 12}, true, nn::Activation::relu, false};
  ByolModel model = make_byol(enc_spec, rng, 0.9, false, false);
  const auto table = small_corpus(12, 5, 56);
  const auto pools = data::marginals(table);
  Matrix batch(6, 5);
  for (std::size_t r = 0; r < 6; ++r)
    std::copy_n(table.features.row_ptr(r), 5, batch.row_ptr(r));

  nn::AdamState a = nn::make_adam(model.online_encoder.params, 1e-3);
  nn::AdamState b = nn::make_adam(model.online_projector.params, 1e-3);
  nn::AdamState c = nn::make_adam(model.predictor.params, 1e-3);

  nn::ParamStore expected_enc = model.target_encoder.params;
  nn::ParamStore expected_proj = model.target_projector.params;
  Rng step_rng(57);
  for (int step = 0; step < 5; ++step) {
    byol_step(model, batch, pools, 0.3, step_rng, a, b, c);
    // Reconstruct: lambda * previous target + (1-lambda) * post-step online.
    ema_update(model.online_encoder.params, expected_enc, model.ema_decay);
    ema_update(model.online_projector.params, expected_proj, model.ema_decay);

    const auto actual = nn::param_bytes(model.target_encoder.params);
    const auto expect = nn::param_bytes(expected_enc);
    CHECK(actual == expect);
    CHECK(nn::param_bytes(model.target_projector.params) ==
          nn::param_bytes(expected_proj));
  }
}

namespace {

std::vector<unsigned char> trainable_bytes(const nn::ParamStore& params) {
  std::vector<unsigned char> bytes;
  nn::for_each_trainable(params, [&](const std::vector<double>& a) {
    const auto* p = reinterpret_cast<const unsigned char*>(a.data());
    bytes.insert(bytes.end(), p, p + a.size() * sizeof(double));
  });
  return bytes;
}

}  // namespace

TEST_CASE("byol_step with lambda=1 and lr=0 leaves the model bit-identical") {
  Rng rng(58);
  nn::MlpSpec enc_spec{4, {4}, false, nn::Activation::relu, false};
  ByolModel model = make_byol(enc_spec, rng, 1.0, false, false);
  const auto table = small_corpus(8, 4, 59);
  const auto pools = data::marginals(table);
  Matrix batch(4, 4);
  for (std::size_t r = 0; r < 4; ++r)
    std::copy_n(table.features.row_ptr(r), 4, batch.row_ptr(r));

  nn::AdamState a = nn::make_adam(model.online_encoder.params, 0.0);
  nn::AdamState b = nn::make_adam(model.online_projector.params, 0.0);
  nn::AdamState c = nn::make_adam(model.predictor.params, 0.0);
  const auto oe = nn::param_bytes(model.online_encoder.params);
  const auto op = trainable_bytes(model.online_projector.params);
  const auto pr = trainable_bytes(model.predictor.params);
  const auto te = nn::param_bytes(model.target_encoder.params);
  const auto tp = nn::param_bytes(model.target_projector.params);
  Rng step_rng(60);
  byol_step(model, batch, pools, 0.3, step_rng, a, b, c);
  // Every optimized parameter is untouched at lr=0 and the whole target
  // branch (running statistics included) is frozen by lambda=1. The online
  // projector/predictor batch-norm running statistics are the only moving
  // state: they are batch statistics, never part of the optimizer's set.
  CHECK(nn::param_bytes(model.online_encoder.params) == oe);
  CHECK(trainable_bytes(model.online_projector.params) == op);
  CHECK(trainable_bytes(model.predictor.params) == pr);
  CHECK(nn::param_bytes(model.target_encoder.params) == te);
  CHECK(nn::param_bytes(model.target_projector.params) == tp);
}

TEST_CASE("byol online gradients match finite differences with the target fixed") {
  // Hand-assembled model with small heads: the full-width projector has tens
  // of thousands of ReLU kinks, which finite differences cannot straddle
  // cleanly. The graph and gradient chain are identical.
  Rng rng(61);
  nn::MlpSpec enc_spec{4, {8, 8}, true, nn::Activation::relu, false};
  nn::MlpSpec head_spec{8, {10, 6}, true, nn::Activation::relu, true};
  nn::MlpSpec pred_spec{6, {10, 6}, true, nn::Activation::relu, true};
  ByolModel model;
  model.online_encoder.spec = enc_spec;
  model.online_encoder.params = nn::init_params(enc_spec, rng);
  model.online_projector.spec = head_spec;
  model.online_projector.params = nn::init_params(head_spec, rng);
  model.predictor.spec = pred_spec;
  model.predictor.params = nn::init_params(pred_spec, rng);
  model.target_encoder = model.online_encoder;
  model.target_projector = model.online_projector;
  const Matrix x = random_matrix(4, 4, rng);
  const Matrix x_tilde = random_matrix(4, 4, rng);

  auto compute = [&](const nn::ParamStore& ep, const nn::ParamStore& pp,
                     const nn::ParamStore& qp) {
    nn::ParamStore enc = ep, proj = pp, pred = qp;
    nn::ForwardCache ec, pc, qc;
    const Matrix z = nn::mlp_forward(model.online_encoder.spec, enc, x,
                                     nn::RunMode::train, &ec);
    const Matrix y = nn::mlp_forward(model.online_projector.spec, proj, z,
                                     nn::RunMode::train, &pc);
    const Matrix prediction = nn::mlp_forward(model.predictor.spec, pred, y,
                                              nn::RunMode::train, &qc);
    const Matrix t_emb = nn::mlp_infer(model.target_encoder.spec,
                                       model.target_encoder.params, x_tilde);
    const Matrix target = nn::mlp_infer(model.target_projector.spec,
                                        model.target_projector.params, t_emb);
    ByolLossGrads loss = byol_loss_with_grads(prediction, target);
    auto qb = nn::mlp_backward(model.predictor.spec, pred, qc, loss.dprediction);
    auto pb = nn::mlp_backward(model.online_projector.spec, proj, pc, qb.input_grad);
    auto eb = nn::mlp_backward(model.online_encoder.spec, enc, ec, pb.input_grad);
    return std::tuple{loss.loss, std::move(eb.grads), std::move(pb.grads),
                      std::move(qb.grads)};
  };
  auto [loss, ge, gp, gq] = compute(model.online_encoder.params,
                                    model.online_projector.params,
                                    model.predictor.params);

  const auto& e0 = model.online_encoder.params;
  const auto& p0 = model.online_projector.params;
  const auto& q0 = model.predictor.params;
  CHECK(nn::grad_check([&](const nn::ParamStore& p) {
          return std::get<0>(compute(p, p0, q0));
        }, ge, e0, 1e-5, 62, 60) <= 1e-4);
  CHECK(nn::grad_check([&](const nn::ParamStore& p) {
          return std::get<0>(compute(e0, p, q0));
        }, gp, p0, 1e-5, 63, 60) <= 1e-4);
  CHECK(nn::grad_check([&](const nn::ParamStore& p) {
          return std::get<0>(compute(e0, p0, p));
        }, gq, q0, 1e-5, 64, 60) <= 1e-4);
}

TEST_CASE("byol symmetrize and corrupt_both variants train and keep the EMA law") {
  Rng rng(73);
  nn::MlpSpec enc_spec{5, {8, 12}, true, nn::Activation::relu, false};
  ByolModel model = make_byol(enc_spec, rng, 0.9, true, true);
  const auto table = small_corpus(12, 5, 74);
  const auto pools = data::marginals(table);
  Matrix batch(6, 5);
  for (std::size_t r = 0; r < 6; ++r)
    std::copy_n(table.features.row_ptr(r), 5, batch.row_ptr(r));

  nn::AdamState a = nn::make_adam(model.online_encoder.params, 1e-3);
  nn::AdamState b = nn::make_adam(model.online_projector.params, 1e-3);
  nn::AdamState c = nn::make_adam(model.predictor.params, 1e-3);
  nn::ParamStore expected_enc = model.target_encoder.params;
  Rng step_rng(75);
  for (int step = 0; step < 3; ++step) {
    const double loss = byol_step(model, batch, pools, 0.3, step_rng, a, b, c);
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
    CHECK(loss <= 4.0);
    ema_update(model.online_encoder.params, expected_enc, model.ema_decay);
    CHECK(nn::param_bytes(model.target_encoder.params) ==
          nn::param_bytes(expected_enc));
  }
}

TEST_CASE("pretrain with zero epochs returns the initialization") {
  const auto table = small_corpus(24, 6, 65);
  nn::MlpSpec spec{6, {8, 4}, true, nn::Activation::relu, false};
  PretextConfig config;
  config.method = PretextMethod::scarf;
  config.epochs = 0;
  config.batch_size = 8;
  config.seed = 66;
  const PretrainResult result = pretrain(table, spec, config);
  CHECK(result.report.epoch_loss.empty());

  // The encoder must equal a fresh SCARF initialization under the documented
  // seed derivation.
  Rng rng(seed_mix(config.seed, "pretrain", "scarf"));
  const ScarfModel fresh = make_scarf(spec, rng, config.tau, config.variant);
  CHECK(nn::param_bytes(result.encoder.params) ==
        nn::param_bytes(fresh.encoder.params));
}

TEST_CASE("pretrain improves the loss on a desk-scale corpus for every method") {
  const auto table = small_corpus(64, 8, 67);
  nn::MlpSpec spec{8, {16, 8}, true, nn::Activation::relu, false};
  for (const auto method :
       {PretextMethod::scarf, PretextMethod::vime, PretextMethod::byol}) {
    PretextConfig config;
    config.method = method;
    config.epochs = method == PretextMethod::byol ? 4 : 12;
    config.batch_size = 16;
    config.learning_rate = 1e-3;
    config.seed = 68;
    const PretrainResult result = pretrain(table, spec, config);
    REQUIRE(result.report.epoch_loss.size() == config.epochs);
    CHECK(result.report.epoch_loss.back() < result.report.epoch_loss.front());
  }
}

TEST_CASE("pretrain report checksum matches the checkpoint written to disk") {
  const auto table = small_corpus(24, 5, 69);
  nn::MlpSpec spec{5, {6}, true, nn::Activation::relu, false};
  PretextConfig config;
  config.method = PretextMethod::vime;
  config.epochs = 2;
  config.batch_size = 8;
  config.seed = 70;
  const PretrainResult result = pretrain(table, spec, config);

  const std::string path = "test_pretext_ckpt.tssl";
  save_encoder(path, result.encoder.spec, result.encoder.params);
  auto [loaded_spec, loaded_params] = load_encoder(path);
  CHECK(encoder_checksum(loaded_spec, loaded_params) ==
        result.report.encoder_checksum);
  std::remove(path.c_str());
}

TEST_CASE("byol model wiring matches the printed projector shape") {
  Rng rng(71);
  nn::MlpSpec enc_spec{7, {9, 5}, true, nn::Activation::relu, false};
  const ByolModel model = make_byol(enc_spec, rng, 0.99, false, false);
  CHECK(model.online_projector.spec.hidden_dims ==
        std::vector<std::size_t>{kByolProjectorHidden, kByolProjectorOut});
  CHECK(model.online_projector.spec.use_batchnorm);
  CHECK(model.online_projector.spec.plain_last);
  CHECK(model.predictor.spec.input_dim == kByolProjectorOut);
  CHECK(nn::param_bytes(model.target_encoder.params) ==
        nn::param_bytes(model.online_encoder.params));
  CHECK(nn::param_bytes(model.target_projector.params) ==
        nn::param_bytes(model.online_projector.params));
}

TEST_CASE("vime decoders mirror the encoder with output dim = input dim") {
  Rng rng(72);
  nn::MlpSpec enc_spec{10, {6, 6, 4}, true, nn::Activation::relu, false};
  const VimeModel model = make_vime(enc_spec, 10, rng, 1.0, false);
  CHECK(model.feature_decoder.spec.input_dim == 4);
  CHECK(model.feature_decoder.spec.hidden_dims ==
        std::vector<std::size_t>{6, 6, 10});
  CHECK(model.feature_decoder.spec.plain_last);
  CHECK(model.mask_decoder.spec.hidden_dims == std::vector<std::size_t>{6, 6, 10});
}
