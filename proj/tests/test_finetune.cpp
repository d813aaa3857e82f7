#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tssl/finetune.hpp"
#include "tssl/grad_check.hpp"

using namespace tssl;
using namespace tssl::finetune;

namespace {

nn::MlpModule small_encoder(std::size_t input_dim, std::uint64_t seed) {
  nn::MlpModule encoder;
  encoder.spec = nn::MlpSpec{input_dim, {8, 4}, true, nn::Activation::relu, false};
  Rng rng(seed);
  encoder.params = nn::init_params(encoder.spec, rng);
  return encoder;
}

nn::MlpModule identity_encoder(std::size_t dim) {
  nn::MlpModule encoder;
  encoder.spec = nn::MlpSpec{dim, {dim}, false, nn::Activation::identity, false};
  Rng rng(0);
  encoder.params = nn::init_params(encoder.spec, rng);
  encoder.params.dense[0].weight = Matrix::identity(dim);
  encoder.params.dense[0].bias.assign(dim, 0.0);
  return encoder;
}

// Two well-separated clusters: linearly separable by construction, so a
// perceptron (and hence logistic regression) can reach training accuracy 1.
data::DataTable separable_toy(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  data::DataTable table;
  table.features = Matrix(n, 2);
  table.feature_names = {"x", "y"};
  table.class_names = {"neg", "pos"};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const double cx = label == 0 ? -2.0 : 2.0;
    table.features(i, 0) = cx + 0.5 * rng.normal();
    table.features(i, 1) = rng.normal();
    table.labels.push_back(label);
  }
  return table;
}

}  // namespace

TEST_CASE("attach_head keeps the encoder and varies only the head with the seed") {
  const nn::MlpModule encoder = small_encoder(6, 1);
  const Classifier a = attach_head(encoder, 3, 10);
  const Classifier b = attach_head(encoder, 3, 11);
  CHECK(nn::param_bytes(a.encoder.params) == nn::param_bytes(encoder.params));
  CHECK(nn::param_bytes(b.encoder.params) == nn::param_bytes(encoder.params));
  CHECK(nn::param_bytes(a.head.params) != nn::param_bytes(b.head.params));
}

TEST_CASE("attach_head: 19 classes gives a 19-wide head; 1 class is rejected") {
  const nn::MlpModule encoder = small_encoder(6, 2);
  const Classifier clf = attach_head(encoder, 19, 0);
  CHECK(clf.head.spec.output_dim() == 19);
  CHECK(clf.n_classes() == 19);
  CHECK_THROWS_AS(attach_head(encoder, 1, 0), Error);
}

TEST_CASE("cross-entropy gradients match finite differences on 3-class batches") {
  Rng rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    Matrix logits(6, 3);
    for (double& v : logits.values) v = rng.normal();
    std::vector<int> labels(6);
    for (auto& label : labels) label = static_cast<int>(rng.index(3));
    const CrossEntropyGrads grads = softmax_cross_entropy(logits, labels);
    const double err = nn::grad_check_matrix(
        [&](const Matrix& m) { return softmax_cross_entropy_loss(m, labels); },
        grads.dlogits, logits, 1e-5, static_cast<std::uint64_t>(rep));
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("cross-entropy rejects out-of-range labels") {
  Matrix logits(2, 3);
  std::vector<int> labels = {0, 3};
  CHECK_THROWS_AS(softmax_cross_entropy(logits, labels), Error);
}

TEST_CASE("frozen fit never touches encoder parameters or running statistics") {
  const nn::MlpModule encoder = small_encoder(4, 4);
  const data::DataTable train = separable_toy(24, 5);
  // Reuse the toy generator but with 4 features via padding.
  data::DataTable train4;
  train4.features = Matrix(train.size(), 4);
  for (std::size_t i = 0; i < train.size(); ++i) {
    train4.features(i, 0) = train.features(i, 0);
    train4.features(i, 1) = train.features(i, 1);
  }
  train4.labels = train.labels;
  train4.feature_names = {"a", "b", "c", "d"};
  train4.class_names = train.class_names;
  const data::DataTable val = train4;

  Classifier clf = attach_head(encoder, 2, 6, FitMode::frozen);
  const auto before = nn::param_bytes(clf.encoder.params);
  FitConfig config;
  config.max_epochs = 10;
  config.patience = 10;
  config.seed = 7;
  fit(clf, train4, val, config);
  CHECK(nn::param_bytes(clf.encoder.params) == before);
}

TEST_CASE("fit reaches accuracy 1.0 on a linearly separable toy set") {
  const data::DataTable train = separable_toy(40, 8);
  const data::DataTable val = separable_toy(20, 9);
  Classifier clf = attach_head(identity_encoder(2), 2, 10, FitMode::frozen);
  FitConfig config;
  config.max_epochs = 100;
  config.patience = 100;
  config.learning_rate = 5e-2;
  config.seed = 11;
  fit(clf, train, val, config);
  const auto pred = predict(clf, train);
  CHECK(accuracy(pred, train.labels) == doctest::Approx(1.0));
}

TEST_CASE("patience equal to max_epochs never stops early") {
  const data::DataTable train = separable_toy(16, 12);
  Classifier clf = attach_head(identity_encoder(2), 2, 13);
  FitConfig config;
  config.max_epochs = 12;
  config.patience = 12;
  config.learning_rate = 0.0;  // validation loss can never improve
  config.seed = 14;
  const FitReport report = fit(clf, train, train, config);
  CHECK(report.stop_epoch == 12);
}

TEST_CASE("patience zero is rejected") {
  FitConfig config;
  config.patience = 0;
  CHECK_THROWS_AS(config.validate(), Error);
  config.patience = 101;
  config.max_epochs = 100;
  CHECK_THROWS_AS(config.validate(), Error);
}

TEST_CASE("early stopping restores the epoch with minimal validation loss") {
  Rng rng(15);
  data::DataTable train = separable_toy(30, 16);
  // Inject label noise so the validation loss is non-monotone.
  for (std::size_t i = 0; i < 6; ++i) train.labels[i] = 1 - train.labels[i];
  const data::DataTable val = separable_toy(20, 17);

  Classifier clf = attach_head(identity_encoder(2), 2, 18);
  FitConfig config;
  config.max_epochs = 40;
  config.patience = 5;
  config.learning_rate = 5e-2;
  config.seed = 19;
  const FitReport report = fit(clf, train, val, config);
  REQUIRE(report.restored_best);

  // The restored parameters must reproduce the minimal recorded val loss.
  const Matrix emb = nn::mlp_infer(clf.encoder.spec, clf.encoder.params, val.features);
  const Matrix logits = nn::mlp_infer(clf.head.spec, clf.head.params, emb);
  const double restored_loss = softmax_cross_entropy_loss(logits, val.labels);
  const double min_loss = *std::min_element(report.val_loss.begin(),
                                            report.val_loss.end());
  CHECK(restored_loss == doctest::Approx(min_loss).epsilon(1e-12));
}

TEST_CASE("lr=0 fits leave predictions at their initialization for both modes") {
  const data::DataTable train = separable_toy(20, 20);
  for (const auto mode : {FitMode::frozen, FitMode::unfrozen}) {
    const nn::MlpModule encoder = small_encoder(2, 21);
    Classifier clf = attach_head(encoder, 2, 22, mode);
    const auto initial = predict(clf, train);
    FitConfig config;
    config.max_epochs = 5;
    config.patience = 5;
    config.learning_rate = 0.0;
    config.seed = 23;
    fit(clf, train, train, config);
    CHECK(predict(clf, train) == initial);
  }
}

TEST_CASE("fit rejects an empty training set and unlabeled inputs") {
  const nn::MlpModule encoder = small_encoder(2, 24);
  Classifier clf = attach_head(encoder, 2, 25);
  data::DataTable empty;
  empty.features = Matrix(0, 2);
  empty.feature_names = {"a", "b"};
  FitConfig config;
  CHECK_THROWS_AS(fit(clf, empty, empty, config), Error);

  data::DataTable unlabeled = separable_toy(8, 26);
  unlabeled.labels.clear();
  CHECK_THROWS_AS(fit(clf, unlabeled, unlabeled, config), Error);
}

TEST_CASE("predict: argmax and lowest-index tie breaking") {
  // Identity encoder + hand-set head so the logits equal the head weights
  // times the inputs.
  Classifier clf = attach_head(identity_encoder(3), 3, 27);
  clf.head.params.dense[0].weight = Matrix::identity(3);
  clf.head.params.dense[0].bias.assign(3, 0.0);

  data::DataTable table;
  table.features = Matrix(2, 3);
  table.features.values = {0.2, 0.9, 0.1,   // argmax -> 1
                           0.5, 0.5, 0.0};  // tie -> lowest index
  table.feature_names = {"a", "b", "c"};
  const auto pred = predict(clf, table);
  CHECK(pred == std::vector<int>{1, 0});

  const auto again = predict(clf, table);
  CHECK(again == pred);
}

TEST_CASE("accuracy counts exact matches") {
  const std::vector<int> a = {0, 1, 1, 0};
  const std::vector<int> b = {0, 1, 0, 0};
  CHECK(accuracy(a, a) == doctest::Approx(1.0));
  const std::vector<int> c = {1, 0, 0, 1};
  CHECK(accuracy(a, c) == doctest::Approx(0.0));
  CHECK(accuracy(a, b) == doctest::Approx(0.75));
  const std::vector<int> short_vec = {0, 1};
  CHECK_THROWS_AS(accuracy(a, short_vec), Error);
}

TEST_CASE("unfrozen fit from pretrained and fresh encoders shares one code path") {
  // With lr=0 the outputs equal the respective initializations' predictions,
  // demonstrating that only the initial parameters differ. Batch-norm-free
  // encoders: train-mode passes would still advance running statistics.
  const data::DataTable train = separable_toy(16, 28);
  auto plain_encoder = [](std::uint64_t seed) {
    nn::MlpModule encoder;
    encoder.spec = nn::MlpSpec{2, {8, 4}, false, nn::Activation::relu, false};
    Rng rng(seed);
    encoder.params = nn::init_params(encoder.spec, rng);
    return encoder;
  };
  const nn::MlpModule pretrained = plain_encoder(29);
  const nn::MlpModule fresh = plain_encoder(30);

  for (const auto* encoder : {&pretrained, &fresh}) {
    Classifier clf = attach_head(*encoder, 2, 31, FitMode::unfrozen);
    const auto initial = predict(clf, train);
    FitConfig config;
    config.max_epochs = 3;
    config.patience = 3;
    config.learning_rate = 0.0;
    config.seed = 32;
    fit(clf, train, train, config);
    CHECK(predict(clf, train) == initial);
  }
}
