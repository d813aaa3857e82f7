#include "tssl/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tssl::finetune {

const char* mode_name(FitMode mode) {
  return mode == FitMode::frozen ? "frozen" : "unfrozen";
}

void FitConfig::validate() const {
  if (batch_size < 1) fail(ErrorKind::contract, "FitConfig: batch_size must be >= 1");
  if (max_epochs < 1) fail(ErrorKind::contract, "FitConfig: max_epochs must be >= 1");
  if (patience < 1 || patience > max_epochs)
    fail(ErrorKind::contract, "FitConfig: patience must lie in [1, max_epochs], got ",
         patience, " with max_epochs ", max_epochs);
}

Classifier attach_head(const nn::MlpModule& encoder, std::size_t n_classes,
                       std::uint64_t seed, FitMode mode) {
  if (n_classes < 2)
    fail(ErrorKind::contract, "attach_head: need at least 2 classes, got ", n_classes);
  Classifier clf;
  clf.encoder = encoder;
  clf.head.spec = nn::MlpSpec{encoder.spec.output_dim(),
                              {n_classes},
                              false,
                              nn::Activation::identity,
                              false};
  Rng rng(seed_mix(seed, "head_init"));
  clf.head.params = nn::init_params(clf.head.spec, rng);
  clf.mode = mode;
  return clf;
}

CrossEntropyGrads softmax_cross_entropy(const Matrix& logits,
                                        std::span<const int> labels) {
  if (logits.rows != labels.size())
    fail(ErrorKind::dimension, "cross_entropy: ", logits.rows, " rows vs ",
         labels.size(), " labels");
  CrossEntropyGrads out;
  out.dlogits = Matrix(logits.rows, logits.cols);
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols)
      fail(ErrorKind::contract, "cross_entropy: label ", label,
           " out of range for ", logits.cols, " classes at row ", i);
    const double* row = logits.row_ptr(i);
    double max_l = row[0];
    for (std::size_t c = 1; c < logits.cols; ++c) max_l = std::max(max_l, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) z += std::exp(row[c] - max_l);
    out.loss += -(row[static_cast<std::size_t>(label)] - max_l - std::log(z));
    for (std::size_t c = 0; c < logits.cols; ++c) {
      const double p = std::exp(row[c] - max_l) / z;
      out.dlogits(i, c) =
          (p - (c == static_cast<std::size_t>(label) ? 1.0 : 0.0)) * inv_n;
    }
  }
  out.loss *= inv_n;
  return out;
}

double softmax_cross_entropy_loss(const Matrix& logits,
                                  std::span<const int> labels) {
  if (logits.rows != labels.size())
    fail(ErrorKind::dimension, "cross_entropy: ", logits.rows, " rows vs ",
         labels.size(), " labels");
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols)
      fail(ErrorKind::contract, "cross_entropy: label ", label,
           " out of range for ", logits.cols, " classes at row ", i);
    const double* row = logits.row_ptr(i);
    double max_l = row[0];
    for (std::size_t c = 1; c < logits.cols; ++c) max_l = std::max(max_l, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) z += std::exp(row[c] - max_l);
    loss += -(row[static_cast<std::size_t>(label)] - max_l - std::log(z));
  }
  return loss / static_cast<double>(logits.rows);
}

namespace {

Matrix gather_rows(const Matrix& src, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), src.cols);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy_n(src.row_ptr(rows[r]), src.cols, out.row_ptr(r));
  return out;
}

struct Snapshot {
  nn::ParamStore encoder, head;
};

}  // namespace

FitReport fit(Classifier& clf, const data::DataTable& train,
              const data::DataTable& val, const FitConfig& config) {
  config.validate();
  if (train.size() == 0) fail(ErrorKind::contract, "fit: empty training set");
  if (!train.has_labels() || !val.has_labels())
    fail(ErrorKind::contract, "fit: train and validation sets must be labeled");
  if (train.dim() != clf.encoder.spec.input_dim)
    fail(ErrorKind::dimension, "fit: data has ", train.dim(),
         " features, encoder expects ", clf.encoder.spec.input_dim);

  const bool frozen = clf.mode == FitMode::frozen;

  // Frozen mode: the encoder is a fixed eval-mode feature map, so embed once.
  Matrix train_inputs, val_inputs;
  if (frozen) {
    train_inputs = nn::mlp_infer(clf.encoder.spec, clf.encoder.params, train.features);
    val_inputs = nn::mlp_infer(clf.encoder.spec, clf.encoder.params, val.features);
  }

  nn::AdamState head_opt = nn::make_adam(clf.head.params, config.learning_rate);
  nn::AdamState enc_opt;
  if (!frozen) enc_opt = nn::make_adam(clf.encoder.params, config.learning_rate);

  Rng rng(seed_mix(config.seed, "fit"));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FitReport report;
  double best_val = std::numeric_limits<double>::infinity();
  Snapshot best{clf.encoder.params, clf.head.params};
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng shuffle_rng = rng.split("epoch", epoch);
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.index(i)]);

    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      // Trailing singleton batches are undefined under train-mode batch-norm.
      if (count < 2 && !frozen && clf.encoder.spec.use_batchnorm && batches > 0)
        break;
      std::span<const std::size_t> rows(order.data() + start, count);
      std::vector<int> labels(count);
      for (std::size_t r = 0; r < count; ++r) labels[r] = train.labels[rows[r]];

      if (frozen) {
        const Matrix emb = gather_rows(train_inputs, rows);
        nn::ForwardCache head_cache;
        const Matrix logits = nn::mlp_forward(clf.head.spec, clf.head.params, emb,
                                              nn::RunMode::train, &head_cache);
        CrossEntropyGrads ce = softmax_cross_entropy(logits, labels);
        auto head_back =
            nn::mlp_backward(clf.head.spec, clf.head.params, head_cache, ce.dlogits);
        nn::adam_step(clf.head.params, head_back.grads, head_opt);
        epoch_loss += ce.loss;
      } else {
        const Matrix x = gather_rows(train.features, rows);
        nn::ForwardCache enc_cache, head_cache;
        const Matrix emb = nn::mlp_forward(clf.encoder.spec, clf.encoder.params, x,
                                           nn::RunMode::train, &enc_cache);
        const Matrix logits = nn::mlp_forward(clf.head.spec, clf.head.params, emb,
                                              nn::RunMode::train, &head_cache);
        CrossEntropyGrads ce = softmax_cross_entropy(logits, labels);
        auto head_back =
            nn::mlp_backward(clf.head.spec, clf.head.params, head_cache, ce.dlogits);
        auto enc_back = nn::mlp_backward(clf.encoder.spec, clf.encoder.params,
                                         enc_cache, head_back.input_grad);
        nn::adam_step(clf.encoder.params, enc_back.grads, enc_opt);
        nn::adam_step(clf.head.params, head_back.grads, head_opt);
        epoch_loss += ce.loss;
      }
      ++batches;
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(batches));

    const Matrix val_emb =
        frozen ? val_inputs
               : nn::mlp_infer(clf.encoder.spec, clf.encoder.params, val.features);
    const Matrix val_logits = nn::mlp_infer(clf.head.spec, clf.head.params, val_emb);
    const double vloss = softmax_cross_entropy_loss(val_logits, val.labels);
    report.val_loss.push_back(vloss);

    if (vloss < best_val) {
      best_val = vloss;
      best.encoder = clf.encoder.params;
      best.head = clf.head.params;
      since_best = 0;
    } else {
      ++since_best;
    }
    report.stop_epoch = epoch + 1;
    if (since_best >= config.patience) break;
  }

  clf.encoder.params = std::move(best.encoder);
  clf.head.params = std::move(best.head);
  report.restored_best = true;
  return report;
}

std::vector<int> predict(const Classifier& clf, const data::DataTable& table) {
  if (table.dim() != clf.encoder.spec.input_dim)
    fail(ErrorKind::dimension, "predict: data has ", table.dim(),
         " features, encoder expects ", clf.encoder.spec.input_dim);
  const Matrix emb = nn::mlp_infer(clf.encoder.spec, clf.encoder.params, table.features);
  const Matrix logits = nn::mlp_infer(clf.head.spec, clf.head.params, emb);
  std::vector<int> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const double* row = logits.row_ptr(i);
    std::size_t arg = 0;
    for (std::size_t c = 1; c < logits.cols; ++c)
      if (row[c] > row[arg]) arg = c;  // ties keep the lowest index
    out[i] = static_cast<int>(arg);
  }
  return out;
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size())
    fail(ErrorKind::dimension, "accuracy: ", predicted.size(), " predictions vs ",
         truth.size(), " labels");
  if (predicted.empty()) fail(ErrorKind::contract, "accuracy: empty inputs");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double evaluate_accuracy(const Classifier& clf, const data::DataTable& table) {
  if (!table.has_labels())
    fail(ErrorKind::contract, "evaluate_accuracy: table has no labels");
  const auto pred = predict(clf, table);
  return accuracy(pred, table.labels);
}

}  // namespace tssl::finetune
