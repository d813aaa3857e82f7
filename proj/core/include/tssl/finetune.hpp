#pragma once

#include <span>
#include <vector>

#include "tssl/data.hpp"
#include "tssl/nn.hpp"

namespace tssl::finetune {

enum class FitMode { frozen, unfrozen };
const char* mode_name(FitMode mode);

/// Encoder plus a single linear classification head. In frozen mode the
/// encoder runs in eval mode and never changes; in unfrozen mode encoder and
/// head train jointly.
struct Classifier {
  nn::MlpModule encoder;
  nn::MlpModule head;
  FitMode mode = FitMode::unfrozen;

  std::size_t n_classes() const { return head.spec.output_dim(); }
};

/// Head randomly initialized from seed; encoder parameters are copied
/// untouched. n_classes >= 2.
Classifier attach_head(const nn::MlpModule& encoder, std::size_t n_classes,
                       std::uint64_t seed, FitMode mode = FitMode::unfrozen);

struct FitConfig {
  std::size_t batch_size = 8;
  std::size_t max_epochs = 100;
  std::size_t patience = 30;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;
  std::size_t stop_epoch = 0;      // completed epochs
  bool restored_best = false;
  double test_accuracy = -1.0;     // filled by the caller after evaluation
};

struct CrossEntropyGrads {
  double loss = 0.0;
  Matrix dlogits;
};
CrossEntropyGrads softmax_cross_entropy(const Matrix& logits,
                                        std::span<const int> labels);
double softmax_cross_entropy_loss(const Matrix& logits,
                                  std::span<const int> labels);

/// Minimizes mean cross-entropy with Adam; early stopping on validation loss
/// with the configured patience; parameters from the best validation epoch
/// are restored before returning.
FitReport fit(Classifier& clf, const data::DataTable& train,
              const data::DataTable& val, const FitConfig& config);

/// Argmax of the head logits; ties resolve to the lowest class index.
std::vector<int> predict(const Classifier& clf, const data::DataTable& table);

double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// predict + accuracy against the table's labels.
double evaluate_accuracy(const Classifier& clf, const data::DataTable& table);

}  // namespace tssl::finetune
