#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stam/data.hpp"
#include "stam/model.hpp"

namespace stam {

enum class OptimizerKind { sgd, adam };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 8;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 1;
  /// Truncate every sequence to this length first; 0 keeps sequences as-is.
  std::size_t sequence_length = 0;

  void validate() const;
  std::string to_text() const;
};

/// -log softmax(logits)[label] with log-sum-exp stabilization.
Tensor cross_entropy(const Tensor& logits, int label);

class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, std::vector<Tensor> params);
  /// Applies one update from the accumulated gradients, then clears them.
  void step();

 private:
  TrainConfig cfg_;
  std::vector<Tensor> params_;
  std::vector<Vector> m_;
  std::vector<Vector> v_;
  std::size_t t_ = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_time_s = 0.0;
};

struct FitResult {
  std::vector<EpochLog> epochs;
};

/// Trains in place. Batches come from a seeded per-epoch shuffle; the reported
/// loss per epoch is the sample-weighted mean of the batch-mean losses.
/// If `csv_log` is given, writes "epoch,mean_loss,wall_time_s" rows to it.
FitResult fit(Model& model, std::span<const TactileSequence> train, const TrainConfig& cfg,
              std::ostream* csv_log = nullptr);

/// Argmax class, ties to the lowest index.
int argmax(const Tensor& logits);

std::vector<int> predict(const Model& model, std::span<const TactileSequence> seqs, std::size_t sequence_length = 0);

/// Fraction of correctly classified sequences.
double evaluate(const Model& model, std::span<const TactileSequence> test, std::size_t sequence_length = 0);

}  // namespace stam
