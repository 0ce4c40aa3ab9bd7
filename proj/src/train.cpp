#include "stam/train.hpp"

#include <chrono>
#include <cmath>
#include <mutex>
#include <sstream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "stam/errors.hpp"
#include "stam/ops.hpp"
#include "stam/random.hpp"

namespace stam {

namespace {

// Training allocates and frees the same large im2col buffers every step.
// Keeping them on the heap instead of returning them to the kernel avoids a
// page-fault storm that otherwise doubles the wall time.
void retain_freed_buffers() {
#ifdef __GLIBC__
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "learning_rate=" << learning_rate << "\nepochs=" << epochs << "\nbatch_size=" << batch_size
     << "\noptimizer=" << to_string(optimizer) << "\nbeta1=" << beta1 << "\nbeta2=" << beta2
     << "\nepsilon=" << epsilon << "\ntrain_seed=" << seed << "\nsequence_length=" << sequence_length << '\n';
  return os.str();
}

Tensor cross_entropy(const Tensor& logits, int label) {
  if (logits.rank() != 1) throw ShapeError("cross_entropy: expected logits [K], got " + logits.shape().str());
  const int labels[] = {label};
  return cross_entropy(logits, std::span<const int>(labels));
}

Optimizer::Optimizer(const TrainConfig& cfg, std::vector<Tensor> params) : cfg_(cfg), params_(std::move(params)) {
  for (const auto& p : params_) {
    m_.push_back(Vector::Zero(p.data().size()));
    v_.push_back(Vector::Zero(p.data().size()));
  }
}

void Optimizer::step() {
  ++t_;
  const double lr = cfg_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const Vector& g = p.node()->grad;
    Vector& w = p.mutable_data();
    if (cfg_.optimizer == OptimizerKind::sgd) {
      w -= lr * g;
    } else {
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      w.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.epsilon);
    }
    p.zero_grad();
  }
}

namespace {

std::vector<TactileSequence> maybe_truncate(std::span<const TactileSequence> seqs, std::size_t n) {
  std::vector<TactileSequence> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(n == 0 ? s : truncate_sequence(s, n));
  return out;
}

}  // namespace

FitResult fit(Model& model, std::span<const TactileSequence> train, const TrainConfig& cfg, std::ostream* csv_log) {
  cfg.validate();
  if (train.empty()) throw UsageError("fit: empty training set");
  retain_freed_buffers();
  for (const auto& s : train) {
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= model.config().num_classes) {
      throw UsageError("fit: label " + std::to_string(s.label) + " of sequence " + s.id + " out of range");
    }
  }
  const std::vector<TactileSequence> data = maybe_truncate(train, cfg.sequence_length);

  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  Optimizer opt(cfg, params);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  if (csv_log != nullptr) *csv_log << "epoch,mean_loss,wall_time_s\n";
  FitResult result;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      // Sequences of different lengths cannot share a forward pass; group by length.
      std::vector<std::vector<const TactileSequence*>> groups;
      std::vector<std::vector<int>> labels;
      for (std::size_t i = begin; i < end; ++i) {
        const TactileSequence& s = data[order[i]];
        std::size_t g = 0;
        while (g < groups.size() && groups[g].front()->length() != s.length()) ++g;
        if (g == groups.size()) {
          groups.emplace_back();
          labels.emplace_back();
        }
        groups[g].push_back(&s);
        labels[g].push_back(s.label);
      }
      const double batch = static_cast<double>(end - begin);
      Tape tape;
      double batch_loss = 0.0;
      {
        TapeScope scope(tape);
        Tensor loss;
        for (std::size_t g = 0; g < groups.size(); ++g) {
          Tensor part = scale(cross_entropy(model.forward_batch(groups[g]), std::span<const int>(labels[g])),
                              static_cast<double>(groups[g].size()) / batch);
          loss = loss.defined() ? add(loss, part) : part;
        }
        batch_loss = loss.item();
        if (!std::isfinite(batch_loss)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", batch " << batch_index << ", learning rate "
              << cfg.learning_rate;
          throw NumericError(msg.str());
        }
        backward(loss, tape);
      }
      opt.step();
      total += batch_loss * batch;
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.epochs.push_back({epoch, total / static_cast<double>(data.size()), seconds});
    if (csv_log != nullptr) {
      *csv_log << epoch << ',' << result.epochs.back().mean_loss << ',' << seconds << '\n';
    }
  }
  return result;
}

int argmax(const Tensor& logits) {
  int best = 0;
  for (std::size_t i = 1; i < logits.numel(); ++i) {
    if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

std::vector<int> predict(const Model& model, std::span<const TactileSequence> seqs, std::size_t sequence_length) {
  std::vector<int> out;
  out.reserve(seqs.size());
  constexpr std::size_t kChunk = 16;
  const std::vector<TactileSequence> data = maybe_truncate(seqs, sequence_length);
  std::size_t i = 0;
  while (i < data.size()) {
    std::vector<const TactileSequence*> chunk;
    const std::size_t length = data[i].length();
    while (i < data.size() && chunk.size() < kChunk && data[i].length() == length) chunk.push_back(&data[i++]);
    const Tensor logits = model.forward_batch(chunk);
    const std::size_t k = logits.shape()[1];
    for (std::size_t b = 0; b < chunk.size(); ++b) {
      out.push_back(argmax(Tensor(Shape{k}, logits.data().segment(static_cast<Eigen::Index>(b * k),
                                                                   static_cast<Eigen::Index>(k)))));
    }
  }
  return out;
}

double evaluate(const Model& model, std::span<const TactileSequence> test, std::size_t sequence_length) {
  if (test.empty()) throw UsageError("evaluate: empty test set");
  const std::vector<int> pred = predict(model, test, sequence_length);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) correct += pred[i] == test[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace stam
