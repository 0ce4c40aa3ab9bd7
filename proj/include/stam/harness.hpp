#pragma once

// Ablation grid: variants x sequence lengths x {clean, noisy}, each cell
// retrained from scratch once per seed and summarized by the median run.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stam/data.hpp"
#include "stam/model.hpp"
#include "stam/train.hpp"

namespace stam {

struct GridConfig {
  std::vector<Variant> variants{Variant::cnn, Variant::cnn_spatial, Variant::stam};
  std::vector<std::size_t> lengths{2, 3, 4, 5, 6, 7};
  std::vector<NoiseMode> modes{NoiseMode::clean, NoiseMode::noisy};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ModelConfig model;  // variant, seed and class count are set per run
  TrainConfig train;  // seed and sequence length are set per run
  std::size_t threads = 1;

  void validate() const;
  std::string to_text() const;
};

struct RunResult {
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double train_seconds = 0.0;
};

struct CellResult {
  Variant variant = Variant::cnn;
  std::size_t n = 0;
  NoiseMode mode = NoiseMode::clean;
  std::uint64_t seed = 0;  // seed of the median run
  double accuracy = 0.0;   // median accuracy over seeds
  double train_seconds = 0.0;
  std::vector<RunResult> runs;
  std::string error;  // nonempty if the cell failed

  bool ok() const { return error.empty(); }
};

struct AblationReport {
  std::vector<CellResult> cells;

  const CellResult* find(Variant v, std::size_t n, NoiseMode mode) const;
  bool any_failed() const;
  /// Mean cell accuracy of a variant over all lengths of a mode.
  double mean_accuracy(Variant v, NoiseMode mode) const;
  /// mean_accuracy(stam) - mean_accuracy(cnn).
  double stam_gap(NoiseMode mode) const;
};

/// Trains one model for (variant, n) with `seed` and returns its held-out accuracy.
RunResult run_cell_seed(const Dataset& data, Variant variant, std::size_t n, std::uint64_t seed,
                        const GridConfig& grid, std::ostream* epoch_log = nullptr);

/// Checks that clean datasets carry no pre-contact frames and noisy ones do
/// in every sequence.
void check_protocol(const Dataset& data, NoiseMode mode);

/// Runs the whole grid. When `out_dir` is given, per-run epoch logs are
/// written under out_dir/logs and report.csv / report.txt / runs.csv at the end.
AblationReport run_ablation(const std::map<NoiseMode, Dataset>& datasets, const GridConfig& grid,
                            const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// "76.50%" for 0.765.
std::string format_percent(double fraction);
/// Columns variant,n,noise_mode,seed,accuracy,train_seconds; one row per cell.
std::string render_csv(const AblationReport& report);
/// Variants as rows, lengths as columns, one block per noise mode.
std::string render_table(const AblationReport& report);

}  // namespace stam
