#include "stam/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "stam/errors.hpp"
#include "stam/random.hpp"

namespace stam {

namespace fs = std::filesystem;

void GridConfig::validate() const {
  if (seeds.empty()) throw ConfigError("ablation grid needs at least one seed");
  if (variants.empty() || lengths.empty() || modes.empty()) throw ConfigError("ablation grid is empty");
  for (std::size_t n : lengths) {
    if (n == 0) throw ConfigError("sequence lengths must be positive");
  }
  if (threads == 0) throw ConfigError("threads must be at least 1");
  train.validate();
}

std::string GridConfig::to_text() const {
  std::ostringstream os;
  os << "variants=";
  for (std::size_t i = 0; i < variants.size(); ++i) os << (i ? "," : "") << to_string(variants[i]);
  os << "\nlengths=";
  for (std::size_t i = 0; i < lengths.size(); ++i) os << (i ? "," : "") << lengths[i];
  os << "\nmodes=";
  for (std::size_t i = 0; i < modes.size(); ++i) os << (i ? "," : "") << to_string(modes[i]);
  os << "\nseeds=";
  for (std::size_t i = 0; i < seeds.size(); ++i) os << (i ? "," : "") << seeds[i];
  os << "\nthreads=" << threads << '\n';
  os << "backbone_channels=";
  for (std::size_t i = 0; i < model.backbone_channels.size(); ++i) os << (i ? "," : "") << model.backbone_channels[i];
  os << "\nheads=" << model.heads << '\n' << train.to_text();
  return os.str();
}

const CellResult* AblationReport::find(Variant v, std::size_t n, NoiseMode mode) const {
  for (const auto& c : cells) {
    if (c.variant == v && c.n == n && c.mode == mode) return &c;
  }
  return nullptr;
}

bool AblationReport::any_failed() const {
  return std::any_of(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok(); });
}

double AblationReport::mean_accuracy(Variant v, NoiseMode mode) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& c : cells) {
    if (c.variant == v && c.mode == mode && c.ok()) {
      total += c.accuracy;
      ++count;
    }
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

double AblationReport::stam_gap(NoiseMode mode) const {
  return mean_accuracy(Variant::stam, mode) - mean_accuracy(Variant::cnn, mode);
}

void check_protocol(const Dataset& data, NoiseMode mode) {
  for (const auto* split : {&data.train, &data.test}) {
    for (const auto& s : *split) {
      const bool noisy = s.noisy_prefix > 0;
      if (noisy != (mode == NoiseMode::noisy)) {
        throw ConfigError("sequence " + s.id + " has noisy_prefix " + std::to_string(s.noisy_prefix) +
                          ", inconsistent with a " + to_string(mode) + " dataset");
      }
    }
  }
}

RunResult run_cell_seed(const Dataset& data, Variant variant, std::size_t n, std::uint64_t seed,
                        const GridConfig& grid, std::ostream* epoch_log) {
  ModelConfig mc = grid.model;
  mc.variant = variant;
  mc.seed = seed;
  mc.num_classes = data.num_classes;
  TrainConfig tc = grid.train;
  tc.seed = mix_seed(seed, 0x7121u);
  tc.sequence_length = n;

  Model model = Model::build(mc);
  const auto start = std::chrono::steady_clock::now();
  fit(model, data.train, tc, epoch_log);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {seed, evaluate(model, data.test, n), seconds};
}

AblationReport run_ablation(const std::map<NoiseMode, Dataset>& datasets, const GridConfig& grid,
                            const std::optional<fs::path>& out_dir) {
  grid.validate();
  for (NoiseMode mode : grid.modes) {
    const auto it = datasets.find(mode);
    if (it == datasets.end()) throw ConfigError("no dataset given for mode " + to_string(mode));
    if (it->second.train.empty() || it->second.test.empty()) {
      throw ConfigError(to_string(mode) + " dataset needs nonempty train and test splits");
    }
    check_protocol(it->second, mode);
  }
  if (out_dir) {
    std::error_code ec;
    fs::create_directories(*out_dir / "logs", ec);
    if (ec) throw FormatError("cannot create " + (*out_dir / "logs").string() + ": " + ec.message());
  }

  AblationReport report;
  for (NoiseMode mode : grid.modes) {
    for (Variant v : grid.variants) {
      for (std::size_t n : grid.lengths) report.cells.push_back({v, n, mode, 0, 0.0, 0.0, {}, {}});
    }
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < report.cells.size(); i = next++) {
      CellResult& cell = report.cells[i];
      try {
        const Dataset& data = datasets.at(cell.mode);
        for (std::uint64_t seed : grid.seeds) {
          std::ofstream log;
          if (out_dir) {
            char name[128];
            std::snprintf(name, sizeof name, "%s_n%zu_%s_s%llu.csv", to_string(cell.variant).c_str(), cell.n,
                          to_string(cell.mode).c_str(), static_cast<unsigned long long>(seed));
            log.open(*out_dir / "logs" / name);
          }
          cell.runs.push_back(run_cell_seed(data, cell.variant, cell.n, seed, grid, out_dir ? &log : nullptr));
        }
        std::vector<RunResult> sorted = cell.runs;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const RunResult& a, const RunResult& b) { return a.accuracy < b.accuracy; });
        const RunResult& median = sorted[(sorted.size() - 1) / 2];
        cell.seed = median.seed;
        cell.accuracy = median.accuracy;
        cell.train_seconds = median.train_seconds;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const std::size_t threads = std::min(grid.threads, report.cells.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  if (out_dir) {
    std::ofstream(*out_dir / "report.csv") << render_csv(report);
    std::ofstream(*out_dir / "report.txt") << render_table(report);
    std::ofstream runs(*out_dir / "runs.csv");
    runs << "variant,n,noise_mode,seed,accuracy,train_seconds\n";
    runs.precision(17);
    for (const auto& c : report.cells) {
      for (const auto& r : c.runs) {
        runs << to_string(c.variant) << ',' << c.n << ',' << to_string(c.mode) << ',' << r.seed << ',' << r.accuracy
             << ',' << r.train_seconds << '\n';
      }
    }
  }
  return report;
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", fraction * 100.0);
  return buf;
}

std::string render_csv(const AblationReport& report) {
  std::ostringstream os;
  os.precision(17);
  os << "variant,n,noise_mode,seed,accuracy,train_seconds\n";
  for (const auto& c : report.cells) {
    os << to_string(c.variant) << ',' << c.n << ',' << to_string(c.mode) << ',' << c.seed << ',';
    if (c.ok()) {
      os << c.accuracy;
    } else {
      os << "failed";
    }
    os << ',' << c.train_seconds << '\n';
  }
  return os.str();
}

namespace {

std::string display_name(Variant v) {
  switch (v) {
    case Variant::cnn: return "CNNs";
    case Variant::cnn_spatial: return "CNNs+Spatial Attention";
    case Variant::stam: return "STAM";
  }
  return "?";
}

}  // namespace

std::string render_table(const AblationReport& report) {
  std::vector<NoiseMode> modes;
  std::vector<Variant> variants;
  std::vector<std::size_t> lengths;
  for (const auto& c : report.cells) {
    if (std::find(modes.begin(), modes.end(), c.mode) == modes.end()) modes.push_back(c.mode);
    if (std::find(variants.begin(), variants.end(), c.variant) == variants.end()) variants.push_back(c.variant);
    if (std::find(lengths.begin(), lengths.end(), c.n) == lengths.end()) lengths.push_back(c.n);
  }
  std::size_t name_width = 6;
  for (Variant v : variants) name_width = std::max(name_width, display_name(v).size());

  std::ostringstream os;
  for (std::size_t b = 0; b < modes.size(); ++b) {
    if (b) os << '\n';
    os << (modes[b] == NoiseMode::clean ? "Clean sequences" : "Sequences with pre-contact (noisy) frames") << '\n';
    std::ostringstream header;
    header << std::left << std::setw(static_cast<int>(name_width)) << "Models";
    for (std::size_t n : lengths) header << " | " << std::setw(7) << ("n=" + std::to_string(n));
    header << " | Mean";
    const std::string h = header.str();
    os << std::string(h.size(), '-') << '\n' << h << '\n' << std::string(h.size(), '-') << '\n';
    for (Variant v : variants) {
      os << std::left << std::setw(static_cast<int>(name_width)) << display_name(v);
      for (std::size_t n : lengths) {
        const CellResult* c = report.find(v, n, modes[b]);
        os << " | " << std::setw(7) << (c == nullptr ? "-" : c->ok() ? format_percent(c->accuracy) : "failed");
      }
      os << " | " << format_percent(report.mean_accuracy(v, modes[b])) << '\n';
    }
    os << std::string(h.size(), '-') << '\n';
    if (std::find(variants.begin(), variants.end(), Variant::stam) != variants.end() &&
        std::find(variants.begin(), variants.end(), Variant::cnn) != variants.end()) {
      os << "STAM - CNNs mean gap: " << format_percent(report.stam_gap(modes[b])) << '\n';
    }
  }
  return os.str();
}

}  // namespace stam
