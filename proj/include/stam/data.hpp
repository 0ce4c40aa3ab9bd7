#pragma once

// Procedural GelSight-style tactile sequences and the on-disk dataset layout:
//
//   root/manifest.csv   sequence_id,label,interaction,n_frames,noisy_prefix,path
//   root/split.csv      sequence_id,split   (train | test)
//   root/dataset.cfg    generator settings, key=value
//   root/seq_<id>/frame_000.png ...   8-bit grayscale

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stam/tensor.hpp"

namespace stam {

using Image = MatrixRM;

enum class Interaction { press, slip, twist };
enum class NoiseMode { clean, noisy };

std::string to_string(Interaction i);
std::string to_string(NoiseMode m);
Interaction parse_interaction(const std::string& s);
NoiseMode parse_noise_mode(const std::string& s);

struct TextureClass {
  int id = 0;
  double period_x = 4.0;  // pixels
  double period_y = 6.0;
  double orientation = 0.0;  // radians
  double amplitude = 0.5;    // (0, 1]
  double micro_noise = 0.03;
  double phase_x = 0.0;      // grating phases, radians, about the frame centre
  double phase_y = 0.0;

  /// Deterministic class parameters for (id, dataset seed). Consecutive ids
  /// share a weave geometry in groups of `classes_per_weave` and differ in
  /// contrast: member r of a group draws its amplitude from the r-th of
  /// equal bands partitioning [0.25, 0.95].
  static TextureClass derive(int id, std::uint64_t seed, std::size_t classes_per_weave = 1);
  void validate() const;
};

/// Phenomenology knobs of the generator. Defaults are used for datasets.
struct GeneratorParams {
  double gel_level = 0.5;       // flat-gel mean intensity
  double gel_noise = 0.02;      // flat-gel per-pixel std
  double gel_shading = 0.0;     // share of the gel variance in a smooth per-sequence shading field
  double contact_level = 0.5;   // mean intensity of pressed gel
  double frame_noise = 0.2;     // per-frame sensor noise inside the contact
  double contact_radius = 0.42; // slip/twist contact disc, fraction of min(h, w)
  double press_start = 0.3;     // press radius on the first contact frame, fraction of min(h, w)
  double press_end = 0.5;       // press radius on the last contact frame
  int slip_dx = 2;              // per-frame texture shift, pixels
  int slip_dy = 1;
  double twist_step = 0.12;     // per-frame rotation, radians
  double orientation_jitter = 0.25;  // per-sequence jitter of the class parameters
  double period_jitter = 0.12;       // relative
  double amplitude_jitter = 0.25;    // relative
  double phase_jitter = 0.0;         // radians
};

struct TactileSequence {
  std::vector<Image> frames;  // n frames, h x w, values in [0, 1]
  int label = 0;
  Interaction interaction = Interaction::press;
  std::size_t noisy_prefix = 0;
  std::string id;

  std::size_t length() const { return frames.size(); }
  std::size_t height() const { return static_cast<std::size_t>(frames.front().rows()); }
  std::size_t width() const { return static_cast<std::size_t>(frames.front().cols()); }
};

TactileSequence generate_sequence(const TextureClass& cls, Interaction interaction, std::size_t n, std::size_t h,
                                  std::size_t w, std::size_t noisy_prefix, std::uint64_t seed,
                                  const GeneratorParams& params = {});

/// Shortens a sequence to `n` frames. Contact frames are taken from the end;
/// pre-contact frames are kept at the front (at most n - 1 of them), so a
/// clean sequence yields exactly its last n frames.
TactileSequence truncate_sequence(const TactileSequence& seq, std::size_t n);

/// Stacks frames into a [n x 1 x h x w] tensor.
Tensor frames_tensor(const TactileSequence& seq);

struct DatasetConfig {
  std::size_t num_classes = 10;
  std::size_t per_class = 30;
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  std::size_t n_frames = 7;
  std::size_t height = 32;
  std::size_t width = 32;
  NoiseMode noise_mode = NoiseMode::clean;
  std::uint64_t seed = 2024;
  std::size_t classes_per_weave = 1;
  GeneratorParams generator;

  void validate() const;
  std::string to_text() const;
};

struct ManifestRow {
  std::string sequence_id;
  int label = 0;
  Interaction interaction = Interaction::press;
  std::size_t n_frames = 0;
  std::size_t noisy_prefix = 0;
  std::string path;  // relative to the manifest directory
  bool train = true;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
};

/// In-memory generation, rows in manifest order.
std::vector<TactileSequence> generate_sequences(const DatasetConfig& cfg, DatasetManifest* manifest = nullptr);

/// Generates and writes the dataset under `root`.
DatasetManifest generate_dataset(const DatasetConfig& cfg, const std::filesystem::path& root);

std::string frame_filename(std::size_t t);

DatasetManifest read_manifest(const std::filesystem::path& manifest_path);
/// Loads every sequence of a manifest, in manifest order.
std::vector<TactileSequence> load_dataset(const std::filesystem::path& manifest_path);

struct Dataset {
  std::vector<TactileSequence> train;
  std::vector<TactileSequence> test;
  std::size_t num_classes = 0;
};

/// Loads root/manifest.csv and partitions it with root/split.csv (all rows
/// are training rows when split.csv is absent).
Dataset load_split(const std::filesystem::path& root);

/// Returns the sequence with the given id.
const TactileSequence& find_sequence(const std::vector<TactileSequence>& seqs, const std::string& id);

}  // namespace stam
