#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

#include "stam/data.hpp"
#include "stam/errors.hpp"
#include "stam/image_io.hpp"

using namespace stam;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stam_test_data_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

DatasetConfig tiny(NoiseMode mode) {
  DatasetConfig c;
  c.num_classes = 3;
  c.per_class = 10;
  c.n_frames = 4;
  c.height = 16;
  c.width = 16;
  c.noise_mode = mode;
  c.seed = 77;
  return c;
}

double mean_of(const Image& img) { return img.mean(); }

double stddev_of(const Image& img) { return std::sqrt((img.array() - img.mean()).square().mean()); }

// Nearest class centroid of the last frame, press sequences only.
double centroid_accuracy(const DatasetConfig& cfg, std::size_t frame) {
  DatasetManifest m;
  const auto seqs = generate_sequences(cfg, &m);
  std::vector<Image> centroid(cfg.num_classes, Image::Zero(static_cast<Eigen::Index>(cfg.height),
                                                           static_cast<Eigen::Index>(cfg.width)));
  std::vector<int> count(cfg.num_classes, 0);
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (!m.rows[i].train || seqs[i].interaction != Interaction::press) continue;
    centroid[static_cast<std::size_t>(seqs[i].label)] += seqs[i].frames[frame];
    ++count[static_cast<std::size_t>(seqs[i].label)];
  }
  for (std::size_t k = 0; k < cfg.num_classes; ++k) centroid[k] /= count[k];
  int hits = 0, total = 0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    if (m.rows[i].train || seqs[i].interaction != Interaction::press) continue;
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
      const double d = (seqs[i].frames[frame] - centroid[k]).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    hits += best == static_cast<std::size_t>(seqs[i].label);
    ++total;
  }
  return static_cast<double>(hits) / total;
}

}  // namespace

TEST_CASE("texture classes are deterministic and valid") {
  for (int k = 0; k < 10; ++k) {
    const TextureClass a = TextureClass::derive(k, 5), b = TextureClass::derive(k, 5);
    CHECK(a.period_x == b.period_x);
    CHECK(a.orientation == b.orientation);
    CHECK(a.amplitude == b.amplitude);
    CHECK_NOTHROW(a.validate());
  }
  CHECK(TextureClass::derive(0, 5).period_x != TextureClass::derive(1, 5).period_x);
  // Members of one weave share geometry and differ in contrast.
  const TextureClass p = TextureClass::derive(2, 5, 2), q = TextureClass::derive(3, 5, 2);
  CHECK(p.period_x == q.period_x);
  CHECK(p.orientation == q.orientation);
  CHECK(p.amplitude < q.amplitude);
  TextureClass bad = p;
  bad.amplitude = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(TextureClass::derive(-1, 5), ConfigError);
}

TEST_CASE("sequence shape and prefix limits") {
  const TextureClass cls = TextureClass::derive(0, 1);
  const TactileSequence s = generate_sequence(cls, Interaction::press, 5, 12, 20, 4, 3);
  CHECK(s.length() == 5);
  CHECK(s.height() == 12);
  CHECK(s.width() == 20);
  CHECK(s.noisy_prefix == 4);
  for (const Image& f : s.frames) {
    CHECK(f.minCoeff() >= 0.0);
    CHECK(f.maxCoeff() <= 1.0);
  }
  CHECK_THROWS_AS(generate_sequence(cls, Interaction::press, 5, 12, 20, 5, 3), ConfigError);
  CHECK_THROWS_AS(generate_sequence(cls, Interaction::press, 0, 12, 20, 0, 3), ConfigError);
}

TEST_CASE("pre-contact frames are flat gel") {
  const TextureClass cls = TextureClass::derive(4, 1);
  const GeneratorParams g;
  const TactileSequence s = generate_sequence(cls, Interaction::slip, 7, 32, 32, 2, 9);
  for (std::size_t t = 0; t < 2; ++t) {
    CHECK(std::abs(mean_of(s.frames[t]) - g.gel_level) < 0.01);
    CHECK(stddev_of(s.frames[t]) < 0.05);
  }
  CHECK(stddev_of(s.frames[2]) > 0.05);
}

TEST_CASE("a press of radius zero leaves only the gel background") {
  const TextureClass cls = TextureClass::derive(1, 1);
  GeneratorParams g;
  g.press_start = 0.0;
  g.press_end = 0.0;
  const TactileSequence none = generate_sequence(cls, Interaction::press, 4, 16, 16, 0, 21, g);
  const TactileSequence prefixed = generate_sequence(cls, Interaction::press, 4, 16, 16, 3, 21);
  for (std::size_t t = 0; t < 3; ++t) CHECK(none.frames[t] == prefixed.frames[t]);
}

TEST_CASE("slip shifts the texture by the per-frame offset") {
  const TextureClass cls = TextureClass::derive(2, 1);
  GeneratorParams g;
  g.slip_dx = 3;
  g.slip_dy = 0;
  g.frame_noise = 0.0;
  const TactileSequence s = generate_sequence(cls, Interaction::slip, 3, 32, 32, 0, 5, g);
  // Pixels well inside the contact disc in both frames.
  int compared = 0;
  for (int y = 12; y < 20; ++y) {
    for (int x = 13; x < 19; ++x) {
      CHECK(s.frames[1](y, x) == s.frames[0](y, x - 3));
      CHECK(s.frames[2](y, x) == s.frames[1](y, x - 3));
      ++compared;
    }
  }
  CHECK(compared == 48);
}

TEST_CASE("twist at angle zero is the press texture") {
  const TextureClass cls = TextureClass::derive(3, 1);
  GeneratorParams g;
  g.frame_noise = 0.0;
  g.press_start = g.contact_radius;
  g.press_end = g.contact_radius;
  const TactileSequence press = generate_sequence(cls, Interaction::press, 2, 16, 16, 0, 8, g);
  const TactileSequence twist = generate_sequence(cls, Interaction::twist, 2, 16, 16, 0, 8, g);
  CHECK((press.frames[0] - twist.frames[0]).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(press.frames[1] != twist.frames[1]);
}

TEST_CASE("truncation keeps the last contact frames") {
  const TextureClass cls = TextureClass::derive(0, 1);
  const TactileSequence clean = generate_sequence(cls, Interaction::press, 7, 8, 8, 0, 4);
  const TactileSequence two = truncate_sequence(clean, 2);
  REQUIRE(two.length() == 2);
  CHECK(two.frames[0] == clean.frames[5]);
  CHECK(two.frames[1] == clean.frames[6]);
  CHECK(two.noisy_prefix == 0);

  const TactileSequence noisy = generate_sequence(cls, Interaction::press, 7, 8, 8, 2, 4);
  const TactileSequence four = truncate_sequence(noisy, 4);
  CHECK(four.noisy_prefix == 2);
  CHECK(four.frames[0] == noisy.frames[0]);
  CHECK(four.frames[1] == noisy.frames[1]);
  CHECK(four.frames[2] == noisy.frames[5]);
  CHECK(four.frames[3] == noisy.frames[6]);
  const TactileSequence short_one = truncate_sequence(noisy, 2);
  CHECK(short_one.noisy_prefix == 1);
  CHECK(short_one.frames[1] == noisy.frames[6]);
  CHECK(truncate_sequence(noisy, 7).frames == noisy.frames);
  CHECK_THROWS_AS(truncate_sequence(noisy, 8), UsageError);
  CHECK_THROWS_AS(truncate_sequence(noisy, 0), UsageError);
}

TEST_CASE("frames_tensor stacks frames row-major") {
  TactileSequence s;
  Image a(1, 2), b(1, 2);
  a << 0.1, 0.2;
  b << 0.3, 0.4;
  s.frames = {a, b};
  const Tensor t = frames_tensor(s);
  CHECK(t.shape() == Shape{2, 1, 1, 2});
  CHECK(t[2] == 0.3);
  s.frames.push_back(Image::Zero(2, 2));
  CHECK_THROWS_AS(frames_tensor(s), ShapeError);
}

TEST_CASE("dataset counts and split") {
  DatasetConfig c;
  c.n_frames = 2;
  c.height = 8;
  c.width = 8;
  DatasetManifest m;
  const auto seqs = generate_sequences(c, &m);
  CHECK(seqs.size() == 300);
  std::size_t train = 0;
  std::vector<int> per_class_test(10, 0);
  for (const auto& r : m.rows) {
    train += r.train;
    if (!r.train) ++per_class_test[static_cast<std::size_t>(r.label)];
  }
  CHECK(train == 240);
  for (int n : per_class_test) CHECK(n == 6);

  c.noise_mode = NoiseMode::noisy;
  c.n_frames = 7;
  const auto noisy = generate_sequences(c, &m);
  std::set<std::size_t> prefixes;
  for (const auto& s : noisy) prefixes.insert(s.noisy_prefix);
  CHECK(prefixes == std::set<std::size_t>{1, 2});
  c.noise_mode = NoiseMode::clean;
  for (const auto& s : generate_sequences(c)) CHECK(s.noisy_prefix == 0);

  c.train_fraction = 0.5;
  CHECK_THROWS_AS(generate_sequences(c), ConfigError);
}

TEST_CASE("png quantization round trip") {
  const fs::path dir = scratch("png");
  fs::create_directories(dir);
  Image img(3, 4);
  img << 0.0, 1.0, 0.5, 0.25, 0.999, 0.001, -0.2, 1.3, 0.1, 0.2, 0.3, 0.4;
  write_png_gray(dir / "a.png", img);
  const Image back = read_png_gray(dir / "a.png");
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 4);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    CHECK(back.data()[i] == quantize(img.data()[i]) / 255.0);
    CHECK(std::abs(back.data()[i] - std::clamp(img.data()[i], 0.0, 1.0)) <= 0.5 / 255.0 + 1e-12);
  }
  CHECK(quantize(0.5) == 128);
  CHECK(quantize(-1) == 0);
  CHECK(quantize(2) == 255);
  CHECK_THROWS_AS(read_png_gray(dir / "missing.png"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("datasets on disk are reproducible and reload") {
  const fs::path a = scratch("a"), b = scratch("b");
  const DatasetConfig cfg = tiny(NoiseMode::noisy);
  const DatasetManifest m = generate_dataset(cfg, a);
  generate_dataset(cfg, b);
  CHECK(slurp(a / "manifest.csv") == slurp(b / "manifest.csv"));
  CHECK(slurp(a / "split.csv") == slurp(b / "split.csv"));
  for (const auto& r : m.rows) {
    for (std::size_t t = 0; t < r.n_frames; ++t) {
      CHECK(slurp(a / r.path / frame_filename(t)) == slurp(b / r.path / frame_filename(t)));
    }
  }

  const Dataset d = load_split(a);
  CHECK(d.train.size() == 24);
  CHECK(d.test.size() == 6);
  CHECK(d.num_classes == 3);
  const auto memory = generate_sequences(cfg);
  const TactileSequence& loaded = find_sequence(d.train, d.train.front().id);
  const TactileSequence* original = nullptr;
  for (const auto& s : memory) {
    if (s.id == loaded.id) original = &s;
  }
  REQUIRE(original != nullptr);
  CHECK(loaded.noisy_prefix == original->noisy_prefix);
  CHECK(loaded.label == original->label);
  for (std::size_t t = 0; t < loaded.length(); ++t) {
    CHECK((loaded.frames[t] - original->frames[t]).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
  }
  CHECK_THROWS_AS(find_sequence(d.train, "nope"), UsageError);

  // A missing frame is reported by path.
  const fs::path victim = a / m.rows.front().path / frame_filename(1);
  fs::remove(victim);
  try {
    load_dataset(a / "manifest.csv");
    FAIL("expected a FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find(victim.filename().string()) != std::string::npos);
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("manifests with label gaps are rejected") {
  const fs::path dir = scratch("gap");
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "manifest.csv");
    out << "sequence_id,label,interaction,n_frames,noisy_prefix,path\n"
        << "a,0,press,2,0,seq_a\n"
        << "b,2,press,2,0,seq_b\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "manifest.csv"), FormatError);
  {
    std::ofstream out(dir / "manifest.csv");
    out << "id,label\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "manifest.csv"), FormatError);
  fs::remove_all(dir);
}

TEST_CASE("clean textures are separable by nearest centroid") {
  const DatasetConfig cfg;
  const double acc = centroid_accuracy(cfg, cfg.n_frames - 1);
  MESSAGE("nearest-centroid accuracy " << acc);
  CHECK(acc > 0.5);
}

TEST_CASE("pre-contact frames carry no class signal") {
  DatasetConfig cfg;
  cfg.noise_mode = NoiseMode::noisy;
  // Frame 0 is always pre-contact in noisy datasets.
  const double acc = centroid_accuracy(cfg, 0);
  MESSAGE("prefix nearest-centroid accuracy " << acc);
  CHECK(acc <= 2.0 / static_cast<double>(cfg.num_classes));
}
