#include "stam/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "stam/errors.hpp"
#include "stam/image_io.hpp"
#include "stam/random.hpp"

namespace stam {

namespace fs = std::filesystem;

std::string to_string(Interaction i) {
  switch (i) {
    case Interaction::press: return "press";
    case Interaction::slip: return "slip";
    case Interaction::twist: return "twist";
  }
  return "?";
}

std::string to_string(NoiseMode m) { return m == NoiseMode::clean ? "clean" : "noisy"; }

Interaction parse_interaction(const std::string& s) {
  if (s == "press") return Interaction::press;
  if (s == "slip") return Interaction::slip;
  if (s == "twist") return Interaction::twist;
  throw FormatError("unknown interaction '" + s + "'");
}

NoiseMode parse_noise_mode(const std::string& s) {
  if (s == "clean") return NoiseMode::clean;
  if (s == "noisy") return NoiseMode::noisy;
  throw ConfigError("unknown noise mode '" + s + "' (expected clean or noisy)");
}

TextureClass TextureClass::derive(int id, std::uint64_t seed, std::size_t classes_per_weave) {
  if (id < 0) throw ConfigError("texture class id must be nonnegative");
  if (classes_per_weave == 0) throw ConfigError("classes_per_weave must be at least 1");
  const auto group = static_cast<std::uint64_t>(id) / classes_per_weave;
  const auto member = static_cast<std::size_t>(id) % classes_per_weave;
  Rng weave(mix_seed(seed, 0x7e47u + group));
  TextureClass c;
  c.id = id;
  c.period_x = weave.uniform(3.0, 9.0);
  c.period_y = weave.uniform(3.0, 9.0);
  c.orientation = weave.uniform(0.0, std::numbers::pi);
  c.phase_x = weave.uniform(0.0, 2.0 * std::numbers::pi);
  c.phase_y = weave.uniform(0.0, 2.0 * std::numbers::pi);
  Rng own(mix_seed(seed, 0xc1a55u + static_cast<std::uint64_t>(id)));
  const double band = 0.7 / static_cast<double>(classes_per_weave);
  c.amplitude = 0.25 + band * (static_cast<double>(member) + own.uniform(0.15, 0.85));
  c.micro_noise = own.uniform(0.02, 0.06);
  return c;
}

void TextureClass::validate() const {
  if (period_x < 2.0 || period_y < 2.0) throw ConfigError("texture periods must be at least 2 px");
  if (!(amplitude > 0.0 && amplitude <= 1.0)) throw ConfigError("texture amplitude must lie in (0, 1]");
  if (micro_noise < 0.0) throw ConfigError("texture micro noise must be nonnegative");
}

namespace {

struct Weave {
  double period_x, period_y, orientation, amplitude, micro_noise, phase_x, phase_y, level;
};

Image weave_texture(const Weave& p, std::size_t h, std::size_t w, Rng& rng) {
  const double c = std::cos(p.orientation), s = std::sin(p.orientation);
  const double y0 = (static_cast<double>(h) - 1.0) / 2.0, x0 = (static_cast<double>(w) - 1.0) / 2.0;
  Image t(h, w);
  for (Eigen::Index y = 0; y < t.rows(); ++y) {
    for (Eigen::Index x = 0; x < t.cols(); ++x) {
      const double u = (x - x0) * c + (y - y0) * s;
      const double v = -(x - x0) * s + (y - y0) * c;
      const double grating = std::sin(2.0 * std::numbers::pi * u / p.period_x + p.phase_x) +
                             std::sin(2.0 * std::numbers::pi * v / p.period_y + p.phase_y);
      t(y, x) = std::clamp(p.level + 0.25 * p.amplitude * grating + rng.normal(0.0, p.micro_noise), 0.0, 1.0);
    }
  }
  return t;
}

double wrap(double v, double period) {
  const double r = std::fmod(v, period);
  return r < 0 ? r + period : r;
}

double sample_bilinear_wrapped(const Image& img, double y, double x) {
  const double h = static_cast<double>(img.rows()), w = static_cast<double>(img.cols());
  y = wrap(y, h);
  x = wrap(x, w);
  const auto y0 = static_cast<Eigen::Index>(std::floor(y));
  const auto x0 = static_cast<Eigen::Index>(std::floor(x));
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const Eigen::Index y1 = (y0 + 1) % img.rows(), x1 = (x0 + 1) % img.cols();
  return (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x1)) + fy * ((1 - fx) * img(y1, x0) + fx * img(y1, x1));
}

// Smooth zero-mean, unit-std illumination field built from a few Gaussian blobs.
Image shading_field(std::size_t h, std::size_t w, Rng& rng) {
  Image f = Image::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(w));
  const double size = static_cast<double>(std::min(h, w));
  for (int b = 0; b < 4; ++b) {
    const double cy = rng.uniform(0.0, static_cast<double>(h)), cx = rng.uniform(0.0, static_cast<double>(w));
    const double sigma = rng.uniform(0.12, 0.3) * size;
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (Eigen::Index y = 0; y < f.rows(); ++y) {
      for (Eigen::Index x = 0; x < f.cols(); ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        f(y, x) += sign * std::exp(-d2 / (2.0 * sigma * sigma));
      }
    }
  }
  f.array() -= f.mean();
  const double sd = std::sqrt(f.array().square().mean());
  if (sd > 0.0) f /= sd;
  return f;
}

}  // namespace

TactileSequence generate_sequence(const TextureClass& cls, Interaction interaction, std::size_t n, std::size_t h,
                                  std::size_t w, std::size_t noisy_prefix, std::uint64_t seed,
                                  const GeneratorParams& params) {
  cls.validate();
  if (n == 0 || h == 0 || w == 0) throw ConfigError("generate_sequence: n, h and w must be positive");
  if (noisy_prefix >= n) {
    throw ConfigError("generate_sequence: noisy prefix " + std::to_string(noisy_prefix) +
                      " leaves no contact frame in a sequence of " + std::to_string(n));
  }
  Rng rng(seed);
  const double orientation = cls.orientation + rng.uniform(-1.0, 1.0) * params.orientation_jitter;
  const double px = std::max(2.0, cls.period_x * (1.0 + rng.uniform(-1.0, 1.0) * params.period_jitter));
  const double py = std::max(2.0, cls.period_y * (1.0 + rng.uniform(-1.0, 1.0) * params.period_jitter));
  const double amplitude =
      std::clamp(cls.amplitude * (1.0 + rng.uniform(-1.0, 1.0) * params.amplitude_jitter), 0.01, 1.0);
  const double size = static_cast<double>(std::min(h, w));
  const double cy = (static_cast<double>(h) - 1.0) / 2.0 + rng.uniform(-0.1, 0.1) * static_cast<double>(h);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0 + rng.uniform(-0.1, 0.1) * static_cast<double>(w);
  const double phase_x = cls.phase_x + rng.uniform(-1.0, 1.0) * params.phase_jitter;
  const double phase_y = cls.phase_y + rng.uniform(-1.0, 1.0) * params.phase_jitter;
  const Image texture = weave_texture(
      {px, py, orientation, amplitude, cls.micro_noise, phase_x, phase_y, params.contact_level}, h, w, rng);

  Rng shading_rng(mix_seed(seed, 0x5ad3u));
  const Image shading = shading_field(h, w, shading_rng);
  const double shading_sd = params.gel_noise * std::sqrt(params.gel_shading);
  const double pixel_sd = params.gel_noise * std::sqrt(1.0 - params.gel_shading);

  TactileSequence seq;
  seq.label = cls.id;
  seq.interaction = interaction;
  seq.noisy_prefix = noisy_prefix;
  const std::size_t contact_frames = n - noisy_prefix;

  for (std::size_t t = 0; t < n; ++t) {
    // Frame noise depends only on (seed, t), never on the contact state.
    Rng frame_rng(mix_seed(seed, t + 1));
    Image frame(h, w);
    for (Eigen::Index y = 0; y < frame.rows(); ++y) {
      for (Eigen::Index x = 0; x < frame.cols(); ++x) {
        const double v = frame_rng.normal(params.gel_level + shading_sd * shading(y, x), pixel_sd);
        frame(y, x) = std::clamp(v, 0.0, 1.0);
      }
    }
    if (t >= noisy_prefix) {
      const std::size_t tc = t - noisy_prefix;
      double radius = params.contact_radius * size;
      if (interaction == Interaction::press) {
        const double progress =
            contact_frames > 1 ? static_cast<double>(tc) / static_cast<double>(contact_frames - 1) : 1.0;
        radius = size * (params.press_start + (params.press_end - params.press_start) * progress);
      }
      const double angle = static_cast<double>(tc) * params.twist_step;
      const double ca = std::cos(angle), sa = std::sin(angle);
      const long shift_x = static_cast<long>(tc) * params.slip_dx;
      const long shift_y = static_cast<long>(tc) * params.slip_dy;
      for (Eigen::Index y = 0; y < frame.rows(); ++y) {
        for (Eigen::Index x = 0; x < frame.cols(); ++x) {
          const double noise = frame_rng.normal(0.0, params.frame_noise);
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          if (std::hypot(dy, dx) >= radius) continue;
          double value = 0.0;
          switch (interaction) {
            case Interaction::press:
              value = texture(y, x);
              break;
            case Interaction::slip: {
              const long sy = ((y - shift_y) % static_cast<long>(h) + static_cast<long>(h)) % static_cast<long>(h);
              const long sx = ((x - shift_x) % static_cast<long>(w) + static_cast<long>(w)) % static_cast<long>(w);
              value = texture(sy, sx);
              break;
            }
            case Interaction::twist:
              // Inverse rotation about the contact centre.
              value = sample_bilinear_wrapped(texture, cy + ca * dy - sa * dx, cx + sa * dy + ca * dx);
              break;
          }
          frame(y, x) = std::clamp(value + noise, 0.0, 1.0);
        }
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

TactileSequence truncate_sequence(const TactileSequence& seq, std::size_t n) {
  if (n == 0 || n > seq.length()) {
    throw UsageError("truncate_sequence: cannot take " + std::to_string(n) + " frames from a sequence of " +
                     std::to_string(seq.length()));
  }
  TactileSequence out = seq;
  out.frames.clear();
  const std::size_t prefix = std::min(seq.noisy_prefix, n - 1);
  for (std::size_t t = 0; t < prefix; ++t) out.frames.push_back(seq.frames[t]);
  for (std::size_t t = seq.length() - (n - prefix); t < seq.length(); ++t) out.frames.push_back(seq.frames[t]);
  out.noisy_prefix = prefix;
  return out;
}

Tensor frames_tensor(const TactileSequence& seq) {
  if (seq.frames.empty()) throw ShapeError("sequence " + seq.id + " has no frames");
  const std::size_t h = seq.height(), w = seq.width();
  Vector data(static_cast<Eigen::Index>(seq.length() * h * w));
  for (std::size_t t = 0; t < seq.length(); ++t) {
    const Image& f = seq.frames[t];
    if (static_cast<std::size_t>(f.rows()) != h || static_cast<std::size_t>(f.cols()) != w) {
      throw ShapeError("sequence " + seq.id + " mixes frame sizes");
    }
    data.segment(static_cast<Eigen::Index>(t * h * w), static_cast<Eigen::Index>(h * w)) = f.reshaped<Eigen::RowMajor>();
  }
  return Tensor(Shape{seq.length(), 1, h, w}, std::move(data));
}

void DatasetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (per_class < 1) throw ConfigError("dataset needs at least 1 sequence per class");
  if (train_fraction < 0 || test_fraction < 0 || std::abs(train_fraction + test_fraction - 1.0) > 1e-9) {
    throw ConfigError("train and test fractions must be nonnegative and sum to 1");
  }
  if (classes_per_weave < 1) throw ConfigError("classes_per_weave must be at least 1");
  if (n_frames < 1 || height < 1 || width < 1) throw ConfigError("frame count and size must be positive");
  if (noise_mode == NoiseMode::noisy && n_frames < 2) {
    throw ConfigError("noisy datasets need at least 2 frames per sequence");
  }
  if (!(generator.gel_shading >= 0.0 && generator.gel_shading <= 1.0)) {
    throw ConfigError("gel_shading must lie in [0, 1]");
  }
  if (!(generator.frame_noise >= 0.0) || !(generator.gel_noise >= 0.0)) {
    throw ConfigError("noise levels must be nonnegative");
  }
}

std::string DatasetConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "num_classes=" << num_classes << "\nper_class=" << per_class << "\ntrain_fraction=" << train_fraction
     << "\ntest_fraction=" << test_fraction << "\nn_frames=" << n_frames << "\nheight=" << height
     << "\nwidth=" << width << "\nnoise_mode=" << to_string(noise_mode) << "\nseed=" << seed
     << "\nclasses_per_weave=" << classes_per_weave
     << "\ngel_level=" << generator.gel_level << "\ngel_noise=" << generator.gel_noise
     << "\ngel_shading=" << generator.gel_shading
     << "\ncontact_level=" << generator.contact_level
     << "\nframe_noise=" << generator.frame_noise << "\ncontact_radius=" << generator.contact_radius
     << "\npress_start=" << generator.press_start << "\npress_end=" << generator.press_end
     << "\nslip_dx=" << generator.slip_dx << "\nslip_dy=" << generator.slip_dy
     << "\ntwist_step=" << generator.twist_step << "\norientation_jitter=" << generator.orientation_jitter
     << "\nperiod_jitter=" << generator.period_jitter << "\namplitude_jitter=" << generator.amplitude_jitter
     << "\nphase_jitter=" << generator.phase_jitter << '\n';
  return os.str();
}

namespace {

std::string sequence_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return buf;
}

}  // namespace

std::string frame_filename(std::size_t t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%03zu.png", t);
  return buf;
}

std::vector<TactileSequence> generate_sequences(const DatasetConfig& cfg, DatasetManifest* manifest) {
  cfg.validate();
  std::vector<TactileSequence> out;
  const auto train_count = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(cfg.per_class)));
  for (std::size_t k = 0; k < cfg.num_classes; ++k) {
    const TextureClass cls = TextureClass::derive(static_cast<int>(k), cfg.seed, cfg.classes_per_weave);

    // Stratified split: a seeded permutation of this class's indices.
    std::vector<std::size_t> order(cfg.per_class);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng split_rng(mix_seed(cfg.seed, 0x5b117u + k));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
    std::vector<bool> is_train(cfg.per_class, false);
    for (std::size_t i = 0; i < train_count; ++i) is_train[order[i]] = true;

    for (std::size_t i = 0; i < cfg.per_class; ++i) {
      const std::size_t global = k * cfg.per_class + i;
      const std::uint64_t seed = mix_seed(cfg.seed, global + 1);
      const auto interaction = static_cast<Interaction>(i % 3);
      std::size_t prefix = 0;
      if (cfg.noise_mode == NoiseMode::noisy) {
        Rng prefix_rng(mix_seed(seed, 99));
        prefix = std::min<std::size_t>(1 + prefix_rng.below(2), cfg.n_frames - 1);
      }
      TactileSequence seq =
          generate_sequence(cls, interaction, cfg.n_frames, cfg.height, cfg.width, prefix, seed, cfg.generator);
      seq.id = sequence_name(global);
      if (manifest != nullptr) {
        manifest->rows.push_back(
            {seq.id, seq.label, interaction, cfg.n_frames, prefix, "seq_" + seq.id, static_cast<bool>(is_train[i])});
      }
      out.push_back(std::move(seq));
    }
  }
  return out;
}

DatasetManifest generate_dataset(const DatasetConfig& cfg, const fs::path& root) {
  DatasetManifest manifest;
  const std::vector<TactileSequence> seqs = generate_sequences(cfg, &manifest);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw FormatError("cannot create dataset directory " + root.string() + ": " + ec.message());

  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const fs::path dir = root / manifest.rows[i].path;
    fs::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t t = 0; t < seqs[i].length(); ++t) write_png_gray(dir / frame_filename(t), seqs[i].frames[t]);
  }

  auto open = [](const fs::path& p) {
    std::ofstream f(p);
    if (!f) throw FormatError("cannot write " + p.string());
    return f;
  };
  {
    std::ofstream m = open(root / "manifest.csv");
    m << "sequence_id,label,interaction,n_frames,noisy_prefix,path\n";
    for (const auto& r : manifest.rows) {
      m << r.sequence_id << ',' << r.label << ',' << to_string(r.interaction) << ',' << r.n_frames << ','
        << r.noisy_prefix << ',' << r.path << '\n';
    }
  }
  {
    std::ofstream s = open(root / "split.csv");
    s << "sequence_id,split\n";
    for (const auto& r : manifest.rows) s << r.sequence_id << ',' << (r.train ? "train" : "test") << '\n';
  }
  {
    std::ofstream c = open(root / "dataset.cfg");
    c << cfg.to_text();
  }
  return manifest;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t parse_count(const std::string& s, const std::string& what, const fs::path& file, std::size_t line) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw FormatError(file.string() + ":" + std::to_string(line) + ": bad " + what + " '" + s + "'");
  }
}

}  // namespace

DatasetManifest read_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest " + manifest_path.string());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sequence_id,label,interaction,n_frames,noisy_prefix,path") {
    throw FormatError(manifest_path.string() + ": unexpected header '" + line + "'");
  }
  DatasetManifest manifest;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw FormatError(manifest_path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    ManifestRow r;
    r.sequence_id = f[0];
    r.label = static_cast<int>(parse_count(f[1], "label", manifest_path, lineno));
    r.interaction = parse_interaction(f[2]);
    r.n_frames = parse_count(f[3], "n_frames", manifest_path, lineno);
    r.noisy_prefix = parse_count(f[4], "noisy_prefix", manifest_path, lineno);
    r.path = f[5];
    if (r.n_frames == 0 || r.noisy_prefix >= r.n_frames) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(lineno) + ": inconsistent frame counts");
    }
    manifest.rows.push_back(std::move(r));
  }
  std::set<int> labels;
  for (const auto& r : manifest.rows) labels.insert(r.label);
  int expected = 0;
  for (int l : labels) {
    if (l != expected) {
      throw FormatError(manifest_path.string() + ": label gap, class " + std::to_string(expected) + " is missing");
    }
    ++expected;
  }
  return manifest;
}

std::vector<TactileSequence> load_dataset(const fs::path& manifest_path) {
  const DatasetManifest manifest = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  std::vector<TactileSequence> out;
  out.reserve(manifest.rows.size());
  for (const auto& r : manifest.rows) {
    TactileSequence seq;
    seq.id = r.sequence_id;
    seq.label = r.label;
    seq.interaction = r.interaction;
    seq.noisy_prefix = r.noisy_prefix;
    for (std::size_t t = 0; t < r.n_frames; ++t) {
      Image frame = read_png_gray(root / r.path / frame_filename(t));
      if (!seq.frames.empty() && (frame.rows() != seq.frames.front().rows() || frame.cols() != seq.frames.front().cols())) {
        throw FormatError("frame " + (root / r.path / frame_filename(t)).string() + " has a different size");
      }
      seq.frames.push_back(std::move(frame));
    }
    out.push_back(std::move(seq));
  }
  return out;
}

Dataset load_split(const fs::path& root) {
  Dataset ds;
  std::vector<TactileSequence> all = load_dataset(root / "manifest.csv");
  std::map<std::string, bool> is_train;
  const fs::path split_path = root / "split.csv";
  if (fs::exists(split_path)) {
    std::ifstream in(split_path);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 2 || (f[1] != "train" && f[1] != "test")) {
        throw FormatError(split_path.string() + ": bad row '" + line + "'");
      }
      is_train[f[0]] = f[1] == "train";
    }
  }
  for (auto& s : all) {
    ds.num_classes = std::max(ds.num_classes, static_cast<std::size_t>(s.label) + 1);
    const auto it = is_train.find(s.id);
    if (it == is_train.end() || it->second) {
      ds.train.push_back(std::move(s));
    } else {
      ds.test.push_back(std::move(s));
    }
  }
  return ds;
}

const TactileSequence& find_sequence(const std::vector<TactileSequence>& seqs, const std::string& id) {
  for (const auto& s : seqs) {
    if (s.id == id) return s;
  }
  throw UsageError("no sequence with id '" + id + "'");
}

}  // namespace stam
