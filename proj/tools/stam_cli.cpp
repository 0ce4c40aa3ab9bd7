// stam: batch entry point for dataset generation, training, evaluation,
// ablation, visualization, metrics and the self-check suite.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "stam/data.hpp"
#include "stam/errors.hpp"
#include "stam/harness.hpp"
#include "stam/image_io.hpp"
#include "stam/metrics.hpp"
#include "stam/model.hpp"
#include "stam/selfcheck.hpp"
#include "stam/train.hpp"
#include "stam/visualize.hpp"

namespace fs = std::filesystem;
using namespace stam;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::size_t threads = 1;
};

fs::path resolve(const Globals& g, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(g.out_dir) / path;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + item + "' is not a nonnegative integer");
    }
  }
  if (out.empty()) throw UsageError(flag + " is empty");
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(item);
  return out;
}

void echo_config(const Globals& g, const CLI::App& app, int argc, char** argv) {
  fs::create_directories(g.out_dir);
  std::ofstream out(fs::path(g.out_dir) / "config.txt");
  out << "# command:";
  for (int i = 0; i < argc; ++i) out << ' ' << argv[i];
  out << "\n" << app.config_to_str(true, false);
}

struct TrainFlags {
  double lr = 3e-3;
  std::size_t epochs = 20;
  std::size_t batch = 8;
  std::string optimizer = "adam";
  std::size_t length = 0;
  std::string backbone = "8,16,16";
  std::size_t heads = 4;
  std::string norm = "per_frame";

  void add(CLI::App* sub) {
    sub->add_option("--lr", lr, "learning rate")->capture_default_str();
    sub->add_option("--epochs", epochs)->capture_default_str();
    sub->add_option("--batch", batch, "batch size")->capture_default_str();
    sub->add_option("--optimizer", optimizer)->check(CLI::IsMember({"sgd", "adam"}))->capture_default_str();
    sub->add_option("--backbone", backbone, "channels per backbone block")->capture_default_str();
    sub->add_option("--heads", heads, "temporal attention heads")->capture_default_str();
    sub->add_option("--norm", norm, "input normalization")
        ->check(CLI::IsMember({"fixed", "per_frame"}))
        ->capture_default_str();
  }

  TrainConfig train(std::uint64_t seed) const {
    TrainConfig t;
    t.learning_rate = lr;
    t.epochs = epochs;
    t.batch_size = batch;
    t.optimizer = parse_optimizer(optimizer);
    t.seed = seed;
    t.sequence_length = length;
    return t;
  }

  ModelConfig model() const {
    ModelConfig m;
    m.backbone_channels = parse_sizes(backbone, "--backbone");
    m.heads = heads;
    m.input_norm = parse_input_norm(norm);
    return m;
  }
};

Dataset load_data(const Globals& g, const std::string& dir) { return load_split(resolve(g, dir)); }

const TactileSequence& find_any(const Dataset& d, const std::string& id) {
  for (const auto* split : {&d.train, &d.test}) {
    for (const auto& s : *split) {
      if (s.id == id) return s;
    }
  }
  throw UsageError("--sequence: no sequence '" + id + "' in the dataset");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal attention models for tactile texture sequences"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "master seed")->capture_default_str();
  app.add_option("--out-dir", g.out_dir, "output directory; relative paths resolve against it")->capture_default_str();
  app.add_option("--threads", g.threads, "parallel ablation cells")->check(CLI::PositiveNumber)->capture_default_str();

  // gen-data
  DatasetConfig dc;
  std::string noise_mode = "clean";
  std::string data_dir = "data";
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic tactile dataset");
  gen->add_option("--classes", dc.num_classes)->capture_default_str();
  gen->add_option("--per-class", dc.per_class)->capture_default_str();
  gen->add_option("--frames", dc.n_frames, "frames per sequence")->capture_default_str();
  gen->add_option("--height", dc.height)->capture_default_str();
  gen->add_option("--width", dc.width)->capture_default_str();
  gen->add_option("--noise-mode", noise_mode)->check(CLI::IsMember({"clean", "noisy"}))->capture_default_str();
  gen->add_option("--dir", data_dir, "dataset directory")->capture_default_str();

  // train
  TrainFlags tf;
  std::string variant = "stam";
  std::string checkpoint = "model.ckpt";
  std::string log_path = "train_log.csv";
  auto* train = app.add_subcommand("train", "train one model");
  train->add_option("--variant", variant)->check(CLI::IsMember({"cnn", "cnn_spatial", "stam"}))->capture_default_str();
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--length", tf.length, "truncate sequences to this length (0 = as stored)")->capture_default_str();
  train->add_option("--checkpoint", checkpoint, "output checkpoint")->capture_default_str();
  train->add_option("--log", log_path, "epoch log CSV")->capture_default_str();
  tf.add(train);

  // eval
  std::string split = "test";
  std::size_t eval_length = 0;
  auto* eval = app.add_subcommand("eval", "accuracy of a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data_dir)->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  eval->add_option("--length", eval_length)->capture_default_str();

  // ablate
  std::string clean_dir, noisy_dir;
  std::string variants = "cnn,cnn_spatial,stam", lengths = "2,3,4,5,6,7", seeds = "1,2,3";
  auto* ablate = app.add_subcommand("ablate", "variant x length x noise-mode ablation grid");
  ablate->add_option("--clean", clean_dir, "clean dataset directory");
  ablate->add_option("--noisy", noisy_dir, "noisy dataset directory");
  ablate->add_option("--variants", variants)->capture_default_str();
  ablate->add_option("--lengths", lengths)->capture_default_str();
  ablate->add_option("--seeds", seeds)->capture_default_str();
  tf.add(ablate);

  // gradcam
  std::string sequence;
  int target = -1;
  std::string layer = "backbone";
  auto* gradcam = app.add_subcommand("gradcam", "Grad-CAM heatmaps for one sequence");
  gradcam->add_option("--checkpoint", checkpoint)->required();
  gradcam->add_option("--data", data_dir)->required();
  gradcam->add_option("--sequence", sequence)->required();
  gradcam->add_option("--class", target, "target class (-1 = predicted)")->capture_default_str();
  gradcam->add_option("--layer", layer)->check(CLI::IsMember({"backbone", "spatial"}))->capture_default_str();

  // attnmap
  std::size_t query = 0, top_k = 10;
  auto* attn = app.add_subcommand("attnmap", "temporal attention row of one query position");
  attn->add_option("--checkpoint", checkpoint)->required();
  attn->add_option("--data", data_dir)->required();
  attn->add_option("--sequence", sequence)->required();
  attn->add_option("--query", query, "flat query position t*h*w + y*w + x")->capture_default_str();
  attn->add_option("--k", top_k, "positions to rank")->capture_default_str();

  // ssim
  std::string image_a, image_b, ssim_mode = "global";
  ColourSsimConfig sc;
  auto* ssim = app.add_subcommand("ssim", "colour SSIM of two images");
  ssim->add_option("image_a", image_a)->required();
  ssim->add_option("image_b", image_b)->required();
  ssim->add_option("--mode", ssim_mode)->check(CLI::IsMember({"global", "windowed"}))->capture_default_str();
  ssim->add_option("--window", sc.window)->capture_default_str();
  ssim->add_option("--c1", sc.c1)->capture_default_str();
  ssim->add_option("--c2", sc.c2)->capture_default_str();

  // selfcheck
  std::size_t check_seeds = 20;
  auto* self = app.add_subcommand("selfcheck", "gradient and invariant suite");
  self->add_option("--seeds", check_seeds)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    // Only commands that write artifacts leave a config record behind.
    if (!ssim->parsed() && !eval->parsed() && !self->parsed()) echo_config(g, app, argc, argv);

    if (gen->parsed()) {
      dc.noise_mode = parse_noise_mode(noise_mode);
      dc.seed = g.seed;
      const fs::path root = resolve(g, data_dir);
      const DatasetManifest m = generate_dataset(dc, root);
      std::cout << "wrote " << m.rows.size() << " sequences to " << root.string() << '\n';
    } else if (train->parsed()) {
      const Dataset d = load_data(g, data_dir);
      ModelConfig mc = tf.model();
      mc.variant = parse_variant(variant);
      mc.num_classes = d.num_classes;
      mc.seed = g.seed;
      if (!d.train.empty()) {
        mc.input_h = d.train.front().height();
        mc.input_w = d.train.front().width();
      }
      Model model = Model::build(mc);
      const TrainConfig tc = tf.train(g.seed);
      std::ofstream log(resolve(g, log_path));
      const FitResult r = fit(model, d.train, tc, &log);
      TrainingMeta meta;
      meta.epoch = r.epochs.size();
      meta.loss = r.epochs.empty() ? 0.0 : r.epochs.back().mean_loss;
      save_checkpoint(model, resolve(g, checkpoint), meta);
      std::printf("final loss %.6f\n", meta.loss);
      if (!d.test.empty()) std::printf("test accuracy %.6f\n", evaluate(model, d.test, tc.sequence_length));
    } else if (eval->parsed()) {
      const Checkpoint ck = load_checkpoint(resolve(g, checkpoint));
      const Dataset d = load_data(g, data_dir);
      const auto& seqs = split == "test" ? d.test : d.train;
      if (seqs.empty()) throw UsageError("--split: the " + split + " split is empty");
      std::printf("%.6f\n", evaluate(ck.model, seqs, eval_length));
    } else if (ablate->parsed()) {
      GridConfig grid;
      grid.variants.clear();
      for (const auto& v : split_list(variants)) grid.variants.push_back(parse_variant(v));
      grid.lengths = parse_sizes(lengths, "--lengths");
      grid.seeds.clear();
      for (std::size_t s : parse_sizes(seeds, "--seeds")) grid.seeds.push_back(s);
      grid.model = tf.model();
      grid.train = tf.train(g.seed);
      grid.threads = g.threads;
      std::map<NoiseMode, Dataset> datasets;
      grid.modes.clear();
      if (!clean_dir.empty()) {
        datasets[NoiseMode::clean] = load_data(g, clean_dir);
        grid.modes.push_back(NoiseMode::clean);
      }
      if (!noisy_dir.empty()) {
        datasets[NoiseMode::noisy] = load_data(g, noisy_dir);
        grid.modes.push_back(NoiseMode::noisy);
      }
      if (grid.modes.empty()) throw UsageError("ablate needs --clean and/or --noisy");
      const auto& any = datasets.begin()->second;
      if (!any.train.empty()) {
        grid.model.input_h = any.train.front().height();
        grid.model.input_w = any.train.front().width();
      }
      const AblationReport report = run_ablation(datasets, grid, fs::path(g.out_dir));
      std::cout << render_table(report);
      for (const auto& c : report.cells) {
        if (!c.ok()) std::cerr << "cell " << to_string(c.variant) << " n=" << c.n << " failed: " << c.error << '\n';
      }
      if (report.any_failed()) return 1;
    } else if (gradcam->parsed()) {
      const Checkpoint ck = load_checkpoint(resolve(g, checkpoint));
      const Dataset d = load_data(g, data_dir);
      const TactileSequence& seq = find_any(d, sequence);
      const int cls = target >= 0 ? target : argmax(ck.model.forward(seq));
      const auto maps = grad_cam(ck.model, seq, cls, layer);
      const std::size_t factor = ck.model.config().input_h / ck.model.config().feature_h();
      for (std::size_t t = 0; t < maps.size(); ++t) {
        char name[160];
        std::snprintf(name, sizeof name, "gradcam_%s_c%d_%s", seq.id.c_str(), cls, frame_filename(t).c_str());
        write_png_gray(resolve(g, name), upsample_nearest(maps[t].values, factor));
      }
      std::printf("class %d, %zu heatmaps\n", cls, maps.size());
    } else if (attn->parsed()) {
      const Checkpoint ck = load_checkpoint(resolve(g, checkpoint));
      if (ck.model.config().variant != Variant::stam) throw UsageError("--checkpoint: attnmap needs a stam model");
      const Dataset d = load_data(g, data_dir);
      const TactileSequence& seq = find_any(d, sequence);
      const ForwardTrace tr = ck.model.trace(seq);
      const auto& cfg = ck.model.config();
      const std::size_t n = seq.length(), h = cfg.feature_h(), w = cfg.feature_w();
      const auto ranked = export_temporal_attention(tr.temporal, query, top_k, n, h, w);
      const std::string stem = "attn_" + seq.id + "_q" + std::to_string(query);
      write_ranked_csv(resolve(g, stem + ".csv"), query, ranked);
      const Tensor avg = average_maps(tr.temporal);
      write_png_gray(resolve(g, stem + ".png"), upsample_nearest(attention_row_image(avg, query, n, h, w), 8));
      for (const auto& r : ranked) std::printf("frame %zu y %zu x %zu weight %.6f\n", r.frame, r.y, r.x, r.weight);
    } else if (ssim->parsed()) {
      sc.mode = ssim_mode == "global" ? ColourSsimConfig::Mode::global : ColourSsimConfig::Mode::windowed;
      const Image a = read_png_gray(resolve(g, image_a));
      const Image b = read_png_gray(resolve(g, image_b));
      auto as_tensor = [](const Image& img) {
        return Tensor(Shape{static_cast<std::size_t>(img.rows()), static_cast<std::size_t>(img.cols())},
                      Eigen::Map<const Vector>(img.data(), img.size()));
      };
      std::printf("%.6f\n", colour_ssim(as_tensor(a), as_tensor(b), sc));
    } else if (self->parsed()) {
      bool ok = report_outcomes(gradient_suite(check_seeds), std::cout);
      ok = report_outcomes(invariant_suite(check_seeds), std::cout) && ok;
      return ok ? 0 : 1;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
