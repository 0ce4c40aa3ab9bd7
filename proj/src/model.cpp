#include "stam/model.hpp"

#include <cmath>
#include <map>
#include <sstream>

#include "stam/errors.hpp"
#include "stam/ops.hpp"
#include "stam/random.hpp"

namespace stam {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::cnn: return "cnn";
    case Variant::cnn_spatial: return "cnn_spatial";
    case Variant::stam: return "stam";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "cnn") return Variant::cnn;
  if (s == "cnn_spatial") return Variant::cnn_spatial;
  if (s == "stam") return Variant::stam;
  throw ConfigError("unknown variant '" + s + "' (expected cnn, cnn_spatial or stam)");
}

std::string to_string(InputNorm n) { return n == InputNorm::fixed ? "fixed" : "per_frame"; }

InputNorm parse_input_norm(const std::string& s) {
  if (s == "fixed") return InputNorm::fixed;
  if (s == "per_frame") return InputNorm::per_frame;
  throw ConfigError("unknown input normalization '" + s + "' (expected fixed or per_frame)");
}

std::size_t ModelConfig::head_input() const {
  return variant == Variant::stam ? feature_channels() * heads : feature_channels();
}

void ModelConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (backbone_channels.empty()) throw ConfigError("backbone needs at least one block");
  for (std::size_t c : backbone_channels) {
    if (c == 0) throw ConfigError("backbone channel counts must be positive");
  }
  if (input_channels == 0) throw ConfigError("input needs at least one channel");
  if (!(input_std > 0.0) || !std::isfinite(input_mean) || !(input_eps > 0.0)) {
    throw ConfigError("input normalization needs a finite mean, std > 0 and eps > 0");
  }
  const std::size_t stride = std::size_t{1} << backbone_channels.size();
  if (input_h == 0 || input_w == 0 || input_h % stride != 0 || input_w % stride != 0) {
    throw ConfigError("input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " is not divisible by the backbone stride " + std::to_string(stride));
  }
  if (variant == Variant::stam && heads == 0) throw ConfigError("stam needs at least one temporal head");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "variant=" << to_string(variant) << "\ninput_h=" << input_h << "\ninput_w=" << input_w
     << "\ninput_channels=" << input_channels << "\ninput_norm=" << to_string(input_norm)
     << "\ninput_eps=" << input_eps << "\ninput_mean=" << input_mean
     << "\ninput_std=" << input_std << "\nbackbone_channels=";
  for (std::size_t i = 0; i < backbone_channels.size(); ++i) os << (i ? "," : "") << backbone_channels[i];
  os << "\nheads=" << heads << "\nnum_classes=" << num_classes << "\nseed=" << seed << '\n';
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("model config is missing '" + key + "'");
    return it->second;
  };
  auto num = [&](const std::string& key) -> std::size_t {
    try {
      return static_cast<std::size_t>(std::stoull(get(key)));
    } catch (const std::invalid_argument&) {
      throw FormatError("model config has a bad value for '" + key + "'");
    }
  };
  ModelConfig c;
  try {
    c.variant = parse_variant(get("variant"));
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  c.input_h = num("input_h");
  c.input_w = num("input_w");
  c.input_channels = num("input_channels");
  try {
    c.input_norm = parse_input_norm(get("input_norm"));
    c.input_eps = std::stod(get("input_eps"));
    c.input_mean = std::stod(get("input_mean"));
    c.input_std = std::stod(get("input_std"));
  } catch (const std::invalid_argument&) {
    // ConfigError derives from invalid_argument too.
    throw FormatError("model config has a bad input normalization");
  }
  c.backbone_channels.clear();
  std::stringstream chans(get("backbone_channels"));
  std::string item;
  while (std::getline(chans, item, ',')) c.backbone_channels.push_back(static_cast<std::size_t>(std::stoull(item)));
  c.heads = num("heads");
  c.num_classes = num("num_classes");
  c.seed = std::stoull(get("seed"));
  return c;
}

Model Model::build(const ModelConfig& config) {
  config.validate();
  Model m;
  m.config_ = config;

  // Each component draws from its own stream so variants built with the same
  // seed share their common parameters.
  Rng backbone_rng(mix_seed(config.seed, 1));
  std::size_t cin = config.input_channels;
  for (std::size_t cout : config.backbone_channels) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * 9));
    m.backbone_.push_back({uniform_tensor(Shape{cout, cin, 3, 3}, -bound, bound, backbone_rng, true),
                           Tensor::zeros(Shape{cout}, true)});
    cin = cout;
  }
  if (config.variant != Variant::cnn) {
    Rng spatial_rng(mix_seed(config.seed, 2));
    m.spatial_ = SpatialAttentionParams::init(spatial_rng);
  }
  if (config.variant == Variant::stam) {
    Rng temporal_rng(mix_seed(config.seed, 3));
    for (std::size_t h = 0; h < config.heads; ++h) {
      m.heads_.push_back(TemporalAttentionHead::init(config.feature_channels(), temporal_rng));
    }
  }
  Rng fc_rng(mix_seed(config.seed, 4));
  const double bound = std::sqrt(3.0 / static_cast<double>(config.head_input()));
  m.fc_weight_ = uniform_tensor(Shape{config.num_classes, config.head_input()}, -bound, bound, fc_rng, true);
  m.fc_bias_ = Tensor::zeros(Shape{config.num_classes}, true);
  return m;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < backbone_.size(); ++i) {
    out.push_back({"backbone." + std::to_string(i) + ".kernel", backbone_[i].kernel});
    out.push_back({"backbone." + std::to_string(i) + ".bias", backbone_[i].bias});
  }
  if (config_.variant != Variant::cnn) {
    out.push_back({"spatial.kernel", spatial_.kernel});
    out.push_back({"spatial.bias", spatial_.bias});
  }
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    const std::string prefix = "temporal." + std::to_string(h) + ".";
    out.push_back({prefix + "w_q", heads_[h].w_q});
    out.push_back({prefix + "w_k", heads_[h].w_k});
    out.push_back({prefix + "w_v", heads_[h].w_v});
  }
  out.push_back({"fc.weight", fc_weight_});
  out.push_back({"fc.bias", fc_bias_});
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::set_parameters(const std::vector<Tensor>& tensors) {
  std::vector<Tensor*> slots;
  for (auto& l : backbone_) {
    slots.push_back(&l.kernel);
    slots.push_back(&l.bias);
  }
  if (config_.variant != Variant::cnn) {
    slots.push_back(&spatial_.kernel);
    slots.push_back(&spatial_.bias);
  }
  for (auto& h : heads_) {
    slots.push_back(&h.w_q);
    slots.push_back(&h.w_k);
    slots.push_back(&h.w_v);
  }
  slots.push_back(&fc_weight_);
  slots.push_back(&fc_bias_);
  if (tensors.size() != slots.size()) {
    throw UsageError("set_parameters: expected " + std::to_string(slots.size()) + " tensors, got " +
                     std::to_string(tensors.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (tensors[i].shape() != slots[i]->shape()) {
      throw ShapeError("set_parameters: tensor " + std::to_string(i) + " has shape " + tensors[i].shape().str() +
                       ", expected " + slots[i]->shape().str());
    }
    *slots[i] = tensors[i];
  }
}

Model Model::clone() const {
  Model m = *this;
  auto copy = [](Tensor& t) { t = Tensor(t.shape(), t.data(), t.requires_grad()); };
  for (auto& l : m.backbone_) {
    copy(l.kernel);
    copy(l.bias);
  }
  if (m.spatial_.kernel.defined()) {
    copy(m.spatial_.kernel);
    copy(m.spatial_.bias);
  }
  for (auto& h : m.heads_) {
    copy(h.w_q);
    copy(h.w_k);
    copy(h.w_v);
  }
  copy(m.fc_weight_);
  copy(m.fc_bias_);
  return m;
}

namespace {

// Input normalization; frames are data, so nothing here is differentiated.
Tensor normalize_frames(const Tensor& frames, const ModelConfig& cfg) {
  if (cfg.input_norm == InputNorm::fixed) {
    return Tensor(frames.shape(), (frames.data().array() - cfg.input_mean) / cfg.input_std);
  }
  Vector d = frames.data();
  const auto count = static_cast<Eigen::Index>(frames.shape()[0]);
  const Eigen::Index plane = d.size() / count;
  for (Eigen::Index t = 0; t < count; ++t) {
    auto frame = d.segment(t * plane, plane).array();
    const double mu = frame.mean();
    const double sd = std::sqrt((frame - mu).square().mean());
    frame = (frame - mu) / (sd + cfg.input_eps);
  }
  return Tensor(frames.shape(), std::move(d));
}

}  // namespace

Tensor Model::run(const Tensor& frames, std::size_t batch, std::size_t length, const ForwardOptions& options,
                  ForwardTrace* trace) const {
  Tensor x = normalize_frames(frames, config_);
  for (const auto& layer : backbone_) x = avg_pool2x2(relu(conv2d(x, layer.kernel, layer.bias, Padding::same)));
  if (trace != nullptr) trace->features = x;

  Tensor gated = x;
  if (config_.variant != Variant::cnn) {
    AttentionMap gate = options.identity_spatial_gate
                            ? AttentionMap{AttentionKind::spatial,
                                           Tensor::full(Shape{x.shape()[0], 1, x.shape()[2], x.shape()[3]}, 1.0)}
                            : spatial_attention_map(x, spatial_);
    gated = apply_spatial(x, gate);
    if (trace != nullptr) trace->spatial = gate;
  }
  if (trace != nullptr) trace->gated = gated;

  Tensor pooled;
  if (config_.variant == Variant::stam) {
    const std::size_t m = length * config_.feature_h() * config_.feature_w();
    Tensor positions = flatten_positions(gated);  // [batch * m x c]
    std::vector<Tensor> summaries;
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor fsn = batch == 1 ? positions : slice(positions, b * m, m);
      MultiHeadOutput mh = multi_head_temporal(fsn, heads_);
      if (trace != nullptr) trace->temporal = mh.maps;
      summaries.push_back(group_mean_rows(mh.output, m));
    }
    pooled = batch == 1 ? summaries.front() : concat(summaries, 0);
  } else {
    pooled = group_mean_rows(spatial_mean(gated), length);
  }
  return linear(pooled, fc_weight_, fc_bias_);
}

namespace {

void check_frames(const ModelConfig& cfg, const TactileSequence& seq) {
  if (seq.frames.empty()) throw ShapeError("sequence " + seq.id + " has no frames");
  if (seq.height() != cfg.input_h || seq.width() != cfg.input_w) {
    throw ShapeError("sequence " + seq.id + " has " + std::to_string(seq.height()) + "x" +
                     std::to_string(seq.width()) + " frames, model expects " + std::to_string(cfg.input_h) + "x" +
                     std::to_string(cfg.input_w));
  }
}

}  // namespace

Tensor Model::forward_batch(std::span<const TactileSequence* const> batch, const ForwardOptions& options) const {
  if (batch.empty()) throw UsageError("forward_batch: empty batch");
  const std::size_t length = batch.front()->length();
  std::vector<Tensor> stacks;
  for (const TactileSequence* seq : batch) {
    check_frames(config_, *seq);
    if (seq->length() != length) throw ShapeError("forward_batch: sequences differ in length");
    stacks.push_back(frames_tensor(*seq));
  }
  Tensor frames = stacks.size() == 1 ? stacks.front() : concat(stacks, 0);
  return run(frames, batch.size(), length, options, nullptr);
}

Tensor Model::forward(const TactileSequence& seq, const ForwardOptions& options) const {
  const TactileSequence* one[] = {&seq};
  return reshape(forward_batch(one, options), Shape{config_.num_classes});
}

ForwardTrace Model::trace(const TactileSequence& seq, const ForwardOptions& options) const {
  check_frames(config_, seq);
  ForwardTrace t;
  t.logits = reshape(run(frames_tensor(seq), 1, seq.length(), options, &t), Shape{config_.num_classes});
  return t;
}

}  // namespace stam
