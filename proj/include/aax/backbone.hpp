#pragma once

// Uniform contract over the three classifier families. Every backbone is a
// static graph whose dropout layers sit after the final convolutional block
// and before the classification head, so stochastic passes can share the
// deterministic trunk.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "aax/error.hpp"
#include "aax/nn.hpp"
#include "aax/tensor.hpp"

namespace aax {

enum class Family { kResidual, kEfficient, kDense };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::kResidual: return "residual";
    case Family::kEfficient: return "efficient";
    case Family::kDense: return "dense";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "residual" || s == "resnet") return Family::kResidual;
  if (s == "efficient" || s == "efficientnet") return Family::kEfficient;
  if (s == "dense" || s == "densenet") return Family::kDense;
  throw ConfigError("unknown architecture family '" + s +
                    "' (expected residual, efficient or dense)");
}

struct BackboneSpec {
  std::string name;  // model id, e.g. "a"
  Family family = Family::kResidual;
  std::string target_layer;  // empty: output of the final convolutional block
  double dropout_rate = 0.3;
  int num_classes = 2;
  int input_size = 224;
  int in_channels = 3;
  int width = 8;  // base channel count; scales every layer
  std::vector<double> norm_mean = {0.485, 0.456, 0.406};
  std::vector<double> norm_std = {0.229, 0.224, 0.225};
  std::uint64_t init_seed = 0;
  std::string pretrained_weights;  // checkpoint directory used when pretrained=true

  void validate() const {
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw ConfigError("dropout_rate must be in [0, 1), got " + std::to_string(dropout_rate));
    }
    if (num_classes < 1) throw ConfigError("num_classes must be positive");
    if (input_size < 8) throw ConfigError("input_size must be at least 8");
    if (in_channels < 1) throw ConfigError("in_channels must be positive");
    if (width < 2 || width % 2 != 0) throw ConfigError("width must be an even number >= 2");
    if (norm_mean.size() != static_cast<std::size_t>(in_channels) ||
        norm_std.size() != static_cast<std::size_t>(in_channels)) {
      throw ConfigError("normalization statistics must have one entry per input channel");
    }
    for (double s : norm_std) {
      if (!(s > 0)) throw ConfigError("normalization std must be positive");
    }
  }
};

// Per-channel statistics of the corpus a family is conventionally pretrained
// on (ImageNet), collapsed to one channel for grayscale inputs.
inline void use_default_normalization(BackboneSpec& spec) {
  if (spec.in_channels == 3) {
    spec.norm_mean = {0.485, 0.456, 0.406};
    spec.norm_std = {0.229, 0.224, 0.225};
  } else {
    spec.norm_mean.assign(spec.in_channels, 0.449);
    spec.norm_std.assign(spec.in_channels, 0.226);
  }
}

inline void to_json(nlohmann::json& j, const BackboneSpec& s) {
  j = nlohmann::json{{"name", s.name},
                     {"family", to_string(s.family)},
                     {"target_layer", s.target_layer},
                     {"dropout_rate", s.dropout_rate},
                     {"num_classes", s.num_classes},
                     {"input_size", s.input_size},
                     {"in_channels", s.in_channels},
                     {"width", s.width},
                     {"norm_mean", s.norm_mean},
                     {"norm_std", s.norm_std},
                     {"init_seed", s.init_seed}};
}

inline void from_json(const nlohmann::json& j, BackboneSpec& s) {
  s.name = j.value("name", std::string{});
  s.family = parse_family(j.at("family").get<std::string>());
  s.target_layer = j.value("target_layer", std::string{});
  s.dropout_rate = j.value("dropout_rate", 0.3);
  s.num_classes = j.value("num_classes", 2);
  s.input_size = j.value("input_size", 224);
  s.in_channels = j.value("in_channels", 3);
  s.width = j.value("width", 8);
  if (j.contains("norm_mean")) {
    s.norm_mean = j.at("norm_mean").get<std::vector<double>>();
    s.norm_std = j.at("norm_std").get<std::vector<double>>();
  } else {
    use_default_normalization(s);
  }
  s.init_seed = j.value("init_seed", std::uint64_t{0});
}

// activations/gradients: channels x h x w at the target layer.
struct FeatureCapture {
  Tensor activations;
  Tensor gradients;
  std::vector<double> class_logits;
  int class_index = 0;
};

class Backbone {
 public:
  Backbone(BackboneSpec spec, nn::Network net) : spec_(std::move(spec)), net_(std::move(net)) {
    const auto& out = net_.node(net_.output()).out;
    if (out.size() != static_cast<std::size_t>(spec_.num_classes)) {
      throw ConfigError("network head emits " + std::to_string(out.size()) +
                        " logits, spec expects " + std::to_string(spec_.num_classes));
    }
    resolve_target();
  }

  const BackboneSpec& spec() const noexcept { return spec_; }
  const nn::Network& network() const noexcept { return net_; }
  nn::Network& network() noexcept { return net_; }
  int target_index() const noexcept { return target_; }
  const std::string& target_layer() const noexcept { return spec_.target_layer; }
  int num_classes() const noexcept { return spec_.num_classes; }
  Shape input_shape() const { return net_.input_shape(); }

  // Layers that produce a spatial feature map and can serve as target_layer.
  std::vector<std::string> spatial_layers() const {
    std::vector<std::string> names;
    for (const auto& n : net_.nodes()) {
      if (n.op != nn::Op::kInput && n.spatial()) names.push_back(n.name);
    }
    return names;
  }

  void set_dropout_rate(double rate) {
    net_.set_dropout_rate(rate);
    spec_.dropout_rate = rate;
  }

  std::vector<double> logits(const Tensor& image, nn::DropoutMode mode) const {
    nn::Workspace ws;
    net_.forward(image, ws, mode);
    const auto& out = ws.values[net_.output()];
    return {out.values().begin(), out.values().end()};
  }

 private:
  void resolve_target() {
    if (spec_.target_layer.empty()) {
      spec_.target_layer = default_target();
    }
    const auto idx = net_.find(spec_.target_layer);
    const bool ok = idx && net_.node(*idx).op != nn::Op::kInput && net_.node(*idx).spatial();
    if (!ok) {
      std::string list;
      for (const auto& n : spatial_layers()) list += (list.empty() ? "" : ", ") + n;
      throw ConfigError("target_layer '" + spec_.target_layer +
                        "' is not a spatial layer of this network; available: " + list);
    }
    target_ = *idx;
  }

  // Last spatial node before the first dropout (the final block's output).
  std::string default_target() const {
    std::string last;
    for (const auto& n : net_.nodes()) {
      if (n.op == nn::Op::kDropout) break;
      if (n.op != nn::Op::kInput && n.spatial()) last = n.name;
    }
    return last;
  }

  BackboneSpec spec_;
  nn::Network net_;
  int target_ = 0;
};

namespace detail {

inline int residual_trunk(nn::Network& net, int x, int w) {
  x = net.conv2d("stem_conv", x, w, 3);
  x = net.relu("stem_relu", x);
  const int stem = net.max_pool("stem_pool", x);
  x = net.conv2d("block1_conv1", stem, w, 3);
  x = net.relu("block1_relu1", x);
  x = net.conv2d("block1_conv2", x, w, 3);
  x = net.add("block1_add", x, stem);
  x = net.relu("block1_out", x);
  const int down = net.max_pool("block2_pool", x);
  x = net.conv2d("block2_conv1", down, 2 * w, 3);
  x = net.relu("block2_relu1", x);
  x = net.conv2d("block2_conv2", x, 2 * w, 3);
  const int proj = net.conv2d("block2_proj", down, 2 * w, 1, 1, 0);
  x = net.add("block2_add", x, proj);
  return net.relu("block2_out", x);
}

// Mobile inverted bottlenecks with squeeze-excitation and 5x5 depthwise
// kernels, as in the efficiency scaled family, shrunk to three stages.
inline int squeeze_excite(nn::Network& net, const std::string& p, int x, int channels, int w) {
  int se = net.global_avg_pool(p + "_se_pool", x);
  se = net.relu(p + "_se_relu", net.dense(p + "_se_reduce", se, std::max(2, w / 2)));
  se = net.sigmoid(p + "_se_gate", net.dense(p + "_se_expand", se, channels));
  return net.channel_scale(p + "_se_scale", x, se);
}

inline int efficient_trunk(nn::Network& net, int x, int w) {
  const int stem = net.silu("stem_act", net.conv2d("stem_conv", x, w, 3, 2));
  x = net.silu("mb1_expand_act", net.conv2d("mb1_expand", stem, 2 * w, 1, 1, 0));
  x = net.silu("mb1_dw_act", net.conv2d("mb1_dw", x, 2 * w, 5, 1, -1, 2 * w));
  x = squeeze_excite(net, "mb1", x, 2 * w, w);
  x = net.conv2d("mb1_project", x, w, 1, 1, 0);
  x = net.add("mb1_add", x, stem);
  x = net.silu("mb2_dw_act", net.conv2d("mb2_dw", x, w, 5, 2, -1, w));
  const int mb2 = net.silu("mb2_out", net.conv2d("mb2_project", x, 2 * w, 1, 1, 0));
  x = net.silu("mb3_expand_act", net.conv2d("mb3_expand", mb2, 4 * w, 1, 1, 0));
  x = net.silu("mb3_dw_act", net.conv2d("mb3_dw", x, 4 * w, 5, 1, -1, 4 * w));
  x = squeeze_excite(net, "mb3", x, 4 * w, w);
  x = net.conv2d("mb3_project", x, 2 * w, 1, 1, 0);
  return net.silu("mb3_out", net.add("mb3_add", x, mb2));
}

inline int dense_trunk(nn::Network& net, int x, int w) {
  const int growth = w / 2;
  x = net.relu("stem_relu", net.conv2d("stem_conv", x, w, 3));
  x = net.max_pool("stem_pool", x);
  auto dense_layer = [&](const std::string& name, int in) {
    const int y = net.relu(name + "_relu", net.conv2d(name + "_conv", in, growth, 3));
    return net.concat(name + "_concat", {in, y});
  };
  x = dense_layer("dense1_l1", x);
  x = dense_layer("dense1_l2", x);
  x = net.relu("transition_relu", net.conv2d("transition_conv", x, w, 1, 1, 0));
  x = net.avg_pool("transition_pool", x);
  x = dense_layer("dense2_l1", x);
  x = dense_layer("dense2_l2", x);
  return net.relu("dense2_out", net.conv2d("dense2_fuse", x, 2 * w, 1, 1, 0));
}

}  // namespace detail

inline nn::Network load_weights_into(nn::Network net, const std::filesystem::path& dir);

// Builds the classifier for spec. Dropout is inserted after the final
// convolutional block (element-wise) and before the num_classes-logit head.
// With pretrained=true the weights are read from spec.pretrained_weights.
inline Backbone build_backbone(const BackboneSpec& spec, bool pretrained = false) {
  spec.validate();
  nn::Network net;
  int x = net.input(Shape{spec.in_channels, spec.input_size, spec.input_size});
  switch (spec.family) {
    case Family::kResidual: x = detail::residual_trunk(net, x, spec.width); break;
    case Family::kEfficient: x = detail::efficient_trunk(net, x, spec.width); break;
    case Family::kDense: x = detail::dense_trunk(net, x, spec.width); break;
  }
  x = net.dropout("feature_dropout", x, spec.dropout_rate);
  x = net.global_avg_pool("global_pool", x);
  x = net.dropout("head_dropout", x, spec.dropout_rate);
  net.dense("classifier", x, spec.num_classes);
  net.init_parameters(spec.init_seed);
  if (pretrained) {
    if (spec.pretrained_weights.empty()) {
      throw ConfigError("pretrained backbone requested but no pretrained_weights directory set");
    }
    net = load_weights_into(std::move(net), spec.pretrained_weights);
  }
  return Backbone(spec, std::move(net));
}

// Softmax probabilities for one (preprocessed) image. Deterministic when
// dropout is inactive; reproducible for a fixed seed when active.
inline std::vector<double> forward_stochastic(const Backbone& backbone, const Tensor& image,
                                              bool dropout_active, std::uint64_t seed) {
  return nn::softmax(backbone.logits(image, {dropout_active, seed}));
}

// Target-layer activations and d(logit[class_index])/d(activations) from one
// forward and one backward pass.
inline FeatureCapture capture(const Backbone& backbone, const Tensor& image, int class_index,
                              bool dropout_active = false, std::uint64_t seed = 0) {
  if (class_index < 0 || class_index >= backbone.num_classes()) {
    throw InputError("class_index " + std::to_string(class_index) + " out of range [0, " +
                     std::to_string(backbone.num_classes()) + ")");
  }
  const auto& net = backbone.network();
  nn::Workspace ws;
  net.forward(image, ws, {dropout_active, seed});
  ws.clear_grads();
  const int out = net.output();
  Tensor seed_grad(net.node(out).out);
  seed_grad[class_index] = 1.0;
  ws.grads[out] = std::move(seed_grad);
  const int t = backbone.target_index();
  net.backward(ws, t + 1, net.size(), {});

  FeatureCapture cap;
  cap.activations = ws.values[t];
  cap.gradients = ws.grads[t].empty() ? Tensor(cap.activations.shape()) : ws.grads[t];
  const auto& logits = ws.values[out];
  cap.class_logits.assign(logits.values().begin(), logits.values().end());
  cap.class_index = class_index;
  return cap;
}

// Converts a [0,1] image of any channel count and size into the backbone's
// input tensor: bilinear resize, channel replication (or averaging down to
// one channel), then per-channel normalization.
inline Tensor preprocess(const Tensor& image, const BackboneSpec& spec) {
  const Shape& s = image.shape();
  if (s.channels < 1 || s.height < 1 || s.width < 1) throw InputError("empty image");
  const int size = spec.input_size;
  std::vector<Plane> planes;
  for (int c = 0; c < s.channels; ++c) {
    if (s.height == size && s.width == size) {
      Plane p(size, size);
      const auto ch = image.channel(c);
      p.values.assign(ch.begin(), ch.end());
      planes.push_back(std::move(p));
    } else {
      planes.push_back(resize_bilinear(image.channel(c), s.height, s.width, size, size));
    }
  }
  Tensor out(Shape{spec.in_channels, size, size});
  for (int c = 0; c < spec.in_channels; ++c) {
    auto dst = out.channel(c);
    for (std::size_t p = 0; p < dst.size(); ++p) {
      double v;
      if (s.channels == spec.in_channels) {
        v = planes[c].values[p];
      } else if (s.channels == 1) {
        v = planes[0].values[p];
      } else {
        v = 0.0;
        for (const auto& pl : planes) v += pl.values[p];
        v /= static_cast<double>(planes.size());
      }
      dst[p] = (v - spec.norm_mean[c]) / spec.norm_std[c];
    }
  }
  return out;
}

// --- checkpoints ---------------------------------------------------------

// Directory layout: weights.bin (magic, count, raw little-endian doubles) and
// meta.json (BackboneSpec fields plus the training config hash).
inline void save_checkpoint(const Backbone& backbone, const std::filesystem::path& dir,
                            const std::string& config_hash = "") {
  std::filesystem::create_directories(dir);
  const auto params = backbone.network().parameters();
  {
    std::ofstream out(dir / "weights.bin", std::ios::binary | std::ios::trunc);
    const char magic[4] = {'A', 'A', 'X', 'W'};
    const std::uint64_t n = params.size();
    out.write(magic, 4);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(params.data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    if (!out) throw Error("failed writing " + (dir / "weights.bin").string());
  }
  nlohmann::json meta;
  meta["v"] = 1;
  meta["spec"] = backbone.spec();
  meta["config_hash"] = config_hash;
  meta["parameter_count"] = params.size();
  std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

inline nn::Network load_weights_into(nn::Network net, const std::filesystem::path& dir) {
  std::ifstream in(dir / "weights.bin", std::ios::binary);
  if (!in) throw ConfigError("missing checkpoint weights in " + dir.string());
  char magic[4];
  std::uint64_t n = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || std::string(magic, 4) != "AAXW") {
    throw ConfigError("corrupt checkpoint " + (dir / "weights.bin").string());
  }
  auto params = net.parameters();
  if (n != params.size()) {
    throw ConfigError("checkpoint has " + std::to_string(n) + " parameters, network needs " +
                      std::to_string(params.size()));
  }
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw ConfigError("truncated checkpoint " + (dir / "weights.bin").string());
  return net;
}

inline Backbone load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw ConfigError("missing checkpoint metadata in " + dir.string());
  const auto meta = nlohmann::json::parse(in);
  BackboneSpec spec = meta.at("spec").get<BackboneSpec>();
  spec.pretrained_weights = dir.string();
  return build_backbone(spec, true);
}

}  // namespace aax
