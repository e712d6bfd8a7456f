#ifndef IRISLOC_MODELS_HPP
#define IRISLOC_MODELS_HPP

// The two network families:
//
//   UNetCoord  - U-Net for heatmap regression. CoordConv channels are added
//                to the input of the first encoder convolution. Linear head.
//   U2NetLite  - nested U-Net for segmentation. Every encoder/decoder block
//                and the bridge is a residual U-block (an inner U-Net whose
//                output is added to a 1x1-conv projection of the block
//                input). Single sigmoid output map, no side outputs.
//
// A Network is a flat layer plan over numbered value slots plus an ordered
// list of named parameters. Slot 0 is the input batch.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "irisloc/errors.hpp"
#include "irisloc/graph.hpp"
#include "irisloc/ops.hpp"
#include "irisloc/optim.hpp"
#include "irisloc/rng.hpp"
#include "irisloc/tensor.hpp"

namespace irisloc {

enum class Variant : std::uint8_t { UNetCoord = 0, U2NetLite = 1 };
enum class OutputHead : std::uint8_t { Linear = 0, Sigmoid = 1 };

inline std::string to_string(Variant v) { return v == Variant::UNetCoord ? "unet-coord" : "u2net-lite"; }
inline std::string to_string(OutputHead h) { return h == OutputHead::Linear ? "linear" : "sigmoid"; }

inline Variant parse_variant(const std::string& s) {
  if (s == "unet-coord") return Variant::UNetCoord;
  if (s == "u2net-lite") return Variant::U2NetLite;
  throw ValidationError("unknown model variant '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::UNetCoord;
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t input_channels = 1;
  std::size_t base_channels = 8;
  std::size_t depth = 3;
  std::size_t rsu_inner_depth = 2;  // U2NetLite only
  OutputHead head = OutputHead::Linear;
  bool coord_every_level = false;   // UNetCoord only; off applies CoordConv once

  static ModelConfig unet_coord(std::size_t height = 64, std::size_t width = 64) {
    ModelConfig cfg;
    cfg.height = height;
    cfg.width = width;
    return cfg;
  }

  static ModelConfig u2net_lite(std::size_t height = 64, std::size_t width = 64) {
    ModelConfig cfg;
    cfg.variant = Variant::U2NetLite;
    cfg.height = height;
    cfg.width = width;
    cfg.head = OutputHead::Sigmoid;
    return cfg;
  }

  /// Spatial sizes must be divisible by this.
  std::size_t size_multiple() const {
    std::size_t levels = depth;
    if (variant == Variant::U2NetLite && rsu_inner_depth > 1) levels += rsu_inner_depth - 1;
    return std::size_t{1} << levels;
  }

  void validate() const {
    if (depth < 2) throw ValidationError("model config: depth must be at least 2");
    if (depth > 8) throw ValidationError("model config: depth must be at most 8");
    if (base_channels < 1 || base_channels > 1024) {
      throw ValidationError("model config: base-channels must be in [1, 1024]");
    }
    if (input_channels < 1 || input_channels > 64) {
      throw ValidationError("model config: input-channels must be in [1, 64]");
    }
    if (height > 4096 || width > 4096) throw ValidationError("model config: input larger than 4096 px");
    if (variant == Variant::U2NetLite && (rsu_inner_depth < 1 || rsu_inner_depth > 6)) {
      throw ValidationError("model config: rsu-inner-depth must be in [1, 6]");
    }
    const std::size_t m = size_multiple();
    if (height == 0 || width == 0 || height % m || width % m) {
      throw ValidationError("model config: input size " + std::to_string(height) + "x" +
                            std::to_string(width) + " is not divisible by " + std::to_string(m));
    }
    const OutputHead forced = variant == Variant::UNetCoord ? OutputHead::Linear : OutputHead::Sigmoid;
    if (head != forced) {
      throw ValidationError("model config: " + to_string(variant) + " requires a " + to_string(forced) +
                            " output head");
    }
    if (coord_every_level && variant != Variant::UNetCoord) {
      throw ValidationError("model config: coord-every-level applies to unet-coord only");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class LayerKind : std::uint8_t { Conv, Relu, Sigmoid, MaxPool, Upsample, Concat, CoordAugment, Add };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::MaxPool: return "maxpool2";
    case LayerKind::Upsample: return "upsample_nearest2";
    case LayerKind::Concat: return "concat_channels";
    case LayerKind::CoordAugment: return "coord_augment";
    case LayerKind::Add: return "add";
  }
  return "?";
}

struct Layer {
  LayerKind kind;
  std::vector<std::size_t> inputs;  // slot indices
  std::size_t output;               // slot index
  std::string param;                // conv only: "<param>.weight", "<param>.bias"
  std::size_t padding = 0;
};

struct ForwardOptions {
  /// Keep the CoordConv channels but fill them with zeros.
  bool zero_coord_channels = false;
};

template <typename T>
class Network {
 public:
  struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
  };

  explicit Network(ModelConfig cfg) : config_(cfg) {}

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<Layer>& plan() const noexcept { return plan_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  std::size_t output_slot() const noexcept { return output_; }

  bool has_parameter(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<T>& parameter(const std::string& name) { return params_.at(lookup(name)).tensor; }
  const Tensor<T>& parameter(const std::string& name) const { return params_.at(lookup(name)).tensor; }

  /// Total number of scalar parameters.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
  }

  std::vector<Tensor<T>*> parameter_pointers() {
    std::vector<Tensor<T>*> out;
    for (auto& p : params_) out.push_back(&p.tensor);
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  /// Training forward pass: parameters are bound so backward() fills their grads.
  Var<T> forward(Graph<T>& g, Var<T> input, const ForwardOptions& opts = {}) {
    return run(g, input, opts, [&](const std::string& name) { return g.parameter(parameter(name)); });
  }

  /// Inference forward pass without gradient tracking.
  Tensor<T> infer(const Tensor<T>& batch, const ForwardOptions& opts = {}) const {
    Graph<T> g(false);
    auto in = g.constant(batch, "input");
    auto out = run(g, in, opts, [&](const std::string& name) { return g.constant(parameter(name), "parameter"); });
    return out.value();
  }

  template <typename U>
  Network<U> cast() const {
    Network<U> out(config_);
    for (const auto& p : params_) out.add_parameter(p.name, p.tensor.template cast<U>());
    for (const auto& l : plan_) out.add_layer(l);
    out.set_output(output_);
    return out;
  }

  // Construction interface used by the builders and the checkpoint reader.
  void add_parameter(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw Error("network: duplicate parameter name '" + name + "'");
    index_.emplace(name, params_.size());
    params_.push_back({std::move(name), std::move(value)});
  }
  void add_layer(Layer layer) { plan_.push_back(std::move(layer)); }
  void set_output(std::size_t slot) { output_ = slot; }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("network: no parameter named '" + name + "'");
    return it->second;
  }

  template <typename Bind>
  Var<T> run(Graph<T>&, Var<T> input, const ForwardOptions& opts, Bind&& bind) const {
    const auto& s = input.shape();
    if (s.size() != 4 || s[1] != config_.input_channels || s[2] != config_.height ||
        s[3] != config_.width) {
      throw ShapeError("forward: expected batch [N," + std::to_string(config_.input_channels) + "," +
                       std::to_string(config_.height) + "," + std::to_string(config_.width) +
                       "], got " + describe(s));
    }
    std::vector<Var<T>> slots(plan_.size() + 1);
    slots[0] = input;
    for (const auto& layer : plan_) {
      const auto in = [&](std::size_t k) { return slots.at(layer.inputs.at(k)); };
      Var<T> out;
      switch (layer.kind) {
        case LayerKind::Conv:
          out = conv2d(in(0), bind(layer.param + ".weight"), bind(layer.param + ".bias"), 1, layer.padding);
          break;
        case LayerKind::Relu: out = relu(in(0)); break;
        case LayerKind::Sigmoid: out = sigmoid(in(0)); break;
        case LayerKind::MaxPool: out = maxpool2(in(0)); break;
        case LayerKind::Upsample: out = upsample_nearest2(in(0)); break;
        case LayerKind::Concat: out = concat_channels(in(0), in(1)); break;
        case LayerKind::CoordAugment: out = coord_augment(in(0), opts.zero_coord_channels); break;
        case LayerKind::Add: out = add(in(0), in(1)); break;
      }
      slots.at(layer.output) = out;
    }
    return slots.at(output_);
  }

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<Layer> plan_;
  std::size_t output_ = 0;
};

namespace detail {

template <typename T>
class PlanBuilder {
 public:
  PlanBuilder(Network<T>& net, std::uint64_t seed) : net_(net), seed_(seed) {}

  std::size_t input() const { return 0; }

  std::size_t conv(std::size_t in, std::size_t in_ch, std::size_t out_ch, std::size_t k,
                   const std::string& name, bool zero_init = false) {
    const std::size_t fan_in = in_ch * k * k;
    const auto index = net_.parameters().size();
    const Shape shape{out_ch, in_ch, k, k};
    net_.add_parameter(name + ".weight",
                       zero_init ? Tensor<T>(shape) : he_init<T>(shape, fan_in, derive_seed(seed_, index)));
    net_.add_parameter(name + ".bias", Tensor<T>(Shape{out_ch}));
    return emit({LayerKind::Conv, {in}, 0, name, k / 2});
  }

  std::size_t conv_relu(std::size_t in, std::size_t in_ch, std::size_t out_ch, const std::string& name) {
    return relu(conv(in, in_ch, out_ch, 3, name));
  }

  std::size_t relu(std::size_t in) { return emit({LayerKind::Relu, {in}, 0, {}}); }
  std::size_t sigmoid(std::size_t in) { return emit({LayerKind::Sigmoid, {in}, 0, {}}); }
  std::size_t pool(std::size_t in) { return emit({LayerKind::MaxPool, {in}, 0, {}}); }
  std::size_t up(std::size_t in) { return emit({LayerKind::Upsample, {in}, 0, {}}); }
  std::size_t coord(std::size_t in) { return emit({LayerKind::CoordAugment, {in}, 0, {}}); }
  std::size_t concat(std::size_t a, std::size_t b) { return emit({LayerKind::Concat, {a, b}, 0, {}}); }
  std::size_t add(std::size_t a, std::size_t b) { return emit({LayerKind::Add, {a, b}, 0, {}}); }

 private:
  std::size_t emit(Layer layer) {
    layer.output = net_.plan().size() + 1;
    net_.add_layer(std::move(layer));
    return net_.plan().size();
  }

  Network<T>& net_;
  std::uint64_t seed_;
};

// Residual U-block: inner U-Net of `levels` levels plus a 1x1 projection of
// the block input. One level degenerates to conv+ReLU plus the projection.
template <typename T>
std::size_t residual_u_block(PlanBuilder<T>& b, std::size_t in, std::size_t in_ch, std::size_t out_ch,
                             std::size_t levels, const std::string& name) {
  std::size_t inner;
  if (levels == 1) {
    inner = b.conv_relu(in, in_ch, out_ch, name + ".c1");
  } else {
    const std::size_t mid = std::max<std::size_t>(1, out_ch / 2);
    std::vector<std::size_t> enc;
    enc.push_back(b.conv_relu(in, in_ch, mid, name + ".enc1"));
    for (std::size_t l = 1; l < levels; ++l) {
      enc.push_back(b.conv_relu(b.pool(enc.back()), mid, mid, name + ".enc" + std::to_string(l + 1)));
    }
    std::size_t d = enc.back();
    for (std::size_t l = levels - 1; l-- > 0;) {
      const std::size_t out = l == 0 ? out_ch : mid;
      d = b.conv_relu(b.concat(b.up(d), enc[l]), 2 * mid, out, name + ".dec" + std::to_string(l + 1));
    }
    inner = d;
  }
  // Zero-initialised so the block starts as its inner path and activations
  // do not grow with every block.
  const std::size_t residual = b.conv(in, in_ch, out_ch, 1, name + ".res", true);
  return b.add(inner, residual);
}

}  // namespace detail

/// U-Net with CoordConv input for heatmap regression.
template <typename T = float>
Network<T> build_unet_coord(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.variant != Variant::UNetCoord) throw ValidationError("build_unet_coord: variant must be unet-coord");
  cfg.validate();
  Network<T> net(cfg);
  detail::PlanBuilder<T> b(net, seed);

  std::size_t s = b.input();
  std::size_t ch = cfg.input_channels;
  std::vector<std::pair<std::size_t, std::size_t>> skips;  // (slot, channels)
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    if (i == 0 || cfg.coord_every_level) {
      s = b.coord(s);
      ch += 2;
    }
    const std::size_t out = cfg.base_channels << i;
    const std::string name = "enc" + std::to_string(i);
    s = b.conv_relu(s, ch, out, name + ".conv1");
    s = b.conv_relu(s, out, out, name + ".conv2");
    skips.emplace_back(s, out);
    s = b.pool(s);
    ch = out;
  }
  const std::size_t bridge = cfg.base_channels << cfg.depth;
  s = b.conv_relu(s, ch, bridge, "bridge.conv1");
  s = b.conv_relu(s, bridge, bridge, "bridge.conv2");
  ch = bridge;
  for (std::size_t i = cfg.depth; i-- > 0;) {
    const auto [skip, skip_ch] = skips[i];
    const std::string name = "dec" + std::to_string(i);
    s = b.concat(b.up(s), skip);
    s = b.conv_relu(s, ch + skip_ch, skip_ch, name + ".conv1");
    s = b.conv_relu(s, skip_ch, skip_ch, name + ".conv2");
    ch = skip_ch;
  }
  net.set_output(b.conv(s, ch, 1, 1, "head"));
  return net;
}

/// Nested U-Net (residual U-blocks) with a sigmoid head for segmentation.
template <typename T = float>
Network<T> build_u2net_lite(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.variant != Variant::U2NetLite) throw ValidationError("build_u2net_lite: variant must be u2net-lite");
  cfg.validate();
  Network<T> net(cfg);
  detail::PlanBuilder<T> b(net, seed);

  std::size_t s = b.input();
  std::size_t ch = cfg.input_channels;
  std::vector<std::pair<std::size_t, std::size_t>> skips;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::size_t out = cfg.base_channels << i;
    s = detail::residual_u_block(b, s, ch, out, cfg.rsu_inner_depth, "enc" + std::to_string(i));
    skips.emplace_back(s, out);
    s = b.pool(s);
    ch = out;
  }
  const std::size_t bridge = cfg.base_channels << cfg.depth;
  s = detail::residual_u_block(b, s, ch, bridge, cfg.rsu_inner_depth, "bridge");
  ch = bridge;
  for (std::size_t i = cfg.depth; i-- > 0;) {
    const auto [skip, skip_ch] = skips[i];
    s = b.concat(b.up(s), skip);
    s = detail::residual_u_block(b, s, ch + skip_ch, skip_ch, cfg.rsu_inner_depth, "dec" + std::to_string(i));
    ch = skip_ch;
  }
  net.set_output(b.sigmoid(b.conv(s, ch, 1, 1, "head")));
  return net;
}

template <typename T = float>
Network<T> build_network(const ModelConfig& cfg, std::uint64_t seed) {
  return cfg.variant == Variant::UNetCoord ? build_unet_coord<T>(cfg, seed) : build_u2net_lite<T>(cfg, seed);
}

}  // namespace irisloc

#endif  // IRISLOC_MODELS_HPP
