#pragma once

// A small static-graph convolutional network engine: nodes are appended in
// topological order, evaluated front to back and differentiated back to
// front. Everything runs on the CPU in double precision so finite-difference
// checks are meaningful.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aax/error.hpp"
#include "aax/rng.hpp"
#include "aax/tensor.hpp"

namespace aax::nn {

enum class Op {
  kInput,
  kConv2d,
  kRelu,
  kSilu,
  kSigmoid,
  kMaxPool,
  kAvgPool,
  kAdd,
  kConcat,
  kChannelScale,
  kDropout,
  kGlobalAvgPool,
  kDense,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConv2d: return "conv2d";
    case Op::kRelu: return "relu";
    case Op::kSilu: return "silu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kMaxPool: return "max_pool";
    case Op::kAvgPool: return "avg_pool";
    case Op::kAdd: return "add";
    case Op::kConcat: return "concat";
    case Op::kChannelScale: return "channel_scale";
    case Op::kDropout: return "dropout";
    case Op::kGlobalAvgPool: return "global_avg_pool";
    case Op::kDense: return "dense";
  }
  return "?";
}

struct Node {
  std::string name;
  Op op = Op::kInput;
  std::vector<int> inputs;
  Shape out;
  // conv2d
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int groups = 1;
  bool bias = true;
  // dropout
  double rate = 0.0;
  // parameters (conv2d, dense): weights first, then bias
  std::size_t param_offset = 0;
  std::size_t weight_count = 0;
  std::size_t param_count = 0;
  int fan_in = 0;

  bool spatial() const noexcept { return out.height > 1 || out.width > 1; }
};

struct DropoutMode {
  bool active = false;
  std::uint64_t seed = 0;
};

// Per-call scratch: node values, node gradients and dropout keep-masks.
// A Network is immutable during inference, so concurrent callers each own a
// Workspace.
struct Workspace {
  std::vector<Tensor> values;
  std::vector<Tensor> grads;
  std::vector<std::vector<unsigned char>> masks;

  void clear_grads(std::size_t from = 0) {
    for (std::size_t j = from; j < grads.size(); ++j) grads[j] = Tensor{};
  }
  Tensor& grad(std::size_t j, const Shape& s) {
    if (grads[j].empty()) grads[j] = Tensor(s);
    return grads[j];
  }
};

class Network {
 public:
  int input(Shape shape, std::string name = "input") {
    if (!nodes_.empty()) throw ConfigError("network input must be the first node");
    Node n;
    n.name = std::move(name);
    n.op = Op::kInput;
    n.out = shape;
    return push(std::move(n));
  }

  // pad < 0 selects "same" padding for odd kernels.
  int conv2d(std::string name, int in, int out_channels, int kernel, int stride = 1, int pad = -1,
             int groups = 1, bool bias = true) {
    const Shape& s = at(in).out;
    if (groups <= 0 || s.channels % groups != 0 || out_channels % groups != 0) {
      throw ConfigError("conv2d '" + name + "': channels not divisible by groups");
    }
    if (pad < 0) pad = kernel / 2;
    Node n;
    n.name = std::move(name);
    n.op = Op::kConv2d;
    n.inputs = {in};
    n.kernel = kernel;
    n.stride = stride;
    n.pad = pad;
    n.groups = groups;
    n.bias = bias;
    const int oh = (s.height + 2 * pad - kernel) / stride + 1;
    const int ow = (s.width + 2 * pad - kernel) / stride + 1;
    if (oh <= 0 || ow <= 0) throw ConfigError("conv2d '" + n.name + "': empty output");
    n.out = Shape{out_channels, oh, ow};
    n.fan_in = (s.channels / groups) * kernel * kernel;
    n.weight_count = static_cast<std::size_t>(out_channels) * n.fan_in;
    n.param_count = n.weight_count + (bias ? out_channels : 0);
    return push(std::move(n));
  }

  int relu(std::string name, int in) { return unary(std::move(name), Op::kRelu, in); }
  int silu(std::string name, int in) { return unary(std::move(name), Op::kSilu, in); }
  int sigmoid(std::string name, int in) { return unary(std::move(name), Op::kSigmoid, in); }

  int max_pool(std::string name, int in) { return pool(std::move(name), Op::kMaxPool, in); }
  int avg_pool(std::string name, int in) { return pool(std::move(name), Op::kAvgPool, in); }

  int add(std::string name, int a, int b) {
    if (!(at(a).out == at(b).out)) {
      throw ConfigError("add '" + name + "': shape mismatch " + at(a).out.str() + " vs " +
                        at(b).out.str());
    }
    Node n;
    n.name = std::move(name);
    n.op = Op::kAdd;
    n.inputs = {a, b};
    n.out = at(a).out;
    return push(std::move(n));
  }

  int concat(std::string name, std::vector<int> ins) {
    if (ins.empty()) throw ConfigError("concat '" + name + "': no inputs");
    Shape out = at(ins.front()).out;
    out.channels = 0;
    for (int i : ins) {
      const Shape& s = at(i).out;
      if (s.height != out.height || s.width != out.width) {
        throw ConfigError("concat '" + name + "': spatial mismatch");
      }
      out.channels += s.channels;
    }
    Node n;
    n.name = std::move(name);
    n.op = Op::kConcat;
    n.inputs = std::move(ins);
    n.out = out;
    return push(std::move(n));
  }

  // Multiplies channel c of `x` by element c of the vector node `scale`.
  int channel_scale(std::string name, int x, int scale) {
    if (at(scale).out.size() != static_cast<std::size_t>(at(x).out.channels)) {
      throw ConfigError("channel_scale '" + name + "': scale length mismatch");
    }
    Node n;
    n.name = std::move(name);
    n.op = Op::kChannelScale;
    n.inputs = {x, scale};
    n.out = at(x).out;
    return push(std::move(n));
  }

  int dropout(std::string name, int in, double rate) {
    check_rate(rate);
    Node n;
    n.name = std::move(name);
    n.op = Op::kDropout;
    n.inputs = {in};
    n.rate = rate;
    n.out = at(in).out;
    return push(std::move(n));
  }

  int global_avg_pool(std::string name, int in) {
    Node n;
    n.name = std::move(name);
    n.op = Op::kGlobalAvgPool;
    n.inputs = {in};
    n.out = Shape{at(in).out.channels, 1, 1};
    return push(std::move(n));
  }

  int dense(std::string name, int in, int out_features, bool bias = true) {
    Node n;
    n.name = std::move(name);
    n.op = Op::kDense;
    n.inputs = {in};
    n.bias = bias;
    n.out = Shape{out_features, 1, 1};
    n.fan_in = static_cast<int>(at(in).out.size());
    n.weight_count = static_cast<std::size_t>(out_features) * n.fan_in;
    n.param_count = n.weight_count + (bias ? out_features : 0);
    return push(std::move(n));
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  int output() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
  const Shape& input_shape() const { return nodes_.at(0).out; }

  std::optional<int> find(const std::string& name) const {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].name == name) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  // Index of the first dropout node; nodes before it are deterministic and
  // can be shared between stochastic passes. size() when there is none.
  std::size_t first_stochastic() const noexcept {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].op == Op::kDropout) return i;
    }
    return nodes_.size();
  }

  void set_dropout_rate(double rate) {
    check_rate(rate);
    for (auto& n : nodes_) {
      if (n.op == Op::kDropout) n.rate = rate;
    }
  }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  std::span<double> parameters_of(std::size_t i) {
    const Node& n = nodes_.at(i);
    return std::span<double>(params_).subspan(n.param_offset, n.param_count);
  }
  std::span<const double> parameters_of(std::size_t i) const {
    const Node& n = nodes_.at(i);
    return std::span<const double>(params_).subspan(n.param_offset, n.param_count);
  }

  // He-normal weights, zero biases.
  void init_parameters(std::uint64_t seed) {
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const Node& n = nodes_[i];
      if (n.param_count == 0) continue;
      Rng rng(derive_seed(seed, i));
      const double stddev = std::sqrt(2.0 / n.fan_in);
      auto p = parameters_of(i);
      for (std::size_t k = 0; k < n.weight_count; ++k) p[k] = stddev * rng.normal();
      for (std::size_t k = n.weight_count; k < n.param_count; ++k) p[k] = 0.0;
    }
  }

  void forward(const Tensor& x, Workspace& ws, DropoutMode mode, std::size_t from = 0) const {
    if (!(x.shape() == input_shape())) {
      throw InputError("network input shape " + x.shape().str() + " expected " +
                       input_shape().str());
    }
    if (ws.values.size() != nodes_.size()) {
      ws.values.assign(nodes_.size(), Tensor{});
      ws.grads.assign(nodes_.size(), Tensor{});
      ws.masks.assign(nodes_.size(), {});
      from = 0;
    }
    if (from == 0) {
      ws.values[0] = x;
      from = 1;
    }
    for (std::size_t j = from; j < nodes_.size(); ++j) eval(j, ws, mode);
  }

  // Propagates gradients for nodes [lo, hi), highest first. Gradients flow
  // into ws.grads of the inputs (accumulating) and, when param_grads is
  // non-empty, into the parameter gradient buffer.
  void backward(Workspace& ws, std::size_t lo, std::size_t hi,
                std::span<double> param_grads) const {
    for (std::size_t j = hi; j-- > lo;) {
      if (ws.grads[j].empty() || j == 0) continue;
      backprop(j, ws, param_grads);
    }
  }

 private:
  static void check_rate(double rate) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
  }

  const Node& at(int i) const {
    if (i < 0 || static_cast<std::size_t>(i) >= nodes_.size()) {
      throw ConfigError("node index out of range");
    }
    return nodes_[i];
  }

  int push(Node n) {
    if (n.op != Op::kInput && nodes_.empty()) throw ConfigError("network needs an input first");
    if (find(n.name)) throw ConfigError("duplicate layer name '" + n.name + "'");
    n.param_offset = params_.size();
    params_.resize(params_.size() + n.param_count, 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int unary(std::string name, Op op, int in) {
    Node n;
    n.name = std::move(name);
    n.op = op;
    n.inputs = {in};
    n.out = at(in).out;
    return push(std::move(n));
  }

  int pool(std::string name, Op op, int in) {
    const Shape& s = at(in).out;
    if (s.height < 2 || s.width < 2) throw ConfigError("pool '" + name + "': input too small");
    Node n;
    n.name = std::move(name);
    n.op = op;
    n.inputs = {in};
    n.out = Shape{s.channels, s.height / 2, s.width / 2};
    return push(std::move(n));
  }

  // Output column range [lo, hi) for which ix = ox*stride + kx - pad is valid.
  static void valid_range(int kx, int stride, int pad, int in_w, int out_w, int& lo, int& hi) {
    const int off = kx - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const int last = in_w - 1 - off;
    hi = last < 0 ? 0 : std::min(out_w, last / stride + 1);
    if (lo > hi) lo = hi;
  }

  void eval(std::size_t j, Workspace& ws, DropoutMode mode) const {
    const Node& n = nodes_[j];
    Tensor out(n.out);
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kConv2d: {
        const Tensor& in = ws.values[n.inputs[0]];
        const Shape& is = in.shape();
        const auto w = parameters_of(j);
        const int in_per_group = is.channels / n.groups;
        const int out_per_group = n.out.channels / n.groups;
        const int k = n.kernel;
        for (int oc = 0; oc < n.out.channels; ++oc) {
          double* o = out.data() + oc * n.out.plane();
          if (n.bias) std::fill(o, o + n.out.plane(), w[n.weight_count + oc]);
          const int g = oc / out_per_group;
          for (int icg = 0; icg < in_per_group; ++icg) {
            const int ic = g * in_per_group + icg;
            const double* src = in.data() + ic * is.plane();
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const double wv = w[((static_cast<std::size_t>(oc) * in_per_group + icg) * k + ky) * k + kx];
                int lo, hi;
                valid_range(kx, n.stride, n.pad, is.width, n.out.width, lo, hi);
                for (int oy = 0; oy < n.out.height; ++oy) {
                  const int iy = oy * n.stride + ky - n.pad;
                  if (iy < 0 || iy >= is.height) continue;
                  const double* row = src + iy * is.width;
                  const int off = kx - n.pad;
                  double* orow = o + oy * n.out.width;
                  if (n.stride == 1) {
                    for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox + off];
                  } else {
                    for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * row[ox * n.stride + off];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& in = ws.values[n.inputs[0]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0 ? in[i] : 0.0;
        break;
      }
      case Op::kSilu: {
        const Tensor& in = ws.values[n.inputs[0]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] / (1.0 + std::exp(-in[i]));
        break;
      }
      case Op::kSigmoid: {
        const Tensor& in = ws.values[n.inputs[0]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-in[i]));
        break;
      }
      case Op::kMaxPool:
      case Op::kAvgPool: {
        const Tensor& in = ws.values[n.inputs[0]];
        for (int c = 0; c < n.out.channels; ++c) {
          for (int y = 0; y < n.out.height; ++y) {
            for (int x = 0; x < n.out.width; ++x) {
              const double a = in.at(c, 2 * y, 2 * x), b = in.at(c, 2 * y, 2 * x + 1);
              const double d = in.at(c, 2 * y + 1, 2 * x), e = in.at(c, 2 * y + 1, 2 * x + 1);
              out.at(c, y, x) = n.op == Op::kMaxPool ? std::max(std::max(a, b), std::max(d, e))
                                                     : 0.25 * (a + b + d + e);
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        const Tensor& a = ws.values[n.inputs[0]];
        const Tensor& b = ws.values[n.inputs[1]];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
        break;
      }
      case Op::kConcat: {
        std::size_t pos = 0;
        for (int i : n.inputs) {
          const Tensor& in = ws.values[i];
          std::copy(in.data(), in.data() + in.size(), out.data() + pos);
          pos += in.size();
        }
        break;
      }
      case Op::kChannelScale: {
        const Tensor& x = ws.values[n.inputs[0]];
        const Tensor& s = ws.values[n.inputs[1]];
        const std::size_t plane = n.out.plane();
        for (int c = 0; c < n.out.channels; ++c) {
          for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] = x[c * plane + p] * s[c];
        }
        break;
      }
      case Op::kDropout: {
        const Tensor& in = ws.values[n.inputs[0]];
        auto& mask = ws.masks[j];
        if (!mode.active || n.rate == 0.0) {
          mask.clear();
          out = in;
          break;
        }
        Rng rng(derive_seed(mode.seed, j));
        const double scale = 1.0 / (1.0 - n.rate);
        mask.resize(out.size());
        for (std::size_t i = 0; i < out.size(); ++i) {
          mask[i] = rng.uniform() >= n.rate ? 1 : 0;
          out[i] = mask[i] ? in[i] * scale : 0.0;
        }
        break;
      }
      case Op::kGlobalAvgPool: {
        const Tensor& in = ws.values[n.inputs[0]];
        const std::size_t plane = in.shape().plane();
        for (int c = 0; c < n.out.channels; ++c) {
          double s = 0.0;
          for (double v : in.channel(c)) s += v;
          out[c] = s / static_cast<double>(plane);
        }
        break;
      }
      case Op::kDense: {
        const Tensor& in = ws.values[n.inputs[0]];
        const auto w = parameters_of(j);
        const std::size_t fan = n.fan_in;
        for (int o = 0; o < n.out.channels; ++o) {
          double s = n.bias ? w[n.weight_count + o] : 0.0;
          const double* row = w.data() + o * fan;
          for (std::size_t i = 0; i < fan; ++i) s += row[i] * in[i];
          out[o] = s;
        }
        break;
      }
    }
    ws.values[j] = std::move(out);
  }

  void backprop(std::size_t j, Workspace& ws, std::span<double> param_grads) const {
    const Node& n = nodes_[j];
    const Tensor& g = ws.grads[j];
    const bool want_params = !param_grads.empty();
    switch (n.op) {
      case Op::kInput:
        break;
      case Op::kConv2d: {
        const int src_id = n.inputs[0];
        const Tensor& in = ws.values[src_id];
        const Shape& is = in.shape();
        Tensor& gi = ws.grad(src_id, is);
        const auto w = parameters_of(j);
        double* gw = want_params ? param_grads.data() + n.param_offset : nullptr;
        const int in_per_group = is.channels / n.groups;
        const int out_per_group = n.out.channels / n.groups;
        const int k = n.kernel;
        for (int oc = 0; oc < n.out.channels; ++oc) {
          const double* go = g.data() + oc * n.out.plane();
          if (gw && n.bias) {
            double s = 0.0;
            for (std::size_t p = 0; p < n.out.plane(); ++p) s += go[p];
            gw[n.weight_count + oc] += s;
          }
          const int grp = oc / out_per_group;
          for (int icg = 0; icg < in_per_group; ++icg) {
            const int ic = grp * in_per_group + icg;
            const double* src = in.data() + ic * is.plane();
            double* gsrc = gi.data() + ic * is.plane();
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const std::size_t widx = ((static_cast<std::size_t>(oc) * in_per_group + icg) * k + ky) * k + kx;
                const double wv = w[widx];
                double acc = 0.0;
                int lo, hi;
                valid_range(kx, n.stride, n.pad, is.width, n.out.width, lo, hi);
                for (int oy = 0; oy < n.out.height; ++oy) {
                  const int iy = oy * n.stride + ky - n.pad;
                  if (iy < 0 || iy >= is.height) continue;
                  const int base = iy * is.width + (kx - n.pad);
                  const double* grow = go + oy * n.out.width;
                  for (int ox = lo; ox < hi; ++ox) {
                    const int ix = base + ox * n.stride;
                    gsrc[ix] += wv * grow[ox];
                    acc += src[ix] * grow[ox];
                  }
                }
                if (gw) gw[widx] += acc;
              }
            }
          }
        }
        break;
      }
      case Op::kRelu: {
        const Tensor& y = ws.values[j];
        Tensor& gi = ws.grad(n.inputs[0], n.out);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += y[i] > 0 ? g[i] : 0.0;
        break;
      }
      case Op::kSilu: {
        const Tensor& x = ws.values[n.inputs[0]];
        Tensor& gi = ws.grad(n.inputs[0], n.out);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-x[i]));
          gi[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
        break;
      }
      case Op::kSigmoid: {
        const Tensor& y = ws.values[j];
        Tensor& gi = ws.grad(n.inputs[0], n.out);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::kMaxPool:
      case Op::kAvgPool: {
        const Tensor& in = ws.values[n.inputs[0]];
        Tensor& gi = ws.grad(n.inputs[0], in.shape());
        for (int c = 0; c < n.out.channels; ++c) {
          for (int y = 0; y < n.out.height; ++y) {
            for (int x = 0; x < n.out.width; ++x) {
              const double gv = g.at(c, y, x);
              if (n.op == Op::kAvgPool) {
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) gi.at(c, 2 * y + dy, 2 * x + dx) += 0.25 * gv;
                continue;
              }
              int by = 0, bx = 0;
              double best = in.at(c, 2 * y, 2 * x);
              for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                  const double v = in.at(c, 2 * y + dy, 2 * x + dx);
                  if (v > best) {
                    best = v;
                    by = dy;
                    bx = dx;
                  }
                }
              }
              gi.at(c, 2 * y + by, 2 * x + bx) += gv;
            }
          }
        }
        break;
      }
      case Op::kAdd: {
        for (int i : n.inputs) ws.grad(i, n.out) += g;
        break;
      }
      case Op::kConcat: {
        std::size_t pos = 0;
        for (int i : n.inputs) {
          const Shape& s = nodes_[i].out;
          Tensor& gi = ws.grad(i, s);
          for (std::size_t k = 0; k < s.size(); ++k) gi[k] += g[pos + k];
          pos += s.size();
        }
        break;
      }
      case Op::kChannelScale: {
        const Tensor& x = ws.values[n.inputs[0]];
        const Tensor& s = ws.values[n.inputs[1]];
        Tensor& gx = ws.grad(n.inputs[0], n.out);
        Tensor& gs = ws.grad(n.inputs[1], nodes_[n.inputs[1]].out);
        const std::size_t plane = n.out.plane();
        for (int c = 0; c < n.out.channels; ++c) {
          double acc = 0.0;
          for (std::size_t p = 0; p < plane; ++p) {
            gx[c * plane + p] += g[c * plane + p] * s[c];
            acc += g[c * plane + p] * x[c * plane + p];
          }
          gs[c] += acc;
        }
        break;
      }
      case Op::kDropout: {
        Tensor& gi = ws.grad(n.inputs[0], n.out);
        const auto& mask = ws.masks[j];
        if (mask.empty()) {
          gi += g;
          break;
        }
        const double scale = 1.0 / (1.0 - n.rate);
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += mask[i] ? g[i] * scale : 0.0;
        break;
      }
      case Op::kGlobalAvgPool: {
        const Shape& is = nodes_[n.inputs[0]].out;
        Tensor& gi = ws.grad(n.inputs[0], is);
        const double inv = 1.0 / static_cast<double>(is.plane());
        for (int c = 0; c < is.channels; ++c) {
          const double gv = g[c] * inv;
          for (double& v : gi.channel(c)) v += gv;
        }
        break;
      }
      case Op::kDense: {
        const Tensor& in = ws.values[n.inputs[0]];
        Tensor& gi = ws.grad(n.inputs[0], in.shape());
        const auto w = parameters_of(j);
        double* gw = want_params ? param_grads.data() + n.param_offset : nullptr;
        const std::size_t fan = n.fan_in;
        for (int o = 0; o < n.out.channels; ++o) {
          const double gv = g[o];
          if (gv == 0.0) continue;
          const double* row = w.data() + o * fan;
          for (std::size_t i = 0; i < fan; ++i) gi[i] += row[i] * gv;
          if (gw) {
            double* grow = gw + o * fan;
            for (std::size_t i = 0; i < fan; ++i) grow[i] += in[i] * gv;
            if (n.bias) gw[n.weight_count + o] += gv;
          }
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> params_;
};

// Numerically stable softmax.
inline std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double m = *std::max_element(p.begin(), p.end());
  double s = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    s += v;
  }
  for (double& v : p) v /= s;
  return p;
}

}  // namespace aax::nn
