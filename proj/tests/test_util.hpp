#pragma once

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "aax/backbone.hpp"
#include "aax/nn.hpp"
#include "aax/rng.hpp"
#include "aax/tensor.hpp"

namespace aax::testing {

// Fresh directory under the system temp dir; removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "aax") {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// input(c x n x n) -> conv3x3(4) -> relu -> conv3x3(6) -> relu ["conv2_relu"]
//   -> dropout -> global pool -> dropout -> dense(classes)
inline Backbone tiny_backbone(std::uint64_t seed, int n = 8, int in_channels = 1,
                              double dropout_rate = 0.3, int classes = 2) {
  nn::Network net;
  int x = net.input(Shape{in_channels, n, n});
  x = net.relu("conv1_relu", net.conv2d("conv1", x, 4, 3));
  x = net.relu("conv2_relu", net.conv2d("conv2", x, 6, 3));
  x = net.dropout("feature_dropout", x, dropout_rate);
  x = net.global_avg_pool("global_pool", x);
  x = net.dropout("head_dropout", x, dropout_rate);
  net.dense("classifier", x, classes);
  net.init_parameters(seed);
  BackboneSpec spec;
  spec.name = "tiny";
  spec.dropout_rate = dropout_rate;
  spec.num_classes = classes;
  spec.input_size = n;
  spec.in_channels = in_channels;
  use_default_normalization(spec);
  return Backbone(spec, std::move(net));
}

// Central-difference derivative of the class logit with respect to each
// target-layer activation, recomputing the graph above the target layer.
inline Tensor fd_logit_grad(const Backbone& bb, const Tensor& image, int class_index,
                            double h = 1e-4) {
  const auto& net = bb.network();
  const int t = bb.target_index();
  nn::Workspace ws;
  net.forward(image, ws, {});
  const Tensor base = ws.values[t];
  Tensor g(base.shape());
  for (std::size_t i = 0; i < base.size(); ++i) {
    ws.values[t] = base;
    ws.values[t][i] = base[i] + h;
    net.forward(image, ws, {}, t + 1);
    const double up = ws.values[net.output()][class_index];
    ws.values[t][i] = base[i] - h;
    net.forward(image, ws, {}, t + 1);
    const double down = ws.values[net.output()][class_index];
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// max |a-b| / max(|a|, |b|, floor)
inline double max_rel_error(const Tensor& a, const Tensor& b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    const double s = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, d / s);
  }
  return worst;
}

}  // namespace aax::testing
