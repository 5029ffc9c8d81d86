#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "aax/nn.hpp"
#include "test_util.hpp"

namespace aax {
namespace {

using testing::random_tensor;

// L = sum_i r_i * out_i for fixed random r.
double weighted_output(const nn::Network& net, const Tensor& x, nn::DropoutMode mode,
                       const Tensor& r) {
  nn::Workspace ws;
  net.forward(x, ws, mode);
  const auto& out = ws.values[net.output()];
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
  return s;
}

// Checks input and parameter gradients of L against central differences.
void check_gradients(nn::Network& net, const Tensor& x, nn::DropoutMode mode = {},
                     double tol = 1e-5) {
  const Tensor r = random_tensor(net.node(net.output()).out, 1234);
  nn::Workspace ws;
  net.forward(x, ws, mode);
  ws.clear_grads();
  ws.grads[net.output()] = r;
  std::vector<double> pg(net.parameters().size(), 0.0);
  net.backward(ws, 0, net.nodes().size(), pg);

  const double h = 1e-5;
  Tensor xin = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xin[i] = x[i] + h;
    const double up = weighted_output(net, xin, mode, r);
    xin[i] = x[i] - h;
    const double down = weighted_output(net, xin, mode, r);
    xin[i] = x[i];
    const double fd = (up - down) / (2 * h);
    const double an = ws.grads[0].empty() ? 0.0 : ws.grads[0][i];
    EXPECT_NEAR(an, fd, tol * std::max(1.0, std::abs(fd))) << "input " << i;
  }
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = weighted_output(net, x, mode, r);
    params[i] = keep - h;
    const double down = weighted_output(net, x, mode, r);
    params[i] = keep;
    const double fd = (up - down) / (2 * h);
    EXPECT_NEAR(pg[i], fd, tol * std::max(1.0, std::abs(fd))) << "param " << i;
  }
}

TEST(NetworkGradients, ConvStridePadGroups) {
  nn::Network net;
  int x = net.input(Shape{2, 6, 6});
  x = net.conv2d("c1", x, 4, 3, 1);
  x = net.conv2d("c2", x, 4, 3, 2, 1, 2);
  x = net.conv2d("c3", x, 3, 1, 1, 0, 1, false);
  net.init_parameters(5);
  check_gradients(net, random_tensor(Shape{2, 6, 6}, 1));
}

TEST(NetworkGradients, ActivationsAndPools) {
  nn::Network net;
  int x = net.input(Shape{2, 8, 8});
  x = net.conv2d("c1", x, 3, 3);
  const int a = net.silu("silu", x);
  const int b = net.sigmoid("sig", x);
  const int s = net.add("sum", a, b);
  const int m = net.max_pool("mp", s);
  const int v = net.avg_pool("ap", net.relu("relu", s));
  net.add("out", m, v);
  net.init_parameters(6);
  check_gradients(net, random_tensor(Shape{2, 8, 8}, 2));
}

TEST(NetworkGradients, ConcatScaleDenseAndDropout) {
  nn::Network net;
  int x = net.input(Shape{2, 4, 4});
  const int c1 = net.conv2d("c1", x, 3, 3);
  const int c2 = net.conv2d("c2", x, 2, 1, 1, 0);
  const int cat = net.concat("cat", {c1, c2});
  int se = net.global_avg_pool("se_pool", cat);
  se = net.sigmoid("se_gate", net.dense("se_fc", se, 5));
  const int scaled = net.channel_scale("scale", cat, se);
  int y = net.dropout("drop1", scaled, 0.4);
  y = net.global_avg_pool("gap", y);
  y = net.dropout("drop2", y, 0.4);
  net.dense("fc", y, 3);
  net.init_parameters(7);
  check_gradients(net, random_tensor(Shape{2, 4, 4}, 3), {true, 99});
  check_gradients(net, random_tensor(Shape{2, 4, 4}, 4), {false, 0});
}

TEST(Network, RejectsWrongInputShape) {
  nn::Network net;
  net.conv2d("c", net.input(Shape{1, 4, 4}), 2, 3);
  net.init_parameters(1);
  nn::Workspace ws;
  EXPECT_THROW(net.forward(Tensor(Shape{1, 5, 4}), ws, {}), InputError);
}

TEST(Network, FindAndFirstStochastic) {
  nn::Network net;
  int x = net.input(Shape{1, 4, 4});
  x = net.conv2d("c", x, 2, 3);
  x = net.dropout("d", x, 0.2);
  net.global_avg_pool("g", x);
  EXPECT_EQ(net.find("d").value(), 2);
  EXPECT_FALSE(net.find("nope").has_value());
  EXPECT_EQ(net.first_stochastic(), 2u);
  EXPECT_THROW(net.set_dropout_rate(1.0), ConfigError);
}

TEST(Dropout, RateZeroIsIdentityAndInactiveIsIdentity) {
  nn::Network net;
  net.dropout("d", net.input(Shape{3, 5, 5}), 0.0);
  const Tensor x = random_tensor(Shape{3, 5, 5}, 11);
  nn::Workspace ws;
  net.forward(x, ws, {true, 5});
  EXPECT_EQ(ws.values[1], x);

  net.set_dropout_rate(0.5);
  net.forward(x, ws, {false, 5});
  EXPECT_EQ(ws.values[1], x);
}

TEST(Dropout, InvertedScalingPreservesMean) {
  nn::Network net;
  net.dropout("d", net.input(Shape{1, 100, 100}), 0.3);
  const Tensor x(Shape{1, 100, 100}, 1.0);
  nn::Workspace ws;
  net.forward(x, ws, {true, 8});
  const auto& y = ws.values[1];
  const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / y.size();
  EXPECT_NEAR(mean, 1.0, 0.03);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0) ++zeros;
    else EXPECT_DOUBLE_EQ(v, 1.0 / 0.7);
  }
  EXPECT_NEAR(static_cast<double>(zeros) / y.size(), 0.3, 0.02);
}

TEST(Dropout, SeedControlsMask) {
  nn::Network net;
  net.dropout("d", net.input(Shape{1, 10, 10}), 0.5);
  const Tensor x(Shape{1, 10, 10}, 1.0);
  nn::Workspace a, b, c;
  net.forward(x, a, {true, 1});
  net.forward(x, b, {true, 1});
  net.forward(x, c, {true, 2});
  EXPECT_EQ(a.values[1], b.values[1]);
  EXPECT_NE(a.values[1], c.values[1]);
}

TEST(Softmax, SumsToOneAndIsStable) {
  const std::vector<double> logits = {1000.0, 1001.0, 999.0};
  const auto p = nn::softmax(logits);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-12);
  EXPECT_GT(p[1], p[0]);
  EXPECT_TRUE(std::isfinite(p[2]));
}

TEST(Init, ConvWeightsAreHeScaledAndBiasesZero) {
  nn::Network net;
  const int c = net.conv2d("c", net.input(Shape{16, 4, 4}), 64, 3);
  net.init_parameters(3);
  const auto p = net.parameters_of(c);
  const auto& n = net.node(c);
  double m2 = 0;
  for (std::size_t i = 0; i < n.weight_count; ++i) m2 += p[i] * p[i];
  EXPECT_NEAR(m2 / n.weight_count, 2.0 / n.fan_in, 0.1 * 2.0 / n.fan_in);
  for (std::size_t i = n.weight_count; i < n.param_count; ++i) EXPECT_EQ(p[i], 0.0);
}

}  // namespace
}  // namespace aax
