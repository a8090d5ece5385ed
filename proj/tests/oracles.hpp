// Independent reference implementations used as test oracles. Nothing here
// calls into the autograd engine or the partitioner.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <stdexcept>
#include <vector>

#include "zigprune/autograd.hpp"
#include "zigprune/graph.hpp"
#include "zigprune/partition.hpp"

namespace oracle {

using zigprune::ComputationGraph;
using zigprune::Tensor;
using zigprune::TensorShape;

/// Direct-loop evaluation in eval mode (BatchNorm uses running statistics).
inline std::vector<Tensor> reference_eval(const ComputationGraph &g, const std::vector<Tensor> &inputs) {
  using namespace zigprune;
  std::map<std::size_t, Tensor> value;
  std::vector<Tensor> outputs;
  const auto n = inputs.at(0).shape.batch();
  for (std::size_t pos : g.topo_order()) {
    const auto &v = g.at(pos);
    std::vector<const Tensor *> ops;
    for (const auto &port : g.operands(pos))
      ops.push_back(port.kind == Port::Kind::Input ? &inputs.at(port.index) : &value.at(port.index));
    Tensor out;
    std::visit(
        [&](const auto &k) {
          using K = std::decay_t<decltype(k)>;
          const Tensor &a = *ops.at(0);
          if constexpr (std::is_same_v<K, Conv2d>) {
            const auto H = a.shape.height(), W = a.shape.width();
            const auto Ho = (H + 2 * k.pad - k.kernel) / k.stride + 1;
            const auto Wo = (W + 2 * k.pad - k.kernel) / k.stride + 1;
            out = Tensor(TensorShape{n, k.out_channels, Ho, Wo});
            const auto &w = v.params->weight;
            for (std::int64_t b = 0; b < n; ++b)
              for (int o = 0; o < k.out_channels; ++o)
                for (std::int64_t y = 0; y < Ho; ++y)
                  for (std::int64_t x = 0; x < Wo; ++x) {
                    double s = k.has_bias ? v.params->bias[o] : 0.0;
                    for (int c = 0; c < k.in_channels; ++c)
                      for (int ky = 0; ky < k.kernel; ++ky)
                        for (int kx = 0; kx < k.kernel; ++kx) {
                          const auto iy = y * k.stride + ky - k.pad, ix = x * k.stride + kx - k.pad;
                          if (iy < 0 || ix < 0 || iy >= H || ix >= W) continue;
                          s += w(o, (c * k.kernel + ky) * k.kernel + kx) *
                               a.data[((b * k.in_channels + c) * H + iy) * W + ix];
                        }
                    out.data[((b * k.out_channels + o) * Ho + y) * Wo + x] = s;
                  }
          } else if constexpr (std::is_same_v<K, Linear>) {
            out = Tensor(TensorShape{n, k.out_features});
            for (std::int64_t b = 0; b < n; ++b)
              for (int o = 0; o < k.out_features; ++o) {
                double s = k.has_bias ? v.params->bias[o] : 0.0;
                for (int i = 0; i < k.in_features; ++i)
                  s += v.params->weight(o, i) * a.data[b * k.in_features + i];
                out.data[b * k.out_features + o] = s;
              }
          } else if constexpr (std::is_same_v<K, BatchNorm>) {
            out = a;
            const auto C = a.shape.channels(), S = a.shape.spatial();
            const auto &p = *v.params;
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t s = 0; s < S; ++s) {
                  auto &e = out.data[(b * C + c) * S + s];
                  e = p.gamma[c] * (e - p.running_mean[c]) / std::sqrt(p.running_var[c] + k.eps) + p.beta[c];
                }
          } else if constexpr (std::is_same_v<K, Relu>) {
            out = a;
            for (auto &e : out.data) e = std::max(0.0, e);
          } else if constexpr (std::is_same_v<K, MaxPool> || std::is_same_v<K, AvgPool>) {
            const auto C = a.shape.channels(), H = a.shape.height(), W = a.shape.width();
            const auto Ho = (H - k.kernel) / k.stride + 1, Wo = (W - k.kernel) / k.stride + 1;
            out = Tensor(TensorShape{n, C, Ho, Wo});
            for (std::int64_t b = 0; b < n; ++b)
              for (std::int64_t c = 0; c < C; ++c)
                for (std::int64_t y = 0; y < Ho; ++y)
                  for (std::int64_t x = 0; x < Wo; ++x) {
                    double acc = std::is_same_v<K, MaxPool> ? -INFINITY : 0.0;
                    for (int ky = 0; ky < k.kernel; ++ky)
                      for (int kx = 0; kx < k.kernel; ++kx) {
                        const double e = a.data[((b * C + c) * H + y * k.stride + ky) * W + x * k.stride + kx];
                        acc = std::is_same_v<K, MaxPool> ? std::max(acc, e) : acc + e;
                      }
                    if (std::is_same_v<K, AvgPool>) acc /= double(k.kernel * k.kernel);
                    out.data[((b * C + c) * Ho + y) * Wo + x] = acc;
                  }
          } else if constexpr (std::is_same_v<K, Flatten>) {
            out = Tensor(TensorShape{n, a.shape.sample_size()}, a.data);
          } else if constexpr (std::is_same_v<K, Add> || std::is_same_v<K, Mul>) {
            out = a;
            for (std::size_t j = 1; j < ops.size(); ++j)
              for (std::size_t i = 0; i < out.data.size(); ++i)
                out.data[i] = std::is_same_v<K, Add> ? out.data[i] + ops[j]->data[i] : out.data[i] * ops[j]->data[i];
          } else if constexpr (std::is_same_v<K, Concat>) {
            std::int64_t C = 0;
            for (auto *t : ops) C += t->shape.channels();
            auto dims = a.shape.dims;
            dims[1] = C;
            out = Tensor(TensorShape(dims));
            const auto S = a.shape.spatial();
            for (std::int64_t b = 0; b < n; ++b) {
              std::int64_t c0 = 0;
              for (auto *t : ops) {
                const auto Ct = t->shape.channels();
                std::copy_n(t->data.begin() + b * Ct * S, Ct * S, out.data.begin() + (b * C + c0) * S);
                c0 += Ct;
              }
            }
          } else if constexpr (std::is_same_v<K, GraphOutput>) {
            out = a;
            outputs.push_back(a);
          } else {
            throw std::runtime_error("reference_eval: unsupported op");
          }
        },
        v.kind);
    value[pos] = std::move(out);
  }
  return outputs;
}

inline Tensor random_tensor(TensorShape shape, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t(std::move(shape));
  for (auto &e : t.data) e = normal(rng);
  return t;
}

/// Central difference of a scalar function along one coordinate. A narrow
/// stencil keeps the probe from straddling ReLU kinks.
inline double central_difference(const std::function<double(double)> &f, double x0, double h = 1e-5) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

/// |a - b| / max(|a|, |b|, floor). Central differences of an O(1) loss carry
/// roundoff of about eps * |f| / h ~ 1e-11 at h = 1e-5, so the floor keeps
/// coordinates with a vanishing derivative (dead ReLU units) from turning that
/// noise into a large relative error; they are held to 1e-9 absolute instead.
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// The zero-invariant groups DemoNet must produce, written down from its
/// topology by hand. Vertex ids: conv1 1, bn1 2, relu1 3, conv2 4, conv3 5,
/// add1 6, bn2 7, bn3 8, add2 9, concat 10, bn4 11, pool 12, flatten 13,
/// linear1 14, relu2 15, linear2 16, output 17.
inline std::vector<zigprune::ZeroInvariantGroup> demo_net_golden_zigs() {
  using zigprune::ParamSlice;
  using zigprune::TensorRole;
  const TensorRole bn_roles[] = {TensorRole::BnGamma, TensorRole::BnBeta, TensorRole::BnRunningMean,
                                 TensorRole::BnRunningVar};
  std::vector<zigprune::ZeroInvariantGroup> zigs;
  auto push_bn = [&](std::vector<ParamSlice> &s, int id, std::int64_t at) {
    for (auto r : bn_roles) s.push_back({id, r, at, at + 1});
  };
  // Conv1 rows with b1, gamma1/beta1 and the first half of bn4.
  for (int j = 0; j < 16; ++j) {
    zigprune::ZeroInvariantGroup z{{}, 0, j};
    z.slices.push_back({1, TensorRole::FilterRow, j, j + 1});
    z.slices.push_back({1, TensorRole::Bias, j, j + 1});
    push_bn(z.slices, 2, j);
    push_bn(z.slices, 11, j);
    zigs.push_back(z);
  }
  // Conv2/Conv3 rows with b2, b3, bn2, bn3 and the second half of bn4.
  for (int j = 0; j < 16; ++j) {
    zigprune::ZeroInvariantGroup z{{}, 1, j};
    z.slices.push_back({4, TensorRole::FilterRow, j, j + 1});
    z.slices.push_back({4, TensorRole::Bias, j, j + 1});
    z.slices.push_back({5, TensorRole::FilterRow, j, j + 1});
    z.slices.push_back({5, TensorRole::Bias, j, j + 1});
    push_bn(z.slices, 7, j);
    push_bn(z.slices, 8, j);
    push_bn(z.slices, 11, 16 + j);
    zigs.push_back(z);
  }
  // Linear1 rows with their bias.
  for (int j = 0; j < 32; ++j) {
    zigprune::ZeroInvariantGroup z{{}, 3, j};
    z.slices.push_back({14, TensorRole::FilterRow, j, j + 1});
    z.slices.push_back({14, TensorRole::Bias, j, j + 1});
    zigs.push_back(z);
  }
  return zigs;
}

} // namespace oracle
