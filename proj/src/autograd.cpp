#include "zigprune/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace zigprune {

Tensor::Tensor(TensorShape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (static_cast<std::int64_t>(data.size()) != shape.numel())
    throw Error(ErrorCode::ShapeMismatch, "tensor data does not match shape " + to_string(shape));
}

Tensor slice_batch(const Tensor &t, std::int64_t begin, std::int64_t end) {
  const auto per = t.shape.sample_size();
  Tensor out(t.shape.with_batch(end - begin));
  std::copy(t.data.begin() + begin * per, t.data.begin() + end * per, out.data.begin());
  return out;
}

namespace {

using RowMap = Eigen::Map<Matrix>;
using ConstRowMap = Eigen::Map<const Matrix>;

// One sample's patches: rows (ci, kh, kw), columns (oh, ow), row-major so the
// product with the weight lands directly in the CHW block of the output.
void im2col(const double *plane0, const Conv2d &c, std::int64_t h, std::int64_t w,
            std::int64_t ho, std::int64_t wo, Matrix &cols) {
  const int k = c.kernel;
  cols.resize(std::int64_t(c.in_channels) * k * k, ho * wo);
  double *dst = cols.data();
  for (int ci = 0; ci < c.in_channels; ++ci) {
    const double *plane = plane0 + ci * h * w;
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw)
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const auto ih = oh * c.stride - c.pad + kh;
          if (ih < 0 || ih >= h) {
            std::fill_n(dst, wo, 0.0);
            dst += wo;
            continue;
          }
          const double *row = plane + ih * w;
          for (std::int64_t ow = 0; ow < wo; ++ow) {
            const auto iw = ow * c.stride - c.pad + kw;
            *dst++ = (iw >= 0 && iw < w) ? row[iw] : 0.0;
          }
        }
  }
}

void col2im(const Matrix &cols, const Conv2d &c, std::int64_t h, std::int64_t w,
            std::int64_t ho, std::int64_t wo, double *plane0) {
  const int k = c.kernel;
  const double *src = cols.data();
  for (int ci = 0; ci < c.in_channels; ++ci) {
    double *plane = plane0 + ci * h * w;
    for (int kh = 0; kh < k; ++kh)
      for (int kw = 0; kw < k; ++kw)
        for (std::int64_t oh = 0; oh < ho; ++oh) {
          const auto ih = oh * c.stride - c.pad + kh;
          if (ih < 0 || ih >= h) {
            src += wo;
            continue;
          }
          double *row = plane + ih * w;
          for (std::int64_t ow = 0; ow < wo; ++ow, ++src) {
            const auto iw = ow * c.stride - c.pad + kw;
            if (iw >= 0 && iw < w) row[iw] += *src;
          }
        }
  }
}

double unknown_apply(const std::string &op, double x) {
  if (op == "identity") return x;
  if (op == "tanh") return std::tanh(x);
  if (op == "sigmoid") return 1.0 / (1.0 + std::exp(-x));
  throw Error(ErrorCode::UnsupportedOperator, "no runtime for unknown operator '" + op + "'");
}

// Derivative expressed through the output value y.
double unknown_derivative(const std::string &op, double y) {
  if (op == "identity") return 1.0;
  if (op == "tanh") return 1.0 - y * y;
  if (op == "sigmoid") return y * (1.0 - y);
  throw Error(ErrorCode::UnsupportedOperator, "no runtime for unknown operator '" + op + "'");
}

template <class Pool>
Tensor pool_forward(const Tensor &x, const Pool &p, bool is_max, std::vector<std::int64_t> *arg) {
  const auto n = x.shape.batch(), c = x.shape.channels(), h = x.shape.height(),
             w = x.shape.width();
  const auto ho = (h - p.kernel) / p.stride + 1, wo = (w - p.kernel) / p.stride + 1;
  Tensor out(TensorShape{n, c, ho, wo});
  if (arg) arg->assign(out.size(), 0);
  const double inv = 1.0 / double(p.kernel * p.kernel);
  std::size_t o = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (b * c + ch) * h * w;
      for (std::int64_t oh = 0; oh < ho; ++oh)
        for (std::int64_t ow = 0; ow < wo; ++ow, ++o) {
          double acc = is_max ? -std::numeric_limits<double>::infinity() : 0.0;
          std::int64_t best = 0;
          for (int kh = 0; kh < p.kernel; ++kh)
            for (int kw = 0; kw < p.kernel; ++kw) {
              const auto idx = base + (oh * p.stride + kh) * w + (ow * p.stride + kw);
              const double v = x.data[idx];
              if (is_max) {
                if (v > acc) {
                  acc = v;
                  best = idx;
                }
              } else {
                acc += v;
              }
            }
          out.data[o] = is_max ? acc : acc * inv;
          if (arg) (*arg)[o] = best;
        }
    }
  return out;
}

} // namespace

ForwardResult forward(const ComputationGraph &g, std::span<const Tensor> inputs, Mode mode) {
  if (inputs.size() != g.inputs().size())
    throw Error(ErrorCode::ShapeMismatch, "expected " + std::to_string(g.inputs().size()) +
                                              " graph inputs, got " +
                                              std::to_string(inputs.size()));
  const auto n = inputs.empty() ? 0 : inputs[0].shape.batch();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (inputs[k].shape != g.inputs()[k].shape.with_batch(n))
      throw Error(ErrorCode::ShapeMismatch, "input '" + g.inputs()[k].name + "' expects " +
                                                to_string(g.inputs()[k].shape.with_batch(n)) +
                                                ", got " + to_string(inputs[k].shape));
  }

  ForwardResult result;
  auto &cache = result.cache;
  cache.mode = mode;
  cache.inputs.assign(inputs.begin(), inputs.end());
  cache.values.resize(g.size());
  cache.bn_mean.resize(g.size());
  cache.bn_var.resize(g.size());
  cache.bn_inv_std.resize(g.size());
  cache.argmax.resize(g.size());

  auto operand = [&](const Port &p) -> const Tensor & {
    return p.kind == Port::Kind::Input ? cache.inputs[p.index] : cache.values[p.index];
  };

  for (auto pos : g.topo_order()) {
    const auto &v = g.at(pos);
    const auto &ops = g.operands(pos);
    const Tensor &x = operand(ops[0]);
    std::vector<TensorShape> in_shapes;
    for (const auto &p : ops) in_shapes.push_back(operand(p).shape);
    Tensor out(output_shape(v, in_shapes));

    if (auto *c = std::get_if<Conv2d>(&v.kind)) {
      const auto ho = out.shape.height(), wo = out.shape.width();
      const auto h = x.shape.height(), w = x.shape.width();
      const auto in_size = x.shape.sample_size(), out_size = out.shape.sample_size();
      const auto &p = *v.params;
      Matrix cols;
      for (std::int64_t b = 0; b < x.shape.batch(); ++b) {
        im2col(x.data.data() + b * in_size, *c, h, w, ho, wo, cols);
        RowMap ym(out.data.data() + b * out_size, c->out_channels, ho * wo);
        ym.noalias() = p.weight * cols;
        if (!p.bias.empty())
          ym.colwise() += Eigen::Map<const Eigen::VectorXd>(p.bias.data(), Eigen::Index(p.bias.size()));
      }
    } else if (auto *l = std::get_if<Linear>(&v.kind)) {
      ConstRowMap xm(x.data.data(), x.shape.batch(), l->in_features);
      RowMap ym(out.data.data(), out.shape.batch(), l->out_features);
      ym.noalias() = xm * v.params->weight.transpose();
      if (!v.params->bias.empty())
        ym.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(
            v.params->bias.data(), Eigen::Index(v.params->bias.size()));
    } else if (auto *bn = std::get_if<BatchNorm>(&v.kind)) {
      const auto &p = *v.params;
      const auto nb = x.shape.batch(), ch = x.shape.dims[1], sp = x.shape.spatial();
      std::vector<double> mean(ch), var(ch), inv(ch);
      if (mode == Mode::Train) {
        const double m = double(nb * sp);
        for (std::int64_t c = 0; c < ch; ++c) {
          double s = 0.0;
          for (std::int64_t b = 0; b < nb; ++b)
            for (std::int64_t q = 0; q < sp; ++q) s += x.data[(b * ch + c) * sp + q];
          mean[c] = s / m;
          double s2 = 0.0;
          for (std::int64_t b = 0; b < nb; ++b)
            for (std::int64_t q = 0; q < sp; ++q) {
              const double d = x.data[(b * ch + c) * sp + q] - mean[c];
              s2 += d * d;
            }
          var[c] = s2 / m;
        }
      } else {
        mean = p.running_mean;
        var = p.running_var;
      }
      for (std::int64_t c = 0; c < ch; ++c) inv[c] = 1.0 / std::sqrt(var[c] + bn->eps);
      for (std::int64_t b = 0; b < nb; ++b)
        for (std::int64_t c = 0; c < ch; ++c)
          for (std::int64_t q = 0; q < sp; ++q) {
            const auto i = (b * ch + c) * sp + q;
            out.data[i] = p.gamma[c] * (x.data[i] - mean[c]) * inv[c] + p.beta[c];
          }
      cache.bn_mean[pos] = std::move(mean);
      cache.bn_var[pos] = std::move(var);
      cache.bn_inv_std[pos] = std::move(inv);
    } else if (std::holds_alternative<Relu>(v.kind)) {
      for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    } else if (auto *mp = std::get_if<MaxPool>(&v.kind)) {
      out = pool_forward(x, *mp, true, &cache.argmax[pos]);
    } else if (auto *ap = std::get_if<AvgPool>(&v.kind)) {
      out = pool_forward(x, *ap, false, nullptr);
    } else if (std::holds_alternative<Flatten>(v.kind) ||
               std::holds_alternative<GraphOutput>(v.kind)) {
      out.data = x.data;
    } else if (std::holds_alternative<Add>(v.kind)) {
      out.data = x.data;
      for (std::size_t k = 1; k < ops.size(); ++k) {
        const auto &y = operand(ops[k]);
        for (std::size_t i = 0; i < y.size(); ++i) out.data[i] += y.data[i];
      }
    } else if (std::holds_alternative<Mul>(v.kind)) {
      out.data = x.data;
      for (std::size_t k = 1; k < ops.size(); ++k) {
        const auto &y = operand(ops[k]);
        for (std::size_t i = 0; i < y.size(); ++i) out.data[i] *= y.data[i];
      }
    } else if (std::holds_alternative<Concat>(v.kind)) {
      const auto nb = out.shape.batch();
      const auto sp = out.shape.spatial();
      const auto co = out.shape.dims[1];
      std::int64_t offset = 0;
      for (const auto &p : ops) {
        const auto &y = operand(p);
        const auto cy = y.shape.dims[1];
        for (std::int64_t b = 0; b < nb; ++b)
          std::copy_n(y.data.begin() + b * cy * sp, cy * sp,
                      out.data.begin() + (b * co + offset) * sp);
        offset += cy;
      }
    } else if (auto *u = std::get_if<Unknown>(&v.kind)) {
      for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = unknown_apply(u->opname, x.data[i]);
    }
    cache.values[pos] = std::move(out);
  }

  for (auto pos : g.output_positions()) result.outputs.push_back(cache.values[pos]);
  return result;
}

void apply_running_stat_updates(ComputationGraph &g, const ForwardCache &cache) {
  if (cache.mode != Mode::Train) return;
  for (std::size_t pos = 0; pos < g.size(); ++pos) {
    auto *bn = std::get_if<BatchNorm>(&g.at(pos).kind);
    if (!bn) continue;
    auto &p = *g.at(pos).params;
    const auto &x = cache.values[pos].shape; // same shape as the input
    const double m = double(x.batch() * x.spatial());
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    for (std::size_t c = 0; c < p.gamma.size(); ++c) {
      p.running_mean[c] = (1.0 - bn->momentum) * p.running_mean[c] +
                          bn->momentum * cache.bn_mean[pos][c];
      p.running_var[c] = (1.0 - bn->momentum) * p.running_var[c] +
                         bn->momentum * cache.bn_var[pos][c] * unbias;
    }
  }
}

GradientStore backward(const ComputationGraph &g, const ForwardCache &cache,
                       std::span<const Tensor> output_grads) {
  GradientStore store;
  store.per_vertex.resize(g.size());
  std::vector<std::optional<Tensor>> grad(g.size());

  const auto outs = g.output_positions();
  if (output_grads.size() > outs.size())
    throw Error(ErrorCode::ShapeMismatch, "more output gradients than graph outputs");
  for (std::size_t k = 0; k < output_grads.size(); ++k) {
    if (output_grads[k].shape != cache.values[outs[k]].shape)
      throw Error(ErrorCode::ShapeMismatch, "output gradient shape mismatch");
    grad[outs[k]] = output_grads[k];
  }

  auto operand_value = [&](const Port &p) -> const Tensor & {
    return p.kind == Port::Kind::Input ? cache.inputs[p.index] : cache.values[p.index];
  };
  // Accumulates into the operand's gradient buffer; graph inputs are sinks.
  auto accumulate = [&](const Port &p, const Tensor &dx) {
    if (p.kind == Port::Kind::Input) return;
    auto &slot = grad[p.index];
    if (!slot) {
      slot = dx;
      return;
    }
    for (std::size_t i = 0; i < dx.size(); ++i) slot->data[i] += dx.data[i];
  };
  auto needs_grad = [&](const Port &p) { return p.kind == Port::Kind::Vertex; };

  const auto &topo = g.topo_order();
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    const auto pos = *it;
    const auto &v = g.at(pos);
    const auto &ops = g.operands(pos);
    if (v.params) {
      ParameterSet zero;
      zero.weight = Matrix::Zero(v.params->weight.rows(), v.params->weight.cols());
      zero.bias.assign(v.params->bias.size(), 0.0);
      zero.gamma.assign(v.params->gamma.size(), 0.0);
      zero.beta.assign(v.params->beta.size(), 0.0);
      store.per_vertex[pos] = std::move(zero);
    }
    if (!grad[pos]) continue;
    const Tensor &dy = *grad[pos];
    const Tensor &x = operand_value(ops[0]);

    if (auto *c = std::get_if<Conv2d>(&v.kind)) {
      const auto &y = cache.values[pos];
      const auto ho = y.shape.height(), wo = y.shape.width();
      const auto h = x.shape.height(), w = x.shape.width();
      const auto in_size = x.shape.sample_size(), out_size = y.shape.sample_size();
      auto &gp = *store.per_vertex[pos];
      const bool to_input = needs_grad(ops[0]);
      Tensor dx;
      if (to_input) dx = Tensor(x.shape);
      Matrix cols, dcols;
      Eigen::VectorXd db = Eigen::VectorXd::Zero(c->out_channels);
      for (std::int64_t b = 0; b < x.shape.batch(); ++b) {
        im2col(x.data.data() + b * in_size, *c, h, w, ho, wo, cols);
        ConstRowMap dym(dy.data.data() + b * out_size, c->out_channels, ho * wo);
        gp.weight.noalias() += dym * cols.transpose();
        if (!gp.bias.empty()) db += dym.rowwise().sum();
        if (to_input) {
          dcols.noalias() = v.params->weight.transpose() * dym;
          col2im(dcols, *c, h, w, ho, wo, dx.data.data() + b * in_size);
        }
      }
      for (std::size_t i = 0; i < gp.bias.size(); ++i) gp.bias[i] = db[Eigen::Index(i)];
      if (to_input) accumulate(ops[0], dx);
    } else if (auto *l = std::get_if<Linear>(&v.kind)) {
      const auto nb = x.shape.batch();
      ConstRowMap xm(x.data.data(), nb, l->in_features);
      ConstRowMap dym(dy.data.data(), nb, l->out_features);
      auto &gp = *store.per_vertex[pos];
      gp.weight.noalias() = dym.transpose() * xm;
      if (!gp.bias.empty()) {
        const Eigen::RowVectorXd db = dym.colwise().sum();
        for (std::size_t i = 0; i < gp.bias.size(); ++i) gp.bias[i] = db[Eigen::Index(i)];
      }
      if (needs_grad(ops[0])) {
        Tensor dx(x.shape);
        RowMap(dx.data.data(), nb, l->in_features).noalias() = dym * v.params->weight;
        accumulate(ops[0], dx);
      }
    } else if (std::holds_alternative<BatchNorm>(v.kind)) {
      const auto &p = *v.params;
      auto &gp = *store.per_vertex[pos];
      const auto nb = x.shape.batch(), ch = x.shape.dims[1], sp = x.shape.spatial();
      const auto &mean = cache.bn_mean[pos];
      const auto &inv = cache.bn_inv_std[pos];
      Tensor dx(x.shape);
      const double m = double(nb * sp);
      for (std::int64_t c = 0; c < ch; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t b = 0; b < nb; ++b)
          for (std::int64_t q = 0; q < sp; ++q) {
            const auto i = (b * ch + c) * sp + q;
            const double xhat = (x.data[i] - mean[c]) * inv[c];
            sum_dy += dy.data[i];
            sum_dy_xhat += dy.data[i] * xhat;
          }
        gp.gamma[c] = sum_dy_xhat;
        gp.beta[c] = sum_dy;
        const double scale = p.gamma[c] * inv[c];
        for (std::int64_t b = 0; b < nb; ++b)
          for (std::int64_t q = 0; q < sp; ++q) {
            const auto i = (b * ch + c) * sp + q;
            if (cache.mode == Mode::Train) {
              const double xhat = (x.data[i] - mean[c]) * inv[c];
              dx.data[i] = scale * (dy.data[i] - sum_dy / m - xhat * sum_dy_xhat / m);
            } else {
              dx.data[i] = scale * dy.data[i];
            }
          }
      }
      accumulate(ops[0], dx);
    } else if (std::holds_alternative<Relu>(v.kind)) {
      Tensor dx(x.shape);
      for (std::size_t i = 0; i < x.size(); ++i) dx.data[i] = x.data[i] > 0.0 ? dy.data[i] : 0.0;
      accumulate(ops[0], dx);
    } else if (std::holds_alternative<MaxPool>(v.kind)) {
      Tensor dx(x.shape);
      const auto &arg = cache.argmax[pos];
      for (std::size_t o = 0; o < dy.size(); ++o) dx.data[arg[o]] += dy.data[o];
      accumulate(ops[0], dx);
    } else if (auto *ap = std::get_if<AvgPool>(&v.kind)) {
      Tensor dx(x.shape);
      const auto n = x.shape.batch(), c = x.shape.channels(), h = x.shape.height(),
                 w = x.shape.width();
      const auto ho = dy.shape.height(), wo = dy.shape.width();
      const double inv = 1.0 / double(ap->kernel * ap->kernel);
      std::size_t o = 0;
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch) {
          const std::int64_t base = (b * c + ch) * h * w;
          for (std::int64_t oh = 0; oh < ho; ++oh)
            for (std::int64_t ow = 0; ow < wo; ++ow, ++o)
              for (int kh = 0; kh < ap->kernel; ++kh)
                for (int kw = 0; kw < ap->kernel; ++kw)
                  dx.data[base + (oh * ap->stride + kh) * w + (ow * ap->stride + kw)] +=
                      dy.data[o] * inv;
        }
      accumulate(ops[0], dx);
    } else if (std::holds_alternative<Flatten>(v.kind) ||
               std::holds_alternative<GraphOutput>(v.kind)) {
      accumulate(ops[0], Tensor(x.shape, dy.data));
    } else if (std::holds_alternative<Add>(v.kind)) {
      for (const auto &p : ops) accumulate(p, Tensor(operand_value(p).shape, dy.data));
    } else if (std::holds_alternative<Mul>(v.kind)) {
      for (std::size_t k = 0; k < ops.size(); ++k) {
        Tensor dx(operand_value(ops[k]).shape, dy.data);
        for (std::size_t j = 0; j < ops.size(); ++j) {
          if (j == k) continue;
          const auto &y = operand_value(ops[j]);
          for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= y.data[i];
        }
        accumulate(ops[k], dx);
      }
    } else if (std::holds_alternative<Concat>(v.kind)) {
      const auto nb = dy.shape.batch(), sp = dy.shape.spatial(), co = dy.shape.dims[1];
      std::int64_t offset = 0;
      for (const auto &p : ops) {
        const auto &shape = operand_value(p).shape;
        const auto cy = shape.dims[1];
        Tensor dx(shape);
        for (std::int64_t b = 0; b < nb; ++b)
          std::copy_n(dy.data.begin() + (b * co + offset) * sp, cy * sp,
                      dx.data.begin() + b * cy * sp);
        accumulate(p, dx);
        offset += cy;
      }
    } else if (auto *u = std::get_if<Unknown>(&v.kind)) {
      const auto &y = cache.values[pos];
      Tensor dx(x.shape);
      for (std::size_t i = 0; i < x.size(); ++i)
        dx.data[i] = dy.data[i] * unknown_derivative(u->opname, y.data[i]);
      accumulate(ops[0], dx);
    }
  }
  return store;
}

LossValue compute_loss(LossKind kind, const Tensor &output, const Targets &targets) {
  if (output.shape.rank() != 2)
    throw Error(ErrorCode::ShapeMismatch, "losses expect a (N,F) output");
  const auto n = output.shape.batch(), f = output.shape.dims[1];
  LossValue r;
  r.grad = Tensor(output.shape);
  if (kind == LossKind::CrossEntropy) {
    if (std::int64_t(targets.labels.size()) != n)
      throw Error(ErrorCode::ShapeMismatch, "label count does not match batch size");
    for (std::int64_t b = 0; b < n; ++b) {
      const double *z = output.data.data() + b * f;
      const double zmax = *std::max_element(z, z + f);
      double sum = 0.0;
      for (std::int64_t j = 0; j < f; ++j) sum += std::exp(z[j] - zmax);
      const double log_sum = std::log(sum) + zmax;
      const int label = targets.labels[b];
      if (label < 0 || label >= f) throw Error(ErrorCode::ShapeMismatch, "label out of range");
      r.value += log_sum - z[label];
      for (std::int64_t j = 0; j < f; ++j)
        r.grad.data[b * f + j] = (std::exp(z[j] - log_sum) - (j == label ? 1.0 : 0.0)) / n;
    }
    r.value /= double(n);
  } else {
    if (targets.values.shape != output.shape)
      throw Error(ErrorCode::ShapeMismatch, "regression target shape mismatch");
    for (std::size_t i = 0; i < output.size(); ++i) {
      const double d = output.data[i] - targets.values.data[i];
      r.value += 0.5 * d * d;
      r.grad.data[i] = d / double(n);
    }
    r.value /= double(n);
  }
  return r;
}

LossAndGradients loss_and_gradients(const ComputationGraph &g, std::span<const Tensor> inputs,
                                    Mode mode, LossKind kind, const Targets &targets) {
  LossAndGradients r;
  r.forward = forward(g, inputs, mode);
  if (r.forward.outputs.empty()) throw Error(ErrorCode::InvalidGraph, "graph has no output");
  auto loss = compute_loss(kind, r.forward.outputs[0], targets);
  r.loss = loss.value;
  std::vector<Tensor> grads{std::move(loss.grad)};
  r.grads = backward(g, r.forward.cache, grads);
  return r;
}

// ---------------------------------------------------------------------------
// ParamLayout

ParamLayout::ParamLayout(const ComputationGraph &g) {
  block_of_.assign(g.size(), std::vector<int>(6, -1));
  auto add = [&](std::size_t pos, TensorRole role, std::size_t size, std::size_t row) {
    if (size == 0) return;
    block_of_[pos][int(role)] = static_cast<int>(blocks_.size());
    blocks_.push_back(Block{pos, role, total_, size, row});
    total_ += size;
  };
  for (std::size_t pos = 0; pos < g.size(); ++pos) {
    const auto &v = g.at(pos);
    if (!v.params) continue;
    const auto &p = *v.params;
    add(pos, TensorRole::FilterRow, std::size_t(p.weight.size()), std::size_t(p.weight.cols()));
    add(pos, TensorRole::Bias, p.bias.size(), 1);
    add(pos, TensorRole::BnGamma, p.gamma.size(), 1);
    add(pos, TensorRole::BnBeta, p.beta.size(), 1);
  }
}

const ParamLayout::Block *ParamLayout::find(std::size_t pos, TensorRole role) const {
  const int b = block_of_.at(pos)[int(role)];
  return b < 0 ? nullptr : &blocks_[b];
}

namespace {

double *role_data(ParameterSet &p, TensorRole role) {
  switch (role) {
  case TensorRole::FilterRow: return p.weight.data();
  case TensorRole::Bias: return p.bias.data();
  case TensorRole::BnGamma: return p.gamma.data();
  case TensorRole::BnBeta: return p.beta.data();
  default: return nullptr;
  }
}

} // namespace

std::vector<double> ParamLayout::gather(const ComputationGraph &g) const {
  std::vector<double> flat(total_);
  for (const auto &b : blocks_) {
    auto &p = const_cast<ParameterSet &>(*g.at(b.vertex_pos).params);
    const double *src = role_data(p, b.role);
    std::copy_n(src, b.size, flat.begin() + std::ptrdiff_t(b.offset));
  }
  return flat;
}

std::vector<double> ParamLayout::gather(const GradientStore &grads) const {
  std::vector<double> flat(total_, 0.0);
  for (const auto &b : blocks_) {
    const auto &slot = grads.per_vertex.at(b.vertex_pos);
    if (!slot) continue;
    auto &p = const_cast<ParameterSet &>(*slot);
    const double *src = role_data(p, b.role);
    if (src) std::copy_n(src, b.size, flat.begin() + std::ptrdiff_t(b.offset));
  }
  return flat;
}

void ParamLayout::scatter(ComputationGraph &g, std::span<const double> flat) const {
  if (flat.size() != total_) throw Error(ErrorCode::ShapeMismatch, "flat parameter size mismatch");
  for (const auto &b : blocks_) {
    double *dst = role_data(*g.at(b.vertex_pos).params, b.role);
    std::copy_n(flat.begin() + std::ptrdiff_t(b.offset), b.size, dst);
  }
}

std::vector<std::size_t> ParamLayout::indices(const ComputationGraph &g,
                                              const ParamSlice &s) const {
  std::vector<std::size_t> out;
  if (!is_trainable(s.role)) return out;
  const auto *b = find(g.position(s.vertex_id), s.role);
  if (!b) return out;
  const auto from = b->offset + std::size_t(s.begin) * b->row_length;
  const auto to = b->offset + std::size_t(s.end) * b->row_length;
  out.reserve(to - from);
  for (auto i = from; i < to; ++i) out.push_back(i);
  return out;
}

std::vector<std::size_t> ParamLayout::indices(const ComputationGraph &g,
                                              const ZeroInvariantGroup &z) const {
  std::vector<std::size_t> out;
  for (const auto &s : z.slices) {
    auto part = indices(g, s);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

} // namespace zigprune
