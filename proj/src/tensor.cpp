// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0

#include "sonoclass/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include "sonoclass/kernels.hpp"

namespace sono::ad {

namespace {

std::atomic<bool> g_finite_checks{false};

void check_finite(std::string_view op, const Tensor& t) {
  if (!g_finite_checks.load(std::memory_order_relaxed)) return;
  for (double v : t.values()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(op) + ": non-finite value in output of shape " +
                           shape_str(t.shape()));
    }
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled); }
bool finite_checks() { return g_finite_checks.load(); }

Tensor::Tensor(Shape shape) : s_(std::make_shared<Storage>()) {
  s_->values.assign(shape_numel(shape), 0.0);
  s_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : s_(std::make_shared<Storage>()) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  s_->shape = std::move(shape);
  s_->values = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, {value}); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not scalar");
  return s_->values[0];
}

std::span<double> Tensor::ensure_grad() const {
  if (s_->grad.empty() && !s_->values.empty()) s_->grad.assign(s_->values.size(), 0.0);
  return s_->grad;
}

Tensor Tensor::clone() const {
  Tensor t(s_->shape, s_->values);
  return t;
}

void Tape::clear() {
  records_.clear();
  kink_signature_ = 0xcbf29ce484222325ULL;
}

void Tape::record(std::string_view op, Tensor output, Adjoint adjoint) {
  if (!recording_) return;
  records_.push_back(Record{std::string(op), std::move(output), std::move(adjoint)});
}

std::size_t Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  bool on_tape = false;
  for (const auto& r : records_) on_tape = on_tape || r.output.same_storage(loss);
  if (!on_tape) throw std::invalid_argument("backward: loss was not produced on this tape");

  Tensor seed = loss;
  seed.ensure_grad()[0] = 1.0;
  std::size_t visited = 0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it, ++visited) {
    if (it->output.has_grad()) it->adjoint();
  }
  return visited;
}

void Tape::mix_kink_signature(std::uint64_t h) {
  kink_signature_ ^= h + 0x9e3779b97f4a7c15ULL + (kink_signature_ << 6) + (kink_signature_ >> 2);
}

std::vector<std::string> Tape::op_names() const {
  std::vector<std::string> names;
  names.reserve(records_.size());
  for (const auto& r : records_) names.push_back(r.op);
  return names;
}

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
  const auto fail = [&](const std::string& why) {
    throw ShapeError("conv2d: " + why + " (input " + shape_str(input.shape()) + ", kernel " +
                     shape_str(kernel.shape()) + ")");
  };
  if (input.rank() != 4 || kernel.rank() != 4) fail("input and kernel must be rank 4");
  if (stride < 1 || padding < 0) fail("stride must be positive and padding nonnegative");
  if (input.dim(1) != kernel.dim(1)) fail("channel mismatch");
  if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0)) {
    fail("bias shape " + shape_str(bias.shape()) + " does not match output channels");
  }
  kernels::ConvGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.height = input.dim(2);
  g.width = input.dim(3);
  g.out_channels = kernel.dim(0);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride = static_cast<std::size_t>(stride);
  g.padding = static_cast<std::size_t>(padding);
  if (g.kernel_h > g.height + 2 * g.padding || g.kernel_w > g.width + 2 * g.padding) {
    fail("kernel larger than padded input");
  }

  Tensor out(Shape{g.batch, g.out_channels, g.out_h(), g.out_w()});
  auto columns = std::make_shared<std::vector<double>>();
  kernels::parallel::conv2d_forward(g, input.values(), kernel.values(), bias.values(),
                                    out.mutable_values(), tape.recording() ? columns.get() : nullptr);
  check_finite("conv2d", out);

  tape.record("conv2d", out, [g, input, kernel, bias, out, columns]() {
    const std::span<double> d_input = input.requires_grad() ? input.ensure_grad() : std::span<double>{};
    kernels::parallel::conv2d_backward(g, input.values(), kernel.values(), out.grad(), d_input,
                                       kernel.ensure_grad(), bias.ensure_grad(), *columns);
  });
  return out;
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  auto xv = x.values();
  auto ov = out.mutable_values();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const bool on = xv[i] > 0.0;
    ov[i] = on ? xv[i] : 0.0;
    h = (h ^ static_cast<std::uint64_t>(on)) * 0x100000001b3ULL;
  }
  tape.mix_kink_signature(h);
  check_finite("relu", out);

  tape.record("relu", out, [x, out]() mutable {
    auto xv = x.values();
    auto go = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
  return out;
}

Tensor avg_pool2(Tape& tape, const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("avg_pool2: expected N×C×H×W, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("avg_pool2: spatial extent too small in " + shape_str(x.shape()));
  Tensor out(Shape{n, c, oh, ow});
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = xv.data() + p * h * w;
    double* dst = ov.data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* s = src + 2 * y * w + 2 * xx;
        dst[y * ow + xx] = 0.25 * (s[0] + s[1] + s[w] + s[w + 1]);
      }
    }
  }
  check_finite("avg_pool2", out);

  tape.record("avg_pool2", out, [x, out, n, c, h, w, oh, ow]() mutable {
    auto go = out.grad();
    auto gx = x.ensure_grad();
    for (std::size_t p = 0; p < n * c; ++p) {
      double* dst = gx.data() + p * h * w;
      const double* src = go.data() + p * oh * ow;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double g = 0.25 * src[y * ow + xx];
          double* d = dst + 2 * y * w + 2 * xx;
          d[0] += g;
          d[1] += g;
          d[w] += g;
          d[w + 1] += g;
        }
      }
    }
  });
  return out;
}

Tensor global_average_pool(Tape& tape, const Tensor& f) {
  Shape out_shape;
  std::size_t planes = 0, area = 0;
  if (f.rank() == 3) {
    out_shape = {f.dim(0)};
    planes = f.dim(0);
    area = f.dim(1) * f.dim(2);
  } else if (f.rank() == 4) {
    out_shape = {f.dim(0), f.dim(1)};
    planes = f.dim(0) * f.dim(1);
    area = f.dim(2) * f.dim(3);
  } else {
    throw ShapeError("global_average_pool: expected C×H×W or N×C×H×W, got " + shape_str(f.shape()));
  }
  if (area == 0) throw ShapeError("global_average_pool: empty spatial extent in " + shape_str(f.shape()));

  Tensor out(out_shape);
  auto fv = f.values();
  auto ov = out.mutable_values();
  const double inv = 1.0 / static_cast<double>(area);
  for (std::size_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < area; ++i) acc += fv[p * area + i];
    ov[p] = acc * inv;
  }
  check_finite("global_average_pool", out);

  tape.record("global_average_pool", out, [f, out, planes, area, inv]() mutable {
    auto go = out.grad();
    auto gf = f.ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      const double g = go[p] * inv;
      for (std::size_t i = 0; i < area; ++i) gf[p * area + i] += g;
    }
  });
  return out;
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || (a.rank() != 1 && a.rank() != 2)) {
    throw ShapeError("concat_channels: expected two rank-1 or two rank-2 tensors, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const bool batched = a.rank() == 2;
  if (batched && a.dim(0) != b.dim(0)) {
    throw ShapeError("concat_channels: batch extent mismatch between " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  }
  const std::size_t rows = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 1), n = b.dim(b.rank() - 1);
  Tensor out(batched ? Shape{rows, m + n} : Shape{m + n});
  auto ov = out.mutable_values();
  auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < m; ++i) ov[r * (m + n) + i] = av[r * m + i];
    for (std::size_t i = 0; i < n; ++i) ov[r * (m + n) + m + i] = bv[r * n + i];
  }
  check_finite("concat_channels", out);

  tape.record("concat_channels", out, [a, b, out, rows, m, n]() mutable {
    auto go = out.grad();
    if (m > 0) {
      auto ga = a.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < m; ++i) ga[r * m + i] += go[r * (m + n) + i];
    }
    if (n > 0) {
      auto gb = b.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t i = 0; i < n; ++i) gb[r * n + i] += go[r * (m + n) + m + i];
    }
  });
  return out;
}

Tensor dense(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if ((x.rank() != 1 && x.rank() != 2) || weight.rank() != 2 || bias.rank() != 1 ||
      x.dim(x.rank() - 1) != weight.dim(1) || bias.dim(0) != weight.dim(0)) {
    throw ShapeError("dense: incompatible shapes x " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  }
  const bool batched = x.rank() == 2;
  const std::size_t rows = batched ? x.dim(0) : 1;
  const std::size_t k = weight.dim(0), m = weight.dim(1);
  Tensor out(batched ? Shape{rows, k} : Shape{k});
  auto xv = x.values(), wv = weight.values(), bv = bias.values();
  auto ov = out.mutable_values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      double acc = bv[j];
      for (std::size_t i = 0; i < m; ++i) acc += wv[j * m + i] * xv[r * m + i];
      ov[r * k + j] = acc;
    }
  }
  check_finite("dense", out);

  tape.record("dense", out, [x, weight, bias, out, rows, k, m]() mutable {
    auto go = out.grad();
    auto xv = x.values(), wv = weight.values();
    auto gx = x.ensure_grad();
    auto gw = weight.ensure_grad();
    auto gb = bias.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < k; ++j) {
        const double g = go[r * k + j];
        gb[j] += g;
        for (std::size_t i = 0; i < m; ++i) {
          gw[j * m + i] += g * xv[r * m + i];
          gx[r * m + i] += g * wv[j * m + i];
        }
      }
    }
  });
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  check_finite("sum", out);
  tape.record("sum", out, [x, out]() mutable {
    const double g = out.grad()[0];
    for (auto& v : x.ensure_grad()) v += g;
  });
  return out;
}

Tensor half_sum_squares(Tape& tape, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v * v;
  Tensor out = Tensor::scalar(0.5 * acc);
  check_finite("half_sum_squares", out);
  tape.record("half_sum_squares", out, [x, out]() mutable {
    const double g = out.grad()[0];
    auto xv = x.values();
    auto gx = x.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * xv[i];
  });
  return out;
}

Tensor attach_loss(Tape& tape, const Tensor& logits, double value, std::vector<double> grad_logits) {
  if (grad_logits.size() != logits.size()) {
    throw ShapeError("attach_loss: gradient length " + std::to_string(grad_logits.size()) +
                     " does not match logits " + shape_str(logits.shape()));
  }
  Tensor out = Tensor::scalar(value);
  check_finite("loss", out);
  tape.record("loss", out, [logits, out, grad = std::move(grad_logits)]() mutable {
    const double g = out.grad()[0];
    auto gl = logits.ensure_grad();
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += g * grad[i];
  });
  return out;
}

}  // namespace sono::ad
