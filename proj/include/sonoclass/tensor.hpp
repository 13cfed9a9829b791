// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode differentiable array core. Tensors are shared handles
// over row-major double storage; operations append adjoint closures to a Tape
// which replays them in reverse from a scalar loss.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sono::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(s_); }
  const Shape& shape() const { return s_->shape; }
  std::size_t rank() const { return s_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
  std::size_t size() const { return s_->values.size(); }

  std::span<const double> values() const { return s_->values; }
  std::span<double> mutable_values() { return s_->values; }
  double item() const;

  bool has_grad() const { return !s_->grad.empty(); }
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const { return s_->grad; }
  // Allocates a zero-filled gradient buffer on first use.
  std::span<double> ensure_grad() const;
  void clear_grad() const { s_->grad.clear(); }

  // Data tensors (network inputs) can opt out; ops then skip their adjoints.
  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool value) const { s_->requires_grad = value; }

  bool same_storage(const Tensor& other) const { return s_ == other.s_; }
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = true;
  };
  std::shared_ptr<Storage> s_;
};

// Ordered record of executed operations. Single-threaded; distinct tapes may
// be used concurrently from different threads.
class Tape {
 public:
  using Adjoint = std::function<void()>;

  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  std::size_t size() const { return records_.size(); }
  void clear();

  void record(std::string_view op, Tensor output, Adjoint adjoint);

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse. Returns the
  // number of records visited, which is always size().
  std::size_t backward(const Tensor& loss);

  // Hash over every activation mask seen by piecewise-linear ops (relu).
  // Two evaluations with equal signatures lie in the same linear region.
  std::uint64_t kink_signature() const { return kink_signature_; }
  void mix_kink_signature(std::uint64_t h);

  std::vector<std::string> op_names() const;

 private:
  struct Record {
    std::string op;
    Tensor output;
    Adjoint adjoint;
  };
  bool recording_;
  std::vector<Record> records_;
  std::uint64_t kink_signature_ = 0xcbf29ce484222325ULL;
};

// When enabled every forward op verifies its output is finite and throws
// NonFiniteError otherwise. Test builds switch this on.
void set_finite_checks(bool enabled);
bool finite_checks();

// x: N×C×H×W, kernel: O×C×Kh×Kw, bias: O. Zero padding, unit dilation.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

Tensor relu(Tape& tape, const Tensor& x);

// 2×2 window, stride 2, floor on odd extents. x: N×C×H×W.
Tensor avg_pool2(Tape& tape, const Tensor& x);

// C×H×W -> C, or N×C×H×W -> N×C.
Tensor global_average_pool(Tape& tape, const Tensor& f);

// m ++ n -> m+n, or N×m ++ N×n -> N×(m+n).
Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);

// x: m or N×m, weight: k×m, bias: k -> k or N×k.
Tensor dense(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor sum(Tape& tape, const Tensor& x);
// 0.5 * sum(x^2)
Tensor half_sum_squares(Tape& tape, const Tensor& x);

// Scalar node whose value is `value` and whose adjoint w.r.t. `logits` is
// `grad_logits` scaled by the upstream gradient. Bridges closed-form losses
// onto the tape.
Tensor attach_loss(Tape& tape, const Tensor& logits, double value, std::vector<double> grad_logits);

}  // namespace sono::ad
