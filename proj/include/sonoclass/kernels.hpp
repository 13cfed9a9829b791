// Copyright 2026 The sonoclass Authors
// SPDX-License-Identifier: Apache-2.0
//
// Numeric inner loops. Every kernel exists twice: a plain serial reference
// kept for testing and benchmarking, and an OpenMP variant used by the
// library. Both write identical results up to floating-point reassociation.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sono::kernels {

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t patch() const { return in_channels * kernel_h * kernel_w; }
  std::size_t input_size() const { return batch * in_channels * height * width; }
  std::size_t output_size() const { return batch * out_channels * out_h() * out_w(); }
  std::size_t kernel_size() const { return out_channels * patch(); }
};

// Reflect-101 index for a border of any width: -1 -> 1, n -> n-2.
std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<const double> bias,
                    std::span<double> output);

// Accumulates into d_input, d_kernel and d_bias.
void conv2d_backward(const ConvGeometry& g, std::span<const double> input,
                     std::span<const double> kernel, std::span<const double> d_output,
                     std::span<double> d_input, std::span<double> d_kernel,
                     std::span<double> d_bias);

// Direct 2-D convolution of an H×W×C interleaved image with a (2r+1)² kernel,
// reflect-101 border.
void blur_2d(std::span<const double> image, std::size_t height, std::size_t width,
             std::size_t channels, std::span<const double> kernel2d, std::size_t radius,
             std::span<double> output);

}  // namespace reference

namespace parallel {

// Forward pass as one batch-wide GEMM over an im2col matrix of shape
// patch × (batch·out_h·out_w). When `columns` is non-null it receives that
// matrix so the backward pass can reuse it.
void conv2d_forward(const ConvGeometry& g, std::span<const double> input,
                    std::span<const double> kernel, std::span<const double> bias,
                    std::span<double> output, std::vector<double>* columns = nullptr);

// `columns` may be empty, in which case it is rebuilt from `input`. An empty
// d_input skips the input gradient.
void conv2d_backward(const ConvGeometry& g, std::span<const double> input,
                     std::span<const double> kernel, std::span<const double> d_output,
                     std::span<double> d_input, std::span<double> d_kernel,
                     std::span<double> d_bias, std::span<const double> columns = {});

// Two 1-D passes with a normalized (2r+1) kernel; equals blur_2d with the
// outer-product kernel.
void blur_separable(std::span<const double> image, std::size_t height, std::size_t width,
                    std::size_t channels, std::span<const double> kernel1d, std::size_t radius,
                    std::span<double> output);

}  // namespace parallel

}  // namespace sono::kernels
