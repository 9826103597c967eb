#pragma once

#include <cstddef>
#include <span>

// Dense kernels behind the autodiff ops. Every kernel has a serial reference
// and an OpenMP version with the same per-element accumulation order, so the
// two agree bit for bit regardless of thread count.
namespace advlab::kernels {

enum class Trans { kNo, kYes };

// C (m x n) = op(A) * op(B), or C += ... when accumulate is set.
// op(A) is m x k and op(B) is k x n; all buffers are row-major.
void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b,
                 std::span<double> c, bool accumulate);
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b,
          std::span<double> c, bool accumulate);

struct Conv1dDims {
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t length;
  std::size_t kernel;    // odd
  std::size_t dilation;  // >= 1
};

// "Same" zero-padded 1-D convolution (cross-correlation) over time.
// x: in x length, w: out x in x kernel, bias: out (may be empty), y: out x length.
void conv1d_forward_serial(const Conv1dDims& d, std::span<const double> x,
                           std::span<const double> w, std::span<const double> bias,
                           std::span<double> y);
void conv1d_forward(const Conv1dDims& d, std::span<const double> x,
                    std::span<const double> w, std::span<const double> bias,
                    std::span<double> y);

// Accumulates dL/dx into dx.
void conv1d_backward_input_serial(const Conv1dDims& d, std::span<const double> dy,
                                  std::span<const double> w, std::span<double> dx);
void conv1d_backward_input(const Conv1dDims& d, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx);

// Accumulates dL/dw into dw and dL/dbias into dbias (dbias may be empty).
void conv1d_backward_weight_serial(const Conv1dDims& d, std::span<const double> dy,
                                   std::span<const double> x, std::span<double> dw,
                                   std::span<double> dbias);
void conv1d_backward_weight(const Conv1dDims& d, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            std::span<double> dbias);

// Thread count used by the OpenMP kernels and per-utterance loops; 0 keeps the
// OpenMP runtime default.
void set_num_threads(int n);
int num_threads();

}  // namespace advlab::kernels
