#include "advlab/kernels.hpp"

#include <algorithm>

#include <omp.h>

namespace advlab::kernels {
namespace {

// Row i of C for every transpose combination. Shared by both variants so the
// serial and parallel paths run the exact same arithmetic.
inline void gemm_row(Trans ta, Trans tb, std::size_t i, std::size_t m, std::size_t n,
                     std::size_t k, const double* a, const double* b, double* c_row) {
  if (tb == Trans::kNo) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = (ta == Trans::kNo) ? a[i * k + p] : a[p * m + i];
      if (aip == 0.0) continue;
      const double* b_row = b + p * n;
      for (std::size_t j = 0; j < n; ++j) c_row[j] += aip * b_row[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* b_row = b + j * k;
      double acc = 0.0;
      if (ta == Trans::kNo) {
        const double* a_row = a + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
      } else {
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b_row[p];
      }
      c_row[j] += acc;
    }
  }
}

inline void conv_forward_channel(const Conv1dDims& d, std::size_t o, const double* x,
                                 const double* w, const double* bias, double* y) {
  const std::size_t len = d.length;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(d.kernel / 2);
  double* yo = y + o * len;
  std::fill(yo, yo + len, bias ? bias[o] : 0.0);
  for (std::size_t i = 0; i < d.in_channels; ++i) {
    const double* xi = x + i * len;
    for (std::size_t kk = 0; kk < d.kernel; ++kk) {
      const double wv = w[(o * d.in_channels + i) * d.kernel + kk];
      const std::ptrdiff_t shift =
          (static_cast<std::ptrdiff_t>(kk) - half) * static_cast<std::ptrdiff_t>(d.dilation);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                   static_cast<std::ptrdiff_t>(len) - shift);
      for (std::ptrdiff_t t = lo; t < hi; ++t) yo[t] += wv * xi[t + shift];
    }
  }
}

inline void conv_backward_input_channel(const Conv1dDims& d, std::size_t i, const double* dy,
                                        const double* w, double* dx) {
  const std::size_t len = d.length;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(d.kernel / 2);
  double* dxi = dx + i * len;
  for (std::size_t o = 0; o < d.out_channels; ++o) {
    const double* dyo = dy + o * len;
    for (std::size_t kk = 0; kk < d.kernel; ++kk) {
      const double wv = w[(o * d.in_channels + i) * d.kernel + kk];
      const std::ptrdiff_t shift =
          (static_cast<std::ptrdiff_t>(kk) - half) * static_cast<std::ptrdiff_t>(d.dilation);
      // y[t] used x[t + shift]  =>  dx[s] += w * dy[s - shift]
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, shift);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                   static_cast<std::ptrdiff_t>(len) + shift);
      for (std::ptrdiff_t s = lo; s < hi; ++s) dxi[s] += wv * dyo[s - shift];
    }
  }
}

inline void conv_backward_weight_channel(const Conv1dDims& d, std::size_t o, const double* dy,
                                         const double* x, double* dw, double* dbias) {
  const std::size_t len = d.length;
  const std::ptrdiff_t half = static_cast<std::ptrdiff_t>(d.kernel / 2);
  const double* dyo = dy + o * len;
  if (dbias) {
    double acc = 0.0;
    for (std::size_t t = 0; t < len; ++t) acc += dyo[t];
    dbias[o] += acc;
  }
  for (std::size_t i = 0; i < d.in_channels; ++i) {
    const double* xi = x + i * len;
    for (std::size_t kk = 0; kk < d.kernel; ++kk) {
      const std::ptrdiff_t shift =
          (static_cast<std::ptrdiff_t>(kk) - half) * static_cast<std::ptrdiff_t>(d.dilation);
      const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -shift);
      const std::ptrdiff_t hi =
          std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(len),
                                   static_cast<std::ptrdiff_t>(len) - shift);
      double acc = 0.0;
      for (std::ptrdiff_t t = lo; t < hi; ++t) acc += dyo[t] * xi[t + shift];
      dw[(o * d.in_channels + i) * d.kernel + kk] += acc;
    }
  }
}

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelThreshold = 1 << 15;

}  // namespace

void gemm_serial(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
                 std::span<const double> a, std::span<const double> b, std::span<double> c,
                 bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
  for (std::size_t i = 0; i < m; ++i)
    gemm_row(ta, tb, i, m, n, k, a.data(), b.data(), c.data() + i * n);
}

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.end(), 0.0);
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  const auto rows = static_cast<std::ptrdiff_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelThreshold && m > 1)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    gemm_row(ta, tb, static_cast<std::size_t>(i), m, n, k, ap, bp, cp + i * n);
}

void conv1d_forward_serial(const Conv1dDims& d, std::span<const double> x,
                           std::span<const double> w, std::span<const double> bias,
                           std::span<double> y) {
  const double* bp = bias.empty() ? nullptr : bias.data();
  for (std::size_t o = 0; o < d.out_channels; ++o)
    conv_forward_channel(d, o, x.data(), w.data(), bp, y.data());
}

void conv1d_forward(const Conv1dDims& d, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
  const double* bp = bias.empty() ? nullptr : bias.data();
  const auto outs = static_cast<std::ptrdiff_t>(d.out_channels);
  const std::size_t work = d.out_channels * d.in_channels * d.kernel * d.length;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold && outs > 1)
  for (std::ptrdiff_t o = 0; o < outs; ++o)
    conv_forward_channel(d, static_cast<std::size_t>(o), x.data(), w.data(), bp, y.data());
}

void conv1d_backward_input_serial(const Conv1dDims& d, std::span<const double> dy,
                                  std::span<const double> w, std::span<double> dx) {
  for (std::size_t i = 0; i < d.in_channels; ++i)
    conv_backward_input_channel(d, i, dy.data(), w.data(), dx.data());
}

void conv1d_backward_input(const Conv1dDims& d, std::span<const double> dy,
                           std::span<const double> w, std::span<double> dx) {
  const auto ins = static_cast<std::ptrdiff_t>(d.in_channels);
  const std::size_t work = d.out_channels * d.in_channels * d.kernel * d.length;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold && ins > 1)
  for (std::ptrdiff_t i = 0; i < ins; ++i)
    conv_backward_input_channel(d, static_cast<std::size_t>(i), dy.data(), w.data(), dx.data());
}

void conv1d_backward_weight_serial(const Conv1dDims& d, std::span<const double> dy,
                                   std::span<const double> x, std::span<double> dw,
                                   std::span<double> dbias) {
  double* db = dbias.empty() ? nullptr : dbias.data();
  for (std::size_t o = 0; o < d.out_channels; ++o)
    conv_backward_weight_channel(d, o, dy.data(), x.data(), dw.data(), db);
}

void conv1d_backward_weight(const Conv1dDims& d, std::span<const double> dy,
                            std::span<const double> x, std::span<double> dw,
                            std::span<double> dbias) {
  double* db = dbias.empty() ? nullptr : dbias.data();
  const auto outs = static_cast<std::ptrdiff_t>(d.out_channels);
  const std::size_t work = d.out_channels * d.in_channels * d.kernel * d.length;
#pragma omp parallel for schedule(static) if (work > kParallelThreshold && outs > 1)
  for (std::ptrdiff_t o = 0; o < outs; ++o)
    conv_backward_weight_channel(d, static_cast<std::size_t>(o), dy.data(), x.data(), dw.data(),
                                 db);
}

void set_num_threads(int n) {
  if (n > 0) omp_set_num_threads(n);
}

int num_threads() { return omp_get_max_threads(); }

}  // namespace advlab::kernels
