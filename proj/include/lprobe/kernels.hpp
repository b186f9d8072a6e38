#pragma once

// Dense inner loops of the probe. Each backend fills a KernelTable; the scalar
// table is the reference the SIMD variants are tested against.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace lprobe::kernels {

struct KernelTable {
  const char* name;
  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // sum_i a[i] * b[i], a in single precision
  double (*dot_f32)(const float* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // y[i] += alpha * x[i], x in single precision
  void (*axpy_f32)(double alpha, const float* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the backend is not compiled in or the CPU lacks it.
const KernelTable* avx2_table();
const KernelTable* neon_table();

/// Backend used by the library. Chosen on first use from LPROBE_KERNELS
/// (scalar | avx2 | neon | auto, default auto), falling back to scalar.
const KernelTable& active();

/// Forces a backend by name. Returns false (and changes nothing) if it is not
/// available. Not thread-safe against concurrent kernel use.
bool select(std::string_view name);

/// Names of the backends usable on this machine, scalar first.
std::vector<std::string_view> available();

// Matrix helpers over row-major storage, built on the active table.

/// y = W x + b   (W is rows x cols)
void gemv(std::span<const double> w, std::span<const double> b, std::span<const double> x,
          std::span<double> y);
/// x_grad += W^T y_grad
void gemv_t_acc(std::span<const double> w, std::span<const double> y_grad,
                std::span<double> x_grad);
/// W_grad += y_grad x^T
void outer_acc(std::span<const double> y_grad, std::span<const double> x,
               std::span<double> w_grad);

}  // namespace lprobe::kernels
