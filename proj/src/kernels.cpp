#include "lprobe/kernels.hpp"

#include <atomic>
#include <cassert>
#include <cstdlib>
#include <string>

namespace lprobe::kernels {

#if defined(LPROBE_HAVE_AVX2)
namespace avx2 {
extern const KernelTable kTable;
}
#endif
#if defined(__aarch64__)
namespace neon {
extern const KernelTable kTable;
}
#endif

const KernelTable* avx2_table() {
#if defined(LPROBE_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2::kTable : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable* neon_table() {
#if defined(__aarch64__)
  return &neon::kTable;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* by_name(std::string_view name) {
  if (name == "scalar") return &scalar_table();
  if (name == "avx2") return avx2_table();
  if (name == "neon") return neon_table();
  return nullptr;
}

const KernelTable* detect() {
  if (const char* env = std::getenv("LPROBE_KERNELS")) {
    const std::string_view want(env);
    if (want != "auto" && !want.empty()) {
      if (const KernelTable* t = by_name(want)) return t;
    }
  }
  if (const KernelTable* t = avx2_table()) return t;
  if (const KernelTable* t = neon_table()) return t;
  return &scalar_table();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  const KernelTable* t = name == "auto" ? detect() : by_name(name);
  if (!t) return false;
  current().store(t, std::memory_order_relaxed);
  return true;
}

std::vector<std::string_view> available() {
  std::vector<std::string_view> out{"scalar"};
  if (avx2_table()) out.push_back("avx2");
  if (neon_table()) out.push_back("neon");
  return out;
}

void gemv(std::span<const double> w, std::span<const double> b, std::span<const double> x,
          std::span<double> y) {
  const std::size_t rows = y.size();
  const std::size_t cols = x.size();
  assert(w.size() == rows * cols && b.size() == rows);
  const KernelTable& k = active();
  for (std::size_t r = 0; r < rows; ++r) y[r] = b[r] + k.dot(w.data() + r * cols, x.data(), cols);
}

void gemv_t_acc(std::span<const double> w, std::span<const double> y_grad,
                std::span<double> x_grad) {
  const std::size_t rows = y_grad.size();
  const std::size_t cols = x_grad.size();
  assert(w.size() == rows * cols);
  const KernelTable& k = active();
  for (std::size_t r = 0; r < rows; ++r) {
    if (y_grad[r] != 0.0) k.axpy(y_grad[r], w.data() + r * cols, x_grad.data(), cols);
  }
}

void outer_acc(std::span<const double> y_grad, std::span<const double> x,
               std::span<double> w_grad) {
  const std::size_t rows = y_grad.size();
  const std::size_t cols = x.size();
  assert(w_grad.size() == rows * cols);
  const KernelTable& k = active();
  for (std::size_t r = 0; r < rows; ++r) {
    if (y_grad[r] != 0.0) k.axpy(y_grad[r], x.data(), w_grad.data() + r * cols, cols);
  }
}

}  // namespace lprobe::kernels
