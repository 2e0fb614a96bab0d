#include "mclas/kernels.hpp"

#include <atomic>
#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mclas::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = std::size_t{1} << 18;

inline void nn_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                   std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a_row[p];
        const double* b_row = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
            c_row[j] += av * b_row[j];
        }
    }
}

inline void nt_row(const double* a_row, const double* b, double* c_row, std::size_t k,
                   std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* b_row = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            acc += a_row[p] * b_row[p];
        }
        c_row[j] += acc;
    }
}

// Row `p` of C = Aᵀ·B accumulates over the shared m axis in ascending order.
inline void tn_row(const double* a, const double* b, double* c_row, std::size_t p,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double av = a[i * k + p];
        if (av == 0.0) {
            continue;
        }
        const double* b_row = b + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            c_row[j] += av * b_row[j];
        }
    }
}

}  // namespace

void gemm_nn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        nn_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
    }
}

void gemm_nn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        nn_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
    }
}

void gemm_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        nt_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
    }
}

void gemm_nt_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < rows; ++i) {
        const auto r = static_cast<std::size_t>(i);
        nt_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
    }
}

void gemm_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        tn_row(a.data(), b.data(), c.data() + p * n, p, m, k, n);
    }
}

void gemm_tn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n) {
    const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static)
    for (std::int64_t p = 0; p < rows; ++p) {
        const auto r = static_cast<std::size_t>(p);
        tn_row(a.data(), b.data(), c.data() + r * n, r, m, k, n);
    }
}

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    if (g_parallel.load(std::memory_order_relaxed) && m * k * n >= kParallelWork && m > 1) {
        gemm_nn_parallel(a, b, c, m, k, n);
    } else {
        gemm_nn_serial(a, b, c, m, k, n);
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    if (g_parallel.load(std::memory_order_relaxed) && m * k * n >= kParallelWork && m > 1) {
        gemm_nt_parallel(a, b, c, m, k, n);
    } else {
        gemm_nt_serial(a, b, c, m, k, n);
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    if (g_parallel.load(std::memory_order_relaxed) && m * k * n >= kParallelWork && k > 1) {
        gemm_tn_parallel(a, b, c, m, k, n);
    } else {
        gemm_tn_serial(a, b, c, m, k, n);
    }
}

void set_parallel_kernels(bool enabled) { g_parallel.store(enabled); }

bool parallel_kernels() { return g_parallel.load(); }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace mclas::kernels
