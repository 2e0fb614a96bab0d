#pragma once

#include <cstddef>
#include <span>

// Dense GEMM kernels over row-major storage. Every kernel accumulates into C.
// The *_serial variants are the reference implementations; the *_parallel
// variants split the output rows across OpenMP threads and keep the per-element
// summation order of the serial loop, so both produce bit-identical results.
namespace mclas::kernels {

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n);
void gemm_nn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n);

// C[m×n] += A[m×k] · B[n×k]ᵀ
void gemm_nt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n);
void gemm_nt_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n);

// C[k×n] += A[m×k]ᵀ · B[m×n]
void gemm_tn_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                    std::size_t m, std::size_t k, std::size_t n);
void gemm_tn_parallel(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n);

// Dispatchers: parallel above a work threshold when enabled, serial otherwise.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void set_parallel_kernels(bool enabled);
bool parallel_kernels();
int max_threads();

}  // namespace mclas::kernels
