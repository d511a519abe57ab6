#pragma once

#include <cstdint>

// Dense numeric kernels, each in a serial and an OpenMP flavor. Every output
// element is accumulated in a fixed index order in both flavors, so the two
// produce bitwise-identical results and runs are reproducible across thread
// counts. The dispatching entry points pick the parallel path for inputs
// large enough to amortize the fork.
namespace chexrel::kernels {

using Index = std::int64_t;

bool parallel_enabled();
void set_parallel_enabled(bool on);
int thread_count();

// C[m x n] = A[m x p] * B[p x n], C overwritten
void matmul_serial(Index m, Index p, Index n, const double* A, const double* B, double* C);
void matmul_omp(Index m, Index p, Index n, const double* A, const double* B, double* C);
void matmul(Index m, Index p, Index n, const double* A, const double* B, double* C);

// dA[m x p] += dC[m x n] * B^T  (B is p x n)
void matmul_acc_grad_a_serial(Index m, Index p, Index n, const double* dC, const double* B, double* dA);
void matmul_acc_grad_a_omp(Index m, Index p, Index n, const double* dC, const double* B, double* dA);
void matmul_acc_grad_a(Index m, Index p, Index n, const double* dC, const double* B, double* dA);

// dB[p x n] += A^T * dC[m x n]  (A is m x p)
void matmul_acc_grad_b_serial(Index m, Index p, Index n, const double* A, const double* dC, double* dB);
void matmul_acc_grad_b_omp(Index m, Index p, Index n, const double* A, const double* dC, double* dB);
void matmul_acc_grad_b(Index m, Index p, Index n, const double* A, const double* dC, double* dB);

// out[b*n + i] = sum_j M[i*n + j] * H[b*n + j], for dense per-graph matrix M
// applied to every block of a batched node matrix H[(batch*n) x d]
void block_matmul_serial(Index batch, Index n, Index d, const double* M, const double* H, double* out);
void block_matmul_omp(Index batch, Index n, Index d, const double* M, const double* H, double* out);
void block_matmul(Index batch, Index n, Index d, const double* M, const double* H, double* out);

}  // namespace chexrel::kernels
