#include "chexrel/kernels.hpp"

#include <atomic>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace chexrel::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// below this many multiply-adds the fork costs more than it saves
constexpr Index kParallelCutoff = 16 * 1024;
}  // namespace

bool parallel_enabled() {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed);
#else
  return false;
#endif
}

void set_parallel_enabled(bool on) { g_parallel.store(on, std::memory_order_relaxed); }

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// matmul: C[i,:] accumulated over k ascending, row-major friendly

void matmul_serial(Index m, Index p, Index n, const double* A, const double* B, double* C) {
  std::memset(C, 0, sizeof(double) * static_cast<size_t>(m * n));
  for (Index i = 0; i < m; ++i) {
    const double* a = A + i * p;
    double* c = C + i * n;
    for (Index k = 0; k < p; ++k) {
      const double aik = a[k];
      const double* b = B + k * n;
      for (Index j = 0; j < n; ++j) c[j] += aik * b[j];
    }
  }
}

void matmul_omp(Index m, Index p, Index n, const double* A, const double* B, double* C) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < m; ++i) {
    const double* a = A + i * p;
    double* c = C + i * n;
    for (Index j = 0; j < n; ++j) c[j] = 0.0;
    for (Index k = 0; k < p; ++k) {
      const double aik = a[k];
      const double* b = B + k * n;
      for (Index j = 0; j < n; ++j) c[j] += aik * b[j];
    }
  }
}

void matmul(Index m, Index p, Index n, const double* A, const double* B, double* C) {
  if (parallel_enabled() && m > 1 && m * p * n >= kParallelCutoff) {
    matmul_omp(m, p, n, A, B, C);
  } else {
    matmul_serial(m, p, n, A, B, C);
  }
}

// ---------------------------------------------------------------------------
// dA[i,k] += sum_j dC[i,j] * B[k,j]; rows of dA are independent

void matmul_acc_grad_a_serial(Index m, Index p, Index n, const double* dC, const double* B, double* dA) {
  for (Index i = 0; i < m; ++i) {
    const double* dc = dC + i * n;
    double* da = dA + i * p;
    for (Index k = 0; k < p; ++k) {
      const double* b = B + k * n;
      double acc = 0.0;
      for (Index j = 0; j < n; ++j) acc += dc[j] * b[j];
      da[k] += acc;
    }
  }
}

void matmul_acc_grad_a_omp(Index m, Index p, Index n, const double* dC, const double* B, double* dA) {
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < m; ++i) {
    const double* dc = dC + i * n;
    double* da = dA + i * p;
    for (Index k = 0; k < p; ++k) {
      const double* b = B + k * n;
      double acc = 0.0;
      for (Index j = 0; j < n; ++j) acc += dc[j] * b[j];
      da[k] += acc;
    }
  }
}

void matmul_acc_grad_a(Index m, Index p, Index n, const double* dC, const double* B, double* dA) {
  if (parallel_enabled() && m > 1 && m * p * n >= kParallelCutoff) {
    matmul_acc_grad_a_omp(m, p, n, dC, B, dA);
  } else {
    matmul_acc_grad_a_serial(m, p, n, dC, B, dA);
  }
}

// ---------------------------------------------------------------------------
// dB[k,j] += sum_i A[i,k] * dC[i,j]; rows of dB are independent, i ascending

void matmul_acc_grad_b_serial(Index m, Index p, Index n, const double* A, const double* dC, double* dB) {
  for (Index k = 0; k < p; ++k) {
    double* db = dB + k * n;
    for (Index i = 0; i < m; ++i) {
      const double aik = A[i * p + k];
      const double* dc = dC + i * n;
      for (Index j = 0; j < n; ++j) db[j] += aik * dc[j];
    }
  }
}

void matmul_acc_grad_b_omp(Index m, Index p, Index n, const double* A, const double* dC, double* dB) {
#pragma omp parallel for schedule(static)
  for (Index k = 0; k < p; ++k) {
    double* db = dB + k * n;
    for (Index i = 0; i < m; ++i) {
      const double aik = A[i * p + k];
      const double* dc = dC + i * n;
      for (Index j = 0; j < n; ++j) db[j] += aik * dc[j];
    }
  }
}

void matmul_acc_grad_b(Index m, Index p, Index n, const double* A, const double* dC, double* dB) {
  if (parallel_enabled() && p > 1 && m * p * n >= kParallelCutoff) {
    matmul_acc_grad_b_omp(m, p, n, A, dC, dB);
  } else {
    matmul_acc_grad_b_serial(m, p, n, A, dC, dB);
  }
}

// ---------------------------------------------------------------------------
// block matmul for a shared per-graph dense matrix

void block_matmul_serial(Index batch, Index n, Index d, const double* M, const double* H, double* out) {
  for (Index b = 0; b < batch; ++b) {
    const double* h = H + b * n * d;
    double* o = out + b * n * d;
    for (Index i = 0; i < n; ++i) {
      double* oi = o + i * d;
      for (Index c = 0; c < d; ++c) oi[c] = 0.0;
      const double* mi = M + i * n;
      for (Index j = 0; j < n; ++j) {
        const double mij = mi[j];
        if (mij == 0.0) continue;
        const double* hj = h + j * d;
        for (Index c = 0; c < d; ++c) oi[c] += mij * hj[c];
      }
    }
  }
}

void block_matmul_omp(Index batch, Index n, Index d, const double* M, const double* H, double* out) {
#pragma omp parallel for schedule(static)
  for (Index b = 0; b < batch; ++b) {
    const double* h = H + b * n * d;
    double* o = out + b * n * d;
    for (Index i = 0; i < n; ++i) {
      double* oi = o + i * d;
      for (Index c = 0; c < d; ++c) oi[c] = 0.0;
      const double* mi = M + i * n;
      for (Index j = 0; j < n; ++j) {
        const double mij = mi[j];
        if (mij == 0.0) continue;
        const double* hj = h + j * d;
        for (Index c = 0; c < d; ++c) oi[c] += mij * hj[c];
      }
    }
  }
}

void block_matmul(Index batch, Index n, Index d, const double* M, const double* H, double* out) {
  if (parallel_enabled() && batch > 1 && batch * n * n * d >= kParallelCutoff) {
    block_matmul_omp(batch, n, d, M, H, out);
  } else {
    block_matmul_serial(batch, n, d, M, H, out);
  }
}

}  // namespace chexrel::kernels
