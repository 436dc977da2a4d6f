#pragma once

#include <cstddef>

#include "micle/parallel.hpp"

namespace micle {

// Row-major GEMM kernels, blocked four output rows at a time so each B row is
// streamed once per block. Every output element is accumulated in ascending
// k order by exactly one worker, so results are bitwise identical for any
// MICLE_THREADS value (and match the unblocked loop).

// C[m x n] = A[m x k] * B[k x n], += when accumulate.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false) {
    parallel_for(m, m * k * n, [=](std::size_t lo, std::size_t hi) {
        std::size_t i = lo;
        for (; i + 4 <= hi; i += 4) {
            T* c0 = c + i * n;
            T* c1 = c0 + n;
            T* c2 = c1 + n;
            T* c3 = c2 + n;
            if (!accumulate) {
                for (std::size_t j = 0; j < n; ++j) c0[j] = c1[j] = c2[j] = c3[j] = T(0);
            }
            const T* a0 = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const T bj = brow[j];
                    c0[j] += v0 * bj;
                    c1[j] += v1 * bj;
                    c2[j] += v2 * bj;
                    c3[j] += v3 * bj;
                }
            }
        }
        for (; i < hi; ++i) {
            T* crow = c + i * n;
            if (!accumulate) {
                for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
            }
            const T* arow = a + i * k;
            for (std::size_t p = 0; p < k; ++p) {
                const T av = arow[p];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

// C[m x n] = A[m x k] * B[n x k]^T.
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false) {
    parallel_for(m, m * k * n, [=](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            const T* arow = a + i * k;
            T* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                const T* brow = b + j * k;
                // Four fixed-order partial sums; lets the compiler vectorize
                // without reassociating the reduction.
                T s0 = T(0), s1 = T(0), s2 = T(0), s3 = T(0);
                std::size_t p = 0;
                for (; p + 4 <= k; p += 4) {
                    s0 += arow[p] * brow[p];
                    s1 += arow[p + 1] * brow[p + 1];
                    s2 += arow[p + 2] * brow[p + 2];
                    s3 += arow[p + 3] * brow[p + 3];
                }
                T s = (s0 + s1) + (s2 + s3);
                for (; p < k; ++p) s += arow[p] * brow[p];
                crow[j] = accumulate ? crow[j] + s : s;
            }
        }
    });
}

// C[m x n] = A[k x m]^T * B[k x n].
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate = false) {
    parallel_for(m, m * k * n, [=](std::size_t lo, std::size_t hi) {
        std::size_t i = lo;
        for (; i + 4 <= hi; i += 4) {
            T* c0 = c + i * n;
            T* c1 = c0 + n;
            T* c2 = c1 + n;
            T* c3 = c2 + n;
            if (!accumulate) {
                for (std::size_t j = 0; j < n; ++j) c0[j] = c1[j] = c2[j] = c3[j] = T(0);
            }
            for (std::size_t p = 0; p < k; ++p) {
                const T* acol = a + p * m + i;
                const T v0 = acol[0], v1 = acol[1], v2 = acol[2], v3 = acol[3];
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) {
                    const T bj = brow[j];
                    c0[j] += v0 * bj;
                    c1[j] += v1 * bj;
                    c2[j] += v2 * bj;
                    c3[j] += v3 * bj;
                }
            }
        }
        for (; i < hi; ++i) {
            T* crow = c + i * n;
            if (!accumulate) {
                for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
            }
            for (std::size_t p = 0; p < k; ++p) {
                const T av = a[p * m + i];
                if (av == T(0)) continue;
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

}  // namespace micle
