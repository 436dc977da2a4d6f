#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "micle/gemm.hpp"
#include "micle/parallel.hpp"
#include "micle/tensor.hpp"

namespace micle {

namespace detail {

// Unpacks x[C x H x W] windows into cols[(C*kh*kw) x (Ho*Wo)] for one image.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* cols) {
    const std::size_t p = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                T* row = cols + ((ch * kh + ki) * kw + kj) * p;
                for (std::size_t oi = 0; oi < ho; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                                              static_cast<std::ptrdiff_t>(pad);
                    for (std::size_t oj = 0; oj < wo; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        T v = T(0);
                        if (ii >= 0 && ii < static_cast<std::ptrdiff_t>(h) && jj >= 0 &&
                            jj < static_cast<std::ptrdiff_t>(w)) {
                            v = x[(ch * h + static_cast<std::size_t>(ii)) * w +
                                  static_cast<std::size_t>(jj)];
                        }
                        row[oi * wo + oj] = v;
                    }
                }
            }
        }
    }
}

// Scatter-adds cols back into the input gradient.
template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* dx) {
    const std::size_t p = ho * wo;
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t ki = 0; ki < kh; ++ki) {
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const T* row = cols + ((ch * kh + ki) * kw + kj) * p;
                for (std::size_t oi = 0; oi < ho; ++oi) {
                    const std::ptrdiff_t ii = static_cast<std::ptrdiff_t>(oi * stride + ki) -
                                              static_cast<std::ptrdiff_t>(pad);
                    if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(h)) continue;
                    for (std::size_t oj = 0; oj < wo; ++oj) {
                        const std::ptrdiff_t jj = static_cast<std::ptrdiff_t>(oj * stride + kj) -
                                                  static_cast<std::ptrdiff_t>(pad);
                        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(w)) continue;
                        dx[(ch * h + static_cast<std::size_t>(ii)) * w +
                           static_cast<std::size_t>(jj)] += row[oi * wo + oj];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// ---- linear algebra ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    using Node = typename Tensor<T>::Node;
    check_dim(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors, got " +
                                                  shape_str(a.shape()) + " and " +
                                                  shape_str(b.shape()));
    check_dim(a.dim(1) == b.dim(0), "matmul inner extents disagree: " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    gemm_nn(a.value().data(), b.value().data(), out.data(), m, k, n);
    Node* an = a.node();
    Node* bn = b.node();
    return Tensor<T>::make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const Node& y) {
        Tensor<T>::ensure_grad(*an);
        gemm_nt(y.grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
        Tensor<T>::ensure_grad(*bn);
        gemm_tn(an->value.data(), y.grad.data(), bn->grad.data(), k, m, n, true);
    });
}

// C = A * B^T; used for pairwise similarity matrices. a and b may alias.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    using Node = typename Tensor<T>::Node;
    check_dim(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(1),
              "matmul_nt shape mismatch: " + shape_str(a.shape()) + " vs " +
                  shape_str(b.shape()));
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    std::vector<T> out(m * n);
    gemm_nt(a.value().data(), b.value().data(), out.data(), m, k, n);
    Node* an = a.node();
    Node* bn = b.node();
    return Tensor<T>::make_op({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](const Node& y) {
        Tensor<T>::ensure_grad(*an);
        gemm_nn(y.grad.data(), bn->value.data(), an->grad.data(), m, n, k, true);
        Tensor<T>::ensure_grad(*bn);
        gemm_tn(y.grad.data(), an->value.data(), bn->grad.data(), n, m, k, true);
    });
}

// y = x * W + b with x[N x D], W[D x F], b[F].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 2 && w.rank() == 2 && b.rank() == 1,
              "linear expects x[NxD], W[DxF], b[F]");
    check_dim(x.dim(1) == w.dim(0) && w.dim(1) == b.dim(0),
              "linear shape mismatch: x=" + shape_str(x.shape()) + " W=" + shape_str(w.shape()) +
                  " b=" + shape_str(b.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1), f = w.dim(1);
    std::vector<T> out(n * f);
    gemm_nn(x.value().data(), w.value().data(), out.data(), n, d, f);
    const T* bv = b.value().data();
    for (std::size_t i = 0; i < n; ++i) {
        T* row = out.data() + i * f;
        for (std::size_t j = 0; j < f; ++j) row[j] += bv[j];
    }
    Node* xn = x.node();
    Node* wn = w.node();
    Node* bn = b.node();
    return Tensor<T>::make_op({n, f}, std::move(out), {x, w, b},
                              [xn, wn, bn, n, d, f](const Node& y) {
                                  Tensor<T>::ensure_grad(*xn);
                                  gemm_nt(y.grad.data(), wn->value.data(), xn->grad.data(), n, f,
                                          d, true);
                                  Tensor<T>::ensure_grad(*wn);
                                  gemm_tn(xn->value.data(), y.grad.data(), wn->grad.data(), d, n,
                                          f, true);
                                  Tensor<T>::ensure_grad(*bn);
                                  for (std::size_t i = 0; i < n; ++i) {
                                      const T* row = y.grad.data() + i * f;
                                      for (std::size_t j = 0; j < f; ++j) bn->grad[j] += row[j];
                                  }
                              });
}

// ---- convolution and pooling ----

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 4 && w.rank() == 4,
              "conv2d expects x[NxCxHxW], w[FxCxkhxkw], got " + shape_str(x.shape()) + " and " +
                  shape_str(w.shape()));
    check_dim(stride >= 1, "conv2d stride must be positive");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    check_dim(w.dim(1) == c, "conv2d channel mismatch: input has " + std::to_string(c) +
                                 ", kernel expects " + std::to_string(w.dim(1)));
    check_dim(kh <= h + 2 * pad && kw <= wd + 2 * pad,
              "conv2d kernel larger than padded input: " + shape_str(w.shape()) + " on " +
                  shape_str(x.shape()));
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
    check_dim(ho >= 1 && wo >= 1, "conv2d produces non-positive output extent");

    const std::size_t ckk = c * kh * kw;
    const std::size_t p = ho * wo;
    std::vector<T> out(n * f * p);
    {
        // Per-image im2col + GEMM; im2col is recomputed in backward rather
        // than cached, keeping live memory proportional to one layer.
        const T* xv = x.value().data();
        const T* wv = w.value().data();
        T* ov = out.data();
        parallel_for(n, n * f * ckk * p, [&](std::size_t lo, std::size_t hi) {
            std::vector<T> cols(ckk * p);
            for (std::size_t img = lo; img < hi; ++img) {
                detail::im2col(xv + img * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo,
                               cols.data());
                gemm_nn(wv, cols.data(), ov + img * f * p, f, ckk, p);
            }
        });
    }
    Node* xn = x.node();
    Node* wn = w.node();
    return Tensor<T>::make_op(
        {n, f, ho, wo}, std::move(out), {x, w},
        [xn, wn, n, c, h, wd, f, kh, kw, stride, pad, ho, wo, ckk, p](const Node& y) {
            Tensor<T>::ensure_grad(*xn);
            Tensor<T>::ensure_grad(*wn);
            // dW accumulates across images in a fixed order, computed
            // transposed (cols * dY^T) so the NN kernel carries the load.
            {
                std::vector<T> cols(ckk * p);
                std::vector<T> dyt(p * f);
                std::vector<T> dwt(ckk * f, T(0));
                for (std::size_t img = 0; img < n; ++img) {
                    detail::im2col(xn->value.data() + img * c * h * wd, c, h, wd, kh, kw, stride,
                                   pad, ho, wo, cols.data());
                    const T* dy = y.grad.data() + img * f * p;
                    for (std::size_t fi = 0; fi < f; ++fi) {
                        for (std::size_t pi = 0; pi < p; ++pi) dyt[pi * f + fi] = dy[fi * p + pi];
                    }
                    gemm_nn(cols.data(), dyt.data(), dwt.data(), ckk, p, f, true);
                }
                T* dw = wn->grad.data();
                for (std::size_t ck = 0; ck < ckk; ++ck) {
                    for (std::size_t fi = 0; fi < f; ++fi) dw[fi * ckk + ck] += dwt[ck * f + fi];
                }
            }
            // dX per image; images are disjoint so this parallelizes cleanly.
            parallel_for(n, n * f * ckk * p, [&](std::size_t lo, std::size_t hi) {
                std::vector<T> dcols(ckk * p);
                for (std::size_t img = lo; img < hi; ++img) {
                    gemm_tn(wn->value.data(), y.grad.data() + img * f * p, dcols.data(), ckk, f,
                            p);
                    detail::col2im(dcols.data(), c, h, wd, kh, kw, stride, pad, ho, wo,
                                   xn->grad.data() + img * c * h * wd);
                }
            });
        });
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t k, std::size_t stride) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 4, "maxpool2d expects NxCxHxW, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    check_dim(k >= 1 && k <= h && k <= w, "maxpool2d window " + std::to_string(k) +
                                              " larger than input " + shape_str(x.shape()));
    const std::size_t ho = (h - k) / stride + 1;
    const std::size_t wo = (w - k) / stride + 1;
    std::vector<T> out(n * c * ho * wo);
    auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
    const T* xv = x.value().data();
    parallel_for(n * c, n * c * ho * wo * k * k, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t plane = lo; plane < hi; ++plane) {
            const T* src = xv + plane * h * w;
            T* dst = out.data() + plane * ho * wo;
            std::uint32_t* am = argmax->data() + plane * ho * wo;
            for (std::size_t oi = 0; oi < ho; ++oi) {
                for (std::size_t oj = 0; oj < wo; ++oj) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::uint32_t best_idx = 0;
                    for (std::size_t ki = 0; ki < k; ++ki) {
                        for (std::size_t kj = 0; kj < k; ++kj) {
                            const std::size_t idx = (oi * stride + ki) * w + (oj * stride + kj);
                            if (src[idx] > best) {  // strict: first occurrence wins ties
                                best = src[idx];
                                best_idx = static_cast<std::uint32_t>(idx);
                            }
                        }
                    }
                    dst[oi * wo + oj] = best;
                    am[oi * wo + oj] = best_idx;
                }
            }
        }
    });
    Node* xn = x.node();
    return Tensor<T>::make_op({n, c, ho, wo}, std::move(out), {x},
                              [xn, argmax, n, c, h, w, ho, wo](const Node& y) {
                                  Tensor<T>::ensure_grad(*xn);
                                  for (std::size_t plane = 0; plane < n * c; ++plane) {
                                      const T* g = y.grad.data() + plane * ho * wo;
                                      const std::uint32_t* am = argmax->data() + plane * ho * wo;
                                      T* dx = xn->grad.data() + plane * h * w;
                                      for (std::size_t i = 0; i < ho * wo; ++i) dx[am[i]] += g[i];
                                  }
                              });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 4, "global_avg_pool expects NxCxHxW, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<T> out(n * c);
    const T* xv = x.value().data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        T s = T(0);
        const T* src = xv + plane * hw;
        for (std::size_t i = 0; i < hw; ++i) s += src[i];
        out[plane] = s / static_cast<T>(hw);
    }
    Node* xn = x.node();
    return Tensor<T>::make_op({n, c}, std::move(out), {x}, [xn, n, c, hw](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        const T inv = T(1) / static_cast<T>(hw);
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            const T g = y.grad[plane] * inv;
            T* dx = xn->grad.data() + plane * hw;
            for (std::size_t i = 0; i < hw; ++i) dx[i] += g;
        }
    });
}

// ---- elementwise ----

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> out(x.size());
    const T* xv = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
    Node* xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) {
            if (xn->value[i] > T(0)) xn->grad[i] += y.grad[i];  // subgradient at 0 is 0
        }
    });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    using Node = typename Tensor<T>::Node;
    check_dim(a.shape() == b.shape(), "add shape mismatch: " + shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [an, bn](const Node& y) {
        Tensor<T>::ensure_grad(*an);
        Tensor<T>::ensure_grad(*bn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) {
            an->grad[i] += y.grad[i];
            bn->grad[i] += y.grad[i];
        }
    });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    using Node = typename Tensor<T>::Node;
    check_dim(a.shape() == b.shape(), "mul shape mismatch: " + shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
    std::vector<T> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    Node* an = a.node();
    Node* bn = b.node();
    return Tensor<T>::make_op(a.shape(), std::move(out), {a, b}, [an, bn](const Node& y) {
        Tensor<T>::ensure_grad(*an);
        Tensor<T>::ensure_grad(*bn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) {
            an->grad[i] += y.grad[i] * bn->value[i];
            bn->grad[i] += y.grad[i] * an->value[i];
        }
    });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * c;
    Node* xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn, c](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) xn->grad[i] += y.grad[i] * c;
    });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + c;
    Node* xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) xn->grad[i] += y.grad[i];
    });
}

template <typename T>
Tensor<T> sub_scalar(const Tensor<T>& x, T c) {
    return add_scalar(x, -c);
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
    Node* xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) xn->grad[i] += y.grad[i] * y.value[i];
    });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(x.value()[i] > T(0))) {
            throw DomainError("log of non-positive value " + std::to_string(x.value()[i]) +
                              " at flat index " + std::to_string(i));
        }
        out[i] = std::log(x.value()[i]);
    }
    Node* xn = x.node();
    return Tensor<T>::make_op(x.shape(), std::move(out), {x}, [xn](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < y.grad.size(); ++i) xn->grad[i] += y.grad[i] / xn->value[i];
    });
}

// ---- normalization, reductions, indexing ----

// Rowwise division by max(||row||, eps); rows at or above eps come out unit norm.
template <typename T>
Tensor<T> l2_normalize(const Tensor<T>& x, T eps) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 2, "l2_normalize expects NxD, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<T> out(n * d);
    auto norms = std::make_shared<std::vector<T>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = x.value().data() + i * d;
        T ss = T(0);
        for (std::size_t j = 0; j < d; ++j) ss += row[j] * row[j];
        const T r = std::max(std::sqrt(ss), eps);
        (*norms)[i] = r;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = row[j] / r;
    }
    Node* xn = x.node();
    return Tensor<T>::make_op({n, d}, std::move(out), {x}, [xn, norms, n, d, eps](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < n; ++i) {
            const T* g = y.grad.data() + i * d;
            const T* yv = y.value.data() + i * d;
            const T r = (*norms)[i];
            T* dx = xn->grad.data() + i * d;
            if (r > eps) {
                T dot = T(0);
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * yv[j];
                for (std::size_t j = 0; j < d; ++j) dx[j] += (g[j] - yv[j] * dot) / r;
            } else {
                // Below the guard the map is a constant scale by 1/eps.
                for (std::size_t j = 0; j < d; ++j) dx[j] += g[j] / eps;
            }
        }
    });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    using Node = typename Tensor<T>::Node;
    T s = T(0);
    for (T v : x.value()) s += v;
    Node* xn = x.node();
    return Tensor<T>::make_op(Shape{}, {s}, {x}, [xn](const Node& y) {
        const T g = y.grad[0];
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
}

// Sum with addends accumulated in ascending value order: bitwise invariant
// under any permutation of the input. Gradient identical to sum().
template <typename T>
Tensor<T> sum_value_sorted(const Tensor<T>& x) {
    using Node = typename Tensor<T>::Node;
    std::vector<T> sorted = x.value();
    std::sort(sorted.begin(), sorted.end());
    T s = T(0);
    for (T v : sorted) s += v;
    Node* xn = x.node();
    return Tensor<T>::make_op(Shape{}, {s}, {x}, [xn](const Node& y) {
        const T g = y.grad[0];
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
}

// Rowwise log-sum-exp over entries where mask != 0, with max subtraction.
// mask is a constant (no gradient), same extent as x. The exp terms are
// summed in ascending value order, which makes the result invariant under
// permutations of the unmasked entries, bit for bit.
template <typename T>
Tensor<T> row_logsumexp_masked(const Tensor<T>& x, const std::vector<T>& mask) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 2, "row_logsumexp_masked expects a matrix");
    const std::size_t n = x.dim(0), d = x.dim(1);
    check_dim(mask.size() == n * d, "mask size mismatch");
    std::vector<T> out(n);
    std::vector<T> terms;
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = x.value().data() + i * d;
        const T* mrow = mask.data() + i * d;
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < d; ++j) {
            if (mrow[j] != T(0) && row[j] > m) m = row[j];
        }
        check_dim(std::isfinite(m),
                  "row_logsumexp_masked: row " + std::to_string(i) + " has no unmasked entries");
        terms.clear();
        for (std::size_t j = 0; j < d; ++j) {
            if (mrow[j] != T(0)) terms.push_back(std::exp(row[j] - m));
        }
        std::sort(terms.begin(), terms.end());
        T s = T(0);
        for (T t : terms) s += t;
        out[i] = m + std::log(s);
    }
    Node* xn = x.node();
    auto mk = std::make_shared<std::vector<T>>(mask);
    return Tensor<T>::make_op({n}, std::move(out), {x}, [xn, mk, n, d](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < n; ++i) {
            const T lse = y.value[i];
            const T g = y.grad[i];
            const T* row = xn->value.data() + i * d;
            const T* mrow = mk->data() + i * d;
            T* dx = xn->grad.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) {
                if (mrow[j] != T(0)) dx[j] += g * std::exp(row[j] - lse);
            }
        }
    });
}

// y[k] = x[rows[k], cols[k]].
template <typename T>
Tensor<T> select_entries(const Tensor<T>& x, std::vector<std::size_t> rows,
                         std::vector<std::size_t> cols) {
    using Node = typename Tensor<T>::Node;
    check_dim(x.rank() == 2, "select_entries expects a matrix");
    check_dim(rows.size() == cols.size(), "select_entries index length mismatch");
    const std::size_t d = x.dim(1);
    std::vector<T> out(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        check_dim(rows[k] < x.dim(0) && cols[k] < d, "select_entries index out of range");
        out[k] = x.value()[rows[k] * d + cols[k]];
    }
    Node* xn = x.node();
    auto rk = std::make_shared<std::vector<std::size_t>>(std::move(rows));
    auto ck = std::make_shared<std::vector<std::size_t>>(std::move(cols));
    const std::size_t len = out.size();
    return Tensor<T>::make_op({len}, std::move(out), {x}, [xn, rk, ck, d](const Node& y) {
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t k = 0; k < y.grad.size(); ++k) {
            xn->grad[(*rk)[k] * d + (*ck)[k]] += y.grad[k];
        }
    });
}

// ---- classification losses ----

// Mean softmax cross-entropy over the batch; labels are class indices.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
    using Node = typename Tensor<T>::Node;
    check_dim(logits.rank() == 2, "softmax_cross_entropy expects NxC logits");
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    check_dim(labels.size() == n, "label count mismatch");
    auto probs = std::make_shared<std::vector<T>>(n * c);
    T loss = T(0);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.value().data() + i * c;
        check_dim(labels[i] < c, "label " + std::to_string(labels[i]) + " out of range");
        T m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
        const T lse = m + std::log(s);
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] = std::exp(row[j] - lse);
        loss += lse - row[labels[i]];
    }
    loss /= static_cast<T>(n);
    Node* xn = logits.node();
    auto lk = std::make_shared<std::vector<std::size_t>>(labels);
    return Tensor<T>::make_op(Shape{}, {loss}, {logits}, [xn, probs, lk, n, c](const Node& y) {
        const T g = y.grad[0] / static_cast<T>(n);
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                T p = (*probs)[i * c + j];
                if (j == (*lk)[i]) p -= T(1);
                xn->grad[i * c + j] += g * p;
            }
        }
    });
}

// Mean per-entry sigmoid binary cross-entropy; targets in {0,1}.
template <typename T>
Tensor<T> sigmoid_bce(const Tensor<T>& logits, const std::vector<T>& targets) {
    using Node = typename Tensor<T>::Node;
    check_dim(logits.size() == targets.size(), "sigmoid_bce target size mismatch");
    const std::size_t total = logits.size();
    check_dim(total > 0, "sigmoid_bce on empty input");
    T loss = T(0);
    for (std::size_t i = 0; i < total; ++i) {
        const T x = logits.value()[i];
        // max(x,0) - x*y + log(1 + exp(-|x|))
        loss += std::max(x, T(0)) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<T>(total);
    Node* xn = logits.node();
    auto tk = std::make_shared<std::vector<T>>(targets);
    return Tensor<T>::make_op(Shape{}, {loss}, {logits}, [xn, tk, total](const Node& y) {
        const T g = y.grad[0] / static_cast<T>(total);
        Tensor<T>::ensure_grad(*xn);
        for (std::size_t i = 0; i < total; ++i) {
            const T x = xn->value[i];
            const T sig = T(1) / (T(1) + std::exp(-x));
            xn->grad[i] += g * (sig - (*tk)[i]);
        }
    });
}

// Forward-only softmax rows, for inference.
template <typename T>
std::vector<T> softmax_rows(const std::vector<T>& logits, std::size_t n, std::size_t c) {
    std::vector<T> out(n * c);
    for (std::size_t i = 0; i < n; ++i) {
        const T* row = logits.data() + i * c;
        T m = row[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
        T s = T(0);
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = std::exp(row[j] - m) / s;
    }
    return out;
}

template <typename T>
std::vector<T> sigmoid_rows(const std::vector<T>& logits) {
    std::vector<T> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-logits[i]));
    return out;
}

}  // namespace micle
