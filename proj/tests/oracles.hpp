#pragma once

// Reference implementations used only by tests. They are written in the most
// direct way possible and share no code with the library kernels.

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// Row-major (m x k)(k x n).
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                  std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

struct ConvShape {
  std::size_t n, c, h, w, o, kh, kw, stride, pad, groups;
  std::size_t out_h() const { return (h + 2 * pad - kh) / stride + 1; }
  std::size_t out_w() const { return (w + 2 * pad - kw) / stride + 1; }
};

// Cross-correlation with zero padding, one output element at a time.
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& k, const ConvShape& s) {
  const std::size_t ho = s.out_h(), wo = s.out_w();
  const std::size_t cg = s.c / s.groups, og = s.o / s.groups;
  std::vector<double> y(s.n * s.o * ho * wo, 0.0);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < s.o; ++o)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          const std::size_t g = o / og;
          for (std::size_t ci = 0; ci < cg; ++ci)
            for (std::size_t ky = 0; ky < s.kh; ++ky)
              for (std::size_t kx = 0; kx < s.kw; ++kx) {
                const long iy = static_cast<long>(oy * s.stride + ky) - static_cast<long>(s.pad);
                const long ix = static_cast<long>(ox * s.stride + kx) - static_cast<long>(s.pad);
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) || ix >= static_cast<long>(s.w)) continue;
                const std::size_t c = g * cg + ci;
                acc += x[((n * s.c + c) * s.h + iy) * s.w + ix] * k[((o * cg + ci) * s.kh + ky) * s.kw + kx];
              }
          y[((n * s.o + o) * ho + oy) * wo + ox] = acc;
        }
  return y;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double silu(double v) { return v * sigmoid(v); }

inline std::vector<double> softmax(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = x > mx ? x : mx;
  double total = 0;
  for (double x : v) total += std::exp(x - mx);
  std::vector<double> out;
  for (double x : v) out.push_back(std::exp(x - mx) / total);
  return out;
}

// Fraction of (positive, negative) pairs ranked correctly, ties counted 1/2.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      pairs += 1;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace oracle
