#include <algorithm>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "lorahe/ringcore.hpp"

namespace lorahe {

namespace {

#if defined(__AVX512F__) && defined(__AVX512DQ__)
#define LORAHE_HAVE_AVX512_WRAP 1
#endif
#if defined(__AVX512F__) && defined(__AVX512IFMA__)
#define LORAHE_HAVE_AVX512_IFMA 1
#endif

// Low52 accumulates only the low 52 bits of each product; callers mask the
// result to at most 52 bits, where both modes agree.
enum class Accum { kWrap64, kLow52 };

constexpr std::size_t kPanel = 16;   // columns per packed B panel
constexpr std::size_t kDepth = 256;  // k-block

void scalar_rows(const IntMatrix& a, const IntMatrix& b, IntMatrix& c, std::size_t r0,
                 std::size_t r1, std::size_t c0) {
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  for (std::size_t k0 = 0; k0 < k_dim; k0 += kDepth) {
    const std::size_t k1 = std::min(k_dim, k0 + kDepth);
    for (std::size_t i = r0; i < r1; ++i) {
      uint64_t* out = c.row(i).data();
      const uint64_t* arow = a.row(i).data();
      for (std::size_t k = k0; k < k1; ++k) {
        const uint64_t av = arow[k];
        if (av == 0) continue;
        const uint64_t* brow = b.row(k).data();
        for (std::size_t j = c0; j < n; ++j) out[j] += av * brow[j];
      }
    }
  }
}

#if defined(LORAHE_HAVE_AVX512_WRAP) || defined(LORAHE_HAVE_AVX512_IFMA)

template <Accum kMode>
inline __m512i fma_lane(__m512i acc, __m512i a, __m512i b) {
#if defined(LORAHE_HAVE_AVX512_IFMA)
  if constexpr (kMode == Accum::kLow52) {
    return _mm512_madd52lo_epu64(acc, a, b);
  }
#endif
  return _mm512_add_epi64(acc, _mm512_mullo_epi64(a, b));
}

template <Accum kMode, int kRows>
void micro_kernel(const uint64_t* const* arows, std::size_t k0, std::size_t depth,
                  const uint64_t* pack, uint64_t* const* crows, std::size_t j) {
  __m512i acc[kRows][2];
  for (int r = 0; r < kRows; ++r) {
    acc[r][0] = _mm512_loadu_si512(crows[r] + j);
    acc[r][1] = _mm512_loadu_si512(crows[r] + j + 8);
  }
  for (std::size_t k = 0; k < depth; ++k) {
    const __m512i b0 = _mm512_loadu_si512(pack + k * kPanel);
    const __m512i b1 = _mm512_loadu_si512(pack + k * kPanel + 8);
    for (int r = 0; r < kRows; ++r) {
      const __m512i av = _mm512_set1_epi64(static_cast<long long>(arows[r][k0 + k]));
      acc[r][0] = fma_lane<kMode>(acc[r][0], av, b0);
      acc[r][1] = fma_lane<kMode>(acc[r][1], av, b1);
    }
  }
  for (int r = 0; r < kRows; ++r) {
    _mm512_storeu_si512(crows[r] + j, acc[r][0]);
    _mm512_storeu_si512(crows[r] + j + 8, acc[r][1]);
  }
}

template <Accum kMode>
void simd_rows(const IntMatrix& a, const IntMatrix& b, IntMatrix& c, std::size_t r0,
               std::size_t r1) {
  const std::size_t k_dim = a.cols();
  const std::size_t n = b.cols();
  const std::size_t n_panels = n / kPanel;
  std::vector<uint64_t> pack(kDepth * kPanel);
  const uint64_t* arows[8];
  uint64_t* crows[8];
  for (std::size_t p = 0; p < n_panels; ++p) {
    const std::size_t j = p * kPanel;
    for (std::size_t k0 = 0; k0 < k_dim; k0 += kDepth) {
      const std::size_t depth = std::min(kDepth, k_dim - k0);
      for (std::size_t k = 0; k < depth; ++k) {
        const uint64_t* src = b.row(k0 + k).data() + j;
        std::copy(src, src + kPanel, pack.data() + k * kPanel);
      }
      std::size_t i = r0;
      for (; i + 8 <= r1; i += 8) {
        for (int r = 0; r < 8; ++r) {
          arows[r] = a.row(i + r).data();
          crows[r] = c.row(i + r).data();
        }
        micro_kernel<kMode, 8>(arows, k0, depth, pack.data(), crows, j);
      }
      for (; i < r1; ++i) {
        arows[0] = a.row(i).data();
        crows[0] = c.row(i).data();
        micro_kernel<kMode, 1>(arows, k0, depth, pack.data(), crows, j);
      }
    }
  }
  if (n_panels * kPanel < n) {
    scalar_rows(a, b, c, r0, r1, n_panels * kPanel);
  }
}

#endif

bool simd_supported(Accum mode) {
  if (mode == Accum::kLow52) {
#if defined(LORAHE_HAVE_AVX512_IFMA)
    return true;
#else
    return false;
#endif
  }
#if defined(LORAHE_HAVE_AVX512_WRAP)
  return true;
#else
  return false;
#endif
}

void gemm_rows(Accum mode, bool simd, const IntMatrix& a, const IntMatrix& b, IntMatrix& c,
               std::size_t r0, std::size_t r1) {
#if defined(LORAHE_HAVE_AVX512_IFMA)
  if (simd && mode == Accum::kLow52) {
    simd_rows<Accum::kLow52>(a, b, c, r0, r1);
    return;
  }
#endif
#if defined(LORAHE_HAVE_AVX512_WRAP)
  if (simd) {
    simd_rows<Accum::kWrap64>(a, b, c, r0, r1);
    return;
  }
#endif
  (void)mode;
  (void)simd;
  scalar_rows(a, b, c, r0, r1, 0);
}

IntMatrix gemm(Accum mode, const IntMatrix& a, const IntMatrix& b, MatmulOptions opts) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("int_matmul: shape mismatch (" + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + ") * (" + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()) + ")");
  }
  IntMatrix c(a.rows(), b.cols());
  if (a.rows() == 0 || b.cols() == 0 || a.cols() == 0) return c;

  const bool simd = opts.allow_simd && simd_supported(mode);
  unsigned threads = opts.threads != 0 ? opts.threads : std::max(1u, std::thread::hardware_concurrency());
  // Below ~8 rows per worker the split costs more than it saves.
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(1, a.rows() / 8)));
  if (threads <= 1) {
    gemm_rows(mode, simd, a, b, c, 0, a.rows());
    return c;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (a.rows() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t r0 = t * chunk;
      const std::size_t r1 = std::min(a.rows(), r0 + chunk);
      if (r0 >= r1) break;
      pool.emplace_back([&, r0, r1] { gemm_rows(mode, simd, a, b, c, r0, r1); });
    }
  }
  return c;
}

}  // namespace

IntMatrix int_matmul(const IntMatrix& a, const IntMatrix& b, MatmulOptions opts) {
  return gemm(Accum::kWrap64, a, b, opts);
}

IntMatrix int_matmul_mod(const IntMatrix& a, const IntMatrix& b, int bits, MatmulOptions opts) {
  if (bits < 1 || bits > 64) {
    throw std::invalid_argument("int_matmul_mod: bits must lie in [1, 64]");
  }
  IntMatrix c = gemm(bits <= 52 ? Accum::kLow52 : Accum::kWrap64, a, b, opts);
  const uint64_t m = modulus_mask(bits);
  for (auto& v : c.data()) v &= m;
  return c;
}

bool matmul_simd_available() noexcept {
#if defined(LORAHE_HAVE_AVX512_WRAP) || defined(LORAHE_HAVE_AVX512_IFMA)
  return true;
#else
  return false;
#endif
}

}  // namespace lorahe
