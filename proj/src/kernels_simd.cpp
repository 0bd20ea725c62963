// SIMD kernel variants. Compiled with -mavx2 on x86-64; NEON is baseline on
// aarch64. Every loop mirrors the scalar reference exactly: lanes cover
// independent output elements, per-element operation order is unchanged, and
// mul/add stay separate so results match the scalar table bit for bit.

#include "otpel/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__)

#include <immintrin.h>

namespace otpel::kernels {
namespace {

void axpy_avx2(double* y, double a, const double* x, size_t n) {
    const __m256d va = _mm256_set1_pd(a);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        __m256d vx = _mm256_loadu_pd(x + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, vx));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void accum_sqdiff_avx2(double* y, double c, const double* x, size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vd = _mm256_sub_pd(vc, _mm256_loadu_pd(x + i));
        __m256d vy = _mm256_loadu_pd(y + i);
        _mm256_storeu_pd(y + i, _mm256_add_pd(vy, _mm256_mul_pd(vd, vd)));
    }
    for (; i < n; ++i) {
        double d = c - x[i];
        y[i] += d * d;
    }
}

void add_avx2(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_avx2(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_avx2(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_avx2(double* out, const double* a, double c, size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vc));
    for (; i < n; ++i) out[i] = a[i] * c;
}

void add_scaled_avx2(double* out, const double* a, double c, size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vo = _mm256_loadu_pd(out + i);
        vo = _mm256_add_pd(vo, _mm256_mul_pd(_mm256_loadu_pd(a + i), vc));
        _mm256_storeu_pd(out + i, vo);
    }
    for (; i < n; ++i) out[i] += a[i] * c;
}

const Kernels g_avx2 = {
    "avx2",     axpy_avx2, accum_sqdiff_avx2, add_avx2,
    sub_avx2,   mul_avx2,  scale_avx2,        add_scaled_avx2,
};

} // namespace

const Kernels* simd_variant() {
    return __builtin_cpu_supports("avx2") ? &g_avx2 : nullptr;
}

} // namespace otpel::kernels

#elif defined(__aarch64__)

#include <arm_neon.h>

namespace otpel::kernels {
namespace {

void axpy_neon(double* y, double a, const double* x, size_t n) {
    const float64x2_t va = vdupq_n_f64(a);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t vy = vld1q_f64(y + i);
        vy = vaddq_f64(vy, vmulq_f64(va, vld1q_f64(x + i)));
        vst1q_f64(y + i, vy);
    }
    for (; i < n; ++i) y[i] += a * x[i];
}

void accum_sqdiff_neon(double* y, double c, const double* x, size_t n) {
    const float64x2_t vc = vdupq_n_f64(c);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t vd = vsubq_f64(vc, vld1q_f64(x + i));
        float64x2_t vy = vld1q_f64(y + i);
        vst1q_f64(y + i, vaddq_f64(vy, vmulq_f64(vd, vd)));
    }
    for (; i < n; ++i) {
        double d = c - x[i];
        y[i] += d * d;
    }
}

void add_neon(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(double* out, const double* a, const double* b, size_t n) {
    size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_neon(double* out, const double* a, double c, size_t n) {
    const float64x2_t vc = vdupq_n_f64(c);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vc));
    for (; i < n; ++i) out[i] = a[i] * c;
}

void add_scaled_neon(double* out, const double* a, double c, size_t n) {
    const float64x2_t vc = vdupq_n_f64(c);
    size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        float64x2_t vo = vld1q_f64(out + i);
        vo = vaddq_f64(vo, vmulq_f64(vld1q_f64(a + i), vc));
        vst1q_f64(out + i, vo);
    }
    for (; i < n; ++i) out[i] += a[i] * c;
}

const Kernels g_neon = {
    "neon",     axpy_neon, accum_sqdiff_neon, add_neon,
    sub_neon,   mul_neon,  scale_neon,        add_scaled_neon,
};

} // namespace

const Kernels* simd_variant() { return &g_neon; }

} // namespace otpel::kernels

#else

namespace otpel::kernels {

const Kernels* simd_variant() { return nullptr; }

} // namespace otpel::kernels

#endif
