#pragma once

#include <cstddef>
#include <string>

namespace otpel::kernels {

// Hot inner loops behind every tensor op. Each entry has a scalar reference
// implementation and SIMD variants selected once at process start.
//
// SIMD variants are required to be bit-identical to the scalar reference:
// they vectorize across independent output elements, keep each element's
// reduction order unchanged, and use separate mul/add (no FMA contraction).
// The equivalence suite compares variants bytewise on random inputs.
struct Kernels {
    const char* name;
    // y[i] += a * x[i]
    void (*axpy)(double* y, double a, const double* x, size_t n);
    // y[i] += (c - x[i])^2
    void (*accum_sqdiff)(double* y, double c, const double* x, size_t n);
    // out[i] = a[i] + b[i]
    void (*add)(double* out, const double* a, const double* b, size_t n);
    // out[i] = a[i] - b[i]
    void (*sub)(double* out, const double* a, const double* b, size_t n);
    // out[i] = a[i] * b[i]
    void (*mul)(double* out, const double* a, const double* b, size_t n);
    // out[i] = a[i] * c
    void (*scale)(double* out, const double* a, double c, size_t n);
    // out[i] += a[i] * c
    void (*add_scaled)(double* out, const double* a, double c, size_t n);
};

const Kernels& scalar();

// SIMD variant compiled for this architecture, or nullptr when the host CPU
// lacks the required features.
const Kernels* simd_variant();

// Active table. Resolution order: explicit select() call, then the
// OTPEL_KERNELS environment variable ("scalar", "avx2", "neon", "auto"),
// then auto-detection.
const Kernels& active();

// Force a variant by name ("auto" re-runs detection). Throws Err::config for
// unknown names or unavailable variants. Intended for tests and the CLI.
void select(const std::string& name);

} // namespace otpel::kernels
