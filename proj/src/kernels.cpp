#include "otpel/kernels.hpp"

#include "otpel/error.hpp"

#include <cstdlib>
#include <mutex>

namespace otpel::kernels {

namespace {

void axpy_scalar(double* y, double a, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void accum_sqdiff_scalar(double* y, double c, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        double d = c - x[i];
        y[i] += d * d;
    }
}

void add_scalar(double* out, const double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(double* out, const double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(double* out, const double* a, const double* b, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(double* out, const double* a, double c, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

void add_scaled_scalar(double* out, const double* a, double c, size_t n) {
    for (size_t i = 0; i < n; ++i) out[i] += a[i] * c;
}

const Kernels g_scalar = {
    "scalar",        axpy_scalar, accum_sqdiff_scalar, add_scalar,
    sub_scalar,      mul_scalar,  scale_scalar,        add_scaled_scalar,
};

const Kernels* g_active = nullptr;
std::mutex g_mutex;

const Kernels* detect() {
    if (const Kernels* simd = simd_variant()) return simd;
    return &g_scalar;
}

const Kernels* resolve_from_env() {
    const char* env = std::getenv("OTPEL_KERNELS");
    if (env == nullptr || std::string(env) == "auto") return detect();
    std::string want(env);
    if (want == "scalar") return &g_scalar;
    const Kernels* simd = simd_variant();
    if (simd != nullptr && want == simd->name) return simd;
    fail(Err::config, "OTPEL_KERNELS=" + want + " is not available on this host");
}

} // namespace

const Kernels& scalar() { return g_scalar; }

const Kernels& active() {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (g_active == nullptr) g_active = resolve_from_env();
    return *g_active;
}

void select(const std::string& name) {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (name == "auto") {
        g_active = detect();
        return;
    }
    if (name == "scalar") {
        g_active = &g_scalar;
        return;
    }
    const Kernels* simd = simd_variant();
    if (simd != nullptr && name == simd->name) {
        g_active = simd;
        return;
    }
    fail(Err::config, "unknown or unavailable kernel variant '" + name +
                          "' (valid: scalar, " + std::string(simd ? simd->name : "auto") + ")");
}

} // namespace otpel::kernels
