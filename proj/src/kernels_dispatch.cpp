#include "uld/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "uld/error.hpp"

namespace uld::kern {

#if defined(__x86_64__) || defined(_M_X64)
const Kernels* avx2_kernels_impl();  // defined in kernels_avx2.cpp when compiled in
#endif
#if defined(__aarch64__) && defined(__ARM_NEON)
const Kernels* neon_kernels_impl();
#endif

namespace {

const Kernels* best_supported() {
#if defined(__x86_64__) || defined(_M_X64)
#if defined(ULD_HAVE_AVX2_TU)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return avx2_kernels_impl();
    }
#endif
#endif
#if defined(__aarch64__) && defined(__ARM_NEON)
    return neon_kernels_impl();
#endif
    return &scalar_kernels();
}

std::atomic<const Kernels*> g_active{nullptr};

const Kernels* initial_choice() {
    if (const char* env = std::getenv("ULD_KERNELS")) {
        if (const Kernels* k = find(env)) return k;
        // Unknown or unsupported name in the environment falls back silently;
        // set_active() is the strict path.
    }
    return best_supported();
}

}  // namespace

const Kernels* find(std::string_view name) {
    if (name == "scalar") return &scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
#if defined(ULD_HAVE_AVX2_TU)
    if (name == "avx2" && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        return avx2_kernels_impl();
    }
#endif
#endif
#if defined(__aarch64__) && defined(__ARM_NEON)
    if (name == "neon") return neon_kernels_impl();
#endif
    return nullptr;
}

const Kernels& active() {
    const Kernels* k = g_active.load(std::memory_order_acquire);
    if (!k) {
        k = initial_choice();
        g_active.store(k, std::memory_order_release);
    }
    return *k;
}

const Kernels& set_active(std::string_view name) {
    const Kernels& prev = active();
    const Kernels* k = find(name);
    if (!k) throw std::invalid_argument("unknown or unsupported kernel backend: " + std::string(name));
    g_active.store(k, std::memory_order_release);
    return prev;
}

}  // namespace uld::kern
