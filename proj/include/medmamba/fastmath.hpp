#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

namespace medmamba {

// Branch-free polynomial expf for the f32 runtime path. Relative error is
// a few ulps of float, i.e. at the precision of the type itself; the f64
// verification path keeps libm exp. Vectorizes under -O3.
inline float fast_expf(float x) {
    x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
    const float kLog2e = 1.442695041f;
    const float kLn2Hi = 0.693145752f;
    const float kLn2Lo = 1.42860677e-6f;
    float kf = x * kLog2e;
    kf = kf < 0 ? kf - 0.5f : kf + 0.5f;
    const int32_t k = static_cast<int32_t>(kf);
    const float r = (x - k * kLn2Hi) - k * kLn2Lo;
    // degree-6 minimax polynomial for exp(r) on [-ln2/2, ln2/2]
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    int32_t bits;
    std::memcpy(&bits, &p, sizeof(bits));
    bits += k << 23;
    float out;
    std::memcpy(&out, &bits, sizeof(out));
    return out;
}

template <typename R>
inline R exp_rt(R x) {
    return std::exp(x);
}

template <>
inline float exp_rt<float>(float x) {
    return fast_expf(x);
}

}  // namespace medmamba
