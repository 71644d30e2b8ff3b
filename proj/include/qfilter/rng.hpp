// Copyright 2026 The qfilter Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Counter-based random numbers (Philox4x32-10). A stream is addressed by
// (master seed, stream index, step index, draw index), so any draw of any
// trajectory can be regenerated without replaying the others.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace qfilter::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t &hi, std::uint32_t &lo) {
    const std::uint64_t p = std::uint64_t(a) * std::uint64_t(b);
    hi = std::uint32_t(p >> 32);
    lo = std::uint32_t(p);
}

inline Counter round(const Counter &c, const Key &k) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace detail

inline Counter philox4x32_10(Counter ctr, Key key) {
    ctr = detail::round(ctr, key);
    for (int r = 1; r < 10; ++r) {
        key[0] += detail::kWeyl0;
        key[1] += detail::kWeyl1;
        ctr = detail::round(ctr, key);
    }
    return ctr;
}

/// Uniform double in the open interval (0, 1) on the 2^-52 lattice offset
/// by half a step, so neither endpoint is reachable.
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = (std::uint64_t(hi) << 32) | lo;
    return (double(bits >> 12) + 0.5) * 0x1.0p-52;
}

class Stream {
  public:
    Stream() = default;
    Stream(std::uint64_t master_seed, std::uint64_t index)
        : key_{std::uint32_t(master_seed), std::uint32_t(master_seed >> 32)},
          index_(index) {}

    std::uint64_t seed() const { return (std::uint64_t(key_[1]) << 32) | key_[0]; }
    std::uint64_t index() const { return index_; }
    std::uint32_t step() const { return step_; }

    /// Moves to the draw sequence of `step`; draws restart at zero.
    void set_step(std::uint32_t step) {
        step_ = step;
        block_ = 0;
        available_ = 0;
        has_spare_normal_ = false;
    }

    double uniform() {
        if (available_ == 0) refill();
        const int at = 4 - available_;
        available_ -= 2;
        return to_open_unit(buffer_[at], buffer_[at + 1]);
    }

    double normal() {
        if (has_spare_normal_) {
            has_spare_normal_ = false;
            return spare_normal_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double phase = 2.0 * std::numbers::pi * u2;
        spare_normal_ = r * std::sin(phase);
        has_spare_normal_ = true;
        return r * std::cos(phase);
    }

  private:
    void refill() {
        buffer_ = philox4x32_10({block_, step_, std::uint32_t(index_), std::uint32_t(index_ >> 32)}, key_);
        ++block_;
        available_ = 4;
    }

    Key key_{0, 0};
    std::uint64_t index_ = 0;
    std::uint32_t step_ = 0;
    std::uint32_t block_ = 0;
    Counter buffer_{};
    int available_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_normal_ = false;
};

}  // namespace qfilter::rng
