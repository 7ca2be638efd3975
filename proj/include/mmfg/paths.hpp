/*
 Copyright 2026 The mmfg Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mmfg {

enum class Exec { serial, parallel };

// Philox4x32-10 block: 128-bit counter, 64-bit key.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) noexcept;

// Address of one variate. Every (seed, path, step, channel, stream) maps to an
// independent draw, so generation order and worker count never matter.
struct DrawKey {
  std::uint64_t seed = 0;
  std::uint32_t path = 0;
  std::uint32_t step = 0;
  std::uint32_t channel = 0;  // class index, or a tagged auxiliary channel
  std::uint32_t stream = 0;   // e.g. training iteration
};

double uniform_open(const DrawKey& key) noexcept;     // in (0, 1)
double standard_normal(const DrawKey& key) noexcept;  // Box-Muller on one block

// Channel tags above the class range.
inline constexpr std::uint32_t kInitialWealthStep = 0xffffffffu;
inline constexpr std::uint32_t kExitChannel = 0x10000u;
inline constexpr std::uint32_t kInitChannel = 0x20000u;  // network initialization

struct PathBatch {
  std::size_t n_paths = 0;
  std::size_t n_steps = 0;
  std::size_t H = 0;
  double dt = 0.0;
  std::uint64_t seed = 0;
  std::uint32_t stream = 0;
  std::vector<double> dW;  // [path][step][class]

  double operator()(std::size_t path, std::size_t step, std::size_t h) const noexcept {
    return dW[(path * n_steps + step) * H + h];
  }
  std::span<const double> row(std::size_t path, std::size_t step) const noexcept {
    return {dW.data() + (path * n_steps + step) * H, H};
  }
};

PathBatch brownian_increments(std::size_t n_paths, std::size_t n_steps, std::size_t H,
                              std::uint64_t seed, double horizon = 1.0, std::uint32_t stream = 0,
                              Exec exec = Exec::parallel);

// Draws xi ~ Normal(mean, var) per (path, class); var = 0 is deterministic.
std::vector<double> initial_wealth(std::size_t n_paths, std::span<const double> mean,
                                   std::span<const double> var, std::uint64_t seed,
                                   std::uint32_t stream = 0);

// next = state + drift*dt + diffusion*dW componentwise; throws NonFiniteState.
void euler_step(std::span<const double> state, std::span<const double> drift,
                std::span<const double> diffusion, std::span<const double> dW, double dt,
                std::span<double> next, std::size_t step_index = 0);

// 16-byte header {u8 magic, u8 H, u16 n_steps, u32 n_paths, u64 seed}, then
// dt, stream and the increments, all little-endian.
void write_path_batch(const std::filesystem::path& path, const PathBatch& batch);
PathBatch read_path_batch(const std::filesystem::path& path);

}  // namespace mmfg
