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
#include "mmfg/paths.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

#include "mmfg/error.hpp"

namespace mmfg {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u, kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u, kWeyl1 = 0xBB67AE85u;
constexpr std::uint8_t kBatchMagic = 0xB5;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

std::array<std::uint32_t, 4> block(const DrawKey& k) {
  return philox4x32({k.path, k.step, k.channel, k.stream},
                    {static_cast<std::uint32_t>(k.seed), static_cast<std::uint32_t>(k.seed >> 32)});
}

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error(Errc::io_failure, "truncated path batch file");
  return v;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> c,
                                        std::array<std::uint32_t, 2> k) noexcept {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
    k[0] += kWeyl0;
    k[1] += kWeyl1;
  }
  return c;
}

double uniform_open(const DrawKey& key) noexcept {
  const auto b = block(key);
  return to_open_unit(b[0], b[1]);
}

double standard_normal(const DrawKey& key) noexcept {
  const auto b = block(key);
  const double u1 = to_open_unit(b[0], b[1]);
  const double u2 = to_open_unit(b[2], b[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

PathBatch brownian_increments(std::size_t n_paths, std::size_t n_steps, std::size_t H,
                              std::uint64_t seed, double horizon, std::uint32_t stream, Exec exec) {
  if (n_paths == 0 || n_steps == 0 || H == 0)
    throw Error(Errc::invalid_config, "path batch dimensions must be positive");
  PathBatch b;
  b.n_paths = n_paths;
  b.n_steps = n_steps;
  b.H = H;
  b.dt = horizon / static_cast<double>(n_steps);
  b.seed = seed;
  b.stream = stream;
  b.dW.resize(n_paths * n_steps * H);
  const double scale = std::sqrt(b.dt);
  const auto np = static_cast<long long>(n_paths);
  auto fill = [&](long long p) {
    double* out = b.dW.data() + static_cast<std::size_t>(p) * n_steps * H;
    for (std::size_t i = 0; i < n_steps; ++i)
      for (std::size_t h = 0; h < H; ++h)
        *out++ = scale * standard_normal({seed, static_cast<std::uint32_t>(p),
                                          static_cast<std::uint32_t>(i),
                                          static_cast<std::uint32_t>(h), stream});
  };
  if (exec == Exec::parallel) {
#pragma omp parallel for schedule(static)
    for (long long p = 0; p < np; ++p) fill(p);
  } else {
    for (long long p = 0; p < np; ++p) fill(p);
  }
  return b;
}

std::vector<double> initial_wealth(std::size_t n_paths, std::span<const double> mean,
                                   std::span<const double> var, std::uint64_t seed,
                                   std::uint32_t stream) {
  const std::size_t H = mean.size();
  std::vector<double> xi(n_paths * H);
  for (std::size_t p = 0; p < n_paths; ++p)
    for (std::size_t h = 0; h < H; ++h) {
      double v = mean[h];
      if (var[h] > 0.0)
        v += std::sqrt(var[h]) * standard_normal({seed, static_cast<std::uint32_t>(p),
                                                  kInitialWealthStep,
                                                  static_cast<std::uint32_t>(h), stream});
      xi[p * H + h] = v;
    }
  return xi;
}

void euler_step(std::span<const double> state, std::span<const double> drift,
                std::span<const double> diffusion, std::span<const double> dW, double dt,
                std::span<double> next, std::size_t step_index) {
  for (std::size_t k = 0; k < state.size(); ++k) {
    next[k] = state[k] + drift[k] * dt + diffusion[k] * dW[k];
    if (!std::isfinite(next[k])) {
      std::ostringstream os;
      os << "component " << k << " at step " << step_index;
      throw Error(Errc::non_finite_state, os.str());
    }
  }
}

void write_path_batch(const std::filesystem::path& path, const PathBatch& b) {
  if (b.H > 0xff || b.n_steps > 0xffff || b.n_paths > 0xffffffffu)
    throw Error(Errc::io_failure, "path batch too large for the dump header");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string());
  put<std::uint8_t>(out, kBatchMagic);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(b.H));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(b.n_steps));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(b.n_paths));
  put<std::uint64_t>(out, b.seed);
  put<double>(out, b.dt);
  put<std::uint32_t>(out, b.stream);
  out.write(reinterpret_cast<const char*>(b.dW.data()),
            static_cast<std::streamsize>(b.dW.size() * sizeof(double)));
  if (!out) throw Error(Errc::io_failure, "write failed for " + path.string());
}

PathBatch read_path_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  if (get<std::uint8_t>(in) != kBatchMagic) throw Error(Errc::io_failure, "not a path batch file");
  PathBatch b;
  b.H = get<std::uint8_t>(in);
  b.n_steps = get<std::uint16_t>(in);
  b.n_paths = get<std::uint32_t>(in);
  b.seed = get<std::uint64_t>(in);
  b.dt = get<double>(in);
  b.stream = get<std::uint32_t>(in);
  b.dW.resize(b.n_paths * b.n_steps * b.H);
  in.read(reinterpret_cast<char*>(b.dW.data()),
          static_cast<std::streamsize>(b.dW.size() * sizeof(double)));
  if (!in) throw Error(Errc::io_failure, "truncated path batch file");
  return b;
}

}  // namespace mmfg
