#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace sublm {

/// Seeded RNG with explicit integer->real mappings. std::mt19937_64 has a
/// portable bit stream, but the std distributions do not, so every mapping
/// used anywhere in the toolkit lives here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0,1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0,n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::mt19937_64 gen_;
};

std::uint64_t fnv1a(std::string_view data);
std::uint64_t fnv1a(std::span<const std::uint8_t> data);

/// Derives a named sub-seed from a root seed, so one --seed flag can fan out
/// to independent streams (init, masks, split, sampling, ...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view role);

// ---- UTF-8 <-> UTF-32 ----------------------------------------------------

/// Decodes UTF-8; throws std::invalid_argument on malformed input.
std::u32string utf8_to_u32(std::string_view s);
std::string u32_to_utf8(std::u32string_view s);
void append_utf8(std::string& out, char32_t cp);

inline bool is_ascii_space(char32_t c) {
  return c == U' ' || c == U'\t' || c == U'\n' || c == U'\r' || c == U'\f' ||
         c == U'\v';
}

// ---- formatting / parsing ------------------------------------------------

/// Round-trip exact decimal rendering of a double (%.17g).
std::string format_double(double v);

std::vector<std::string> split(std::string_view s, char sep);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace sublm
