#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <random>
#include <vector>

namespace lcbias {

/// Pseudo-random stream with portable uniform and normal variates.
///
/// The generator is std::mt19937_64 (fully specified by the standard). The
/// conversions to uniform and normal variates are done here rather than with
/// the <random> distributions, whose algorithms are implementation defined,
/// so streams are bit-identical across standard libraries.
class Engine {
 public:
  explicit Engine(std::seed_seq& seq) : gen_(seq) {}
  explicit Engine(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by the Marsaglia polar method; the second variate of
  /// each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Hierarchical key naming an independent random substream.
///
/// A key is the root seed followed by a path of integers, e.g.
/// (seed, cell, replicate, step). Two keys with different paths give
/// unrelated streams; the same key always gives the same stream, regardless
/// of which thread asks for it.
class StreamKey {
 public:
  explicit StreamKey(std::uint64_t seed) : path_{seed} {}

  StreamKey child(std::uint64_t index) const {
    StreamKey k = *this;
    k.path_.push_back(index);
    return k;
  }

  StreamKey child(std::initializer_list<std::uint64_t> indices) const {
    StreamKey k = *this;
    k.path_.insert(k.path_.end(), indices.begin(), indices.end());
    return k;
  }

  Engine engine() const {
    std::vector<std::uint32_t> words;
    words.reserve(2 * path_.size() + 1);
    words.push_back(static_cast<std::uint32_t>(path_.size()));
    for (std::uint64_t p : path_) {
      words.push_back(static_cast<std::uint32_t>(p & 0xffffffffu));
      words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Engine(seq);
  }

  std::uint64_t seed() const { return path_.front(); }
  const std::vector<std::uint64_t>& path() const { return path_; }

  bool operator==(const StreamKey&) const = default;

 private:
  std::vector<std::uint64_t> path_;
};

}  // namespace lcbias
