// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace fairjudge {

// Seeded 64-bit generator with portable derived draws. The standard
// distributions are implementation-defined, so uniform/normal/below are
// computed here from raw engine output; checkpoints stay reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  // Independent stream for (seed, index); used for per-sample and
  // per-prompt streams so work can be reordered without changing results.
  static Rng stream(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next();
  double uniform();  // [0, 1)
  double normal();   // standard normal, Box-Muller
  std::size_t below(std::size_t n);  // uniform integer in [0, n)
  bool bernoulli(double p);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::string state() const;
  void restore(const std::string& state);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a, used for config fingerprints.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hex64(std::uint64_t value);

}  // namespace fairjudge
