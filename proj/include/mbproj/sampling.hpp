#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mbproj/oracle.hpp"

namespace mbproj {

/// Portable seeded generator.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Streams are split by seeding through std::seed_seq with the
/// words (seed_lo, seed_hi, stream_lo, stream_hi); seed_seq's mixing is also
/// fixed by the standard. Distributions are implemented here rather than
/// taken from <random>, whose algorithms differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on {0, ..., n-1}; n >= 1. Unbiased by rejection.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Uniform on [0, 1) with 53 random bits.
  double uniform01();
  /// Standard normal via Box-Muller (one value cached).
  double normal();
  Vector normal_vector(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> cached_normal_;
};

/// Well-known stream ids. A run with seed s draws minibatches from
/// Rng(s, kSamplerStream) and its random initial point from Rng(s, kInitStream).
inline constexpr std::uint64_t kSamplerStream = 1;
inline constexpr std::uint64_t kInitStream = 2;
inline constexpr std::uint64_t kBootstrapStream = 3;
inline constexpr std::uint64_t kProbeStream = 4;
inline constexpr std::uint64_t kGeneratorStream = 5;

using IndexBlocks = std::vector<std::vector<ConstraintIndex>>;

/// Law of one draw position: (index, probability) pairs summing to one.
using Marginal = std::vector<std::pair<ConstraintIndex, double>>;

/// Random selection of the minibatch indices.
///
///  - iid_uniform: each draw uniform over {0..m-1}, independent.
///  - without_replacement: N distinct indices, uniformly random subset order.
///  - partition: N disjoint blocks covering the index set; draw i is uniform
///    over block i.
///  - blocks: equal-size disjoint blocks; the whole minibatch is one block
///    chosen uniformly (the rule for which L_N is computed over blocks).
///  - stratified: each block contributes a fixed number of distinct draws
///    (partition of without-replacement samplers).
///  - generator: user-supplied index generator, for unbounded families.
class Sampler {
 public:
  enum class Kind { iid_uniform, without_replacement, partition, blocks, stratified, generator };
  using Generator = std::function<ConstraintIndex(Rng&)>;

  static Sampler iid_uniform(std::size_t m, std::uint64_t seed);
  static Sampler without_replacement(std::size_t m, std::uint64_t seed);
  static Sampler partition(IndexBlocks blocks, std::uint64_t seed);
  static Sampler blocks(IndexBlocks blocks, std::uint64_t seed);
  static Sampler stratified(IndexBlocks blocks, std::vector<std::size_t> draws_per_block,
                            std::uint64_t seed);
  static Sampler generator(Generator gen, std::uint64_t seed);

  Kind kind() const { return kind_; }
  std::string name() const;

  /// Throws ConfigError when N is not admissible for the variant.
  std::vector<ConstraintIndex> draw_minibatch(std::size_t N);

  /// Unconditional law of each of the N draw positions, when it is known in
  /// closed form (nullopt for generator samplers).
  std::optional<std::vector<Marginal>> draw_marginals(std::size_t N) const;

  /// Throws ConfigError if N cannot be drawn.
  void check_batch_size(std::size_t N) const;

 private:
  Sampler(Kind kind, std::uint64_t seed) : kind_(kind), rng_(seed, kSamplerStream) {}

  Kind kind_;
  Rng rng_;
  std::size_t m_ = 0;
  IndexBlocks blocks_;
  std::vector<std::size_t> draws_per_block_;
  Generator generator_;
  std::vector<ConstraintIndex> scratch_;
};

std::string to_string(Sampler::Kind kind);

/// Splits {0..m-1} into `count` contiguous blocks of (almost) equal size.
IndexBlocks contiguous_blocks(std::size_t m, std::size_t count);

}  // namespace mbproj
