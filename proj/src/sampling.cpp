#include "mbproj/sampling.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "mbproj/error.hpp"

namespace mbproj {

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

void check_disjoint(const IndexBlocks& blocks, const char* who) {
  if (blocks.empty()) throw ConfigError(fmt::format("{} sampler needs at least one block", who));
  std::set<ConstraintIndex> seen;
  for (const auto& block : blocks) {
    if (block.empty()) throw ConfigError(fmt::format("{} sampler has an empty block", who));
    for (ConstraintIndex w : block) {
      if (!seen.insert(w).second) {
        throw ConfigError(fmt::format("{} sampler blocks overlap at index {}", who, w));
      }
    }
  }
}

Marginal uniform_over(const std::vector<ConstraintIndex>& indices) {
  Marginal out;
  out.reserve(indices.size());
  const double p = 1.0 / static_cast<double>(indices.size());
  for (ConstraintIndex w : indices) out.emplace_back(w, p);
  return out;
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(seeded_engine(seed, stream)) {}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_index over an empty range");
  // 2^64 mod n; values below it would bias the modulo.
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = engine_();
    if (r >= threshold) return r % n;
  }
}

double Rng::uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (cached_normal_) {
    const double z = *cached_normal_;
    cached_normal_.reset();
    return z;
  }
  const double u1 = 1.0 - uniform01();  // (0, 1]
  const double u2 = uniform01();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(theta);
  return r * std::cos(theta);
}

Vector Rng::normal_vector(std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal();
  return v;
}

std::string to_string(Sampler::Kind kind) {
  switch (kind) {
    case Sampler::Kind::iid_uniform:
      return "iid";
    case Sampler::Kind::without_replacement:
      return "without-replacement";
    case Sampler::Kind::partition:
      return "partition";
    case Sampler::Kind::blocks:
      return "blocks";
    case Sampler::Kind::stratified:
      return "stratified";
    case Sampler::Kind::generator:
      return "generator";
  }
  return "?";
}

std::string Sampler::name() const { return to_string(kind_); }

Sampler Sampler::iid_uniform(std::size_t m, std::uint64_t seed) {
  if (m == 0) throw ConfigError("iid sampler over an empty index set");
  Sampler s(Kind::iid_uniform, seed);
  s.m_ = m;
  return s;
}

Sampler Sampler::without_replacement(std::size_t m, std::uint64_t seed) {
  if (m == 0) throw ConfigError("without-replacement sampler over an empty index set");
  Sampler s(Kind::without_replacement, seed);
  s.m_ = m;
  s.scratch_.resize(m);
  return s;
}

Sampler Sampler::partition(IndexBlocks blocks, std::uint64_t seed) {
  check_disjoint(blocks, "partition");
  Sampler s(Kind::partition, seed);
  for (const auto& b : blocks) s.m_ += b.size();
  s.blocks_ = std::move(blocks);
  return s;
}

Sampler Sampler::blocks(IndexBlocks blocks, std::uint64_t seed) {
  check_disjoint(blocks, "blocks");
  for (const auto& b : blocks) {
    if (b.size() != blocks.front().size()) {
      throw ConfigError("blocks sampler needs blocks of equal size");
    }
  }
  Sampler s(Kind::blocks, seed);
  for (const auto& b : blocks) s.m_ += b.size();
  s.blocks_ = std::move(blocks);
  return s;
}

Sampler Sampler::stratified(IndexBlocks blocks, std::vector<std::size_t> draws_per_block,
                            std::uint64_t seed) {
  check_disjoint(blocks, "stratified");
  if (draws_per_block.size() != blocks.size()) {
    throw ConfigError("stratified sampler needs one draw count per block");
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (draws_per_block[i] > blocks[i].size()) {
      throw ConfigError(fmt::format("stratified sampler: block {} has {} indices but {} draws", i,
                                    blocks[i].size(), draws_per_block[i]));
    }
  }
  Sampler s(Kind::stratified, seed);
  for (const auto& b : blocks) s.m_ += b.size();
  s.blocks_ = std::move(blocks);
  s.draws_per_block_ = std::move(draws_per_block);
  return s;
}

Sampler Sampler::generator(Generator gen, std::uint64_t seed) {
  if (!gen) throw ConfigError("generator sampler needs a generator");
  Sampler s(Kind::generator, seed);
  s.generator_ = std::move(gen);
  return s;
}

void Sampler::check_batch_size(std::size_t N) const {
  if (N == 0) throw ConfigError("minibatch size must be >= 1");
  switch (kind_) {
    case Kind::without_replacement:
      if (N > m_) {
        throw ConfigError(
            fmt::format("without-replacement sampler: N = {} exceeds m = {}", N, m_));
      }
      break;
    case Kind::partition:
      if (N != blocks_.size()) {
        throw ConfigError(fmt::format("partition sampler: N = {} but there are {} blocks", N,
                                      blocks_.size()));
      }
      break;
    case Kind::blocks:
      if (N != blocks_.front().size()) {
        throw ConfigError(fmt::format("blocks sampler: N = {} but blocks have size {}", N,
                                      blocks_.front().size()));
      }
      break;
    case Kind::stratified: {
      const std::size_t total =
          std::accumulate(draws_per_block_.begin(), draws_per_block_.end(), std::size_t{0});
      if (N != total) {
        throw ConfigError(
            fmt::format("stratified sampler: N = {} but the blocks draw {}", N, total));
      }
      break;
    }
    default:
      break;
  }
}

std::vector<ConstraintIndex> Sampler::draw_minibatch(std::size_t N) {
  check_batch_size(N);
  std::vector<ConstraintIndex> out;
  out.reserve(N);
  switch (kind_) {
    case Kind::iid_uniform:
      for (std::size_t i = 0; i < N; ++i) out.push_back(rng_.uniform_index(m_));
      break;
    case Kind::without_replacement:
      std::iota(scratch_.begin(), scratch_.end(), ConstraintIndex{0});
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t j = i + rng_.uniform_index(m_ - i);
        std::swap(scratch_[i], scratch_[j]);
        out.push_back(scratch_[i]);
      }
      break;
    case Kind::partition:
      for (const auto& block : blocks_) out.push_back(block[rng_.uniform_index(block.size())]);
      break;
    case Kind::blocks: {
      const auto& block = blocks_[rng_.uniform_index(blocks_.size())];
      out.assign(block.begin(), block.end());
      break;
    }
    case Kind::stratified:
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        scratch_ = blocks_[b];
        const std::size_t size = scratch_.size();
        for (std::size_t i = 0; i < draws_per_block_[b]; ++i) {
          const std::size_t j = i + rng_.uniform_index(size - i);
          std::swap(scratch_[i], scratch_[j]);
          out.push_back(scratch_[i]);
        }
      }
      break;
    case Kind::generator:
      for (std::size_t i = 0; i < N; ++i) out.push_back(generator_(rng_));
      break;
  }
  return out;
}

std::optional<std::vector<Marginal>> Sampler::draw_marginals(std::size_t N) const {
  check_batch_size(N);
  std::vector<Marginal> out;
  switch (kind_) {
    case Kind::iid_uniform:
    case Kind::without_replacement: {
      std::vector<ConstraintIndex> all(m_);
      std::iota(all.begin(), all.end(), ConstraintIndex{0});
      out.assign(N, uniform_over(all));
      break;
    }
    case Kind::partition:
      for (const auto& block : blocks_) out.push_back(uniform_over(block));
      break;
    case Kind::blocks:
      for (std::size_t i = 0; i < N; ++i) {
        std::vector<ConstraintIndex> position;
        for (const auto& block : blocks_) position.push_back(block[i]);
        out.push_back(uniform_over(position));
      }
      break;
    case Kind::stratified:
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        for (std::size_t i = 0; i < draws_per_block_[b]; ++i) {
          out.push_back(uniform_over(blocks_[b]));
        }
      }
      break;
    case Kind::generator:
      return std::nullopt;
  }
  return out;
}

IndexBlocks contiguous_blocks(std::size_t m, std::size_t count) {
  if (count == 0 || count > m) {
    throw ConfigError(fmt::format("cannot split {} indices into {} blocks", m, count));
  }
  IndexBlocks blocks(count);
  const std::size_t base = m / count;
  const std::size_t extra = m % count;
  ConstraintIndex next = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t size = base + (b < extra ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) blocks[b].push_back(next++);
  }
  return blocks;
}

}  // namespace mbproj
