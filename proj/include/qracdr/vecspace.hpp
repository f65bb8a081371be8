/*
 * Copyright 2026 The qracdr Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

/** \file vecspace.hpp
 *  \brief Fixed-dimension embeddings and the numeric kernels shared by every
 *  other header: dot products, distances, cosine, seeded sampling.
 *
 *  All arithmetic is double precision. Randomized operations take an explicit
 *  Rng; there is no global generator.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qracdr/errors.hpp"

namespace qracdr {

/// Dense point in the shared query/document representation space.
///
/// The length is fixed at construction and every entry is finite. Mutable
/// element access exists for kernels that build vectors in place; callers that
/// write through it are responsible for keeping entries finite.
class Embedding {
 public:
  Embedding() = default;

  explicit Embedding(std::size_t dim) : values_(dim, 0.0) {}

  explicit Embedding(std::vector<double> values) : values_(std::move(values)) { check_finite(); }

  Embedding(std::initializer_list<double> values) : values_(values) { check_finite(); }

  explicit Embedding(std::span<const double> values) : values_(values.begin(), values.end()) {
    check_finite();
  }

  std::size_t dim() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> mutable_values() noexcept { return values_; }
  const std::vector<double>& vector() const noexcept { return values_; }

  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  /// Throws ValidationError on the first non-finite entry.
  void check_finite() const {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw ValidationError("embedding entry " + std::to_string(i) + " is not finite");
      }
    }
  }

  friend bool operator==(const Embedding& a, const Embedding& b) = default;

 private:
  std::vector<double> values_;
};

/// Dimension of the representation space and the master seed.
struct SpaceConfig {
  std::size_t dim = 64;
  std::uint64_t seed = 42;

  void validate() const {
    if (dim < 2) throw ValidationError("space dimension must be >= 2, got " + std::to_string(dim));
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded generator passed by reference through every randomized operation.
/// substream(k) derives an independent generator for partition k, so work can
/// be split across threads without the result depending on the thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  double normal() { return normal_(engine_); }

  /// Uniform in [0, 1).
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }

  /// Uniform integer in [lo, hi].
  std::size_t between(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(engine_);
  }

  Rng substream(std::uint64_t index) const {
    return Rng(splitmix64(seed_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

namespace detail {

inline void require_same_dim(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ValidationError(std::string(op) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
  }
}

/// Left-to-right accumulation. Every score in the library goes through this
/// loop so recomputed values match bit for bit.
inline double dot_unchecked(std::span<const double> a, std::span<const double> b) noexcept {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  detail::require_same_dim(a.size(), b.size(), "dot");
  return detail::dot_unchecked(a, b);
}

inline double dot(const Embedding& a, const Embedding& b) { return dot(a.values(), b.values()); }

inline double squared_norm(const Embedding& a) { return detail::dot_unchecked(a.values(), a.values()); }

inline double norm(const Embedding& a) { return std::sqrt(squared_norm(a)); }

inline double l2_distance_sq(std::span<const double> a, std::span<const double> b) {
  detail::require_same_dim(a.size(), b.size(), "l2_distance_sq");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return sum;
}

inline double l2_distance_sq(const Embedding& a, const Embedding& b) {
  return l2_distance_sq(a.values(), b.values());
}

/// Cosine similarity clamped to [-1, 1].
inline double cosine(const Embedding& a, const Embedding& b) {
  detail::require_same_dim(a.dim(), b.dim(), "cosine");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0) throw ValidationError("cosine: first argument has zero norm");
  if (nb == 0.0) throw ValidationError("cosine: second argument has zero norm");
  return std::clamp(detail::dot_unchecked(a.values(), b.values()) / (na * nb), -1.0, 1.0);
}

inline Embedding operator+(const Embedding& a, const Embedding& b) {
  detail::require_same_dim(a.dim(), b.dim(), "add");
  Embedding out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] + b[i];
  return out;
}

inline Embedding operator-(const Embedding& a, const Embedding& b) {
  detail::require_same_dim(a.dim(), b.dim(), "subtract");
  Embedding out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = a[i] - b[i];
  return out;
}

inline Embedding operator*(double s, const Embedding& a) {
  Embedding out(a.dim());
  for (std::size_t i = 0; i < a.dim(); ++i) out[i] = s * a[i];
  return out;
}

/// y += alpha * x
inline void axpy(double alpha, const Embedding& x, Embedding& y) {
  detail::require_same_dim(x.dim(), y.dim(), "axpy");
  for (std::size_t i = 0; i < x.dim(); ++i) y[i] += alpha * x[i];
}

inline Embedding normalized(const Embedding& a) {
  const double n = norm(a);
  if (n == 0.0) throw ValidationError("normalize: zero-norm vector");
  return (1.0 / n) * a;
}

/// Standard Gaussian vector.
inline Embedding gaussian(std::size_t dim, Rng& rng) {
  Embedding out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = rng.normal();
  return out;
}

/// Uniform direction on the unit sphere (normalized Gaussian).
inline Embedding random_unit(std::size_t dim, Rng& rng) {
  for (;;) {
    Embedding g = gaussian(dim, rng);
    const double n = norm(g);
    if (n > 0.0) return (1.0 / n) * g;
  }
}

/// Uniform point on the sphere of the given radius around center.
inline Embedding sample_on_sphere(const Embedding& center, double radius, Rng& rng) {
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw ValidationError("sample_on_sphere: radius must be positive and finite");
  }
  const Embedding u = random_unit(center.dim(), rng);
  Embedding out(center.dim());
  for (std::size_t i = 0; i < center.dim(); ++i) out[i] = center[i] + radius * u[i];
  return out;
}

}  // namespace qracdr
