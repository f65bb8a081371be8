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

/** \file geometry.hpp
 *  \brief Alignment geometry around a relevant document.
 *
 *  A sphere of radius eps is centred on the relevant document d+. The anchor is
 *  where the ray from d+ toward the rewritten query q' crosses that sphere, and
 *  the aligned area is the spherical cap of points whose centre-relative
 *  direction has cosine >= alpha with the anchor direction. The non-aligned
 *  area is the rest of the sphere.
 *
 *  cap_ratio_mc estimates the cap's share of the sphere by sampling and pairs
 *  it with the concentration bound exp(-dim * alpha^2 / 2).
 */

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qracdr/parallel.hpp"
#include "qracdr/vecspace.hpp"

namespace qracdr::geometry {

struct SphereSpec {
  Embedding center;
  double radius = 1.0;

  SphereSpec(Embedding c, double r) : center(std::move(c)), radius(r) {
    if (!(radius > 0.0) || !std::isfinite(radius)) {
      throw ValidationError("sphere radius must be positive, got " + std::to_string(radius));
    }
  }
};

struct AlignedAreaSpec {
  SphereSpec sphere;
  Embedding anchor_direction;  // unit, centre-relative
  double alpha = 0.0;

  AlignedAreaSpec(SphereSpec s, Embedding direction, double a)
      : sphere(std::move(s)), anchor_direction(std::move(direction)), alpha(a) {
    detail::require_same_dim(sphere.center.dim(), anchor_direction.dim(), "aligned area");
    if (std::abs(norm(anchor_direction) - 1.0) > 1e-12) {
      throw ValidationError("anchor direction must be a unit vector");
    }
    if (!(alpha >= 0.0 && alpha < 1.0)) {
      throw ValidationError("alpha must lie in [0, 1), got " + std::to_string(alpha));
    }
  }
};

/// Unit direction from the sphere centre toward the rewrite.
inline Embedding anchor_direction(const SphereSpec& sphere, const Embedding& rewrite) {
  const Embedding offset = rewrite - sphere.center;
  const double len = norm(offset);
  if (len == 0.0) {
    throw ValidationError("anchor: rewrite coincides with sphere centre; direction undefined");
  }
  return (1.0 / len) * offset;
}

/// Absolute anchor point center + radius * (q' - center) / |q' - center|.
inline Embedding anchor(const SphereSpec& sphere, const Embedding& rewrite) {
  const Embedding dir = anchor_direction(sphere, rewrite);
  Embedding out = sphere.center;
  axpy(sphere.radius, dir, out);
  return out;
}

/// Builds the aligned area whose cap is centred on the anchor toward `rewrite`.
inline AlignedAreaSpec aligned_area(const SphereSpec& sphere, const Embedding& rewrite, double alpha) {
  return AlignedAreaSpec(sphere, anchor_direction(sphere, rewrite), alpha);
}

inline constexpr double kOnSphereTolerance = 1e-6;

/// Membership in the aligned cap. Points at cosine exactly alpha are aligned.
inline bool is_aligned(const Embedding& x, const AlignedAreaSpec& area) {
  const Embedding offset = x - area.sphere.center;
  const double dist = norm(offset);
  if (std::abs(dist - area.sphere.radius) > kOnSphereTolerance * area.sphere.radius) {
    throw ValidationError("is_aligned: point is off the sphere (distance " + std::to_string(dist) +
                          ", radius " + std::to_string(area.sphere.radius) + ")");
  }
  return cosine(offset, area.anchor_direction) >= area.alpha;
}

/// Midpoint of rewrite and document.
inline Embedding compose_aligned(const Embedding& rewrite, const Embedding& doc) {
  detail::require_same_dim(rewrite.dim(), doc.dim(), "compose_aligned");
  Embedding out(rewrite.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = (rewrite[i] + doc[i]) / 2.0;
  return out;
}

/// Half difference of rewrite and document.
inline Embedding compose_non_aligned(const Embedding& rewrite, const Embedding& doc) {
  detail::require_same_dim(rewrite.dim(), doc.dim(), "compose_non_aligned");
  Embedding out(rewrite.dim());
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = (rewrite[i] - doc[i]) / 2.0;
  return out;
}

struct CapRatioEstimate {
  std::size_t dim = 0;
  double alpha = 0.0;
  std::size_t samples = 0;
  std::size_t hits = 0;
  double estimate = 0.0;
  double standard_error = 0.0;
  double theorem_bound = 0.0;

  bool within_bound(double num_stderr = 3.0) const {
    return estimate <= theorem_bound + num_stderr * standard_error;
  }
};

inline double cap_ratio_bound(std::size_t dim, double alpha) {
  return std::exp(-static_cast<double>(dim) * alpha * alpha / 2.0);
}

/// Samples drawn per RNG substream. The partition is fixed so the estimate is
/// independent of `threads`.
inline constexpr std::size_t kCapChunk = 8192;

/// Fraction of uniform unit-sphere samples whose cosine with a fixed anchor
/// direction (the first basis vector) is at least alpha. The radius plays no
/// role, so sampling is done on the unit sphere.
inline CapRatioEstimate cap_ratio_mc(std::size_t dim, double alpha, std::size_t samples,
                                     std::uint64_t seed, unsigned threads = 1) {
  if (dim < 2) throw ValidationError("cap_ratio_mc: dim must be >= 2");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ValidationError("cap_ratio_mc: alpha must lie in [0, 1)");
  if (samples < 1) throw ValidationError("cap_ratio_mc: samples must be >= 1");

  const std::size_t chunks = (samples + kCapChunk - 1) / kCapChunk;
  std::vector<std::size_t> hits(chunks, 0);
  const Rng root(seed);
  parallel_for(chunks, threads, [&](std::size_t c) {
    Rng rng = root.substream(c);
    const std::size_t lo = c * kCapChunk;
    const std::size_t hi = std::min(samples, lo + kCapChunk);
    std::vector<double> x(dim);
    std::size_t count = 0;
    for (std::size_t s = lo; s < hi; ++s) {
      double sq = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        x[i] = rng.normal();
        sq += x[i] * x[i];
      }
      if (sq == 0.0) continue;
      // cosine against e_1
      if (x[0] / std::sqrt(sq) >= alpha) ++count;
    }
    hits[c] = count;
  });

  CapRatioEstimate out;
  out.dim = dim;
  out.alpha = alpha;
  out.samples = samples;
  for (std::size_t h : hits) out.hits += h;
  const double n = static_cast<double>(samples);
  out.estimate = static_cast<double>(out.hits) / n;
  out.standard_error = std::sqrt(out.estimate * (1.0 - out.estimate) / n);
  out.theorem_bound = cap_ratio_bound(dim, alpha);
  return out;
}

}  // namespace qracdr::geometry
