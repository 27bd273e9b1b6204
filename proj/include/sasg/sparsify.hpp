#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sasg/vecmath.hpp"

namespace sasg {

/// A top-k message: strictly increasing indices into a vector of length dim.
template <typename Scalar>
struct SparseUpdate {
  Index dim = 0;
  std::vector<Index> indices;
  std::vector<Scalar> values;

  Index k() const { return static_cast<Index>(indices.size()); }
  bool operator==(const SparseUpdate&) const = default;
};

/// Keeps the k entries of largest magnitude. Equal magnitudes are resolved in
/// favour of the lower index, so the result is a function of x alone.
template <typename Derived>
SparseUpdate<typename Derived::Scalar> top_k(const Eigen::MatrixBase<Derived>& x, Index k) {
  using Scalar = typename Derived::Scalar;
  const Index d = x.size();
  if (k < 1 || k > d) {
    throw std::invalid_argument("top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
  }
  SparseUpdate<Scalar> out;
  out.dim = d;
  out.indices.reserve(static_cast<std::size_t>(k));
  out.values.reserve(static_cast<std::size_t>(k));

  if (k == d) {
    for (Index i = 0; i < d; ++i) {
      out.indices.push_back(i);
      out.values.push_back(x[i]);
    }
    return out;
  }

  // Candidate set: every index whose magnitude reaches a lower bound on the
  // k-th largest. Long vectors get the bound from a strided sample; when the
  // sample guess leaves fewer than k candidates we fall back to all of x.
  std::vector<Index> cand;
  if (d >= 16384) {
    constexpr Index kSample = 4096;
    const Index stride = d / kSample;
    std::vector<Scalar> sample(static_cast<std::size_t>(kSample));
    for (Index j = 0; j < kSample; ++j) sample[static_cast<std::size_t>(j)] = std::abs(x[j * stride]);
    const double rank = static_cast<double>(k) * static_cast<double>(kSample) / static_cast<double>(d);
    const Index slack = static_cast<Index>(rank + 4.0 * std::sqrt(rank) + 16.0);
    if (slack < kSample) {
      auto pos = sample.begin() + slack;
      std::nth_element(sample.begin(), pos, sample.end(), std::greater<Scalar>());
      const Scalar bound = *pos;
      cand.reserve(static_cast<std::size_t>(2 * (slack + 1) * stride));
      for (Index i = 0; i < d; ++i) {
        if (std::abs(x[i]) >= bound) cand.push_back(i);
      }
      if (static_cast<Index>(cand.size()) < k) cand.clear();
    }
  }
  if (cand.empty()) {
    cand.resize(static_cast<std::size_t>(d));
    for (Index i = 0; i < d; ++i) cand[static_cast<std::size_t>(i)] = i;
  }

  // Magnitude of the k-th largest entry, then one ordered scan: everything
  // strictly above the threshold, plus the lowest-index ties to fill up to k.
  std::vector<Scalar> mags(cand.size());
  for (std::size_t j = 0; j < cand.size(); ++j) mags[j] = std::abs(x[cand[j]]);
  auto kth = mags.begin() + (k - 1);
  std::nth_element(mags.begin(), kth, mags.end(), std::greater<Scalar>());
  const Scalar threshold = *kth;

  Index above = 0;
  for (Index i : cand) {
    if (std::abs(x[i]) > threshold) ++above;
  }
  Index ties_left = k - above;
  for (Index i : cand) {
    const Scalar m = std::abs(x[i]);
    if (m > threshold || (m == threshold && ties_left > 0)) {
      if (m == threshold) --ties_left;
      out.indices.push_back(i);
      out.values.push_back(x[i]);
    }
  }
  return out;
}

template <typename Scalar>
Vector<Scalar> densify(const SparseUpdate<Scalar>& u) {
  Vector<Scalar> out = Vector<Scalar>::Zero(u.dim);
  for (std::size_t j = 0; j < u.indices.size(); ++j) out[u.indices[j]] = u.values[j];
  return out;
}

/// acc += densify(u), touching only the stored coordinates. Adding an exact
/// zero leaves a double unchanged, so this matches the dense sum bitwise.
template <typename Scalar>
void accumulate(const SparseUpdate<Scalar>& u, Vector<Scalar>& acc) {
  detail::require_same_size(u.dim, acc.size(), "accumulate");
  for (std::size_t j = 0; j < u.indices.size(); ++j) acc[u.indices[j]] += u.values[j];
}

/// delta = k/d; T_k then satisfies ||T_k(x) - x||^2 <= (1 - delta)||x||^2.
inline double compressor_delta(Index k, Index d) {
  if (k < 1 || k > d) throw std::invalid_argument("compressor_delta: need 1 <= k <= d");
  return static_cast<double>(k) / static_cast<double>(d);
}

/// k = max(1, round(fraction * d)), clamped to d.
inline Index k_from_fraction(double fraction, Index d) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("k_fraction must lie in (0, 1]");
  }
  const auto k = static_cast<Index>(std::llround(fraction * static_cast<double>(d)));
  return std::clamp<Index>(k, 1, d);
}

template <typename Scalar>
bool is_well_formed(const SparseUpdate<Scalar>& u) {
  if (u.indices.size() != u.values.size() || u.k() > u.dim) return false;
  for (std::size_t j = 0; j < u.indices.size(); ++j) {
    if (u.indices[j] < 0 || u.indices[j] >= u.dim) return false;
    if (j > 0 && u.indices[j] <= u.indices[j - 1]) return false;
    if (!std::isfinite(u.values[j])) return false;
  }
  return true;
}

template <typename Scalar>
void to_json(nlohmann::json& j, const SparseUpdate<Scalar>& u) {
  j = nlohmann::json{{"dim", u.dim}, {"k", u.k()}, {"indices", u.indices}, {"values", u.values}};
}

template <typename Scalar>
void from_json(const nlohmann::json& j, SparseUpdate<Scalar>& u) {
  j.at("dim").get_to(u.dim);
  j.at("indices").get_to(u.indices);
  j.at("values").get_to(u.values);
  if (!is_well_formed(u)) throw std::invalid_argument("SparseUpdate: malformed JSON payload");
}

}  // namespace sasg
