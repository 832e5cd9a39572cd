// Copyright 2026 The diffplan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DIFFPLAN_CORE_HPP_
#define DIFFPLAN_CORE_HPP_

#include <ceres/jet.h>

#include <Eigen/Core>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace diffplan {

using Vec2 = Eigen::Vector2d;

template <typename S>
using VectorX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input document (syntax or wrong field type).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Well-formed input that violates a semantic invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Failure inside the Gauss-Newton solve.
class SolveError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Scalar abstraction. Everything numeric that must be differentiated through
// the solver is templated on S, which is either double or a ceres::Jet.

inline double value_of(double x) { return x; }

template <int N>
inline double value_of(const ceres::Jet<double, N>& x) {
  return x.a;
}

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, kTwoPi);
  if (a <= 0.0) a += kTwoPi;
  return a - std::numbers::pi;
}

/// 2-D cross product (z component).
inline double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

/// Decision index helpers: maneuver alpha in {-1, 0, 1} maps to column alpha + 1.
inline constexpr int kManeuvers = 3;
inline constexpr int maneuver_index(int alpha) { return alpha + 1; }
inline constexpr int maneuver_of(int index) { return index - 1; }

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write results
/// by index, so output order does not depend on scheduling.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace diffplan

#endif  // DIFFPLAN_CORE_HPP_
