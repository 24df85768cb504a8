// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace empath {

using Index = Eigen::Index;

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matd = Mat<double>;
using Vecd = Vec<double>;
using RowVecd = RowVec<double>;

/// Error raised for violated preconditions and malformed inputs (exit code 1 territory).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

/// Error raised for runtime failures: I/O, non-finite losses, broken files (exit code 2).
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

inline bool all_finite(const Matd& m) { return m.allFinite(); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

/// Replaces ill-formed UTF-8 sequences with U+FFFD so byte-level model output
/// can be carried in JSON documents.
inline std::string sanitize_utf8(const std::string& in) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    const unsigned char c = static_cast<unsigned char>(in[i]);
    std::size_t len = 0;
    if (c < 0x80) len = 1;
    else if ((c & 0xe0) == 0xc0 && c >= 0xc2) len = 2;
    else if ((c & 0xf0) == 0xe0) len = 3;
    else if ((c & 0xf8) == 0xf0 && c <= 0xf4) len = 4;
    bool ok = len > 0 && i + len <= in.size();
    for (std::size_t k = 1; ok && k < len; ++k)
      ok = (static_cast<unsigned char>(in[i + k]) & 0xc0) == 0x80;
    if (ok && len == 3 && c == 0xe0 && static_cast<unsigned char>(in[i + 1]) < 0xa0) ok = false;
    if (ok && len == 3 && c == 0xed && static_cast<unsigned char>(in[i + 1]) > 0x9f) ok = false;
    if (ok && len == 4 && c == 0xf0 && static_cast<unsigned char>(in[i + 1]) < 0x90) ok = false;
    if (ok && len == 4 && c == 0xf4 && static_cast<unsigned char>(in[i + 1]) > 0x8f) ok = false;
    if (ok) {
      out.append(in, i, len);
      i += len;
    } else {
      out += "\xef\xbf\xbd";
      ++i;
    }
  }
  return out;
}

/// Deterministic RNG wrapper. One instance per reproducible component, seeded explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }
  std::uint64_t integer(std::uint64_t n) {  // in [0, n)
    std::uniform_int_distribution<std::uint64_t> d(0, n - 1);
    return d(engine_);
  }
  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Glorot-style scaled uniform fill, the recorded-seed initialization used project-wide.
inline void scaled_uniform_fill(Matd& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
}

inline void uniform_fill(Matd& m, Rng& rng, double a) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-a, a);
}

}  // namespace empath
