#pragma once

// Words over {0..m-1}, compositions f^n_w = f_{w_{n-1}} o ... o f_{w_0}, and
// the derivative cocycle accumulated as Q * exp(diag(logR)) * U * Q0^T with
// U unit upper triangular. Letters are 0-based in code and files.

#include "ifscert/error.hpp"
#include "ifscert/geometry.hpp"
#include "ifscert/linalg.hpp"
#include "ifscert/maps.hpp"
#include "ifscert/rng.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace ifscert {

class IfsSpec {
 public:
  explicit IfsSpec(std::vector<Diffeo> maps) : maps_(std::move(maps)) {
    require(!maps_.empty(), ErrorCode::InvalidSpec, "an IFS needs at least one map");
    manifold_ = maps_.front().manifold();
    for (const auto& f : maps_) {
      require(f.manifold() == manifold_, ErrorCode::InvalidSpec, "IFS maps live on different manifolds");
      inverses_.push_back(f.inverse());
    }
  }

  std::size_t size() const { return maps_.size(); }
  const ManifoldSpec& manifold() const { return manifold_; }
  const Diffeo& map(std::size_t i) const { return maps_.at(i); }
  const Diffeo& inverse_map(std::size_t i) const { return inverses_.at(i); }
  const std::vector<Diffeo>& maps() const { return maps_; }

  /// True when every map has an x-independent frame differential on a torus.
  bool is_linear_toral() const {
    for (const auto& f : maps_)
      if (!f.is_linear_toral()) return false;
    return true;
  }

 private:
  std::vector<Diffeo> maps_;
  std::vector<Diffeo> inverses_;
  ManifoldSpec manifold_;
};

/// Uniform Bernoulli measure on words, with a seed for counter-based sampling.
struct WordDistribution {
  std::uint64_t m = 1;
  std::uint64_t seed = 0;
};

struct Word {
  std::vector<std::uint32_t> letters;
  /// Index in `letters` of position 0 for two-sided use.
  std::int64_t offset = 0;

  std::size_t size() const { return letters.size(); }

  /// Letter at two-sided position p.
  std::uint32_t at(std::int64_t p) const {
    const std::int64_t i = p + offset;
    require(i >= 0 && i < static_cast<std::int64_t>(letters.size()), ErrorCode::WordTooShort,
            "word does not cover position " + std::to_string(p));
    return letters[static_cast<std::size_t>(i)];
  }

  bool covers(std::int64_t first, std::int64_t last_exclusive) const {
    return first + offset >= 0 && last_exclusive + offset <= static_cast<std::int64_t>(letters.size());
  }
};

/// Letters are a pure function of (seed, stream, position).
inline Word sample_word(const WordDistribution& dist, std::size_t n, std::uint64_t stream) {
  require(dist.m >= 1, ErrorCode::InvalidSpec, "word distribution needs m >= 1");
  Word w;
  w.letters.resize(n);
  RandomStream rng(dist.seed, stream);
  for (auto& letter : w.letters) letter = static_cast<std::uint32_t>(rng.uniform_index(dist.m));
  return w;
}

class CocycleProduct {
 public:
  /// Starts the product at the identity with entry frame Q0 (orthogonal).
  explicit CocycleProduct(const Matrix& entry_frame)
      : entry_(entry_frame),
        q_(entry_frame),
        log_r_(Vector::Zero(entry_frame.cols())),
        unit_r_(Matrix::Identity(entry_frame.cols(), entry_frame.cols())) {}

  static CocycleProduct identity(int d) { return CocycleProduct(Matrix::Identity(d, d)); }

  int dim() const { return static_cast<int>(q_.rows()); }
  int length() const { return length_; }
  const Matrix& entry_frame() const { return entry_; }
  const Matrix& q() const { return q_; }
  const Vector& log_r() const { return log_r_; }
  const Matrix& unit_r() const { return unit_r_; }

  /// Left-multiplies the represented product by `step`.
  void push(const Matrix& step) {
    const linalg::QrFactors qr = linalg::qr_positive(step * q_);
    const Eigen::Index d = qr.r.rows();
    Vector step_log(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double rii = qr.r(i, i);
      require(rii > 0.0 && std::isfinite(rii), ErrorCode::RankCollapse, "cocycle step lost rank");
      step_log(i) = std::log(rii);
    }
    // R_step * D * U = D_step * D * (D^-1 U_step D) * U, with U_step = D_step^-1 R_step.
    Matrix conj = Matrix::Identity(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      for (Eigen::Index j = i + 1; j < d; ++j) {
        const double u = qr.r(i, j) / qr.r(i, i);
        if (u != 0.0) conj(i, j) = u * std::exp(log_r_(j) - log_r_(i));
      }
    unit_r_ = (conj * unit_r_).triangularView<Eigen::UnitUpper>();
    log_r_ += step_log;
    q_ = qr.q;
    ++length_;
  }

  /// Dense product Q exp(diag(logR)) U Q0^T. Overflows for long products.
  Matrix reconstruct() const {
    return q_ * log_r_.array().exp().matrix().asDiagonal() * unit_r_ * entry_.transpose();
  }

  /// log inf_{u in U(E)} |Df u| with E = span of the first k entry-frame columns.
  double log_tangential_contraction(int k) const {
    if (k == 1) return log_r_(0);
    // sigma_min(D1 U11) = 1 / sigma_max(U11^-1 D1^-1)
    const Vector neg = -log_r_.head(k);
    const double shift = neg.maxCoeff();
    const Matrix u_inv = unit_r_.topLeftCorner(k, k).triangularView<Eigen::UnitUpper>().solve(Matrix::Identity(k, k));
    const Matrix scaled = u_inv * (neg.array() - shift).exp().matrix().asDiagonal();
    return -(shift + std::log(linalg::op_norm(scaled)));
  }

  /// log sup_{v in U(E^perp)} |P_{(Df E)^perp} Df v| for the same split.
  double log_transverse_growth(int k) const {
    const int rest = dim() - k;
    if (rest == 1) return log_r_(k);
    const Vector lr = log_r_.tail(rest);
    const double shift = lr.maxCoeff();
    const Matrix scaled = (lr.array() - shift).exp().matrix().asDiagonal() * unit_r_.bottomRightCorner(rest, rest);
    return shift + std::log(linalg::op_norm(scaled));
  }

 private:
  Matrix entry_;
  Matrix q_;
  Vector log_r_;
  Matrix unit_r_;
  int length_ = 0;
};

struct Composition {
  std::vector<Point> trajectory;  // trajectory[k] = f^k_w(x), k = 0..n
  CocycleProduct cocycle;
};

/// Applies the first n letters of w starting at x; the cocycle starts at `entry_frame`.
inline Composition compose(const IfsSpec& ifs, const Word& w, const Point& x, std::size_t n,
                           const Matrix& entry_frame) {
  require(n <= w.size(), ErrorCode::WordTooShort, "word shorter than requested length");
  Composition out{{x}, CocycleProduct(entry_frame)};
  out.trajectory.reserve(n + 1);
  Point y = x;
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint32_t letter = w.letters[k];
    require(letter < ifs.size(), ErrorCode::InvalidSpec, "letter outside the alphabet");
    y = ifs.map(letter).for_each_factor(y, [&](const Matrix& step) { out.cocycle.push(step); });
    out.trajectory.push_back(y);
  }
  return out;
}

inline Composition compose(const IfsSpec& ifs, const Word& w, const Point& x) {
  return compose(ifs, w, x, w.size(), Matrix::Identity(ifs.manifold().dim, ifs.manifold().dim));
}

enum class Direction { Forward, Backward };

/// Forward: f_{w_{k+j-1}} o ... o f_{w_k}. Backward: f^-1_{w_{k-j}} o ... o f^-1_{w_{k-1}}.
inline Composition two_sided_compose(const IfsSpec& ifs, const Word& w, std::int64_t k, std::int64_t j,
                                     const Point& x, Direction direction) {
  require(j >= 0, ErrorCode::InvalidSpec, "two-sided composition needs j >= 0");
  const int d = ifs.manifold().dim;
  Composition out{{x}, CocycleProduct::identity(d)};
  if (direction == Direction::Forward) {
    require(w.covers(k, k + j), ErrorCode::WordTooShort, "word does not cover [k, k+j)");
  } else {
    require(w.covers(k - j, k), ErrorCode::WordTooShort, "word does not cover [k-j, k)");
  }
  Point y = x;
  for (std::int64_t s = 0; s < j; ++s) {
    const std::int64_t pos = direction == Direction::Forward ? k + s : k - 1 - s;
    const std::uint32_t letter = w.at(pos);
    require(letter < ifs.size(), ErrorCode::InvalidSpec, "letter outside the alphabet");
    const Diffeo& f = direction == Direction::Forward ? ifs.map(letter) : ifs.inverse_map(letter);
    y = f.for_each_factor(y, [&](const Matrix& step) { out.cocycle.push(step); });
    out.trajectory.push_back(y);
  }
  return out;
}

}  // namespace ifscert
