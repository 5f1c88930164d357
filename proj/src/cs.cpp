#include "flim/cs.hpp"

#include <algorithm>
#include <bit>
#include <numeric>

#include "flim/error.hpp"
#include "flim/random.hpp"

namespace flim {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Sign changes of x -> (-1)^popcount(row & x) over x = 0..side-1.
int sequency_1d(int row, int side) {
  int changes = 0;
  int prev = std::popcount(static_cast<unsigned>(row & 0)) & 1;
  for (int x = 1; x < side; ++x) {
    const int cur = std::popcount(static_cast<unsigned>(row & x)) & 1;
    changes += cur != prev;
    prev = cur;
  }
  return changes;
}

}  // namespace

PatternSet hadamard_patterns(int side, int n_patterns, std::uint64_t seed, PatternSelection selection) {
  require(is_power_of_two(side), "pattern side must be a power of two");
  const int n = side * side;
  require(n_patterns >= 1 && n_patterns <= n, "n_patterns must lie in [1, side^2]");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (selection == PatternSelection::kLowSequency) {
    std::vector<int> seq(n);
    for (int r = 0; r < n; ++r) seq[r] = sequency_1d(r % side, side) + sequency_1d(r / side, side);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return seq[a] < seq[b]; });
  } else {
    CounterRng rng(seed, 0x686164ULL);
    for (int i = n - 1; i > 1; --i) std::swap(order[i], order[1 + rng.below(static_cast<std::uint64_t>(i))]);
  }

  PatternSet set;
  set.side = side;
  set.rows.assign(order.begin(), order.begin() + n_patterns);
  set.matrix.resize(n_patterns, n);
  for (int k = 0; k < n_patterns; ++k) {
    const unsigned row = static_cast<unsigned>(set.rows[k]);
    for (int j = 0; j < n; ++j) set.matrix(k, j) = (std::popcount(row & static_cast<unsigned>(j)) & 1) ? 0.0 : 1.0;
  }
  return set;
}

CsMeasurement cs_forward(const FlimCube& cube, const PatternSet& patterns) {
  require(cube.pixels() == patterns.n_pixels(), "cube pixel count does not match the pattern length");
  return {patterns.side, cube.grid, patterns.matrix * cube.counts.transpose()};
}

CsReconstruction cs_invert(const CsMeasurement& meas, const PatternSet& patterns, double ridge,
                           bool clamp_negative) {
  require(ridge >= 0.0, "ridge must be non-negative");
  require(meas.values.rows() == patterns.n_patterns() && meas.values.cols() == meas.grid.n_bins,
          "measurement shape does not match the pattern set");
  require(meas.side == patterns.side, "measurement side does not match the pattern set");
  const int n = patterns.n_pixels();
  if (ridge == 0.0 && patterns.n_patterns() < n) {
    fail(ErrorKind::kRankDeficient, "pattern set is underdetermined; use ridge > 0");
  }
  Matrix normal = patterns.matrix.transpose() * patterns.matrix;
  normal.diagonal().array() += ridge;
  const Eigen::LLT<Matrix> llt(normal);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::kRankDeficient, "normal equations are not positive definite; use ridge > 0");
  }
  const Matrix x = llt.solve(patterns.matrix.transpose() * meas.values);  // pixels x bins

  CsReconstruction out{FlimCube(patterns.side, patterns.side, meas.grid, x.transpose()), 0.0};
  if (clamp_negative) {
    const Eigen::Index negative = (out.stack.counts.array() < 0.0).count();
    out.clamp_fraction = static_cast<double>(negative) / static_cast<double>(out.stack.counts.size());
    out.stack.counts = out.stack.counts.cwiseMax(0.0);
  }
  return out;
}

LifetimeImage cs_lifetime(const FlimCube& stack, CsLifetimeMethod method, const Irf& irf,
                          const BatchOptions& options) {
  require((stack.counts.array() >= 0.0).all(), "time-gated stack must be non-negative");
  return batch_fit(stack, irf, 1, method == CsLifetimeMethod::kLsm ? FitMethod::kLsm : FitMethod::kGate,
                   options);
}

}  // namespace flim
