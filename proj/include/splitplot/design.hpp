#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "splitplot/errors.hpp"
#include "splitplot/rng.hpp"

namespace splitplot {

// Subplot arm sizes of one whole plot: M_w units in total, m_b1 of them at
// factor-B level 1.
struct PlotSize {
  int size = 0;
  int b1_size = 0;
  int b0_size() const { return size - b1_size; }
};

// Raw description of a 2x2 split-plot design: W whole plots, w1 of them at
// factor-A level 1, with per-plot subplot arm sizes.
struct DesignSpec {
  int w1 = 0;
  std::vector<PlotSize> plots;
};

// Design with all derived quantities precomputed. Construct via
// validate_design.
class ValidatedDesign {
 public:
  int whole_plots() const { return static_cast<int>(plots_.size()); }
  int arm_count(int a) const { return a == 1 ? w1_ : whole_plots() - w1_; }
  int units() const { return units_; }
  const std::vector<PlotSize>& plots() const { return plots_; }
  const PlotSize& plot(int w) const { return plots_[w]; }

  double arm_prob(int a) const {
    return static_cast<double>(arm_count(a)) / whole_plots();
  }
  double subplot_prob(int w, int b) const {
    const PlotSize& p = plots_[w];
    return static_cast<double>(b == 1 ? p.b1_size : p.b0_size()) / p.size;
  }
  // Per-unit treatment probability p_a * q_wb.
  double unit_prob(int w, int a, int b) const {
    return arm_prob(a) * subplot_prob(w, b);
  }
  double mean_plot_size() const {
    return static_cast<double>(units_) / whole_plots();
  }
  // Whole-plot size factor M_w / mean size; averages to one exactly.
  double alpha(int w) const { return plots_[w].size / mean_plot_size(); }

  // Offset of plot w's first unit in flattened (w, s) row order.
  int unit_offset(int w) const { return offsets_[w]; }

  // Plots with a single-unit factor-B arm: point estimation works but
  // within-arm sample covariances degenerate there.
  const std::vector<int>& degenerate_arm_plots() const {
    return degenerate_arm_plots_;
  }

 private:
  friend ValidatedDesign validate_design(const DesignSpec& spec);

  int w1_ = 0;
  int units_ = 0;
  std::vector<PlotSize> plots_;
  std::vector<int> offsets_;
  std::vector<int> degenerate_arm_plots_;
};

inline ValidatedDesign validate_design(const DesignSpec& spec) {
  const int w = static_cast<int>(spec.plots.size());
  if (w < 2) throw InvalidDesign("a design needs at least two whole plots");
  if (spec.w1 < 1 || spec.w1 > w - 1) {
    std::ostringstream msg;
    msg << "w1 = " << spec.w1 << " leaves an empty factor-A arm (W = " << w
        << ")";
    throw InvalidDesign(msg.str());
  }
  ValidatedDesign out;
  out.w1_ = spec.w1;
  out.plots_ = spec.plots;
  out.offsets_.resize(w + 1, 0);
  for (int i = 0; i < w; ++i) {
    const PlotSize& p = spec.plots[i];
    if (p.size < 2) {
      std::ostringstream msg;
      msg << "whole plot " << i << " has M_w = " << p.size << " < 2";
      throw InvalidDesign(msg.str());
    }
    if (p.b1_size < 1 || p.b0_size() < 1) {
      std::ostringstream msg;
      msg << "whole plot " << i << " has an empty factor-B arm";
      throw InvalidDesign(msg.str());
    }
    if (p.b1_size == 1 || p.b0_size() == 1)
      out.degenerate_arm_plots_.push_back(i);
    out.offsets_[i + 1] = out.offsets_[i] + p.size;
  }
  out.units_ = out.offsets_[w];
  return out;
}

// One realized treatment allocation. b_levels is flattened in the design's
// (w, s) row order; use ValidatedDesign::unit_offset to index per plot.
struct Assignment {
  std::vector<std::uint8_t> a_levels;
  std::vector<std::uint8_t> b_levels;

  int arm_index(int w, int unit_row) const {
    return 2 * a_levels[w] + b_levels[unit_row];
  }
};

namespace detail {

// Partial Fisher-Yates: marks k uniformly chosen positions out of n in
// `chosen` (values written as `mark`).
inline void sample_without_replacement(int n, int k, RngStream& rng,
                                       std::vector<int>& scratch,
                                       std::uint8_t* chosen) {
  scratch.resize(n);
  std::iota(scratch.begin(), scratch.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j =
        i + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(n - i)));
    std::swap(scratch[i], scratch[j]);
    chosen[scratch[i]] = 1;
  }
}

}  // namespace detail

// Two-stage randomization: stage I draws a uniform size-W1 subset of whole
// plots for A = 1; stage II draws, independently per whole plot, a uniform
// size-M_w1 subset of subplots for B = 1.
inline void randomize_into(const ValidatedDesign& design, RngStream& rng,
                           Assignment& out) {
  const int w = design.whole_plots();
  out.a_levels.assign(w, 0);
  out.b_levels.assign(design.units(), 0);
  thread_local std::vector<int> scratch;
  detail::sample_without_replacement(w, design.arm_count(1), rng, scratch,
                                     out.a_levels.data());
  for (int i = 0; i < w; ++i) {
    const PlotSize& p = design.plot(i);
    detail::sample_without_replacement(p.size, p.b1_size, rng, scratch,
                                       out.b_levels.data() +
                                           design.unit_offset(i));
  }
}

inline Assignment randomize(const ValidatedDesign& design, RngStream& rng) {
  Assignment out;
  randomize_into(design, rng, out);
  return out;
}

namespace detail {

inline std::uint64_t binomial_or_cap(int n, int k, std::uint64_t cap) {
  // C(n, k) with saturation once past the cap.
  std::uint64_t r = 1;
  k = std::min(k, n - k);
  for (int i = 1; i <= k; ++i) {
    if (r > 4 * cap) return 4 * cap;
    r = r * static_cast<std::uint64_t>(n - k + i) /
        static_cast<std::uint64_t>(i);
  }
  return r;
}

// Lexicographic iteration over k-subsets of {0..n-1}.
struct CombinationIter {
  int n = 0, k = 0;
  std::vector<int> idx;

  void reset(int n_, int k_) {
    n = n_;
    k = k_;
    idx.resize(k);
    std::iota(idx.begin(), idx.end(), 0);
  }
  bool advance() {
    int i = k - 1;
    while (i >= 0 && idx[i] == n - k + i) --i;
    if (i < 0) return false;
    ++idx[i];
    for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    return true;
  }
};

}  // namespace detail

// Total number of assignments C(W, W1) * prod_w C(M_w, M_w1), saturated a
// little above `cap` on overflow.
inline std::uint64_t assignment_space_size(const ValidatedDesign& design,
                                           std::uint64_t cap = 1000000) {
  std::uint64_t total =
      detail::binomial_or_cap(design.whole_plots(), design.arm_count(1), cap);
  for (int w = 0; w < design.whole_plots(); ++w) {
    const PlotSize& p = design.plot(w);
    const std::uint64_t c = detail::binomial_or_cap(p.size, p.b1_size, cap);
    if (total > (2 * cap) / std::max<std::uint64_t>(c, 1) + 1)
      return 2 * cap + 1;
    total *= c;
    if (total > 2 * cap) return total;
  }
  return total;
}

// Visits every assignment exactly once with its exact probability
// (uniform within stages, multiplied across stages). fn(assignment, prob).
template <class Fn>
std::uint64_t enumerate_assignments(const ValidatedDesign& design, Fn&& fn,
                                    std::uint64_t cap = 1000000) {
  const std::uint64_t total = assignment_space_size(design, cap);
  if (total > cap) {
    std::ostringstream msg;
    msg << "assignment space exceeds the enumeration cap of " << cap;
    throw SpaceTooLarge(msg.str());
  }
  const double prob = 1.0 / static_cast<double>(total);
  const int w = design.whole_plots();

  detail::CombinationIter a_iter;
  a_iter.reset(w, design.arm_count(1));
  std::vector<detail::CombinationIter> b_iters(w);
  Assignment asg;
  asg.a_levels.assign(w, 0);
  asg.b_levels.assign(design.units(), 0);

  auto apply_a = [&] {
    std::fill(asg.a_levels.begin(), asg.a_levels.end(), 0);
    for (int i : a_iter.idx) asg.a_levels[i] = 1;
  };
  auto apply_b = [&](int plot) {
    std::uint8_t* base = asg.b_levels.data() + design.unit_offset(plot);
    std::fill(base, base + design.plot(plot).size, 0);
    for (int i : b_iters[plot].idx) base[i] = 1;
  };

  apply_a();
  for (int i = 0; i < w; ++i) {
    b_iters[i].reset(design.plot(i).size, design.plot(i).b1_size);
    apply_b(i);
  }

  std::uint64_t count = 0;
  for (;;) {
    fn(static_cast<const Assignment&>(asg), prob);
    ++count;
    // Odometer: advance the last B iterator, carry leftward, then stage I.
    int plot = w - 1;
    while (plot >= 0 && !b_iters[plot].advance()) {
      b_iters[plot].reset(design.plot(plot).size, design.plot(plot).b1_size);
      apply_b(plot);
      --plot;
    }
    if (plot >= 0) {
      apply_b(plot);
      continue;
    }
    if (!a_iter.advance()) break;
    apply_a();
  }
  return count;
}

}  // namespace splitplot
