#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <random>
#include <thread>
#include <vector>

#include "metastab/chain.hpp"

namespace metastab {

// Cumulative jump tables of a chain, in the row order of R.
class JumpSampler {
 public:
  explicit JumpSampler(const MarkovChain<double>& c) : n_(c.n), start_(c.n + 1, 0), rate_(c.n, 0.0) {
    for (int x = 0; x < n_; ++x) {
      double acc = 0;
      for (MarkovChain<double>::SpMat::InnerIterator it(c.R, x); it; ++it) {
        if (it.value() <= 0) continue;
        acc += it.value();
        cum_.push_back(acc);
        to_.push_back(static_cast<int>(it.col()));
      }
      rate_[x] = acc;
      start_[x + 1] = static_cast<int>(cum_.size());
    }
  }

  int size() const { return n_; }
  double rate(int x) const { return rate_[x]; }

  // One jump from x: returns the holding time and moves x.
  template <class Rng>
  double step(int& x, Rng& rng) const {
    const double lam = rate_[x];
    if (!(lam > 0)) throw Error("state " + std::to_string(x) + " is absorbing");
    std::exponential_distribution<double> hold(lam);
    double t = hold(rng);
    std::uniform_real_distribution<double> u(0.0, lam);
    double r = u(rng);
    auto b = cum_.begin() + start_[x], e = cum_.begin() + start_[x + 1];
    auto it = std::upper_bound(b, e, r);
    if (it == e) --it;
    x = to_[it - cum_.begin()];
    return t;
  }

 private:
  int n_;
  std::vector<int> start_;
  std::vector<double> cum_;
  std::vector<int> to_;
  std::vector<double> rate_;
};

// Independent stream for replica `index` of a run with master seed `seed`.
inline std::mt19937_64 replica_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

constexpr long long kDefaultStepCap = 1000000000LL;

template <class Rng>
inline double sample_hitting_time(const JumpSampler& js, int x0, const std::vector<char>& in_A, Rng& rng,
                                  long long step_cap = kDefaultStepCap) {
  int x = x0;
  double t = 0;
  for (long long k = 0; !in_A[x]; ++k) {
    if (k >= step_cap) throw Error("hitting not observed within " + std::to_string(step_cap) + " steps");
    t += js.step(x, rng);
  }
  return t;
}

inline double sample_hitting_time(const MarkovChain<double>& c, int x0, const std::vector<int>& A, std::uint64_t seed,
                                  long long step_cap = kDefaultStepCap) {
  if (A.empty()) throw Error("target set must be nonempty");
  JumpSampler js(c);
  auto rng = replica_rng(seed, 0);
  return sample_hitting_time(js, x0, list_to_mask(A, c.n), rng, step_cap);
}

struct TrajectoryStats {
  long long n = 0;
  double mean = 0;
  double stderr_ = 0;  // sample standard deviation / sqrt(n)
  std::vector<double> samples;
};

inline TrajectoryStats summarize(std::vector<double> samples) {
  TrajectoryStats s;
  s.n = static_cast<long long>(samples.size());
  if (s.n < 1) throw Error("no samples");
  double sum = 0;
  for (double v : samples) sum += v;
  s.mean = sum / s.n;
  double ss = 0;
  for (double v : samples) ss += (v - s.mean) * (v - s.mean);
  s.stderr_ = s.n > 1 ? std::sqrt(ss / (s.n - 1) / s.n) : 0.0;
  s.samples = std::move(samples);
  return s;
}

// Runs body(i) for i in [0, n) on `workers` threads; the result order depends only on i.
template <class Body>
inline void parallel_for(int n, int workers, Body body) {
  workers = std::max(1, std::min(workers, n));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline TrajectoryStats estimate_mean_hitting(const MarkovChain<double>& c, int x0, const std::vector<int>& A, int n,
                                             std::uint64_t seed, int workers = 1,
                                             long long step_cap = kDefaultStepCap) {
  if (n < 2) throw Error("at least two replicas are required");
  if (A.empty()) throw Error("target set must be nonempty");
  JumpSampler js(c);
  auto mask = list_to_mask(A, c.n);
  std::vector<double> out(n);
  parallel_for(n, workers, [&](int i) {
    auto rng = replica_rng(seed, static_cast<std::uint64_t>(i));
    out[i] = sample_hitting_time(js, x0, mask, rng, step_cap);
  });
  return summarize(std::move(out));
}

// Sequence of wells visited, recorded each time the chain enters a labelled
// set other than the last one it was in.
struct VisitSequence {
  std::vector<int> wells;
  Eigen::MatrixXi transitions;  // transitions(i, j) counts consecutive visits i -> j
  long long steps = 0;
};

inline VisitSequence visit_sequence(const MarkovChain<double>& c, int x0, const std::vector<int>& label, int M,
                                    int max_transitions, std::uint64_t seed, long long step_cap = kDefaultStepCap) {
  if (static_cast<int>(label.size()) != c.n) throw Error("one label per state is required");
  JumpSampler js(c);
  auto rng = replica_rng(seed, 0);
  VisitSequence v;
  v.transitions = Eigen::MatrixXi::Zero(M, M);
  int x = x0;
  int last = label[x];
  if (last >= 0) v.wells.push_back(last);
  while (static_cast<int>(v.wells.size()) <= max_transitions) {
    if (v.steps >= step_cap) throw Error("hitting not observed: visit sequence stalled after " +
                                         std::to_string(v.steps) + " steps");
    js.step(x, rng);
    ++v.steps;
    int l = label[x];
    if (l >= 0 && l != last) {
      if (last >= 0) v.transitions(last, l) += 1;
      v.wells.push_back(l);
      last = l;
    }
  }
  return v;
}

// Time-weighted occupation of labelled sets along one trajectory, with
// batch-means standard errors.
struct Occupation {
  std::vector<double> fraction, stderr_;
  double total_time = 0;
};

inline Occupation occupation(const MarkovChain<double>& c, int x0, const std::vector<int>& label, int M,
                             long long steps, int batches, std::uint64_t seed) {
  if (batches < 2) throw Error("at least two batches are required");
  if (steps < batches) throw Error("fewer steps than batches");
  JumpSampler js(c);
  auto rng = replica_rng(seed, 0);
  const long long per = steps / batches;
  std::vector<std::vector<double>> frac(M, std::vector<double>(batches, 0.0));
  std::vector<double> whole(M, 0.0);
  Occupation occ;
  int x = x0;
  for (int b = 0; b < batches; ++b) {
    std::vector<double> t(M, 0.0);
    double tot = 0;
    for (long long k = 0; k < per; ++k) {
      int here = x;
      double dt = js.step(x, rng);
      tot += dt;
      if (label[here] >= 0) t[label[here]] += dt;
    }
    occ.total_time += tot;
    for (int i = 0; i < M; ++i) {
      frac[i][b] = t[i] / tot;
      whole[i] += t[i];
    }
  }
  for (int i = 0; i < M; ++i) {
    occ.fraction.push_back(whole[i] / occ.total_time);
    occ.stderr_.push_back(summarize(frac[i]).stderr_);
  }
  return occ;
}

}  // namespace metastab
