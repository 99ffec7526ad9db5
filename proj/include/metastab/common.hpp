#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/eigen.hpp>

namespace metastab {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// 100 decimal digits. Large-N sweeps compare quantities spanning e^{±100},
// which double cannot resolve once 1 - V or potential differences are formed.
using Extended = boost::multiprecision::number<
    boost::multiprecision::cpp_bin_float<100>, boost::multiprecision::et_off>;

template <class Real>
using Func = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Real>
inline double to_double(const Real& r) {
  return static_cast<double>(r);
}

// Natural log returned as double; finite even when r itself is outside double range.
template <class Real>
inline double log_of(const Real& r) {
  using std::log;
  return static_cast<double>(log(r));
}

template <class Real>
inline Real abs_of(const Real& r) {
  using std::abs;
  return abs(r);
}

template <class Real>
inline Real exp_of(const Real& r) {
  using std::exp;
  return exp(r);
}

template <class Real>
inline Real sqrt_of(const Real& r) {
  using std::sqrt;
  return sqrt(r);
}

// Relative discrepancy |a - b| / max(|a|, |b|, floor).
template <class Real>
inline double rel_diff(const Real& a, const Real& b, const Real& floor = Real(0)) {
  Real s = abs_of(a) > abs_of(b) ? abs_of(a) : abs_of(b);
  if (floor > s) s = floor;
  if (s == Real(0)) return 0.0;
  return to_double(Real(abs_of(Real(a - b)) / s));
}

inline std::vector<int> mask_to_list(const std::vector<char>& mask) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(mask.size()); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

inline std::vector<char> list_to_mask(const std::vector<int>& list, int n) {
  std::vector<char> m(n, 0);
  for (int x : list) m.at(x) = 1;
  return m;
}

}  // namespace metastab
