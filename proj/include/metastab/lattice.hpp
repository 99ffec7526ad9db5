#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "metastab/common.hpp"
#include "metastab/landscape.hpp"

namespace metastab {

using IVec = std::vector<long>;

// A closed lattice loop z_0, ..., z_L = z_0 with z_0 at the origin.
struct Cycle {
  std::vector<IVec> z;

  int L() const { return static_cast<int>(z.size()) - 1; }
  int dim() const { return z.empty() ? 0 : static_cast<int>(z[0].size()); }
  IVec increment(int j) const {
    IVec w(dim());
    for (int k = 0; k < dim(); ++k) w[k] = z[j + 1][k] - z[j][k];
    return w;
  }
  Vec barycenter() const {
    Vec b = Vec::Zero(dim());
    for (int j = 0; j < L(); ++j)
      for (int k = 0; k < dim(); ++k) b[k] += double(z[j][k]);
    return b / double(L());
  }
  Vec vertex(int j) const {
    Vec v(dim());
    for (int k = 0; k < dim(); ++k) v[k] = double(z[((j % L()) + L()) % L()][k]);
    return v;
  }
};

inline Cycle make_cycle(std::vector<IVec> z) { return Cycle{std::move(z)}; }

inline Cycle cycle_1d(std::initializer_list<long> pts) {
  Cycle c;
  for (long p : pts) c.z.push_back(IVec{p});
  return c;
}

struct CycleDiagnostics {
  bool ok = true;
  std::vector<std::string> failures;
};

// Determinant of the lattice spanned by the rows, via integer row reduction.
// Returns 0 when the rows do not have full column rank.
inline long lattice_index(std::vector<IVec> rows, int d) {
  int prow = 0;
  long det = 1;
  for (int c = 0; c < d; ++c) {
    while (true) {
      int best = -1;
      for (int r = prow; r < static_cast<int>(rows.size()); ++r)
        if (rows[r][c] != 0 && (best < 0 || std::labs(rows[r][c]) < std::labs(rows[best][c]))) best = r;
      if (best < 0) return 0;
      std::swap(rows[prow], rows[best]);
      bool clean = true;
      for (int r = prow + 1; r < static_cast<int>(rows.size()); ++r) {
        if (rows[r][c] == 0) continue;
        long q = rows[r][c] / rows[prow][c];
        for (int k = 0; k < d; ++k) rows[r][k] -= q * rows[prow][k];
        if (rows[r][c] != 0) clean = false;
      }
      if (clean) break;
    }
    det *= std::labs(rows[prow][c]);
    ++prow;
  }
  return det;
}

// With `generating` false the Z^d check is skipped; cycle families check it jointly.
inline CycleDiagnostics validate_cycle(const Cycle& c, bool generating = true) {
  CycleDiagnostics out;
  auto fail = [&](std::string s) {
    out.ok = false;
    out.failures.push_back(std::move(s));
  };
  if (c.L() < 2) {
    fail("cycle length L must be at least 2");
    return out;
  }
  const int d = c.dim();
  for (const auto& p : c.z)
    if (static_cast<int>(p.size()) != d) {
      fail("vertices have inconsistent dimension");
      return out;
    }
  for (int k = 0; k < d; ++k)
    if (c.z.front()[k] != 0) {
      fail("z_0 must be the origin");
      break;
    }
  if (c.z.front() != c.z.back()) fail("cycle is not closed (z_L != z_0)");
  std::set<IVec> seen;
  for (int j = 0; j < c.L(); ++j)
    if (!seen.insert(c.z[j]).second) {
      fail("self-intersection among z_0..z_{L-1}");
      break;
    }
  if (!generating) return out;
  std::vector<IVec> inc;
  for (int j = 0; j < c.L(); ++j) inc.push_back(c.increment(j));
  if (lattice_index(inc, d) != 1) fail("increments do not generate Z^d");
  return out;
}

// Several cycles only need their edges to generate Z^d together.
inline CycleDiagnostics validate_cycles(const std::vector<Cycle>& cycles) {
  CycleDiagnostics out;
  if (cycles.empty()) {
    out.ok = false;
    out.failures.push_back("at least one cycle is required");
    return out;
  }
  if (cycles.size() == 1) return validate_cycle(cycles[0]);
  std::vector<IVec> inc;
  for (size_t k = 0; k < cycles.size(); ++k) {
    auto d = validate_cycle(cycles[k], false);
    for (auto& f : d.failures) out.failures.push_back("cycle " + std::to_string(k + 1) + ": " + f);
    if (!d.ok) continue;
    if (cycles[k].dim() != cycles[0].dim()) {
      out.failures.push_back("cycles have different dimensions");
      continue;
    }
    for (int j = 0; j < cycles[k].L(); ++j) inc.push_back(cycles[k].increment(j));
  }
  if (out.failures.empty() && lattice_index(inc, cycles[0].dim()) != 1)
    out.failures.push_back("edges of the cycles do not generate Z^d");
  out.ok = out.failures.empty();
  return out;
}

// Discretized state space for one scaling parameter N and a family of cycles.
struct LatticeDomain {
  int d = 0;
  int N = 0;
  std::vector<Cycle> cycles;
  std::vector<long> kmin, kmax, stride;
  long grid_size = 0;
  std::vector<char> in_tilde;              // grid index -> member of the clipped grid
  std::vector<int> state_of;               // grid index -> state or -1
  std::vector<long> grid_of;               // state -> grid index
  std::vector<std::vector<long>> hat;      // per cycle: admissible base points (grid indices)
  int tilde_count = 0;

  int size() const { return static_cast<int>(grid_of.size()); }

  IVec grid_coords(long g) const {
    IVec k(d);
    for (int a = d - 1; a >= 0; --a) {
      k[a] = kmin[a] + g % (kmax[a] - kmin[a] + 1);
      g /= (kmax[a] - kmin[a] + 1);
    }
    return k;
  }
  long grid_index(const IVec& k) const {
    long g = 0;
    for (int a = 0; a < d; ++a) {
      if (k[a] < kmin[a] || k[a] > kmax[a]) return -1;
      g += (k[a] - kmin[a]) * stride[a];
    }
    return g;
  }
  IVec coords(int s) const { return grid_coords(grid_of[s]); }
  Vec point(int s) const { return grid_point(grid_of[s]); }
  Vec grid_point(long g) const {
    IVec k = grid_coords(g);
    Vec x(d);
    for (int a = 0; a < d; ++a) x[a] = double(k[a]) / N;
    return x;
  }
  int state_at(const IVec& k) const {
    long g = grid_index(k);
    return g < 0 ? -1 : state_of[g];
  }
  // State reached from base grid point g by the j-th vertex of cycle c.
  int cycle_state(int c, long g, int j) const {
    IVec k = grid_coords(g);
    const Cycle& cy = cycles[c];
    const IVec& z = cy.z[((j % cy.L()) + cy.L()) % cy.L()];
    for (int a = 0; a < d; ++a) k[a] += z[a];
    return state_at(k);
  }
  int hat_count() const {
    int s = 0;
    for (const auto& h : hat) s += static_cast<int>(h.size());
    return s;
  }

  // Undirected adjacency induced by the edges of translated cycles.
  std::vector<std::vector<int>> neighbors() const {
    std::vector<std::set<int>> nb(size());
    for (size_t c = 0; c < cycles.size(); ++c) {
      for (long g : hat[c]) {
        for (int j = 0; j < cycles[c].L(); ++j) {
          int a = cycle_state(c, g, j), b = cycle_state(c, g, j + 1);
          if (a != b) {
            nb[a].insert(b);
            nb[b].insert(a);
          }
        }
      }
    }
    std::vector<std::vector<int>> out(size());
    for (int s = 0; s < size(); ++s) out[s].assign(nb[s].begin(), nb[s].end());
    return out;
  }
};

inline LatticeDomain discretize(const PotentialField& f, int N, const std::vector<Cycle>& cycles) {
  if (N < 4) throw Error("N must be at least 4");
  auto diag = validate_cycles(cycles);
  if (!diag.ok) throw Error("invalid cycle: " + diag.failures.front());
  for (const auto& c : cycles)
    if (c.dim() != f.d) throw Error("cycle dimension does not match the potential");
  LatticeDomain lat;
  lat.d = f.d;
  lat.N = N;
  lat.cycles = cycles;
  lat.kmin.resize(f.d);
  lat.kmax.resize(f.d);
  lat.stride.resize(f.d);
  for (int a = 0; a < f.d; ++a) {
    lat.kmin[a] = static_cast<long>(std::ceil(f.box.lo[a] * N - 1e-9));
    lat.kmax[a] = static_cast<long>(std::floor(f.box.hi[a] * N + 1e-9));
    if (lat.kmax[a] < lat.kmin[a]) throw Error("domain box is empty at this N");
  }
  lat.grid_size = 1;
  for (int a = f.d - 1; a >= 0; --a) {
    lat.stride[a] = lat.grid_size;
    lat.grid_size *= (lat.kmax[a] - lat.kmin[a] + 1);
  }
  lat.in_tilde.assign(lat.grid_size, 0);
  for (long g = 0; g < lat.grid_size; ++g) {
    Vec x = lat.grid_point(g);
    lat.in_tilde[g] = !f.inside || f.inside(x);
    lat.tilde_count += lat.in_tilde[g];
  }
  std::vector<char> covered(lat.grid_size, 0);
  lat.hat.resize(cycles.size());
  for (size_t c = 0; c < cycles.size(); ++c) {
    for (long g = 0; g < lat.grid_size; ++g) {
      if (!lat.in_tilde[g]) continue;
      IVec k = lat.grid_coords(g);
      bool ok = true;
      std::vector<long> members;
      for (int j = 0; j < cycles[c].L() && ok; ++j) {
        IVec y = k;
        for (int a = 0; a < f.d; ++a) y[a] += cycles[c].z[j][a];
        long gy = lat.grid_index(y);
        ok = gy >= 0 && lat.in_tilde[gy];
        members.push_back(gy);
      }
      if (!ok) continue;
      lat.hat[c].push_back(g);
      for (long m : members) covered[m] = 1;
    }
  }
  if (lat.hat_count() == 0) throw Error("no translated cycle fits inside the domain at this N");
  lat.state_of.assign(lat.grid_size, -1);
  for (long g = 0; g < lat.grid_size; ++g) {
    if (!covered[g]) continue;
    lat.state_of[g] = static_cast<int>(lat.grid_of.size());
    lat.grid_of.push_back(g);
  }
  return lat;
}

// Closest state in Euclidean distance; ties go to the lexicographically smallest state.
inline int nearest_lattice_point(const Vec& x, const LatticeDomain& lat) {
  const int d = lat.d;
  IVec base(d);
  for (int a = 0; a < d; ++a) base[a] = std::lround(x[a] * lat.N);
  auto best_in = [&](const std::vector<int>& cand) {
    int best = -1;
    double bd = 1e300;
    for (int s : cand) {
      double dist = (lat.point(s) - x).norm();
      if (dist < bd - 1e-12) {
        bd = dist;
        best = s;
      }
    }
    return best;
  };
  std::vector<int> cand;
  const int R = 2;
  IVec off(d, -R);
  while (true) {
    IVec k = base;
    for (int a = 0; a < d; ++a) k[a] += off[a];
    int s = lat.state_at(k);
    if (s >= 0) cand.push_back(s);
    int a = 0;
    while (a < d && ++off[a] > R) off[a++] = -R;
    if (a == d) break;
  }
  std::sort(cand.begin(), cand.end());
  if (!cand.empty()) {
    int s = best_in(cand);
    // A state inside the search window is exact unless x lies off the lattice range.
    double dist = (lat.point(s) - x).norm();
    if (dist <= (R - 0.5) / double(lat.N)) return s;
  }
  std::vector<int> all(lat.size());
  std::iota(all.begin(), all.end(), 0);
  return best_in(all);
}

}  // namespace metastab
