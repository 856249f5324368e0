#include "gridarb/conic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

namespace gridarb::conic {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<double>;
using Trip = Eigen::Triplet<double>;

int ConicProgram::add_variable(const std::string& name, double lo, double hi) {
  var_names.push_back(name);
  lower.push_back(lo);
  upper.push_back(hi);
  quad_diag.push_back(0.0);
  lin_cost.push_back(0.0);
  return n_vars() - 1;
}

void ConicProgram::add_quad_cost(int v, double coeff) {
  quad_diag[static_cast<size_t>(v)] += coeff;
}

void ConicProgram::add_lin_cost(int v, double coeff) {
  lin_cost[static_cast<size_t>(v)] += coeff;
}

void ConicProgram::add_squared_cost(double weight,
                                    std::vector<std::pair<int, double>> coeffs,
                                    double offset) {
  rank_terms.push_back(RankTerm{weight, std::move(coeffs), offset});
}

int ConicProgram::add_equality(std::vector<std::pair<int, double>> coeffs, double rhs,
                               std::string name) {
  rows.push_back(Row{std::move(coeffs), rhs, std::move(name)});
  return n_rows() - 1;
}

int ConicProgram::add_soc(std::vector<int> members, std::string name) {
  cones.push_back(Cone{std::move(members), std::move(name)});
  return n_cones() - 1;
}

double ConicProgram::objective_value(const std::vector<double>& x) const {
  double v = cost_constant;
  for (int i = 0; i < n_vars(); ++i) {
    size_t u = static_cast<size_t>(i);
    v += quad_diag[u] * x[u] * x[u] + lin_cost[u] * x[u];
  }
  for (const auto& rt : rank_terms) {
    double a = rt.offset;
    for (auto [i, c] : rt.coeffs) a += c * x[static_cast<size_t>(i)];
    v += rt.weight * a * a;
  }
  return v;
}

std::vector<double> ConicProgram::objective_gradient(const std::vector<double>& x) const {
  std::vector<double> g(static_cast<size_t>(n_vars()), 0.0);
  for (int i = 0; i < n_vars(); ++i) {
    size_t u = static_cast<size_t>(i);
    g[u] = 2.0 * quad_diag[u] * x[u] + lin_cost[u];
  }
  for (const auto& rt : rank_terms) {
    double a = rt.offset;
    for (auto [i, c] : rt.coeffs) a += c * x[static_cast<size_t>(i)];
    for (auto [i, c] : rt.coeffs) g[static_cast<size_t>(i)] += 2.0 * rt.weight * a * c;
  }
  return g;
}

std::vector<std::string> ConicProgram::check_invariants() const {
  std::vector<std::string> out;
  auto bad = [&](const std::string& m) { out.push_back(m); };
  int n = n_vars();
  auto in_range = [&](int v) { return v >= 0 && v < n; };
  for (int v = 0; v < n; ++v) {
    size_t u = static_cast<size_t>(v);
    if (std::isnan(lower[u]) || std::isnan(upper[u]))
      bad("variable " + var_names[u] + ": NaN bound");
    else if (lower[u] >= upper[u])
      bad("variable " + var_names[u] +
          ": bounds must satisfy lower < upper (pin values with an equality row)");
    if (!(quad_diag[u] >= 0)) bad("variable " + var_names[u] + ": negative quad cost");
    if (!std::isfinite(lin_cost[u])) bad("variable " + var_names[u] + ": bad linear cost");
  }
  for (size_t m = 0; m < rank_terms.size(); ++m) {
    const auto& rt = rank_terms[m];
    if (!(rt.weight >= 0) || !std::isfinite(rt.weight) || !std::isfinite(rt.offset))
      bad("squared cost " + std::to_string(m) + ": bad weight or offset");
    for (auto [v, c] : rt.coeffs)
      if (!in_range(v) || !std::isfinite(c))
        bad("squared cost " + std::to_string(m) + ": bad coefficient");
  }
  for (size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.coeffs.empty()) bad("equality " + std::to_string(r) + ": empty row");
    if (!std::isfinite(row.rhs)) bad("equality " + std::to_string(r) + ": bad rhs");
    for (auto [v, c] : row.coeffs)
      if (!in_range(v) || !std::isfinite(c))
        bad("equality " + std::to_string(r) + ": bad coefficient");
  }
  std::set<int> heads;
  for (size_t k = 0; k < cones.size(); ++k) {
    const auto& co = cones[k];
    if (co.members.size() < 2) bad("cone " + std::to_string(k) + ": fewer than 2 members");
    std::set<int> seen;
    for (int v : co.members) {
      if (!in_range(v)) bad("cone " + std::to_string(k) + ": member out of range");
      else if (!seen.insert(v).second)
        bad("cone " + std::to_string(k) + ": repeated member");
    }
    if (!co.members.empty() && in_range(co.members[0]) &&
        !heads.insert(co.members[0]).second)
      bad("cone " + std::to_string(k) + ": head already heads another cone");
  }
  return out;
}

std::string ConicProgram::dump() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "conic-program v1\n";
  os << "vars " << n_vars() << "\n";
  for (int v = 0; v < n_vars(); ++v) {
    size_t u = static_cast<size_t>(v);
    os << "var " << v << " " << (var_names[u].empty() ? "_" : var_names[u]) << " ";
    if (std::isinf(lower[u])) os << "-inf"; else os << lower[u];
    os << " ";
    if (std::isinf(upper[u])) os << "inf"; else os << upper[u];
    os << "\n";
    if (quad_diag[u] != 0) os << "quad " << v << " " << quad_diag[u] << "\n";
    if (lin_cost[u] != 0) os << "lin " << v << " " << lin_cost[u] << "\n";
  }
  if (cost_constant != 0) os << "const " << cost_constant << "\n";
  for (const auto& rt : rank_terms) {
    os << "sq " << rt.weight << " " << rt.offset << " " << rt.coeffs.size();
    for (auto [v, c] : rt.coeffs) os << " " << v << " " << c;
    os << "\n";
  }
  for (const auto& row : rows) {
    os << "eq " << row.rhs << " " << row.coeffs.size();
    for (auto [v, c] : row.coeffs) os << " " << v << " " << c;
    if (!row.name.empty()) os << " # " << row.name;
    os << "\n";
  }
  for (const auto& co : cones) {
    os << "soc " << co.members.size();
    for (int v : co.members) os << " " << v;
    if (!co.name.empty()) os << " # " << co.name;
    os << "\n";
  }
  return os.str();
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iter: return "max_iter";
  }
  return "unknown";
}

namespace {

// Layout of the inequality slack vector: n_pos leading entries for the
// nonnegative orthant (bound rows), then SOC blocks.
struct ConeLayout {
  int n_pos = 0;
  std::vector<int> off, dim;
  int total = 0;
  int degree() const { return n_pos + static_cast<int>(off.size()); }
};

struct Compiled {
  int n = 0;       // user + auxiliary squared-cost variables
  int n_user = 0;
  int m_user_rows = 0;
  VectorXd pdiag;  // P = diag(pdiag), objective 0.5 x'Px + c'x
  VectorXd c;
  SpMat A;         // equalities, user rows then squared-cost rows
  VectorXd b;
  SpMat G;         // bound rows then cone rows, G x + s = h
  VectorXd h;
  ConeLayout lay;
  std::vector<int> low_row, up_row;  // per user var, -1 when absent
};

Compiled compile(const ConicProgram& p) {
  Compiled cc;
  cc.n_user = p.n_vars();
  int n_aux = static_cast<int>(p.rank_terms.size());
  cc.n = cc.n_user + n_aux;
  cc.m_user_rows = p.n_rows();

  cc.pdiag = VectorXd::Zero(cc.n);
  cc.c = VectorXd::Zero(cc.n);
  for (int v = 0; v < cc.n_user; ++v) {
    cc.pdiag[v] = 2.0 * p.quad_diag[static_cast<size_t>(v)];
    cc.c[v] = p.lin_cost[static_cast<size_t>(v)];
  }
  for (int m = 0; m < n_aux; ++m)
    cc.pdiag[cc.n_user + m] = 2.0 * p.rank_terms[static_cast<size_t>(m)].weight;

  int m_eq = cc.m_user_rows + n_aux;
  std::vector<Trip> at;
  cc.b = VectorXd::Zero(m_eq);
  for (int r = 0; r < cc.m_user_rows; ++r) {
    const auto& row = p.rows[static_cast<size_t>(r)];
    for (auto [v, coef] : row.coeffs) at.emplace_back(r, v, coef);
    cc.b[r] = row.rhs;
  }
  for (int m = 0; m < n_aux; ++m) {
    const auto& rt = p.rank_terms[static_cast<size_t>(m)];
    int r = cc.m_user_rows + m;
    for (auto [v, coef] : rt.coeffs) at.emplace_back(r, v, coef);
    at.emplace_back(r, cc.n_user + m, -1.0);
    cc.b[r] = -rt.offset;
  }
  cc.A.resize(m_eq, cc.n);
  cc.A.setFromTriplets(at.begin(), at.end());

  cc.low_row.assign(static_cast<size_t>(cc.n_user), -1);
  cc.up_row.assign(static_cast<size_t>(cc.n_user), -1);
  std::vector<Trip> gt;
  std::vector<double> hv;
  int r = 0;
  for (int v = 0; v < cc.n_user; ++v)
    if (std::isfinite(p.lower[static_cast<size_t>(v)])) {
      cc.low_row[static_cast<size_t>(v)] = r;
      gt.emplace_back(r, v, -1.0);
      hv.push_back(-p.lower[static_cast<size_t>(v)]);
      ++r;
    }
  for (int v = 0; v < cc.n_user; ++v)
    if (std::isfinite(p.upper[static_cast<size_t>(v)])) {
      cc.up_row[static_cast<size_t>(v)] = r;
      gt.emplace_back(r, v, 1.0);
      hv.push_back(p.upper[static_cast<size_t>(v)]);
      ++r;
    }
  cc.lay.n_pos = r;
  for (const auto& co : p.cones) {
    cc.lay.off.push_back(r);
    cc.lay.dim.push_back(static_cast<int>(co.members.size()));
    for (int v : co.members) {
      gt.emplace_back(r, v, -1.0);
      hv.push_back(0.0);
      ++r;
    }
  }
  cc.lay.total = r;
  cc.G.resize(r, cc.n);
  cc.G.setFromTriplets(gt.begin(), gt.end());
  cc.h = VectorXd::Zero(r);
  for (int i = 0; i < r; ++i) cc.h[i] = hv[static_cast<size_t>(i)];
  return cc;
}

// Nesterov-Todd scaling at an interior pair (s, z): W z = W^{-1} s = lambda.
struct Scaling {
  VectorXd wpos;                    // positive part, W = diag(wpos)
  std::vector<MatrixXd> Wb, Winvb, W2b;
  VectorXd lambda;
};

Scaling compute_scaling(const ConeLayout& L, const VectorXd& s, const VectorXd& z) {
  Scaling sc;
  sc.wpos = VectorXd::Zero(L.n_pos);
  sc.lambda = VectorXd::Zero(L.total);
  for (int i = 0; i < L.n_pos; ++i) {
    sc.wpos[i] = std::sqrt(s[i] / z[i]);
    sc.lambda[i] = std::sqrt(s[i] * z[i]);
  }
  for (size_t k = 0; k < L.off.size(); ++k) {
    int o = L.off[k], d = L.dim[k];
    VectorXd sk = s.segment(o, d), zk = z.segment(o, d);
    VectorXd J = VectorXd::Constant(d, -1.0);
    J[0] = 1.0;
    double sJs = sk[0] * sk[0] - sk.tail(d - 1).squaredNorm();
    double zJz = zk[0] * zk[0] - zk.tail(d - 1).squaredNorm();
    sJs = std::max(sJs, 1e-300);
    zJz = std::max(zJz, 1e-300);
    VectorXd sb = sk / std::sqrt(sJs), zb = zk / std::sqrt(zJz);
    double gamma = std::sqrt((1.0 + sb.dot(zb)) / 2.0);
    VectorXd Jzb = J.asDiagonal() * zb;
    VectorXd wbar = (sb + Jzb) / (2.0 * gamma);
    // half-point of wbar on the hyperboloid: (2vv' - J)^2 = 2 wbar wbar' - J
    VectorXd v = wbar;
    v[0] += 1.0;
    v /= std::sqrt(2.0 * (wbar[0] + 1.0));
    double beta = std::pow(sJs / zJz, 0.25);
    MatrixXd Wb = beta * (2.0 * v * v.transpose() - MatrixXd(J.asDiagonal()));
    VectorXd Jv = J.asDiagonal() * v;
    MatrixXd Winvb =
        (1.0 / beta) * (2.0 * Jv * Jv.transpose() - MatrixXd(J.asDiagonal()));
    sc.Wb.push_back(Wb);
    sc.Winvb.push_back(Winvb);
    sc.W2b.push_back(Wb * Wb);
    sc.lambda.segment(o, d) = Wb * zk;
  }
  return sc;
}

VectorXd mul_W(const ConeLayout& L, const Scaling& sc, const VectorXd& u) {
  VectorXd out(L.total);
  out.head(L.n_pos) = sc.wpos.cwiseProduct(u.head(L.n_pos));
  for (size_t k = 0; k < L.off.size(); ++k)
    out.segment(L.off[k], L.dim[k]) = sc.Wb[k] * u.segment(L.off[k], L.dim[k]);
  return out;
}

VectorXd mul_Winv(const ConeLayout& L, const Scaling& sc, const VectorXd& u) {
  VectorXd out(L.total);
  out.head(L.n_pos) = u.head(L.n_pos).cwiseQuotient(sc.wpos);
  for (size_t k = 0; k < L.off.size(); ++k)
    out.segment(L.off[k], L.dim[k]) = sc.Winvb[k] * u.segment(L.off[k], L.dim[k]);
  return out;
}

VectorXd mul_W2(const ConeLayout& L, const Scaling& sc, const VectorXd& u) {
  VectorXd out(L.total);
  out.head(L.n_pos) =
      sc.wpos.cwiseProduct(sc.wpos).cwiseProduct(u.head(L.n_pos));
  for (size_t k = 0; k < L.off.size(); ++k)
    out.segment(L.off[k], L.dim[k]) = sc.W2b[k] * u.segment(L.off[k], L.dim[k]);
  return out;
}

// Jordan product u o v per cone block.
VectorXd jordan_prod(const ConeLayout& L, const VectorXd& u, const VectorXd& v) {
  VectorXd out(L.total);
  out.head(L.n_pos) = u.head(L.n_pos).cwiseProduct(v.head(L.n_pos));
  for (size_t k = 0; k < L.off.size(); ++k) {
    int o = L.off[k], d = L.dim[k];
    out[o] = u.segment(o, d).dot(v.segment(o, d));
    out.segment(o + 1, d - 1) =
        u[o] * v.segment(o + 1, d - 1) + v[o] * u.segment(o + 1, d - 1);
  }
  return out;
}

// Solves lam o x = d per block (arrow-matrix inverse).
VectorXd jordan_div(const ConeLayout& L, const VectorXd& lam, const VectorXd& d) {
  VectorXd out(L.total);
  out.head(L.n_pos) = d.head(L.n_pos).cwiseQuotient(lam.head(L.n_pos));
  for (size_t k = 0; k < L.off.size(); ++k) {
    int o = L.off[k], dd = L.dim[k];
    double l0 = lam[o];
    auto lt = lam.segment(o + 1, dd - 1);
    double det = l0 * l0 - lt.squaredNorm();
    double x0 = (l0 * d[o] - lt.dot(d.segment(o + 1, dd - 1))) / det;
    out[o] = x0;
    out.segment(o + 1, dd - 1) = (d.segment(o + 1, dd - 1) - x0 * lt) / l0;
  }
  return out;
}

VectorXd unit_e(const ConeLayout& L) {
  VectorXd e = VectorXd::Zero(L.total);
  e.head(L.n_pos).setOnes();
  for (size_t k = 0; k < L.off.size(); ++k) e[L.off[k]] = 1.0;
  return e;
}

double cone_margin(const ConeLayout& L, const VectorXd& u) {
  double m = kInf;
  for (int i = 0; i < L.n_pos; ++i) m = std::min(m, u[i]);
  for (size_t k = 0; k < L.off.size(); ++k) {
    int o = L.off[k], d = L.dim[k];
    m = std::min(m, u[o] - u.segment(o + 1, d - 1).norm());
  }
  return L.total == 0 ? 0.0 : m;
}

// Largest step a with u + a du in the cone; +inf when unconstrained.
double step_to_boundary(const ConeLayout& L, const VectorXd& u, const VectorXd& du) {
  double amax = kInf;
  for (int i = 0; i < L.n_pos; ++i)
    if (du[i] < 0) amax = std::min(amax, -u[i] / du[i]);
  for (size_t k = 0; k < L.off.size(); ++k) {
    int o = L.off[k], d = L.dim[k];
    double u0 = u[o], du0 = du[o];
    auto ut = u.segment(o + 1, d - 1);
    auto dut = du.segment(o + 1, d - 1);
    if (du0 < 0) amax = std::min(amax, -u0 / du0);
    double a = du0 * du0 - dut.squaredNorm();
    double bq = 2.0 * (u0 * du0 - ut.dot(dut));
    double cq = std::max(u0 * u0 - ut.squaredNorm(), 0.0);
    double root = kInf;
    if (std::abs(a) < 1e-300) {
      if (bq < 0) root = -cq / bq;
    } else {
      double disc = bq * bq - 4.0 * a * cq;
      if (disc >= 0) {
        double sq = std::sqrt(disc);
        double qq = -(bq + (bq >= 0 ? sq : -sq)) / 2.0;
        double r1 = qq / a;
        double r2 = std::abs(qq) > 0 ? cq / qq : kInf;
        root = kInf;
        if (r1 > 1e-300) root = std::min(root, r1);
        if (r2 > 1e-300) root = std::min(root, r2);
      }
    }
    amax = std::min(amax, root);
  }
  return amax;
}

struct KktSolver {
  const Compiled& cc;
  double delta = 1e-9;
  Eigen::SimplicialLDLT<SpMat> ldlt;
  SpMat K;
  bool analyzed = false;

  explicit KktSolver(const Compiled& c) : cc(c) {}

  int dim() const { return cc.n + static_cast<int>(cc.b.size()) + cc.lay.total; }

  bool factor(const Scaling& sc) {
    const int n = cc.n, me = static_cast<int>(cc.b.size()), mi = cc.lay.total;
    std::vector<Trip> tr;
    tr.reserve(static_cast<size_t>(n + 2 * cc.A.nonZeros() + 2 * cc.G.nonZeros() + me +
                                   mi * 4));
    for (int i = 0; i < n; ++i) tr.emplace_back(i, i, cc.pdiag[i] + delta);
    for (int o = 0; o < cc.A.outerSize(); ++o)
      for (SpMat::InnerIterator it(cc.A, o); it; ++it) {
        tr.emplace_back(n + static_cast<int>(it.row()), static_cast<int>(it.col()),
                        it.value());
        tr.emplace_back(static_cast<int>(it.col()), n + static_cast<int>(it.row()),
                        it.value());
      }
    for (int i = 0; i < me; ++i) tr.emplace_back(n + i, n + i, -delta);
    for (int o = 0; o < cc.G.outerSize(); ++o)
      for (SpMat::InnerIterator it(cc.G, o); it; ++it) {
        tr.emplace_back(n + me + static_cast<int>(it.row()), static_cast<int>(it.col()),
                        it.value());
        tr.emplace_back(static_cast<int>(it.col()), n + me + static_cast<int>(it.row()),
                        it.value());
      }
    for (int i = 0; i < cc.lay.n_pos; ++i)
      tr.emplace_back(n + me + i, n + me + i,
                      -(sc.wpos[i] * sc.wpos[i]) - delta);
    for (size_t k = 0; k < cc.lay.off.size(); ++k) {
      int o = cc.lay.off[k], d = cc.lay.dim[k];
      for (int r = 0; r < d; ++r)
        for (int c2 = 0; c2 < d; ++c2)
          tr.emplace_back(n + me + o + r, n + me + o + c2,
                          -sc.W2b[k](r, c2) - (r == c2 ? delta : 0.0));
    }
    K.resize(dim(), dim());
    K.setFromTriplets(tr.begin(), tr.end());
    if (!analyzed) {
      ldlt.analyzePattern(K);
      analyzed = true;
    }
    ldlt.factorize(K);
    return ldlt.info() == Eigen::Success;
  }

  // Solves the unregularized KKT system by refining against the exact operator.
  void solve(const Scaling& sc, const VectorXd& bx, const VectorXd& by,
             const VectorXd& bz, VectorXd& dx, VectorXd& dy, VectorXd& dz) const {
    const int n = cc.n, me = static_cast<int>(cc.b.size()), mi = cc.lay.total;
    VectorXd rhs(dim());
    rhs.head(n) = bx;
    rhs.segment(n, me) = by;
    rhs.tail(mi) = bz;
    VectorXd sol = ldlt.solve(rhs);
    for (int pass = 0; pass < 2; ++pass) {
      VectorXd px = sol.head(n), py = sol.segment(n, me), pz = sol.tail(mi);
      VectorXd res(dim());
      res.head(n) = bx - (cc.pdiag.cwiseProduct(px) + cc.A.transpose() * py +
                          cc.G.transpose() * pz);
      res.segment(n, me) = by - cc.A * px;
      res.tail(mi) = bz - (cc.G * px - mul_W2(cc.lay, sc, pz));
      sol += ldlt.solve(res);
    }
    dx = sol.head(n);
    dy = sol.segment(n, me);
    dz = sol.tail(mi);
  }
};

double inf_norm(const VectorXd& v) { return v.size() ? v.lpNorm<Eigen::Infinity>() : 0.0; }

// Blend toward the supplied point, backing off to keep a strict cone margin.
VectorXd interiorize(const ConeLayout& L, const VectorXd& u, const VectorXd& e) {
  double t = 0.99;
  while (t > 1e-3) {
    VectorXd cand = t * u + (1.0 - t) * e;
    if (cone_margin(L, cand) >= 1e-6) return cand;
    t *= 0.5;
  }
  return e;
}

SolveResult extract(const ConicProgram& p, const Compiled& cc, const VectorXd& x,
                    const VectorXd& y, const VectorXd& z) {
  SolveResult r;
  r.x.assign(x.data(), x.data() + cc.n_user);
  r.y.assign(y.data(), y.data() + cc.m_user_rows);
  r.mu_lower.assign(static_cast<size_t>(cc.n_user), 0.0);
  r.mu_upper.assign(static_cast<size_t>(cc.n_user), 0.0);
  for (int v = 0; v < cc.n_user; ++v) {
    if (cc.low_row[static_cast<size_t>(v)] >= 0)
      r.mu_lower[static_cast<size_t>(v)] = z[cc.low_row[static_cast<size_t>(v)]];
    if (cc.up_row[static_cast<size_t>(v)] >= 0)
      r.mu_upper[static_cast<size_t>(v)] = z[cc.up_row[static_cast<size_t>(v)]];
  }
  for (size_t k = 0; k < cc.lay.off.size(); ++k) {
    VectorXd zk = z.segment(cc.lay.off[k], cc.lay.dim[k]);
    r.cone_duals.emplace_back(zk.data(), zk.data() + zk.size());
  }
  r.objective = p.objective_value(r.x);
  return r;
}

}  // namespace

SolveResult solve_conic(const ConicProgram& p, const SolverOptions& opts,
                        const WarmStart* warm) {
  {
    auto inv = p.check_invariants();
    if (!inv.empty()) throw std::invalid_argument("conic program: " + inv.front());
  }
  Compiled cc = compile(p);
  const int n = cc.n, me = static_cast<int>(cc.b.size()), mi = cc.lay.total;
  const ConeLayout& L = cc.lay;
  KktSolver kkt(cc);

  auto factor_escalating = [&kkt](const Scaling& sc) {
    bool ok = kkt.factor(sc);
    while (!ok && kkt.delta < 1e-3) {
      kkt.delta *= 10;
      ok = kkt.factor(sc);
    }
    if (!ok) throw std::runtime_error("conic: singular KKT system");
  };

  // Pure equality-constrained QP: one KKT solve.
  if (mi == 0) {
    Scaling sc;  // empty
    factor_escalating(sc);
    VectorXd dx, dy, dz, empty(0);
    kkt.solve(sc, -cc.c, cc.b, empty, dx, dy, dz);
    SolveResult r = extract(p, cc, dx, dy, VectorXd::Zero(0));
    r.status = SolveStatus::optimal;
    r.iterations = 0;
    r.residuals.primal = inf_norm(cc.A * dx - cc.b) / std::max(1.0, inf_norm(cc.b));
    r.residuals.dual =
        inf_norm(cc.pdiag.cwiseProduct(dx) + cc.c + cc.A.transpose() * dy) /
        std::max(1.0, inf_norm(cc.c));
    r.residuals.gap = 0.0;
    return r;
  }

  VectorXd e = unit_e(L);
  VectorXd x(n), y(me), s(mi), z(mi);

  {
    // Initial point: one KKT solve with identity scaling, then a push into the
    // cone interior.
    Scaling sc;
    sc.wpos = VectorXd::Ones(L.n_pos);
    for (size_t k = 0; k < L.off.size(); ++k) {
      sc.Wb.push_back(MatrixXd::Identity(L.dim[k], L.dim[k]));
      sc.Winvb.push_back(MatrixXd::Identity(L.dim[k], L.dim[k]));
      sc.W2b.push_back(MatrixXd::Identity(L.dim[k], L.dim[k]));
    }
    factor_escalating(sc);
    VectorXd dx, dy, dz;
    kkt.solve(sc, -cc.c, cc.b, cc.h, dx, dy, dz);
    x = dx;
    y = dy;
    VectorXd zh = dz;
    s = -zh;
    z = zh;
    double ms = cone_margin(L, s);
    if (ms <= 0) s += (1.0 - ms) * e;
    double mz = cone_margin(L, z);
    if (mz <= 0) z += (1.0 - mz) * e;

    if (warm) {
      if (!warm->x.empty()) {
        for (int v = 0; v < cc.n_user; ++v) x[v] = warm->x[static_cast<size_t>(v)];
        for (size_t m = 0; m < p.rank_terms.size(); ++m) {
          const auto& rt = p.rank_terms[m];
          double a = rt.offset;
          for (auto [v, coef] : rt.coeffs) a += coef * warm->x[static_cast<size_t>(v)];
          x[cc.n_user + static_cast<int>(m)] = a;
        }
        s = interiorize(L, cc.h - cc.G * x, e);
      }
      if (!warm->y.empty()) {
        for (int r = 0; r < cc.m_user_rows; ++r) y[r] = warm->y[static_cast<size_t>(r)];
        for (size_t m = 0; m < p.rank_terms.size(); ++m)
          y[cc.m_user_rows + static_cast<int>(m)] =
              cc.pdiag[cc.n_user + static_cast<int>(m)] *
              x[cc.n_user + static_cast<int>(m)];
      }
      bool any_dual = !warm->mu_lower.empty() || !warm->mu_upper.empty() ||
                      !warm->cone_duals.empty();
      if (any_dual) {
        VectorXd zw = VectorXd::Ones(mi);
        for (size_t k = 0; k < L.off.size(); ++k) {
          zw.segment(L.off[k], L.dim[k]).setZero();
          zw[L.off[k]] = 1.0;
        }
        for (int v = 0; v < cc.n_user; ++v) {
          if (cc.low_row[static_cast<size_t>(v)] >= 0 && !warm->mu_lower.empty())
            zw[cc.low_row[static_cast<size_t>(v)]] = warm->mu_lower[static_cast<size_t>(v)];
          if (cc.up_row[static_cast<size_t>(v)] >= 0 && !warm->mu_upper.empty())
            zw[cc.up_row[static_cast<size_t>(v)]] = warm->mu_upper[static_cast<size_t>(v)];
        }
        for (size_t k = 0; k < warm->cone_duals.size() && k < L.off.size(); ++k) {
          const auto& cd = warm->cone_duals[k];
          if (static_cast<int>(cd.size()) == L.dim[k])
            for (int i = 0; i < L.dim[k]; ++i) zw[L.off[k] + i] = cd[static_cast<size_t>(i)];
        }

        // A complete warm point already inside tolerance is returned as is;
        // iterating from it would only wander along any flat optimal face.
        if (!warm->x.empty() && !warm->y.empty()) {
          const VectorXd sw = cc.h - cc.G * x;
          const VectorXd rx = cc.pdiag.cwiseProduct(x) + cc.c +
                              cc.A.transpose() * y + cc.G.transpose() * zw;
          const VectorXd ry = cc.A * x - cc.b;
          const double pcost =
              0.5 * x.dot(cc.pdiag.cwiseProduct(x)) + cc.c.dot(x);
          const double pres = inf_norm(ry) / std::max(1.0, inf_norm(cc.b));
          const double dres = inf_norm(rx) / std::max(1.0, inf_norm(cc.c));
          const double relgap =
              std::abs(sw.dot(zw)) / std::max(1.0, std::abs(pcost));
          if (pres <= opts.tol && dres <= opts.tol && relgap <= opts.tol &&
              cone_margin(L, sw) >= -1e-9 && cone_margin(L, zw) >= -1e-9) {
            SolveResult r = extract(p, cc, x, y, zw);
            r.status = SolveStatus::optimal;
            r.iterations = 0;
            r.residuals.primal = pres;
            r.residuals.dual = dres;
            r.residuals.gap = relgap;
            return r;
          }
        }
        z = interiorize(L, zw, e);
      }
    }
  }

  const double resx0 = std::max(1.0, inf_norm(cc.c));
  const double resy0 = std::max(1.0, inf_norm(cc.b));
  const double resz0 = std::max(1.0, inf_norm(cc.h));
  const int deg = L.degree();

  SolveResult out;
  int it = 0;
  for (;; ++it) {
    VectorXd rx = cc.pdiag.cwiseProduct(x) + cc.c + cc.A.transpose() * y +
                  cc.G.transpose() * z;
    VectorXd ry = cc.A * x - cc.b;
    VectorXd rz = cc.G * x + s - cc.h;
    double gap = s.dot(z);
    double pcost = 0.5 * x.dot(cc.pdiag.cwiseProduct(x)) + cc.c.dot(x);
    double pres = std::max(inf_norm(ry) / resy0, inf_norm(rz) / resz0);
    double dres = inf_norm(rx) / resx0;
    double relgap = gap / std::max(1.0, std::abs(pcost));

    if (opts.verbose)
      std::printf("it %3d  pcost % .6e  gap %.3e  pres %.3e  dres %.3e\n", it, pcost,
                  gap, pres, dres);

    out.residuals.primal = pres;
    out.residuals.dual = dres;
    out.residuals.gap = relgap;
    out.iterations = it;

    if (pres <= opts.tol && dres <= opts.tol && relgap <= opts.tol) {
      out.status = SolveStatus::optimal;
      break;
    }
    if (it >= opts.max_iter) {
      out.status = SolveStatus::max_iter;
      break;
    }

    // Ray-based certificates: a dual ray proves primal infeasibility, a
    // diverging primal objective signals dual infeasibility.
    if (it >= 3) {
      double nrm = std::max({1.0, inf_norm(y), inf_norm(z)});
      double certval = cc.b.dot(y) + cc.h.dot(z);
      double certres = inf_norm(cc.A.transpose() * y + cc.G.transpose() * z);
      if (certval < -1e-8 * nrm && certres <= 1e-8 * nrm) {
        out.status = SolveStatus::infeasible;
        break;
      }
      if (pcost < -1e13) {
        out.status = SolveStatus::infeasible;
        break;
      }
    }

    Scaling sc = compute_scaling(L, s, z);
    bool ok = kkt.factor(sc);
    while (!ok && kkt.delta < 1e-3) {
      kkt.delta *= 10;
      ok = kkt.factor(sc);
    }
    if (!ok) {
      out.status = SolveStatus::max_iter;
      break;
    }

    double mu = gap / deg;
    VectorXd dx, dy, dz;

    kkt.solve(sc, -rx, -ry, -rz + s, dx, dy, dz);
    VectorXd ds = -s - mul_W2(L, sc, dz);
    double a_aff =
        std::min({1.0, step_to_boundary(L, s, ds), step_to_boundary(L, z, dz)});
    double gap_aff = (s + a_aff * ds).dot(z + a_aff * dz);
    double sigma = std::clamp(std::pow(std::max(gap_aff, 0.0) / gap, 3.0), 0.0, 1.0);

    VectorXd corr = jordan_prod(L, mul_Winv(L, sc, ds), mul_W(L, sc, dz));
    VectorXd dtar =
        -jordan_prod(L, sc.lambda, sc.lambda) - corr + sigma * mu * e;
    VectorXd u = jordan_div(L, sc.lambda, dtar);
    kkt.solve(sc, -rx, -ry, -rz - mul_W(L, sc, u), dx, dy, dz);
    ds = mul_W(L, sc, u - mul_W(L, sc, dz));

    double amax = std::min(step_to_boundary(L, s, ds), step_to_boundary(L, z, dz));
    double alpha = std::min(1.0, 0.99 * amax);
    if (!(alpha > 1e-13)) {
      out.status = SolveStatus::max_iter;
      break;
    }
    x += alpha * dx;
    y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
  }

  SolveResult r = extract(p, cc, x, y, z);
  r.status = out.status;
  r.iterations = out.iterations;
  r.residuals = out.residuals;
  return r;
}

KktReport check_kkt(const ConicProgram& p, const SolveResult& r) {
  KktReport rep;
  const auto& x = r.x;
  std::vector<double> g = p.objective_gradient(x);
  for (int i = 0; i < p.n_rows(); ++i)
    for (auto [v, c] : p.rows[static_cast<size_t>(i)].coeffs)
      g[static_cast<size_t>(v)] += r.y[static_cast<size_t>(i)] * c;
  for (int v = 0; v < p.n_vars(); ++v) {
    size_t u = static_cast<size_t>(v);
    g[u] += r.mu_upper[u] - r.mu_lower[u];
  }
  for (int k = 0; k < p.n_cones(); ++k) {
    const auto& mem = p.cones[static_cast<size_t>(k)].members;
    for (size_t i = 0; i < mem.size(); ++i)
      g[static_cast<size_t>(mem[i])] -= r.cone_duals[static_cast<size_t>(k)][i];
  }
  for (double gv : g) rep.stationarity = std::max(rep.stationarity, std::abs(gv));

  for (int i = 0; i < p.n_rows(); ++i) {
    const auto& row = p.rows[static_cast<size_t>(i)];
    double a = -row.rhs;
    for (auto [v, c] : row.coeffs) a += c * x[static_cast<size_t>(v)];
    rep.primal_feasibility = std::max(rep.primal_feasibility, std::abs(a));
  }
  for (int v = 0; v < p.n_vars(); ++v) {
    size_t u = static_cast<size_t>(v);
    if (std::isfinite(p.lower[u]))
      rep.primal_feasibility = std::max(rep.primal_feasibility, p.lower[u] - x[u]);
    if (std::isfinite(p.upper[u]))
      rep.primal_feasibility = std::max(rep.primal_feasibility, x[u] - p.upper[u]);
  }
  auto tail_norm = [](const std::vector<double>& v, const std::vector<int>& mem,
                      const std::vector<double>* direct) {
    double ss = 0;
    for (size_t i = 1; i < mem.size(); ++i) {
      double t = direct ? (*direct)[i] : v[static_cast<size_t>(mem[i])];
      ss += t * t;
    }
    return std::sqrt(ss);
  };
  for (int k = 0; k < p.n_cones(); ++k) {
    const auto& mem = p.cones[static_cast<size_t>(k)].members;
    double head = x[static_cast<size_t>(mem[0])];
    rep.primal_feasibility =
        std::max(rep.primal_feasibility, tail_norm(x, mem, nullptr) - head);
  }

  for (int v = 0; v < p.n_vars(); ++v) {
    size_t u = static_cast<size_t>(v);
    rep.dual_cone_feasibility = std::max(rep.dual_cone_feasibility, -r.mu_lower[u]);
    rep.dual_cone_feasibility = std::max(rep.dual_cone_feasibility, -r.mu_upper[u]);
  }
  for (int k = 0; k < p.n_cones(); ++k) {
    const auto& mem = p.cones[static_cast<size_t>(k)].members;
    const auto& zk = r.cone_duals[static_cast<size_t>(k)];
    rep.dual_cone_feasibility =
        std::max(rep.dual_cone_feasibility, tail_norm({}, mem, &zk) - zk[0]);
  }

  for (int v = 0; v < p.n_vars(); ++v) {
    size_t u = static_cast<size_t>(v);
    if (std::isfinite(p.lower[u]))
      rep.complementarity =
          std::max(rep.complementarity, std::abs(r.mu_lower[u] * (x[u] - p.lower[u])));
    if (std::isfinite(p.upper[u]))
      rep.complementarity =
          std::max(rep.complementarity, std::abs(r.mu_upper[u] * (p.upper[u] - x[u])));
  }
  for (int k = 0; k < p.n_cones(); ++k) {
    const auto& mem = p.cones[static_cast<size_t>(k)].members;
    const auto& zk = r.cone_duals[static_cast<size_t>(k)];
    double ip = 0;
    for (size_t i = 0; i < mem.size(); ++i) ip += x[static_cast<size_t>(mem[i])] * zk[i];
    rep.complementarity = std::max(rep.complementarity, std::abs(ip));
  }
  return rep;
}

}  // namespace gridarb::conic
