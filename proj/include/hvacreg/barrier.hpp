#pragma once

// Log-barrier interior-point method for small smooth convex programs
//
//   minimize cᵀx  subject to  g_i(x) ≤ 0
//
// where every g_i is an affine function plus at most one of
//   * an exp-LSE term  exp(½ ln(A² + B² e^{2ρ}) + λ y + γ)
//   * a scaled norm    κ √(c₀² + Σ_k (b_k x_k)²)
//
// Variables are laid out as a few "global" variables followed by independent
// blocks; every constraint touches the globals and at most one block, so the
// Newton system is block-arrow shaped and solved by a Schur complement.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "hvacreg/errors.hpp"

namespace hvacreg {

struct SolverConfig {
  double t0 = 1.0;
  double growth = 10.0;
  double newton_tol = 1e-10;  ///< stop centering when λ²/2 ≤ tol
  int max_newton_per_centering = 200;
  int max_newton_total = 20000;
  double ls_alpha = 0.25;
  double ls_beta = 0.5;
  double feasibility_tol = 1e-7;
  double gap_tol = 1e-8;  ///< relative barrier gap m/t

  void validate() const {
    if (!(growth > 1.0)) throw ParameterError("solver: growth factor must be > 1");
    if (!(t0 > 0.0 && newton_tol > 0.0 && feasibility_tol > 0.0 && gap_tol > 0.0))
      throw ParameterError("solver: tolerances must be > 0");
    if (!(ls_alpha > 0.0 && ls_alpha < 0.5 && ls_beta > 0.0 && ls_beta < 1.0))
      throw ParameterError("solver: backtracking parameters out of range");
  }
};

/// φ(ρ) = ½ ln(A² + B² e^{2ρ}); rho_idx < 0 makes φ constant.
struct PhiGroup {
  int rho_idx = -1;
  double a2 = 0.0;
  double b2 = 0.0;
};

struct ProgramRow {
  std::vector<std::pair<int, double>> linear;
  double constant = 0.0;
  // exp-LSE term (group < 0: absent)
  int group = -1;
  int y_idx = -1;
  double lambda = 0.0;
  double gamma = 0.0;
  // norm term (kappa == 0: absent)
  double kappa = 0.0;
  double c0sq = 0.0;
  std::vector<std::pair<int, double>> soc;
  std::string tag;
};

struct ConvexProgram {
  std::size_t num_globals = 0;
  std::vector<std::size_t> block_sizes;
  Eigen::VectorXd objective;  ///< linear objective over all variables
  std::vector<PhiGroup> groups;
  std::vector<ProgramRow> rows;
  Eigen::VectorXd x0;

  std::size_t num_vars() const {
    std::size_t n = num_globals;
    for (auto b : block_sizes) n += b;
    return n;
  }
};

enum class SolveStatus { optimal, infeasible, numerical_failure };

inline std::string to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::numerical_failure: return "numerical_failure";
  }
  return "?";
}

inline SolveStatus parse_solve_status(const std::string& s) {
  if (s == "optimal") return SolveStatus::optimal;
  if (s == "infeasible") return SolveStatus::infeasible;
  if (s == "numerical_failure") return SolveStatus::numerical_failure;
  throw ParseError("unknown solve status '" + s + "'", 0);
}

struct KktResiduals {
  double stationarity = 0.0;  ///< ‖c + Σ λ_i ∇g_i‖_∞ / max(1, ‖c‖_∞)
  double primal = 0.0;        ///< max(0, max_i g_i)
  double gap = 0.0;           ///< Σ μ_i (−g_i) in objective units
};

struct BarrierResult {
  SolveStatus status = SolveStatus::numerical_failure;
  Eigen::VectorXd x;
  double objective = 0.0;
  double t = 0.0;
  int newton_iterations = 0;
  int phase1_iterations = 0;
  bool relaxed = false;  ///< solved on constraints relaxed by ≤ feasibility_tol
  double phase1_value = 0.0;
  KktResiduals kkt;
  std::string message;
};

namespace detail {

inline constexpr int kMaxLocal = 24;

struct LocalDerivs {
  int n = 0;
  std::array<int, kMaxLocal> idx{};
  std::array<double, kMaxLocal> grad{};
  std::array<double, kMaxLocal * kMaxLocal> hess{};
  double value = 0.0;
};

struct PhiValue {
  double phi = 0.0, d1 = 0.0, d2 = 0.0;
};

inline PhiValue eval_phi(const PhiGroup& g, const Eigen::VectorXd& x) {
  PhiValue v;
  if (g.b2 <= 0.0 || g.rho_idx < 0) {
    const double inner = g.a2 + (g.rho_idx < 0 ? g.b2 : 0.0);
    v.phi = inner > 0.0 ? 0.5 * std::log(inner) : -std::numeric_limits<double>::infinity();
    return v;
  }
  const double rho = x[g.rho_idx];
  if (g.a2 <= 0.0) {
    v.phi = 0.5 * std::log(g.b2) + rho;
    v.d1 = 1.0;
    return v;
  }
  const double u = std::log(g.a2);
  const double w2 = std::log(g.b2) + 2.0 * rho;
  const double mx = std::max(u, w2);
  const double lse = mx + std::log(std::exp(u - mx) + std::exp(w2 - mx));
  const double w = std::exp(w2 - lse);
  v.phi = 0.5 * lse;
  v.d1 = w;
  v.d2 = 2.0 * w * (1.0 - w);
  return v;
}

/// Precomputed local index structure of one row.
struct RowLayout {
  std::vector<int> touched;  // sorted variable indices
  std::vector<int> lin_pos;
  int rho_pos = -1;
  int y_pos = -1;
  std::vector<int> soc_pos;
};

inline double row_value(const ProgramRow& r, const std::vector<PhiValue>& phis, const Eigen::VectorXd& x) {
  double v = r.constant;
  for (const auto& [i, a] : r.linear) v += a * x[i];
  if (r.group >= 0) {
    const double phi = phis[static_cast<std::size_t>(r.group)].phi;
    if (std::isfinite(phi)) v += std::exp(phi + (r.y_idx >= 0 ? r.lambda * x[r.y_idx] : 0.0) + r.gamma);
  }
  if (r.kappa != 0.0) {
    double s = r.c0sq;
    for (const auto& [i, b] : r.soc) s += b * b * x[i] * x[i];
    v += r.kappa * std::sqrt(s);
  }
  return v;
}

inline void row_derivs(const ProgramRow& r, const RowLayout& lay, const std::vector<PhiGroup>& groups,
                       const std::vector<PhiValue>& phis, const Eigen::VectorXd& x, LocalDerivs& out) {
  const int n = static_cast<int>(lay.touched.size());
  out.n = n;
  for (int a = 0; a < n; ++a) {
    out.idx[static_cast<std::size_t>(a)] = lay.touched[static_cast<std::size_t>(a)];
    out.grad[static_cast<std::size_t>(a)] = 0.0;
  }
  std::fill(out.hess.begin(), out.hess.begin() + n * kMaxLocal, 0.0);
  double v = r.constant;
  for (std::size_t k = 0; k < r.linear.size(); ++k) {
    v += r.linear[k].second * x[r.linear[k].first];
    out.grad[static_cast<std::size_t>(lay.lin_pos[k])] += r.linear[k].second;
  }
  auto H = [&](int a, int b) -> double& { return out.hess[static_cast<std::size_t>(a * kMaxLocal + b)]; };
  if (r.group >= 0) {
    const auto& pv = phis[static_cast<std::size_t>(r.group)];
    if (std::isfinite(pv.phi)) {
      const double e = std::exp(pv.phi + (r.y_idx >= 0 ? r.lambda * x[r.y_idx] : 0.0) + r.gamma);
      v += e;
      const bool has_rho = groups[static_cast<std::size_t>(r.group)].rho_idx >= 0 && lay.rho_pos >= 0;
      if (has_rho) {
        out.grad[static_cast<std::size_t>(lay.rho_pos)] += e * pv.d1;
        H(lay.rho_pos, lay.rho_pos) += e * (pv.d1 * pv.d1 + pv.d2);
      }
      if (lay.y_pos >= 0) {
        out.grad[static_cast<std::size_t>(lay.y_pos)] += e * r.lambda;
        H(lay.y_pos, lay.y_pos) += e * r.lambda * r.lambda;
        if (has_rho) {
          H(lay.rho_pos, lay.y_pos) += e * pv.d1 * r.lambda;
          H(lay.y_pos, lay.rho_pos) += e * pv.d1 * r.lambda;
        }
      }
    }
  }
  if (r.kappa != 0.0) {
    double s = r.c0sq;
    for (const auto& [i, b] : r.soc) s += b * b * x[i] * x[i];
    const double nrm = std::sqrt(s);
    v += r.kappa * nrm;
    if (nrm > 0.0) {
      for (std::size_t k = 0; k < r.soc.size(); ++k) {
        const int pk = lay.soc_pos[k];
        const double bk2 = r.soc[k].second * r.soc[k].second;
        const double gk = bk2 * x[r.soc[k].first];
        out.grad[static_cast<std::size_t>(pk)] += r.kappa * gk / nrm;
        H(pk, pk) += r.kappa * bk2 / nrm;
        for (std::size_t m = 0; m < r.soc.size(); ++m) {
          const int pm = lay.soc_pos[m];
          const double gm = r.soc[m].second * r.soc[m].second * x[r.soc[m].first];
          H(pk, pm) -= r.kappa * gk * gm / (nrm * nrm * nrm);
        }
      }
    }
  }
  out.value = v;
}

}  // namespace detail

/// Evaluates all rows of a program at x (used by the solver and by tests).
class ProgramEvaluator {
 public:
  explicit ProgramEvaluator(const ConvexProgram& p) : prog_(&p) {
    const std::size_t n = p.num_vars();
    block_of_.assign(n, -1);
    local_of_.assign(n, 0);
    for (std::size_t i = 0; i < p.num_globals; ++i) local_of_[i] = static_cast<int>(i);
    std::size_t off = p.num_globals;
    for (std::size_t b = 0; b < p.block_sizes.size(); ++b) {
      block_offsets_.push_back(off);
      for (std::size_t k = 0; k < p.block_sizes[b]; ++k) {
        block_of_[off + k] = static_cast<int>(b);
        local_of_[off + k] = static_cast<int>(k);
      }
      off += p.block_sizes[b];
    }
    layouts_.reserve(p.rows.size());
    row_block_.reserve(p.rows.size());
    for (const auto& r : p.rows) {
      detail::RowLayout lay;
      std::vector<int> all;
      for (const auto& [i, a] : r.linear) all.push_back(i);
      if (r.group >= 0) {
        if (static_cast<std::size_t>(r.group) >= p.groups.size()) throw ParameterError("program: bad phi group");
        const int rho = p.groups[static_cast<std::size_t>(r.group)].rho_idx;
        if (rho >= 0) all.push_back(rho);
        if (r.y_idx >= 0) all.push_back(r.y_idx);
      }
      for (const auto& [i, b] : r.soc) all.push_back(i);
      std::sort(all.begin(), all.end());
      all.erase(std::unique(all.begin(), all.end()), all.end());
      if (all.size() > static_cast<std::size_t>(detail::kMaxLocal))
        throw ParameterError("program: row touches too many variables");
      int block = -1;
      for (int i : all) {
        if (i < 0 || static_cast<std::size_t>(i) >= n) throw ParameterError("program: variable index out of range");
        const int b = block_of_[static_cast<std::size_t>(i)];
        if (b >= 0) {
          if (block >= 0 && block != b) throw ParameterError("program: row touches two blocks");
          block = b;
        }
      }
      lay.touched = all;
      auto pos = [&](int i) {
        return static_cast<int>(std::lower_bound(all.begin(), all.end(), i) - all.begin());
      };
      for (const auto& [i, a] : r.linear) lay.lin_pos.push_back(pos(i));
      if (r.group >= 0) {
        const int rho = p.groups[static_cast<std::size_t>(r.group)].rho_idx;
        if (rho >= 0) lay.rho_pos = pos(rho);
        if (r.y_idx >= 0) lay.y_pos = pos(r.y_idx);
      }
      for (const auto& [i, b] : r.soc) lay.soc_pos.push_back(pos(i));
      layouts_.push_back(std::move(lay));
      row_block_.push_back(block);
    }
  }

  const ConvexProgram& program() const { return *prog_; }

  void phis(const Eigen::VectorXd& x, std::vector<detail::PhiValue>& out) const {
    out.resize(prog_->groups.size());
    for (std::size_t g = 0; g < prog_->groups.size(); ++g) out[g] = detail::eval_phi(prog_->groups[g], x);
  }

  /// g_i(x) for every row.
  void values(const Eigen::VectorXd& x, std::vector<double>& out) const {
    phis(x, phi_cache_);
    out.resize(prog_->rows.size());
    for (std::size_t i = 0; i < prog_->rows.size(); ++i) out[i] = detail::row_value(prog_->rows[i], phi_cache_, x);
  }

  double max_value(const Eigen::VectorXd& x) const {
    std::vector<double> v;
    values(x, v);
    return v.empty() ? -std::numeric_limits<double>::infinity() : *std::max_element(v.begin(), v.end());
  }

  void derivs(std::size_t row, const std::vector<detail::PhiValue>& phis, const Eigen::VectorXd& x,
              detail::LocalDerivs& out) const {
    detail::row_derivs(prog_->rows[row], layouts_[row], prog_->groups, phis, x, out);
  }

  /// Dense gradient and Hessian of row i (for tests).
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> dense_derivs(std::size_t row, const Eigen::VectorXd& x) const {
    std::vector<detail::PhiValue> ph;
    phis(x, ph);
    detail::LocalDerivs d;
    derivs(row, ph, x, d);
    const auto n = static_cast<Eigen::Index>(prog_->num_vars());
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < d.n; ++a) {
      g[d.idx[static_cast<std::size_t>(a)]] += d.grad[static_cast<std::size_t>(a)];
      for (int b = 0; b < d.n; ++b)
        h(d.idx[static_cast<std::size_t>(a)], d.idx[static_cast<std::size_t>(b)]) +=
            d.hess[static_cast<std::size_t>(a * detail::kMaxLocal + b)];
    }
    return {g, h};
  }

  int block_of(int var) const { return block_of_[static_cast<std::size_t>(var)]; }
  int local_of(int var) const { return local_of_[static_cast<std::size_t>(var)]; }
  int row_block(std::size_t row) const { return row_block_[row]; }

 private:
  const ConvexProgram* prog_;
  std::vector<int> block_of_;
  std::vector<int> local_of_;
  std::vector<std::size_t> block_offsets_;
  std::vector<detail::RowLayout> layouts_;
  std::vector<int> row_block_;
  mutable std::vector<detail::PhiValue> phi_cache_;
};

namespace detail {

/// Sequential-centering barrier method from a strictly feasible x.
class BarrierEngine {
 public:
  BarrierEngine(const ConvexProgram& prog, const SolverConfig& cfg) : prog_(prog), eval_(prog), cfg_(cfg) {
    const auto G = static_cast<Eigen::Index>(prog.num_globals);
    hgg_.resize(G, G);
    for (auto b : prog.block_sizes) {
      const auto J = static_cast<Eigen::Index>(b);
      hbb_.emplace_back(J, J);
      hgb_.emplace_back(G, J);
    }
    cscale_ = std::max(1.0, prog.objective.cwiseAbs().maxCoeff());
    c_ = prog.objective / cscale_;
  }

  struct Outcome {
    bool ok = false;
    bool stopped_early = false;
    Eigen::VectorXd x;
    double t = 0.0;
    int iterations = 0;
    std::string message;
  };

  /// early_stop(x, t) is consulted after every Newton step and after every centering.
  template <class EarlyStop>
  Outcome run(Eigen::VectorXd x, EarlyStop&& early_stop) {
    Outcome out;
    const double m = static_cast<double>(prog_.rows.size());
    double t = cfg_.t0;
    double growth = cfg_.growth;
    int total = 0;
    bool restarted = false;
    Eigen::VectorXd last_center = x;
    double last_t = t;
    for (;;) {
      const auto cen = center(x, t, total, early_stop);
      if (cen == Center::early) {
        out.ok = true;
        out.stopped_early = true;
        break;
      }
      if (cen == Center::failed) {
        if (!restarted && t > cfg_.t0) {
          // Restart from the previous center with a gentler schedule.
          restarted = true;
          x = last_center;
          t = last_t;
          growth = std::sqrt(growth);
          t *= growth;
          continue;
        }
        const double obj = std::abs(c_.dot(x));
        if (m / t <= 1e-5 * std::max(1.0, obj)) {
          out.ok = true;  // stalled late: accept at reduced accuracy
          out.message = "centering stalled at gap " + std::to_string(m / t);
          break;
        }
        out.ok = false;
        out.message = "centering failed";
        break;
      }
      if (early_stop(x, t, true)) {
        out.ok = true;
        out.stopped_early = true;
        break;
      }
      last_center = x;
      last_t = t;
      if (m / t < cfg_.gap_tol * std::max(1.0, std::abs(c_.dot(x)))) {
        out.ok = true;
        break;
      }
      if (total >= cfg_.max_newton_total) {
        out.ok = false;
        out.message = "newton iteration budget exhausted";
        break;
      }
      t *= growth;
    }
    out.x = x;
    out.t = t;
    out.iterations = total;
    return out;
  }

  const ProgramEvaluator& evaluator() const { return eval_; }
  double objective_scale() const { return cscale_; }

  /// Multipliers μ_i = (1 + ∇g_iᵀΔx/(−g_i)) / (t·(−g_i)) with Δx the Newton
  /// step at x; they satisfy stationarity up to second-order terms.
  KktResiduals kkt(const Eigen::VectorXd& x, double t) {
    KktResiduals k;
    const auto n = static_cast<Eigen::Index>(prog_.num_vars());
    Eigen::VectorXd grad(n), dx = Eigen::VectorXd::Zero(n);
    assemble(x, t, grad);
    if (!solve_newton(grad, dx)) dx.setZero();
    std::vector<PhiValue> ph;
    eval_.phis(x, ph);
    Eigen::VectorXd r = c_;
    LocalDerivs d;
    double gap = 0.0;
    for (std::size_t i = 0; i < prog_.rows.size(); ++i) {
      eval_.derivs(i, ph, x, d);
      k.primal = std::max(k.primal, d.value);
      const double neg = std::max(-d.value, std::numeric_limits<double>::min());
      double dg = 0.0;
      for (int a = 0; a < d.n; ++a) dg += d.grad[static_cast<std::size_t>(a)] * dx[d.idx[static_cast<std::size_t>(a)]];
      const double mu = std::max(0.0, (1.0 + dg / neg) / (t * neg));
      gap += mu * neg;
      for (int a = 0; a < d.n; ++a) r[d.idx[static_cast<std::size_t>(a)]] += mu * d.grad[static_cast<std::size_t>(a)];
    }
    k.primal = std::max(0.0, k.primal);
    k.stationarity = r.cwiseAbs().maxCoeff() / std::max(c_.cwiseAbs().maxCoeff(), 1e-300);
    k.gap = gap * cscale_;
    return k;
  }

 private:
  enum class Center { done, early, failed };

  template <class EarlyStop>
  Center center(Eigen::VectorXd& x, double t, int& total, EarlyStop& early_stop) {
    const auto n = static_cast<Eigen::Index>(prog_.num_vars());
    Eigen::VectorXd grad(n), dx(n), xn(n);
    std::vector<double> gv, gv_new;
    eval_.values(x, gv);
    double prev_lambda2 = std::numeric_limits<double>::infinity();
    for (int it = 0; it < cfg_.max_newton_per_centering; ++it) {
      if (total >= cfg_.max_newton_total) return Center::failed;
      assemble(x, t, grad);
      if (!solve_newton(grad, dx)) return Center::failed;
      const double lambda2 = -grad.dot(dx);
      if (!(lambda2 >= 0.0) || !std::isfinite(lambda2)) return Center::failed;
      if (lambda2 / 2.0 <= cfg_.newton_tol) return Center::done;
      // Rounding floor: the decrement stopped shrinking although it is already tiny.
      if (lambda2 < kNoiseDecrement && lambda2 > 0.25 * prev_lambda2) return Center::done;
      prev_lambda2 = lambda2;
      ++total;
      const double slope = grad.dot(dx);
      double step = 1.0;
      double first_feasible = 0.0;
      bool accepted = false;
      while (step > 1e-20) {
        xn = x + step * dx;
        eval_.values(xn, gv_new);
        bool feasible = true;
        double dphi = t * step * c_.dot(dx);
        for (std::size_t i = 0; i < gv_new.size(); ++i) {
          if (!(gv_new[i] < 0.0)) {
            feasible = false;
            break;
          }
          dphi -= std::log(gv_new[i] / gv[i]);
        }
        if (feasible && first_feasible == 0.0) first_feasible = step;
        if (feasible && dphi <= cfg_.ls_alpha * step * slope) {
          accepted = true;
          break;
        }
        step *= cfg_.ls_beta;
      }
      if (!accepted) {
        // Inside the quadratic region the Armijo test is dominated by rounding;
        // take the longest feasible step instead.
        if (lambda2 < kPureNewtonDecrement && first_feasible > 0.0) {
          xn = x + first_feasible * dx;
          eval_.values(xn, gv_new);
        } else {
          return lambda2 / 2.0 < kNoiseDecrement ? Center::done : Center::failed;
        }
      }
      x = xn;
      gv.swap(gv_new);
      if (early_stop(x, t, false)) return Center::early;
    }
    return Center::done;
  }

  static constexpr double kNoiseDecrement = 1e-6;
  static constexpr double kPureNewtonDecrement = 1e-4;

  void assemble(const Eigen::VectorXd& x, double t, Eigen::VectorXd& grad) {
    grad = t * c_;
    hgg_.setZero();
    for (auto& h : hbb_) h.setZero();
    for (auto& h : hgb_) h.setZero();
    eval_.phis(x, phis_);
    LocalDerivs d;
    const auto G = static_cast<int>(prog_.num_globals);
    for (std::size_t i = 0; i < prog_.rows.size(); ++i) {
      eval_.derivs(i, phis_, x, d);
      const double neg = -d.value;
      const double inv = 1.0 / neg;
      const double inv2 = inv * inv;
      const int blk = eval_.row_block(i);
      for (int a = 0; a < d.n; ++a) {
        const int ia = d.idx[static_cast<std::size_t>(a)];
        const double ga = d.grad[static_cast<std::size_t>(a)];
        grad[ia] += ga * inv;
        for (int b = 0; b < d.n; ++b) {
          const int ib = d.idx[static_cast<std::size_t>(b)];
          const double h = ga * d.grad[static_cast<std::size_t>(b)] * inv2 +
                           d.hess[static_cast<std::size_t>(a * kMaxLocal + b)] * inv;
          if (h == 0.0) continue;
          const bool ga_glob = ia < G, gb_glob = ib < G;
          if (ga_glob && gb_glob) {
            hgg_(ia, ib) += h;
          } else if (ga_glob && !gb_glob) {
            hgb_[static_cast<std::size_t>(blk)](ia, eval_.local_of(ib)) += h;
          } else if (!ga_glob && !gb_glob) {
            hbb_[static_cast<std::size_t>(blk)](eval_.local_of(ia), eval_.local_of(ib)) += h;
          }
        }
      }
    }
  }

  bool solve_newton(const Eigen::VectorXd& grad, Eigen::VectorXd& dx) {
    const auto G = static_cast<Eigen::Index>(prog_.num_globals);
    Eigen::MatrixXd S = hgg_;
    Eigen::VectorXd rg = -grad.head(G);
    std::vector<Eigen::LDLT<Eigen::MatrixXd>> facs;
    facs.reserve(hbb_.size());
    std::vector<Eigen::MatrixXd> hinv_bg;
    std::vector<Eigen::VectorXd> hinv_r;
    Eigen::Index off = G;
    for (std::size_t b = 0; b < hbb_.size(); ++b) {
      const auto J = hbb_[b].rows();
      Eigen::MatrixXd Hb = hbb_[b];
      regularize(Hb);
      facs.emplace_back(Hb);
      if (facs.back().info() != Eigen::Success) return false;
      const Eigen::VectorXd rb = -grad.segment(off, J);
      hinv_r.push_back(facs.back().solve(rb));
      if (G > 0) {
        hinv_bg.push_back(facs.back().solve(hgb_[b].transpose()));
        S.noalias() -= hgb_[b] * hinv_bg.back();
        rg.noalias() -= hgb_[b] * hinv_r.back();
      }
      off += J;
    }
    dx.resize(grad.size());
    Eigen::VectorXd dg(G);
    if (G > 0) {
      regularize(S);
      Eigen::LDLT<Eigen::MatrixXd> fs(S);
      if (fs.info() != Eigen::Success) return false;
      dg = fs.solve(rg);
      dx.head(G) = dg;
    }
    off = G;
    for (std::size_t b = 0; b < hbb_.size(); ++b) {
      const auto J = hbb_[b].rows();
      dx.segment(off, J) = G > 0 ? Eigen::VectorXd(hinv_r[b] - hinv_bg[b] * dg) : hinv_r[b];
      off += J;
    }
    return dx.allFinite();
  }

  static void regularize(Eigen::MatrixXd& h) {
    const double md = h.diagonal().cwiseAbs().maxCoeff();
    h.diagonal().array() += 1e-14 * std::max(md, 1.0);
  }

  const ConvexProgram& prog_;
  ProgramEvaluator eval_;
  SolverConfig cfg_;
  double cscale_ = 1.0;
  Eigen::VectorXd c_;
  Eigen::MatrixXd hgg_;
  std::vector<Eigen::MatrixXd> hbb_;
  std::vector<Eigen::MatrixXd> hgb_;
  std::vector<PhiValue> phis_;
};

}  // namespace detail

/// Phase I (if x0 is not strictly feasible) followed by the barrier method.
inline BarrierResult solve_barrier(const ConvexProgram& prog, const SolverConfig& cfg = {}) {
  cfg.validate();
  BarrierResult res;
  const auto n = static_cast<Eigen::Index>(prog.num_vars());
  if (prog.objective.size() != n || prog.x0.size() != n) throw ParameterError("program: dimension mismatch");

  ConvexProgram work = prog;
  Eigen::VectorXd x = prog.x0;
  const double max_g = ProgramEvaluator(prog).max_value(x);
  if (!(max_g < 0.0)) {
    // Phase I: minimize s subject to g_i(x) ≤ s, s ≥ −1. s is an extra global.
    ConvexProgram p1;
    const int G = static_cast<int>(prog.num_globals);
    const int s_idx = G;
    auto remap = [&](int i) { return i < G ? i : i + 1; };
    p1.num_globals = prog.num_globals + 1;
    p1.block_sizes = prog.block_sizes;
    p1.objective = Eigen::VectorXd::Zero(n + 1);
    p1.objective[s_idx] = 1.0;
    p1.groups = prog.groups;
    for (auto& g : p1.groups)
      if (g.rho_idx >= 0) g.rho_idx = remap(g.rho_idx);
    for (const auto& r : prog.rows) {
      ProgramRow q = r;
      for (auto& [i, a] : q.linear) i = remap(i);
      for (auto& [i, b] : q.soc) i = remap(i);
      if (q.y_idx >= 0) q.y_idx = remap(q.y_idx);
      q.linear.emplace_back(s_idx, -1.0);
      p1.rows.push_back(std::move(q));
    }
    ProgramRow floor_row;
    floor_row.linear.emplace_back(s_idx, -1.0);
    floor_row.constant = -1.0;
    p1.rows.push_back(floor_row);
    Eigen::VectorXd z(n + 1);
    for (Eigen::Index i = 0; i < n; ++i) z[remap(static_cast<int>(i))] = x[i];
    z[s_idx] = std::max(max_g, 0.0) + 1.0;
    p1.x0 = z;

    detail::BarrierEngine eng(p1, cfg);
    const double m1 = static_cast<double>(p1.rows.size());
    bool proven_infeasible = false;
    auto stop = [&](const Eigen::VectorXd& xz, double t, bool centered) {
      if (xz[s_idx] < -1e-3) return true;
      if (centered && xz[s_idx] - m1 / t > cfg.feasibility_tol) {
        proven_infeasible = true;
        return true;
      }
      return false;
    };
    const auto out = eng.run(z, stop);
    res.phase1_iterations = out.iterations;
    const double s = out.x[s_idx];
    res.phase1_value = s;
    Eigen::VectorXd xr(n);
    for (Eigen::Index i = 0; i < n; ++i) xr[i] = out.x[remap(static_cast<int>(i))];
    if (proven_infeasible || s > cfg.feasibility_tol) {
      res.status = SolveStatus::infeasible;
      res.x = xr;
      res.message = "phase I: minimum infeasibility " + std::to_string(s);
      return res;
    }
    if (!out.ok && !(s < 0.0)) {
      res.status = SolveStatus::numerical_failure;
      res.x = xr;
      res.message = "phase I: " + out.message;
      return res;
    }
    x = xr;
    const double mg = ProgramEvaluator(prog).max_value(x);
    if (!(mg < 0.0)) {
      // Feasible only within tolerance: solve on slightly relaxed constraints.
      const double relax = 0.5 * (std::max(mg, 0.0) + cfg.feasibility_tol) + 0.5 * std::max(mg, 0.0);
      for (auto& r : work.rows) r.constant -= relax;
      res.relaxed = true;
      if (!(ProgramEvaluator(work).max_value(x) < 0.0)) {
        res.status = SolveStatus::numerical_failure;
        res.x = x;
        res.message = "phase I point not strictly feasible after relaxation";
        return res;
      }
    }
  }

  detail::BarrierEngine eng(work, cfg);
  const auto out = eng.run(x, [](const Eigen::VectorXd&, double, bool) { return false; });
  res.newton_iterations = out.iterations;
  res.x = out.x;
  res.t = out.t;
  res.objective = prog.objective.dot(out.x);
  res.kkt = eng.kkt(out.x, out.t);
  res.status = out.ok ? SolveStatus::optimal : SolveStatus::numerical_failure;
  res.message = out.message;
  return res;
}

}  // namespace hvacreg
