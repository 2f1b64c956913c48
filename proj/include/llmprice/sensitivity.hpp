#pragma once

#include <span>
#include <string>
#include <vector>

#include "llmprice/equilibrium.hpp"

namespace llmprice {

// A scalar market parameter the equilibrium can be differentiated against.
struct Param {
  enum class Kind { kWeightQ, kWeightD, kBias, kPrice, kCapacity, kLogCapacity, kDelay };
  Kind kind = Kind::kWeightQ;
  int provider = -1;
  int user = -1;

  static Param weight_q() { return {Kind::kWeightQ}; }
  static Param weight_d() { return {Kind::kWeightD}; }
  static Param bias(int j) { return {Kind::kBias, j}; }
  static Param price(int j) { return {Kind::kPrice, j}; }
  static Param capacity(int j) { return {Kind::kCapacity, j}; }
  static Param log_capacity(int j) { return {Kind::kLogCapacity, j}; }
  static Param delay(int i, int j) { return {Kind::kDelay, j, i}; }

  std::string name() const;
};

// Returns a copy of `market` with the parameter shifted by `delta` (in the
// parameter's own coordinate, so log-capacity shifts multiply capacity).
Market perturb(const Market& market, const Param& p, double delta);
double value_of(const Market& market, const Param& p);

using ActiveMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct EquilibriumJacobian {
  Param wrt;
  Eigen::MatrixXd d_flow;  // n x m, zero outside the active set
  ActiveMask active_set;
  bool degenerate = false;  // one-sided derivative from the current active set
};

struct SensitivityOptions {
  double complementarity_margin = 1e-7;
  // Degenerate points return the active-set derivative with a flag instead of
  // throwing BoundaryPointError.
  bool allow_degenerate = false;
};

// Bordered KKT system [H A'; A 0] on the active coordinates of an
// equilibrium, factorised once and reused for every parameter.
class KktSystem {
 public:
  KktSystem(const EquilibriumResult& result, const Market& market,
            const SensitivityOptions& options = {});

  bool degenerate() const { return degenerate_; }
  const ActiveMask& active_set() const { return active_; }
  int active_count() const { return static_cast<int>(coords_.size()); }

  Eigen::MatrixXd d_flow(const Param& p) const;

  // Chain rule through the equilibrium by one adjoint solve:
  // out[k] = sum_ij loss_grad_flow(i,j) * d f*_ij / d wrt[k].
  Eigen::VectorXd gradient(const Eigen::MatrixXd& loss_grad_flow, std::span<const Param> wrt) const;

 private:
  Eigen::VectorXd rhs(const Param& p) const;  // d(grad Phi)/dp on active coordinates

  Market market_;
  FlowMatrix flow_;
  Eigen::VectorXd load_;
  ActiveMask active_;
  std::vector<std::pair<int, int>> coords_;
  int rows_ = 0;
  bool degenerate_ = false;
  Eigen::FullPivLU<Eigen::MatrixXd> lu_;
};

// Throws BoundaryPointError at degenerate points unless allowed in options,
// DegenerateError when the bordered system is singular.
EquilibriumJacobian equilibrium_jacobian(const EquilibriumResult& result, const Market& market,
                                         const Param& wrt, const SensitivityOptions& options = {});

struct LossGradient {
  Eigen::VectorXd gradient;
  bool subgradient = false;  // evaluated at a degenerate point
};

LossGradient loss_gradient(const Eigen::MatrixXd& loss_grad_flow, const EquilibriumResult& result,
                           const Market& market, std::span<const Param> wrt);

}  // namespace llmprice
