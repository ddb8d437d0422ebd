#pragma once

// Deviance losses, links and the directional partial derivatives that drive
// the cyclic boosting of coefficient functions.
//
// All functions are templated on the scalar type so that they can be used
// with plain doubles, long doubles in tests, or Eigen array expressions via
// unaryExpr / binaryExpr.

#include <cmath>
#include <limits>
#include <string>
#include <string_view>

#include "tvcm/errors.hpp"

namespace tvcm {

enum class LinkKind { Identity, Log };
enum class LossKind { GaussianDeviance, PoissonDeviance };

struct LinkSpec {
  LinkKind kind = LinkKind::Identity;
  friend bool operator==(const LinkSpec&, const LinkSpec&) = default;
};

struct LossSpec {
  LossKind kind = LossKind::GaussianDeviance;
  friend bool operator==(const LossSpec&, const LossSpec&) = default;
};

inline constexpr LinkSpec kIdentityLink{LinkKind::Identity};
inline constexpr LinkSpec kLogLink{LinkKind::Log};
inline constexpr LossSpec kGaussianLoss{LossKind::GaussianDeviance};
inline constexpr LossSpec kPoissonLoss{LossKind::PoissonDeviance};

/// Lower bound applied to a Poisson mean inside loss evaluation only.
inline constexpr double kPoissonMuFloor = 1e-12;

std::string to_string(LinkSpec link);
std::string to_string(LossSpec loss);
LinkSpec parse_link(std::string_view name);
LossSpec parse_loss(std::string_view name);

/// Throws ContractError unless (loss, link) is Gaussian+Identity or
/// Poisson+Log.
void require_canonical_pair(LossSpec loss, LinkSpec link);

/// The link each loss is paired with.
inline LinkSpec canonical_link(LossSpec loss) {
  return loss.kind == LossKind::PoissonDeviance ? kLogLink : kIdentityLink;
}

namespace detail {

template <typename Scalar>
void check_weight(Scalar w) {
  if (!(w > Scalar(0))) {
    throw DomainError("loss weight must be positive, got " + std::to_string(static_cast<double>(w)));
  }
}

template <typename Scalar>
void check_poisson(Scalar mu, Scalar y) {
  if (!(mu > Scalar(0))) {
    throw DomainError("Poisson mean must be positive, got " + std::to_string(static_cast<double>(mu)));
  }
  if (!(y >= Scalar(0))) {
    throw DomainError("Poisson response must be non-negative, got " +
                      std::to_string(static_cast<double>(y)));
  }
}

template <typename Scalar>
Scalar checked_exp(Scalar eta) {
  const Scalar mu = std::exp(eta);
  if (!std::isfinite(static_cast<double>(mu))) {
    throw FitError("exp(eta) overflow at eta = " + std::to_string(static_cast<double>(eta)) +
                   "; the model state has diverged");
  }
  return mu;
}

}  // namespace detail

template <typename Scalar>
Scalar inverse_link(LinkSpec link, Scalar eta) {
  return link.kind == LinkKind::Log ? detail::checked_exp(eta) : eta;
}

template <typename Scalar>
Scalar inverse_link_deriv(LinkSpec link, Scalar eta) {
  return link.kind == LinkKind::Log ? detail::checked_exp(eta) : Scalar(1);
}

template <typename Scalar>
Scalar link_value(LinkSpec link, Scalar mu) {
  if (link.kind == LinkKind::Log) {
    if (!(mu > Scalar(0))) throw DomainError("log link needs a positive mean");
    return std::log(mu);
  }
  return mu;
}

/// Unit deviance scaled by the weight. Gaussian: w(y-mu)^2.
/// Poisson: 2w(mu - y + y log(y/mu)), with y log(y/mu) = 0 at y = 0.
template <typename Scalar>
Scalar loss_value(LossSpec loss, Scalar mu, Scalar y, Scalar w) {
  detail::check_weight(w);
  if (loss.kind == LossKind::GaussianDeviance) {
    const Scalar r = y - mu;
    return w * r * r;
  }
  detail::check_poisson(mu, y);
  const Scalar m = std::max(mu, Scalar(kPoissonMuFloor));
  const Scalar ylog = y > Scalar(0) ? y * std::log(y / m) : Scalar(0);
  // Rounding can push the bracket a hair below zero near mu == y.
  return std::max(Scalar(0), Scalar(2) * w * (m - y + ylog));
}

template <typename Scalar>
Scalar loss_deriv_mu(LossSpec loss, Scalar mu, Scalar y, Scalar w) {
  detail::check_weight(w);
  if (loss.kind == LossKind::GaussianDeviance) return Scalar(-2) * w * (y - mu);
  detail::check_poisson(mu, y);
  const Scalar m = std::max(mu, Scalar(kPoissonMuFloor));
  return Scalar(2) * w * (Scalar(1) - y / m);
}

/// g = x * dL/dmu * d u^{-1}/d eta, evaluated at mu = u^{-1}(eta).
template <typename Scalar>
Scalar directional_gradient(LossSpec loss, LinkSpec link, Scalar x, Scalar eta, Scalar y, Scalar w) {
  const Scalar mu = inverse_link(link, eta);
  const Scalar chain = loss_deriv_mu(loss, mu, y, w) * inverse_link_deriv(link, eta);
  return x * chain;
}

/// Loss written as a function of the linear predictor.
template <typename Scalar>
Scalar loss_at_eta(LossSpec loss, LinkSpec link, Scalar eta, Scalar y, Scalar w) {
  return loss_value(loss, inverse_link(link, eta), y, w);
}

/// Second derivative of loss_at_eta with respect to eta, for the canonical
/// pairs (2w for Gaussian+Identity, 2w exp(eta) for Poisson+Log).
template <typename Scalar>
Scalar loss_curvature_eta(LossSpec loss, LinkSpec link, Scalar eta, Scalar w) {
  if (loss.kind == LossKind::GaussianDeviance) return Scalar(2) * w;
  return Scalar(2) * w * inverse_link(link, eta);
}

}  // namespace tvcm
