#include "gfn/core_math.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "gfn/errors.h"

namespace gfn {

namespace {

void check_same_dim(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw ContractError("dimension mismatch: " + std::to_string(u.size()) +
                        " vs " + std::to_string(v.size()));
  }
  if (u.empty()) throw ContractError("empty embedding");
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!std::isfinite(u[i]) || !std::isfinite(v[i])) {
      throw ContractError("non-finite embedding entry");
    }
  }
}

}  // namespace

double dot(std::span<const double> u, std::span<const double> v) {
  check_same_dim(u, v);
  double acc = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) acc += u[i] * v[i];
  return acc;
}

double l2_norm(std::span<const double> u) {
  double acc = 0.0;
  for (double x : u) acc += x * x;
  return std::sqrt(acc);
}

Embedding normalized(std::span<const double> u) {
  const double n = l2_norm(u);
  if (!(n > 0.0)) throw DegenerateInputError("cannot normalize zero-norm vector");
  Embedding out(u.begin(), u.end());
  for (double& x : out) x /= n;
  return out;
}

void check_finite(std::span<const double> u, const char* what) {
  if (u.empty()) throw ContractError(std::string(what) + ": empty embedding");
  for (double x : u) {
    if (!std::isfinite(x)) {
      throw ContractError(std::string(what) + ": non-finite entry");
    }
  }
}

double cosine_sim(std::span<const double> u, std::span<const double> v) {
  check_same_dim(u, v);
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) {
    throw DegenerateInputError("cosine similarity of zero-norm vector");
  }
  const double s = dot(u, v) / (nu * nv);
  return std::clamp(s, -1.0, 1.0);
}

void cosine_sim_backward(std::span<const double> u, std::span<const double> v,
                         double upstream, std::span<double> grad_u,
                         std::span<double> grad_v) {
  check_same_dim(u, v);
  const double nu = l2_norm(u);
  const double nv = l2_norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) {
    throw DegenerateInputError("cosine similarity of zero-norm vector");
  }
  const double inv = 1.0 / (nu * nv);
  const double s = dot(u, v) * inv;
  // d sim / du = v / (|u||v|) - sim * u / |u|^2
  if (!grad_u.empty()) {
    const double cu = s / (nu * nu);
    for (std::size_t i = 0; i < u.size(); ++i) {
      grad_u[i] += upstream * (v[i] * inv - cu * u[i]);
    }
  }
  if (!grad_v.empty()) {
    const double cv = s / (nv * nv);
    for (std::size_t i = 0; i < v.size(); ++i) {
      grad_v[i] += upstream * (u[i] * inv - cv * v[i]);
    }
  }
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logistic_weight(double s, double alpha, LogisticOrientation orientation) {
  if (!(alpha > 0.0)) throw ContractError("logistic_weight: alpha must be > 0");
  const double t = s / alpha;
  return orientation == LogisticOrientation::kIncreasing ? sigmoid(t)
                                                         : sigmoid(-t);
}

PairLossResult contrastive_pair_loss(std::span<const double> anchor,
                                     std::span<const Embedding> candidates,
                                     std::size_t positive_index, double tau,
                                     std::span<const std::uint8_t> stop_gradient) {
  if (candidates.empty()) {
    throw ContractError("contrastive_pair_loss: empty candidate set");
  }
  if (positive_index >= candidates.size()) {
    throw ContractError("contrastive_pair_loss: positive index out of range");
  }
  if (!(tau > 0.0)) throw ContractError("contrastive_pair_loss: tau must be > 0");
  if (!stop_gradient.empty() && stop_gradient.size() != candidates.size()) {
    throw ContractError("contrastive_pair_loss: stop_gradient size mismatch");
  }

  const std::size_t k = candidates.size();
  std::vector<double> logits(k);
  for (std::size_t c = 0; c < k; ++c) {
    logits[c] = cosine_sim(anchor, candidates[c]) / tau;
  }
  const auto top = std::max_element(logits.begin(), logits.end());
  const double max_logit = *top;
  // Sum without the max term, so tiny tails survive log1p.
  double rest = 0.0;
  for (auto it = logits.begin(); it != logits.end(); ++it) {
    if (it != top) rest += std::exp(*it - max_logit);
  }
  const double denom = 1.0 + rest;

  PairLossResult out;
  // Both terms are >= 0, so the loss never goes negative through rounding.
  out.loss = (max_logit - logits[positive_index]) + std::log1p(rest);

  out.grad_anchor.assign(anchor.size(), 0.0);
  out.grad_candidates.assign(k, Embedding(anchor.size(), 0.0));
  for (std::size_t c = 0; c < k; ++c) {
    const double p = std::exp(logits[c] - max_logit) / denom;
    const double dlogit = p - (c == positive_index ? 1.0 : 0.0);
    if (dlogit == 0.0) continue;
    const bool stopped = !stop_gradient.empty() && stop_gradient[c] != 0;
    std::span<double> gc = stopped ? std::span<double>{}
                                   : std::span<double>(out.grad_candidates[c]);
    cosine_sim_backward(anchor, candidates[c], dlogit / tau, out.grad_anchor, gc);
  }
  return out;
}

}  // namespace gfn
