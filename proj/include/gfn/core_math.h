#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gfn {

// Embedding values are held in double precision; stored payloads are f32 and
// widened on load so every reduction accumulates in 64 bits.
using Embedding = std::vector<double>;

// Per-item gradient-stop flags; nonzero marks an input (e.g. a lookup-table
// snapshot) that must receive no gradient.
using StopMask = std::vector<std::uint8_t>;

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> u);

// Returns u / |u|. Throws DegenerateInputError for a zero-norm input.
Embedding normalized(std::span<const double> u);

// Throws ContractError if any entry is NaN/Inf or the vector is empty.
void check_finite(std::span<const double> u, const char* what);

// u.v / (|u||v|). Zero-norm inputs raise DegenerateInputError.
double cosine_sim(std::span<const double> u, std::span<const double> v);

// Accumulates upstream * d sim(u,v) / du into grad_u and likewise for v.
// Either output span may be empty to skip that side.
void cosine_sim_backward(std::span<const double> u, std::span<const double> v,
                         double upstream, std::span<double> grad_u,
                         std::span<double> grad_v);

enum class LogisticOrientation {
  kIncreasing,    // 1 / (1 + e^{-s/alpha})
  kDecreasing,  // e^{-s/alpha} / (1 + e^{-s/alpha}), decreasing in s
};

// Temperature-scaled logistic weight in (0, 1). alpha must be positive.
double logistic_weight(double s, double alpha,
                       LogisticOrientation orientation =
                           LogisticOrientation::kIncreasing);

// Standard increasing logistic, overflow-safe for large |x|.
double sigmoid(double x);

struct PairLossResult {
  double loss = 0.0;
  Embedding grad_anchor;
  std::vector<Embedding> grad_candidates;
};

// Cross-entropy of one positive against a candidate set under temperature
// tau, on cosine-similarity logits:
//
//   loss = -log( exp(sim(a, c_pos)/tau) / sum_k exp(sim(a, c_k)/tau) )
//
// The softmax is evaluated with max-logit subtraction. Gradients are exact
// through the cosine normalization. Candidates flagged in `stop_gradient`
// get an all-zero gradient (lookup-table entries); `stop_gradient` may be
// empty, meaning every candidate is differentiable.
PairLossResult contrastive_pair_loss(std::span<const double> anchor,
                                     std::span<const Embedding> candidates,
                                     std::size_t positive_index, double tau,
                                     std::span<const std::uint8_t> stop_gradient = {});

}  // namespace gfn
