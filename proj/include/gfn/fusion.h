#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gfn/core_math.h"

namespace gfn {

enum class FusionMode {
  kTrain,      // batch statistics, running stats updated by the caller
  kInference,  // running statistics
  kBypass,     // normalization is the identity
};

// Batch-normalization state applied after the query excitation.
struct FusionParams {
  Embedding gamma;
  Embedding delta;
  Embedding running_mean;
  Embedding running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  FusionMode mode = FusionMode::kTrain;

  // gamma = 1, delta = 0, running mean 0 and variance 1.
  static FusionParams identity(std::size_t dim, FusionMode mode);

  std::size_t dim() const { return gamma.size(); }
  void validate() const;
};

// Forward trace of BN(sigmoid(x / beta) * y) over a batch of (x, y) rows.
struct FusionBatch {
  std::vector<Embedding> gate;        // sigmoid(x / beta)
  std::vector<Embedding> excited;     // gate * y
  std::vector<Embedding> normalized;  // standardized excited (train / inference)
  std::vector<Embedding> output;
  Embedding batch_mean;               // train mode only
  Embedding batch_var;                // biased, train mode only
  FusionMode mode = FusionMode::kBypass;
};

struct FusionGrads {
  std::vector<Embedding> grad_x;
  std::vector<Embedding> grad_y;
  Embedding grad_gamma;
  Embedding grad_delta;
};

FusionBatch fuse_forward(std::span<const Embedding> xs, std::span<const Embedding> ys,
                         const FusionParams& params, double beta);

FusionGrads fuse_backward(const FusionBatch& trace, std::span<const Embedding> xs,
                          std::span<const Embedding> ys, const FusionParams& params,
                          double beta, std::span<const Embedding> grad_output);

// Folds a train-mode batch into the running statistics (unbiased variance).
void update_running_stats(FusionParams& params, const FusionBatch& trace);

// Batched fusion with running-stat update in train mode.
std::vector<Embedding> fuse_batch(std::span<const Embedding> xs, std::span<const Embedding> ys,
                                  FusionParams& params, double beta);

// Single-pair fusion for inference or bypass parameters.
Embedding fuse(std::span<const double> x, std::span<const double> y,
               const FusionParams& params, double beta);

}  // namespace gfn
