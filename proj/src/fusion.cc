#include "gfn/fusion.h"

#include <cmath>
#include <string>

#include "gfn/errors.h"

namespace gfn {

FusionParams FusionParams::identity(std::size_t dim, FusionMode mode) {
  FusionParams p;
  p.gamma.assign(dim, 1.0);
  p.delta.assign(dim, 0.0);
  p.running_mean.assign(dim, 0.0);
  p.running_var.assign(dim, 1.0);
  p.mode = mode;
  return p;
}

void FusionParams::validate() const {
  const std::size_t d = gamma.size();
  if (d == 0 || delta.size() != d || running_mean.size() != d || running_var.size() != d) {
    throw ContractError("FusionParams: vector lengths must all equal the embedding dim");
  }
  if (!(momentum > 0.0 && momentum <= 1.0)) {
    throw ContractError("FusionParams: momentum must be in (0, 1]");
  }
  if (!(eps >= 0.0)) throw ContractError("FusionParams: eps must be >= 0");
  if (mode == FusionMode::kInference) {
    for (double v : running_var) {
      if (!(v > 0.0)) throw ContractError("FusionParams: running_var must be > 0");
    }
  }
}

namespace {

void check_batch(std::span<const Embedding> xs, std::span<const Embedding> ys,
                 const FusionParams& params) {
  if (xs.size() != ys.size()) throw ContractError("fuse: x and y batch sizes differ");
  if (xs.empty()) throw ContractError("fuse: empty batch");
  const std::size_t d = params.dim();
  for (std::size_t n = 0; n < xs.size(); ++n) {
    if (xs[n].size() != d || ys[n].size() != d) {
      throw ContractError("fuse: dimension mismatch at row " + std::to_string(n));
    }
  }
}

}  // namespace

FusionBatch fuse_forward(std::span<const Embedding> xs, std::span<const Embedding> ys,
                         const FusionParams& params, double beta) {
  if (!(beta > 0.0)) throw ContractError("fuse: beta must be > 0");
  params.validate();
  check_batch(xs, ys, params);
  const std::size_t n = xs.size();
  const std::size_t d = params.dim();

  FusionBatch t;
  t.mode = params.mode;
  t.gate.assign(n, Embedding(d));
  t.excited.assign(n, Embedding(d));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      t.gate[r][c] = sigmoid(xs[r][c] / beta);
      t.excited[r][c] = t.gate[r][c] * ys[r][c];
    }
  }

  if (params.mode == FusionMode::kBypass) {
    t.output = t.excited;
    return t;
  }

  Embedding mean(d, 0.0);
  Embedding var(d, 0.0);
  if (params.mode == FusionMode::kTrain) {
    for (const auto& row : t.excited) {
      for (std::size_t c = 0; c < d; ++c) mean[c] += row[c];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    for (const auto& row : t.excited) {
      for (std::size_t c = 0; c < d; ++c) var[c] += (row[c] - mean[c]) * (row[c] - mean[c]);
    }
    for (double& v : var) v /= static_cast<double>(n);
    t.batch_mean = mean;
    t.batch_var = var;
  } else {
    mean = params.running_mean;
    var = params.running_var;
  }

  t.normalized.assign(n, Embedding(d));
  t.output.assign(n, Embedding(d));
  for (std::size_t c = 0; c < d; ++c) {
    const double inv_std = 1.0 / std::sqrt(var[c] + params.eps);
    for (std::size_t r = 0; r < n; ++r) {
      const double xhat = (t.excited[r][c] - mean[c]) * inv_std;
      t.normalized[r][c] = xhat;
      t.output[r][c] = params.gamma[c] * xhat + params.delta[c];
    }
  }
  return t;
}

FusionGrads fuse_backward(const FusionBatch& trace, std::span<const Embedding> xs,
                          std::span<const Embedding> ys, const FusionParams& params,
                          double beta, std::span<const Embedding> grad_output) {
  check_batch(xs, ys, params);
  const std::size_t n = xs.size();
  const std::size_t d = params.dim();
  if (grad_output.size() != n) throw ContractError("fuse_backward: gradient batch size");

  FusionGrads g;
  g.grad_gamma.assign(d, 0.0);
  g.grad_delta.assign(d, 0.0);
  std::vector<Embedding> grad_excited(n, Embedding(d, 0.0));

  if (trace.mode == FusionMode::kBypass) {
    for (std::size_t r = 0; r < n; ++r) grad_excited[r] = grad_output[r];
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      const double var =
          trace.mode == FusionMode::kTrain ? trace.batch_var[c] : params.running_var[c];
      const double inv_std = 1.0 / std::sqrt(var + params.eps);
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (std::size_t r = 0; r < n; ++r) {
        const double go = grad_output[r][c];
        g.grad_delta[c] += go;
        g.grad_gamma[c] += go * trace.normalized[r][c];
        const double dxhat = go * params.gamma[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * trace.normalized[r][c];
      }
      for (std::size_t r = 0; r < n; ++r) {
        const double dxhat = grad_output[r][c] * params.gamma[c];
        if (trace.mode == FusionMode::kTrain) {
          const double nn = static_cast<double>(n);
          grad_excited[r][c] =
              inv_std * (dxhat - sum_dxhat / nn - trace.normalized[r][c] * sum_dxhat_xhat / nn);
        } else {
          grad_excited[r][c] = dxhat * inv_std;
        }
      }
    }
  }

  g.grad_x.assign(n, Embedding(d, 0.0));
  g.grad_y.assign(n, Embedding(d, 0.0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double s = trace.gate[r][c];
      g.grad_y[r][c] = grad_excited[r][c] * s;
      g.grad_x[r][c] = grad_excited[r][c] * ys[r][c] * s * (1.0 - s) / beta;
    }
  }
  return g;
}

void update_running_stats(FusionParams& params, const FusionBatch& trace) {
  if (trace.mode != FusionMode::kTrain) return;
  const std::size_t n = trace.excited.size();
  const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
  for (std::size_t c = 0; c < params.dim(); ++c) {
    params.running_mean[c] =
        (1.0 - params.momentum) * params.running_mean[c] + params.momentum * trace.batch_mean[c];
    params.running_var[c] = (1.0 - params.momentum) * params.running_var[c] +
                            params.momentum * trace.batch_var[c] * unbias;
  }
}

std::vector<Embedding> fuse_batch(std::span<const Embedding> xs, std::span<const Embedding> ys,
                                  FusionParams& params, double beta) {
  FusionBatch t = fuse_forward(xs, ys, params, beta);
  update_running_stats(params, t);
  return std::move(t.output);
}

Embedding fuse(std::span<const double> x, std::span<const double> y,
               const FusionParams& params, double beta) {
  if (params.mode == FusionMode::kTrain) {
    throw ContractError("fuse: single-pair fusion needs inference or bypass parameters");
  }
  const Embedding xv(x.begin(), x.end());
  const Embedding yv(y.begin(), y.end());
  FusionBatch t = fuse_forward(std::span<const Embedding>(&xv, 1),
                               std::span<const Embedding>(&yv, 1), params, beta);
  return std::move(t.output.front());
}

}  // namespace gfn
