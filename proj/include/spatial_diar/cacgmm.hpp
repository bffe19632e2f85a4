#pragma once

// Complex angular central Gaussian mixture model over unit-norm multichannel
// observation directions, one independent mixture per frequency bin. Class
// K (the last one) is the noise class.

#include <cstdint>
#include <vector>

#include "spatial_diar/signal.hpp"
#include "spatial_diar/types.hpp"

namespace spatial_diar {

// z(l, f) = y(l, f) / |y(l, f)|, stored [bin][frame][channel] so that one
// frequency bin is contiguous.
struct NormalizedObservations {
  int frames = 0;
  int bins = 0;
  int channels = 0;
  std::vector<Complex> z;
  std::vector<std::uint8_t> active;  // [bin][frame]; zero-energy bins are 0

  const Complex* at(int l, int f) const {
    return z.data() + (static_cast<std::size_t>(f) * frames + l) * channels;
  }
  bool is_active(int l, int f) const {
    return active[static_cast<std::size_t>(f) * frames + l] != 0;
  }
  NormalizedObservations slice_frames(int begin, int end) const;
};

enum class PriorMode {
  updated,  // pi(f, k) = mean over frames of gamma, time-invariant
  frozen,   // pi(l, f, k) = initial posterior, time-varying
  guided,   // frozen for the first third of the iterations, then updated
};

struct EmOptions {
  int iterations = 20;
  double load_eps = 1e-4;
  PriorMode prior_mode = PriorMode::updated;
  double inverse_eps = 1e-10;

  void validate() const;
};

struct CacgmmParams {
  int bins = 0;
  int classes = 0;
  int channels = 0;
  std::vector<Eigen::MatrixXcd> shape;  // [bin * classes + class], N x N
  // Time-invariant priors [bin][class] when prior_frames == 0, otherwise
  // time-varying priors [frame][bin][class].
  int prior_frames = 0;
  std::vector<double> priors;

  const Eigen::MatrixXcd& shape_matrix(int f, int k) const {
    return shape[static_cast<std::size_t>(f) * classes + k];
  }
  double prior(int l, int f, int k) const {
    if (prior_frames == 0) return priors[static_cast<std::size_t>(f) * classes + k];
    return priors[(static_cast<std::size_t>(l) * bins + f) * classes + k];
  }
};

struct EmResult {
  PosteriorTensor posterior;
  CacgmmParams params;
  // Mean log-likelihood over active bins after each iteration's E-step.
  std::vector<double> log_likelihood;
};

NormalizedObservations normalize_observations(const StftTensor& y);

// gamma(l, f, k) = d(l, k) / sum_k' d(l, k') broadcast over frequency, with a
// noise class appended whose activity is 1 on every frame.
PosteriorTensor init_posterior_from_diarization(const DiarizationMatrix& d, int num_bins);

// One M-step. The quadratic forms z^H B^-1 z use `previous` shape matrices,
// or the identity when none are given. With PriorMode::frozen the priors are
// carried over from `previous`, or taken from `gamma` on the first call.
CacgmmParams m_step(const NormalizedObservations& z, const PosteriorTensor& gamma,
                    const EmOptions& opts, const CacgmmParams* previous = nullptr);

// Responsibilities in the log domain:
//   log gamma ~ log pi - log det B - N log(z^H B^-1 z + inverse_eps)
// Inactive bins receive uniform posteriors.
PosteriorTensor e_step(const NormalizedObservations& z, const CacgmmParams& params,
                       const EmOptions& opts = {});

// Mean over active bins of log sum_k pi_k det(B_k)^-1 (z^H B_k^-1 z)^-N. The
// parameter-independent normalizer log((N-1)! / (2 pi^N)) is dropped.
double log_likelihood(const NormalizedObservations& z, const CacgmmParams& params,
                      const EmOptions& opts = {});

// opts.iterations rounds of M-step followed by E-step, starting from the
// given posterior.
EmResult run_em(const NormalizedObservations& z, const PosteriorTensor& gamma_init,
                const EmOptions& opts = {});

}  // namespace spatial_diar
