#pragma once

#include <vector>

#include "spatial_diar/cacgmm.hpp"
#include "spatial_diar/signal.hpp"
#include "spatial_diar/types.hpp"

namespace spatial_diar {

struct SpatialCovarianceSet {
  std::vector<Eigen::MatrixXcd> phi;  // one N x N matrix per bin
  double frame_count = 0.0;           // total mask weight used
};

struct BeamformerWeights {
  Eigen::MatrixXcd w;  // bins x channels
  int reference = 0;
};

// Mask-weighted spatial covariance per bin (mask is frames x bins), made
// Hermitian and loaded with 1e-6 * trace / N. Bins with zero mask mass get
// the identity.
SpatialCovarianceSet estimate_scm(const StftTensor& y, const RealMatrix& mask);

// Souden MVDR: w(f) = (Phi_n^-1 Phi_t / trace(Phi_n^-1 Phi_t)) e_ref.
BeamformerWeights mvdr_weights(const SpatialCovarianceSet& target,
                               const SpatialCovarianceSet& noise, int reference);

// out(l, f) = w(f)^H y(l, f), a single-channel tensor.
StftTensor apply_beamformer(const StftTensor& y, const BeamformerWeights& weights);

// Channel with the highest average energy.
int select_reference_channel(const StftTensor& y);

struct GssOptions {
  double context_s = 15.0;
  int reference = -1;  // -1 picks the highest-energy channel of the window
  EmOptions em = {20, 1e-4, PriorMode::frozen, 1e-10};
};

// Mask estimation and beamformer design for one target segment.
struct GssEstimate {
  int window_begin = 0;  // analysed frame window, including context
  int window_end = 0;
  int segment_begin = 0;  // clamped segment frames
  int segment_end = 0;
  RealMatrix target_mask;  // window frames x bins
  BeamformerWeights weights;
};

// Guided cACGMM over the segment plus context, initialized from the binary
// activities (inactive speakers get zero prior), then MVDR with the target
// posterior as the target mask and its complement as the noise mask.
GssEstimate gss_estimate(const StftTensor& y, const SpeakerActivityMatrix& activities,
                         int segment_begin, int segment_end, int target,
                         const GssOptions& opts = {});

// Enhanced single-channel target audio for frames [segment_begin, segment_end).
MultichannelAudio gss_extract(const StftTensor& y, const SpeakerActivityMatrix& activities,
                              int segment_begin, int segment_end, int target,
                              const GssOptions& opts = {});

// Applies an estimate's weights to any tensor aligned with `y` (e.g. a
// source image) and returns the segment's samples.
MultichannelAudio render_gss_segment(const StftTensor& y, const GssEstimate& estimate);

}  // namespace spatial_diar
