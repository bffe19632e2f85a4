#include "spatial_diar/beamform.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spatial_diar/errors.hpp"

namespace spatial_diar {

namespace {

constexpr double kScmLoad = 1e-6;

Eigen::VectorXcd frame_vector(const StftTensor& y, int l, int f) {
  Eigen::VectorXcd v(y.channels);
  for (int c = 0; c < y.channels; ++c) v(c) = y.at(c, l, f);
  return v;
}

}  // namespace

SpatialCovarianceSet estimate_scm(const StftTensor& y, const RealMatrix& mask) {
  if (mask.rows() != y.frames || mask.cols() != y.bins) {
    throw InputError("mask shape does not match the STFT tensor");
  }
  const int n = y.channels;
  SpatialCovarianceSet out;
  out.phi.resize(static_cast<std::size_t>(y.bins));
  for (int f = 0; f < y.bins; ++f) {
    Eigen::MatrixXcd phi = Eigen::MatrixXcd::Zero(n, n);
    double mass = 0.0;
    for (int l = 0; l < y.frames; ++l) {
      const double m = mask(l, f);
      if (m == 0.0) continue;
      const Eigen::VectorXcd v = frame_vector(y, l, f);
      phi.noalias() += m * v * v.adjoint();
      mass += m;
    }
    out.frame_count += mass;
    if (!(mass > 0.0)) {
      out.phi[static_cast<std::size_t>(f)] = Eigen::MatrixXcd::Identity(n, n);
      continue;
    }
    phi /= mass;
    phi = (0.5 * (phi + phi.adjoint())).eval();
    const double trace = phi.trace().real();
    phi.diagonal().array() += kScmLoad * trace / n;
    out.phi[static_cast<std::size_t>(f)] = std::move(phi);
  }
  out.frame_count /= std::max(1, y.bins);
  return out;
}

BeamformerWeights mvdr_weights(const SpatialCovarianceSet& target,
                               const SpatialCovarianceSet& noise, int reference) {
  if (target.phi.size() != noise.phi.size() || target.phi.empty()) {
    throw InputError("target and noise covariance sets differ in size");
  }
  const int n = static_cast<int>(target.phi.front().rows());
  if (reference < 0 || reference >= n) throw InputError("reference channel out of range");
  BeamformerWeights out;
  out.reference = reference;
  out.w.resize(static_cast<Eigen::Index>(target.phi.size()), n);
  for (std::size_t f = 0; f < target.phi.size(); ++f) {
    Eigen::LDLT<Eigen::MatrixXcd> solver(noise.phi[f]);
    if (solver.info() != Eigen::Success || !solver.isPositive()) {
      throw NumericalError("noise covariance of bin " + std::to_string(f) +
                           " is not invertible");
    }
    const Eigen::MatrixXcd ratio = solver.solve(target.phi[f]);
    const Complex trace = ratio.trace();
    if (!(std::abs(trace) > 1e-12) || !std::isfinite(std::abs(trace))) {
      throw NumericalError("near-zero trace of noise^-1 target in bin " + std::to_string(f) +
                           "; the target mask is probably empty");
    }
    out.w.row(static_cast<Eigen::Index>(f)) = (ratio.col(reference) / trace).transpose();
  }
  return out;
}

StftTensor apply_beamformer(const StftTensor& y, const BeamformerWeights& weights) {
  if (weights.w.rows() != y.bins || weights.w.cols() != y.channels) {
    throw InputError("beamformer weights do not match the STFT tensor");
  }
  StftTensor out(1, y.frames, y.config, y.sample_rate, y.num_samples);
  for (int l = 0; l < y.frames; ++l) {
    for (int f = 0; f < y.bins; ++f) {
      Complex acc{};
      for (int c = 0; c < y.channels; ++c) acc += std::conj(weights.w(f, c)) * y.at(c, l, f);
      out.at(0, l, f) = acc;
    }
  }
  return out;
}

int select_reference_channel(const StftTensor& y) {
  int best = 0;
  double best_energy = -1.0;
  for (int c = 0; c < y.channels; ++c) {
    double energy = 0.0;
    for (int l = 0; l < y.frames; ++l) {
      for (int f = 0; f < y.bins; ++f) energy += std::norm(y.at(c, l, f));
    }
    if (energy > best_energy) {
      best_energy = energy;
      best = c;
    }
  }
  return best;
}

GssEstimate gss_estimate(const StftTensor& y, const SpeakerActivityMatrix& activities,
                         int segment_begin, int segment_end, int target,
                         const GssOptions& opts) {
  if (segment_end <= segment_begin) throw InputError("empty GSS segment");
  if (activities.frames() != y.frames) {
    throw InputError("activity frame count does not match the STFT tensor");
  }
  if (target < 0 || target >= activities.speakers()) {
    throw InputError("target speaker out of range");
  }
  GssEstimate est;
  est.segment_begin = std::clamp(segment_begin, 0, y.frames);
  est.segment_end = std::clamp(segment_end, 0, y.frames);
  if (est.segment_end <= est.segment_begin) throw InputError("GSS segment lies outside the recording");
  bool target_active = false;
  for (int l = est.segment_begin; l < est.segment_end && !target_active; ++l) {
    target_active = activities.m(l, target) != 0;
  }
  if (!target_active) {
    throw InputError("target speaker " + std::to_string(target) + " is never active in the segment");
  }

  const int context = static_cast<int>(std::lround(opts.context_s * y.frame_rate()));
  est.window_begin = std::max(0, est.segment_begin - context);
  est.window_end = std::min(y.frames, est.segment_end + context);
  const int frames = est.window_end - est.window_begin;

  const StftTensor window = y.slice_frames(est.window_begin, est.window_end);
  DiarizationMatrix d{activities.m.middleRows(est.window_begin, frames).cast<double>(),
                      activities.frame_rate};
  const EmResult em = run_em(normalize_observations(window),
                             init_posterior_from_diarization(d, y.bins), opts.em);

  est.target_mask.resize(frames, y.bins);
  RealMatrix noise_mask(frames, y.bins);
  for (int l = 0; l < frames; ++l) {
    for (int f = 0; f < y.bins; ++f) {
      const double m = em.posterior.at(l, f, target);
      est.target_mask(l, f) = m;
      noise_mask(l, f) = 1.0 - m;
    }
  }
  est.weights = mvdr_weights(estimate_scm(window, est.target_mask),
                             estimate_scm(window, noise_mask),
                             opts.reference < 0 ? select_reference_channel(window) : opts.reference);
  return est;
}

MultichannelAudio render_gss_segment(const StftTensor& y, const GssEstimate& estimate) {
  const StftTensor window = y.slice_frames(estimate.window_begin, estimate.window_end);
  const MultichannelAudio enhanced = istft(apply_beamformer(window, estimate.weights));
  const int hop = y.config.hop;
  const Eigen::Index begin =
      static_cast<Eigen::Index>(estimate.segment_begin - estimate.window_begin) * hop;
  const Eigen::Index end = std::min<Eigen::Index>(
      static_cast<Eigen::Index>(estimate.segment_end - estimate.window_begin) * hop,
      enhanced.samples.cols());
  MultichannelAudio out;
  out.sample_rate = y.sample_rate;
  out.samples = enhanced.samples.middleCols(begin, std::max<Eigen::Index>(0, end - begin));
  return out;
}

MultichannelAudio gss_extract(const StftTensor& y, const SpeakerActivityMatrix& activities,
                              int segment_begin, int segment_end, int target,
                              const GssOptions& opts) {
  return render_gss_segment(y, gss_estimate(y, activities, segment_begin, segment_end, target, opts));
}

}  // namespace spatial_diar
