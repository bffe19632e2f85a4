#include "spatial_diar/rectifier.hpp"

#include <algorithm>
#include <cmath>

#include "spatial_diar/errors.hpp"

namespace spatial_diar {

namespace {

// Share of speech frames on which every speaker is equally active. High
// values leave the class-to-speaker association to chance.
double uniform_init_share(const DiarizationMatrix& d) {
  if (d.speakers() < 2) return 0.0;
  int speech = 0;
  int uniform = 0;
  for (int l = 0; l < d.frames(); ++l) {
    const auto row = d.d.row(l);
    if (row.maxCoeff() <= 0.0) continue;
    ++speech;
    if (row.maxCoeff() - row.minCoeff() < 1e-3) ++uniform;
  }
  return speech > 0 ? static_cast<double>(uniform) / speech : 0.0;
}

PosteriorTensor noise_only_posterior(int frames, int bins, int classes) {
  PosteriorTensor p(frames, bins, classes);
  for (int l = 0; l < frames; ++l) {
    for (int f = 0; f < bins; ++f) p.at(l, f, classes - 1) = 1.0;
  }
  return p;
}

}  // namespace

BlockPlan plan_blocks(int total_frames, int block_length) {
  if (total_frames < 1) throw InputError("cannot plan blocks over an empty signal");
  if (block_length < 2 || block_length % 2 != 0) {
    throw InputError("block length must be even and >= 2");
  }
  BlockPlan plan;
  plan.block_length = block_length;
  plan.hop = block_length / 2;
  plan.total_frames = total_frames;
  const int count = (total_frames + plan.hop - 1) / plan.hop;
  for (int s = 0; s < count; ++s) {
    const int start = s * plan.hop;
    plan.spans.emplace_back(start, std::min(start + block_length, total_frames));
  }
  return plan;
}

PosteriorTensor overlap_add_posteriors(const std::vector<PosteriorTensor>& blocks,
                                       const BlockPlan& plan) {
  if (blocks.size() != plan.spans.size()) {
    throw InputError("block count does not match the plan");
  }
  if (blocks.empty()) throw InputError("no blocks to fuse");
  const int bins = blocks.front().bins;
  const int classes = blocks.front().classes;
  for (std::size_t s = 0; s < blocks.size(); ++s) {
    const auto& b = blocks[s];
    if (b.classes != classes) throw InputError("class count differs across blocks");
    if (b.bins != bins) throw InputError("bin count differs across blocks");
    if (b.frames != plan.spans[s].second - plan.spans[s].first) {
      throw InputError("block length does not match its span");
    }
  }

  PosteriorTensor out(plan.total_frames, bins, classes);
  const std::size_t row = static_cast<std::size_t>(bins) * classes;
  for (int l = 0; l < plan.total_frames; ++l) {
    const int s = l / plan.hop;  // region index; block s starts at s*W
    const PosteriorTensor& current = blocks[static_cast<std::size_t>(s)];
    const double* a = &current.values[current.index(l - plan.spans[static_cast<std::size_t>(s)].first, 0, 0)];
    double* dst = &out.values[out.index(l, 0, 0)];
    const bool has_previous = s > 0 && l < plan.spans[static_cast<std::size_t>(s - 1)].second;
    if (!has_previous) {
      std::copy_n(a, row, dst);
      continue;
    }
    const PosteriorTensor& prev = blocks[static_cast<std::size_t>(s - 1)];
    const double* b = &prev.values[prev.index(l - plan.spans[static_cast<std::size_t>(s - 1)].first, 0, 0)];
    for (std::size_t i = 0; i < row; ++i) dst[i] = (b[i] + a[i]) / 2;
  }
  return out;
}

SpeakerActivityMatrix mask_to_vad(const PosteriorTensor& fused, const VadOptions& opts,
                                  double frame_rate) {
  if (opts.hangover < 0) throw InputError("hangover must be non-negative");
  const int speakers = fused.classes - 1;
  SpeakerActivityMatrix out;
  out.frame_rate = frame_rate;
  out.m.setZero(fused.frames, std::max(speakers, 0));
  for (int k = 0; k < speakers; ++k) {
    for (int l = 0; l < fused.frames; ++l) {
      double beta = 0.0;
      for (int f = 0; f < fused.bins; ++f) beta += fused.at(l, f, k);
      beta /= fused.bins;
      if (!(beta > opts.threshold)) continue;
      const int lo = std::max(0, l - opts.hangover);
      const int hi = opts.symmetric ? std::min(fused.frames - 1, l + opts.hangover) : l;
      for (int t = lo; t <= hi; ++t) out.m(t, k) = 1;
    }
  }
  return out;
}

DiarizationMatrix align_diarization(const DiarizationMatrix& d, int frames, double frame_rate) {
  if (d.frames() == frames && (d.frame_rate == frame_rate || d.frame_rate <= 0.0)) {
    return {d.d, frame_rate};
  }
  if (d.frame_rate <= 0.0) throw InputError("diarization frame rate is unknown");
  DiarizationMatrix out{RealMatrix::Zero(frames, d.speakers()), frame_rate};
  if (d.frames() == 0) return out;
  for (int l = 0; l < frames; ++l) {
    const double t = l / frame_rate;
    const long long src = std::llround(t * d.frame_rate);
    if (src >= d.frames()) continue;
    out.d.row(l) = d.d.row(static_cast<Eigen::Index>(std::max(0LL, src)));
  }
  return out;
}

RectifyResult rectify(const StftTensor& y, const DiarizationMatrix& d,
                      const RectifyOptions& opts) {
  opts.em.validate();
  if (d.speakers() < 1) throw InputError("diarization must have at least one speaker");
  const DiarizationMatrix aligned = align_diarization(d, y.frames, y.frame_rate());
  const NormalizedObservations z = normalize_observations(y);
  const BlockPlan plan = plan_blocks(y.frames, opts.block_length);
  const int classes = aligned.speakers() + 1;

  RectifyResult result;
  std::vector<PosteriorTensor> blocks;
  blocks.reserve(plan.spans.size());
  for (std::size_t s = 0; s < plan.spans.size(); ++s) {
    const auto [begin, end] = plan.spans[s];
    DiarizationMatrix block_d{aligned.d.middleRows(begin, end - begin), aligned.frame_rate};
    if (block_d.d.maxCoeff() <= 0.0) {
      result.warnings.push_back("block " + std::to_string(s) +
                                " has no speaker activity; emitting noise-only posterior");
      blocks.push_back(noise_only_posterior(end - begin, y.bins, classes));
      continue;
    }
    if (uniform_init_share(block_d) > 0.5) {
      result.warnings.push_back("block " + std::to_string(s) +
                                " has near-uniform initialization; class identities may permute");
    }
    const NormalizedObservations block_z = z.slice_frames(begin, end);
    EmResult em = run_em(block_z, init_posterior_from_diarization(block_d, y.bins), opts.em);
    if (opts.pre_threshold) {
      for (double& v : em.posterior.values) v = v > 0.5 ? 1.0 : 0.0;
    }
    blocks.push_back(std::move(em.posterior));
  }

  result.posterior = overlap_add_posteriors(blocks, plan);
  result.activities = mask_to_vad(result.posterior, opts.vad, y.frame_rate());
  return result;
}

RectifyResult iterate_rectification(const StftTensor& y, const DiarizationMatrix& d,
                                    const RectifyOptions& opts, int rounds) {
  if (rounds < 1) throw InputError("rounds must be >= 1");
  RectifyResult result = rectify(y, d, opts);
  for (int r = 1; r < rounds; ++r) {
    RectifyResult next = rectify(y, result.activities.to_diarization(), opts);
    next.warnings.insert(next.warnings.begin(), result.warnings.begin(), result.warnings.end());
    result = std::move(next);
  }
  return result;
}

}  // namespace spatial_diar
