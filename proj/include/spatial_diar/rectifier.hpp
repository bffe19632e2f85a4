#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spatial_diar/cacgmm.hpp"
#include "spatial_diar/signal.hpp"
#include "spatial_diar/types.hpp"

namespace spatial_diar {

struct BlockPlan {
  int block_length = 0;  // B
  int hop = 0;           // W = B / 2
  int total_frames = 0;  // L
  std::vector<std::pair<int, int>> spans;  // [start, end) frame ranges
};

// Blocks of length B starting every W = B/2 frames; ceil(L / W) blocks, the
// trailing ones truncated at L.
BlockPlan plan_blocks(int total_frames, int block_length);

// Block s > 0 contributes to frames [s*W, (s+1)*W) averaged with block s-1;
// block 0 alone covers [0, W).
PosteriorTensor overlap_add_posteriors(const std::vector<PosteriorTensor>& blocks,
                                       const BlockPlan& plan);

struct VadOptions {
  double threshold = 0.2;
  int hangover = 6;
  // A supra-threshold frame l activates [l - hangover, l]; when symmetric,
  // [l - hangover, l + hangover].
  bool symmetric = false;
};

// beta(l, k) = mean over bins of gamma(l, f, k) for the speaker classes (the
// trailing noise class is dropped), thresholded and extended by the hangover.
SpeakerActivityMatrix mask_to_vad(const PosteriorTensor& fused, const VadOptions& opts = {},
                                  double frame_rate = 0.0);

struct RectifyOptions {
  int block_length = 3750;
  VadOptions vad;
  EmOptions em = {20, 1e-4, PriorMode::guided, 1e-10};
  // Hard-binarize each block's posterior at 0.5 before fusion.
  bool pre_threshold = false;
};

struct RectifyResult {
  SpeakerActivityMatrix activities;
  PosteriorTensor posterior;  // fused, frames x bins x (speakers + 1)
  std::vector<std::string> warnings;
};

// Nearest-frame resampling of a diarization matrix onto `frames` frames at
// `frame_rate`; exact when the rates already agree.
DiarizationMatrix align_diarization(const DiarizationMatrix& d, int frames, double frame_rate);

RectifyResult rectify(const StftTensor& y, const DiarizationMatrix& d,
                      const RectifyOptions& opts = {});

// `rounds` passes of rectify, each fed the previous pass's binary activity.
RectifyResult iterate_rectification(const StftTensor& y, const DiarizationMatrix& d,
                                    const RectifyOptions& opts, int rounds);

}  // namespace spatial_diar
