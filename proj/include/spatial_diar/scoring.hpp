#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "spatial_diar/types.hpp"

namespace spatial_diar {

struct Segment {
  std::string session;
  std::string speaker;
  double start = 0.0;
  double duration = 0.0;

  double end() const { return start + duration; }
  bool operator==(const Segment&) const = default;
};

using SegmentList = std::vector<Segment>;

// SPEAKER lines only; everything else (including ;; comments) is skipped.
SegmentList parse_rttm(std::string_view text);
// Times are written with millisecond precision.
std::string write_rttm(const SegmentList& segments);
SegmentList read_rttm_file(const std::filesystem::path& path);
void write_rttm_file(const std::filesystem::path& path, const SegmentList& segments);

// Sorted, de-duplicated speaker ids of a segment list.
std::vector<std::string> speaker_labels(const SegmentList& segments);

struct DerOptions {
  double collar_s = 0.0;
  double frame_s = 0.01;
  bool ignore_overlap = false;
};

struct SpeakerMapping {
  std::string session;
  std::string hyp;
  std::string ref;
};

struct DerReport {
  // Percentages of scored reference speech time.
  double fa = 0.0;
  double miss = 0.0;
  double spkerr = 0.0;
  double der = 0.0;  // fa + miss + spkerr
  double scored_time = 0.0;  // seconds of reference speech
  std::vector<SpeakerMapping> mapping;
};

DerReport der_from_components(double fa, double miss, double spkerr);

// Frame-level DER with the per-session one-to-one hyp->ref speaker mapping
// that maximizes jointly active frames. Per scored frame, with R reference
// speakers, H hypothesis speakers and C correctly mapped pairs:
//   miss = max(0, R - H), fa = max(0, H - R), spkerr = min(R, H) - C.
DerReport compute_der(const SegmentList& ref, const SegmentList& hyp, const DerOptions& opts = {});

struct SegmentOptions {
  double min_gap_s = 0.1;
  double min_dur_s = 0.2;
};

// Runs of active frames become segments; frame l spans [l, l+1) / frame_rate.
// Gaps shorter than min_gap_s are bridged, then segments shorter than
// min_dur_s are dropped. Speakers are named by `speaker_names` or "spk<k>".
SegmentList mask_to_segments(const SpeakerActivityMatrix& m, double frame_rate,
                             const std::string& session, const SegmentOptions& opts = {},
                             const std::vector<std::string>& speaker_names = {});

// Inverse bridge: frame l of speaker k is 1 when a segment of speakers[k]
// covers it, with segment bounds rounded to the nearest frame.
DiarizationMatrix segments_to_activity(const SegmentList& segments,
                                       const std::vector<std::string>& speakers,
                                       double frame_rate, int frames);

}  // namespace spatial_diar
