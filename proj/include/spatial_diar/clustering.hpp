#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spatial_diar/scoring.hpp"
#include "spatial_diar/types.hpp"

namespace spatial_diar {

struct SegmentSpan {
  std::string session;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct EmbeddingSet {
  RealMatrix vectors;  // segments x dimension
  std::vector<SegmentSpan> spans;
  std::optional<std::vector<int>> word_counts;
};

struct ClusterAssignment {
  std::vector<int> labels;
  int num_clusters = 0;
};

// A(i, j) = max(0, cos(v_i, v_j)), unit diagonal.
RealMatrix cosine_affinity(const RealMatrix& vectors);

// Keeps the largest `keep_fraction` of each row (diagonal always kept), then
// symmetrizes as (A + A^T) / 2.
RealMatrix refine_affinity(const RealMatrix& affinity, double keep_fraction);

// Largest gap among the smallest eigenvalues of the normalized Laplacian,
// K in [1, min(max_k, M - 1)].
int estimate_num_speakers(const RealMatrix& affinity, int max_k = 8);

struct KMeansOptions {
  std::uint64_t seed = 0;
  int restarts = 50;
  int max_iterations = 100;
};

// Rows of the K eigenvectors of the normalized Laplacian with the smallest
// eigenvalues, row-normalized, clustered by k-means++ with restarts; labels
// numbered by first appearance.
ClusterAssignment spectral_cluster(const RealMatrix& affinity, int k,
                                   const KMeansOptions& opts = {});

// d(l, k) = 1 where a span of cluster k covers frame l.
DiarizationMatrix segments_to_diarization(const ClusterAssignment& assignment,
                                          const std::vector<SegmentSpan>& spans,
                                          double frame_rate, int total_frames);

struct FilterOptions {
  int min_words = 2;
  double min_duration_s = 0.4;
};

// Drops segments with fewer than min_words words when counts are given,
// otherwise segments shorter than min_duration_s. Order is preserved.
SegmentList filter_short_segments(const SegmentList& segments,
                                  const std::optional<std::vector<int>>& word_counts,
                                  const FilterOptions& opts = {});

// Indices kept by filter_short_segments.
std::vector<std::size_t> kept_segment_indices(const SegmentList& segments,
                                              const std::optional<std::vector<int>>& word_counts,
                                              const FilterOptions& opts = {});

}  // namespace spatial_diar
