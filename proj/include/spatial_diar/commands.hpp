#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spatial_diar/beamform.hpp"
#include "spatial_diar/clustering.hpp"
#include "spatial_diar/rectifier.hpp"
#include "spatial_diar/scoring.hpp"
#include "spatial_diar/signal.hpp"
#include "spatial_diar/simulate.hpp"

namespace spatial_diar {

namespace fs = std::filesystem;

struct ClusterConfig {
  int max_k = 8;
  double keep_fraction = 1.0;  // affinity row pruning; 1 keeps everything
  FilterOptions filter;
  KMeansOptions kmeans;
};

struct PipelineConfig {
  StftConfig stft;
  RectifyOptions rectify;
  int rounds = 1;
  GssOptions gss;
  ClusterConfig cluster;
  SegmentOptions segments;
  DerOptions der;

  void validate() const;
};

// Every key is optional; unknown keys and out-of-range values throw InputError.
PipelineConfig parse_pipeline_config(std::string_view json_text);
PipelineConfig read_pipeline_config(const fs::path& path);
std::string pipeline_config_to_json(const PipelineConfig& config);

// Writes audio.wav, ref.rttm, activity.tensor, dominance.tensor,
// embeddings.tensor, segments.jsonl, src<k>.wav, noise.wav, scene.json and
// manifest.json into out_dir.
SceneTruth cmd_simulate(const fs::path& spec_path, const fs::path& out_dir);

// c64 tensor of shape [channels, frames, bins].
StftTensor cmd_stft(const fs::path& audio_path, const fs::path& out_path, const StftConfig& config);

// Diarization input as RTTM or an f32 [frames, speakers] tensor at the STFT
// frame rate. Writes rectified.rttm, posterior.tensor and activity.tensor.
RectifyResult cmd_rectify(const fs::path& audio_path, const fs::path& diar_path,
                          const PipelineConfig& config, const fs::path& out_dir);

struct GssSegment {
  Segment segment;
  std::string file;  // relative to the output directory
  RealMatrix embedding;  // 1 x D spatial embedding
};

// One WAV per RTTM segment plus manifest.jsonl.
std::vector<GssSegment> cmd_gss(const fs::path& audio_path, const fs::path& rttm_path,
                                const PipelineConfig& config, const fs::path& out_dir);

// Unit-norm relative transfer function of the target with respect to channel
// 0, sampled over 200-4000 Hz and stacked as real and imaginary parts.
RealMatrix spatial_embedding(const StftTensor& y, const GssEstimate& estimate);

// Reads a JSONL manifest of {"session","start_s","end_s","row"[,"word_count"]}
// and an f32 [rows, dim] embedding tensor. Returns the clustered RTTM.
SegmentList cmd_cluster(const fs::path& embeddings_path, const fs::path& manifest_path,
                        const PipelineConfig& config, const fs::path& out_rttm);

// Library form of cmd_cluster; segments whose rows are filtered out are
// omitted from the result.
SegmentList cluster_segments(const EmbeddingSet& embeddings, const ClusterConfig& config);

DerReport cmd_score(const fs::path& ref_path, const fs::path& hyp_path, const DerOptions& opts);
std::string der_report_to_json(const DerReport& report);
std::string der_report_table(const DerReport& report);

struct TableRow {
  std::string label;
  double fa = 0.0;
  double miss = 0.0;
  double spkerr = 0.0;
  double der = 0.0;
};

struct TableCheck {
  TableRow row;
  double recomputed = 0.0;
  bool ok = false;
};

// CSV with header label,fa,miss,spkerr,der.
std::vector<TableRow> read_table_rows(const fs::path& path);
std::vector<TableCheck> check_table_rows(const std::vector<TableRow>& rows, double tolerance = 0.02);

struct PipelineOptions {
  std::string nsd_hook;    // empty: passthrough
  std::string embed_hook;  // empty: built-in spatial embeddings
};

struct SessionReport {
  std::string session;
  std::vector<std::string> warnings;
  std::optional<DerReport> stage1;
  std::optional<DerReport> stage2;
  std::optional<DerReport> stage3;
};

// A session directory holds audio.wav plus initial.rttm, or embeddings.tensor
// with segments.jsonl; ref.rttm is scored when present. A directory without
// audio.wav is treated as a set of session subdirectories.
std::vector<SessionReport> cmd_pipeline(const fs::path& input_dir, const PipelineConfig& config,
                                        const PipelineOptions& options, const fs::path& out_dir);

}  // namespace spatial_diar
