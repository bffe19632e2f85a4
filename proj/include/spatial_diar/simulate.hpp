#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spatial_diar/clustering.hpp"
#include "spatial_diar/scoring.hpp"
#include "spatial_diar/signal.hpp"
#include "spatial_diar/types.hpp"

namespace spatial_diar {

inline constexpr double kSpeedOfSound = 343.0;

enum class SourceSignal { tone, noise_burst, speech_shaped };

struct SourceSpec {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  std::vector<std::pair<double, double>> activity;  // [start_s, end_s)
  SourceSignal signal = SourceSignal::speech_shaped;
  double frequency_hz = 440.0;  // tone only
  std::string name;             // defaults to spk<k>
};

struct SceneSpec {
  std::string session = "sim";
  std::vector<Eigen::Vector3d> mics;
  std::vector<SourceSpec> sources;
  double noise_snr_db = 20.0;
  std::string rt = "anechoic";
  std::uint64_t seed = 0;
  double duration_s = 10.0;
  int sample_rate = 16000;
  StftConfig stft;
  int embedding_dim = 64;
  double embedding_noise = 0.03;  // per-dimension std around unit centroids

  int num_channels() const { return static_cast<int>(mics.size()); }
  void validate() const;
};

SceneSpec parse_scene_spec(std::string_view json_text);
std::string scene_spec_to_json(const SceneSpec& spec);

struct SceneTruth {
  MultichannelAudio audio;                 // mixture
  std::vector<MultichannelAudio> images;   // per-source array images
  MultichannelAudio noise;
  DiarizationMatrix activities;            // STFT frame rate, sources as columns
  std::vector<RealMatrix> dominance;       // per source, frames x bins in {0, 1}
  EmbeddingSet embeddings;                 // one row per reference segment
  std::vector<int> embedding_labels;       // source index per row
  SegmentList rttm;
};

// Anechoic point sources: per-mic fractional delay and 1/r attenuation,
// spatially white Gaussian sensor noise at noise_snr_db below the mean
// speech-active mixture power. Dominance masks mark the per-bin argmax of
// channel-summed energy among the sources and the noise.
SceneTruth simulate_scene(const SceneSpec& spec);

struct CorruptionOptions {
  double confusion_rate = 0.0;
  double miss_rate = 0.0;
  double fa_rate = 0.0;
  std::uint64_t seed = 0;
  // Frames per corruption decision; 1 corrupts frames independently.
  int run_length = 1;
};

// Per run of frames: with confusion_rate, active speakers are rotated onto
// other speakers; each speaker is deleted with miss_rate; with fa_rate a
// random speaker is inserted on silent frames.
DiarizationMatrix corrupt_diarization(const DiarizationMatrix& d, const CorruptionOptions& opts);

struct MeetingOptions {
  int num_mics = 4;
  int num_speakers = 3;
  double duration_s = 60.0;
  double array_radius_m = 0.1;
  double noise_snr_db = 20.0;
  double overlap_probability = 0.2;
  std::uint64_t seed = 0;
  std::string session = "sim";
};

// Circular array and turn-taking speakers around it at 1-2 m, with
// occasional overlapped turn changes.
SceneSpec make_meeting_spec(const MeetingOptions& opts);

struct SyntheticEmbeddings {
  RealMatrix vectors;
  std::vector<int> labels;
};

// Orthonormal class centroids plus Gaussian perturbation of the given
// per-dimension standard deviation.
SyntheticEmbeddings synthetic_embeddings(int num_classes, int per_class, int dim,
                                         double noise_std, std::uint64_t seed);

}  // namespace spatial_diar
