#pragma once

#include <algorithm>
#include <cmath>
#include <vector>
#include <filesystem>
#include <string>

#include "oracles.hpp"
#include "spatial_diar/beamform.hpp"
#include "spatial_diar/simulate.hpp"

namespace fixtures {

// Square 4-mic array (5 cm half-width) with speakers taking alternating turns,
// separated by 90 degrees or more.
inline spatial_diar::SceneSpec turn_taking_scene(int speakers, double duration_s, std::uint64_t seed,
                                                 double turn_s = 1.5) {
  spatial_diar::SceneSpec spec;
  spec.session = "fx" + std::to_string(seed);
  spec.seed = seed;
  spec.duration_s = duration_s;
  spec.noise_snr_db = 25.0;
  for (int m = 0; m < 4; ++m) {
    const double a = 1.5707963267948966 * m;
    spec.mics.emplace_back(0.05 * std::cos(a), 0.05 * std::sin(a), 0.0);
  }
  for (int k = 0; k < speakers; ++k) {
    const double a = 0.3 + 6.283185307179586 * k / speakers;
    spatial_diar::SourceSpec s;
    s.position = {1.5 * std::cos(a), 1.5 * std::sin(a), 0.2};
    spec.sources.push_back(s);
  }
  int k = 0;
  for (double t = 0.3; t + turn_s < duration_s - 0.2; t += turn_s + 0.2) {
    spec.sources[static_cast<std::size_t>(k)].activity.emplace_back(t, t + turn_s);
    k = (k + 1) % speakers;
  }
  return spec;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("spatial_diar_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

struct SirGain {
  double input_db = 0.0;   // best single channel
  double output_db = 0.0;
  double gain() const { return output_db - input_db; }
};

inline std::vector<double> row_range(const spatial_diar::RealMatrix& m, int row, std::size_t begin, std::size_t end) {
  end = std::min<std::size_t>(end, static_cast<std::size_t>(m.cols()));
  return {m.row(row).data() + begin, m.row(row).data() + end};
}

// Input SIR of `target` against the other sources plus noise over samples
// [begin, end), best channel.
inline double best_input_sir(const spatial_diar::SceneTruth& truth, int target, std::size_t begin, std::size_t end) {
  double best = -1e300;
  for (int c = 0; c < truth.audio.channels(); ++c) {
    const auto t = row_range(truth.images[static_cast<std::size_t>(target)].samples, c, begin, end);
    std::vector<double> i = row_range(truth.noise.samples, c, begin, end);
    for (std::size_t k = 0; k < truth.images.size(); ++k) {
      if (static_cast<int>(k) == target) continue;
      const auto o = row_range(truth.images[k].samples, c, begin, end);
      for (std::size_t n = 0; n < i.size(); ++n) i[n] += o[n];
    }
    best = std::max(best, oracle::sir_db(t, i));
  }
  return best;
}

// MVDR over the whole scene with oracle dominance masks.
inline SirGain oracle_mask_mvdr(const spatial_diar::SceneTruth& truth, const spatial_diar::StftConfig& config,
                                int target) {
  using namespace spatial_diar;
  const StftTensor y = stft(truth.audio, config);
  const RealMatrix& mask = truth.dominance[static_cast<std::size_t>(target)];
  const RealMatrix noise_mask = RealMatrix::Ones(mask.rows(), mask.cols()) - mask;
  const BeamformerWeights w =
      mvdr_weights(estimate_scm(y, mask), estimate_scm(y, noise_mask), select_reference_channel(y));
  auto render = [&](const MultichannelAudio& a) { return istft(apply_beamformer(stft(a, config), w)); };
  const auto t = render(truth.images[static_cast<std::size_t>(target)]);
  auto i = render(truth.noise);
  for (std::size_t k = 0; k < truth.images.size(); ++k) {
    if (static_cast<int>(k) != target) i.samples += render(truth.images[k]).samples;
  }
  SirGain g;
  const std::size_t n = truth.audio.length();
  g.input_db = best_input_sir(truth, target, 0, n);
  g.output_db = oracle::sir_db(row_range(t.samples, 0, 0, n), row_range(i.samples, 0, 0, n));
  return g;
}

// GSS for one reference segment of `target`, scored over that segment.
inline SirGain gss_segment_sir(const spatial_diar::SceneTruth& truth, const spatial_diar::StftConfig& config,
                               int target, double start_s, double end_s,
                               const spatial_diar::GssOptions& opts = {}) {
  using namespace spatial_diar;
  const StftTensor y = stft(truth.audio, config);
  SpeakerActivityMatrix act;
  act.frame_rate = truth.activities.frame_rate;
  act.m = (truth.activities.d.array() > 0.5).cast<std::uint8_t>().matrix();
  const int begin = static_cast<int>(std::floor(start_s * y.frame_rate()));
  const int end = static_cast<int>(std::ceil(end_s * y.frame_rate()));
  const GssEstimate est = gss_estimate(y, act, begin, end, target, opts);
  auto render = [&](const MultichannelAudio& a) { return render_gss_segment(stft(a, config), est); };
  const auto t = render(truth.images[static_cast<std::size_t>(target)]);
  auto i = render(truth.noise);
  for (std::size_t k = 0; k < truth.images.size(); ++k) {
    if (static_cast<int>(k) != target) i.samples += render(truth.images[k]).samples;
  }
  const std::size_t hop = static_cast<std::size_t>(config.hop);
  const std::size_t s0 = static_cast<std::size_t>(est.segment_begin) * hop;
  const std::size_t s1 = s0 + static_cast<std::size_t>(t.samples.cols());
  SirGain g;
  g.input_db = best_input_sir(truth, target, s0, s1);
  g.output_db = oracle::sir_db(row_range(t.samples, 0, 0, t.length()), row_range(i.samples, 0, 0, i.length()));
  return g;
}

// Two sources talking over each other for most of the scene.
inline spatial_diar::SceneSpec overlapped_pair(std::uint64_t seed, double duration_s = 8.0) {
  spatial_diar::SceneSpec spec = turn_taking_scene(2, duration_s, seed);
  spec.session = "pair" + std::to_string(seed);
  const double offset = 0.6 * static_cast<double>(seed % 5);
  spec.sources[0].position = {1.4 * std::cos(offset), 1.4 * std::sin(offset), 0.1};
  spec.sources[1].position = {1.6 * std::cos(offset + 1.9), 1.6 * std::sin(offset + 1.9), 0.3};
  spec.sources[0].activity = {{0.2, duration_s * 0.7}};
  spec.sources[1].activity = {{duration_s * 0.3, duration_s - 0.2}};
  return spec;
}

}  // namespace fixtures
