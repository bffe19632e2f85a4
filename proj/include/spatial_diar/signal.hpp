#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "spatial_diar/types.hpp"

namespace spatial_diar {

struct MultichannelAudio {
  RealMatrix samples;  // channels x samples
  int sample_rate = 16000;

  int channels() const { return static_cast<int>(samples.rows()); }
  std::size_t length() const { return static_cast<std::size_t>(samples.cols()); }
};

// Analysis/synthesis window pairs. The product of the two windows is what has
// to satisfy constant overlap-add for the hop.
//   sqrt_hann: sqrt-Hann analysis and synthesis
//   hann:      Hann analysis, rectangular synthesis
//   rect:      rectangular analysis and synthesis
enum class WindowType { sqrt_hann, hann, rect };

WindowType parse_window(const std::string& name);
std::string window_name(WindowType window);

struct StftConfig {
  int fft_size = 1024;
  int hop = 256;
  WindowType window = WindowType::sqrt_hann;

  int bins() const { return fft_size / 2 + 1; }
  // Frames produced for a signal of `samples` samples under centered
  // reflect padding of fft_size/2 on both sides.
  int frames_for(std::size_t samples) const;
  // Throws InputError unless hop divides fft_size, hop <= fft_size/2 and the
  // window pair satisfies constant overlap-add.
  void validate() const;
};

std::vector<double> analysis_window(const StftConfig& config);
std::vector<double> synthesis_window(const StftConfig& config);
bool satisfies_cola(const StftConfig& config);

// Complex spectrogram, stored [channel][frame][bin]. Frame l is centered on
// sample l * hop of the original signal.
struct StftTensor {
  int channels = 0;
  int frames = 0;
  int bins = 0;
  std::vector<Complex> data;
  StftConfig config;
  int sample_rate = 16000;
  std::size_t num_samples = 0;

  StftTensor() = default;
  StftTensor(int channels_, int frames_, const StftConfig& config_, int sample_rate_,
             std::size_t num_samples_);

  std::size_t index(int c, int l, int f) const {
    return (static_cast<std::size_t>(c) * frames + l) * bins + f;
  }
  Complex& at(int c, int l, int f) { return data[index(c, l, f)]; }
  const Complex& at(int c, int l, int f) const { return data[index(c, l, f)]; }

  double frame_rate() const { return static_cast<double>(sample_rate) / config.hop; }
  // Frames [begin, end) as a standalone tensor.
  StftTensor slice_frames(int begin, int end) const;
};

MultichannelAudio read_wav(const std::filesystem::path& path);
// Always writes IEEE float32.
void write_wav(const MultichannelAudio& audio, const std::filesystem::path& path);

StftTensor stft(const MultichannelAudio& audio, const StftConfig& config = {});
MultichannelAudio istft(const StftTensor& tensor);

}  // namespace spatial_diar
