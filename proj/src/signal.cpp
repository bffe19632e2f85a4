#include "spatial_diar/signal.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "fft.hpp"
#include "spatial_diar/errors.hpp"

namespace spatial_diar {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const char* p) {
  std::uint16_t v;
  std::memcpy(&v, p, 2);
  return v;
}

std::uint32_t read_u32(const char* p) {
  std::uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

template <typename T>
void append(std::vector<char>& out, T value) {
  const auto* p = reinterpret_cast<const char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

// Mirror index into [0, n) without repeating the edge sample, extended
// periodically so arbitrarily long pads are defined.
std::size_t reflect_index(long long t, std::size_t n) {
  if (n == 1) return 0;
  const long long period = 2 * (static_cast<long long>(n) - 1);
  long long r = t % period;
  if (r < 0) r += period;
  if (r >= static_cast<long long>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

}  // namespace

WindowType parse_window(const std::string& name) {
  if (name == "sqrt_hann") return WindowType::sqrt_hann;
  if (name == "hann") return WindowType::hann;
  if (name == "rect") return WindowType::rect;
  throw InputError("unknown window '" + name + "'");
}

std::string window_name(WindowType window) {
  switch (window) {
    case WindowType::sqrt_hann: return "sqrt_hann";
    case WindowType::hann: return "hann";
    case WindowType::rect: return "rect";
  }
  return "unknown";
}

int StftConfig::frames_for(std::size_t samples) const {
  const std::size_t padded = samples + static_cast<std::size_t>(fft_size);
  return static_cast<int>(padded / static_cast<std::size_t>(hop)) - fft_size / hop + 1;
}

void StftConfig::validate() const {
  if (fft_size < 2 || fft_size % 2 != 0) throw InputError("fft_size must be even and >= 2");
  if (hop < 1 || fft_size % hop != 0) throw InputError("hop must divide fft_size");
  if (hop > fft_size / 2) throw InputError("hop must not exceed fft_size/2");
  if (!satisfies_cola(*this)) {
    throw InputError("window " + window_name(window) + " with hop " + std::to_string(hop) +
                     " does not satisfy constant overlap-add");
  }
}

std::vector<double> analysis_window(const StftConfig& config) {
  const int n = config.fft_size;
  std::vector<double> w(static_cast<std::size_t>(n), 1.0);
  if (config.window == WindowType::rect) return w;
  for (int i = 0; i < n; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    w[static_cast<std::size_t>(i)] =
        config.window == WindowType::sqrt_hann ? std::sqrt(hann) : hann;
  }
  return w;
}

std::vector<double> synthesis_window(const StftConfig& config) {
  if (config.window == WindowType::sqrt_hann) return analysis_window(config);
  return std::vector<double>(static_cast<std::size_t>(config.fft_size), 1.0);
}

bool satisfies_cola(const StftConfig& config) {
  if (config.hop < 1 || config.fft_size < 1 || config.fft_size % config.hop != 0) {
    return false;
  }
  const auto a = analysis_window(config);
  const auto s = synthesis_window(config);
  std::vector<double> sum(static_cast<std::size_t>(config.hop), 0.0);
  for (int i = 0; i < config.fft_size; ++i) {
    sum[static_cast<std::size_t>(i % config.hop)] +=
        a[static_cast<std::size_t>(i)] * s[static_cast<std::size_t>(i)];
  }
  const auto [lo, hi] = std::minmax_element(sum.begin(), sum.end());
  return *lo > 0.0 && (*hi - *lo) <= 1e-9 * *hi;
}

StftTensor::StftTensor(int channels_, int frames_, const StftConfig& config_,
                       int sample_rate_, std::size_t num_samples_)
    : channels(channels_),
      frames(frames_),
      bins(config_.bins()),
      data(static_cast<std::size_t>(channels_) * frames_ * config_.bins()),
      config(config_),
      sample_rate(sample_rate_),
      num_samples(num_samples_) {}

StftTensor StftTensor::slice_frames(int begin, int end) const {
  begin = std::clamp(begin, 0, frames);
  end = std::clamp(end, begin, frames);
  const int count = end - begin;
  // Sample count whose frame count under the padding policy equals `count`.
  const std::size_t samples =
      count > 0 ? static_cast<std::size_t>(count) * config.hop - 1 : 0;
  StftTensor out(channels, count, config, sample_rate, samples);
  for (int c = 0; c < channels; ++c) {
    std::copy(data.begin() + static_cast<std::ptrdiff_t>(index(c, begin, 0)),
              data.begin() + static_cast<std::ptrdiff_t>(index(c, begin, 0)) +
                  static_cast<std::ptrdiff_t>(count) * bins,
              out.data.begin() + static_cast<std::ptrdiff_t>(out.index(c, 0, 0)));
  }
  return out;
}

MultichannelAudio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw InputError(path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  bool have_fmt = false;
  const char* payload = nullptr;
  std::size_t payload_size = 0;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* chunk = bytes.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) {
      throw InputError(path.string() + ": truncated chunk");
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw InputError(path.string() + ": malformed fmt chunk");
      format = read_u16(chunk + 8);
      channels = read_u16(chunk + 10);
      rate = read_u32(chunk + 12);
      bits = read_u16(chunk + 22);
      if (format == kFormatExtensible) {
        if (size < 40) throw InputError(path.string() + ": malformed extensible fmt chunk");
        format = read_u16(chunk + 8 + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      payload = chunk + 8;
      payload_size = size;
    }
    pos = body + size + (size % 2);
  }

  if (!have_fmt) throw InputError(path.string() + ": missing fmt chunk");
  if (payload == nullptr) throw InputError(path.string() + ": missing data chunk");
  if (channels < 1 || channels > 16) {
    throw InputError(path.string() + ": unsupported channel count " + std::to_string(channels));
  }
  if (rate == 0) throw InputError(path.string() + ": zero sample rate");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool float32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !float32) {
    throw InputError(path.string() + ": unsupported encoding (format " + std::to_string(format) +
                     ", " + std::to_string(bits) + " bits)");
  }
  const std::size_t frame_bytes = static_cast<std::size_t>(channels) * bits / 8;
  const std::size_t length = payload_size / frame_bytes;
  if (length == 0) throw InputError(path.string() + ": zero-length payload");

  MultichannelAudio audio;
  audio.sample_rate = static_cast<int>(rate);
  audio.samples.resize(channels, static_cast<Eigen::Index>(length));
  for (std::size_t t = 0; t < length; ++t) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      const char* p = payload + t * frame_bytes + c * (bits / 8);
      double v;
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        v = s / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        v = s;
      }
      audio.samples(c, static_cast<Eigen::Index>(t)) = v;
    }
  }
  return audio;
}

void write_wav(const MultichannelAudio& audio, const std::filesystem::path& path) {
  if (!audio.samples.allFinite()) throw InputError("refusing to write non-finite samples");
  const auto channels = static_cast<std::uint16_t>(audio.channels());
  const auto length = static_cast<std::uint32_t>(audio.length());
  const std::uint32_t data_size = length * channels * 4u;

  std::vector<char> out;
  out.reserve(44 + data_size);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  append<std::uint32_t>(out, 36 + data_size);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  append<std::uint32_t>(out, 16);
  append<std::uint16_t>(out, kFormatFloat);
  append<std::uint16_t>(out, channels);
  append<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate));
  append<std::uint32_t>(out, static_cast<std::uint32_t>(audio.sample_rate) * channels * 4u);
  append<std::uint16_t>(out, static_cast<std::uint16_t>(channels * 4));
  append<std::uint16_t>(out, 32);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  append<std::uint32_t>(out, data_size);
  for (std::uint32_t t = 0; t < length; ++t) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      append<float>(out, static_cast<float>(audio.samples(c, t)));
    }
  }

  std::ofstream file(path, std::ios::binary);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw InputError("cannot write " + path.string());
}

StftTensor stft(const MultichannelAudio& audio, const StftConfig& config) {
  config.validate();
  const std::size_t length = audio.length();
  if (length == 0) throw InputError("cannot transform an empty signal");
  const int n = config.fft_size;
  const int half = n / 2;
  const int frames = config.frames_for(length);

  StftTensor out(audio.channels(), frames, config, audio.sample_rate, length);
  const auto window = analysis_window(config);
  detail::RealFft fft(n);
  std::vector<double> frame(static_cast<std::size_t>(n));
  for (int c = 0; c < audio.channels(); ++c) {
    const double* x = audio.samples.row(c).data();
    for (int l = 0; l < frames; ++l) {
      const long long start = static_cast<long long>(l) * config.hop - half;
      for (int i = 0; i < n; ++i) {
        const long long t = start + i;
        const double v = (t >= 0 && t < static_cast<long long>(length))
                             ? x[t]
                             : x[reflect_index(t, length)];
        frame[static_cast<std::size_t>(i)] = v * window[static_cast<std::size_t>(i)];
      }
      fft.forward(frame.data(), &out.at(c, l, 0));
    }
  }
  return out;
}

MultichannelAudio istft(const StftTensor& tensor) {
  tensor.config.validate();
  const StftConfig& config = tensor.config;
  if (tensor.bins != config.bins() ||
      tensor.data.size() !=
          static_cast<std::size_t>(tensor.channels) * tensor.frames * tensor.bins) {
    throw InputError("STFT tensor shape does not match its configuration");
  }
  if (tensor.frames != config.frames_for(tensor.num_samples)) {
    throw InputError("STFT frame count does not match the recorded signal length");
  }
  const int n = config.fft_size;
  const int half = n / 2;
  const std::size_t padded =
      static_cast<std::size_t>(tensor.frames - 1) * config.hop + static_cast<std::size_t>(n);
  const auto analysis = analysis_window(config);
  const auto synthesis = synthesis_window(config);

  std::vector<double> norm(padded, 0.0);
  for (int l = 0; l < tensor.frames; ++l) {
    for (int i = 0; i < n; ++i) {
      norm[static_cast<std::size_t>(l) * config.hop + i] +=
          analysis[static_cast<std::size_t>(i)] * synthesis[static_cast<std::size_t>(i)];
    }
  }

  MultichannelAudio audio;
  audio.sample_rate = tensor.sample_rate;
  audio.samples = RealMatrix::Zero(tensor.channels, static_cast<Eigen::Index>(tensor.num_samples));
  detail::RealFft fft(n);
  std::vector<double> frame(static_cast<std::size_t>(n));
  std::vector<double> acc(padded);
  for (int c = 0; c < tensor.channels; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int l = 0; l < tensor.frames; ++l) {
      fft.inverse(&tensor.at(c, l, 0), frame.data());
      const std::size_t offset = static_cast<std::size_t>(l) * config.hop;
      for (int i = 0; i < n; ++i) {
        acc[offset + i] += frame[static_cast<std::size_t>(i)] / n *
                           synthesis[static_cast<std::size_t>(i)];
      }
    }
    for (std::size_t t = 0; t < tensor.num_samples; ++t) {
      const std::size_t p = t + static_cast<std::size_t>(half);
      if (p < padded && norm[p] > 1e-10) {
        audio.samples(c, static_cast<Eigen::Index>(t)) = acc[p] / norm[p];
      }
    }
  }
  return audio;
}

}  // namespace spatial_diar
