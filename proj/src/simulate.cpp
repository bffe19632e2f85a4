#include "spatial_diar/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "fft.hpp"
#include "spatial_diar/errors.hpp"

namespace spatial_diar {

namespace {

using nlohmann::json;

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double gaussian(std::mt19937_64& rng) {
  // Box-Muller.
  const double u1 = std::max(uniform01(rng), 0x1.0p-60);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int next_pow2(std::size_t n) {
  int p = 1;
  while (static_cast<std::size_t>(p) < n) p <<= 1;
  return p;
}

const char* signal_name(SourceSignal s) {
  switch (s) {
    case SourceSignal::tone: return "tone";
    case SourceSignal::noise_burst: return "noise_burst";
    case SourceSignal::speech_shaped: return "speech_shaped";
  }
  return "speech_shaped";
}

SourceSignal parse_signal(const std::string& name) {
  if (name == "tone") return SourceSignal::tone;
  if (name == "noise_burst" || name == "noise-burst") return SourceSignal::noise_burst;
  if (name == "speech_shaped" || name == "speech-shaped") return SourceSignal::speech_shaped;
  throw InputError("unknown source signal '" + name + "'");
}

Eigen::Vector3d parse_point(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw InputError("positions must have three coordinates");
  return {v[0], v[1], v[2]};
}

// Unit-RMS pink noise limited to 100 Hz - 7 kHz, amplitude-modulated at 4 Hz.
std::vector<double> speech_shaped(std::size_t length, int rate, std::mt19937_64& rng) {
  const int n = next_pow2(length);
  std::vector<double> white(static_cast<std::size_t>(n));
  for (double& v : white) v = gaussian(rng);
  detail::RealFft fft(n);
  std::vector<Complex> spectrum(static_cast<std::size_t>(fft.bins()));
  fft.forward(white.data(), spectrum.data());
  for (int k = 0; k < fft.bins(); ++k) {
    const double hz = static_cast<double>(k) * rate / n;
    spectrum[static_cast<std::size_t>(k)] *= (hz >= 100.0 && hz <= 7000.0) ? 1.0 / std::sqrt(hz) : 0.0;
  }
  std::vector<double> pink(static_cast<std::size_t>(n));
  fft.inverse(spectrum.data(), pink.data());
  pink.resize(length);
  double power = 0.0;
  for (double v : pink) power += v * v;
  const double scale = power > 0.0 ? 1.0 / std::sqrt(power / static_cast<double>(length)) : 0.0;
  const double phase = 2.0 * std::numbers::pi * uniform01(rng);
  for (std::size_t t = 0; t < length; ++t) {
    const double env = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * 4.0 * t / rate + phase);
    pink[t] *= scale * env / std::sqrt(0.55 * 0.55 + 0.45 * 0.45 / 2.0);
  }
  return pink;
}

std::vector<double> dry_signal(const SourceSpec& src, std::size_t length, int rate,
                               std::mt19937_64& rng) {
  std::vector<double> s(length);
  switch (src.signal) {
    case SourceSignal::tone: {
      const double phase = 2.0 * std::numbers::pi * uniform01(rng);
      for (std::size_t t = 0; t < length; ++t) {
        s[t] = std::sqrt(2.0) * std::sin(2.0 * std::numbers::pi * src.frequency_hz * t / rate + phase);
      }
      break;
    }
    case SourceSignal::noise_burst:
      for (double& v : s) v = gaussian(rng);
      break;
    case SourceSignal::speech_shaped:
      s = speech_shaped(length, rate, rng);
      break;
  }
  // Gate with 10 ms raised-cosine ramps inside each active interval.
  std::vector<double> gate(length, 0.0);
  const double ramp = 0.01 * rate;
  for (const auto& [start, end] : src.activity) {
    const auto a = static_cast<std::size_t>(std::clamp(std::llround(start * rate), 0LL, static_cast<long long>(length)));
    const auto b = static_cast<std::size_t>(std::clamp(std::llround(end * rate), 0LL, static_cast<long long>(length)));
    for (std::size_t t = a; t < b; ++t) {
      const double edge = std::min(static_cast<double>(t - a), static_cast<double>(b - 1 - t));
      const double g = edge >= ramp ? 1.0 : 0.5 - 0.5 * std::cos(std::numbers::pi * edge / ramp);
      gate[t] = std::max(gate[t], g);
    }
  }
  for (std::size_t t = 0; t < length; ++t) s[t] *= gate[t];
  return s;
}

// Delays and attenuates the dry signal onto every microphone.
MultichannelAudio propagate(const std::vector<double>& dry, const Eigen::Vector3d& source,
                            const std::vector<Eigen::Vector3d>& mics, int rate) {
  const std::size_t length = dry.size();
  double max_delay = 0.0;
  for (const auto& m : mics) max_delay = std::max(max_delay, (m - source).norm() / kSpeedOfSound * rate);
  const int n = next_pow2(length + static_cast<std::size_t>(std::ceil(max_delay)) + 64);
  detail::RealFft fft(n);
  std::vector<double> buffer(static_cast<std::size_t>(n), 0.0);
  std::copy(dry.begin(), dry.end(), buffer.begin());
  std::vector<Complex> spectrum(static_cast<std::size_t>(fft.bins()));
  fft.forward(buffer.data(), spectrum.data());

  MultichannelAudio out;
  out.sample_rate = rate;
  out.samples.resize(static_cast<Eigen::Index>(mics.size()), static_cast<Eigen::Index>(length));
  std::vector<Complex> shifted(spectrum.size());
  for (std::size_t c = 0; c < mics.size(); ++c) {
    const double distance = (mics[c] - source).norm();
    const double delay = distance / kSpeedOfSound * rate;
    for (int k = 0; k < fft.bins(); ++k) {
      const double phase = -2.0 * std::numbers::pi * k * delay / n;
      shifted[static_cast<std::size_t>(k)] =
          spectrum[static_cast<std::size_t>(k)] * std::polar(1.0 / (distance * n), phase);
    }
    shifted.back() = 0.0;  // Nyquist
    fft.inverse(shifted.data(), buffer.data());
    for (std::size_t t = 0; t < length; ++t) out.samples(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(t)) = buffer[t];
  }
  return out;
}

RealMatrix channel_energy(const MultichannelAudio& audio, const StftConfig& config) {
  const StftTensor y = stft(audio, config);
  RealMatrix e = RealMatrix::Zero(y.frames, y.bins);
  for (int c = 0; c < y.channels; ++c) {
    for (int l = 0; l < y.frames; ++l) {
      for (int f = 0; f < y.bins; ++f) e(l, f) += std::norm(y.at(c, l, f));
    }
  }
  return e;
}

Eigen::MatrixXd orthonormal_centroids(int count, int dim, std::mt19937_64& rng) {
  Eigen::MatrixXd c(count, dim);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < dim; ++j) c(i, j) = gaussian(rng);
    for (int p = 0; p < i; ++p) c.row(i) -= c.row(i).dot(c.row(p)) * c.row(p);
    c.row(i).normalize();
  }
  return c;
}

}  // namespace

void SceneSpec::validate() const {
  if (mics.size() < 1 || mics.size() > 16) throw InputError("scene needs 1-16 microphones");
  if (!(duration_s > 0.0)) throw InputError("scene duration must be positive");
  if (sample_rate <= 0) throw InputError("sample rate must be positive");
  if (rt != "anechoic") throw InputError("only anechoic scenes are supported");
  if (embedding_dim < static_cast<int>(sources.size())) {
    throw InputError("embedding_dim must be at least the number of sources");
  }
  for (const auto& m : mics) {
    if (!m.allFinite()) throw InputError("microphone positions must be finite");
  }
  for (const auto& s : sources) {
    if (!s.position.allFinite()) throw InputError("source positions must be finite");
    for (const auto& m : mics) {
      if ((s.position - m).norm() < 1e-3) throw InputError("source coincides with a microphone");
    }
    for (const auto& [a, b] : s.activity) {
      if (a < 0.0 || b <= a || b > duration_s + 1e-9) {
        throw InputError("source activity must lie within the scene duration");
      }
    }
  }
  stft.validate();
}

SceneSpec parse_scene_spec(std::string_view json_text) {
  SceneSpec spec;
  try {
    const json j = json::parse(json_text);
    spec.session = j.value("session", spec.session);
    spec.noise_snr_db = j.value("noise_snr_db", spec.noise_snr_db);
    spec.rt = j.value("rt", spec.rt);
    spec.seed = j.value("seed", spec.seed);
    spec.duration_s = j.at("duration_s").get<double>();
    spec.sample_rate = j.value("sample_rate", spec.sample_rate);
    spec.embedding_dim = j.value("embedding_dim", spec.embedding_dim);
    spec.embedding_noise = j.value("embedding_noise", spec.embedding_noise);
    if (j.contains("stft")) {
      const auto& s = j.at("stft");
      spec.stft.fft_size = s.value("fft_size", spec.stft.fft_size);
      spec.stft.hop = s.value("hop", spec.stft.hop);
      spec.stft.window = parse_window(s.value("window", window_name(spec.stft.window)));
    }
    for (const auto& m : j.at("mic_positions")) spec.mics.push_back(parse_point(m));
    if (j.contains("num_channels") && j.at("num_channels").get<int>() != spec.num_channels()) {
      throw InputError("num_channels does not match mic_positions");
    }
    for (const auto& s : j.value("sources", json::array())) {
      SourceSpec src;
      src.position = parse_point(s.at("position"));
      for (const auto& a : s.value("activity", json::array())) {
        const auto v = a.get<std::vector<double>>();
        if (v.size() != 2) throw InputError("activity entries are [start_s, end_s]");
        src.activity.emplace_back(v[0], v[1]);
      }
      src.signal = parse_signal(s.value("signal", std::string("speech_shaped")));
      src.frequency_hz = s.value("frequency_hz", src.frequency_hz);
      src.name = s.value("name", std::string());
      spec.sources.push_back(std::move(src));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed scene spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

std::string scene_spec_to_json(const SceneSpec& spec) {
  json j;
  j["session"] = spec.session;
  j["num_channels"] = spec.num_channels();
  j["noise_snr_db"] = spec.noise_snr_db;
  j["rt"] = spec.rt;
  j["seed"] = spec.seed;
  j["duration_s"] = spec.duration_s;
  j["sample_rate"] = spec.sample_rate;
  j["embedding_dim"] = spec.embedding_dim;
  j["embedding_noise"] = spec.embedding_noise;
  j["stft"] = {{"fft_size", spec.stft.fft_size},
               {"hop", spec.stft.hop},
               {"window", window_name(spec.stft.window)}};
  j["mic_positions"] = json::array();
  for (const auto& m : spec.mics) j["mic_positions"].push_back({m.x(), m.y(), m.z()});
  j["sources"] = json::array();
  for (const auto& s : spec.sources) {
    json src;
    src["position"] = {s.position.x(), s.position.y(), s.position.z()};
    src["signal"] = signal_name(s.signal);
    src["frequency_hz"] = s.frequency_hz;
    if (!s.name.empty()) src["name"] = s.name;
    src["activity"] = json::array();
    for (const auto& [a, b] : s.activity) src["activity"].push_back({a, b});
    j["sources"].push_back(std::move(src));
  }
  return j.dump(2);
}

SceneTruth simulate_scene(const SceneSpec& spec) {
  spec.validate();
  const auto length = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
  const int channels = spec.num_channels();
  std::mt19937_64 rng(spec.seed);

  SceneTruth truth;
  truth.audio.sample_rate = spec.sample_rate;
  truth.audio.samples = RealMatrix::Zero(channels, static_cast<Eigen::Index>(length));
  for (const auto& src : spec.sources) {
    truth.images.push_back(propagate(dry_signal(src, length, spec.sample_rate, rng), src.position,
                                     spec.mics, spec.sample_rate));
    truth.audio.samples += truth.images.back().samples;
  }

  // Noise level relative to the mean mixture power over speech-active samples.
  std::vector<std::uint8_t> speech(length, 0);
  for (const auto& src : spec.sources) {
    for (const auto& [a, b] : src.activity) {
      const auto lo = static_cast<std::size_t>(std::llround(a * spec.sample_rate));
      const auto hi = std::min(length, static_cast<std::size_t>(std::llround(b * spec.sample_rate)));
      for (std::size_t t = lo; t < hi; ++t) speech[t] = 1;
    }
  }
  double power = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < length; ++t) {
    if (!speech[t]) continue;
    power += truth.audio.samples.col(static_cast<Eigen::Index>(t)).squaredNorm();
    count += static_cast<std::size_t>(channels);
  }
  const double reference = count > 0 ? power / static_cast<double>(count) : 1.0;
  const double sigma = std::sqrt(reference * std::pow(10.0, -spec.noise_snr_db / 10.0));
  truth.noise.sample_rate = spec.sample_rate;
  truth.noise.samples.resize(channels, static_cast<Eigen::Index>(length));
  for (Eigen::Index c = 0; c < channels; ++c) {
    for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(length); ++t) {
      truth.noise.samples(c, t) = sigma * gaussian(rng);
    }
  }
  truth.audio.samples += truth.noise.samples;

  // Frame activities at the STFT frame rate; frame l is centered at l * hop.
  const int frames = spec.stft.frames_for(length);
  const double frame_rate = static_cast<double>(spec.sample_rate) / spec.stft.hop;
  truth.activities = {RealMatrix::Zero(frames, static_cast<Eigen::Index>(spec.sources.size())), frame_rate};
  for (std::size_t k = 0; k < spec.sources.size(); ++k) {
    for (int l = 0; l < frames; ++l) {
      const double t = l / frame_rate;
      for (const auto& [a, b] : spec.sources[k].activity) {
        if (t >= a && t < b) truth.activities.d(l, static_cast<Eigen::Index>(k)) = 1.0;
      }
    }
  }

  if (!spec.sources.empty()) {
    RealMatrix best = channel_energy(truth.noise, spec.stft);
    std::vector<RealMatrix> energy;
    for (const auto& image : truth.images) energy.push_back(channel_energy(image, spec.stft));
    for (std::size_t k = 0; k < energy.size(); ++k) truth.dominance.push_back(RealMatrix::Zero(best.rows(), best.cols()));
    for (Eigen::Index l = 0; l < best.rows(); ++l) {
      for (Eigen::Index f = 0; f < best.cols(); ++f) {
        int winner = -1;
        double top = best(l, f);
        for (std::size_t k = 0; k < energy.size(); ++k) {
          if (energy[k](l, f) > top) {
            top = energy[k](l, f);
            winner = static_cast<int>(k);
          }
        }
        if (winner >= 0) truth.dominance[static_cast<std::size_t>(winner)](l, f) = 1.0;
      }
    }
  }

  for (std::size_t k = 0; k < spec.sources.size(); ++k) {
    const std::string name = spec.sources[k].name.empty() ? "spk" + std::to_string(k) : spec.sources[k].name;
    for (const auto& [a, b] : spec.sources[k].activity) {
      truth.rttm.push_back({spec.session, name, a, b - a});
      truth.embedding_labels.push_back(static_cast<int>(k));
    }
  }
  // Stable order by start time, labels following their segments.
  std::vector<std::size_t> order(truth.rttm.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return truth.rttm[x].start < truth.rttm[y].start;
  });
  SegmentList sorted;
  std::vector<int> labels;
  for (std::size_t i : order) {
    sorted.push_back(truth.rttm[i]);
    labels.push_back(truth.embedding_labels[i]);
  }
  truth.rttm = std::move(sorted);
  truth.embedding_labels = std::move(labels);

  const Eigen::MatrixXd centroids = orthonormal_centroids(
      static_cast<int>(spec.sources.size()), spec.embedding_dim, rng);
  truth.embeddings.vectors.resize(static_cast<Eigen::Index>(truth.rttm.size()), spec.embedding_dim);
  for (std::size_t i = 0; i < truth.rttm.size(); ++i) {
    for (int j = 0; j < spec.embedding_dim; ++j) {
      truth.embeddings.vectors(static_cast<Eigen::Index>(i), j) =
          centroids(truth.embedding_labels[i], j) + spec.embedding_noise * gaussian(rng);
    }
    truth.embeddings.spans.push_back({spec.session, truth.rttm[i].start, truth.rttm[i].end()});
  }
  return truth;
}

DiarizationMatrix corrupt_diarization(const DiarizationMatrix& d, const CorruptionOptions& opts) {
  for (const double rate : {opts.confusion_rate, opts.miss_rate, opts.fa_rate}) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw InputError("corruption rates must lie in [0, 1]");
  }
  if (opts.run_length < 1) throw InputError("run_length must be >= 1");
  std::mt19937_64 rng(opts.seed);
  DiarizationMatrix out = d;
  const int speakers = d.speakers();
  std::vector<double> row(static_cast<std::size_t>(speakers));
  for (int begin = 0; begin < d.frames(); begin += opts.run_length) {
    const int end = std::min(d.frames(), begin + opts.run_length);
    const bool confuse = uniform01(rng) < opts.confusion_rate;
    const int shift = speakers > 1 ? 1 + static_cast<int>(uniform01(rng) * (speakers - 1)) % (speakers - 1) : 0;
    std::vector<std::uint8_t> drop(static_cast<std::size_t>(speakers));
    for (int k = 0; k < speakers; ++k) drop[static_cast<std::size_t>(k)] = uniform01(rng) < opts.miss_rate;
    const bool insert = uniform01(rng) < opts.fa_rate;
    const int inserted = speakers > 0 ? static_cast<int>(uniform01(rng) * speakers) % speakers : 0;

    for (int l = begin; l < end; ++l) {
      const bool silent = d.d.row(l).maxCoeff() <= 0.0;
      if (confuse && shift > 0 && !silent) {
        for (int k = 0; k < speakers; ++k) row[static_cast<std::size_t>((k + shift) % speakers)] = out.d(l, k);
        for (int k = 0; k < speakers; ++k) out.d(l, k) = row[static_cast<std::size_t>(k)];
      }
      for (int k = 0; k < speakers; ++k) {
        if (drop[static_cast<std::size_t>(k)]) out.d(l, k) = 0.0;
      }
      if (insert && silent && speakers > 0) out.d(l, inserted) = 1.0;
    }
  }
  return out;
}

SceneSpec make_meeting_spec(const MeetingOptions& opts) {
  if (opts.num_mics < 2 || opts.num_speakers < 1) throw InputError("meeting needs >= 2 mics and >= 1 speaker");
  std::mt19937_64 rng(opts.seed ^ 0x9E3779B97F4A7C15ULL);
  SceneSpec spec;
  spec.session = opts.session;
  spec.seed = opts.seed;
  spec.duration_s = opts.duration_s;
  spec.noise_snr_db = opts.noise_snr_db;
  for (int m = 0; m < opts.num_mics; ++m) {
    const double a = 2.0 * std::numbers::pi * m / opts.num_mics;
    spec.mics.emplace_back(opts.array_radius_m * std::cos(a), opts.array_radius_m * std::sin(a), 0.0);
  }
  // Speakers spread evenly in azimuth with jitter, 1-2 m away.
  const double offset = 2.0 * std::numbers::pi * uniform01(rng);
  for (int k = 0; k < opts.num_speakers; ++k) {
    const double azimuth = offset + 2.0 * std::numbers::pi * (k + 0.3 * (uniform01(rng) - 0.5)) / opts.num_speakers;
    const double distance = 1.0 + uniform01(rng);
    SourceSpec src;
    src.position = {distance * std::cos(azimuth), distance * std::sin(azimuth), 0.3 * uniform01(rng)};
    spec.sources.push_back(std::move(src));
  }

  double t = 0.2 + 0.5 * uniform01(rng);
  int previous = -1;
  while (t < opts.duration_s - 1.0) {
    int speaker = static_cast<int>(uniform01(rng) * opts.num_speakers) % opts.num_speakers;
    if (opts.num_speakers > 1 && speaker == previous) speaker = (speaker + 1) % opts.num_speakers;
    const double length = 1.5 + 2.5 * uniform01(rng);
    const double end = std::min(opts.duration_s - 0.05, t + length);
    spec.sources[static_cast<std::size_t>(speaker)].activity.emplace_back(std::round(t * 1000.0) / 1000.0,
                                                                         std::round(end * 1000.0) / 1000.0);
    previous = speaker;
    if (uniform01(rng) < opts.overlap_probability) {
      t = end - (0.3 + 0.5 * uniform01(rng));  // next turn starts early
    } else {
      t = end + 0.1 + 0.5 * uniform01(rng);
    }
  }
  // Same-speaker turns can touch after an overlap; merge them.
  for (auto& src : spec.sources) {
    std::sort(src.activity.begin(), src.activity.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& a : src.activity) {
      if (!merged.empty() && a.first <= merged.back().second) {
        merged.back().second = std::max(merged.back().second, a.second);
      } else {
        merged.push_back(a);
      }
    }
    src.activity = std::move(merged);
  }
  return spec;
}

SyntheticEmbeddings synthetic_embeddings(int num_classes, int per_class, int dim,
                                         double noise_std, std::uint64_t seed) {
  if (num_classes < 1 || per_class < 1 || dim < num_classes) {
    throw InputError("invalid synthetic embedding dimensions");
  }
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd centroids = orthonormal_centroids(num_classes, dim, rng);
  SyntheticEmbeddings out;
  out.vectors.resize(num_classes * per_class, dim);
  // Interleave classes so row order carries no label information.
  for (int i = 0; i < per_class; ++i) {
    for (int c = 0; c < num_classes; ++c) {
      const int row = i * num_classes + c;
      for (int j = 0; j < dim; ++j) out.vectors(row, j) = centroids(c, j) + noise_std * gaussian(rng);
      out.labels.push_back(c);
    }
  }
  return out;
}

}  // namespace spatial_diar
