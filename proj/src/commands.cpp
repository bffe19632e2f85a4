#include "spatial_diar/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "spatial_diar/errors.hpp"
#include "spatial_diar/parallel.hpp"
#include "spatial_diar/simulate.hpp"
#include "spatial_diar/tensor_io.hpp"

namespace spatial_diar {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw InputError("config section '" + where + "' must be an object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* key : allowed) known = known || item.key() == key;
    if (!known) throw InputError("unknown config key '" + where + "." + item.key() + "'");
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

PriorMode parse_prior_mode(const std::string& name) {
  if (name == "updated") return PriorMode::updated;
  if (name == "frozen") return PriorMode::frozen;
  if (name == "guided") return PriorMode::guided;
  throw InputError("unknown prior_mode '" + name + "'");
}

std::string prior_mode_name(PriorMode mode) {
  switch (mode) {
    case PriorMode::updated: return "updated";
    case PriorMode::frozen: return "frozen";
    case PriorMode::guided: return "guided";
  }
  return "updated";
}

void read_em(const json& obj, EmOptions& em, const std::string& where) {
  check_keys(obj, {"iterations", "load_eps", "prior_mode", "inverse_eps"}, where);
  read_field(obj, "iterations", em.iterations);
  read_field(obj, "load_eps", em.load_eps);
  read_field(obj, "inverse_eps", em.inverse_eps);
  if (obj.contains("prior_mode")) em.prior_mode = parse_prior_mode(obj.at("prior_mode").get<std::string>());
}

json em_to_json(const EmOptions& em) {
  return {{"iterations", em.iterations},
          {"load_eps", em.load_eps},
          {"prior_mode", prior_mode_name(em.prior_mode)},
          {"inverse_eps", em.inverse_eps}};
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw InputError("missing file " + path.string());
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

void run_hook(const std::string& command, const std::string& stage, const std::vector<fs::path>& args) {
  std::string line = command + " " + quote(stage);
  for (const auto& a : args) line += " " + quote(a.string());
  std::fflush(nullptr);
  const int raw = std::system(line.c_str());
  if (raw == -1) throw HookError(stage, 127);
  const int status = WIFEXITED(raw) ? WEXITSTATUS(raw) : 128 + (WIFSIGNALED(raw) ? WTERMSIG(raw) : 0);
  if (status != 0) throw HookError(stage, status);
}

std::string session_of(const SegmentList& segments, const std::string& fallback) {
  return segments.empty() ? fallback : segments.front().session;
}

SpeakerActivityMatrix binarize(const DiarizationMatrix& d) {
  SpeakerActivityMatrix m;
  m.frame_rate = d.frame_rate;
  m.m = (d.d.array() > 0.5).cast<std::uint8_t>().matrix();
  return m;
}

std::pair<int, int> segment_frames(const Segment& s, double frame_rate) {
  const int begin = static_cast<int>(std::floor(s.start * frame_rate));
  const int end = std::max(begin + 1, static_cast<int>(std::ceil(s.end() * frame_rate)));
  return {begin, end};
}

struct ManifestRow {
  std::string session;
  double start_s = 0.0;
  double end_s = 0.0;
  int row = 0;
  std::optional<int> word_count;
  std::string speaker;
};

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<ManifestRow> rows;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ManifestRow r;
      r.session = j.at("session").get<std::string>();
      r.start_s = j.at("start_s").get<double>();
      r.end_s = j.at("end_s").get<double>();
      r.row = j.value("row", static_cast<int>(rows.size()));
      if (j.contains("word_count")) r.word_count = j.at("word_count").get<int>();
      r.speaker = j.value("speaker", std::string());
      if (!(r.end_s > r.start_s)) throw InputError("segment end must follow its start");
      rows.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return rows;
}

EmbeddingSet load_embeddings(const fs::path& embeddings_path, const fs::path& manifest_path) {
  const RealMatrix vectors = to_real_matrix(read_tensor(embeddings_path));
  const auto rows = read_manifest(manifest_path);
  EmbeddingSet set;
  set.vectors.resize(static_cast<Eigen::Index>(rows.size()), vectors.cols());
  const bool counted = std::any_of(rows.begin(), rows.end(), [](const ManifestRow& r) { return r.word_count.has_value(); });
  if (counted) set.word_counts.emplace();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.row < 0 || r.row >= vectors.rows()) throw InputError("manifest row index out of range");
    set.vectors.row(static_cast<Eigen::Index>(i)) = vectors.row(r.row);
    set.spans.push_back({r.session, r.start_s, r.end_s});
    if (counted) {
      if (!r.word_count) throw InputError("word_count must be given for every manifest row or none");
      set.word_counts->push_back(*r.word_count);
    }
  }
  return set;
}

std::string manifest_line(const json& j) { return j.dump() + "\n"; }

void sort_segments(SegmentList& segments) {
  std::stable_sort(segments.begin(), segments.end(), [](const Segment& a, const Segment& b) {
    if (a.session != b.session) return a.session < b.session;
    if (a.start != b.start) return a.start < b.start;
    return a.speaker < b.speaker;
  });
}

json report_json(const DerReport& r) {
  json mapping = json::array();
  for (const auto& m : r.mapping) mapping.push_back({{"session", m.session}, {"hyp", m.hyp}, {"ref", m.ref}});
  return {{"fa", r.fa}, {"miss", r.miss}, {"spkerr", r.spkerr}, {"der", r.der},
          {"scored_time", r.scored_time}, {"mapping", mapping}};
}

}  // namespace

void PipelineConfig::validate() const {
  stft.validate();
  if (rectify.block_length < 2 || rectify.block_length % 2 != 0) {
    throw InputError("rectifier.block_length must be even and >= 2");
  }
  if (!(rectify.vad.threshold > 0.0 && rectify.vad.threshold < 1.0)) {
    throw InputError("rectifier.threshold must lie in (0, 1)");
  }
  if (rectify.vad.hangover < 0) throw InputError("rectifier.hangover must be >= 0");
  if (rounds < 1 || rounds > 100) throw InputError("rectifier.rounds must lie in [1, 100]");
  rectify.em.validate();
  gss.em.validate();
  if (!(gss.context_s >= 0.0)) throw InputError("beamform.context_s must be >= 0");
  if (gss.reference < -1 || gss.reference >= 16) throw InputError("beamform.reference out of range");
  if (cluster.max_k < 1) throw InputError("clustering.max_k must be >= 1");
  if (!(cluster.keep_fraction > 0.0 && cluster.keep_fraction <= 1.0)) {
    throw InputError("clustering.keep_fraction must lie in (0, 1]");
  }
  if (cluster.filter.min_words < 0) throw InputError("clustering.min_words must be >= 0");
  if (!(cluster.filter.min_duration_s >= 0.0)) throw InputError("clustering.min_duration_s must be >= 0");
  if (cluster.kmeans.restarts < 1 || cluster.kmeans.max_iterations < 1) {
    throw InputError("clustering restarts and max_iterations must be >= 1");
  }
  if (!(segments.min_gap_s >= 0.0 && segments.min_dur_s >= 0.0)) {
    throw InputError("segment min_gap_s and min_dur_s must be >= 0");
  }
  if (!(der.collar_s >= 0.0)) throw InputError("scoring.collar_s must be >= 0");
  if (!(der.frame_s > 0.0)) throw InputError("scoring.frame_s must be positive");
}

PipelineConfig parse_pipeline_config(std::string_view json_text) {
  PipelineConfig c;
  try {
    const json j = json::parse(json_text);
    check_keys(j, {"stft", "rectifier", "beamform", "clustering", "segments", "scoring"}, "config");
    if (j.contains("stft")) {
      const auto& s = j.at("stft");
      check_keys(s, {"fft_size", "hop", "window"}, "stft");
      read_field(s, "fft_size", c.stft.fft_size);
      read_field(s, "hop", c.stft.hop);
      if (s.contains("window")) c.stft.window = parse_window(s.at("window").get<std::string>());
    }
    if (j.contains("rectifier")) {
      const auto& r = j.at("rectifier");
      check_keys(r, {"block_length", "threshold", "hangover", "symmetric", "rounds", "pre_threshold", "em"},
                 "rectifier");
      read_field(r, "block_length", c.rectify.block_length);
      read_field(r, "threshold", c.rectify.vad.threshold);
      read_field(r, "hangover", c.rectify.vad.hangover);
      read_field(r, "symmetric", c.rectify.vad.symmetric);
      read_field(r, "rounds", c.rounds);
      read_field(r, "pre_threshold", c.rectify.pre_threshold);
      if (r.contains("em")) read_em(r.at("em"), c.rectify.em, "rectifier.em");
    }
    if (j.contains("beamform")) {
      const auto& b = j.at("beamform");
      check_keys(b, {"context_s", "reference", "em"}, "beamform");
      read_field(b, "context_s", c.gss.context_s);
      if (b.contains("reference")) {
        const auto& ref = b.at("reference");
        if (ref.is_string()) {
          if (ref.get<std::string>() != "max_energy") throw InputError("beamform.reference must be \"max_energy\" or a channel index");
          c.gss.reference = -1;
        } else {
          c.gss.reference = ref.get<int>();
          if (c.gss.reference < 0) throw InputError("beamform.reference must be >= 0");
        }
      }
      if (b.contains("em")) read_em(b.at("em"), c.gss.em, "beamform.em");
    }
    if (j.contains("clustering")) {
      const auto& k = j.at("clustering");
      check_keys(k, {"max_k", "keep_fraction", "min_words", "min_duration_s", "seed", "restarts", "max_iterations"},
                 "clustering");
      read_field(k, "max_k", c.cluster.max_k);
      read_field(k, "keep_fraction", c.cluster.keep_fraction);
      read_field(k, "min_words", c.cluster.filter.min_words);
      read_field(k, "min_duration_s", c.cluster.filter.min_duration_s);
      read_field(k, "seed", c.cluster.kmeans.seed);
      read_field(k, "restarts", c.cluster.kmeans.restarts);
      read_field(k, "max_iterations", c.cluster.kmeans.max_iterations);
    }
    if (j.contains("segments")) {
      const auto& s = j.at("segments");
      check_keys(s, {"min_gap_s", "min_dur_s"}, "segments");
      read_field(s, "min_gap_s", c.segments.min_gap_s);
      read_field(s, "min_dur_s", c.segments.min_dur_s);
    }
    if (j.contains("scoring")) {
      const auto& s = j.at("scoring");
      check_keys(s, {"collar_s", "frame_s", "ignore_overlap"}, "scoring");
      read_field(s, "collar_s", c.der.collar_s);
      read_field(s, "frame_s", c.der.frame_s);
      read_field(s, "ignore_overlap", c.der.ignore_overlap);
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig read_pipeline_config(const fs::path& path) { return parse_pipeline_config(read_text(path)); }

std::string pipeline_config_to_json(const PipelineConfig& c) {
  json j;
  j["stft"] = {{"fft_size", c.stft.fft_size}, {"hop", c.stft.hop}, {"window", window_name(c.stft.window)}};
  j["rectifier"] = {{"block_length", c.rectify.block_length},
                    {"threshold", c.rectify.vad.threshold},
                    {"hangover", c.rectify.vad.hangover},
                    {"symmetric", c.rectify.vad.symmetric},
                    {"rounds", c.rounds},
                    {"pre_threshold", c.rectify.pre_threshold},
                    {"em", em_to_json(c.rectify.em)}};
  json ref = c.gss.reference < 0 ? json("max_energy") : json(c.gss.reference);
  j["beamform"] = {{"context_s", c.gss.context_s}, {"reference", ref}, {"em", em_to_json(c.gss.em)}};
  j["clustering"] = {{"max_k", c.cluster.max_k},
                     {"keep_fraction", c.cluster.keep_fraction},
                     {"min_words", c.cluster.filter.min_words},
                     {"min_duration_s", c.cluster.filter.min_duration_s},
                     {"seed", c.cluster.kmeans.seed},
                     {"restarts", c.cluster.kmeans.restarts},
                     {"max_iterations", c.cluster.kmeans.max_iterations}};
  j["segments"] = {{"min_gap_s", c.segments.min_gap_s}, {"min_dur_s", c.segments.min_dur_s}};
  j["scoring"] = {{"collar_s", c.der.collar_s}, {"frame_s", c.der.frame_s}, {"ignore_overlap", c.der.ignore_overlap}};
  return j.dump(2) + "\n";
}

SceneTruth cmd_simulate(const fs::path& spec_path, const fs::path& out_dir) {
  const SceneSpec spec = parse_scene_spec(read_text(spec_path));
  SceneTruth truth = simulate_scene(spec);
  fs::create_directories(out_dir);
  write_wav(truth.audio, out_dir / "audio.wav");
  write_wav(truth.noise, out_dir / "noise.wav");
  json sources = json::array();
  for (std::size_t k = 0; k < truth.images.size(); ++k) {
    const std::string name = "src" + std::to_string(k) + ".wav";
    write_wav(truth.images[k], out_dir / name);
    sources.push_back(name);
  }
  write_rttm_file(out_dir / "ref.rttm", truth.rttm);
  write_tensor(out_dir / "activity.tensor", to_tensor(truth.activities.d));

  TensorFile dominance;
  dominance.dtype = DType::f32;
  const std::size_t frames = truth.dominance.empty() ? 0 : static_cast<std::size_t>(truth.dominance[0].rows());
  const std::size_t bins = truth.dominance.empty() ? 0 : static_cast<std::size_t>(truth.dominance[0].cols());
  dominance.shape = {truth.dominance.size(), frames, bins};
  for (const auto& m : truth.dominance) {
    for (Eigen::Index l = 0; l < m.rows(); ++l) {
      for (Eigen::Index f = 0; f < m.cols(); ++f) dominance.values.push_back(static_cast<float>(m(l, f)));
    }
  }
  write_tensor(out_dir / "dominance.tensor", dominance);

  write_tensor(out_dir / "embeddings.tensor", to_tensor(truth.embeddings.vectors));
  std::string manifest;
  for (std::size_t i = 0; i < truth.rttm.size(); ++i) {
    manifest += manifest_line({{"session", truth.rttm[i].session},
                               {"start_s", truth.rttm[i].start},
                               {"end_s", truth.rttm[i].end()},
                               {"row", i},
                               {"speaker", truth.rttm[i].speaker}});
  }
  write_text(out_dir / "segments.jsonl", manifest);
  write_text(out_dir / "scene.json", scene_spec_to_json(spec) + "\n");
  const json files = {{"audio", "audio.wav"},
                      {"noise", "noise.wav"},
                      {"sources", sources},
                      {"reference", "ref.rttm"},
                      {"activity", "activity.tensor"},
                      {"dominance", "dominance.tensor"},
                      {"embeddings", "embeddings.tensor"},
                      {"segments", "segments.jsonl"},
                      {"scene", "scene.json"},
                      {"frame_rate", truth.activities.frame_rate}};
  write_text(out_dir / "manifest.json", files.dump(2) + "\n");
  return truth;
}

StftTensor cmd_stft(const fs::path& audio_path, const fs::path& out_path, const StftConfig& config) {
  const StftTensor y = stft(read_wav(audio_path), config);
  TensorFile t;
  t.dtype = DType::c64;
  t.shape = {static_cast<std::size_t>(y.channels), static_cast<std::size_t>(y.frames),
             static_cast<std::size_t>(y.bins)};
  t.values.reserve(y.data.size() * 2);
  for (const Complex& v : y.data) {
    t.values.push_back(static_cast<float>(v.real()));
    t.values.push_back(static_cast<float>(v.imag()));
  }
  write_tensor(out_path, t);
  return y;
}

RectifyResult cmd_rectify(const fs::path& audio_path, const fs::path& diar_path,
                          const PipelineConfig& config, const fs::path& out_dir) {
  config.validate();
  require_file(audio_path);
  require_file(diar_path);
  const StftTensor y = stft(read_wav(audio_path), config.stft);
  DiarizationMatrix d;
  std::vector<std::string> speakers;
  std::string session = audio_path.stem().string();
  if (diar_path.extension() == ".rttm") {
    const SegmentList segments = read_rttm_file(diar_path);
    speakers = speaker_labels(segments);
    session = session_of(segments, session);
    d = segments_to_activity(segments, speakers, y.frame_rate(), y.frames);
  } else {
    d = {to_real_matrix(read_tensor(diar_path)), y.frame_rate()};
  }
  const RectifyResult result = iterate_rectification(y, d, config.rectify, config.rounds);
  fs::create_directories(out_dir);
  write_rttm_file(out_dir / "rectified.rttm",
                  mask_to_segments(result.activities, y.frame_rate(), session, config.segments, speakers));
  write_tensor(out_dir / "posterior.tensor", to_tensor(result.posterior));
  write_tensor(out_dir / "activity.tensor", to_tensor(RealMatrix(result.activities.m.cast<double>())));
  return result;
}

RealMatrix spatial_embedding(const StftTensor& y, const GssEstimate& estimate) {
  const StftTensor window = y.slice_frames(estimate.window_begin, estimate.window_end);
  const SpatialCovarianceSet target = estimate_scm(window, estimate.target_mask);
  const int n = y.channels;
  const int ref = 0;  // fixed so that segments with different beamformer references compare
  const double hz_per_bin = static_cast<double>(y.sample_rate) / y.config.fft_size;
  std::vector<double> values;
  for (int f = 0; f < y.bins; ++f) {
    const double hz = f * hz_per_bin;
    if (hz < 200.0 || hz > 4000.0) continue;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(target.phi[static_cast<std::size_t>(f)]);
    Eigen::VectorXcd v = solver.eigenvectors().col(n - 1);
    const Complex anchor = v(ref);
    v = std::abs(anchor) > 0.0 ? Eigen::VectorXcd(v * (std::conj(anchor) / std::abs(anchor))) : v;
    v /= std::max(v.norm(), 1e-300);
    for (int c = 0; c < n; ++c) {
      if (c == ref) continue;
      values.push_back(v(c).real());
      values.push_back(v(c).imag());
    }
  }
  RealMatrix out(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) out(0, static_cast<Eigen::Index>(i)) = values[i];
  const double norm = out.norm();
  if (norm > 0.0) out /= norm;
  return out;
}

std::vector<GssSegment> cmd_gss(const fs::path& audio_path, const fs::path& rttm_path,
                                const PipelineConfig& config, const fs::path& out_dir) {
  config.validate();
  require_file(audio_path);
  require_file(rttm_path);
  const SegmentList segments = read_rttm_file(rttm_path);
  fs::create_directories(out_dir);
  std::vector<GssSegment> out;
  if (segments.empty()) {
    write_text(out_dir / "manifest.jsonl", "");
    return out;
  }
  const StftTensor y = stft(read_wav(audio_path), config.stft);
  const std::vector<std::string> speakers = speaker_labels(segments);
  SpeakerActivityMatrix activities = binarize(segments_to_activity(segments, speakers, y.frame_rate(), y.frames));
  for (const auto& s : segments) {
    const auto k = std::find(speakers.begin(), speakers.end(), s.speaker) - speakers.begin();
    const auto [begin, end] = segment_frames(s, y.frame_rate());
    for (int l = std::max(0, begin); l < std::min(end, y.frames); ++l) activities.m(l, k) = 1;
  }

  std::string manifest;
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Segment& s = segments[i];
    const auto k = static_cast<int>(std::find(speakers.begin(), speakers.end(), s.speaker) - speakers.begin());
    const auto [begin, end] = segment_frames(s, y.frame_rate());
    const GssEstimate est = gss_estimate(y, activities, begin, end, k, config.gss);
    GssSegment g;
    g.segment = s;
    g.file = s.session + "-" + s.speaker + "-" + std::to_string(std::llround(s.start * 1000.0)) + "-" +
             std::to_string(std::llround(s.end() * 1000.0)) + ".wav";
    write_wav(render_gss_segment(y, est), out_dir / g.file);
    g.embedding = spatial_embedding(y, est);
    manifest += manifest_line({{"file", g.file},
                               {"session", s.session},
                               {"speaker", s.speaker},
                               {"start_s", s.start},
                               {"end_s", s.end()},
                               {"row", i}});
    out.push_back(std::move(g));
  }
  write_text(out_dir / "manifest.jsonl", manifest);
  return out;
}

namespace {

// Cluster label per embedding row, -1 for rows dropped by the filter.
// Labels are unique across sessions only within a session.
std::vector<int> cluster_rows(const EmbeddingSet& embeddings, const ClusterConfig& config) {
  const auto m = static_cast<std::size_t>(embeddings.vectors.rows());
  if (embeddings.spans.size() != m) throw InputError("embedding rows and spans differ");
  SegmentList as_segments;
  for (const auto& span : embeddings.spans) as_segments.push_back({span.session, "", span.start_s, span.end_s - span.start_s});
  std::map<std::string, std::vector<std::size_t>> by_session;
  for (std::size_t i : kept_segment_indices(as_segments, embeddings.word_counts, config.filter)) {
    by_session[embeddings.spans[i].session].push_back(i);
  }
  std::vector<int> labels(m, -1);
  for (const auto& [session, rows] : by_session) {
    RealMatrix vectors(static_cast<Eigen::Index>(rows.size()), embeddings.vectors.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      vectors.row(static_cast<Eigen::Index>(r)) = embeddings.vectors.row(static_cast<Eigen::Index>(rows[r]));
    }
    RealMatrix affinity = cosine_affinity(vectors);
    if (config.keep_fraction < 1.0) affinity = refine_affinity(affinity, config.keep_fraction);
    const int k = estimate_num_speakers(affinity, config.max_k);
    const ClusterAssignment assignment = spectral_cluster(affinity, k, config.kmeans);
    for (std::size_t r = 0; r < rows.size(); ++r) labels[rows[r]] = assignment.labels[r];
  }
  return labels;
}

}  // namespace

SegmentList cluster_segments(const EmbeddingSet& embeddings, const ClusterConfig& config) {
  const std::vector<int> labels = cluster_rows(embeddings, config);
  SegmentList out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    const SegmentSpan& span = embeddings.spans[i];
    out.push_back({span.session, "spk" + std::to_string(labels[i]), span.start_s, span.end_s - span.start_s});
  }
  sort_segments(out);
  return out;
}

SegmentList cmd_cluster(const fs::path& embeddings_path, const fs::path& manifest_path,
                        const PipelineConfig& config, const fs::path& out_rttm) {
  config.validate();
  require_file(embeddings_path);
  require_file(manifest_path);
  const SegmentList out = cluster_segments(load_embeddings(embeddings_path, manifest_path), config.cluster);
  if (out_rttm.has_parent_path()) fs::create_directories(out_rttm.parent_path());
  write_rttm_file(out_rttm, out);
  return out;
}

DerReport cmd_score(const fs::path& ref_path, const fs::path& hyp_path, const DerOptions& opts) {
  require_file(ref_path);
  require_file(hyp_path);
  return compute_der(read_rttm_file(ref_path), read_rttm_file(hyp_path), opts);
}

std::string der_report_to_json(const DerReport& report) { return report_json(report).dump(2) + "\n"; }

std::string der_report_table(const DerReport& r) {
  char buf[256];
  std::string out = "     FA   MISS SpkErr    DER  scored_s\n";
  std::snprintf(buf, sizeof(buf), "%7.2f%7.2f%7.2f%7.2f%10.2f\n", r.fa, r.miss, r.spkerr, r.der, r.scored_time);
  out += buf;
  for (const auto& m : r.mapping) out += "  " + m.session + ": " + m.hyp + " -> " + m.ref + "\n";
  return out;
}

std::vector<TableRow> read_table_rows(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<TableRow> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      if (line != "label,fa,miss,spkerr,der") throw InputError("table header must be label,fa,miss,spkerr,der");
      header = false;
      continue;
    }
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw InputError("table row needs 5 fields: " + line);
    TableRow r;
    r.label = fields[0];
    try {
      r.fa = std::stod(fields[1]);
      r.miss = std::stod(fields[2]);
      r.spkerr = std::stod(fields[3]);
      r.der = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw InputError("non-numeric table row: " + line);
    }
    rows.push_back(std::move(r));
  }
  if (header) throw InputError("table file has no header");
  return rows;
}

std::vector<TableCheck> check_table_rows(const std::vector<TableRow>& rows, double tolerance) {
  std::vector<TableCheck> out;
  for (const auto& r : rows) {
    TableCheck c;
    c.row = r;
    c.recomputed = der_from_components(r.fa, r.miss, r.spkerr).der;
    c.ok = std::abs(c.recomputed - r.der) <= tolerance + 1e-9;
    out.push_back(std::move(c));
  }
  return out;
}

namespace {

void apply_hook(const PipelineOptions& options, const std::string& stage, const fs::path& session_dir,
                const fs::path& audio, const fs::path& in, const fs::path& out) {
  if (options.nsd_hook.empty()) {
    fs::copy_file(in, out, fs::copy_options::overwrite_existing);
  } else {
    run_hook(options.nsd_hook, stage, {session_dir, audio, in, out});
    require_file(out);
  }
}

std::optional<DerReport> score_if(const SegmentList* ref, const fs::path& hyp, const DerOptions& opts) {
  if (ref == nullptr) return std::nullopt;
  return compute_der(*ref, read_rttm_file(hyp), opts);
}

SessionReport run_session(const fs::path& dir, const PipelineConfig& config, const PipelineOptions& options,
                          const fs::path& out_root) {
  const fs::path audio = dir / "audio.wav";
  require_file(audio);
  std::optional<SegmentList> ref;
  if (fs::is_regular_file(dir / "ref.rttm")) ref = read_rttm_file(dir / "ref.rttm");
  const SegmentList* ref_ptr = ref ? &*ref : nullptr;

  SessionReport report;
  const bool has_initial = fs::is_regular_file(dir / "initial.rttm");
  std::optional<SegmentList> initial;
  if (has_initial) initial = read_rttm_file(dir / "initial.rttm");
  report.session = dir.filename().string();
  if (initial && !initial->empty()) {
    report.session = initial->front().session;
  } else if (ref && !ref->empty()) {
    report.session = ref->front().session;
  }
  const fs::path out = out_root / report.session;
  fs::create_directories(out);
  write_text(out / "config.json", pipeline_config_to_json(config));

  // Stage 1: clustering, or an existing initial diarization.
  if (has_initial) {
    write_rttm_file(out / "stage1.rttm", *initial);
  } else {
    cmd_cluster(dir / "embeddings.tensor", dir / "segments.jsonl", config, out / "stage1.rttm");
  }
  apply_hook(options, "stage1", dir, audio, out / "stage1.rttm", out / "stage1_nsd.rttm");
  report.stage1 = score_if(ref_ptr, out / "stage1_nsd.rttm", config.der);

  // Stage 2: rectification.
  const RectifyResult rectified = cmd_rectify(audio, out / "stage1_nsd.rttm", config, out / "stage2");
  report.warnings = rectified.warnings;
  apply_hook(options, "stage2", dir, audio, out / "stage2" / "rectified.rttm", out / "stage2_nsd.rttm");
  report.stage2 = score_if(ref_ptr, out / "stage2_nsd.rttm", config.der);

  // Stage 3: separation, short segment filtering and re-clustering.
  const std::vector<GssSegment> separated = cmd_gss(audio, out / "stage2_nsd.rttm", config, out / "gss");
  EmbeddingSet embeddings;
  std::string manifest;
  for (std::size_t i = 0; i < separated.size(); ++i) {
    const Segment& s = separated[i].segment;
    embeddings.spans.push_back({s.session, s.start, s.end()});
    manifest += manifest_line({{"session", s.session}, {"start_s", s.start}, {"end_s", s.end()},
                               {"row", i}, {"speaker", s.speaker}, {"file", separated[i].file}});
  }
  write_text(out / "stage3_segments.jsonl", manifest);
  if (!separated.empty()) {
    embeddings.vectors.resize(static_cast<Eigen::Index>(separated.size()), separated[0].embedding.cols());
    for (std::size_t i = 0; i < separated.size(); ++i) {
      embeddings.vectors.row(static_cast<Eigen::Index>(i)) = separated[i].embedding;
    }
  }
  if (!options.embed_hook.empty()) {
    run_hook(options.embed_hook, "embed", {out / "gss", out / "stage3_segments.jsonl", out / "stage3_embeddings.tensor"});
    require_file(out / "stage3_embeddings.tensor");
    embeddings = load_embeddings(out / "stage3_embeddings.tensor", out / "stage3_segments.jsonl");
  } else {
    write_tensor(out / "stage3_embeddings.tensor", to_tensor(embeddings.vectors));
  }

  const std::vector<int> labels = cluster_rows(embeddings, config.cluster);
  // Filtered segments inherit the cluster that most of their stage-2
  // speaker's kept speech fell into.
  std::map<std::string, std::map<int, double>> votes;
  int next_label = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    votes[separated[i].segment.speaker][labels[i]] += separated[i].segment.duration;
    next_label = std::max(next_label, labels[i] + 1);
  }
  std::map<std::string, int> inherited;
  for (const auto& [speaker, tally] : votes) {
    inherited[speaker] = std::max_element(tally.begin(), tally.end(), [](const auto& a, const auto& b) {
                           return a.second < b.second;
                         })->first;
  }
  SegmentList stage3;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Segment& s = separated[i].segment;
    int label = labels[i];
    if (label < 0) {
      auto it = inherited.find(s.speaker);
      if (it == inherited.end()) it = inherited.emplace(s.speaker, next_label++).first;
      label = it->second;
    }
    stage3.push_back({s.session, "spk" + std::to_string(label), s.start, s.duration});
  }
  sort_segments(stage3);
  write_rttm_file(out / "stage3.rttm", stage3);
  apply_hook(options, "stage3", dir, audio, out / "stage3.rttm", out / "final.rttm");
  report.stage3 = score_if(ref_ptr, out / "final.rttm", config.der);

  json j;
  j["session"] = report.session;
  j["warnings"] = report.warnings;
  if (report.stage1) j["stage1"] = report_json(*report.stage1);
  if (report.stage2) j["stage2"] = report_json(*report.stage2);
  if (report.stage3) j["stage3"] = report_json(*report.stage3);
  write_text(out / "report.json", j.dump(2) + "\n");
  return report;
}

}  // namespace

std::vector<SessionReport> cmd_pipeline(const fs::path& input_dir, const PipelineConfig& config,
                                        const PipelineOptions& options, const fs::path& out_dir) {
  config.validate();
  if (!fs::is_directory(input_dir)) throw InputError("not a directory: " + input_dir.string());
  std::vector<fs::path> sessions;
  if (fs::is_regular_file(input_dir / "audio.wav")) {
    sessions.push_back(input_dir);
  } else {
    for (const auto& entry : fs::directory_iterator(input_dir)) {
      if (entry.is_directory() && fs::is_regular_file(entry.path() / "audio.wav")) sessions.push_back(entry.path());
    }
    std::sort(sessions.begin(), sessions.end());
  }
  if (sessions.empty()) throw InputError("no session with audio.wav under " + input_dir.string());
  fs::create_directories(out_dir);

  std::vector<SessionReport> reports(sessions.size());
  parallel_for(sessions.size(), [&](std::size_t i) { reports[i] = run_session(sessions[i], config, options, out_dir); });

  std::set<std::string> names;
  json summary = json::array();
  for (const auto& r : reports) {
    if (!names.insert(r.session).second) throw InputError("duplicate session id " + r.session);
    json s = {{"session", r.session}, {"warnings", r.warnings.size()}};
    if (r.stage1) s["stage1_der"] = r.stage1->der;
    if (r.stage2) s["stage2_der"] = r.stage2->der;
    if (r.stage3) s["stage3_der"] = r.stage3->der;
    summary.push_back(s);
  }
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");
  return reports;
}

}  // namespace spatial_diar
