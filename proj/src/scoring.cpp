#include "spatial_diar/scoring.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "spatial_diar/errors.hpp"
#include "spatial_diar/hungarian.hpp"

namespace spatial_diar {

namespace {

double parse_number(const std::string& field, int line_number) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || !std::isfinite(value)) {
    throw InputError("RTTM line " + std::to_string(line_number) + ": '" + field +
                     "' is not a number");
  }
  return value;
}

long long to_frame(double seconds, double frame_s) {
  return std::llround(seconds / frame_s);
}

using FrameGrid = std::vector<std::vector<std::uint8_t>>;  // [speaker][frame]

FrameGrid rasterize(const std::vector<const Segment*>& segments,
                    const std::vector<std::string>& speakers, long long frames,
                    double frame_s) {
  FrameGrid grid(speakers.size(), std::vector<std::uint8_t>(static_cast<std::size_t>(frames), 0));
  for (const Segment* s : segments) {
    const auto it = std::lower_bound(speakers.begin(), speakers.end(), s->speaker);
    auto& row = grid[static_cast<std::size_t>(it - speakers.begin())];
    const long long a = std::clamp(to_frame(s->start, frame_s), 0LL, frames);
    const long long b = std::clamp(to_frame(s->end(), frame_s), 0LL, frames);
    for (long long t = a; t < b; ++t) row[static_cast<std::size_t>(t)] = 1;
  }
  return grid;
}

struct SessionCounts {
  long long ref = 0;
  long long fa = 0;
  long long miss = 0;
  long long spkerr = 0;
};

}  // namespace

SegmentList parse_rttm(std::string_view text) {
  SegmentList out;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    std::istringstream fields_in(line);
    std::vector<std::string> fields;
    for (std::string f; fields_in >> f;) fields.push_back(f);
    if (fields.empty() || fields[0] != "SPEAKER") continue;
    if (fields.size() < 8) {
      throw InputError("RTTM line " + std::to_string(line_number) + ": expected at least 8 fields, got " +
                       std::to_string(fields.size()));
    }
    Segment s;
    s.session = fields[1];
    s.start = parse_number(fields[3], line_number);
    s.duration = parse_number(fields[4], line_number);
    s.speaker = fields[7];
    if (s.start < 0.0 || s.duration < 0.0) {
      throw InputError("RTTM line " + std::to_string(line_number) + ": negative time");
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string write_rttm(const SegmentList& segments) {
  std::string out;
  char buffer[64];
  for (const auto& s : segments) {
    out += "SPEAKER ";
    out += s.session;
    std::snprintf(buffer, sizeof(buffer), " 1 %.3f %.3f <NA> <NA> ", s.start, s.duration);
    out += buffer;
    out += s.speaker;
    out += " <NA> <NA>\n";
  }
  return out;
}

SegmentList read_rttm_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_rttm(buffer.str());
}

void write_rttm_file(const std::filesystem::path& path, const SegmentList& segments) {
  std::ofstream out(path, std::ios::binary);
  out << write_rttm(segments);
  if (!out) throw InputError("cannot write " + path.string());
}

std::vector<std::string> speaker_labels(const SegmentList& segments) {
  std::set<std::string> names;
  for (const auto& s : segments) names.insert(s.speaker);
  return {names.begin(), names.end()};
}

DerReport der_from_components(double fa, double miss, double spkerr) {
  DerReport r;
  r.fa = fa;
  r.miss = miss;
  r.spkerr = spkerr;
  r.der = fa + miss + spkerr;
  return r;
}

DerReport compute_der(const SegmentList& ref, const SegmentList& hyp, const DerOptions& opts) {
  if (!(opts.frame_s > 0.0)) throw InputError("frame resolution must be positive");
  if (opts.collar_s < 0.0) throw InputError("collar must be non-negative");

  std::map<std::string, std::pair<std::vector<const Segment*>, std::vector<const Segment*>>> sessions;
  for (const auto& s : ref) sessions[s.session].first.push_back(&s);
  for (const auto& s : hyp) sessions[s.session].second.push_back(&s);

  DerReport report;
  SessionCounts total;
  for (const auto& [session, lists] : sessions) {
    const auto& [ref_segments, hyp_segments] = lists;
    std::set<std::string> ref_names;
    std::set<std::string> hyp_names;
    double horizon = 0.0;
    for (const Segment* s : ref_segments) {
      ref_names.insert(s->speaker);
      horizon = std::max(horizon, s->end() + opts.collar_s);
    }
    for (const Segment* s : hyp_segments) {
      hyp_names.insert(s->speaker);
      horizon = std::max(horizon, s->end());
    }
    const std::vector<std::string> ref_speakers(ref_names.begin(), ref_names.end());
    const std::vector<std::string> hyp_speakers(hyp_names.begin(), hyp_names.end());
    const long long frames = to_frame(horizon, opts.frame_s) + 1;
    const FrameGrid r = rasterize(ref_segments, ref_speakers, frames, opts.frame_s);
    const FrameGrid h = rasterize(hyp_segments, hyp_speakers, frames, opts.frame_s);

    std::vector<std::uint8_t> scored(static_cast<std::size_t>(frames), 1);
    if (opts.collar_s > 0.0) {
      const long long c = to_frame(opts.collar_s, opts.frame_s);
      for (const Segment* s : ref_segments) {
        for (const long long edge : {to_frame(s->start, opts.frame_s), to_frame(s->end(), opts.frame_s)}) {
          for (long long t = std::max(0LL, edge - c); t < std::min(frames, edge + c); ++t) {
            scored[static_cast<std::size_t>(t)] = 0;
          }
        }
      }
    }
    if (opts.ignore_overlap) {
      for (long long t = 0; t < frames; ++t) {
        int n = 0;
        for (const auto& row : r) n += row[static_cast<std::size_t>(t)];
        if (n > 1) scored[static_cast<std::size_t>(t)] = 0;
      }
    }

    // Joint activity between every hyp and ref speaker on scored frames.
    Eigen::MatrixXd overlap = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(hyp_speakers.size()),
                                                    static_cast<Eigen::Index>(ref_speakers.size()));
    for (std::size_t i = 0; i < hyp_speakers.size(); ++i) {
      for (std::size_t j = 0; j < ref_speakers.size(); ++j) {
        long long n = 0;
        for (long long t = 0; t < frames; ++t) {
          const auto u = static_cast<std::size_t>(t);
          n += scored[u] & h[i][u] & r[j][u];
        }
        overlap(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(n);
      }
    }
    std::vector<int> assignment(hyp_speakers.size(), -1);
    if (!hyp_speakers.empty() && !ref_speakers.empty()) assignment = solve_assignment(-overlap);
    for (std::size_t i = 0; i < assignment.size(); ++i) {
      if (assignment[i] >= 0) {
        report.mapping.push_back(
            {session, hyp_speakers[i], ref_speakers[static_cast<std::size_t>(assignment[i])]});
      }
    }

    for (long long t = 0; t < frames; ++t) {
      const auto u = static_cast<std::size_t>(t);
      if (!scored[u]) continue;
      long long nr = 0;
      long long nh = 0;
      long long correct = 0;
      for (const auto& row : r) nr += row[u];
      for (std::size_t i = 0; i < h.size(); ++i) {
        nh += h[i][u];
        if (h[i][u] && assignment[i] >= 0 && r[static_cast<std::size_t>(assignment[i])][u]) ++correct;
      }
      total.ref += nr;
      total.miss += std::max(0LL, nr - nh);
      total.fa += std::max(0LL, nh - nr);
      total.spkerr += std::min(nr, nh) - correct;
    }
  }

  if (total.ref == 0) throw InputError("reference contains no scored speech; DER is undefined");
  const double scale = 100.0 / static_cast<double>(total.ref);
  DerReport out = der_from_components(scale * static_cast<double>(total.fa),
                                      scale * static_cast<double>(total.miss),
                                      scale * static_cast<double>(total.spkerr));
  out.scored_time = static_cast<double>(total.ref) * opts.frame_s;
  out.mapping = std::move(report.mapping);
  return out;
}

SegmentList mask_to_segments(const SpeakerActivityMatrix& m, double frame_rate,
                             const std::string& session, const SegmentOptions& opts,
                             const std::vector<std::string>& speaker_names) {
  if (!(frame_rate > 0.0)) throw InputError("frame rate must be positive");
  if (!speaker_names.empty() && static_cast<int>(speaker_names.size()) != m.speakers()) {
    throw InputError("speaker name count does not match the activity matrix");
  }
  SegmentList out;
  for (int k = 0; k < m.speakers(); ++k) {
    const std::string name =
        speaker_names.empty() ? "spk" + std::to_string(k) : speaker_names[static_cast<std::size_t>(k)];
    std::vector<std::pair<int, int>> runs;
    for (int l = 0; l < m.frames();) {
      if (!m.m(l, k)) {
        ++l;
        continue;
      }
      int end = l;
      while (end < m.frames() && m.m(end, k)) ++end;
      if (!runs.empty() && (l - runs.back().second) / frame_rate < opts.min_gap_s) {
        runs.back().second = end;
      } else {
        runs.emplace_back(l, end);
      }
      l = end;
    }
    for (const auto& [a, b] : runs) {
      const double duration = (b - a) / frame_rate;
      if (duration < opts.min_dur_s) continue;
      out.push_back({session, name, a / frame_rate, duration});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const Segment& x, const Segment& y) { return x.start < y.start; });
  return out;
}

DiarizationMatrix segments_to_activity(const SegmentList& segments,
                                       const std::vector<std::string>& speakers,
                                       double frame_rate, int frames) {
  if (!(frame_rate > 0.0)) throw InputError("frame rate must be positive");
  DiarizationMatrix out{RealMatrix::Zero(frames, static_cast<Eigen::Index>(speakers.size())),
                        frame_rate};
  for (const auto& s : segments) {
    const auto it = std::find(speakers.begin(), speakers.end(), s.speaker);
    if (it == speakers.end()) continue;
    const auto k = static_cast<Eigen::Index>(it - speakers.begin());
    const long long a = std::clamp<long long>(std::llround(s.start * frame_rate), 0, frames);
    const long long b = std::clamp<long long>(std::llround(s.end() * frame_rate), 0, frames);
    for (long long l = a; l < b; ++l) out.d(static_cast<Eigen::Index>(l), k) = 1.0;
  }
  return out;
}

}  // namespace spatial_diar
