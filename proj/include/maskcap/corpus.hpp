#pragma once

// Deterministic weakly-labeled corpus generator and its line-delimited file
// format. Each video is a frame-feature sequence composed of latent events;
// every event carries a caption. Ground-truth boundaries are stored in the
// file but the training-mode loader returns records without any boundary
// field; only the evaluation path sees them.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskcap/errors.hpp"
#include "maskcap/rng.hpp"
#include "maskcap/types.hpp"
#include "maskcap/vocab.hpp"

namespace maskcap {

using nlohmann::json;

struct CorpusConfig {
  int n_videos = 200;
  int n_val = 50;
  int events_min = 2;
  int events_max = 4;
  int n_frames = 32;
  int dim = 64;
  double noise = 0.05;
  double min_gap = 0.05;
  double event_len_min = 0.12;
  double event_len_max = 0.30;
  int vocab_content = 64;
  int k_max = 8;
  int n_templates = 16;
  int caption_len_min = 3;
  int caption_len_max = 8;
  std::uint64_t seed = 7;

  void validate() const {
    if (n_videos < 1 || n_val < 0) throw ConfigError("corpus: video counts must be positive");
    if (events_min < 1 || events_max < events_min)
      throw ConfigError("corpus: bad events-per-video range");
    if (events_max > k_max) throw ConfigError("corpus: events_max exceeds K_max");
    if (n_frames < 2 || dim < 2) throw ConfigError("corpus: n_frames and dim must be >= 2");
    if (noise < 0.0 || min_gap < 0.0) throw ConfigError("corpus: negative noise or gap");
    if (event_len_min <= 0.0 || event_len_max < event_len_min)
      throw ConfigError("corpus: bad event length range");
    if (n_templates < events_max) throw ConfigError("corpus: fewer templates than events per video");
    if (caption_len_min < 1 || caption_len_max < caption_len_min ||
        caption_len_max > vocab_content)
      throw ConfigError("corpus: bad caption length range");
    // Infeasible packing is rejected before anything is written.
    const double needed = events_max * event_len_min + (events_max - 1) * min_gap;
    if (needed > 1.0)
      throw ConfigError("corpus: infeasible packing: " + std::to_string(events_max) +
                        " events of length >= " + std::to_string(event_len_min) + " with gap " +
                        std::to_string(min_gap) + " exceed the unit interval");
  }
};

struct EventTemplate {
  std::vector<double> signature;  // unit norm, length d
  std::vector<int> caption;       // 3..8 content token ids
};

// Full record as stored on disk. Ground truth is evaluation-only.
struct VideoRecord {
  std::string id;
  FrameEmbeddings frames;
  std::vector<std::vector<int>> captions;  // temporal order
  std::vector<Segment> ground_truth;       // quarantined
};

// The record type handed to training code: no boundary field exists.
struct TrainVideo {
  std::string id;
  FrameEmbeddings frames;
  std::vector<std::vector<int>> captions;
};

struct CorpusFile {
  Vocabulary vocab;
  int n_frames = 0;
  int dim = 0;
  std::string split;
  std::vector<VideoRecord> videos;
  std::uint64_t digest = 0;
};

struct TrainCorpus {
  Vocabulary vocab;
  int n_frames = 0;
  int dim = 0;
  std::vector<TrainVideo> videos;
};

inline TrainCorpus training_view(const CorpusFile& file) {
  TrainCorpus out;
  out.vocab = file.vocab;
  out.n_frames = file.n_frames;
  out.dim = file.dim;
  out.videos.reserve(file.videos.size());
  for (const VideoRecord& v : file.videos) out.videos.push_back({v.id, v.frames, v.captions});
  return out;
}

namespace detail {

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> random_unit(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      n2 += x * x;
    }
  } while (n2 == 0.0);
  const double inv = 1.0 / std::sqrt(n2);
  for (double& x : v) x *= inv;
  return v;
}

}  // namespace detail

constexpr double kSignatureCosBound = 0.3;

// Template bank plus the background vector. The bank satisfies pairwise
// |cos| <= 0.3 including against the background, so "no event" is
// representable and events stay distinguishable.
struct TemplateBank {
  std::vector<EventTemplate> templates;
  std::vector<double> background;
};

inline TemplateBank make_template_bank(const CorpusConfig& cfg, Rng& rng) {
  TemplateBank bank;
  bank.background = detail::random_unit(rng, cfg.dim);
  const int max_attempts = 20000;
  int attempts = 0;
  while (static_cast<int>(bank.templates.size()) < cfg.n_templates) {
    if (++attempts > max_attempts)
      throw ConfigError("corpus: could not place " + std::to_string(cfg.n_templates) +
                        " signatures with |cos| <= 0.3 in dimension " + std::to_string(cfg.dim));
    std::vector<double> cand = detail::random_unit(rng, cfg.dim);
    bool ok = std::abs(detail::dot(cand, bank.background)) <= kSignatureCosBound;
    for (const EventTemplate& t : bank.templates)
      ok = ok && std::abs(detail::dot(cand, t.signature)) <= kSignatureCosBound;
    if (!ok) continue;
    bank.templates.push_back({std::move(cand), {}});
  }
  // Distinct caption templates, 3..8 content tokens each.
  Vocabulary vocab{cfg.vocab_content, cfg.k_max};
  std::vector<std::vector<int>> used;
  for (EventTemplate& t : bank.templates) {
    for (int tries = 0;; ++tries) {
      if (tries > max_attempts) throw ConfigError("corpus: could not draw distinct captions");
      const int len = cfg.caption_len_min +
                      static_cast<int>(rng.below(static_cast<std::uint64_t>(
                          cfg.caption_len_max - cfg.caption_len_min + 1)));
      std::vector<int> cap(static_cast<std::size_t>(len));
      for (int& id : cap)
        id = vocab.content_token(static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.vocab_content))));
      bool distinct = true;
      for (const auto& u : used) distinct = distinct && u != cap;
      if (distinct) {
        used.push_back(cap);
        t.caption = std::move(cap);
        break;
      }
    }
  }
  return bank;
}

// One video: ordered non-overlapping segments separated by >= min_gap, frames
// inside an event drawn around its signature, background elsewhere.
inline VideoRecord make_video(const CorpusConfig& cfg, const TemplateBank& bank,
                              const std::string& id, Rng video_rng) {
  VideoRecord rec;
  rec.id = id;
  const int k = cfg.events_min +
                static_cast<int>(video_rng.below(
                    static_cast<std::uint64_t>(cfg.events_max - cfg.events_min + 1)));

  // Distinct templates per video, order randomized.
  std::vector<int> tpl_ids(static_cast<std::size_t>(cfg.n_templates));
  for (int i = 0; i < cfg.n_templates; ++i) tpl_ids[static_cast<std::size_t>(i)] = i;
  video_rng.shuffle(tpl_ids);
  tpl_ids.resize(static_cast<std::size_t>(k));

  // Lengths first, then slack spread over the k+1 outer/inner gaps.
  std::vector<double> lengths(static_cast<std::size_t>(k));
  double total = 0.0;
  for (int tries = 0;; ++tries) {
    if (tries > 10000) throw ConfigError("corpus: segment packing failed");
    total = 0.0;
    for (double& l : lengths) {
      l = video_rng.uniform(cfg.event_len_min, cfg.event_len_max);
      total += l;
    }
    total += (k - 1) * cfg.min_gap;
    if (total <= 1.0) break;
  }
  const double slack = 1.0 - total;
  std::vector<double> cuts(static_cast<std::size_t>(k));
  for (double& c : cuts) c = video_rng.uniform();
  std::sort(cuts.begin(), cuts.end());
  // gap_i = slack * (cuts_i - cuts_{i-1}) with cuts_{-1} = 0; remainder trails.
  double cursor = 0.0;
  double prev_cut = 0.0;
  for (int i = 0; i < k; ++i) {
    cursor += slack * (cuts[static_cast<std::size_t>(i)] - prev_cut);
    prev_cut = cuts[static_cast<std::size_t>(i)];
    if (i > 0) cursor += cfg.min_gap;
    Segment s{cursor, cursor + lengths[static_cast<std::size_t>(i)]};
    rec.ground_truth.push_back(s);
    cursor = s.end;
  }

  for (int i = 0; i < k; ++i)
    rec.captions.push_back(bank.templates[static_cast<std::size_t>(tpl_ids[static_cast<std::size_t>(i)])].caption);

  rec.frames.n_frames = cfg.n_frames;
  rec.frames.dim = cfg.dim;
  rec.frames.data.resize(static_cast<std::size_t>(cfg.n_frames) * cfg.dim);
  for (int t = 1; t <= cfg.n_frames; ++t) {
    const double tp = static_cast<double>(t) / cfg.n_frames;
    const std::vector<double>* base = &bank.background;
    for (int i = 0; i < k; ++i) {
      const Segment& s = rec.ground_truth[static_cast<std::size_t>(i)];
      if (tp >= s.start && tp <= s.end) {
        base = &bank.templates[static_cast<std::size_t>(tpl_ids[static_cast<std::size_t>(i)])].signature;
        break;
      }
    }
    double* row = rec.frames.row(t - 1);
    for (int j = 0; j < cfg.dim; ++j) row[j] = (*base)[static_cast<std::size_t>(j)] +
                                               (cfg.noise > 0.0 ? video_rng.normal(0.0, cfg.noise) : 0.0);
  }
  return rec;
}

struct GeneratedCorpus {
  CorpusFile train;
  CorpusFile val;
  TemplateBank bank;
};

inline GeneratedCorpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Rng master(cfg.seed);
  GeneratedCorpus out;
  out.bank = make_template_bank(cfg, master);
  const Vocabulary vocab{cfg.vocab_content, cfg.k_max};

  const auto fill = [&](CorpusFile& file, const std::string& split, int count, std::uint64_t salt) {
    file.vocab = vocab;
    file.n_frames = cfg.n_frames;
    file.dim = cfg.dim;
    file.split = split;
    file.videos.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      file.videos.push_back(make_video(cfg, out.bank, split + "_" + std::to_string(i),
                                       master.split(salt * 1000003ULL + i)));
  };
  fill(out.train, "train", cfg.n_videos, 1);
  fill(out.val, "val", cfg.n_val, 2);
  return out;
}

// ---- file format ----------------------------------------------------------

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

inline json record_to_json(const VideoRecord& v) {
  json j;
  j["id"] = v.id;
  j["captions"] = v.captions;
  j["features"] = v.frames.data;
  json segs = json::array();
  for (const Segment& s : v.ground_truth) segs.push_back({s.start, s.end});
  j["segments"] = segs;
  return j;
}

inline VideoRecord record_from_json(const json& j, int n_frames, int dim) {
  VideoRecord v;
  v.id = j.at("id").get<std::string>();
  v.captions = j.at("captions").get<std::vector<std::vector<int>>>();
  v.frames.n_frames = n_frames;
  v.frames.dim = dim;
  v.frames.data = j.at("features").get<std::vector<double>>();
  v.frames.validate();
  for (const auto& s : j.at("segments")) {
    Segment seg{s.at(0).get<double>(), s.at(1).get<double>()};
    seg.validate();
    v.ground_truth.push_back(seg);
  }
  return v;
}

constexpr int kCorpusVersion = 1;

inline std::uint64_t corpus_digest(const std::vector<std::string>& record_lines) {
  Fnv1a h;
  for (const std::string& line : record_lines) {
    h.update(line);
    h.update("\n", 1);
  }
  return h.value();
}

inline void save_corpus(const CorpusFile& file, const std::string& path) {
  std::vector<std::string> lines;
  lines.reserve(file.videos.size());
  for (const VideoRecord& v : file.videos) lines.push_back(record_to_json(v).dump());
  const std::uint64_t digest = corpus_digest(lines);

  json header;
  header["type"] = "maskcap-corpus";
  header["version"] = kCorpusVersion;
  header["split"] = file.split;
  header["d"] = file.dim;
  header["n_frames"] = file.n_frames;
  header["k_max"] = file.vocab.k_max;
  header["vocab_content"] = file.vocab.content_size;
  header["vocab_tokens"] = file.vocab.listing();
  header["n_videos"] = file.videos.size();
  header["digest"] = hex64(digest);

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << header.dump() << '\n';
  for (const std::string& line : lines) os << line << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

// Atomic load: header, version and content digest are verified before any
// record is returned.
inline CorpusFile load_corpus(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open corpus file '" + path + "'");
  std::string header_line;
  if (!std::getline(is, header_line)) throw CorruptionError("corpus file '" + path + "' is empty");
  json header;
  try {
    header = json::parse(header_line);
  } catch (const json::exception& e) {
    throw CorruptionError("corpus header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("type", "") != "maskcap-corpus")
    throw CorruptionError("'" + path + "' is not a corpus file");
  if (header.value("version", -1) != kCorpusVersion)
    throw VersionError("corpus version " + std::to_string(header.value("version", -1)) +
                       " unsupported (expected " + std::to_string(kCorpusVersion) + ")");

  CorpusFile file;
  file.split = header.value("split", "");
  file.dim = header.at("d").get<int>();
  file.n_frames = header.at("n_frames").get<int>();
  file.vocab = Vocabulary{header.at("vocab_content").get<int>(), header.at("k_max").get<int>()};
  const auto expected_n = header.at("n_videos").get<std::size_t>();
  const std::string expected_digest = header.at("digest").get<std::string>();

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    lines.push_back(line);
  }
  if (lines.size() != expected_n)
    throw CorruptionError("corpus '" + path + "' holds " + std::to_string(lines.size()) +
                          " records, header says " + std::to_string(expected_n));
  if (hex64(corpus_digest(lines)) != expected_digest)
    throw CorruptionError("corpus '" + path + "' failed its content digest check");

  file.videos.reserve(lines.size());
  for (const std::string& l : lines) {
    json j;
    try {
      j = json::parse(l);
    } catch (const json::exception& e) {
      throw CorruptionError("corpus record is not valid JSON: " + std::string(e.what()));
    }
    file.videos.push_back(record_from_json(j, file.n_frames, file.dim));
  }
  file.digest = corpus_digest(lines);
  return file;
}

// Training-mode load: ground truth never reaches the caller.
inline TrainCorpus load_corpus_training(const std::string& path) {
  return training_view(load_corpus(path));
}

}  // namespace maskcap
