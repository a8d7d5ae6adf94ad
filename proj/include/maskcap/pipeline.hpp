#pragma once

// Orchestration: the two training stages, the three-stage inference pass,
// evaluation plumbing, the finite-difference gradient audit, and ablation
// runs. Training is a single sequential optimizer loop; everything is
// deterministic given the seed.

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "maskcap/corpus.hpp"
#include "maskcap/metrics.hpp"
#include "maskcap/model.hpp"
#include "maskcap/optim.hpp"

namespace maskcap {

struct TrainConfig {
  int epochs_captioning = 10;
  int epochs_localizing = 10;
  int batch_size = 8;
  double lr = 1e-4;
  double warmup = 0.1;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double tau = 2.0;
  double gamma = 0.8;
  int n_frames = 0;  // 0: take from the corpus; otherwise must match it
  std::uint64_t seed = 0;
  MaskFamily family = MaskFamily::gaussian;
  ModelDims dims;
  int max_text_len = 96;
  int localizer_blocks = 1;
  bool add_pos_in_masked = true;
  // Loss/prompt ablation switches; all on for the full model.
  bool use_positive = true;
  bool use_negative = true;
  bool use_diversity = true;
  bool prompt_mode = true;
  bool prompt_count = true;

  void validate() const {
    if (epochs_captioning < 1 || epochs_localizing < 1)
      throw ConfigError("train: epochs must be positive");
    if (batch_size < 1) throw ConfigError("train: batch size must be positive");
    if (lr <= 0.0) throw ConfigError("train: learning rate must be positive");
    if (warmup < 0.0 || warmup > 1.0) throw ConfigError("train: warmup fraction outside [0,1]");
    if (tau <= 0.0) throw ConfigError("train: tau must be positive");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("train: gamma outside [0,1]");
    if (n_frames != 0 && n_frames < 2) throw ConfigError("train: n_frames must be >= 2");
  }

  ModelConfig model_config(const TrainCorpus& corpus) const {
    if (n_frames != 0 && n_frames != corpus.n_frames)
      throw CompatibilityError("configured n_frames " + std::to_string(n_frames) +
                               " does not match corpus n_frames " +
                               std::to_string(corpus.n_frames));
    ModelConfig mc;
    mc.dims = dims;
    mc.n_frames = corpus.n_frames;
    mc.k_max = corpus.vocab.k_max;
    mc.vocab_content = corpus.vocab.content_size;
    mc.max_text_len = max_text_len;
    mc.localizer_blocks = localizer_blocks;
    mc.tau = tau;
    mc.gamma = gamma;
    mc.family = family;
    mc.add_pos_in_masked = add_pos_in_masked;
    mc.prompt_mode = prompt_mode;
    mc.prompt_count = prompt_count;
    mc.init_seed = seed;
    return mc;
  }
};

struct StepLog {
  int step = 0;
  double l_pos = 0.0;
  double l_neg = 0.0;
  double l_div = 0.0;
  double total = 0.0;
};

struct StageResult {
  std::vector<double> epoch_mean_loss;
  std::vector<StepLog> steps;
};

namespace pipeline_detail {

inline void check_vocab(const Model& model, const TrainCorpus& corpus) {
  if (!(model.vocab() == corpus.vocab))
    throw CompatibilityError("vocabulary mismatch between corpus and checkpoint");
  if (model.config().n_frames != corpus.n_frames || model.config().dims.d != corpus.dim)
    throw CompatibilityError("frame geometry mismatch between corpus and checkpoint");
}

struct WeightedLoss {
  Tensor loss;
  int tokens = 0;
};

inline Tensor token_weighted_mean(Tape& tape, const std::vector<WeightedLoss>& parts) {
  int total = 0;
  for (const WeightedLoss& p : parts) total += p.tokens;
  Tensor acc = tape.scalar(0.0);
  if (total == 0) return acc;
  for (const WeightedLoss& p : parts)
    acc = tape.add(acc, tape.mul_scalar(p.loss, static_cast<double>(p.tokens) / total));
  return acc;
}

}  // namespace pipeline_detail

// Full-captioning batch loss (token-weighted mean NLL over FULL-mode
// sequences).
inline Tensor captioning_batch_loss(Tape& tape, Model& model,
                                    const std::vector<const TrainVideo*>& batch) {
  const TokenizeOptions prompts = model.config().prompts();
  std::vector<pipeline_detail::WeightedLoss> parts;
  for (const TrainVideo* v : batch) {
    Tensor ctx = model.captioner().encode_video(tape, v->frames);
    const TokenSeq seq = tokenize(model.vocab(), Mode::full,
                                  static_cast<int>(v->captions.size()), v->captions, prompts);
    Tensor loss = model.captioner().captioning_loss(tape, ctx, seq);
    parts.push_back({loss, model.captioner().predicted_token_count(seq)});
  }
  return pipeline_detail::token_weighted_mean(tape, parts);
}

struct LocalizingComponents {
  double l_pos = 0.0;
  double l_neg = 0.0;
  double l_div = 0.0;
  double total = 0.0;
};

// The localizing-stage objective: positive masked captioning over each
// event, negative masked captioning over the complement (skipped for
// single-event videos), and the mask diversity hinge. Shared by training and
// the gradient audit.
inline Tensor localizing_batch_loss(Tape& tape, Model& model,
                                    const std::vector<const TrainVideo*>& batch,
                                    const TrainConfig& cfg,
                                    LocalizingComponents* components = nullptr,
                                    MaskWarnings* warnings = nullptr) {
  const ModelConfig& mc = model.config();
  const TokenizeOptions prompts = mc.prompts();
  std::vector<pipeline_detail::WeightedLoss> pos_parts, neg_parts;
  std::vector<Tensor> div_parts;

  for (const TrainVideo* v : batch) {
    const int n_events = static_cast<int>(v->captions.size());
    Tensor frames_c = tape.constant({v->frames.n_frames, v->frames.dim}, v->frames.data);
    Tensor loc_in = tape.add(frames_c, tape.leaf(model.captioner().frame_pos()));
    const std::vector<EventParams> events = model.localizer().localize(tape, loc_in, n_events);

    std::vector<Mask> masks;
    masks.reserve(events.size());
    for (const EventParams& ev : events)
      masks.push_back(build_mask(tape, ev.mu, ev.sigma, cfg.tau, cfg.family,
                                 v->frames.n_frames, warnings));

    if (cfg.use_positive) {
      for (int i = 0; i < n_events; ++i) {
        Tensor ctx = model.captioner().encode_video(tape, v->frames, &masks[static_cast<std::size_t>(i)],
                                                    mc.add_pos_in_masked);
        const TokenSeq seq = tokenize(model.vocab(), Mode::masked_positive, 1,
                                      {v->captions[static_cast<std::size_t>(i)]}, prompts);
        pos_parts.push_back({model.captioner().captioning_loss(tape, ctx, seq),
                             model.captioner().predicted_token_count(seq)});
      }
    }
    if (cfg.use_negative && n_events >= 2) {
      for (int i = 0; i < n_events; ++i) {
        Mask neg = negative_mask(tape, masks[static_cast<std::size_t>(i)]);
        Tensor ctx = model.captioner().encode_video(tape, v->frames, &neg, mc.add_pos_in_masked);
        std::vector<std::vector<int>> rest;
        for (int j = 0; j < n_events; ++j)
          if (j != i) rest.push_back(v->captions[static_cast<std::size_t>(j)]);
        const TokenSeq seq =
            tokenize(model.vocab(), Mode::masked_negative, n_events - 1, rest, prompts);
        neg_parts.push_back({model.captioner().captioning_loss(tape, ctx, seq),
                             model.captioner().predicted_token_count(seq)});
      }
    }
    if (cfg.use_diversity) div_parts.push_back(diversity_loss(tape, masks, cfg.gamma, warnings));
  }

  Tensor l_pos = pipeline_detail::token_weighted_mean(tape, pos_parts);
  Tensor l_neg = pipeline_detail::token_weighted_mean(tape, neg_parts);
  Tensor l_div = tape.scalar(0.0);
  if (!div_parts.empty()) {
    Tensor acc = tape.scalar(0.0);
    for (const Tensor& d : div_parts) acc = tape.add(acc, d);
    l_div = tape.mul_scalar(acc, 1.0 / static_cast<double>(div_parts.size()));
  }
  Tensor total = tape.add(tape.add(l_pos, l_neg), l_div);
  if (components != nullptr)
    *components = {l_pos.item(), l_neg.item(), l_div.item(), total.item()};
  return total;
}

namespace pipeline_detail {

inline std::vector<std::vector<const TrainVideo*>> make_batches(const TrainCorpus& corpus,
                                                                int batch_size, Rng& rng) {
  std::vector<int> order(corpus.videos.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  std::vector<std::vector<const TrainVideo*>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    std::vector<const TrainVideo*> batch;
    for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(batch_size)); ++j)
      batch.push_back(&corpus.videos[static_cast<std::size_t>(order[j])]);
    batches.push_back(std::move(batch));
  }
  return batches;
}

inline std::int64_t batches_per_epoch(std::size_t n_videos, int batch_size) {
  return static_cast<std::int64_t>((n_videos + static_cast<std::size_t>(batch_size) - 1) /
                                   static_cast<std::size_t>(batch_size));
}

}  // namespace pipeline_detail

// Stage 1: optimizes encoder + decoder on FULL-mode sequences only; the
// localizer is untouched.
inline StageResult train_captioning_stage(Model& model, const TrainCorpus& corpus,
                                          const TrainConfig& cfg,
                                          OptimizerState* out_opt = nullptr) {
  cfg.validate();
  pipeline_detail::check_vocab(model, corpus);
  if (model.stage() != TrainStage::fresh)
    throw ContractViolation("captioning stage requires a fresh model, got stage '" +
                            std::string(stage_name(model.stage())) + "'");
  if (corpus.videos.empty()) throw ConfigError("captioning stage: empty corpus");

  const std::vector<Parameter*> params = model.captioner_params();
  OptimizerState opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.warmup_frac = cfg.warmup;
  opt.total_steps = cfg.epochs_captioning *
                    pipeline_detail::batches_per_epoch(corpus.videos.size(), cfg.batch_size);
  opt.bind(params);

  StageResult result;
  Rng order_rng(cfg.seed ^ 0x5354414745313141ULL);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs_captioning; ++epoch) {
    double epoch_sum = 0.0;
    int epoch_batches = 0;
    for (const auto& batch : pipeline_detail::make_batches(corpus, cfg.batch_size, order_rng)) {
      model.store().zero_grad();
      Tape tape;
      Tensor loss = captioning_batch_loss(tape, model, batch);
      const double lv = loss.item();
      if (!std::isfinite(lv))
        throw NumericError("captioning stage: non-finite loss at step " + std::to_string(step));
      tape.backward(loss);
      clip_global_norm(params, cfg.clip_norm);
      adamw_step(params, opt);
      result.steps.push_back({step, 0.0, 0.0, 0.0, lv});
      epoch_sum += lv;
      ++epoch_batches;
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_sum / epoch_batches);
  }
  model.set_stage(TrainStage::captioning);
  if (out_opt != nullptr) *out_opt = opt;
  return result;
}

// Stage 2: joint update of encoder, decoder and localizer under the summed
// positive + negative + diversity objective.
inline StageResult train_localizing_stage(Model& model, const TrainCorpus& corpus,
                                          const TrainConfig& cfg,
                                          OptimizerState* out_opt = nullptr) {
  cfg.validate();
  pipeline_detail::check_vocab(model, corpus);
  if (model.stage() != TrainStage::captioning)
    throw ContractViolation("localizing stage requires a captioning-stage checkpoint, got stage '" +
                            std::string(stage_name(model.stage())) + "'");
  if (corpus.videos.empty()) throw ConfigError("localizing stage: empty corpus");

  const std::vector<Parameter*> params = model.all_params();
  OptimizerState opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  opt.warmup_frac = cfg.warmup;
  opt.total_steps = cfg.epochs_localizing *
                    pipeline_detail::batches_per_epoch(corpus.videos.size(), cfg.batch_size);
  opt.bind(params);

  StageResult result;
  Rng order_rng(cfg.seed ^ 0x5354414745324242ULL);
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs_localizing; ++epoch) {
    double epoch_sum = 0.0;
    int epoch_batches = 0;
    for (const auto& batch : pipeline_detail::make_batches(corpus, cfg.batch_size, order_rng)) {
      model.store().zero_grad();
      Tape tape;
      LocalizingComponents comp;
      Tensor loss = localizing_batch_loss(tape, model, batch, cfg, &comp);
      if (!std::isfinite(comp.total))
        throw NumericError("localizing stage: non-finite loss at step " + std::to_string(step));
      tape.backward(loss);
      clip_global_norm(params, cfg.clip_norm);
      adamw_step(params, opt);
      result.steps.push_back({step, comp.l_pos, comp.l_neg, comp.l_div, comp.total});
      epoch_sum += comp.total;
      ++epoch_batches;
      ++step;
    }
    result.epoch_mean_loss.push_back(epoch_sum / epoch_batches);
  }
  model.set_stage(TrainStage::localizing);
  if (out_opt != nullptr) *out_opt = opt;
  return result;
}

// ---- inference --------------------------------------------------------------

struct EventPrediction {
  Segment seg;
  Caption tokens;
  std::string text;
  double mu = 0.0;
  double sigma = 0.0;
};

struct InferenceResult {
  std::string video_id;
  std::vector<EventPrediction> events;
  std::vector<Caption> coarse_captions;
  int generated_count = 0;
  bool parse_fallback = false;
  bool count_mismatch = false;
  bool refine_fallback = false;
};

struct InferOptions {
  bool refine = true;
  int max_len = 0;  // 0: model's max text length
};

namespace pipeline_detail {

inline std::string caption_text(const Vocabulary& vocab, const Caption& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.token_text(tokens[i]);
  }
  return out;
}

// Last-resort recovery from a malformed generation: keep content tokens,
// split on separators.
inline std::vector<Caption> salvage_sentences(const Vocabulary& vocab, const std::vector<int>& ids) {
  std::vector<Caption> out;
  Caption cur;
  for (int id : ids) {
    if (id == Vocabulary::sep || id == Vocabulary::end) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
      if (id == Vocabulary::end) break;
      continue;
    }
    if (vocab.is_content(id)) cur.push_back(id);
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace pipeline_detail

// Three stages: generate with the FULL prompt (the model chooses the event
// count), localize that many events and convert masks to segments, then
// re-generate each caption from its positively masked video. Refinement
// never changes segments.
inline InferenceResult infer_video(const Model& model_in, const std::string& video_id,
                                   const FrameEmbeddings& frames, const InferOptions& opts = {}) {
  Model& model = const_cast<Model&>(model_in);  // tape leaves need mutable parameters
  if (model.stage() != TrainStage::localizing)
    throw ContractViolation("infer requires a fully trained (localizing-stage) checkpoint");
  const ModelConfig& mc = model.config();
  InferenceResult res;
  res.video_id = video_id;

  GenerateOptions gen_opts;
  gen_opts.max_len = opts.max_len > 0 ? opts.max_len : mc.max_text_len;
  gen_opts.prompts = mc.prompts();

  // Stage 1: captioning.
  const std::vector<double> ctx = model.captioner().encode_video_values(frames);
  std::vector<Caption> captions;
  try {
    const TokenSeq gen = model.captioner().generate(ctx, Mode::full, gen_opts);
    const ParseResult parsed = parse_generated(model.vocab(), gen, gen_opts.prompts);
    captions = parsed.captions;
    res.count_mismatch = parsed.count_mismatch;
  } catch (const MalformedGeneration& e) {
    captions = pipeline_detail::salvage_sentences(model.vocab(), e.raw_tokens);
    res.parse_fallback = true;
  } catch (const ParseError&) {
    res.parse_fallback = true;
  }
  if (static_cast<int>(captions.size()) > mc.k_max) {
    captions.resize(static_cast<std::size_t>(mc.k_max));
    res.count_mismatch = true;
  }
  res.coarse_captions = captions;
  res.generated_count = static_cast<int>(captions.size());
  if (captions.empty()) return res;

  // Stage 2: localizing.
  std::vector<MaskParams> mask_params;
  {
    Tape tape;
    Tensor frames_c = tape.constant({frames.n_frames, frames.dim}, frames.data);
    Tensor loc_in = tape.add(frames_c, tape.leaf(model.captioner().frame_pos()));
    const std::vector<EventParams> events =
        model.localizer().localize(tape, loc_in, res.generated_count);
    for (const EventParams& ev : events)
      mask_params.push_back({ev.mu.item(), ev.sigma.item(), mc.tau, mc.family});
  }

  for (int i = 0; i < res.generated_count; ++i) {
    const MaskParams& mp = mask_params[static_cast<std::size_t>(i)];
    const auto [s, e] = mask_to_segment(mp);
    EventPrediction ev;
    ev.seg = {s, e};
    ev.mu = mp.mu;
    ev.sigma = mp.sigma;
    ev.tokens = captions[static_cast<std::size_t>(i)];
    res.events.push_back(std::move(ev));
  }

  // Stage 3: refining (caption regeneration only; segments stay fixed).
  if (opts.refine) {
    for (int i = 0; i < res.generated_count; ++i) {
      const MaskParams& mp = mask_params[static_cast<std::size_t>(i)];
      const std::vector<double> masked_ctx =
          model.captioner().encode_video_values(frames, &mp, mc.add_pos_in_masked);
      GenerateOptions refine_opts = gen_opts;
      refine_opts.forced_count = 1;
      bool ok = false;
      try {
        const TokenSeq gen = model.captioner().generate(masked_ctx, Mode::masked_positive,
                                                        refine_opts);
        const ParseResult parsed = parse_generated(model.vocab(), gen, refine_opts.prompts);
        if (!parsed.captions.empty() && !parsed.captions.front().empty()) {
          res.events[static_cast<std::size_t>(i)].tokens = parsed.captions.front();
          ok = true;
        }
      } catch (const GenerationError&) {
      } catch (const ParseError&) {
      }
      if (!ok) res.refine_fallback = true;  // falls back to the coarse caption
    }
  }
  for (EventPrediction& ev : res.events)
    ev.text = pipeline_detail::caption_text(model.vocab(), ev.tokens);
  return res;
}

inline std::vector<InferenceResult> infer_corpus(const Model& model,
                                                 const std::vector<TrainVideo>& videos,
                                                 const InferOptions& opts = {}) {
  std::vector<InferenceResult> out;
  out.reserve(videos.size());
  for (const TrainVideo& v : videos) out.push_back(infer_video(model, v.id, v.frames, opts));
  return out;
}

// ---- predictions file --------------------------------------------------------

inline json inference_to_json(const InferenceResult& r) {
  json j;
  j["id"] = r.video_id;
  json events = json::array();
  for (const EventPrediction& e : r.events) {
    json je;
    je["start"] = e.seg.start;
    je["end"] = e.seg.end;
    je["tokens"] = e.tokens;
    je["text"] = e.text;
    je["mu"] = e.mu;
    je["sigma"] = e.sigma;
    events.push_back(je);
  }
  j["events"] = events;
  j["coarse"] = r.coarse_captions;
  j["generated_count"] = r.generated_count;
  j["parse_fallback"] = r.parse_fallback;
  j["count_mismatch"] = r.count_mismatch;
  j["refine_fallback"] = r.refine_fallback;
  return j;
}

inline InferenceResult inference_from_json(const json& j) {
  InferenceResult r;
  r.video_id = j.at("id").get<std::string>();
  for (const auto& je : j.at("events")) {
    EventPrediction e;
    e.seg = {je.at("start").get<double>(), je.at("end").get<double>()};
    e.tokens = je.at("tokens").get<Caption>();
    e.text = je.at("text").get<std::string>();
    e.mu = je.at("mu").get<double>();
    e.sigma = je.at("sigma").get<double>();
    r.events.push_back(std::move(e));
  }
  r.coarse_captions = j.at("coarse").get<std::vector<Caption>>();
  r.generated_count = j.at("generated_count").get<int>();
  r.parse_fallback = j.at("parse_fallback").get<bool>();
  r.count_mismatch = j.at("count_mismatch").get<bool>();
  r.refine_fallback = j.at("refine_fallback").get<bool>();
  return r;
}

inline void save_predictions(const std::vector<InferenceResult>& results, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open predictions file '" + path + "' for writing");
  for (const InferenceResult& r : results) os << inference_to_json(r).dump() << '\n';
  if (!os) throw IoError("write failed for '" + path + "'");
}

inline std::vector<InferenceResult> load_predictions(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open predictions file '" + path + "'");
  std::vector<InferenceResult> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(inference_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw CorruptionError("predictions record is not valid JSON: " + std::string(e.what()));
    }
  }
  return out;
}

// ---- evaluation ---------------------------------------------------------------

// Scores predictions against the (evaluation-only) ground truth: dense
// captioning metrics at every tIoU threshold, localization P/R/F1, and
// SODA-lite.
inline ScoreReport evaluate_predictions(const std::vector<InferenceResult>& predictions,
                                        const CorpusFile& eval_corpus,
                                        const std::vector<double>& thresholds =
                                            default_tiou_thresholds()) {
  std::map<std::string, const InferenceResult*> by_id;
  for (const InferenceResult& r : predictions) by_id[r.video_id] = &r;

  std::vector<std::vector<DvcEvent>> pred_events, gt_events;
  std::vector<std::vector<Segment>> pred_segs, gt_segs;
  for (const VideoRecord& v : eval_corpus.videos) {
    std::vector<DvcEvent> pe, ge;
    std::vector<Segment> ps, gs;
    const auto it = by_id.find(v.id);
    if (it != by_id.end()) {
      for (const EventPrediction& e : it->second->events) {
        pe.push_back({e.seg, e.tokens});
        ps.push_back(e.seg);
      }
    }
    for (std::size_t i = 0; i < v.ground_truth.size(); ++i) {
      ge.push_back({v.ground_truth[i], v.captions[i]});
      gs.push_back(v.ground_truth[i]);
    }
    pred_events.push_back(std::move(pe));
    gt_events.push_back(std::move(ge));
    pred_segs.push_back(std::move(ps));
    gt_segs.push_back(std::move(gs));
  }

  ScoreReport report = dvc_score(pred_events, gt_events, thresholds);
  report.localization = localization_prf(pred_segs, gt_segs, thresholds);
  report.soda = soda_lite_corpus(pred_events, gt_events);
  return report;
}

// Uniform-random proposal baseline with prescribed per-video event counts:
// each proposal is a sorted pair of uniform draws.
inline std::vector<std::vector<Segment>> random_proposals(const std::vector<int>& counts,
                                                          std::uint64_t seed) {
  Rng rng(seed ^ 0x62617365ULL);
  std::vector<std::vector<Segment>> out;
  out.reserve(counts.size());
  for (int c : counts) {
    std::vector<Segment> segs;
    for (int i = 0; i < c; ++i) {
      double a = rng.uniform();
      double b = rng.uniform();
      if (a > b) std::swap(a, b);
      segs.push_back({a, b});
    }
    out.push_back(std::move(segs));
  }
  return out;
}

// ---- gradient audit -------------------------------------------------------------

struct GradCheckConfig {
  double eps = 1e-5;
  double sample_frac = 0.01;
  double tol = 1e-3;
  std::uint64_t seed = 0;
  bool include_localizer_heads = true;
};

struct GradCheckEntry {
  std::string param;
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  int n_checked = 0;
  double max_rel_err = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> failures;
  bool pass = true;
};

// Central finite differences against the analytic gradients of the total
// localizing loss, over a random fraction of parameters plus (by default)
// every localizer head parameter.
inline GradCheckReport gradient_check(Model& model, const TrainCorpus& corpus,
                                      const TrainConfig& cfg, const GradCheckConfig& gc) {
  pipeline_detail::check_vocab(model, corpus);
  std::vector<const TrainVideo*> batch;
  for (const TrainVideo& v : corpus.videos) batch.push_back(&v);

  const auto loss_value = [&]() {
    Tape tape;
    return localizing_batch_loss(tape, model, batch, cfg).item();
  };

  model.store().zero_grad();
  {
    Tape tape;
    Tensor loss = localizing_batch_loss(tape, model, batch, cfg);
    tape.backward(loss);
  }
  std::map<const Parameter*, std::vector<double>> analytic;
  for (Parameter* p : model.all_params()) analytic[p] = p->grad;

  Rng rng(gc.seed ^ 0x67726164ULL);
  std::vector<std::pair<Parameter*, int>> picks;
  for (Parameter* p : model.all_params()) {
    const bool head = gc.include_localizer_heads &&
                      (p->name == "localizer.fc_mu.w" || p->name == "localizer.fc_mu.b" ||
                       p->name == "localizer.fc_sigma.w" || p->name == "localizer.fc_sigma.b");
    for (int i = 0; i < static_cast<int>(p->value.size()); ++i)
      if (head || rng.uniform() < gc.sample_frac) picks.push_back({p, i});
  }

  GradCheckReport report;
  for (const auto& [p, i] : picks) {
    const double saved = p->value[static_cast<std::size_t>(i)];
    p->value[static_cast<std::size_t>(i)] = saved + gc.eps;
    const double lp = loss_value();
    p->value[static_cast<std::size_t>(i)] = saved - gc.eps;
    const double lm = loss_value();
    p->value[static_cast<std::size_t>(i)] = saved;
    const double numeric = (lp - lm) / (2.0 * gc.eps);
    const double a = analytic[p][static_cast<std::size_t>(i)];
    const double denom = std::max(std::max(std::abs(a), std::abs(numeric)), 1e-6);
    const double rel = std::abs(a - numeric) / denom;
    ++report.n_checked;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst = {p->name, i, a, numeric, rel};
    }
    if (rel > gc.tol) report.failures.push_back({p->name, i, a, numeric, rel});
  }
  report.pass = report.max_rel_err <= gc.tol;
  return report;
}

// ---- ablations ------------------------------------------------------------------

inline const std::vector<std::string>& ablation_variant_names() {
  static const std::vector<std::string> names{
      "full",          "gaussian",      "hard-binary",    "sigmoid",
      "cauchy",        "drop-positive", "drop-negative",  "drop-diversity",
      "drop-refinement", "drop-count-prompt", "drop-mode-prompt"};
  return names;
}

struct AblationSetup {
  TrainConfig config;
  bool refine = true;
};

inline AblationSetup apply_variant(TrainConfig base, const std::string& variant) {
  AblationSetup setup{base, true};
  TrainConfig& cfg = setup.config;
  if (variant == "full" || variant == "gaussian") {
    cfg.family = MaskFamily::gaussian;
  } else if (variant == "hard-binary") {
    cfg.family = MaskFamily::hard_binary;
  } else if (variant == "sigmoid") {
    cfg.family = MaskFamily::sigmoid;
  } else if (variant == "cauchy") {
    cfg.family = MaskFamily::cauchy;
  } else if (variant == "drop-positive") {
    cfg.use_positive = false;
  } else if (variant == "drop-negative") {
    cfg.use_negative = false;
  } else if (variant == "drop-diversity") {
    cfg.use_diversity = false;
  } else if (variant == "drop-refinement") {
    setup.refine = false;
  } else if (variant == "drop-count-prompt") {
    cfg.prompt_count = false;
  } else if (variant == "drop-mode-prompt") {
    cfg.prompt_mode = false;
  } else {
    throw UsageError("unknown ablation variant '" + variant + "'");
  }
  return setup;
}

struct TrainedRun {
  std::unique_ptr<Model> model;
  StageResult captioning;
  StageResult localizing;
};

// Both stages back to back on a fresh model.
inline TrainedRun train_full(const TrainCorpus& corpus, const TrainConfig& cfg,
                             OptimizerState* out_opt = nullptr) {
  TrainedRun run;
  run.model = std::make_unique<Model>(cfg.model_config(corpus));
  run.captioning = train_captioning_stage(*run.model, corpus, cfg);
  run.localizing = train_localizing_stage(*run.model, corpus, cfg, out_opt);
  return run;
}

struct AblationRow {
  std::string variant;
  double loc_f1 = 0.0;
  double loc_r_avg = 0.0;
  double loc_p_avg = 0.0;
  double soda = 0.0;
  double bleu2_avg = 0.0;
  double rouge_avg = 0.0;
  double cider_avg = 0.0;
  double final_train_loss = 0.0;
};

// Trains and evaluates one variant with otherwise identical seed and config.
inline AblationRow ablation_run(const TrainCorpus& train, const CorpusFile& eval_corpus,
                                const TrainConfig& base, const std::string& variant) {
  const AblationSetup setup = apply_variant(base, variant);
  TrainedRun run = train_full(train, setup.config);
  InferOptions opts;
  opts.refine = setup.refine;
  const std::vector<InferenceResult> preds =
      infer_corpus(*run.model, training_view(eval_corpus).videos, opts);
  const ScoreReport report = evaluate_predictions(preds, eval_corpus);
  AblationRow row;
  row.variant = variant;
  row.loc_f1 = report.localization.f1;
  row.loc_r_avg = report.localization.r_avg;
  row.loc_p_avg = report.localization.p_avg;
  row.soda = report.soda;
  row.bleu2_avg = report.averaged_for("bleu2");
  row.rouge_avg = report.averaged_for("rouge_l");
  row.cider_avg = report.averaged_for("cider");
  row.final_train_loss = run.localizing.epoch_mean_loss.back();
  return row;
}

}  // namespace maskcap
