#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "maskcap/pipeline.hpp"

using namespace maskcap;
using Catch::Approx;

namespace {

CorpusConfig micro_corpus_config(std::uint64_t seed = 9) {
  CorpusConfig cfg;
  cfg.n_videos = 6;
  cfg.n_val = 2;
  cfg.events_min = 2;
  cfg.events_max = 2;
  cfg.n_frames = 8;
  cfg.dim = 16;
  cfg.noise = 0.02;
  cfg.min_gap = 0.1;
  cfg.event_len_min = 0.2;
  cfg.event_len_max = 0.35;
  cfg.vocab_content = 12;
  cfg.k_max = 4;
  cfg.n_templates = 4;
  cfg.caption_len_min = 2;
  cfg.caption_len_max = 4;
  cfg.seed = seed;
  return cfg;
}

TrainConfig micro_train_config() {
  TrainConfig cfg;
  cfg.dims = {16, 2, 1, 1, 32};
  cfg.epochs_captioning = 2;
  cfg.epochs_localizing = 2;
  cfg.batch_size = 3;
  cfg.max_text_len = 32;
  cfg.seed = 4;
  return cfg;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("stage ordering is enforced") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  const TrainConfig cfg = micro_train_config();

  Model model(cfg.model_config(corpus));
  CHECK_THROWS_AS(train_localizing_stage(model, corpus, cfg), ContractViolation);
  train_captioning_stage(model, corpus, cfg);
  CHECK(model.stage() == TrainStage::captioning);
  CHECK_THROWS_AS(train_captioning_stage(model, corpus, cfg), ContractViolation);
  train_localizing_stage(model, corpus, cfg);
  CHECK(model.stage() == TrainStage::localizing);
}

TEST_CASE("captioning stage loss history is finite and improves") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  TrainConfig cfg = micro_train_config();
  cfg.epochs_captioning = 6;
  cfg.lr = 3e-3;  // micro-scale smoke config, not the paper schedule

  Model model(cfg.model_config(corpus));
  const StageResult res = train_captioning_stage(model, corpus, cfg);
  REQUIRE(res.epoch_mean_loss.size() == 6);
  for (double l : res.epoch_mean_loss) CHECK(std::isfinite(l));
  CHECK(res.epoch_mean_loss.back() < res.epoch_mean_loss.front());
}

TEST_CASE("vocabulary mismatch is rejected") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  TrainConfig cfg = micro_train_config();
  Model model(cfg.model_config(corpus));

  TrainCorpus other = corpus;
  other.vocab = Vocabulary{corpus.vocab.content_size + 4, corpus.vocab.k_max};
  CHECK_THROWS_AS(train_captioning_stage(model, other, cfg), CompatibilityError);
}

TEST_CASE("localizing stage logs the exact loss decomposition") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  const TrainConfig cfg = micro_train_config();

  Model model(cfg.model_config(corpus));
  train_captioning_stage(model, corpus, cfg);
  const StageResult res = train_localizing_stage(model, corpus, cfg);
  REQUIRE_FALSE(res.steps.empty());
  for (const StepLog& s : res.steps) {
    CHECK(std::isfinite(s.total));
    CHECK(std::abs(s.total - (s.l_pos + s.l_neg + s.l_div)) < 1e-12);
  }
}

TEST_CASE("ablation switches remove their loss terms") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  TrainConfig cfg = micro_train_config();

  Model model(cfg.model_config(corpus));
  std::vector<const TrainVideo*> batch;
  for (const TrainVideo& v : corpus.videos) batch.push_back(&v);

  // drop-positive: total = l_neg + l_div with l_pos identically 0
  cfg.use_positive = false;
  Tape tape;
  LocalizingComponents comp;
  localizing_batch_loss(tape, model, batch, cfg, &comp);
  CHECK(comp.l_pos == 0.0);
  CHECK(comp.total == Approx(comp.l_neg + comp.l_div).margin(1e-12));

  // hard-binary masks: zero gradient into the localizer
  cfg = micro_train_config();
  cfg.family = MaskFamily::hard_binary;
  model.store().zero_grad();
  Tape t2;
  Tensor loss = localizing_batch_loss(t2, model, batch, cfg);
  t2.backward(loss);
  double loc_grad = 0.0;
  for (const Parameter* p : model.localizer_params())
    for (double gr : p->grad) loc_grad += gr * gr;
  CHECK(loc_grad == 0.0);
}

TEST_CASE("training is deterministic and a replayed step reproduces parameters") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  const TrainConfig cfg = micro_train_config();

  Model m1(cfg.model_config(corpus));
  Model m2(cfg.model_config(corpus));
  const StageResult r1 = train_captioning_stage(m1, corpus, cfg);
  const StageResult r2 = train_captioning_stage(m2, corpus, cfg);
  CHECK(r1.epoch_mean_loss == r2.epoch_mean_loss);  // bit-identical histories
  for (std::size_t i = 0; i < m1.store().all().size(); ++i)
    CHECK(m1.store().all()[i]->value == m2.store().all()[i]->value);

  // full two-stage run: byte-identical checkpoints
  const StageResult l1 = train_localizing_stage(m1, corpus, cfg);
  const StageResult l2 = train_localizing_stage(m2, corpus, cfg);
  CHECK(l1.epoch_mean_loss == l2.epoch_mean_loss);
  const std::string p1 = temp_path("mc_pipe_a.bin");
  const std::string p2 = temp_path("mc_pipe_b.bin");
  m1.save(p1);
  m2.save(p2);
  CHECK(file_bytes(p1) == file_bytes(p2));
}

TEST_CASE("gradient audit on the micro setup") {
  CorpusConfig cc = micro_corpus_config();
  cc.n_videos = 1;
  cc.vocab_content = 16;
  const GeneratedCorpus g = generate_corpus(cc);
  const TrainCorpus corpus = training_view(g.train);
  TrainConfig cfg = micro_train_config();
  cfg.dims = {16, 2, 1, 1, 32};

  Model model(cfg.model_config(corpus));
  GradCheckConfig gc;
  gc.sample_frac = 0.01;
  gc.seed = 1;
  const GradCheckReport report = gradient_check(model, corpus, cfg, gc);
  INFO("worst " << report.worst.param << "[" << report.worst.index
                << "] analytic=" << report.worst.analytic << " numeric=" << report.worst.numeric);
  CHECK(report.n_checked > 50);
  CHECK(report.max_rel_err <= 1e-3);
  CHECK(report.pass);
}

TEST_CASE("inference contract on a trained micro model") {
  const GeneratedCorpus g = generate_corpus(micro_corpus_config());
  const TrainCorpus corpus = training_view(g.train);
  TrainConfig cfg = micro_train_config();
  cfg.epochs_captioning = 10;
  cfg.epochs_localizing = 4;
  cfg.lr = 3e-3;

  TrainedRun run = train_full(corpus, cfg);
  Model& model = *run.model;

  // infer refuses models that are not fully trained
  {
    Model fresh(cfg.model_config(corpus));
    CHECK_THROWS_AS(infer_video(fresh, "x", corpus.videos[0].frames), ContractViolation);
  }

  const InferenceResult with_refine = infer_video(model, "v", corpus.videos[0].frames, {true, 0});
  const InferenceResult no_refine = infer_video(model, "v", corpus.videos[0].frames, {false, 0});

  CHECK(static_cast<int>(with_refine.events.size()) == with_refine.generated_count);
  for (const EventPrediction& e : with_refine.events) {
    CHECK(e.seg.start >= 0.0);
    CHECK(e.seg.end <= 1.0);
    CHECK(e.seg.start <= e.seg.end);
  }

  // refinement never changes segments, only captions
  REQUIRE(with_refine.events.size() == no_refine.events.size());
  for (std::size_t i = 0; i < with_refine.events.size(); ++i) {
    CHECK(with_refine.events[i].seg.start == no_refine.events[i].seg.start);
    CHECK(with_refine.events[i].seg.end == no_refine.events[i].seg.end);
  }

  // with refinement disabled, captions equal the stage-1 coarse captions
  for (std::size_t i = 0; i < no_refine.events.size(); ++i)
    CHECK(no_refine.events[i].tokens == no_refine.coarse_captions[i]);

  // deterministic
  const InferenceResult again = infer_video(model, "v", corpus.videos[0].frames, {true, 0});
  REQUIRE(again.events.size() == with_refine.events.size());
  for (std::size_t i = 0; i < again.events.size(); ++i) {
    CHECK(again.events[i].seg.start == with_refine.events[i].seg.start);
    CHECK(again.events[i].tokens == with_refine.events[i].tokens);
  }
}

TEST_CASE("predictions file round trip") {
  InferenceResult r;
  r.video_id = "vid7";
  r.generated_count = 1;
  r.events.push_back({{0.25, 0.5}, {14, 15}, "w0 w1", 0.375, 0.25});
  r.coarse_captions = {{14, 15}};
  const std::string path = temp_path("mc_preds.jsonl");
  save_predictions({r}, path);
  const auto loaded = load_predictions(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].video_id == "vid7");
  CHECK(loaded[0].events[0].seg.start == 0.25);
  CHECK(loaded[0].events[0].tokens == Caption{14, 15});
  CHECK(loaded[0].events[0].text == "w0 w1");
}

TEST_CASE("random baseline proposals are reproducible and well formed") {
  const auto a = random_proposals({2, 3, 1}, 11);
  const auto b = random_proposals({2, 3, 1}, 11);
  REQUIRE(a.size() == 3);
  CHECK(a[1].size() == 3);
  for (std::size_t v = 0; v < a.size(); ++v)
    for (std::size_t i = 0; i < a[v].size(); ++i) {
      CHECK(a[v][i].start <= a[v][i].end);
      CHECK(a[v][i].start == b[v][i].start);
      CHECK(a[v][i].end == b[v][i].end);
    }
}

TEST_CASE("ablation variants parse and unknown ones are rejected") {
  TrainConfig base = micro_train_config();
  CHECK(apply_variant(base, "hard-binary").config.family == MaskFamily::hard_binary);
  CHECK_FALSE(apply_variant(base, "drop-positive").config.use_positive);
  CHECK_FALSE(apply_variant(base, "drop-refinement").refine);
  CHECK_FALSE(apply_variant(base, "drop-count-prompt").config.prompt_count);
  CHECK_THROWS_AS(apply_variant(base, "nonsense"), UsageError);
}
