#pragma once

// Full model bundle: vocabulary, captioner, localizer, one parameter store.
// Construction is deterministic given the init seed; the checkpoint metadata
// carries everything needed to rebuild the same architecture.

#include <cstdio>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>

#include "maskcap/captioner.hpp"
#include "maskcap/checkpoint.hpp"
#include "maskcap/localizer.hpp"
#include "maskcap/masks.hpp"
#include "maskcap/vocab.hpp"

namespace maskcap {

struct ModelConfig {
  ModelDims dims;
  int n_frames = 32;
  int k_max = 8;
  int vocab_content = 64;
  int max_text_len = 96;
  int localizer_blocks = 1;
  double tau = 2.0;
  double gamma = 0.8;
  MaskFamily family = MaskFamily::gaussian;
  bool add_pos_in_masked = true;
  bool prompt_mode = true;
  bool prompt_count = true;
  std::uint64_t init_seed = 0;

  TokenizeOptions prompts() const { return {prompt_mode, prompt_count}; }
};

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Training progress marker stored in checkpoints so stage ordering can be
// enforced on load.
enum class TrainStage { fresh, captioning, localizing };

inline const char* stage_name(TrainStage s) {
  switch (s) {
    case TrainStage::fresh: return "fresh";
    case TrainStage::captioning: return "captioning";
    case TrainStage::localizing: return "localizing";
  }
  return "?";
}

inline TrainStage stage_from_string(const std::string& s) {
  if (s == "fresh") return TrainStage::fresh;
  if (s == "captioning") return TrainStage::captioning;
  if (s == "localizing") return TrainStage::localizing;
  throw CorruptionError("unknown training stage '" + s + "'");
}

class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), vocab_{cfg.vocab_content, cfg.k_max} {
    Rng rng(cfg.init_seed ^ 0x6d61736b636170ULL);
    captioner_ = std::make_unique<Captioner>(store_, rng, vocab_, cfg.dims, cfg.n_frames,
                                             cfg.max_text_len);
    localizer_ = std::make_unique<Localizer>(store_, rng, cfg.dims.d, cfg.dims.heads, cfg.dims.ff,
                                             cfg.k_max, cfg.localizer_blocks);
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }
  Captioner& captioner() { return *captioner_; }
  const Captioner& captioner() const { return *captioner_; }
  Localizer& localizer() { return *localizer_; }
  const Localizer& localizer() const { return *localizer_; }

  TrainStage stage() const { return stage_; }
  void set_stage(TrainStage s) { stage_ = s; }

  std::vector<Parameter*> captioner_params() const { return params_with_prefix("captioner."); }
  std::vector<Parameter*> localizer_params() const { return params_with_prefix("localizer."); }
  std::vector<Parameter*> all_params() const { return store_.all(); }

  std::map<std::string, std::string> checkpoint_meta() const {
    std::map<std::string, std::string> m;
    m["d"] = std::to_string(cfg_.dims.d);
    m["heads"] = std::to_string(cfg_.dims.heads);
    m["l_enc"] = std::to_string(cfg_.dims.l_enc);
    m["l_dec"] = std::to_string(cfg_.dims.l_dec);
    m["ff"] = std::to_string(cfg_.dims.ff);
    m["n_frames"] = std::to_string(cfg_.n_frames);
    m["k_max"] = std::to_string(cfg_.k_max);
    m["vocab_content"] = std::to_string(cfg_.vocab_content);
    m["max_text_len"] = std::to_string(cfg_.max_text_len);
    m["localizer_blocks"] = std::to_string(cfg_.localizer_blocks);
    m["tau"] = fmt_double(cfg_.tau);
    m["gamma"] = fmt_double(cfg_.gamma);
    m["family"] = family_name(cfg_.family);
    m["add_pos_in_masked"] = cfg_.add_pos_in_masked ? "1" : "0";
    m["prompt_mode"] = cfg_.prompt_mode ? "1" : "0";
    m["prompt_count"] = cfg_.prompt_count ? "1" : "0";
    m["init_seed"] = std::to_string(cfg_.init_seed);
    m["stage"] = stage_name(stage_);
    return m;
  }

  void save(const std::string& path, const OptimizerState* opt = nullptr) const {
    save_checkpoint(path, store_, checkpoint_meta(), opt);
  }

  // Rebuilds the architecture recorded in the checkpoint and loads values.
  static std::unique_ptr<Model> load(const std::string& path, CheckpointData* out_data = nullptr) {
    CheckpointData data = read_checkpoint(path);
    ModelConfig cfg = config_from_meta(data.meta);
    auto model = std::make_unique<Model>(cfg);
    apply_checkpoint(data, model->store());
    model->set_stage(stage_from_string(data.meta.at("stage")));
    if (out_data != nullptr) *out_data = std::move(data);
    return model;
  }

  static ModelConfig config_from_meta(const std::map<std::string, std::string>& m) {
    const auto geti = [&](const char* k) { return std::stoi(m.at(k)); };
    const auto getu = [&](const char* k) { return std::stoull(m.at(k)); };
    const auto getd = [&](const char* k) { return std::strtod(m.at(k).c_str(), nullptr); };
    ModelConfig cfg;
    cfg.dims = {geti("d"), geti("heads"), geti("l_enc"), geti("l_dec"), geti("ff")};
    cfg.n_frames = geti("n_frames");
    cfg.k_max = geti("k_max");
    cfg.vocab_content = geti("vocab_content");
    cfg.max_text_len = geti("max_text_len");
    cfg.localizer_blocks = geti("localizer_blocks");
    cfg.tau = getd("tau");
    cfg.gamma = getd("gamma");
    cfg.family = family_from_string(m.at("family"));
    cfg.add_pos_in_masked = m.at("add_pos_in_masked") == "1";
    cfg.prompt_mode = m.at("prompt_mode") == "1";
    cfg.prompt_count = m.at("prompt_count") == "1";
    cfg.init_seed = getu("init_seed");
    return cfg;
  }

 private:
  std::vector<Parameter*> params_with_prefix(const std::string& prefix) const {
    std::vector<Parameter*> out;
    for (Parameter* p : store_.all())
      if (p->name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
  }

  ModelConfig cfg_;
  Vocabulary vocab_;
  ParamStore store_;
  std::unique_ptr<Captioner> captioner_;
  std::unique_ptr<Localizer> localizer_;
  TrainStage stage_ = TrainStage::fresh;
};

}  // namespace maskcap
