#pragma once

// Prompt-conditioned captioning stack: temporal encoder over frame features
// with learned position embeddings, and a causal decoder that consumes the
// encoded frames as prefix visual tokens. One loss path serves the full,
// positive-masked and negative-masked captioning objectives; only the
// context and token sequence differ.

#include <optional>
#include <string>
#include <vector>

#include "maskcap/errors.hpp"
#include "maskcap/masks.hpp"
#include "maskcap/nn.hpp"
#include "maskcap/tensor.hpp"
#include "maskcap/types.hpp"
#include "maskcap/vocab.hpp"

namespace maskcap {

struct ModelDims {
  int d = 64;
  int heads = 4;
  int l_enc = 2;
  int l_dec = 2;
  int ff = 128;
};

struct MalformedGeneration : GenerationError {
  std::vector<int> raw_tokens;
  explicit MalformedGeneration(const std::string& m, std::vector<int> toks)
      : GenerationError(m), raw_tokens(std::move(toks)) {}
};

struct GenerateOptions {
  int max_len = 96;
  // When set, the count token is forced instead of chosen by the model
  // (refinement uses count 1).
  std::optional<int> forced_count;
  TokenizeOptions prompts;
  // Greedy decoding is deterministic; the seed only matters for sampling
  // strategies, which are out of scope. Kept for interface stability.
  std::uint64_t seed = 0;
};

class Captioner {
 public:
  Captioner(ParamStore& store, Rng& rng, const Vocabulary& vocab, ModelDims dims, int n_frames,
            int max_text_len)
      : vocab_(vocab), dims_(dims), n_frames_(n_frames), max_text_len_(max_text_len) {
    frame_pos_ = &store.create("captioner.frame_pos", {n_frames, dims.d});
    init_normal(*frame_pos_, rng, kInitStd);
    for (int i = 0; i < dims.l_enc; ++i)
      enc_blocks_.push_back(
          make_block(store, "captioner.enc" + std::to_string(i), dims.d, dims.heads, dims.ff, rng));
    enc_final_ = make_layer_norm(store, "captioner.enc_final", dims.d);

    token_emb_ = &store.create("captioner.token_emb", {vocab.size(), dims.d});
    init_normal(*token_emb_, rng, kInitStd);
    text_pos_ = &store.create("captioner.text_pos", {n_frames + max_text_len, dims.d});
    init_normal(*text_pos_, rng, kInitStd);
    for (int i = 0; i < dims.l_dec; ++i)
      dec_blocks_.push_back(
          make_block(store, "captioner.dec" + std::to_string(i), dims.d, dims.heads, dims.ff, rng));
    dec_final_ = make_layer_norm(store, "captioner.dec_final", dims.d);
    out_proj_ = make_linear(store, "captioner.out", dims.d, vocab.size(), rng);
  }

  const Vocabulary& vocab() const { return vocab_; }
  const ModelDims& dims() const { return dims_; }
  int n_frames() const { return n_frames_; }
  int max_text_len() const { return max_text_len_; }
  Parameter& frame_pos() { return *frame_pos_; }

  // Temporal encoding. Unmasked: E(v + pos). Masked: E(M (.) v [+ pos]),
  // where the mask scales each frame row; adding the position embeddings in
  // masked mode too is the default (switchable).
  Tensor encode_video(Tape& tape, const FrameEmbeddings& frames, const Mask* mask = nullptr,
                      bool add_pos_in_masked = true) const {
    frames.validate();
    if (frames.n_frames != n_frames_)
      throw ShapeError("encode_video: " + std::to_string(frames.n_frames) +
                       " frames but position table has " + std::to_string(n_frames_) + " rows");
    if (frames.dim != dims_.d) throw ShapeError("encode_video: feature dim mismatch");
    Tensor x = tape.constant({frames.n_frames, frames.dim}, frames.data);
    if (mask != nullptr) {
      if (mask->values.numel() != frames.n_frames)
        throw ShapeError("encode_video: mask length mismatch");
      x = tape.scale_rows(x, mask->values);
      if (add_pos_in_masked) x = tape.add(x, tape.leaf(*frame_pos_));
    } else {
      x = tape.add(x, tape.leaf(*frame_pos_));
    }
    for (const Block& b : enc_blocks_) x = apply_block(tape, b, x, /*causal=*/false);
    return layer_norm(tape, enc_final_, x);
  }

  // Logits over the combined sequence [context; tokens]. Row n_frames+i-1
  // predicts token i (0-based: row n_frames+i predicts tokens[i+1]).
  Tensor sequence_logits(Tape& tape, Tensor context, const std::vector<int>& tokens) const {
    if (tokens.empty()) throw ContractViolation("sequence_logits: empty token list");
    if (static_cast<int>(tokens.size()) > max_text_len_)
      throw CapacityError("sequence_logits: " + std::to_string(tokens.size()) +
                          " tokens exceed max text length " + std::to_string(max_text_len_));
    Tensor emb = tape.gather_rows(tape.leaf(*token_emb_), tokens);
    Tensor z = tape.concat_rows({context, emb});
    const int total = n_frames_ + static_cast<int>(tokens.size());
    Tensor pos = tape.slice_rows(tape.leaf(*text_pos_), 0, total);
    Tensor x = tape.add(z, pos);
    for (const Block& b : dec_blocks_) x = apply_block(tape, b, x, /*causal=*/true);
    x = layer_norm(tape, dec_final_, x);
    return tape.mul_scalar(linear(tape, out_proj_, x), kLogitScale);
  }

  // Teacher-forced mean NLL over predicted positions (tokens 2..N_r given
  // the visual prefix and everything before them).
  Tensor captioning_loss(Tape& tape, Tensor context, const TokenSeq& seq) const {
    if (seq.ids.size() < 2)
      throw ContractViolation("captioning_loss: sequence must have at least 2 tokens");
    Tensor logits = sequence_logits(tape, context, seq.ids);
    const int len = static_cast<int>(seq.ids.size());
    Tensor pred = tape.slice_rows(logits, n_frames_, n_frames_ + len - 1);
    std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
    return tape.softmax_cross_entropy(pred, targets);
  }

  int predicted_token_count(const TokenSeq& seq) const {
    return static_cast<int>(seq.ids.size()) - 1;
  }

  // Greedy decoding from a fixed context. Emits the mode token, then a count
  // token (model-chosen unless forced), then SEP-terminated sentences; stops
  // at END, after the declared number of sentences, or at max_len. Ties in
  // the argmax resolve to the lowest token id.
  TokenSeq generate(const std::vector<double>& context_values, Mode mode,
                    const GenerateOptions& opts = {}) const {
    std::vector<int> toks;
    toks.push_back(opts.prompts.include_mode ? vocab_.mode_token(mode) : Vocabulary::bos);
    int count = -1;
    if (opts.forced_count) {
      count = *opts.forced_count;
      if (opts.prompts.include_count) toks.push_back(vocab_.count_token(count));
    }
    const bool model_picks_count = opts.prompts.include_count && !opts.forced_count;

    int sentences_done = 0;
    bool saw_token_since_sep = false;
    while (static_cast<int>(toks.size()) < opts.max_len) {
      const int next = next_token(context_values, toks);
      if (model_picks_count && count < 0) {
        if (!vocab_.is_count(next))
          throw MalformedGeneration("generate: model did not emit a count token", toks);
        count = vocab_.count_of(next);
        toks.push_back(next);
        continue;
      }
      toks.push_back(next);
      if (next == Vocabulary::end) break;
      if (next == Vocabulary::sep) {
        if (saw_token_since_sep) ++sentences_done;
        saw_token_since_sep = false;
        if (count > 0 && sentences_done >= count) break;
        continue;
      }
      saw_token_since_sep = true;
    }
    TokenSeq seq;
    seq.ids = std::move(toks);
    seq.mode = mode;
    seq.declared_count = count > 0 ? count : 0;
    return seq;
  }

  // Single next-token logits evaluated without recording gradients.
  int next_token(const std::vector<double>& context_values, const std::vector<int>& tokens) const {
    Tape tape;
    Tensor ctx = tape.constant({n_frames_, dims_.d}, context_values);
    Tensor logits = sequence_logits(tape, ctx, tokens);
    const int total = n_frames_ + static_cast<int>(tokens.size());
    const std::vector<double>& v = logits.values();
    const int vs = vocab_.size();
    const double* row = v.data() + static_cast<std::size_t>(total - 1) * vs;
    int best = 0;
    for (int j = 1; j < vs; ++j)
      if (row[j] > row[best]) best = j;
    return best;
  }

  // Context values for generation, computed on a scratch tape.
  std::vector<double> encode_video_values(const FrameEmbeddings& frames,
                                          const MaskParams* mask_params = nullptr,
                                          bool add_pos_in_masked = true) const {
    Tape tape;
    if (mask_params == nullptr) return encode_video(tape, frames, nullptr).values();
    Mask m;
    m.family = mask_params->family;
    m.tau = mask_params->tau;
    m.mu = tape.scalar(mask_params->mu);
    m.sigma = tape.scalar(mask_params->sigma);
    Mask built = build_mask(tape, m.mu, m.sigma, mask_params->tau, mask_params->family,
                            frames.n_frames);
    return encode_video(tape, frames, &built, add_pos_in_masked).values();
  }

 private:
  Vocabulary vocab_;
  ModelDims dims_;
  int n_frames_;
  int max_text_len_;

  Parameter* frame_pos_ = nullptr;  // theta_p, shared with the localizer
  std::vector<Block> enc_blocks_;
  LayerNormParams enc_final_;

  Parameter* token_emb_ = nullptr;
  Parameter* text_pos_ = nullptr;
  std::vector<Block> dec_blocks_;
  LayerNormParams dec_final_;
  Linear out_proj_;
};

}  // namespace maskcap
