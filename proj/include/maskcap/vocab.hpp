#pragma once

// Closed synthetic vocabulary with prompt tokens. Layout is fixed so ids are
// dense and stable across save/load:
//   0 <pad>  1 <bos>  2 <end>  3 <sep>  4 [FULL]  5 [MASK]
//   6 .. 6+k_max-1      count tokens "k events:" for k = 1..k_max
//   6+k_max ..          content tokens w0, w1, ...

#include <string>
#include <vector>

#include "maskcap/errors.hpp"

namespace maskcap {

enum class Mode { full, masked_positive, masked_negative };

inline const char* mode_name(Mode m) {
  switch (m) {
    case Mode::full: return "full";
    case Mode::masked_positive: return "masked-positive";
    case Mode::masked_negative: return "masked-negative";
  }
  return "?";
}

struct Vocabulary {
  int content_size = 64;
  int k_max = 8;

  static constexpr int pad = 0;
  static constexpr int bos = 1;
  static constexpr int end = 2;
  static constexpr int sep = 3;
  static constexpr int full_mode = 4;
  static constexpr int mask_mode = 5;
  static constexpr int count_base = 6;

  int content_base() const { return count_base + k_max; }
  int size() const { return content_base() + content_size; }

  int count_token(int k) const {
    if (k < 1 || k > k_max)
      throw CapacityError("count token for k=" + std::to_string(k) + " exceeds K_max=" +
                          std::to_string(k_max));
    return count_base + k - 1;
  }

  int content_token(int w) const {
    if (w < 0 || w >= content_size)
      throw IndexError("content token " + std::to_string(w) + " out of range");
    return content_base() + w;
  }

  bool is_count(int id) const { return id >= count_base && id < content_base(); }
  bool is_content(int id) const { return id >= content_base() && id < size(); }
  int count_of(int id) const {
    if (!is_count(id)) throw ContractViolation("count_of: not a count token");
    return id - count_base + 1;
  }

  int mode_token(Mode m) const { return m == Mode::full ? full_mode : mask_mode; }

  std::string token_text(int id) const {
    if (id == pad) return "<pad>";
    if (id == bos) return "<bos>";
    if (id == end) return "<end>";
    if (id == sep) return "<sep>";
    if (id == full_mode) return "[FULL]";
    if (id == mask_mode) return "[MASK]";
    if (is_count(id)) return std::to_string(count_of(id)) + " events:";
    if (is_content(id)) return "w" + std::to_string(id - content_base());
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary");
  }

  std::vector<std::string> listing() const {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(size()));
    for (int i = 0; i < size(); ++i) out.push_back(token_text(i));
    return out;
  }

  bool operator==(const Vocabulary& o) const {
    return content_size == o.content_size && k_max == o.k_max;
  }
};

// Prompt-plus-caption sequence with mode markers.
struct TokenSeq {
  std::vector<int> ids;
  Mode mode = Mode::full;
  int declared_count = 0;
};

struct TokenizeOptions {
  bool include_mode = true;   // ablation: drop [FULL]/[MASK] prompt (BOS takes its place)
  bool include_count = true;  // ablation: drop "N events:" prompt
};

// [mode, count, sent_1, SEP, sent_2, SEP, ..., END]
inline TokenSeq tokenize(const Vocabulary& vocab, Mode mode, int count,
                         const std::vector<std::vector<int>>& captions,
                         const TokenizeOptions& opts = {}) {
  if (count < 1 || count > vocab.k_max)
    throw CapacityError("tokenize: count " + std::to_string(count) + " outside [1," +
                        std::to_string(vocab.k_max) + "]");
  if (captions.empty()) throw ContractViolation("tokenize: empty caption list");
  for (const auto& c : captions)
    if (c.empty()) throw ContractViolation("tokenize: empty caption");
  TokenSeq seq;
  seq.mode = mode;
  seq.declared_count = count;
  seq.ids.push_back(opts.include_mode ? vocab.mode_token(mode) : Vocabulary::bos);
  if (opts.include_count) seq.ids.push_back(vocab.count_token(count));
  for (const auto& c : captions) {
    seq.ids.insert(seq.ids.end(), c.begin(), c.end());
    seq.ids.push_back(Vocabulary::sep);
  }
  seq.ids.push_back(Vocabulary::end);
  return seq;
}

struct ParseResult {
  int declared_count = 0;
  std::vector<std::vector<int>> captions;
  bool count_mismatch = false;
  bool dropped_empty = false;
};

// Inverse of tokenize. Splits on SEP; truncates the sentence list to the
// declared count when the model over-generates, flags under-generation, and
// drops (and flags) empty sentences.
inline ParseResult parse_generated(const Vocabulary& vocab, const TokenSeq& seq,
                                   const TokenizeOptions& opts = {}) {
  ParseResult res;
  std::size_t pos = 0;
  const auto& ids = seq.ids;
  if (opts.include_mode) {
    if (pos >= ids.size() || (ids[pos] != Vocabulary::full_mode && ids[pos] != Vocabulary::mask_mode))
      throw ParseError("sequence does not begin with a mode token");
    ++pos;
  } else {
    if (pos < ids.size() && ids[pos] == Vocabulary::bos) ++pos;
  }
  if (opts.include_count) {
    if (pos >= ids.size() || !vocab.is_count(ids[pos]))
      throw ParseError("missing count token after mode token");
    res.declared_count = vocab.count_of(ids[pos]);
    ++pos;
  } else {
    res.declared_count = seq.declared_count;
  }

  std::vector<int> current;
  for (; pos < ids.size(); ++pos) {
    const int id = ids[pos];
    if (id == Vocabulary::end) break;
    if (id == Vocabulary::sep) {
      if (current.empty()) {
        res.dropped_empty = true;
      } else {
        res.captions.push_back(current);
        current.clear();
      }
      continue;
    }
    if (id == Vocabulary::pad) continue;
    current.push_back(id);
  }
  if (!current.empty()) res.captions.push_back(current);  // unterminated tail sentence

  if (opts.include_count) {
    if (static_cast<int>(res.captions.size()) > res.declared_count) {
      res.captions.resize(static_cast<std::size_t>(res.declared_count));
      res.count_mismatch = true;
    } else if (static_cast<int>(res.captions.size()) < res.declared_count) {
      res.count_mismatch = true;
    }
  } else {
    res.declared_count = static_cast<int>(res.captions.size());
  }
  return res;
}

}  // namespace maskcap
