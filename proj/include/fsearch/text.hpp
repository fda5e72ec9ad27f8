#pragma once

#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "util.hpp"

namespace fsearch {

inline constexpr std::string_view kSplitPunctuation = "()[]{}.,:;";

inline bool is_split_punct(char c) { return kSplitPunctuation.find(c) != std::string_view::npos; }

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

/// Whitespace split, with each of `()[]{}.,:;` emitted as its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      tokens.emplace_back(1, c);
    } else {
      cur += c;
    }
  }
  flush();
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

/// Sorted, duplicate-free token list.
class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    std::sort(tokens_.begin(), tokens_.end());
    tokens_.erase(std::unique(tokens_.begin(), tokens_.end()), tokens_.end());
  }

  template <typename Range>
  static Vocab from_texts(const Range& texts) {
    std::set<std::string> all;
    for (const auto& t : texts)
      for (auto& tok : tokenize(t)) all.insert(std::move(tok));
    return Vocab(std::vector<std::string>(all.begin(), all.end()));
  }

  static Vocab load(const std::string& path) {
    std::vector<std::string> toks;
    for (auto& l : read_lines(path))
      if (!l.empty()) toks.push_back(std::move(l));
    return Vocab(std::move(toks));
  }

  void save(const std::string& path) const {
    std::string out;
    for (const auto& t : tokens_) out += t + "\n";
    write_file(path, out);
  }

  bool empty() const { return tokens_.empty(); }
  std::size_t size() const { return tokens_.size(); }
  const std::string& operator[](std::size_t i) const { return tokens_[i]; }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
};

/// round_half_up(rate * n).
inline std::size_t replacement_count(std::size_t n, double rate) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5 + 1e-9));
}

struct AugmentResult {
  std::vector<std::string> tokens;
  std::vector<std::size_t> replaced_positions;  // ascending
};

/// Replaces round_half_up(rate*n) distinct positions, chosen uniformly under
/// `seed`, with tokens drawn uniformly from `vocab`. Length is preserved.
inline AugmentResult augment_detailed(std::vector<std::string> tokens, double rate,
                                      const Vocab& vocab, std::uint64_t seed) {
  if (rate < 0.0 || rate > 1.0)
    throw Error(ErrorCode::PreconditionViolation, "rate", "augment rate must be in [0,1]");
  AugmentResult out;
  const std::size_t k = replacement_count(tokens.size(), rate);
  if (k == 0) {
    out.tokens = std::move(tokens);
    return out;
  }
  if (vocab.empty()) throw Error(ErrorCode::EmptyVocab, "augment");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pos(tokens.size());
  std::iota(pos.begin(), pos.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pos.size() - 1);
    std::swap(pos[i], pos[pick(rng)]);
  }
  pos.resize(k);
  std::sort(pos.begin(), pos.end());
  std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
  for (auto p : pos) tokens[p] = vocab[word(rng)];
  out.tokens = std::move(tokens);
  out.replaced_positions = std::move(pos);
  return out;
}

inline std::vector<std::string> augment(std::vector<std::string> tokens, double rate,
                                        const Vocab& vocab, std::uint64_t seed) {
  return augment_detailed(std::move(tokens), rate, vocab, seed).tokens;
}

inline std::string augment_text(std::string_view text, double rate, const Vocab& vocab,
                                std::uint64_t seed) {
  if (replacement_count(tokenize(text).size(), rate) == 0) return std::string(text);
  return join_tokens(augment(tokenize(text), rate, vocab, seed));
}

}  // namespace fsearch
