#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "uld/error.hpp"

namespace uld {

using TokenId = std::int32_t;

/// Ordered token inventory. The first four entries are always the specials.
class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::array<std::string_view, 4> kSpecialNames = {"<bos>", "<eos>", "<pad>",
                                                                    "<unk>"};

  Vocabulary() {
    for (auto name : kSpecialNames) push(std::string(name));
  }

  /// Appends a token; returns its id, or the existing id if already present.
  TokenId add(const std::string& token) {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    if (token.find('\n') != std::string::npos) {
      throw ParameterError("tokens may not contain a newline");
    }
    return push(token);
  }

  [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
  [[nodiscard]] const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  [[nodiscard]] const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  [[nodiscard]] static bool is_special(TokenId id) noexcept { return id >= 0 && id < 4; }

  [[nodiscard]] std::optional<TokenId> find(const std::string& token) const {
    if (auto it = index_.find(token); it != index_.end()) return it->second;
    return std::nullopt;
  }

  /// Non-special token strings.
  [[nodiscard]] std::vector<std::string> regular_tokens() const {
    return {tokens_.begin() + static_cast<std::ptrdiff_t>(kSpecialNames.size()), tokens_.end()};
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.tokens_ == b.tokens_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write vocabulary file " + path.string());
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read vocabulary file " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() < kSpecialNames.size()) {
      throw FormatError("vocabulary file " + path.string() + " is missing the special tokens");
    }
    for (std::size_t i = 0; i < kSpecialNames.size(); ++i) {
      if (lines[i] != kSpecialNames[i]) {
        throw FormatError("vocabulary line " + std::to_string(i + 1) + " should be " +
                          std::string(kSpecialNames[i]));
      }
    }
    Vocabulary v;
    for (std::size_t i = kSpecialNames.size(); i < lines.size(); ++i) {
      if (v.index_.count(lines[i])) {
        throw FormatError("duplicate token on vocabulary line " + std::to_string(i + 1));
      }
      v.push(lines[i]);
    }
    return v;
  }

 private:
  TokenId push(const std::string& token) {
    const auto id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::string source_text;
};

/// Classic unit-cost edit distance over bytes.
inline std::size_t levenshtein(std::string_view a, std::string_view b) {
  if (a.size() < b.size()) std::swap(a, b);
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Pair-merge tokenizer. With an empty merge list it is a plain character
/// tokenizer over the vocabulary's single-character tokens.
class Tokenizer {
 public:
  enum class Kind { character, pair_merge };
  using Merge = std::pair<std::string, std::string>;

  Tokenizer() = default;
  Tokenizer(Vocabulary vocab, std::vector<Merge> merges, Kind kind)
      : vocab_(std::move(vocab)), merges_(std::move(merges)), kind_(kind) {
    build_ranks();
  }

  [[nodiscard]] const Vocabulary& vocabulary() const noexcept { return vocab_; }
  [[nodiscard]] const std::vector<Merge>& merges() const noexcept { return merges_; }
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

  [[nodiscard]] TokenSequence encode(std::string_view text) const {
    TokenSequence seq;
    seq.source_text = std::string(text);
    seq.ids.reserve(text.size());
    for (char c : text) {
      const auto id = vocab_.find(std::string(1, c));
      seq.ids.push_back(id ? *id : Vocabulary::kUnk);
    }
    if (ranks_.empty()) return seq;

    auto& ids = seq.ids;
    while (ids.size() > 1) {
      std::size_t best_rank = SIZE_MAX;
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
        if (auto it = ranks_.find(key(ids[i], ids[i + 1])); it != ranks_.end()) {
          best_rank = std::min(best_rank, it->second.first);
        }
      }
      if (best_rank == SIZE_MAX) break;
      const TokenId left = *vocab_.find(merges_[best_rank].first);
      const TokenId right = *vocab_.find(merges_[best_rank].second);
      const TokenId merged = ranks_.at(key(left, right)).second;
      std::vector<TokenId> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
    return seq;
  }

  /// Concatenates token text; specials other than unknown decode to nothing.
  [[nodiscard]] std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id == Vocabulary::kUnk) {
        out += "<unk>";
      } else if (!Vocabulary::is_special(id)) {
        out += vocab_.token(id);
      }
    }
    return out;
  }

  void save(const std::filesystem::path& vocab_path, const std::filesystem::path& merges_path) const {
    vocab_.save(vocab_path);
    std::ofstream out(merges_path, std::ios::binary);
    if (!out) throw FormatError("cannot write merge file " + merges_path.string());
    for (const auto& [a, b] : merges_) out << a << '\t' << b << '\n';
  }

  static Tokenizer load(const std::filesystem::path& vocab_path,
                        const std::filesystem::path& merges_path) {
    Vocabulary vocab = Vocabulary::load(vocab_path);
    std::vector<Merge> merges;
    if (std::filesystem::exists(merges_path)) {
      std::ifstream in(merges_path, std::ios::binary);
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
          throw FormatError("merge line " + std::to_string(line_no) + " has no tab separator");
        }
        merges.emplace_back(line.substr(0, tab), line.substr(tab + 1));
      }
    }
    const Kind kind = merges.empty() ? Kind::character : Kind::pair_merge;
    return Tokenizer(std::move(vocab), std::move(merges), kind);
  }

 private:
  static std::uint64_t key(TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  }

  void build_ranks() {
    ranks_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
      const auto& [a, b] = merges_[r];
      const auto ia = vocab_.find(a);
      const auto ib = vocab_.find(b);
      const auto im = vocab_.find(a + b);
      if (!ia || !ib || !im) {
        throw FormatError("merge " + std::to_string(r + 1) + " references tokens outside the vocabulary");
      }
      ranks_.try_emplace(key(*ia, *ib), r, *im);
    }
  }

  Vocabulary vocab_;
  std::vector<Merge> merges_;
  Kind kind_ = Kind::character;
  std::unordered_map<std::uint64_t, std::pair<std::size_t, TokenId>> ranks_;
};

/// One token per alphabet character plus the specials.
inline Tokenizer char_tokenizer(const std::set<char>& alphabet) {
  if (alphabet.empty()) throw ParameterError("character tokenizer needs a non-empty alphabet");
  Vocabulary v;
  for (char c : alphabet) v.add(std::string(1, c));
  return Tokenizer(std::move(v), {}, Tokenizer::Kind::character);
}

inline Tokenizer char_tokenizer(std::string_view alphabet) {
  return char_tokenizer(std::set<char>(alphabet.begin(), alphabet.end()));
}

/// Greedy pair-merge training: merge the most frequent adjacent pair,
/// breaking count ties by the lexicographically smallest (left, right).
/// Pairs never span two corpus entries.
inline Tokenizer bpe_train(const std::vector<std::string>& corpus, std::size_t num_merges) {
  std::set<char> chars;
  for (const auto& text : corpus) chars.insert(text.begin(), text.end());
  if (chars.empty()) throw ParameterError("pair-merge training needs a non-empty corpus");

  Vocabulary vocab;
  for (char c : chars) vocab.add(std::string(1, c));
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& text : corpus) {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (char c : text) ids.push_back(*vocab.find(std::string(1, c)));
    seqs.push_back(std::move(ids));
  }

  auto pack = [](TokenId a, TokenId b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
  };

  std::vector<Tokenizer::Merge> merges;
  for (std::size_t m = 0; m < num_merges; ++m) {
    std::unordered_map<std::uint64_t, std::size_t> counts;
    for (const auto& ids : seqs) {
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) ++counts[pack(ids[i], ids[i + 1])];
    }
    if (counts.empty()) break;

    std::size_t best_count = 0;
    std::pair<TokenId, TokenId> best{-1, -1};
    for (const auto& [k, c] : counts) {
      const TokenId a = static_cast<TokenId>(k >> 32);
      const TokenId b = static_cast<TokenId>(k & 0xffffffffu);
      const bool better =
          c > best_count ||
          (c == best_count && std::pair(vocab.token(a), vocab.token(b)) <
                                  std::pair(vocab.token(best.first), vocab.token(best.second)));
      if (better) {
        best_count = c;
        best = {a, b};
      }
    }

    const auto [left, right] = best;
    const TokenId merged = vocab.add(vocab.token(left) + vocab.token(right));
    merges.emplace_back(vocab.token(left), vocab.token(right));
    for (auto& ids : seqs) {
      std::vector<TokenId> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
  }
  return Tokenizer(std::move(vocab), std::move(merges), Tokenizer::Kind::pair_merge);
}

inline Tokenizer bpe_train(const std::string& corpus, std::size_t num_merges) {
  return bpe_train(std::vector<std::string>{corpus}, num_merges);
}

/// Percentage of the reference's non-special tokens that also appear,
/// verbatim, in the probe.
inline double vocab_overlap(const Vocabulary& probe, const Vocabulary& reference) {
  const auto ref = reference.regular_tokens();
  const std::unordered_set<std::string> ref_set(ref.begin(), ref.end());
  if (ref_set.empty()) {
    throw DegenerateInputError("reference vocabulary has no tokens besides the specials");
  }
  const auto pr = probe.regular_tokens();
  const std::unordered_set<std::string> probe_set(pr.begin(), pr.end());
  std::size_t shared = 0;
  for (const auto& t : ref_set) shared += probe_set.count(t);
  return 100.0 * static_cast<double>(shared) / static_cast<double>(ref_set.size());
}

}  // namespace uld
