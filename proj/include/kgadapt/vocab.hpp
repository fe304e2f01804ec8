#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgadapt {

using TokenId = std::uint32_t;

inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kSepToken = "[SEP]";

/// Shared vocabulary over all languages. Ids are dense; the four special
/// tokens occupy ids 0..3.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;
  static constexpr TokenId kSep = 3;
  static constexpr std::size_t kNumSpecial = 4;

  Vocab();
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // UNK when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  static bool is_special(TokenId id) { return id < kNumSpecial; }

  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_whitespace(std::string_view text);
std::string join_tokens(const std::vector<std::string>& tokens);

/// Frequency-descending, then lexicographic; tokens below min_freq dropped.
Vocab build_vocab(const std::vector<std::string>& corpora, std::size_t min_freq = 1);

/// Inclusive token range.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;
  std::size_t length() const { return end - start + 1; }
  friend bool operator==(const Span&, const Span&) = default;
};

struct TokenSeq {
  std::vector<TokenId> ids;
  std::string lang;
  std::vector<std::uint8_t> mask;  // 1 = real token, 0 = PAD
  std::size_t size() const { return ids.size(); }
};

/// Whitespace tokenisation with UNK fallback, truncated to max_len.
TokenSeq tokenize(std::string_view text, std::string_view lang, const Vocab& vocab, std::size_t max_len);
TokenSeq tokenize(const std::vector<std::string>& tokens, std::string_view lang, const Vocab& vocab,
                  std::size_t max_len);

/// Replaces the whole span with a single MASK token.
TokenSeq mask_span(const TokenSeq& seq, Span span);

}  // namespace kgadapt
