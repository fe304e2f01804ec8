#include "kgadapt/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "kgadapt/errors.hpp"

namespace kgadapt {

namespace {
const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{std::string(kPadToken), std::string(kUnkToken),
                                                 std::string(kMaskToken), std::string(kSepToken)};
  return specials;
}
}  // namespace

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < kNumSpecial || !std::equal(specials.begin(), specials.end(), tokens_.begin()))
    throw DataError("vocab: the first entries must be [PAD] [UNK] [MASK] [SEP]");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw DataError("vocab: empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
      throw DataError("vocab: duplicate token '" + tokens_[i] + "'");
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) != 0; }

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write vocab file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read vocab file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocab build_vocab(const std::vector<std::string>& corpora, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  const auto& specials = special_tokens();
  for (const auto& text : corpora)
    for (auto& tok : split_whitespace(text))
      if (std::find(specials.begin(), specials.end(), tok) == specials.end()) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> ordered(counts.begin(), counts.end());
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  std::vector<std::string> tokens = specials;
  for (auto& [tok, n] : ordered)
    if (n >= min_freq) tokens.push_back(tok);
  return Vocab(std::move(tokens));
}

TokenSeq tokenize(const std::vector<std::string>& tokens, std::string_view lang, const Vocab& vocab,
                  std::size_t max_len) {
  TokenSeq seq;
  seq.lang = std::string(lang);
  const std::size_t n = std::min(tokens.size(), max_len);
  seq.ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) seq.ids.push_back(vocab.id(tokens[i]));
  seq.mask.assign(n, 1);
  return seq;
}

TokenSeq tokenize(std::string_view text, std::string_view lang, const Vocab& vocab, std::size_t max_len) {
  return tokenize(split_whitespace(text), lang, vocab, max_len);
}

TokenSeq mask_span(const TokenSeq& seq, Span span) {
  if (span.start > span.end || span.end >= seq.ids.size())
    throw DataError("mask_span: span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                    "] invalid for a sequence of " + std::to_string(seq.ids.size()) + " tokens");
  TokenSeq out;
  out.lang = seq.lang;
  out.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(span.start));
  out.ids.push_back(Vocab::kMask);
  out.ids.insert(out.ids.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(span.end + 1), seq.ids.end());
  out.mask.assign(out.ids.size(), 1);
  return out;
}

}  // namespace kgadapt
