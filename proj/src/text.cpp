#include "ltcm/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <regex>
#include <set>

#include <json.hpp>

#include "ltcm/error.hpp"

namespace ltcm::text {

namespace {

bool is_ascii_alpha(unsigned char c) { return std::isalpha(c) != 0 && c < 0x80; }
bool is_ascii_digit(unsigned char c) { return c >= '0' && c <= '9'; }
// Letters, digits and any non-ASCII byte are word characters.
bool is_word_char(unsigned char c) { return c >= 0x80 || is_ascii_alpha(c) || is_ascii_digit(c); }

std::size_t digit_run(std::string_view s, std::size_t i) {
  while (i < s.size() && is_ascii_digit(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

bool all_digits(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(),
                                   [](char c) { return is_ascii_digit(static_cast<unsigned char>(c)); });
}

const std::regex& url_pattern() {
  static const std::regex re(R"((?:[a-z][a-z0-9+.\-]*://|www\.)[^\s]*)");
  return re;
}

void split_token(std::string_view tok, std::vector<std::string>& out) {
  std::size_t i = 0;
  while (i < tok.size()) {
    bool matched = false;
    for (const auto reserved : {std::string_view("<url>"), std::string_view("<number>")}) {
      if (tok.substr(i, reserved.size()) == reserved) {
        out.emplace_back(reserved);
        i += reserved.size();
        matched = true;
        break;
      }
    }
    if (matched) continue;

    const auto c = static_cast<unsigned char>(tok[i]);
    const bool boundary_before = i == 0 || !is_word_char(static_cast<unsigned char>(tok[i - 1]));

    if ((c == '+' || c == '-') && boundary_before && i + 1 < tok.size() &&
        is_ascii_digit(static_cast<unsigned char>(tok[i + 1]))) {
      // Signed literal, only if the digit run is a standalone number.
      std::size_t j = i + 1;
      while (j < tok.size() && is_word_char(static_cast<unsigned char>(tok[j]))) ++j;
      if (all_digits(tok.substr(i + 1, j - i - 1))) {
        std::size_t k = j;
        if (k + 1 < tok.size() && tok[k] == '.' && is_ascii_digit(static_cast<unsigned char>(tok[k + 1]))) {
          const std::size_t e = digit_run(tok, k + 1);
          if (e == tok.size() || !is_word_char(static_cast<unsigned char>(tok[e]))) k = e;
        }
        out.emplace_back("<number>");
        i = k;
        continue;
      }
    }

    if (is_word_char(c)) {
      std::size_t j = i;
      while (j < tok.size() && is_word_char(static_cast<unsigned char>(tok[j]))) ++j;
      const auto piece = tok.substr(i, j - i);
      if (all_digits(piece)) {
        std::size_t k = j;
        if (k + 1 < tok.size() && tok[k] == '.' && is_ascii_digit(static_cast<unsigned char>(tok[k + 1]))) {
          const std::size_t e = digit_run(tok, k + 1);
          if (e == tok.size() || !is_word_char(static_cast<unsigned char>(tok[e]))) k = e;
        }
        out.emplace_back("<number>");
        i = k;
      } else {
        out.emplace_back(piece);
        i = j;
      }
      continue;
    }

    if (c == '\'' && i + 1 < tok.size() && is_ascii_alpha(static_cast<unsigned char>(tok[i + 1]))) {
      std::size_t j = i + 1;
      while (j < tok.size() && is_ascii_alpha(static_cast<unsigned char>(tok[j]))) ++j;
      out.emplace_back(tok.substr(i, j - i));
      i = j;
      continue;
    }

    out.emplace_back(1, static_cast<char>(c));
    ++i;
  }
}

// Decodes one UTF-8 code point; returns false on malformed input.
bool next_code_point(std::string_view s, std::size_t& i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  int extra = 0;
  if (b0 < 0x80) {
    cp = b0;
  } else if ((b0 & 0xE0) == 0xC0) {
    cp = b0 & 0x1F;
    extra = 1;
  } else if ((b0 & 0xF0) == 0xE0) {
    cp = b0 & 0x0F;
    extra = 2;
  } else if ((b0 & 0xF8) == 0xF0) {
    cp = b0 & 0x07;
    extra = 3;
  } else {
    return false;
  }
  if (i + static_cast<std::size_t>(extra) >= s.size()) return false;
  for (int k = 1; k <= extra; ++k) {
    const auto b = static_cast<unsigned char>(s[i + static_cast<std::size_t>(k)]);
    if ((b & 0xC0) != 0x80) return false;
    cp = (cp << 6) | (b & 0x3F);
  }
  i += static_cast<std::size_t>(extra) + 1;
  return true;
}

void validate_reserved_prefix(const std::vector<std::string>& tokens) {
  if (tokens.size() < kReservedCount) {
    throw DataError("vocabulary has " + std::to_string(tokens.size()) +
                    " entries, fewer than the reserved tokens");
  }
  for (std::size_t i = 0; i < kReservedCount; ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw DataError("vocabulary line " + std::to_string(i + 1) + " must be '" +
                      std::string(kReservedTokens[i]) + "', found '" + tokens[i] + "'");
    }
  }
}

}  // namespace

std::string standardize(std::string_view raw) {
  std::string lower(raw);
  for (char& ch : lower) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80) ch = static_cast<char>(std::tolower(c));
  }
  lower = std::regex_replace(lower, url_pattern(), " <url> ");

  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < lower.size()) {
    while (i < lower.size() && std::isspace(static_cast<unsigned char>(lower[i]))) ++i;
    std::size_t j = i;
    while (j < lower.size() && !std::isspace(static_cast<unsigned char>(lower[j]))) ++j;
    if (j > i) split_token(std::string_view(lower).substr(i, j - i), tokens);
    i = j;
  }
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view standardized) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < standardized.size()) {
    const auto j = standardized.find(' ', i);
    const auto end = j == std::string_view::npos ? standardized.size() : j;
    if (end > i) out.emplace_back(standardized.substr(i, end - i));
    i = end + 1;
  }
  return out;
}

bool is_roman(std::string_view utf8) {
  std::size_t i = 0;
  while (i < utf8.size()) {
    char32_t cp = 0;
    const auto b0 = static_cast<unsigned char>(utf8[i]);
    const std::size_t need = b0 < 0x80 ? 1 : (b0 & 0xE0) == 0xC0 ? 2 : (b0 & 0xF0) == 0xE0 ? 3 : 4;
    if (i + need > utf8.size()) return false;
    if (!next_code_point(utf8, i, cp)) return false;
    const bool latin = cp < 0x0250 || (cp >= 0x1E00 && cp <= 0x1EFF);
    const bool punctuation = cp >= 0x2000 && cp <= 0x206F;
    const bool currency = cp >= 0x20A0 && cp <= 0x20CF;
    if (!(latin || punctuation || currency)) return false;
  }
  return true;
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "accepted";
    case RejectReason::empty: return "empty";
    case RejectReason::non_roman: return "non_roman";
    case RejectReason::too_long: return "too_long";
  }
  return "unknown";
}

FilterResult filter_pair(std::string_view prompt, std::string_view response, std::size_t max_len) {
  FilterResult r;
  const std::string p = standardize(prompt);
  const std::string m = standardize(response);
  r.pair.prompt = tokenize(p);
  r.pair.response = tokenize(m);
  if (r.pair.prompt.empty() || r.pair.response.empty()) {
    r.reason = RejectReason::empty;
  } else if (!is_roman(p) || !is_roman(m)) {
    r.reason = RejectReason::non_roman;
  } else if (r.pair.prompt.size() > max_len || r.pair.response.size() > max_len) {
    r.reason = RejectReason::too_long;
  }
  if (!r.accepted()) r.pair = {};
  return r;
}

Vocabulary Vocabulary::build(std::span<const TokenizedPair> corpus, std::size_t size) {
  if (size < kReservedCount) {
    throw ConfigError("vocabulary size " + std::to_string(size) + " is smaller than the " +
                      std::to_string(kReservedCount) + " reserved tokens");
  }
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& pair : corpus) {
    for (const auto* side : {&pair.prompt, &pair.response})
      for (const auto& t : *side) ++counts[t];
  }
  std::vector<std::pair<std::string, std::uint64_t>> ranked;
  for (auto& [tok, n] : counts) {
    const bool reserved =
        std::find(kReservedTokens.begin(), kReservedTokens.end(), tok) != kReservedTokens.end();
    if (!reserved) ranked.emplace_back(tok, n);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens(kReservedTokens.begin(), kReservedTokens.end());
  for (std::size_t i = 0; i < ranked.size() && tokens.size() < size; ++i) tokens.push_back(ranked[i].first);
  Vocabulary v = from_tokens(std::move(tokens));
  v.count_corpus(corpus);
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  validate_reserved_prefix(tokens);
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw DataError("duplicate vocabulary token '" + v.tokens_[i] + "'");
    }
  }
  v.counts_.assign(v.tokens_.size(), 0);
  v.doc_freq_.assign(v.tokens_.size(), 0);
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                    std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::lookup(std::string_view token) const { return find(token).value_or(kUnk); }

void Vocabulary::count_corpus(std::span<const TokenizedPair> corpus) {
  std::fill(counts_.begin(), counts_.end(), 0);
  std::fill(doc_freq_.begin(), doc_freq_.end(), 0);
  documents_ = corpus.size();
  std::set<int> seen;
  for (const auto& pair : corpus) {
    seen.clear();
    for (const auto* side : {&pair.prompt, &pair.response}) {
      for (const auto& t : *side) {
        const int id = lookup(t);
        ++counts_[static_cast<std::size_t>(id)];
        seen.insert(id);
      }
    }
    for (int id : seen) ++doc_freq_[static_cast<std::size_t>(id)];
  }
}

DialoguePair encode(const TokenizedPair& pair, const Vocabulary& vocab) {
  return {encode(pair.prompt, vocab), encode(pair.response, vocab)};
}

std::vector<int> encode(std::span<const std::string> tokens, const Vocabulary& vocab) {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab.lookup(t));
  return ids;
}

std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == kEos) break;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

BagOfWords bag_of_words(std::span<const int> ids) {
  BagOfWords bow;
  for (int id : ids) {
    if (!is_reserved(id)) bow[id] += 1.0;
  }
  return bow;
}

double idf(const Vocabulary& vocab, int id) {
  const auto df = vocab.document_frequency(id);
  if (df == 0) return std::numeric_limits<double>::infinity();
  return std::log(static_cast<double>(vocab.documents()) / static_cast<double>(df));
}

StopWords::StopWords(std::size_t vocab_size) : flags_(vocab_size, false) {
  for (std::size_t i = 0; i < std::min(vocab_size, kReservedCount); ++i) flags_[i] = true;
}

bool StopWords::contains(int id) const {
  if (is_reserved(id)) return true;
  return id >= 0 && static_cast<std::size_t>(id) < flags_.size() && flags_[static_cast<std::size_t>(id)];
}

void StopWords::insert(int id) {
  if (is_reserved(id) || contains(id)) return;
  flags_.at(static_cast<std::size_t>(id)) = true;
  selected_.push_back(id);
}

std::vector<double> StopWords::topic_mask() const {
  std::vector<double> mask(flags_.size());
  for (std::size_t i = 0; i < flags_.size(); ++i) mask[i] = flags_[i] ? 0.0 : 1.0;
  return mask;
}

StopWords select_stopwords(const Vocabulary& vocab, std::size_t n, StopwordRule rule) {
  StopWords stop(vocab.size());
  std::vector<int> candidates;
  for (std::size_t i = kReservedCount; i < vocab.size(); ++i) {
    if (vocab.document_frequency(static_cast<int>(i)) > 0) candidates.push_back(static_cast<int>(i));
  }
  std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    const double ia = idf(vocab, a), ib = idf(vocab, b);
    if (ia != ib) return rule == StopwordRule::lowest_idf ? ia < ib : ia > ib;
    return vocab.token(a) < vocab.token(b);
  });
  for (std::size_t i = 0; i < std::min(n, candidates.size()); ++i) stop.insert(candidates[i]);
  return stop;
}

std::size_t Batch::target_tokens() const {
  return static_cast<std::size_t>(std::accumulate(decoder_mask.begin(), decoder_mask.end(), 0.0));
}

Batch assemble_batch(std::span<const DialoguePair> pairs, const Vocabulary& vocab,
                     const StopWords& stopwords) {
  return assemble_batch(pairs, vocab.size(), stopwords);
}

Batch assemble_batch(std::span<const DialoguePair> pairs, std::size_t vocab_size,
                     const StopWords& stopwords) {
  if (pairs.empty()) throw DataError("cannot assemble an empty batch");
  Batch b;
  b.size = pairs.size();
  b.vocab_size = vocab_size;
  for (const auto& p : pairs) {
    if (p.prompt.empty() || p.response.empty()) throw DataError("batch pair with an empty side");
    b.prompt_width = std::max(b.prompt_width, p.prompt.size());
    b.response_width = std::max(b.response_width, p.response.size());
  }
  const std::size_t B = b.size, U = b.prompt_width, M = b.response_width, T = M + 1, L = vocab_size;
  b.decoder_width = T;
  b.prompt.assign(B * U, kPad);
  b.response.assign(B * M, kPad);
  b.gate_labels.assign(B * M, 0.0);
  b.mask.assign(B * M, 0.0);
  b.decoder_input.assign(B * T, kPad);
  b.decoder_target.assign(B * T, kPad);
  b.decoder_mask.assign(B * T, 0.0);
  b.decoder_gate.assign(B * T, 0.0);
  b.prompt_bow.assign(B * L, 0.0);
  b.response_bow.assign(B * L, 0.0);
  for (std::size_t r = 0; r < B; ++r) {
    const auto& p = pairs[r];
    b.prompt_len.push_back(static_cast<int>(p.prompt.size()));
    b.response_len.push_back(static_cast<int>(p.response.size()));
    for (std::size_t t = 0; t < p.prompt.size(); ++t) {
      const int id = p.prompt[t];
      if (id < 0 || static_cast<std::size_t>(id) >= L) throw DataError("prompt id out of vocabulary");
      b.prompt[r * U + t] = id;
      if (!is_reserved(id)) b.prompt_bow[r * L + static_cast<std::size_t>(id)] += 1.0;
    }
    b.decoder_input[r * T] = kBos;
    for (std::size_t t = 0; t < p.response.size(); ++t) {
      const int id = p.response[t];
      if (id < 0 || static_cast<std::size_t>(id) >= L) throw DataError("response id out of vocabulary");
      if (id == kPad) throw DataError("response contains <pad> inside its unpadded region");
      const double label = stopwords.contains(id) ? 0.0 : 1.0;
      b.response[r * M + t] = id;
      b.gate_labels[r * M + t] = label;
      b.mask[r * M + t] = 1.0;
      b.decoder_input[r * T + t + 1] = id;
      b.decoder_target[r * T + t] = id;
      b.decoder_mask[r * T + t] = 1.0;
      b.decoder_gate[r * T + t] = label;
      if (!is_reserved(id)) b.response_bow[r * L + static_cast<std::size_t>(id)] += 1.0;
    }
    const std::size_t end = p.response.size();
    b.decoder_target[r * T + end] = kEos;
    b.decoder_mask[r * T + end] = 1.0;
  }
  return b;
}

Batch pad_batch(const Batch& batch, std::size_t extra) {
  Batch out = batch;
  const std::size_t B = batch.size;
  auto widen = [B](const auto& src, std::size_t w, std::size_t nw, auto fill) {
    std::vector<std::decay_t<decltype(fill)>> dst(B * nw, fill);
    for (std::size_t r = 0; r < B; ++r)
      std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                  dst.begin() + static_cast<std::ptrdiff_t>(r * nw));
    return dst;
  };
  const std::size_t U = batch.prompt_width, M = batch.response_width, T = batch.decoder_width;
  out.prompt_width = U + extra;
  out.response_width = M + extra;
  out.decoder_width = T + extra;
  out.prompt = widen(batch.prompt, U, U + extra, kPad);
  out.response = widen(batch.response, M, M + extra, kPad);
  out.gate_labels = widen(batch.gate_labels, M, M + extra, 0.0);
  out.mask = widen(batch.mask, M, M + extra, 0.0);
  out.decoder_input = widen(batch.decoder_input, T, T + extra, kPad);
  out.decoder_target = widen(batch.decoder_target, T, T + extra, kPad);
  out.decoder_mask = widen(batch.decoder_mask, T, T + extra, 0.0);
  out.decoder_gate = widen(batch.decoder_gate, T, T + extra, 0.0);
  return out;
}

std::vector<RawPair> read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file " + path.string());
  std::vector<RawPair> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("prompt").get<std::string>(), j.at("response").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const RawPair> pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file " + path.string());
  for (const auto& p : pairs) {
    nlohmann::json j;
    j["prompt"] = p.prompt;
    j["response"] = p.response;
    out << j.dump() << '\n';
  }
}

std::vector<TokenizedPair> filter_corpus(std::span<const RawPair> raw, std::size_t max_len,
                                         FilterStats* stats) {
  std::vector<TokenizedPair> out;
  FilterStats local;
  for (const auto& p : raw) {
    auto r = filter_pair(p.prompt, p.response, max_len);
    switch (r.reason) {
      case RejectReason::none:
        ++local.accepted;
        out.push_back(std::move(r.pair));
        break;
      case RejectReason::empty: ++local.empty; break;
      case RejectReason::non_roman: ++local.non_roman; break;
      case RejectReason::too_long: ++local.too_long; break;
    }
  }
  if (stats != nullptr) *stats = local;
  return out;
}

}  // namespace ltcm::text
