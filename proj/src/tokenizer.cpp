#include "cloudgate/tokenizer.hpp"

#include <unicode/regex.h>
#include <unicode/unistr.h>
#include <unicode/locid.h>

#include <algorithm>
#include <climits>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "cloudgate/error.hpp"
#include "cloudgate/tensor.hpp"

namespace cloudgate {

namespace {

#include "html_entities.inc"

constexpr std::string_view kEndOfWord = "</w>";
constexpr std::array<char, 4> kVocabMagic = {'C', 'G', 'V', '1'};

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::u32string to_u32(std::string_view utf8) {
  auto us = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  std::u32string out;
  out.reserve(static_cast<std::size_t>(us.length()));
  for (int32_t i = 0; i < us.length();) {
    UChar32 c = us.char32At(i);
    out.push_back(static_cast<char32_t>(c));
    i += U16_LENGTH(c);
  }
  return out;
}

std::string to_utf8(const std::u32string& s) {
  std::string out;
  out.reserve(s.size());
  for (char32_t c : s) append_utf8(out, c);
  return out;
}

std::u32string to_u32(const icu::UnicodeString& us) {
  std::string utf8;
  us.toUTF8String(utf8);
  return to_u32(utf8);
}

// Matches the code points Python's str.isspace() accepts.
bool is_python_space(char32_t c) {
  switch (c) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D:
    case 0x1C: case 0x1D: case 0x1E: case 0x1F: case 0x20:
    case 0x85: case 0xA0: case 0x1680:
    case 0x2028: case 0x2029: case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return c >= 0x2000 && c <= 0x200A;
  }
}

const char* find_entity(const std::string& name) {
  auto it = std::lower_bound(std::begin(kNamedEntities), std::end(kNamedEntities), name,
                             [](const NamedEntity& e, const std::string& n) {
                               return std::strcmp(e.name, n.c_str()) < 0;
                             });
  if (it != std::end(kNamedEntities) && name == it->name) return it->value;
  return nullptr;
}

std::u32string numeric_charref(unsigned long long num) {
  for (const auto& o : kInvalidCharrefs)
    if (o.code == num) return to_u32(std::string_view(o.value));
  if ((num >= 0xD800 && num <= 0xDFFF) || num > 0x10FFFF) return U"�";
  if (std::binary_search(std::begin(kInvalidCodepoints), std::end(kInvalidCodepoints), num))
    return U"";
  return std::u32string(1, static_cast<char32_t>(num));
}

bool is_digit(char32_t c) { return c >= '0' && c <= '9'; }
bool is_hex(char32_t c) {
  return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}
int hex_value(char32_t c) {
  if (is_digit(c)) return static_cast<int>(c - '0');
  if (c >= 'a' && c <= 'f') return static_cast<int>(c - 'a' + 10);
  return static_cast<int>(c - 'A' + 10);
}

// Same replacement rules as Python's html.unescape.
std::u32string html_unescape(const std::u32string& s) {
  if (s.find(U'&') == std::u32string::npos) return s;
  std::u32string out;
  const std::size_t n = s.size();
  std::size_t i = 0;
  while (i < n) {
    if (s[i] != U'&' || i + 1 >= n) {
      out.push_back(s[i++]);
      continue;
    }
    std::size_t j = i + 1;
    if (s[j] == U'#') {
      bool hex = j + 1 < n && (s[j + 1] == U'x' || s[j + 1] == U'X');
      std::size_t k = j + (hex ? 2 : 1);
      std::size_t start = k;
      unsigned long long num = 0;
      while (k < n && (hex ? is_hex(s[k]) : is_digit(s[k]))) {
        unsigned long long digit = hex ? hex_value(s[k]) : (s[k] - U'0');
        num = num > 0x7FFFFFFFULL ? num : num * (hex ? 16 : 10) + digit;
        ++k;
      }
      if (k == start) {
        out.push_back(s[i++]);
        continue;
      }
      if (k < n && s[k] == U';') ++k;
      out += numeric_charref(num);
      i = k;
      continue;
    }
    std::size_t k = j;
    while (k < n && k - j < 32) {
      char32_t c = s[k];
      if (c == U'\t' || c == U'\n' || c == U'\f' || c == U' ' || c == U'<' || c == U'&' ||
          c == U'#' || c == U';')
        break;
      ++k;
    }
    if (k == j) {
      out.push_back(s[i++]);
      continue;
    }
    if (k < n && s[k] == U';') ++k;
    const std::u32string ref = s.substr(j, k - j);
    const std::string ref8 = to_utf8(ref);
    if (const char* v = find_entity(ref8)) {
      out += to_u32(std::string_view(v));
    } else {
      bool replaced = false;
      for (std::size_t x = ref.size() - 1; x > 1; --x) {
        if (const char* v2 = find_entity(to_utf8(ref.substr(0, x)))) {
          out += to_u32(std::string_view(v2));
          out += ref.substr(x);
          replaced = true;
          break;
        }
      }
      if (!replaced) {
        out.push_back(U'&');
        out += ref;
      }
    }
    i = k;
  }
  return out;
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  std::string& buffer() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str() {
    auto n = u32();
    need(n);
    std::string s(in_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Error(Errc::CorruptVocab, "unexpected end of vocab bundle");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::vector<std::string> bpe_fallback_split(const std::string& sym) {
  std::string_view body = sym;
  const bool end_of_word = body.ends_with(kEndOfWord);
  if (end_of_word) body.remove_suffix(kEndOfWord.size());
  std::vector<std::string> out;
  for (std::size_t i = 0; i < body.size();) {
    unsigned char c = static_cast<unsigned char>(body[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
    out.emplace_back(body.substr(i, len));
    i += len;
  }
  if (end_of_word && !out.empty()) out.back() += kEndOfWord;
  return out;
}

std::string merge_key(std::string_view a, std::string_view b) {
  std::string k;
  k.reserve(a.size() + b.size() + 1);
  k.append(a);
  k.push_back(' ');
  k.append(b);
  return k;
}

}  // namespace

const std::array<std::string, 256>& byte_symbols() {
  static const std::array<std::string, 256> table = [] {
    std::array<std::string, 256> t;
    std::vector<bool> printable(256, false);
    for (int b = '!'; b <= '~'; ++b) printable[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) printable[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) printable[b] = true;
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      char32_t cp = printable[b] ? static_cast<char32_t>(b) : static_cast<char32_t>(256 + extra++);
      append_utf8(t[b], cp);
    }
    return t;
  }();
  return table;
}

std::string default_pretokenize_pattern(std::string_view sot, std::string_view eot) {
  auto escape = [](std::string_view s) {
    std::string out;
    for (char c : s) {
      if (std::strchr("\\^$.|?*+()[]{}", c)) out.push_back('\\');
      out.push_back(c);
    }
    return out;
  };
  return escape(sot) + "|" + escape(eot) +
         R"(|'s|'t|'re|'ve|'m|'ll|'d|[\p{L}]+|[\p{N}]|[^\s\p{L}\p{N}]+)";
}

Vocabulary make_byte_level_vocabulary(std::vector<std::pair<std::string, std::string>> merges,
                                      std::string sot, std::string eot) {
  Vocabulary v;
  const auto& syms = byte_symbols();
  // Byte-symbol order as CLIP lists them: printable bytes first, then the rest.
  std::vector<std::string> base;
  for (int b = 0; b < 256; ++b)
    if ((b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE)) base.push_back(syms[b]);
  for (int b = 0; b < 256; ++b)
    if (!((b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE))) base.push_back(syms[b]);
  v.tokens = base;
  for (const auto& s : base) v.tokens.push_back(s + std::string(kEndOfWord));
  for (const auto& [a, b] : merges) v.tokens.push_back(a + b);
  v.tokens.push_back(sot);
  v.tokens.push_back(eot);
  v.sot_id = v.size() - 2;
  v.eot_id = v.size() - 1;
  v.merges = std::move(merges);
  v.pattern = default_pretokenize_pattern(sot, eot);
  v.case_insensitive = true;
  v.index();
  return v;
}

void Vocabulary::index() {
  if (sot_id < 0 || eot_id < 0 || sot_id >= size() || eot_id >= size() || sot_id == eot_id)
    throw Error(Errc::CorruptVocab, "invalid special token ids");
  token_to_id.clear();
  merge_rank.clear();
  token_to_id.reserve(tokens.size());
  for (int i = 0; i < size(); ++i)
    if (!token_to_id.emplace(tokens[i], i).second)
      throw Error(Errc::CorruptVocab, "duplicate token '" + tokens[i] + "'");
  for (int i = 0; i < static_cast<int>(merges.size()); ++i)
    merge_rank.emplace(merge_key(merges[i].first, merges[i].second), i);
  for (const auto& sym : byte_symbols())
    if (!token_to_id.count(sym) || !token_to_id.count(sym + std::string(kEndOfWord)))
      throw Error(Errc::CorruptVocab, "vocabulary lacks byte-level base symbols");
}

std::string serialize_vocabulary(const Vocabulary& vocab) {
  Writer w;
  w.buffer().append(kVocabMagic.data(), kVocabMagic.size());
  w.u32(vocab.case_insensitive ? 1u : 0u);
  w.str(vocab.pattern);
  w.u32(static_cast<std::uint32_t>(vocab.tokens.size()));
  for (const auto& t : vocab.tokens) w.str(t);
  w.u32(static_cast<std::uint32_t>(vocab.merges.size()));
  for (const auto& [a, b] : vocab.merges) {
    w.str(a);
    w.str(b);
  }
  w.u32(static_cast<std::uint32_t>(vocab.sot_id));
  w.u32(static_cast<std::uint32_t>(vocab.eot_id));
  const auto& buf = w.buffer();
  w.u64(fnv1a64(std::as_bytes(std::span(buf.data(), buf.size()))));
  return std::move(w.buffer());
}

Vocabulary parse_vocabulary(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kVocabMagic.data(), 4))
    throw Error(Errc::CorruptVocab, "not a CGV1 vocab bundle");
  if (bytes.size() < 12) throw Error(Errc::CorruptVocab, "truncated vocab bundle");
  const auto body = bytes.substr(0, bytes.size() - 8);
  Reader trailer(bytes.substr(bytes.size() - 8));
  if (trailer.u64() != fnv1a64(std::as_bytes(std::span(body.data(), body.size()))))
    throw Error(Errc::CorruptVocab, "checksum mismatch (truncated or corrupted bundle)");

  Reader r(body.substr(4));
  Vocabulary v;
  v.case_insensitive = (r.u32() & 1u) != 0;
  v.pattern = r.str();
  const auto n_tokens = r.u32();
  if (n_tokens > r.remaining() / 4) throw Error(Errc::CorruptVocab, "token count too large");
  v.tokens.reserve(n_tokens);
  for (std::uint32_t i = 0; i < n_tokens; ++i) v.tokens.push_back(r.str());
  const auto n_merges = r.u32();
  if (n_merges > r.remaining() / 8) throw Error(Errc::CorruptVocab, "merge count too large");
  v.merges.reserve(n_merges);
  for (std::uint32_t i = 0; i < n_merges; ++i) {
    auto a = r.str();
    auto b = r.str();
    v.merges.emplace_back(std::move(a), std::move(b));
  }
  v.sot_id = static_cast<int>(r.u32());
  v.eot_id = static_cast<int>(r.u32());
  if (r.remaining() != 0) throw Error(Errc::CorruptVocab, "trailing bytes in vocab bundle");
  v.index();
  return v;
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  return parse_vocabulary(std::string(std::istreambuf_iterator<char>(in), {}));
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  const auto bytes = serialize_vocabulary(vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

std::string clean_text(std::string_view text) {
  std::u32string s = html_unescape(html_unescape(to_u32(text)));
  std::u32string collapsed;
  bool pending_space = false;
  for (char32_t c : s) {
    if (is_python_space(c)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed.push_back(U' ');
    pending_space = false;
    collapsed.push_back(c);
  }
  std::string utf8 = to_utf8(collapsed);
  auto us = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  us.toLower(icu::Locale::getRoot());
  std::string out;
  us.toUTF8String(out);
  return out;
}

struct Tokenizer::Pattern {
  std::unique_ptr<icu::RegexPattern> regex;
};

Tokenizer::Tokenizer(Vocabulary vocab)
    : Tokenizer(std::make_shared<const Vocabulary>(std::move(vocab))) {}

Tokenizer::Tokenizer(std::shared_ptr<const Vocabulary> vocab)
    : vocab_(std::move(vocab)), pattern_(std::make_unique<Pattern>()) {
  UErrorCode status = U_ZERO_ERROR;
  UParseError perr;
  pattern_->regex.reset(icu::RegexPattern::compile(
      icu::UnicodeString::fromUTF8(vocab_->pattern),
      vocab_->case_insensitive ? UREGEX_CASE_INSENSITIVE : 0, perr, status));
  if (U_FAILURE(status))
    throw Error(Errc::CorruptVocab, std::string("invalid pre-tokenization pattern: ") +
                                        u_errorName(status));
}

Tokenizer::~Tokenizer() = default;
Tokenizer::Tokenizer(Tokenizer&&) noexcept = default;
Tokenizer& Tokenizer::operator=(Tokenizer&&) noexcept = default;

std::vector<std::string> Tokenizer::bpe(const std::string& word) const {
  // Split the byte-symbol string into code points; each is one initial symbol.
  std::vector<std::string> symbols;
  for (std::size_t i = 0; i < word.size();) {
    unsigned char c = static_cast<unsigned char>(word[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : 4;
    symbols.push_back(word.substr(i, len));
    i += len;
  }
  if (symbols.empty()) return symbols;
  symbols.back() += kEndOfWord;

  const auto& ranks = vocab_->merge_rank;
  while (symbols.size() > 1) {
    int best_rank = INT_MAX;
    std::size_t best_at = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = ranks.find(merge_key(symbols[i], symbols[i + 1]));
      if (it != ranks.end() && it->second < best_rank) {
        best_rank = it->second;
        best_at = i;
      }
    }
    if (best_rank == INT_MAX) break;
    const std::string first = symbols[best_at];
    const std::string second = symbols[best_at + 1];
    std::vector<std::string> merged;
    merged.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == first && symbols[i + 1] == second) {
        merged.push_back(first + second);
        i += 2;
      } else {
        merged.push_back(symbols[i]);
        ++i;
      }
    }
    symbols = std::move(merged);
  }
  return symbols;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  const std::string cleaned = clean_text(text);
  const auto& vocab = *vocab_;
  const auto& syms = byte_symbols();
  std::vector<int> ids;

  UErrorCode status = U_ZERO_ERROR;
  const icu::UnicodeString input = icu::UnicodeString::fromUTF8(cleaned);
  std::unique_ptr<icu::RegexMatcher> m(pattern_->regex->matcher(input, status));
  if (U_FAILURE(status)) throw Error(Errc::CorruptVocab, u_errorName(status));
  while (m->find(status) && U_SUCCESS(status)) {
    icu::UnicodeString piece = m->group(status);
    std::string raw;
    piece.toUTF8String(raw);
    if (raw == vocab.tokens[vocab.sot_id]) {
      ids.push_back(vocab.sot_id);
      continue;
    }
    if (raw == vocab.tokens[vocab.eot_id]) {
      ids.push_back(vocab.eot_id);
      continue;
    }
    std::string word;
    for (unsigned char b : raw) word += syms[b];
    for (const auto& sym : bpe(word)) {
      auto it = vocab.token_to_id.find(sym);
      if (it != vocab.token_to_id.end()) {
        ids.push_back(it->second);
        continue;
      }
      // Fallback: emit the symbol's individual byte tokens.
      std::vector<std::string> pieces = bpe_fallback_split(sym);
      for (const auto& p : pieces) ids.push_back(vocab.token_to_id.at(p));
    }
  }
  return ids;
}

TokenSequence Tokenizer::tokenize(std::string_view text) const {
  TokenSequence seq;
  std::vector<int> content = encode(text);
  const std::size_t max_content = kContextLength - 2;
  if (content.size() > max_content) content.resize(max_content);
  seq.ids[0] = vocab_->sot_id;
  std::copy(content.begin(), content.end(), seq.ids.begin() + 1);
  seq.ids[content.size() + 1] = vocab_->eot_id;
  seq.length = static_cast<int>(content.size()) + 2;
  return seq;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
  return Tokenizer(vocab).tokenize(text);
}

}  // namespace cloudgate
