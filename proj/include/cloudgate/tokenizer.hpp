#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace cloudgate {

inline constexpr int kContextLength = 77;

/// Byte-level BPE vocabulary. Token ids are positions in `tokens`; merge
/// priority is the position in `merges` (earlier merges win).
struct Vocabulary {
  std::vector<std::string> tokens;
  std::vector<std::pair<std::string, std::string>> merges;
  int sot_id = -1;
  int eot_id = -1;
  /// Pre-tokenization regex (ICU syntax), shipped with the bundle.
  std::string pattern;
  bool case_insensitive = true;

  std::unordered_map<std::string, int> token_to_id;
  std::unordered_map<std::string, int> merge_rank;

  int size() const noexcept { return static_cast<int>(tokens.size()); }

  /// Rebuilds the lookup maps and checks the invariants; throws CorruptVocab.
  void index();

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens == b.tokens && a.merges == b.merges && a.sot_id == b.sot_id &&
           a.eot_id == b.eot_id && a.pattern == b.pattern &&
           a.case_insensitive == b.case_insensitive;
  }
};

struct TokenSequence {
  std::array<int, kContextLength> ids{};
  /// Meaningful tokens including SOT and EOT.
  int length = 0;

  int eot_position() const noexcept { return length - 1; }
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// The 256 printable stand-ins used to make every byte a BPE symbol.
const std::array<std::string, 256>& byte_symbols();

/// Pattern used by the published CLIP tokenizer, parameterized by the
/// special-token spellings.
std::string default_pretokenize_pattern(std::string_view sot, std::string_view eot);

/// Builds a vocabulary the way CLIP does: byte symbols, byte symbols with
/// "</w>", one token per merge, then the two special tokens.
Vocabulary make_byte_level_vocabulary(std::vector<std::pair<std::string, std::string>> merges,
                                      std::string sot = "<|startoftext|>",
                                      std::string eot = "<|endoftext|>");

/// Vocab bundle ("CGV1"):
///   "CGV1" | u32 flags (bit 0: case-insensitive pattern) | u32 len, pattern
///   | u32 token count | per token {u32 len, UTF-8 bytes} (id order)
///   | u32 merge count | per merge {u32 len, left, u32 len, right}
///   | u32 sot id | u32 eot id | u64 FNV-1a of all preceding bytes
std::string serialize_vocabulary(const Vocabulary& vocab);
Vocabulary parse_vocabulary(std::string_view bytes);
Vocabulary load_vocabulary(const std::filesystem::path& path);
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);

/// HTML unescape (applied twice), whitespace collapse and lowercasing.
std::string clean_text(std::string_view text);

class Tokenizer {
 public:
  explicit Tokenizer(std::shared_ptr<const Vocabulary> vocab);
  explicit Tokenizer(Vocabulary vocab);
  ~Tokenizer();
  Tokenizer(Tokenizer&&) noexcept;
  Tokenizer& operator=(Tokenizer&&) noexcept;

  /// Content ids without SOT/EOT and without truncation.
  std::vector<int> encode(std::string_view text) const;
  TokenSequence tokenize(std::string_view text) const;

  const Vocabulary& vocabulary() const noexcept { return *vocab_; }

 private:
  std::vector<std::string> bpe(const std::string& word) const;

  std::shared_ptr<const Vocabulary> vocab_;
  struct Pattern;
  std::unique_ptr<Pattern> pattern_;
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);

}  // namespace cloudgate
