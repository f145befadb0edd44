#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

// Byte-pair encoding. Token ids are assigned in creation order: the corpus
// alphabet first (ascending byte value), then merges in the order they were
// learned, then one reserved id for bytes outside the alphabet. Lower ids
// therefore belong to earlier, more frequent units.
namespace gv::bpe {

using TokenId = std::uint32_t;

struct MergeRule {
  TokenId left;
  TokenId right;
  bool operator==(const MergeRule&) const = default;
};

class MergeTable {
 public:
  MergeTable() = default;
  MergeTable(std::vector<std::uint8_t> alphabet, std::vector<MergeRule> merges);

  const std::vector<std::uint8_t>& alphabet() const noexcept { return alphabet_; }
  const std::vector<MergeRule>& merges() const noexcept { return merges_; }
  std::size_t alphabet_size() const noexcept { return alphabet_.size(); }
  std::size_t num_merges() const noexcept { return merges_.size(); }
  // Alphabet + merges + the reserved unknown id.
  std::size_t vocab_size() const noexcept { return alphabet_.size() + merges_.size() + 1; }
  TokenId unknown_id() const noexcept { return static_cast<TokenId>(vocab_size() - 1); }
  TokenId merged_id(std::size_t merge_rank) const noexcept {
    return static_cast<TokenId>(alphabet_.size() + merge_rank);
  }

  // Text format: `bpe-v1 <alphabet-size> <num-merges>`, one `left right`
  // line per merge, then one hex byte per line.
  void save(std::ostream& out) const;
  static MergeTable load(std::istream& in);

  bool operator==(const MergeTable&) const = default;

 private:
  std::vector<std::uint8_t> alphabet_;
  std::vector<MergeRule> merges_;
};

struct TrainOptions {
  // Alphabet plus merges; the unknown id is added on top of this.
  std::size_t target_vocab = 1023;
  // A pair must occur at least this often to be merged.
  std::size_t min_pair_count = 2;
};

MergeTable train(std::string_view corpus, const TrainOptions& options);

// Splits text into the units merges may not cross: each run of non-space
// bytes together with a single preceding space, and every other whitespace
// byte on its own. Concatenating the pieces reproduces the input.
std::vector<std::string_view> pretokenize(std::string_view text);

class Tokenizer {
 public:
  explicit Tokenizer(MergeTable table);

  const MergeTable& table() const noexcept { return table_; }
  std::size_t vocab_size() const noexcept { return table_.vocab_size(); }
  // Byte string of a token; the unknown id maps to U+FFFD.
  const std::string& token_bytes(TokenId id) const;

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<TokenId> encode_piece(std::string_view piece) const;

  MergeTable table_;
  std::vector<std::string> id_bytes_;
  std::vector<TokenId> byte_to_id_;  // 256 entries, unknown_id when absent
  std::map<std::pair<TokenId, TokenId>, std::size_t> rank_;
};

}  // namespace gv::bpe
