#include "gv/bpe.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "gv/error.hpp"

namespace gv::bpe {
namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

struct PairHash {
  std::size_t operator()(const std::pair<TokenId, TokenId>& p) const noexcept {
    return (static_cast<std::size_t>(p.first) << 32) ^ p.second;
  }
};

// Replaces every non-overlapping occurrence of (left, right), scanning left
// to right.
void apply_merge(std::vector<TokenId>& word, TokenId left, TokenId right, TokenId merged) {
  if (word.size() < 2) return;
  std::size_t out = 0;
  for (std::size_t i = 0; i < word.size();) {
    if (i + 1 < word.size() && word[i] == left && word[i + 1] == right) {
      word[out++] = merged;
      i += 2;
    } else {
      word[out++] = word[i++];
    }
  }
  word.resize(out);
}

const std::string kReplacement = "\xEF\xBF\xBD";

}  // namespace

MergeTable::MergeTable(std::vector<std::uint8_t> alphabet, std::vector<MergeRule> merges)
    : alphabet_(std::move(alphabet)), merges_(std::move(merges)) {
  if (!std::is_sorted(alphabet_.begin(), alphabet_.end()) ||
      std::adjacent_find(alphabet_.begin(), alphabet_.end()) != alphabet_.end()) {
    throw InputError("merge table: alphabet must be strictly ascending");
  }
  for (std::size_t k = 0; k < merges_.size(); ++k) {
    const auto next = merged_id(k);
    if (merges_[k].left >= next || merges_[k].right >= next) {
      throw InputError("merge table: rule " + std::to_string(k) + " references undefined id");
    }
  }
}

void MergeTable::save(std::ostream& out) const {
  out << "bpe-v1 " << alphabet_.size() << ' ' << merges_.size() << '\n';
  for (const auto& m : merges_) out << m.left << ' ' << m.right << '\n';
  char hex[4];
  for (auto b : alphabet_) {
    std::snprintf(hex, sizeof(hex), "%02x", b);
    out << hex << '\n';
  }
}

MergeTable MergeTable::load(std::istream& in) {
  std::string magic;
  std::size_t n_alpha = 0, n_merges = 0;
  if (!(in >> magic >> n_alpha >> n_merges) || magic != "bpe-v1") {
    throw InputError("merge table: missing 'bpe-v1' header");
  }
  if (n_alpha > 256) throw InputError("merge table: alphabet larger than 256 bytes");
  std::vector<MergeRule> merges(n_merges);
  for (auto& m : merges) {
    if (!(in >> m.left >> m.right)) throw InputError("merge table: truncated merge list");
  }
  std::vector<std::uint8_t> alphabet(n_alpha);
  for (auto& b : alphabet) {
    std::string hex;
    if (!(in >> hex) || hex.size() != 2) throw InputError("merge table: bad alphabet entry");
    b = static_cast<std::uint8_t>(std::stoul(hex, nullptr, 16));
  }
  return MergeTable(std::move(alphabet), std::move(merges));
}

std::vector<std::string_view> pretokenize(std::string_view text) {
  std::vector<std::string_view> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t start = i;
    if (is_space(c)) {
      const bool word_follows =
          c == ' ' && i + 1 < text.size() && !is_space(static_cast<unsigned char>(text[i + 1]));
      if (!word_follows) {
        pieces.push_back(text.substr(i, 1));
        ++i;
        continue;
      }
      ++i;
    }
    while (i < text.size() && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    pieces.push_back(text.substr(start, i - start));
  }
  return pieces;
}

MergeTable train(std::string_view corpus, const TrainOptions& options) {
  if (corpus.empty()) throw InputError("bpe training: empty corpus");

  std::array<bool, 256> present{};
  for (unsigned char c : corpus) present[c] = true;
  std::vector<std::uint8_t> alphabet;
  std::array<TokenId, 256> byte_id{};
  for (int b = 0; b < 256; ++b) {
    if (present[b]) {
      byte_id[b] = static_cast<TokenId>(alphabet.size());
      alphabet.push_back(static_cast<std::uint8_t>(b));
    }
  }
  if (options.target_vocab < alphabet.size()) {
    throw InputError("bpe training: target vocabulary " + std::to_string(options.target_vocab) +
                     " is smaller than the corpus alphabet (" + std::to_string(alphabet.size()) +
                     " bytes)");
  }

  // Unique pieces with their frequencies, in sorted order for determinism.
  std::map<std::string_view, std::size_t> piece_counts;
  for (auto piece : pretokenize(corpus)) ++piece_counts[piece];
  std::vector<std::vector<TokenId>> words;
  std::vector<std::size_t> counts;
  words.reserve(piece_counts.size());
  for (const auto& [piece, count] : piece_counts) {
    std::vector<TokenId> ids;
    ids.reserve(piece.size());
    for (unsigned char c : piece) ids.push_back(byte_id[c]);
    words.push_back(std::move(ids));
    counts.push_back(count);
  }

  std::vector<MergeRule> merges;
  std::unordered_map<std::pair<TokenId, TokenId>, std::size_t, PairHash> pair_counts;
  while (alphabet.size() + merges.size() < options.target_vocab) {
    pair_counts.clear();
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto& word = words[w];
      // A run like x x x holds only one applicable (x, x) merge per two
      // symbols, so overlapping identical pairs are counted once.
      std::size_t last_counted = std::numeric_limits<std::size_t>::max();
      for (std::size_t i = 0; i + 1 < word.size(); ++i) {
        if (word[i] == word[i + 1] && last_counted != std::numeric_limits<std::size_t>::max() &&
            last_counted + 1 == i && word[i - 1] == word[i]) {
          last_counted = std::numeric_limits<std::size_t>::max();
          continue;
        }
        pair_counts[{word[i], word[i + 1]}] += counts[w];
        last_counted = i;
      }
    }
    std::pair<TokenId, TokenId> best{};
    std::size_t best_count = 0;
    for (const auto& [pair, count] : pair_counts) {
      if (count > best_count || (count == best_count && pair < best)) {
        best = pair;
        best_count = count;
      }
    }
    if (best_count == 0 || best_count < options.min_pair_count) break;
    const auto merged = static_cast<TokenId>(alphabet.size() + merges.size());
    merges.push_back({best.first, best.second});
    for (auto& word : words) apply_merge(word, best.first, best.second, merged);
  }
  return MergeTable(std::move(alphabet), std::move(merges));
}

Tokenizer::Tokenizer(MergeTable table) : table_(std::move(table)) {
  const auto unk = table_.unknown_id();
  byte_to_id_.assign(256, unk);
  id_bytes_.reserve(table_.vocab_size());
  for (std::size_t i = 0; i < table_.alphabet_size(); ++i) {
    byte_to_id_[table_.alphabet()[i]] = static_cast<TokenId>(i);
    id_bytes_.emplace_back(1, static_cast<char>(table_.alphabet()[i]));
  }
  for (std::size_t k = 0; k < table_.num_merges(); ++k) {
    const auto& m = table_.merges()[k];
    id_bytes_.push_back(id_bytes_[m.left] + id_bytes_[m.right]);
    rank_.emplace(std::make_pair(m.left, m.right), k);
  }
  id_bytes_.push_back(kReplacement);
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  if (id >= id_bytes_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(id_bytes_.size()));
  }
  return id_bytes_[id];
}

std::vector<TokenId> Tokenizer::encode_piece(std::string_view piece) const {
  std::vector<TokenId> ids;
  ids.reserve(piece.size());
  for (unsigned char c : piece) ids.push_back(byte_to_id_[c]);
  while (ids.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
      auto it = rank_.find({ids[i], ids[i + 1]});
      if (it != rank_.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    const auto& m = table_.merges()[best_rank];
    apply_merge(ids, m.left, m.right, table_.merged_id(best_rank));
  }
  return ids;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  std::unordered_map<std::string_view, std::vector<TokenId>> cache;
  for (auto piece : pretokenize(text)) {
    auto it = cache.find(piece);
    if (it == cache.end()) it = cache.emplace(piece, encode_piece(piece)).first;
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (auto id : ids) out += token_bytes(id);
  return out;
}

}  // namespace gv::bpe
