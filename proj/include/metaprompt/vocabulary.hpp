#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace metaprompt {

/// Fixed token layout shared by the backbone and task construction:
///   [0, kFirstWord)          specials
///   [kFirstWord, kItemBase)  closed context-word list
///   [kItemBase, vocab_size)  one token per item
namespace vocab {

inline constexpr int kPad = 0;
inline constexpr int kSep = 1;
inline constexpr int kUnk = 2;
inline constexpr int kFirstWord = 3;
inline constexpr int kItemBase = 64;

/// The closed context vocabulary, in token order.
std::span<const std::string_view> words();

/// Token for a lowercase word; kUnk when the word is not in the list.
int word_token(std::string_view word);

/// Lowercases, splits on whitespace and maps through the closed vocabulary.
std::vector<int> tokenize_context(std::string_view text);

}  // namespace vocab

/// Bijection between item identifiers and item tokens. Items are assigned
/// tokens in lexicographic order of their identifiers, so the mapping depends
/// only on the set of items.
class ItemVocabulary {
 public:
  ItemVocabulary() = default;
  explicit ItemVocabulary(std::vector<std::string> item_ids);

  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& items() const { return items_; }

  bool contains(const std::string& item_id) const;
  /// Throws IndexError for unknown items.
  int token(const std::string& item_id) const;
  const std::string& item(int token) const;

  int first_token() const { return vocab::kItemBase; }
  int end_token() const { return vocab::kItemBase + static_cast<int>(size()); }
  std::vector<int> all_tokens() const;

 private:
  std::vector<std::string> items_;
  std::map<std::string, int, std::less<>> index_;
};

}  // namespace metaprompt
