#include "metaprompt/vocabulary.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

#include "metaprompt/errors.hpp"

namespace metaprompt {

namespace vocab {

namespace {

constexpr std::array<std::string_view, 52> kWords = {
    "recommend", "suggest",  "something", "next",     "watch",    "read",
    "buy",       "listen",   "show",      "me",       "a",        "an",
    "the",       "to",       "for",       "i",        "want",     "like",
    "good",      "new",      "similar",   "more",     "another",  "any",
    "please",    "what",     "should",    "tonight",  "today",    "movie",
    "book",      "song",     "item",      "product",  "action",   "comedy",
    "drama",     "romance",  "thriller",  "documentary", "fantasy", "horror",
    "mystery",   "classic",  "popular",   "fun",      "light",    "dark",
    "long",      "short",    "again",     "try"};

static_assert(kFirstWord + static_cast<int>(kWords.size()) <= kItemBase);

}  // namespace

std::span<const std::string_view> words() { return kWords; }

int word_token(std::string_view word) {
  const auto it = std::find(kWords.begin(), kWords.end(), word);
  if (it == kWords.end()) return kUnk;
  return kFirstWord + static_cast<int>(it - kWords.begin());
}

std::vector<int> tokenize_context(std::string_view text) {
  std::string lowered(text);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  std::istringstream in(lowered);
  std::vector<int> tokens;
  std::string word;
  while (in >> word) tokens.push_back(word_token(word));
  return tokens;
}

}  // namespace vocab

ItemVocabulary::ItemVocabulary(std::vector<std::string> item_ids)
    : items_(std::move(item_ids)) {
  std::sort(items_.begin(), items_.end());
  items_.erase(std::unique(items_.begin(), items_.end()), items_.end());
  for (std::size_t i = 0; i < items_.size(); ++i) {
    index_.emplace(items_[i], vocab::kItemBase + static_cast<int>(i));
  }
}

bool ItemVocabulary::contains(const std::string& item_id) const {
  return index_.contains(item_id);
}

int ItemVocabulary::token(const std::string& item_id) const {
  const auto it = index_.find(item_id);
  if (it == index_.end()) throw IndexError("unknown item '" + item_id + "'");
  return it->second;
}

const std::string& ItemVocabulary::item(int token) const {
  const int i = token - vocab::kItemBase;
  if (i < 0 || i >= static_cast<int>(items_.size())) {
    throw IndexError("token " + std::to_string(token) + " is not an item");
  }
  return items_[static_cast<std::size_t>(i)];
}

std::vector<int> ItemVocabulary::all_tokens() const {
  std::vector<int> tokens(items_.size());
  for (std::size_t i = 0; i < tokens.size(); ++i)
    tokens[i] = vocab::kItemBase + static_cast<int>(i);
  return tokens;
}

}  // namespace metaprompt
