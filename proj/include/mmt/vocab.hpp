#pragma once

#include <cctype>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmt/errors.hpp"
#include "mmt/model.hpp"

namespace mmt {

inline const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> kReserved = {"<pad>", "<bos>", "<eos>",
                                                     "<unk>", "<mask>"};
  return kReserved;
}

// Token/id bijection with the five reserved ids pinned at 0-4.
class Vocabulary {
 public:
  Vocabulary() {
    for (const std::string& t : reserved_tokens()) add(t);
  }

  int add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    const int id = static_cast<int>(id_to_token_.size());
    token_to_id_[token] = id;
    id_to_token_.push_back(token);
    return id;
  }

  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }

  // Lookup for tokenization: out-of-vocabulary maps to UNK.
  int id_or_unk(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
  }

  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    if (it == token_to_id_.end())
      throw ValidationError("token not in vocabulary: " + token);
    return it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || id >= size())
      throw ValidationError("token id " + std::to_string(id) +
                            " outside vocabulary of size " +
                            std::to_string(size()));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  int size() const { return static_cast<int>(id_to_token_.size()); }

  nlohmann::json to_json() const { return {{"tokens", id_to_token_}}; }

  static Vocabulary from_json(const nlohmann::json& j) {
    std::vector<std::string> tokens;
    try {
      j.at("tokens").get_to(tokens);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("bad vocabulary file: ") + e.what());
    }
    if (tokens.size() < reserved_tokens().size())
      throw ValidationError("vocabulary misses reserved tokens");
    for (std::size_t i = 0; i < reserved_tokens().size(); ++i)
      if (tokens[i] != reserved_tokens()[i])
        throw ValidationError("reserved token id " + std::to_string(i) +
                              " must be " + reserved_tokens()[i]);
    Vocabulary v;
    for (std::size_t i = reserved_tokens().size(); i < tokens.size(); ++i) {
      if (v.contains(tokens[i]))
        throw ValidationError("duplicate vocabulary token: " + tokens[i]);
      v.add(tokens[i]);
    }
    return v;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, int> token_to_id_;
};

// Lowercased split on whitespace, with punctuation characters emitted as
// single-character tokens.
inline std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      out.push_back(word);
      word.clear();
    }
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::ispunct(ch)) {
      flush();
      out.emplace_back(1, static_cast<char>(ch));
    } else {
      word.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  flush();
  return out;
}

inline std::vector<int> tokenize(const std::string& text, const Vocabulary& v) {
  std::vector<int> ids;
  for (const std::string& tok : split_tokens(text)) ids.push_back(v.id_or_unk(tok));
  return ids;
}

// Joins non-reserved tokens with single spaces.
inline std::string detokenize(const std::vector<int>& ids, const Vocabulary& v) {
  std::string out;
  for (int id : ids) {
    if (id < kNumReservedIds) continue;
    if (!out.empty()) out.push_back(' ');
    out += v.token(id);
  }
  return out;
}

}  // namespace mmt
