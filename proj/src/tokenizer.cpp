#include "metavqa/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "metavqa/error.hpp"
#include "metavqa/hash.hpp"

namespace mvqa {

std::vector<std::string> normalize(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string s;
  for (const auto& t : tokens) {
    if (!s.empty()) s.push_back(' ');
    s += t;
  }
  return s;
}

const std::vector<std::string>& Vocabulary::special_tokens() {
  static const std::vector<std::string> v = {"<sos>", "<eos>", "<pad>", "<unk>", "[V]",
                                             "[BBF]", "[PER]", "[BEH]", "[EMO]", "[SPK]",
                                             "[SCR]", "[QUE]", "[ANS]"};
  return v;
}

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) add(s);
}

void Vocabulary::add(const std::string& token) {
  if (token_to_id_.contains(token)) throw DataError("duplicate vocabulary token '" + token + "'");
  token_to_id_.emplace(token, static_cast<int>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(std::span<const Corpus> corpora, int min_freq) {
  if (min_freq < 1) throw UsageError("min_freq must be >= 1");
  std::map<std::string, long> freq;
  std::map<std::string, bool> forced;
  auto count_text = [&](const std::string& text, bool force) {
    for (auto& t : normalize(text)) {
      ++freq[t];
      if (force) forced[t] = true;
    }
  };
  for (const auto& corpus : corpora) {
    for (const auto& ex : corpus.examples) {
      for (const auto& f : ex.frames) {
        for (const auto& c : f.characters) {
          count_text(c.person, true);
          count_text(c.behavior, true);
          count_text(c.emotion, true);
        }
      }
      for (const auto& s : ex.subtitles) {
        count_text(s.speaker, true);
        count_text(s.text, false);
      }
      count_text(ex.question, false);
      count_text(ex.answer, false);
    }
  }
  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [tok, n] : freq) {
    if (n >= min_freq || forced.contains(tok)) kept.emplace_back(tok, n);
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary v;
  for (const auto& [tok, n] : kept) {
    // A corpus word that collides with a special spelling keeps the special id.
    if (!v.token_to_id_.contains(tok)) v.add(tok);
  }
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  for (auto& t : tokens) v.add(t);
  return v;
}

int Vocabulary::id(std::string_view token) const {
  auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return token_to_id_.contains(std::string(token));
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw DataError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                    std::to_string(size()));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode_tokens(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    const int i = id(t);
    // Normalized text never spells a special, but guard anyway: specials are not words.
    ids.push_back(i >= special::kCount || i == special::kUnk ? i : special::kUnk);
  }
  return ids;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  return encode_tokens(normalize(text));
}

std::vector<std::string> Vocabulary::decode_tokens(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int i : ids) {
    const auto& t = token(i);
    if (i == special::kUnk || i >= special::kCount) out.push_back(t);
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  auto toks = decode_tokens(ids);
  return join_tokens(toks);
}

std::vector<std::string> Vocabulary::tokens() const {
  return {id_to_token_.begin() + special::kCount, id_to_token_.end()};
}

std::string Vocabulary::to_json() const {
  nlohmann::json j = {{"specials", special_tokens()}, {"tokens", tokens()}};
  return j.dump(1);
}

Vocabulary Vocabulary::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("vocabulary: ") + e.what());
  }
  if (j.at("specials").get<std::vector<std::string>>() != special_tokens()) {
    throw DataError("vocabulary: special token inventory mismatch");
  }
  return from_tokens(j.at("tokens").get<std::vector<std::string>>());
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path.string());
  out << to_json() << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open vocabulary " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::uint64_t Vocabulary::fingerprint() const {
  Fnv1a h;
  for (const auto& t : id_to_token_) {
    h.update(t);
    h.update("\n");
  }
  return h.digest();
}

}  // namespace mvqa
